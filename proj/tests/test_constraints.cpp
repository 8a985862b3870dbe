#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "hijack/constraints.hpp"

using namespace hijack;

namespace {

const ImageShape kShape{3, 32, 32};

ImageTensor random_image(Rng& rng) { return uniform_random_image(kShape, rng); }

HijackParams randomized(const HijackParams& p, Rng& rng, double spread) {
  std::uniform_real_distribution<double> u(-spread, spread);
  HijackParams out = p;
  for (auto& v : out.values) v += u(rng);
  return out;
}

}  // namespace

TEST_CASE("projection clamps to the unit box and is idempotent") {
  Rng rng(1);
  Unconstrained c{random_image(rng)};
  HijackParams p = init_params(ConstraintSpec{c});
  p = randomized(p, rng, 3.0);
  HijackParams q = project(ConstraintSpec{c}, p);
  for (double v : q.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  HijackParams q2 = project(ConstraintSpec{c}, q);
  CHECK(q2.values == q.values);  // bitwise
  CHECK(is_feasible(ConstraintSpec{c}, q));
}

TEST_CASE("l-inf projection stays inside the ball around the init image") {
  Rng rng(2);
  const ImageTensor x0 = random_image(rng);
  for (double eps : {1.0 / 255, 4.0 / 255, 16.0 / 255}) {
    LinfBall c{x0, eps};
    HijackParams p = randomized(init_params(ConstraintSpec{c}), rng, 0.5);
    HijackParams q = project(ConstraintSpec{c}, p);
    for (std::size_t i = 0; i < q.values.size(); ++i) {
      CHECK(std::abs(q.values[i] - x0.values[i]) <= eps + 1e-12);
      CHECK(q.values[i] >= 0.0);
      CHECK(q.values[i] <= 1.0);
    }
    HijackParams q2 = project(ConstraintSpec{c}, q);
    CHECK(q2.values == q.values);
    // projection computes fl(x0 +- eps), which can land a half-ulp outside
    CHECK(is_feasible(ConstraintSpec{c}, q, 1e-15));
    CHECK_FALSE(is_feasible(ConstraintSpec{c}, p));
  }
}

TEST_CASE("stationary patch renders into the base image and only there") {
  Rng rng(3);
  const ImageTensor base = random_image(rng);
  StationaryPatch c{base, 5, 7, 12};
  ConstraintSpec spec{c};
  validate_constraint(spec);
  HijackParams p = project(spec, randomized(init_params(spec), rng, 1.0));
  Rendered r = render(spec, p, rng);
  REQUIRE(r.placement.has_value());
  CHECK(r.placement->top == 5);
  CHECK(r.placement->left == 7);
  int inside = 0;
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const bool in_patch = y >= 5 && y < 17 && x >= 7 && x < 19;
        if (in_patch) {
          ++inside;
        } else {
          // non-patch pixels preserved bitwise
          CHECK(r.image.at(ch, y, x) == base.at(ch, y, x));
        }
      }
  CHECK(inside == 3 * 12 * 12);
}

TEST_CASE("render_backward slices the patch gradient") {
  Rng rng(4);
  const ImageTensor base = random_image(rng);
  StationaryPatch c{base, 2, 3, 8};
  ConstraintSpec spec{c};
  ImageTensor g = random_image(rng);
  HijackParams gp = render_backward(spec, g, Placement{2, 3});
  REQUIRE(gp.shape == (ImageShape{3, 8, 8}));
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const std::size_t idx = (static_cast<std::size_t>(ch) * 8 + y) * 8 + x;
        CHECK(gp.values[idx] == g.at(ch, 2 + y, 3 + x));
      }
}

TEST_CASE("moving patch draws placements uniformly") {
  Rng rng(5);
  const int s = 8;
  MovingPatch c{constant_image(kShape, 0.25), s};
  ConstraintSpec spec{c};
  HijackParams p = init_params(spec);
  std::map<std::pair<int, int>, int> counts;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    Rendered r = render(spec, p, rng);
    REQUIRE(r.placement.has_value());
    REQUIRE(r.placement->top >= 0);
    REQUIRE(r.placement->top <= 32 - s);
    REQUIRE(r.placement->left >= 0);
    REQUIRE(r.placement->left <= 32 - s);
    ++counts[{r.placement->top, r.placement->left}];
  }
  const int cells = (32 - s + 1) * (32 - s + 1);
  CHECK(static_cast<int>(counts.size()) == cells);
  // each cell within 5 sigma of the binomial expectation
  const double mean = double(n) / cells;
  const double sigma = std::sqrt(mean * (1.0 - 1.0 / cells));
  for (const auto& [k, v] : counts) CHECK(std::abs(v - mean) <= 5.0 * sigma);
}

TEST_CASE("invalid geometry is rejected") {
  Rng rng(6);
  const ImageTensor base = random_image(rng);
  CHECK_THROWS_AS(validate_constraint(ConstraintSpec{StationaryPatch{base, 0, 0, 33}}),
                  ConfigError);
  CHECK_THROWS_AS(validate_constraint(ConstraintSpec{StationaryPatch{base, 28, 0, 8}}),
                  ConfigError);
  CHECK_THROWS_AS(validate_constraint(ConstraintSpec{MovingPatch{base, 0}}), ConfigError);
  CHECK_THROWS_AS(validate_constraint(ConstraintSpec{LinfBall{base, -0.1}}), ConfigError);
}
