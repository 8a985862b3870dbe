#include "hijack/constraints.hpp"

#include <algorithm>
#include <cmath>

namespace hijack {

ImageShape constraint_image_shape(const ConstraintSpec& spec) {
  return std::visit(
      [](const auto& s) -> ImageShape {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Unconstrained>) return s.x_init.shape;
        else if constexpr (std::is_same_v<T, LinfBall>) return s.x_init.shape;
        else return s.x_base.shape;
      },
      spec);
}

void validate_constraint(const ConstraintSpec& spec) {
  if (const auto* b = std::get_if<LinfBall>(&spec)) {
    if (!(b->epsilon > 0.0 && b->epsilon <= 1.0))
      throw ConfigError("LinfBall: epsilon must be in (0,1]");
    if (!b->x_init.in_unit_box()) throw ConfigError("LinfBall: x_init outside [0,1]");
  } else if (const auto* p = std::get_if<StationaryPatch>(&spec)) {
    const auto& sh = p->x_base.shape;
    if (p->size <= 0 || p->top < 0 || p->left < 0 || p->top + p->size > sh.height ||
        p->left + p->size > sh.width)
      throw ConfigError("StationaryPatch: patch does not fit the base image");
  } else if (const auto* m = std::get_if<MovingPatch>(&spec)) {
    const auto& sh = m->x_base.shape;
    if (m->size <= 0 || m->size > std::min(sh.height, sh.width))
      throw ConfigError("MovingPatch: size exceeds image");
  }
}

namespace {

HijackParams from_image(const ImageTensor& img) {
  return HijackParams{img.shape, img.values};
}

}  // namespace

HijackParams init_params(const ConstraintSpec& spec) {
  validate_constraint(spec);
  return std::visit(
      [](const auto& s) -> HijackParams {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Unconstrained>) {
          return from_image(s.x_init);
        } else if constexpr (std::is_same_v<T, LinfBall>) {
          return from_image(s.x_init);
        } else if constexpr (std::is_same_v<T, StationaryPatch>) {
          HijackParams p;
          p.shape = {s.x_base.shape.channels, s.size, s.size};
          p.values.resize(static_cast<std::size_t>(p.shape.pixels()));
          for (int c = 0; c < p.shape.channels; ++c)
            for (int y = 0; y < s.size; ++y)
              for (int x = 0; x < s.size; ++x)
                p.values[(static_cast<std::size_t>(c) * s.size + y) * s.size + x] =
                    s.x_base.at(c, s.top + y, s.left + x);
          return p;
        } else {
          HijackParams p;
          p.shape = {s.x_base.shape.channels, s.size, s.size};
          p.values.assign(static_cast<std::size_t>(p.shape.pixels()), 0.5);
          return p;
        }
      },
      spec);
}

HijackParams project(const ConstraintSpec& spec, HijackParams params) {
  for (double& v : params.values) v = std::clamp(v, 0.0, 1.0);
  if (const auto* b = std::get_if<LinfBall>(&spec)) {
    for (std::size_t i = 0; i < params.values.size(); ++i) {
      const double lo = b->x_init.values[i] - b->epsilon;
      const double hi = b->x_init.values[i] + b->epsilon;
      params.values[i] = std::clamp(params.values[i], std::max(lo, 0.0), std::min(hi, 1.0));
    }
  }
  return params;
}

namespace {

ImageTensor composite(const ImageTensor& base, const HijackParams& patch, Placement at) {
  ImageTensor out = base;
  const int s = patch.shape.height;
  for (int c = 0; c < patch.shape.channels; ++c)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        out.at(c, at.top + y, at.left + x) =
            patch.values[(static_cast<std::size_t>(c) * s + y) * s + x];
  return out;
}

}  // namespace

Rendered render(const ConstraintSpec& spec, const HijackParams& params, Rng& rng) {
  return std::visit(
      [&](const auto& s) -> Rendered {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Unconstrained> || std::is_same_v<T, LinfBall>) {
          ImageTensor img;
          img.shape = params.shape;
          img.values = params.values;
          return Rendered{std::move(img), std::nullopt};
        } else if constexpr (std::is_same_v<T, StationaryPatch>) {
          Placement at{s.top, s.left};
          return Rendered{composite(s.x_base, params, at), at};
        } else {
          const auto& sh = s.x_base.shape;
          std::uniform_int_distribution<int> dt(0, sh.height - s.size);
          std::uniform_int_distribution<int> dl(0, sh.width - s.size);
          Placement at{dt(rng), dl(rng)};
          return Rendered{composite(s.x_base, params, at), at};
        }
      },
      spec);
}

HijackParams render_backward(const ConstraintSpec& spec, const ImageTensor& grad_image,
                             const std::optional<Placement>& placement) {
  return std::visit(
      [&](const auto& s) -> HijackParams {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Unconstrained> || std::is_same_v<T, LinfBall>) {
          return HijackParams{grad_image.shape, grad_image.values};
        } else {
          if (!placement) throw ConfigError("render_backward: patch placement required");
          HijackParams g;
          const int sz = s.size;
          g.shape = {grad_image.shape.channels, sz, sz};
          g.values.resize(static_cast<std::size_t>(g.shape.pixels()));
          for (int c = 0; c < g.shape.channels; ++c)
            for (int y = 0; y < sz; ++y)
              for (int x = 0; x < sz; ++x)
                g.values[(static_cast<std::size_t>(c) * sz + y) * sz + x] =
                    grad_image.at(c, placement->top + y, placement->left + x);
          return g;
        }
      },
      spec);
}

bool is_feasible(const ConstraintSpec& spec, const HijackParams& params, double tol) {
  for (double v : params.values)
    if (v < -tol || v > 1.0 + tol) return false;
  if (const auto* b = std::get_if<LinfBall>(&spec)) {
    for (std::size_t i = 0; i < params.values.size(); ++i)
      if (std::abs(params.values[i] - b->x_init.values[i]) > b->epsilon + tol) return false;
  }
  return true;
}

}  // namespace hijack
