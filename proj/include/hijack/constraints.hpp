#pragma once

#include <optional>
#include <variant>

#include "hijack/common.hpp"
#include "hijack/image.hpp"

namespace hijack {

// Feasible image sets: the full unit box, an l-inf ball around an
// initialization image, or a learnable square patch composited onto a base
// image at a fixed or uniformly resampled location.
struct Unconstrained {
  ImageTensor x_init;
};
struct LinfBall {
  ImageTensor x_init;
  double epsilon;  // pixel units, e.g. 8.0/255.0
};
struct StationaryPatch {
  ImageTensor x_base;
  int top = 0;
  int left = 0;
  int size = 0;
};
struct MovingPatch {
  ImageTensor x_base;
  int size = 0;
};

using ConstraintSpec = std::variant<Unconstrained, LinfBall, StationaryPatch, MovingPatch>;

ImageShape constraint_image_shape(const ConstraintSpec& spec);
void validate_constraint(const ConstraintSpec& spec);

// The learnable parameter vector: the full image for unconstrained / l-inf,
// an s x s patch for the patch variants.
struct HijackParams {
  ImageShape shape;  // shape of the learnable array
  std::vector<double> values;
};

struct Placement {
  int top = 0;
  int left = 0;
};

struct Rendered {
  ImageTensor image;
  std::optional<Placement> placement;  // set for patch variants
};

// Unconstrained / l-inf: copy of x_init. Stationary patch: the base image's
// pixels at the patch region. Moving patch: mid-gray fill.
HijackParams init_params(const ConstraintSpec& spec);

// Elementwise clamp to [0,1], plus the l-inf box around x_init. Idempotent.
HijackParams project(const ConstraintSpec& spec, HijackParams params);

// Produce the model-facing image. Moving patches draw a fresh placement
// uniformly from the valid grid using rng.
Rendered render(const ConstraintSpec& spec, const HijackParams& params, Rng& rng);

// Route d loss / d image back to the parameter array for the given placement.
HijackParams render_backward(const ConstraintSpec& spec, const ImageTensor& grad_image,
                             const std::optional<Placement>& placement);

bool is_feasible(const ConstraintSpec& spec, const HijackParams& params, double tol = 0.0);

}  // namespace hijack
