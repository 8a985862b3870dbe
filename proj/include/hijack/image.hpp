#pragma once

#include <cstdint>
#include <vector>

#include "hijack/common.hpp"

namespace hijack {

struct ImageShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  int pixels() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

// Real-valued image in [0,1]^{c*h*w}, channel-major. This is the optimization
// variable of every attack.
struct ImageTensor {
  ImageShape shape;
  std::vector<double> values;  // size c*h*w, layout [c][y][x]

  ImageTensor() = default;
  ImageTensor(ImageShape s, double fill = 0.0)
      : shape(s), values(static_cast<std::size_t>(s.pixels()), fill) {}

  double& at(int c, int y, int x) {
    return values[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x];
  }
  double at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x];
  }

  // Clamp every element into [0,1].
  void clamp01();
  bool in_unit_box() const;
  std::uint64_t content_hash() const;
};

// 8-bit quantized image; the deliverable artifact (serialized as RGB PNG).
struct ByteImage {
  ImageShape shape;
  std::vector<std::uint8_t> values;  // same layout as ImageTensor

  std::uint64_t content_hash() const {
    return fnv1a(values.data(), values.size());
  }
};

// q = round(255*v), half away from zero; v assumed in [0,1].
ByteImage quantize(const ImageTensor& img);
// v = q/255.
ImageTensor dequantize(const ByteImage& img);

ImageTensor uniform_random_image(ImageShape shape, Rng& rng);
ImageTensor constant_image(ImageShape shape, double value);

}  // namespace hijack
