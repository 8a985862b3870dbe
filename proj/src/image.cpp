#include "hijack/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace hijack {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

std::string strip(const std::string& s) {
  std::size_t b = 0, e = s.size();
  auto is_space = [](unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

void ImageTensor::clamp01() {
  for (double& v : values) v = std::clamp(v, 0.0, 1.0);
}

bool ImageTensor::in_unit_box() const {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return v >= 0.0 && v <= 1.0; });
}

std::uint64_t ImageTensor::content_hash() const {
  return fnv1a(values.data(), values.size() * sizeof(double));
}

ByteImage quantize(const ImageTensor& img) {
  ByteImage out;
  out.shape = img.shape;
  out.values.resize(img.values.size());
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    // round half away from zero; inputs are nonnegative here
    double q = std::floor(255.0 * img.values[i] + 0.5);
    out.values[i] = static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
  }
  return out;
}

ImageTensor dequantize(const ByteImage& img) {
  ImageTensor out(img.shape);
  for (std::size_t i = 0; i < img.values.size(); ++i)
    out.values[i] = img.values[i] / 255.0;
  return out;
}

ImageTensor uniform_random_image(ImageShape shape, Rng& rng) {
  ImageTensor out(shape);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (double& v : out.values) v = dist(rng);
  return out;
}

ImageTensor constant_image(ImageShape shape, double value) {
  return ImageTensor(shape, value);
}

}  // namespace hijack
