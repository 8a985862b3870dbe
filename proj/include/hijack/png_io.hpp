#pragma once

#include <string>

#include "hijack/image.hpp"

namespace hijack {

// 8-bit RGB PNG round trip. The PNG is the canonical hijack artifact:
// evaluation always consumes these bytes, not the continuous tensor.
void write_png(const std::string& path, const ByteImage& img);

// Rejects anything that is not 8-bit RGB (grayscale, palette, 16-bit, alpha).
ByteImage read_png(const std::string& path);

}  // namespace hijack
