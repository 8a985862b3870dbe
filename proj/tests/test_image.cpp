#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "hijack/image.hpp"
#include "hijack/png_io.hpp"

using namespace hijack;

TEST_CASE("quantize endpoints and round-trip bounds") {
  ImageTensor img({1, 1, 2});
  img.values = {0.0, 1.0};
  auto q = quantize(img);
  CHECK(q.values[0] == 0);
  CHECK(q.values[1] == 255);

  // 10,001-point grid: |v - deq(quant(v))| <= 1/510
  ImageTensor grid({1, 1, 10001});
  for (int i = 0; i <= 10000; ++i) grid.values[i] = i / 10000.0;
  auto deq = dequantize(quantize(grid));
  for (int i = 0; i <= 10000; ++i)
    CHECK(std::abs(grid.values[i] - deq.values[i]) <= 1.0 / 510.0 + 1e-15);
}

TEST_CASE("quantize is identity on byte values") {
  ImageTensor img({1, 1, 256});
  for (int i = 0; i < 256; ++i) img.values[i] = i / 255.0;
  auto q = quantize(img);
  for (int i = 0; i < 256; ++i) CHECK(q.values[i] == i);
}

TEST_CASE("png round trip preserves bytes") {
  ByteImage img;
  img.shape = {3, 8, 8};
  img.values.resize(3 * 8 * 8);
  Rng rng(7);
  for (auto& v : img.values) v = static_cast<std::uint8_t>(rng() & 0xff);
  const std::string path = (std::filesystem::temp_directory_path() / "hijack_t.png").string();
  write_png(path, img);
  auto back = read_png(path);
  CHECK(back.shape == img.shape);
  CHECK(back.values == img.values);
  std::filesystem::remove(path);
}
