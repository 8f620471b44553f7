#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "gqtok/metrics.hpp"
#include "gqtok/rng.hpp"

using namespace gqtok;

namespace {

Image random_image(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  Image img{h, w, c, std::vector<std::uint8_t>(h * w * c)};
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

}  // namespace

TEST_CASE("psnr") {
  Rng rng(1);
  const Image a = random_image(rng, 16, 16, 3);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, a) > 0);
  CHECK(format_metric(psnr(a, a)) == "inf");

  // Every pixel off by one: mse = 1.
  Image b = a;
  for (auto& p : b.pixels) p = p == 255 ? 254 : p + 1;
  CHECK(mse(a, b) == 1.0);
  CHECK(psnr(a, b) == doctest::Approx(48.1308).epsilon(1e-5));
  CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(255.0 * 255.0)).epsilon(1e-15));

  // Strictly decreasing in mse.
  double prev = std::numeric_limits<double>::infinity();
  for (int delta = 1; delta < 40; delta += 3) {
    Image c = a;
    for (auto& p : c.pixels) p = static_cast<std::uint8_t>(p >= 128 ? p - delta : p + delta);
    const double v = psnr(a, c);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("ssim") {
  Rng rng(2);
  const Image a = random_image(rng, 16, 16, 3);
  CHECK(ssim(a, a) == 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Image b = random_image(rng, 16, 12, 1);
    const Image c = random_image(rng, 16, 12, 1);
    const double s = ssim(b, c);
    CHECK(std::abs(s - ssim(c, b)) <= 1e-12);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
  // Inverted image is anti-correlated.
  Image inv = a;
  for (auto& p : inv.pixels) p = static_cast<std::uint8_t>(255 - p);
  CHECK(ssim(a, inv) < 0.0);
  // Hand-made constant pair: means 100 and 110, zero variance -> luminance term only.
  Image c1{8, 8, 1, std::vector<std::uint8_t>(64, 100)};
  Image c2{8, 8, 1, std::vector<std::uint8_t>(64, 110)};
  const double k1 = (0.01 * 255) * (0.01 * 255);
  CHECK(ssim(c1, c2) == doctest::Approx((2 * 100.0 * 110.0 + k1) / (100.0 * 100.0 + 110.0 * 110.0 + k1)).epsilon(1e-12));
}

TEST_CASE("metric errors") {
  Rng rng(3);
  const Image a = random_image(rng, 16, 16, 3);
  const Image b = random_image(rng, 16, 16, 1);
  CHECK_THROWS_AS(psnr(a, b), std::invalid_argument);
  CHECK_THROWS_AS(ssim(a, b), std::invalid_argument);
  const Image tiny = random_image(rng, 4, 4, 1);
  CHECK_THROWS_AS(ssim(tiny, tiny), std::invalid_argument);
}

TEST_CASE("pnm round trip and parsing") {
  Rng rng(4);
  for (std::size_t c : {1u, 3u}) {
    const Image img = random_image(rng, 5, 7, c);
    const auto bytes = encode_pnm(img);
    CHECK(bytes[1] == (c == 3 ? '6' : '5'));
    CHECK(decode_pnm(bytes) == img);
  }
  const std::string text = "P5\n# a comment\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.push_back(10);
  bytes.push_back(200);
  const Image img = decode_pnm(bytes);
  CHECK(img.width == 2);
  CHECK(img.height == 1);
  CHECK(img.pixels == std::vector<std::uint8_t>{10, 200});

  const std::string p16 = "P5\n2 1\n65535\n";
  CHECK_THROWS_AS(decode_pnm(std::vector<std::uint8_t>(p16.begin(), p16.end())), ImageError);
  const std::string ascii = "P2\n2 1\n255\n1 2\n";
  CHECK_THROWS_AS(decode_pnm(std::vector<std::uint8_t>(ascii.begin(), ascii.end())), ImageError);
  bytes.pop_back();
  CHECK_THROWS_AS(decode_pnm(bytes), ImageError);

  const auto path = std::filesystem::temp_directory_path() / "gqtok_test.ppm";
  const Image rgb = random_image(rng, 3, 3, 3);
  write_pnm(path.string(), rgb);
  CHECK(read_pnm(path.string()) == rgb);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_pnm("/nonexistent/x.ppm"), ImageError);
}

TEST_CASE("tensor conversion") {
  Image img{1, 3, 1, {0, 128, 255}};
  const Tensor t = image_to_tensor(img);
  CHECK(t[0] == -1.0);
  CHECK(t[2] == 1.0);
  CHECK(tensor_to_image(t) == img);
  Tensor wild(Shape{1, 2, 1}, std::vector<double>{-3.0, 7.0});
  CHECK(tensor_to_image(wild).pixels == std::vector<std::uint8_t>{0, 255});
}
