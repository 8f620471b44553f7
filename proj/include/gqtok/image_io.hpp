#pragma once

// Binary PGM (P5, 1 channel) and PPM (P6, 3 channels) with maxval 255.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gqtok/tensor.hpp"

namespace gqtok {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;          // 1 or 3
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels

  bool operator==(const Image&) const = default;
};

Image decode_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const Image& image);

Image read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Image& image);

/// (H, W, C) tensor with values v / 127.5 - 1 in [-1, 1].
Tensor image_to_tensor(const Image& image);
/// Inverse mapping, rounded to nearest and clamped to [0, 255].
Image tensor_to_image(const Tensor& t);

}  // namespace gqtok
