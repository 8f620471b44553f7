#pragma once

// .wtok token bitstream.
//
//   offset  size  field
//   0       4     magic "WTOK"
//   4       1     version (1)
//   5       2     H  original image height   (u16 LE)
//   7       2     W  original image width    (u16 LE)
//   9       2     h  token grid height       (u16 LE)
//   11      2     w  token grid width        (u16 LE)
//   13      1     g  groups
//   14      1     d' channels per group
//   15      ...   payload
//
// The payload holds every token's d' sign bits, row-major over (i, j), then
// group-major over k, MSB first, bit 1 for +1. It is zero-padded to a byte
// boundary, so its length is ceil(h * w * g * d' / 8).

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gqtok/quantizer.hpp"

namespace gqtok {

class CodecError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, BadVersion, Truncated, TrailingBytes, BadPadding, InvalidHeader, InvalidGrid };

  CodecError(Kind kind, const std::string& detail);
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

const char* codec_error_name(CodecError::Kind kind);

struct BitstreamHeader {
  static constexpr std::uint8_t kVersion = 1;
  static constexpr std::size_t kSize = 15;

  std::uint16_t image_height = 0;
  std::uint16_t image_width = 0;
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint8_t groups = 0;
  std::uint8_t group_channels = 0;

  std::size_t payload_bits() const noexcept;
  std::size_t payload_bytes() const noexcept { return (payload_bits() + 7) / 8; }
  bool operator==(const BitstreamHeader&) const = default;
};

struct DecodedStream {
  BitstreamHeader header;
  TokenGrid tokens;
};

/// Serializes `tokens` for an image of size image_height x image_width.
/// Throws CodecError (InvalidGrid) for empty grids, out-of-range indices or
/// dimensions that do not fit the header fields.
std::vector<std::uint8_t> pack(const TokenGrid& tokens, std::size_t image_height, std::size_t image_width);

/// Parses a complete stream. Throws CodecError on any malformation.
DecodedStream unpack(std::span<const std::uint8_t> bytes);

/// Parses the 15-byte header only.
BitstreamHeader read_header(std::span<const std::uint8_t> bytes);

/// (H * W * C * bits) / (h * w * g * d'). Throws std::invalid_argument on
/// non-positive dimensions.
double compression_ratio(std::size_t image_height, std::size_t image_width, std::size_t channels,
                         std::size_t bits_per_channel, std::size_t height, std::size_t width, std::size_t groups,
                         std::size_t group_channels);

double compression_ratio(const BitstreamHeader& header, std::size_t channels = 3, std::size_t bits_per_channel = 8);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace gqtok
