#include "gqtok/codec.hpp"

#include <fstream>
#include <iterator>
#include <limits>

namespace gqtok {

namespace {

constexpr std::uint8_t kMagic[4] = {'W', 'T', 'O', 'K'};

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

void put_u16(std::vector<std::uint8_t>& out, std::size_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

void check_fits(const char* what, std::size_t v, std::size_t max) {
  if (v < 1 || v > max) {
    throw CodecError(CodecError::Kind::InvalidGrid,
                     std::string(what) + "=" + std::to_string(v) + " outside [1, " + std::to_string(max) + "]");
  }
}

}  // namespace

CodecError::CodecError(Kind kind, const std::string& detail)
    : std::runtime_error(std::string(codec_error_name(kind)) + ": " + detail), kind_(kind) {}

const char* codec_error_name(CodecError::Kind kind) {
  switch (kind) {
    case CodecError::Kind::BadMagic: return "bad-magic";
    case CodecError::Kind::BadVersion: return "bad-version";
    case CodecError::Kind::Truncated: return "truncated";
    case CodecError::Kind::TrailingBytes: return "trailing-bytes";
    case CodecError::Kind::BadPadding: return "bad-padding";
    case CodecError::Kind::InvalidHeader: return "invalid-header";
    case CodecError::Kind::InvalidGrid: return "invalid-grid";
  }
  return "unknown";
}

std::size_t BitstreamHeader::payload_bits() const noexcept {
  return std::size_t{height} * width * groups * group_channels;
}

std::vector<std::uint8_t> pack(const TokenGrid& tokens, std::size_t image_height, std::size_t image_width) {
  constexpr std::size_t u16 = std::numeric_limits<std::uint16_t>::max();
  check_fits("h", tokens.height, u16);
  check_fits("w", tokens.width, u16);
  check_fits("H", image_height, u16);
  check_fits("W", image_width, u16);
  check_fits("g", tokens.groups, 255);
  check_fits("d'", tokens.group_channels, QuantConfig::kMaxGroupChannels);
  try {
    tokens.validate();
  } catch (const std::invalid_argument& e) {
    throw CodecError(CodecError::Kind::InvalidGrid, e.what());
  }

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(BitstreamHeader::kVersion);
  put_u16(out, image_height);
  put_u16(out, image_width);
  put_u16(out, tokens.height);
  put_u16(out, tokens.width);
  out.push_back(static_cast<std::uint8_t>(tokens.groups));
  out.push_back(static_cast<std::uint8_t>(tokens.group_channels));

  const std::size_t dp = tokens.group_channels;
  const std::size_t bits = tokens.indices.size() * dp;
  const std::size_t base = out.size();
  out.resize(base + (bits + 7) / 8, 0);
  std::size_t pos = 0;
  for (std::uint32_t idx : tokens.indices) {
    for (std::size_t t = dp; t-- > 0; ++pos) {
      if ((idx >> t) & 1u) out[base + pos / 8] |= static_cast<std::uint8_t>(0x80u >> (pos % 8));
    }
  }
  return out;
}

BitstreamHeader read_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    if (bytes.size() < 4 && std::equal(bytes.begin(), bytes.end(), kMagic)) {
      throw CodecError(CodecError::Kind::Truncated, "stream shorter than the magic");
    }
    throw CodecError(CodecError::Kind::BadMagic, "stream does not start with WTOK");
  }
  if (bytes.size() < 5) throw CodecError(CodecError::Kind::Truncated, "missing version byte");
  if (bytes[4] != BitstreamHeader::kVersion) {
    throw CodecError(CodecError::Kind::BadVersion, "unsupported version " + std::to_string(bytes[4]));
  }
  if (bytes.size() < BitstreamHeader::kSize) {
    throw CodecError(CodecError::Kind::Truncated, "header needs 15 bytes, got " + std::to_string(bytes.size()));
  }
  BitstreamHeader h;
  h.image_height = read_u16(bytes, 5);
  h.image_width = read_u16(bytes, 7);
  h.height = read_u16(bytes, 9);
  h.width = read_u16(bytes, 11);
  h.groups = bytes[13];
  h.group_channels = bytes[14];
  if (h.image_height == 0 || h.image_width == 0 || h.height == 0 || h.width == 0 || h.groups == 0 ||
      h.group_channels == 0 || h.group_channels > QuantConfig::kMaxGroupChannels) {
    throw CodecError(CodecError::Kind::InvalidHeader,
                     "H=" + std::to_string(h.image_height) + " W=" + std::to_string(h.image_width) +
                         " h=" + std::to_string(h.height) + " w=" + std::to_string(h.width) +
                         " g=" + std::to_string(h.groups) + " d'=" + std::to_string(h.group_channels));
  }
  return h;
}

DecodedStream unpack(std::span<const std::uint8_t> bytes) {
  DecodedStream out;
  out.header = read_header(bytes);
  const BitstreamHeader& h = out.header;
  const std::size_t need = BitstreamHeader::kSize + h.payload_bytes();
  if (bytes.size() < need) {
    throw CodecError(CodecError::Kind::Truncated,
                     "payload needs " + std::to_string(h.payload_bytes()) + " bytes, got " +
                         std::to_string(bytes.size() - BitstreamHeader::kSize));
  }
  if (bytes.size() > need) {
    throw CodecError(CodecError::Kind::TrailingBytes, std::to_string(bytes.size() - need) + " extra bytes");
  }
  const auto payload = bytes.subspan(BitstreamHeader::kSize);
  const std::size_t bits = h.payload_bits();
  if (bits % 8 != 0 && (payload.back() & (0xFFu >> (bits % 8))) != 0) {
    throw CodecError(CodecError::Kind::BadPadding, "non-zero padding bits");
  }
  out.tokens = TokenGrid(h.height, h.width, h.groups, h.group_channels);
  std::size_t pos = 0;
  for (auto& idx : out.tokens.indices) {
    std::uint32_t v = 0;
    for (std::size_t t = 0; t < h.group_channels; ++t, ++pos) {
      v = (v << 1) | ((payload[pos / 8] >> (7 - pos % 8)) & 1u);
    }
    idx = v;
  }
  return out;
}

double compression_ratio(std::size_t image_height, std::size_t image_width, std::size_t channels,
                         std::size_t bits_per_channel, std::size_t height, std::size_t width, std::size_t groups,
                         std::size_t group_channels) {
  if (!image_height || !image_width || !channels || !bits_per_channel || !height || !width || !groups ||
      !group_channels) {
    throw std::invalid_argument("compression_ratio: dimensions must be positive");
  }
  const double input_bits = static_cast<double>(image_height) * static_cast<double>(image_width) *
                            static_cast<double>(channels) * static_cast<double>(bits_per_channel);
  const double token_bits = static_cast<double>(height) * static_cast<double>(width) * static_cast<double>(groups) *
                            static_cast<double>(group_channels);
  return input_bits / token_bits;
}

double compression_ratio(const BitstreamHeader& h, std::size_t channels, std::size_t bits_per_channel) {
  return compression_ratio(h.image_height, h.image_width, channels, bits_per_channel, h.height, h.width, h.groups,
                           h.group_channels);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace gqtok
