#include "gqtok/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "gqtok/codec.hpp"

namespace gqtok {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > 1u << 24) throw ImageError(std::string("pnm: ") + what + " too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) throw ImageError(std::string("pnm: expected ") + what);
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }
  bool at_space() const { return pos_ < b_.size() && std::isspace(b_[pos_]); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

Image decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ImageError("pnm: expected binary P5 or P6 magic");
  }
  Image img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader r(bytes.subspan(2));
  img.width = r.number("width");
  img.height = r.number("height");
  const std::size_t maxval = r.number("maxval");
  if (maxval != 255) throw ImageError("pnm: maxval " + std::to_string(maxval) + " unsupported (need 255)");
  if (img.width == 0 || img.height == 0) throw ImageError("pnm: empty image");
  if (!r.at_space()) throw ImageError("pnm: missing whitespace after maxval");
  r.advance();
  const std::size_t start = 2 + r.pos();
  const std::size_t n = img.width * img.height * img.channels;
  if (bytes.size() - start < n) {
    throw ImageError("pnm: truncated raster, need " + std::to_string(n) + " bytes, got " +
                     std::to_string(bytes.size() - start));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    bytes.begin() + static_cast<std::ptrdiff_t>(start + n));
  return img;
}

std::vector<std::uint8_t> encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw ImageError("pnm: channels must be 1 or 3");
  if (image.pixels.size() != image.height * image.width * image.channels) throw ImageError("pnm: pixel count mismatch");
  const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(image.width) +
                             " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Image read_pnm(const std::string& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const std::runtime_error& e) {
    throw ImageError(e.what());
  }
  return decode_pnm(bytes);
}

void write_pnm(const std::string& path, const Image& image) { write_file_bytes(path, encode_pnm(image)); }

Tensor image_to_tensor(const Image& image) {
  Tensor t(Shape{image.height, image.width, image.channels});
  for (std::size_t i = 0; i < image.pixels.size(); ++i) t[i] = static_cast<double>(image.pixels[i]) / 127.5 - 1.0;
  return t;
}

Image tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(2) != 1 && t.dim(2) != 3)) {
    throw ImageError("tensor_to_image: expected (H, W, 1|3), got " + shape_string(t.shape()));
  }
  Image img{t.dim(0), t.dim(1), t.dim(2), std::vector<std::uint8_t>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = std::round((t[i] + 1.0) * 127.5);
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return img;
}

}  // namespace gqtok
