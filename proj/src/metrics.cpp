#include "gqtok/metrics.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <string>

namespace gqtok {

namespace {

void same_shape(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw std::invalid_argument("metrics: shape mismatch (" + std::to_string(a.height) + ", " +
                                std::to_string(a.width) + ", " + std::to_string(a.channels) + ") vs (" +
                                std::to_string(b.height) + ", " + std::to_string(b.width) + ", " +
                                std::to_string(b.channels) + ")");
  }
  if (a.pixels.size() != a.height * a.width * a.channels || b.pixels.size() != a.pixels.size()) {
    throw std::invalid_argument("metrics: pixel count does not match dimensions");
  }
}

}  // namespace

double mse(const Image& a, const Image& b) {
  same_shape(a, b);
  if (a.pixels.empty()) throw std::invalid_argument("metrics: empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.pixels.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

double ssim(const Image& a, const Image& b) {
  same_shape(a, b);
  const std::size_t k = kSsimWindow;
  if (a.height < k || a.width < k) {
    throw std::invalid_argument("ssim: image smaller than the " + std::to_string(k) + "x" + std::to_string(k) +
                                " window");
  }
  constexpr double c1 = (0.01 * 255) * (0.01 * 255);
  constexpr double c2 = (0.03 * 255) * (0.03 * 255);
  const double n = static_cast<double>(k * k);
  const std::size_t ch = a.channels;
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i + k <= a.height; ++i) {
      for (std::size_t j = 0; j + k <= a.width; ++j) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t di = 0; di < k; ++di) {
          for (std::size_t dj = 0; dj < k; ++dj) {
            const std::size_t idx = ((i + di) * a.width + (j + dj)) * ch + c;
            const double x = a.pixels[idx], y = b.pixels[idx];
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
          }
        }
        const double ma = sa / n, mb = sb / n;
        const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
    }
  }
  return total / static_cast<double>(windows);
}

MetricReport compare(const Image& a, const Image& b) { return MetricReport{psnr(a, b), ssim(a, b), mse(a, b)}; }

std::string format_metric(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace gqtok
