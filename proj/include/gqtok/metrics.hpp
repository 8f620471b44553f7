#pragma once

// Reconstruction quality on 8-bit images.
//
// SSIM uses 8x8 uniform windows at stride 1 (not the 11x11 Gaussian of the
// reference implementation), population statistics, C1 = (0.01 * 255)^2 and
// C2 = (0.03 * 255)^2, averaged over windows and channels.

#include <cstddef>

#include "gqtok/image_io.hpp"

namespace gqtok {

struct MetricReport {
  double psnr = 0.0;  // dB; +inf for identical images
  double ssim = 0.0;
  double mse = 0.0;
};

inline constexpr std::size_t kSsimWindow = 8;

/// Throws std::invalid_argument when the images differ in shape.
double mse(const Image& a, const Image& b);
/// 10 * log10(255^2 / mse); +infinity when mse = 0.
double psnr(const Image& a, const Image& b);
/// Throws std::invalid_argument when either side is smaller than the window.
double ssim(const Image& a, const Image& b);

MetricReport compare(const Image& a, const Image& b);

/// "inf" for +infinity, otherwise shortest round-trip decimal.
std::string format_metric(double v);

}  // namespace gqtok
