#include "gqtok/data.hpp"

#include <cmath>
#include <numbers>

#include "gqtok/rng.hpp"

namespace gqtok {

std::vector<Tensor> synthetic_images(std::size_t count, std::size_t size, std::size_t channels, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  out.reserve(count);
  const double n = static_cast<double>(size);
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> lo(channels), hi(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      lo[c] = rng.uniform(-1.0, 0.0);
      hi[c] = rng.uniform(0.0, 1.0);
    }
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double freq = rng.uniform(1.0, 4.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const std::size_t cell = std::size_t{1} << (1 + rng.below(2));  // 2 or 4 pixels
    const std::size_t offset = rng.below(cell);

    Tensor img(Shape{size, size, channels});
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = 0; j < size; ++j) {
        const double y = (static_cast<double>(i) + 0.5) / n - 0.5;
        const double x = (static_cast<double>(j) + 0.5) / n - 0.5;
        double t = 0.0;  // mixing weight in [0, 1]
        switch (k % 3) {
          case 0:
            t = std::clamp(0.5 + (x * ca + y * sa), 0.0, 1.0);
            break;
          case 1:
            t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * (x * ca + y * sa) + phase);
            break;
          default:
            t = (((i + offset) / cell + (j + offset) / cell) % 2) ? 1.0 : 0.0;
            break;
        }
        for (std::size_t c = 0; c < channels; ++c) img[(i * size + j) * channels + c] = lo[c] + (hi[c] - lo[c]) * t;
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

Tensor stack_images(const std::vector<Tensor>& images, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("stack_images: empty batch");
  const Shape& s = images.at(indices[0]).shape();
  Shape batch{indices.size()};
  batch.insert(batch.end(), s.begin(), s.end());
  Tensor out(batch);
  const std::size_t n = shape_numel(s);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& img = images.at(indices[b]);
    if (img.shape() != s) throw ShapeError::mismatch("stack_images", s, img.shape());
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * n));
  }
  return out;
}

}  // namespace gqtok
