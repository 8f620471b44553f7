#pragma once

// Procedural training images: linear gradients, stripes and checkerboards.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "gqtok/tensor.hpp"

namespace gqtok {

/// `count` images of shape (size, size, channels) with values in [-1, 1].
/// Pattern kind cycles gradient, stripes, checkerboard by index; every other
/// parameter (angle, frequency, phase, colors) is drawn from `seed`.
std::vector<Tensor> synthetic_images(std::size_t count, std::size_t size, std::size_t channels, std::uint64_t seed);

/// Stacks equally shaped (H, W, C) images into (N, H, W, C).
Tensor stack_images(const std::vector<Tensor>& images, const std::vector<std::size_t>& indices);

}  // namespace gqtok
