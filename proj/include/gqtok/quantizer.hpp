#pragma once

// Group-wise lookup-free quantization.
//
// A latent of d = g * d' channels is viewed as g groups of d' channels. Each
// channel is quantized to its sign, so group k of position (i, j) lands on a
// vertex of {-1, +1}^d'. Token ids are the MSB-first binary reading of that
// vertex with bit = 1 for +1. g = 1 is plain LFQ; g = d is per-bit.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gqtok/autodiff.hpp"
#include "gqtok/tensor.hpp"

namespace gqtok {

/// Sign assigned to an exact zero.
enum class TieRule { PositiveOnZero, NegativeOnZero };

/// Optional squashing of the latent before quantization and soft assignment.
enum class PreActivation { None, Tanh };

struct QuantConfig {
  std::size_t groups = 1;
  std::size_t group_channels = 1;
  TieRule tie = TieRule::PositiveOnZero;
  PreActivation pre_activation = PreActivation::None;

  std::size_t channels() const noexcept { return groups * group_channels; }
  std::uint64_t group_codebook_size() const noexcept { return std::uint64_t{1} << group_channels; }

  /// Throws std::invalid_argument on g < 1, d' < 1 or d' > kMaxGroupChannels.
  void validate() const;

  static constexpr std::size_t kMaxGroupChannels = 24;
};

/// Latent of shape (h, w, g, d').
struct GroupedLatent {
  Tensor values;

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
  std::size_t groups() const { return values.dim(2); }
  std::size_t group_channels() const { return values.dim(3); }
};

/// Per-position, per-group code indices in [0, 2^d').
struct TokenGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t groups = 0;
  std::size_t group_channels = 0;
  std::vector<std::uint32_t> indices;  // row-major (i, j, k)

  TokenGrid() = default;
  TokenGrid(std::size_t h, std::size_t w, std::size_t g, std::size_t dprime);

  std::uint32_t& at(std::size_t i, std::size_t j, std::size_t k) { return indices[(i * width + j) * groups + k]; }
  std::uint32_t at(std::size_t i, std::size_t j, std::size_t k) const { return indices[(i * width + j) * groups + k]; }

  /// Throws std::invalid_argument when an index is out of range or sizes disagree.
  void validate() const;

  bool operator==(const TokenGrid&) const = default;
};

using SignCode = std::vector<int>;

double sign_value(double x, TieRule tie = TieRule::PositiveOnZero) noexcept;

std::uint32_t code_to_index(std::span<const int> code);
SignCode index_to_code(std::uint32_t index, std::size_t group_channels);

/// (h, w, d) -> (h, w, g, d') with values[i, j, k, t] = u[i, j, k * d' + t].
GroupedLatent group_reshape(const Tensor& u, const QuantConfig& cfg);
/// Inverse of group_reshape.
Tensor ungroup(const GroupedLatent& x);

struct SignQuantized {
  Tensor signs;  // same shape as the input, entries in {-1, +1}
  TokenGrid tokens;
};

/// Throws NumericError on NaN input.
SignQuantized sign_quantize(const GroupedLatent& x, TieRule tie = TieRule::PositiveOnZero);

/// Element-wise sign of a tensor of any shape.
Tensor sign_tensor(const Tensor& x, TieRule tie = TieRule::PositiveOnZero);

/// Token grids for a batch of signs shaped (N, h, w, g, d').
std::vector<TokenGrid> tokens_from_signs(const Tensor& signs);

/// Sign tensor (h, w, g * d') for a token grid.
Tensor signs_from_tokens(const TokenGrid& tokens);

/// Value equal to `signs` exactly, gradient equal to identity w.r.t. `u`.
/// Built as signs + (u - stop_gradient(u)).
ad::Var straight_through(ad::Var u, const Tensor& signs);

/// Applies cfg.pre_activation to a latent node.
ad::Var pre_activate(ad::Var u, const QuantConfig& cfg);

}  // namespace gqtok
