#pragma once

// Soft code assignment and the grouped token / codebook entropy losses.
//
// For group k at position (i, j) the assignment over the 2^d' vertices c of
// {-1, +1}^d' is softmax_c(<u_k, c> / tau). Because <u, c> = sum_k <u_k, c_k>,
// the full 2^d softmax is exactly the product of the per-group ones, so the
// grouped token entropy equals the full one. The grouped codebook entropy
// replaces the entropy of the averaged joint by the sum of entropies of the
// averaged per-group marginals, an upper bound that is tight at g = 1.
//
// All entropies are in nats.

#include <cstddef>

#include "gqtok/autodiff.hpp"
#include "gqtok/quantizer.hpp"
#include "gqtok/tensor.hpp"

namespace gqtok {

/// Rows are the vertices of {-1, +1}^d' in token-index order: shape (2^d', d').
Tensor group_codebook(std::size_t group_channels);

/// Differentiable soft assignment over positions P, groups g and codes K.
struct SoftAssignment {
  ad::Var probs;      // (P, g, K)
  ad::Var log_probs;  // (P, g, K)
  std::size_t positions = 0;
  std::size_t groups = 0;
  std::size_t group_channels = 0;
};

/// `grouped` has shape (..., g, d'); leading axes are flattened into positions.
/// Throws std::invalid_argument when tau <= 0.
SoftAssignment soft_assignment(ad::Var grouped, double tau);

/// (1/P) sum_p sum_k H(q(. | u_{p,k})).
ad::Var token_entropy(const SoftAssignment& q);
/// sum_k H((1/P) sum_p q(. | u_{p,k})).
ad::Var codebook_entropy(const SoftAssignment& q);

struct EntropyTerms {
  ad::Var token;
  ad::Var codebook;
  ad::Var combined;  // token - zeta * codebook
};

EntropyTerms entropy_loss(const SoftAssignment& q, double zeta);

// Value-level API over plain tensors. Computes through the same graph as the
// differentiable path, so the numbers agree bit for bit.

struct GroupDistribution {
  Tensor probs;      // (h, w, g, 2^d')
  Tensor log_probs;  // same shape
  double temperature = 1.0;
};

GroupDistribution soft_assignment(const GroupedLatent& x, double tau);
double token_entropy(const GroupDistribution& dist);
double codebook_entropy(const GroupDistribution& dist);

struct EntropyLossValue {
  double token_entropy = 0.0;
  double codebook_entropy = 0.0;
  double combined = 0.0;
  double zeta = 1.0;
};

/// Throws std::invalid_argument when zeta < 0.
EntropyLossValue entropy_loss(const GroupDistribution& dist, double zeta);

/// Exact token and codebook entropies by enumerating all 2^d codes.
struct ExactEntropy {
  double token = 0.0;
  double codebook = 0.0;
};

inline constexpr std::size_t kOracleMaxChannels = 20;

/// `u` has shape (..., d); leading axes are positions. Throws
/// std::invalid_argument when d > kOracleMaxChannels.
ExactEntropy oracle_full_entropy(const Tensor& u, double tau);

/// Size of the code-axis buffers the entropy path needs.
struct BufferFootprint {
  /// h * w * g * 2^d' * element_size: one grouped assignment buffer.
  double grouped_bytes = 0.0;
  /// h * w * 2^(g*d') * element_size: the same buffer without grouping.
  double ungrouped_bytes = 0.0;
};

BufferFootprint entropy_buffer_footprint(const QuantConfig& cfg, std::size_t h, std::size_t w,
                                         std::size_t element_size = 4);

/// Code-axis buffers that must coexist to evaluate sum p log p: the
/// probabilities and their logarithms.
inline constexpr std::size_t kLiveCodeBuffers = 2;

}  // namespace gqtok
