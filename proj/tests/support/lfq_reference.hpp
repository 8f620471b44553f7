#pragma once

// Direct, ungrouped lookup-free quantization written from its definition:
// per-channel sign, MSB-first token id over all d channels, and the entropy
// loss over the full {-1, +1}^d codebook with q(c | u) = softmax(<u, c> / tau).
// Shares no code with the library's quantizer or entropy modules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace gqtok::testing {

struct LfqReference {
  std::vector<double> signs;           // (P, d)
  std::vector<std::uint32_t> tokens;   // (P)
  std::vector<double> st_values;       // straight-through forward value, (P, d)
  double token_entropy = 0.0;
  double codebook_entropy = 0.0;
  double combined = 0.0;
};

/// `u` holds P positions of d channels, row-major.
inline LfqReference lfq_reference(const std::vector<double>& u, std::size_t d, double tau, double zeta) {
  const std::size_t positions = u.size() / d;
  const std::size_t codes = std::size_t{1} << d;
  LfqReference r;
  r.signs.resize(u.size());
  r.tokens.resize(positions);
  for (std::size_t p = 0; p < positions; ++p) {
    std::uint32_t id = 0;
    for (std::size_t t = 0; t < d; ++t) {
      const double v = u[p * d + t];
      const double s = v < 0.0 ? -1.0 : 1.0;  // sign(0) = +1
      r.signs[p * d + t] = s;
      id = id * 2 + (s > 0 ? 1 : 0);
    }
    r.tokens[p] = id;
  }
  r.st_values = r.signs;

  std::vector<double> avg(codes, 0.0);
  std::vector<std::vector<double>> probs(positions, std::vector<double>(codes));
  double token_sum = 0.0;
  for (std::size_t p = 0; p < positions; ++p) {
    std::vector<double> logit(codes);
    for (std::size_t m = 0; m < codes; ++m) {
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const bool plus = (m >> (d - 1 - t)) & 1u;
        dot += u[p * d + t] * (plus ? 1.0 : -1.0);
      }
      logit[m] = dot * (1.0 / tau);
    }
    const double mx = *std::max_element(logit.begin(), logit.end());
    double z = 0.0;
    for (std::size_t m = 0; m < codes; ++m) z += std::exp(logit[m] - mx);
    const double log_z = std::log(z);
    double plogp = 0.0;
    for (std::size_t m = 0; m < codes; ++m) {
      const double prob = std::exp(logit[m] - mx) / z;
      probs[p][m] = prob;
      plogp += prob * ((logit[m] - mx) - log_z);
    }
    token_sum += -plogp;
  }
  r.token_entropy = token_sum / static_cast<double>(positions);
  for (std::size_t m = 0; m < codes; ++m) {
    double s = 0.0;
    for (std::size_t p = 0; p < positions; ++p) s += probs[p][m];
    avg[m] = s / static_cast<double>(positions);
  }
  double cb = 0.0;
  for (std::size_t m = 0; m < codes; ++m) cb += avg[m] * std::log(avg[m]);
  r.codebook_entropy = -cb;
  r.combined = r.token_entropy - zeta * r.codebook_entropy;
  return r;
}

}  // namespace gqtok::testing
