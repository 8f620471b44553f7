#include "gqtok/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace gqtok {

namespace {

// Added before taking the log of averaged probabilities so exact zeros stay
// finite. Below half an ulp of any probability above ~1e-284, so it does not
// change the value otherwise.
constexpr double kLogFloor = 1e-300;

void check_bounds([[maybe_unused]] const char* what, [[maybe_unused]] double value,
                  [[maybe_unused]] std::size_t groups, [[maybe_unused]] std::size_t group_channels) {
#ifndef NDEBUG
  const double upper = static_cast<double>(groups * group_channels) * std::numbers::ln2;
  if (value < -1e-9 || value > upper + 1e-9) {
    throw std::logic_error(std::string(what) + " " + std::to_string(value) + " outside [0, " + std::to_string(upper) +
                           "]");
  }
#endif
}

}  // namespace

Tensor group_codebook(std::size_t group_channels) {
  if (group_channels < 1 || group_channels > QuantConfig::kMaxGroupChannels) {
    throw std::invalid_argument("group_codebook: bad group_channels " + std::to_string(group_channels));
  }
  const std::size_t k = std::size_t{1} << group_channels;
  Tensor out(Shape{k, group_channels});
  for (std::size_t m = 0; m < k; ++m) {
    for (std::size_t t = 0; t < group_channels; ++t) {
      out[m * group_channels + t] = ((m >> (group_channels - 1 - t)) & 1u) ? 1.0 : -1.0;
    }
  }
  return out;
}

SoftAssignment soft_assignment(ad::Var grouped, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("soft_assignment: temperature must be positive");
  const Shape& s = grouped.shape();
  if (s.size() < 2) throw ShapeError("soft_assignment: expected (..., g, d'), got " + shape_string(s));
  const std::size_t groups = s[s.size() - 2];
  const std::size_t dprime = s.back();
  const std::size_t positions = shape_numel(s) / (groups * dprime);
  const std::size_t codes = std::size_t{1} << dprime;

  // Codebook laid out (d', K) so logits = u_k . C.
  const Tensor book = group_codebook(dprime);
  Tensor book_t(Shape{dprime, codes});
  for (std::size_t m = 0; m < codes; ++m)
    for (std::size_t t = 0; t < dprime; ++t) book_t[t * codes + m] = book[m * dprime + t];

  ad::Tape& tape = *grouped.tape();
  ad::Var flat = ad::reshape(grouped, {positions * groups, dprime});
  ad::Var logits = ad::scale(ad::matmul(flat, tape.constant(std::move(book_t))), 1.0 / tau);
  logits = ad::reshape(logits, {positions, groups, codes});
  return SoftAssignment{ad::softmax(logits), ad::log_softmax(logits), positions, groups, dprime};
}

ad::Var token_entropy(const SoftAssignment& q) {
  ad::Var plogp = ad::mul(q.probs, q.log_probs);
  ad::Var per_group = ad::scale(ad::sum(plogp, 2), -1.0);
  ad::Var per_position = ad::sum(per_group, 1);
  ad::Var out = ad::mean(per_position);
  check_bounds("token entropy", out.value().item(), q.groups, q.group_channels);
  return out;
}

ad::Var codebook_entropy(const SoftAssignment& q) {
  ad::Var avg = ad::mean(q.probs, 0);
  ad::Var log_avg = ad::log(ad::add_scalar(avg, kLogFloor));
  ad::Var per_group = ad::scale(ad::sum(ad::mul(avg, log_avg), 1), -1.0);
  ad::Var out = ad::sum(per_group);
  check_bounds("codebook entropy", out.value().item(), q.groups, q.group_channels);
  return out;
}

EntropyTerms entropy_loss(const SoftAssignment& q, double zeta) {
  if (!(zeta >= 0.0)) throw std::invalid_argument("entropy_loss: zeta must be >= 0");
  ad::Var token = token_entropy(q);
  ad::Var codebook = codebook_entropy(q);
  ad::Var combined = ad::sub(token, ad::scale(codebook, zeta));
  return EntropyTerms{token, codebook, combined};
}

// ---------------------------------------------------------------------------
// Value-level API

namespace {

SoftAssignment constant_assignment(ad::Tape& tape, const GroupDistribution& dist) {
  const Shape& s = dist.probs.shape();
  if (s.size() != 4 || dist.log_probs.shape() != s) {
    throw ShapeError("GroupDistribution: expected matching (h, w, g, K) tensors, got " + shape_string(s) + " and " +
                     shape_string(dist.log_probs.shape()));
  }
  const std::size_t positions = s[0] * s[1];
  const std::size_t codes = s[3];
  std::size_t dprime = 0;
  while ((std::size_t{1} << dprime) < codes) ++dprime;
  if ((std::size_t{1} << dprime) != codes) throw ShapeError("GroupDistribution: code axis is not a power of two");
  ad::Var p = tape.constant(dist.probs.reshaped({positions, s[2], codes}));
  ad::Var lp = tape.constant(dist.log_probs.reshaped({positions, s[2], codes}));
  return SoftAssignment{p, lp, positions, s[2], dprime};
}

}  // namespace

GroupDistribution soft_assignment(const GroupedLatent& x, double tau) {
  if (x.values.rank() != 4) throw ShapeError("soft_assignment: expected (h, w, g, d'), got " + shape_string(x.values.shape()));
  ad::Tape tape;
  SoftAssignment q = soft_assignment(tape.constant(x.values), tau);
  const std::size_t codes = std::size_t{1} << x.group_channels();
  const Shape shape{x.height(), x.width(), x.groups(), codes};
  return GroupDistribution{q.probs.value().reshaped(shape), q.log_probs.value().reshaped(shape), tau};
}

double token_entropy(const GroupDistribution& dist) {
  ad::Tape tape;
  return token_entropy(constant_assignment(tape, dist)).value().item();
}

double codebook_entropy(const GroupDistribution& dist) {
  ad::Tape tape;
  return codebook_entropy(constant_assignment(tape, dist)).value().item();
}

EntropyLossValue entropy_loss(const GroupDistribution& dist, double zeta) {
  ad::Tape tape;
  EntropyTerms terms = entropy_loss(constant_assignment(tape, dist), zeta);
  return EntropyLossValue{terms.token.value().item(), terms.codebook.value().item(), terms.combined.value().item(),
                          zeta};
}

// ---------------------------------------------------------------------------
// Exhaustive oracle

ExactEntropy oracle_full_entropy(const Tensor& u, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("oracle_full_entropy: temperature must be positive");
  if (u.rank() < 1) throw ShapeError("oracle_full_entropy: expected (..., d)");
  const std::size_t d = u.shape().back();
  if (d > kOracleMaxChannels) {
    throw std::invalid_argument("oracle_full_entropy: d=" + std::to_string(d) + " exceeds the enumeration bound " +
                                std::to_string(kOracleMaxChannels) + "; use the grouped entropy path");
  }
  const std::size_t positions = u.size() / d;
  const std::size_t codes = std::size_t{1} << d;
  const double inv_tau = 1.0 / tau;

  std::vector<double> logits(codes), probs(codes), avg(codes, 0.0);
  std::vector<double> terms(codes);
  std::vector<double> token_per_position(positions);
  for (std::size_t p = 0; p < positions; ++p) {
    const double* up = &u[p * d];
    // Build <u, c> for all codes, appending one channel per pass as the
    // next-lower bit so channel 0 ends up as the MSB.
    logits[0] = 0.0;
    for (std::size_t t = 0, len = 1; t < d; ++t, len *= 2) {
      for (std::size_t m = len; m-- > 0;) {
        const double base = logits[m];
        logits[2 * m] = base + (-up[t]);
        logits[2 * m + 1] = base + up[t];
      }
    }
    for (auto& l : logits) l *= inv_tau;
    const double mx = *std::max_element(logits.begin(), logits.end());
    for (std::size_t m = 0; m < codes; ++m) terms[m] = std::exp(logits[m] - mx);
    const double z = reduce_sum(terms);
    const double log_z = std::log(z);
    for (std::size_t m = 0; m < codes; ++m) {
      probs[m] = terms[m] / z;
      terms[m] = probs[m] * ((logits[m] - mx) - log_z);
    }
    token_per_position[p] = -reduce_sum(terms);
    for (std::size_t m = 0; m < codes; ++m) avg[m] += probs[m];
  }
  ExactEntropy out;
  out.token = reduce_sum(token_per_position) / static_cast<double>(positions);
  for (std::size_t m = 0; m < codes; ++m) {
    const double a = avg[m] / static_cast<double>(positions);
    terms[m] = a > 0.0 ? a * std::log(a) : 0.0;
  }
  out.codebook = -reduce_sum(terms);
  return out;
}

BufferFootprint entropy_buffer_footprint(const QuantConfig& cfg, std::size_t h, std::size_t w, std::size_t element_size) {
  const double positions = static_cast<double>(h) * static_cast<double>(w) * static_cast<double>(element_size);
  BufferFootprint f;
  f.grouped_bytes = positions * static_cast<double>(cfg.groups) * std::ldexp(1.0, static_cast<int>(cfg.group_channels));
  f.ungrouped_bytes = positions * std::ldexp(1.0, static_cast<int>(cfg.groups * cfg.group_channels));
  return f;
}

}  // namespace gqtok
