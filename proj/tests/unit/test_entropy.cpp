#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "finite_difference.hpp"
#include "gqtok/entropy.hpp"
#include "gqtok/rng.hpp"
#include "lfq_reference.hpp"

using namespace gqtok;
using gqtok::testing::numeric_gradient;
using gqtok::testing::relative_error;

namespace {

constexpr double kLn2 = std::numbers::ln2;

QuantConfig cfg(std::size_t g, std::size_t dp) {
  QuantConfig c;
  c.groups = g;
  c.group_channels = dp;
  return c;
}

GroupedLatent grouped(const Tensor& u, std::size_t g) {
  return group_reshape(u, cfg(g, u.shape().back() / g));
}

// Independent sigma(2x/tau): the +1 vs -1 two-way softmax.
double bit_marginal(double x, double tau) { return 1.0 / (1.0 + std::exp(-2.0 * x / tau)); }

}  // namespace

TEST_CASE("soft assignment of a zero latent is uniform") {
  GroupDistribution one = soft_assignment(GroupedLatent{Tensor(Shape{1, 1, 1, 1})}, 1.0);
  CHECK(one.probs.vec() == std::vector<double>{0.5, 0.5});
  GroupDistribution two = soft_assignment(GroupedLatent{Tensor(Shape{1, 1, 1, 2})}, 1.0);
  CHECK(two.probs.vec() == std::vector<double>(4, 0.25));
}

TEST_CASE("soft assignment marginal of the first bit matches enumeration") {
  // Enumerate the 4 codes of {-1,1}^2 by hand for x = [1, 0], tau = 1.
  double z = 0.0, plus = 0.0;
  for (int a : {-1, 1})
    for (int b : {-1, 1}) {
      const double w = std::exp(1.0 * a + 0.0 * b);
      z += w;
      if (a == 1) plus += w;
    }
  const double expected = plus / z;
  CHECK(expected == doctest::Approx(bit_marginal(1.0, 1.0)).epsilon(1e-14));
  GroupDistribution d = soft_assignment(GroupedLatent{Tensor(Shape{1, 1, 1, 2}, std::vector<double>{1.0, 0.0})}, 1.0);
  // codes 2 = [+1,-1] and 3 = [+1,+1] have bit 0 set.
  CHECK(d.probs[2] + d.probs[3] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("soft assignment rows are normalized and the temperature must be positive") {
  Rng rng(3);
  GroupDistribution d = soft_assignment(GroupedLatent{rng.normal_tensor({3, 2, 2, 4}, 2.0)}, 0.7);
  const std::size_t k = 16;
  for (std::size_t r = 0; r < d.probs.size() / k; ++r) {
    double s = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      CHECK(d.probs[r * k + m] >= 0.0);
      s += d.probs[r * k + m];
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
  CHECK_THROWS_AS(soft_assignment(GroupedLatent{Tensor(Shape{1, 1, 1, 2})}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(soft_assignment(GroupedLatent{Tensor(Shape{1, 1, 1, 2})}, -1.0), std::invalid_argument);
}

TEST_CASE("token entropy limits") {
  GroupDistribution flat = soft_assignment(GroupedLatent{Tensor(Shape{2, 2, 3, 2})}, 1.0);
  CHECK(token_entropy(flat) == doctest::Approx(3 * 2 * kLn2).epsilon(1e-14));
  Rng rng(5);
  Tensor big = rng.normal_tensor({2, 2, 2, 3});
  for (auto& v : big.data()) v = (v >= 0 ? 1.0 : -1.0) * 40.0;
  CHECK(token_entropy(soft_assignment(GroupedLatent{big}, 1.0)) < 1e-30);
}

TEST_CASE("grouped token entropy equals the full-codebook enumeration") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 40);
    for (std::size_t d : {4u, 6u, 12u}) {
      const Tensor u = rng.normal_tensor({2, 2, d});
      const double tau = rng.uniform(0.5, 2.0);
      const ExactEntropy exact = oracle_full_entropy(u, tau);
      for (std::size_t g = 1; g <= d; ++g) {
        if (d % g != 0) continue;
        CAPTURE(d);
        CAPTURE(g);
        CHECK(std::abs(token_entropy(soft_assignment(grouped(u, g), tau)) - exact.token) <= 1e-9);
      }
    }
  }
}

TEST_CASE("codebook entropy degenerations") {
  Rng rng(6);
  const Tensor one = rng.normal_tensor({1, 1, 6});
  GroupDistribution d1 = soft_assignment(grouped(one, 2), 1.0);
  CHECK(codebook_entropy(d1) == token_entropy(d1));

  Tensor tiled(Shape{3, 2, 6});
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t c = 0; c < 6; ++c) tiled[p * 6 + c] = one[c];
  CHECK(codebook_entropy(soft_assignment(grouped(tiled, 2), 1.0)) ==
        doctest::Approx(codebook_entropy(d1)).epsilon(1e-13));
}

TEST_CASE("grouped codebook entropy upper-bounds the exact one, with equality at g = 1") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 900);
    const std::size_t d = 2 + rng.below(9);
    const std::size_t h = 1 + rng.below(4), w = 1 + rng.below(4);
    const Tensor u = rng.normal_tensor({h, w, d}, 1.5);
    const ExactEntropy exact = oracle_full_entropy(u, 1.0);
    for (std::size_t g = 1; g <= d; ++g) {
      if (d % g != 0) continue;
      const double grouped_cb = codebook_entropy(soft_assignment(grouped(u, g), 1.0));
      CHECK(grouped_cb >= exact.codebook - 1e-12);
      if (g == 1) CHECK(std::abs(grouped_cb - exact.codebook) <= 1e-9);
    }
  }
}

TEST_CASE("entropy_loss combination") {
  Rng rng(7);
  GroupDistribution d = soft_assignment(GroupedLatent{rng.normal_tensor({2, 3, 2, 3})}, 1.0);
  EntropyLossValue z0 = entropy_loss(d, 0.0);
  CHECK(z0.combined == z0.token_entropy);

  GroupDistribution flat = soft_assignment(GroupedLatent{Tensor(Shape{2, 2, 2, 3})}, 1.0);
  for (double zeta : {0.0, 0.5, 1.0, 2.0}) {
    CHECK(entropy_loss(flat, zeta).combined == doctest::Approx((1.0 - zeta) * 6 * kLn2).epsilon(1e-13));
  }

  // Recompute H(q) and H(mean q) per group directly from the probabilities.
  const double zeta = 0.8;
  EntropyLossValue v = entropy_loss(d, zeta);
  const std::size_t positions = 6, groups = 2, k = 8;
  double token = 0.0, cb = 0.0;
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<double> avg(k, 0.0);
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t m = 0; m < k; ++m) {
        const double q = d.probs[(p * groups + g) * k + m];
        token -= q * std::log(q) / positions;
        avg[m] += q / positions;
      }
    for (double a : avg) cb -= a * std::log(a);
  }
  CHECK(v.token_entropy == doctest::Approx(token).epsilon(1e-12));
  CHECK(v.codebook_entropy == doctest::Approx(cb).epsilon(1e-12));
  CHECK(v.combined == doctest::Approx(token - zeta * cb).epsilon(1e-12));
  CHECK_THROWS_AS(entropy_loss(d, -0.1), std::invalid_argument);
}

TEST_CASE("oracle_full_entropy") {
  CHECK(oracle_full_entropy(Tensor(Shape{1, 1}), 1.0).token == doctest::Approx(kLn2).epsilon(1e-15));

  Rng rng(8);
  const Tensor u2 = rng.normal_tensor({3, 2});
  const ExactEntropy e2 = oracle_full_entropy(u2, 1.0);
  GroupDistribution g1 = soft_assignment(group_reshape(u2.reshaped({3, 1, 2}), cfg(1, 2)), 1.0);
  CHECK(std::abs(e2.token - token_entropy(g1)) <= 1e-12);
  CHECK(std::abs(e2.codebook - codebook_entropy(g1)) <= 1e-12);

  const Tensor u8 = rng.normal_tensor({2, 3, 8});
  const double t1 = token_entropy(soft_assignment(grouped(u8, 1), 1.0));
  double prev_cb = -1.0;
  for (std::size_t g : {1u, 2u, 4u, 8u}) {
    GroupDistribution dg = soft_assignment(grouped(u8, g), 1.0);
    CHECK(std::abs(token_entropy(dg) - t1) <= 1e-12);
    const double cb = codebook_entropy(dg);
    CHECK(cb >= prev_cb - 1e-12);
    prev_cb = cb;
  }
  CHECK_THROWS_AS(oracle_full_entropy(Tensor(Shape{1, 21}), 1.0), std::invalid_argument);
}

TEST_CASE("g = d per-bit distribution equals the sigmoid marginals of the full enumeration") {
  Rng rng(31);
  const Tensor u = rng.normal_tensor({1, 2, 5});
  const double tau = 0.8;
  GroupDistribution bits = soft_assignment(grouped(u, 5), tau);
  for (std::size_t i = 0; i < u.size(); ++i) {
    CHECK(std::abs(bits.probs[2 * i + 1] - bit_marginal(u[i], tau)) <= 1e-12);
  }
}

TEST_CASE("g = 1 entropy values are bit-identical to a direct LFQ implementation") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 1234);
    const std::size_t d = 1 + rng.below(8);
    const Tensor u = rng.normal_tensor({3, 2, d});
    const auto ref = gqtok::testing::lfq_reference(u.vec(), d, 1.0, 0.7);
    EntropyLossValue v = entropy_loss(soft_assignment(grouped(u, 1), 1.0), 0.7);
    CHECK(v.token_entropy == ref.token_entropy);
    CHECK(v.codebook_entropy == ref.codebook_entropy);
    CHECK(v.combined == ref.combined);
  }
}

TEST_CASE("entropy gradients w.r.t. latents match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 77);
    const Tensor u = rng.normal_tensor({2, 2, 2, 3});
    for (int which = 0; which < 2; ++which) {
      auto value = [which](const Tensor& x) {
        ad::Tape tape;
        SoftAssignment q = soft_assignment(tape.constant(x), 1.0);
        return (which == 0 ? token_entropy(q) : codebook_entropy(q)).value().item();
      };
      ad::Tape tape;
      ad::Var v = tape.variable(u);
      SoftAssignment q = soft_assignment(v, 1.0);
      tape.backward(which == 0 ? token_entropy(q) : codebook_entropy(q));
      CHECK(relative_error(tape.gradient(v), numeric_gradient(value, u, 1e-3)) <= 1e-4);
    }
  }
}

TEST_CASE("grouped path never allocates a 2^(g*d') buffer") {
  const QuantConfig c = cfg(3, 8);
  const std::size_t h = 4, w = 4;
  Rng rng(2);
  const Tensor u = rng.normal_tensor({h, w, c.channels()});
  AllocationProbe probe;
  ad::Tape tape;
  ad::Var v = tape.variable(u.reshaped({h, w, c.groups, c.group_channels}));
  EntropyTerms t = entropy_loss(soft_assignment(v, 1.0), 1.0);
  tape.backward(t.combined);
  const std::size_t bound = h * w * c.groups * (std::size_t{1} << c.group_channels);
  CHECK(probe.peak_elements() <= bound);
  CHECK(probe.peak_elements() < (std::size_t{1} << (c.groups * c.group_channels)));
}

TEST_CASE("the entropy path keeps probabilities and their logs as separate code-axis buffers") {
  const std::size_t positions = 5, groups = 2, k = 16;
  AllocationProbe probe;
  ad::Tape tape;
  Rng rng(1);
  SoftAssignment q = soft_assignment(tape.constant(rng.normal_tensor({positions, groups, 4})), 1.0);
  (void)token_entropy(q);
  CHECK(probe.peak_elements() == positions * groups * k);
  CHECK(q.probs.value().size() == positions * groups * k);
  CHECK(q.log_probs.value().size() == positions * groups * k);
  CHECK(q.probs.value().data().data() != q.log_probs.value().data().data());
  CHECK(kLiveCodeBuffers == 2);
}

TEST_CASE("entropy buffer footprint arithmetic") {
  const BufferFootprint lfq24 = entropy_buffer_footprint(cfg(1, 24), 16, 16, 4);
  CHECK(lfq24.grouped_bytes == 16.0 * 16.0 * 16777216.0 * 4.0);
  CHECK(lfq24.grouped_bytes == lfq24.ungrouped_bytes);
  const BufferFootprint gq = entropy_buffer_footprint(cfg(3, 8), 16, 16, 4);
  CHECK(gq.grouped_bytes == 16.0 * 16.0 * 3.0 * 256.0 * 4.0);
  CHECK(gq.grouped_bytes == 786432.0);
  CHECK(gq.ungrouped_bytes == 16.0 * 16.0 * 16777216.0 * 4.0);
  CHECK(entropy_buffer_footprint(cfg(1, 1), 5, 3, 4).grouped_bytes == 2.0 * 5 * 3 * 4);
}
