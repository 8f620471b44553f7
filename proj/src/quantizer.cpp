#include "gqtok/quantizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gqtok {

void QuantConfig::validate() const {
  if (groups < 1) throw std::invalid_argument("QuantConfig: groups must be >= 1");
  if (group_channels < 1) throw std::invalid_argument("QuantConfig: group_channels must be >= 1");
  if (group_channels > kMaxGroupChannels) {
    throw std::invalid_argument("QuantConfig: group_channels " + std::to_string(group_channels) + " exceeds " +
                                std::to_string(kMaxGroupChannels));
  }
}

TokenGrid::TokenGrid(std::size_t h, std::size_t w, std::size_t g, std::size_t dprime)
    : height(h), width(w), groups(g), group_channels(dprime), indices(h * w * g, 0) {}

void TokenGrid::validate() const {
  if (indices.size() != height * width * groups) {
    throw std::invalid_argument("TokenGrid: holds " + std::to_string(indices.size()) + " indices, expected " +
                                std::to_string(height * width * groups));
  }
  if (group_channels < 1 || group_channels > 31) throw std::invalid_argument("TokenGrid: bad group_channels");
  const std::uint64_t limit = std::uint64_t{1} << group_channels;
  for (auto v : indices) {
    if (v >= limit) {
      throw std::invalid_argument("TokenGrid: index " + std::to_string(v) + " out of range for d'=" +
                                  std::to_string(group_channels));
    }
  }
}

double sign_value(double x, TieRule tie) noexcept {
  if (x > 0.0) return 1.0;
  if (x < 0.0) return -1.0;
  return tie == TieRule::PositiveOnZero ? 1.0 : -1.0;
}

std::uint32_t code_to_index(std::span<const int> code) {
  if (code.empty() || code.size() > 31) throw std::invalid_argument("code_to_index: code length must be in [1, 31]");
  std::uint32_t index = 0;
  for (int bit : code) {
    if (bit != 1 && bit != -1) throw std::invalid_argument("code_to_index: entries must be -1 or +1");
    index = (index << 1) | (bit == 1 ? 1u : 0u);
  }
  return index;
}

SignCode index_to_code(std::uint32_t index, std::size_t group_channels) {
  if (group_channels < 1 || group_channels > 31) {
    throw std::invalid_argument("index_to_code: group_channels must be in [1, 31]");
  }
  if (static_cast<std::uint64_t>(index) >= (std::uint64_t{1} << group_channels)) {
    throw std::out_of_range("index_to_code: index " + std::to_string(index) + " out of range for d'=" +
                            std::to_string(group_channels));
  }
  SignCode code(group_channels);
  for (std::size_t t = 0; t < group_channels; ++t) {
    const std::size_t shift = group_channels - 1 - t;
    code[t] = ((index >> shift) & 1u) ? 1 : -1;
  }
  return code;
}

GroupedLatent group_reshape(const Tensor& u, const QuantConfig& cfg) {
  cfg.validate();
  if (u.rank() != 3) throw ShapeError("group_reshape: expected (h, w, d), got " + shape_string(u.shape()));
  if (u.dim(2) != cfg.channels()) {
    throw ShapeError("group_reshape: latent has " + std::to_string(u.dim(2)) + " channels but g*d' = " +
                     std::to_string(cfg.groups) + "*" + std::to_string(cfg.group_channels));
  }
  return GroupedLatent{u.reshaped({u.dim(0), u.dim(1), cfg.groups, cfg.group_channels})};
}

Tensor ungroup(const GroupedLatent& x) {
  return x.values.reshaped({x.height(), x.width(), x.groups() * x.group_channels()});
}

Tensor sign_tensor(const Tensor& x, TieRule tie) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::isnan(x[i])) throw NumericError("sign_quantize: NaN at element " + std::to_string(i));
    out[i] = sign_value(x[i], tie);
  }
  return out;
}

namespace {
void fill_tokens(std::span<const double> signs, std::size_t dprime, std::vector<std::uint32_t>& out) {
  const std::size_t n = signs.size() / dprime;
  for (std::size_t r = 0; r < n; ++r) {
    std::uint32_t index = 0;
    for (std::size_t t = 0; t < dprime; ++t) index = (index << 1) | (signs[r * dprime + t] > 0.0 ? 1u : 0u);
    out[r] = index;
  }
}
}  // namespace

SignQuantized sign_quantize(const GroupedLatent& x, TieRule tie) {
  if (x.values.rank() != 4) throw ShapeError("sign_quantize: expected (h, w, g, d'), got " + shape_string(x.values.shape()));
  SignQuantized out{sign_tensor(x.values, tie), TokenGrid(x.height(), x.width(), x.groups(), x.group_channels())};
  fill_tokens(out.signs.data(), x.group_channels(), out.tokens.indices);
  return out;
}

std::vector<TokenGrid> tokens_from_signs(const Tensor& signs) {
  if (signs.rank() != 5) throw ShapeError("tokens_from_signs: expected (N, h, w, g, d'), got " + shape_string(signs.shape()));
  const std::size_t n = signs.dim(0), h = signs.dim(1), w = signs.dim(2), g = signs.dim(3), dp = signs.dim(4);
  const std::size_t per = h * w * g * dp;
  std::vector<TokenGrid> grids;
  grids.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    TokenGrid grid(h, w, g, dp);
    fill_tokens(signs.data().subspan(b * per, per), dp, grid.indices);
    grids.push_back(std::move(grid));
  }
  return grids;
}

Tensor signs_from_tokens(const TokenGrid& tokens) {
  tokens.validate();
  const std::size_t dp = tokens.group_channels;
  Tensor out(Shape{tokens.height, tokens.width, tokens.groups * dp});
  for (std::size_t r = 0; r < tokens.indices.size(); ++r) {
    const std::uint32_t index = tokens.indices[r];
    for (std::size_t t = 0; t < dp; ++t) out[r * dp + t] = ((index >> (dp - 1 - t)) & 1u) ? 1.0 : -1.0;
  }
  return out;
}

ad::Var straight_through(ad::Var u, const Tensor& signs) {
  if (u.shape() != signs.shape()) throw ShapeError::mismatch("straight_through", u.shape(), signs.shape());
  ad::Tape& tape = *u.tape();
  // u - sg(u) is exactly zero in value, so the sum is exactly `signs`.
  return ad::add(tape.constant(signs), ad::sub(u, ad::stop_gradient(u)));
}

ad::Var pre_activate(ad::Var u, const QuantConfig& cfg) {
  return cfg.pre_activation == PreActivation::Tanh ? ad::tanh(u) : u;
}

}  // namespace gqtok
