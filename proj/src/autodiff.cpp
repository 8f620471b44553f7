#include "gqtok/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gqtok/parallel.hpp"

namespace gqtok::ad {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Variable: return "variable";
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Conv2dTranspose: return "conv2d_transpose";
    case OpKind::Relu: return "relu";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::LogSigmoid: return "log_sigmoid";
    case OpKind::Sum: return "sum";
    case OpKind::SumAxis: return "sum_axis";
    case OpKind::Mean: return "mean";
    case OpKind::MeanAxis: return "mean_axis";
    case OpKind::Reshape: return "reshape";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::StopGradient: return "stop_gradient";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  const std::size_t id = nodes_.size();
  if (!value.all_finite()) {
    throw NumericError("op " + std::string(op_name(kind)) + " (node " + std::to_string(id) +
                       ") produced a non-finite value");
  }
  bool needs_grad = false;
  for (auto in : inputs) needs_grad = needs_grad || nodes_.at(in).requires_grad;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), Tensor(), std::move(backward), needs_grad});
  return Var(this, id);
}

Var Tape::variable(Tensor value) {
  Var v = record(OpKind::Variable, {}, std::move(value), nullptr);
  nodes_.back().requires_grad = true;
  return v;
}

Var Tape::constant(Tensor value) { return record(OpKind::Constant, {}, std::move(value), nullptr); }

Var Tape::parameter(Parameter& p) {
  Var v = record(OpKind::Parameter, {}, p.value, nullptr);
  nodes_.back().requires_grad = true;
  bindings_.emplace_back(v.id(), &p);
  return v;
}

Tensor* Tape::grad_sink(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  const Node& root = nodes_.at(loss.id());
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(root.value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  if (!root.requires_grad) return;

  std::vector<char> reachable(loss.id() + 1, 0);
  reachable[loss.id()] = 1;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (!reachable[id]) continue;
    for (auto in : nodes_[id].inputs) {
      if (nodes_[in].requires_grad) reachable[in] = 1;
    }
  }

  nodes_[loss.id()].grad = Tensor(root.value.shape(), 1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (!reachable[id]) continue;
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    if (n.backward) n.backward(*this, n.value, n.grad);
  }
}

void Tape::accumulate_parameter_grads() {
  for (auto& [id, p] : bindings_) {
    const Tensor& g = nodes_.at(id).grad;
    if (g.empty()) continue;
    if (p->grad.shape() != p->value.shape()) p->zero_grad();
    auto dst = p->grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

Tensor Tape::gradient(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) throw ShapeError::mismatch(op, a.shape(), b.shape());
}

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands belong to different tapes");
}

template <class F>
Var unary(OpKind kind, Var x, F&& f, Tape::BackwardFn bw) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return x.tape()->record(kind, {x.id()}, std::move(out), std::move(bw));
}

// Splits a shape at `axis` into (outer, extent, inner) for strided loops.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i < axis) r.outer *= s[i];
    else if (i == axis) r.extent = s[i];
    else r.inner *= s[i];
  }
  return r;
}

// Left-to-right sum, Kahan-compensated beyond 2^16 terms.
class Accumulator {
 public:
  explicit Accumulator(std::size_t terms) : compensated_(terms > (std::size_t{1} << 16)) {}
  void add(double v) {
    if (!compensated_) {
      sum_ += v;
      return;
    }
    const double y = v - c_;
    const double t = sum_ + y;
    c_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }

 private:
  bool compensated_;
  double sum_ = 0.0;
  double c_ = 0.0;
};

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

// ---------------------------------------------------------------------------
// Element-wise arithmetic

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(OpKind::Add, {ia, ib}, std::move(out), [ia, ib](Tape& t, const Tensor&, const Tensor& g) {
    for (auto id : {ia, ib}) {
      if (Tensor* s = t.grad_sink(id)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
      }
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(OpKind::Sub, {ia, ib}, std::move(out), [ia, ib](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* s = t.grad_sink(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
    }
    if (Tensor* s = t.grad_sink(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(OpKind::Mul, {ia, ib}, std::move(out), [ia, ib](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    if (Tensor* s = t.grad_sink(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * y[i];
    }
    if (Tensor* s = t.grad_sink(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * x[i];
    }
  });
}

Var scale(Var x, double factor) {
  const auto ix = x.id();
  return unary(OpKind::Scale, x, [factor](double v) { return v * factor; },
               [ix, factor](Tape& t, const Tensor&, const Tensor& g) {
                 if (Tensor* s = t.grad_sink(ix)) {
                   for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * factor;
                 }
               });
}

Var add_scalar(Var x, double offset) {
  const auto ix = x.id();
  return unary(OpKind::AddScalar, x, [offset](double v) { return v + offset; },
               [ix](Tape& t, const Tensor&, const Tensor& g) {
                 if (Tensor* s = t.grad_sink(ix)) {
                   for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
                 }
               });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) throw ShapeError::mismatch("matmul", sa, sb);
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += x[i * k + p] * y[p * n + j];
      out[i * n + j] = acc;
    }
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(OpKind::MatMul, {ia, ib}, std::move(out),
                          [ia, ib, m, k, n](Tape& t, const Tensor&, const Tensor& g) {
                            const Tensor& x = t.value(ia);
                            const Tensor& y = t.value(ib);
                            if (Tensor* s = t.grad_sink(ia)) {
                              for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t p = 0; p < k; ++p) {
                                  double acc = 0.0;
                                  for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * y[p * n + j];
                                  (*s)[i * k + p] += acc;
                                }
                            }
                            if (Tensor* s = t.grad_sink(ib)) {
                              for (std::size_t p = 0; p < k; ++p)
                                for (std::size_t j = 0; j < n; ++j) {
                                  double acc = 0.0;
                                  for (std::size_t i = 0; i < m; ++i) acc += x[i * k + p] * g[i * n + j];
                                  (*s)[p * n + j] += acc;
                                }
                            }
                          });
}

namespace {

struct ConvGeometry {
  std::size_t n, h, w, cin;       // input
  std::size_t kh, kw, cout;       // kernel
  std::size_t oh, ow;             // output
  std::size_t stride, pad;
};

void check_conv_operands(const char* op, Var x, Var weight, const std::optional<Var>& bias) {
  require_same_tape(x, weight);
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 4 || sw.size() != 4 || sx[3] != sw[2]) throw ShapeError::mismatch(op, sx, sw);
  if (bias) {
    require_same_tape(x, *bias);
    if (bias->shape() != Shape{sw[3]}) throw ShapeError::mismatch(op, sw, bias->shape());
  }
}

// Visits every (input pixel, kernel tap, output pixel) triple of a strided
// convolution for sample n, with out = in * stride + tap - pad in each axis.
// `body(in_offset, w_offset, out_offset)` receives element offsets of the
// channel vectors.
template <class F>
void for_each_tap_forward(const ConvGeometry& g, std::size_t n, F&& body) {
  for (std::size_t oy = 0; oy < g.oh; ++oy) {
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      const std::size_t out_off = ((n * g.oh + oy) * g.ow + ox) * g.cout;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
          if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
          const std::size_t in_off = ((n * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          const std::size_t w_off = (ky * g.kw + kx) * g.cin * g.cout;
          body(in_off, w_off, out_off);
        }
      }
    }
  }
}

// out[o] += sum_c in[c] * w[c, o]
inline void gemv_accumulate(const double* in, const double* w, double* out, std::size_t cin, std::size_t cout) {
  for (std::size_t c = 0; c < cin; ++c) {
    const double v = in[c];
    const double* row = w + c * cout;
    for (std::size_t o = 0; o < cout; ++o) out[o] += v * row[o];
  }
}

// in[c] += sum_o w[c, o] * g[o]
inline void gemv_transpose_accumulate(const double* g, const double* w, double* in, std::size_t cin, std::size_t cout) {
  for (std::size_t c = 0; c < cin; ++c) {
    const double* row = w + c * cout;
    double acc = 0.0;
    for (std::size_t o = 0; o < cout; ++o) acc += row[o] * g[o];
    in[c] += acc;
  }
}

// w[c, o] += in[c] * g[o]
inline void outer_accumulate(const double* in, const double* g, double* w, std::size_t cin, std::size_t cout) {
  for (std::size_t c = 0; c < cin; ++c) {
    const double v = in[c];
    double* row = w + c * cout;
    for (std::size_t o = 0; o < cout; ++o) row[o] += v * g[o];
  }
}

// dw[tap, ci, co] += in[ci] * g[co] over every (input, output) pixel pair of
// a tap.
void accumulate_weight_grad(const ConvGeometry& geo, const Tensor& large, const Tensor& small, double* dw) {
  // Parallel over kernel taps keeps each dw row owned by one worker and the
  // (n, y, x) summation order fixed.
  parallel_for(geo.kh * geo.kw, [&](std::size_t tap) {
    const std::size_t ky = tap / geo.kw, kx = tap % geo.kw;
    double* dst = dw + tap * geo.cin * geo.cout;
    for (std::size_t n = 0; n < geo.n; ++n) {
      for (std::size_t oy = 0; oy < geo.oh; ++oy) {
        const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.pad);
        if (iy < 0 || iy >= static_cast<long>(geo.h)) continue;
        for (std::size_t ox = 0; ox < geo.ow; ++ox) {
          const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.pad);
          if (ix < 0 || ix >= static_cast<long>(geo.w)) continue;
          const std::size_t l_off = ((n * geo.h + static_cast<std::size_t>(iy)) * geo.w + static_cast<std::size_t>(ix)) * geo.cin;
          const std::size_t s_off = ((n * geo.oh + oy) * geo.ow + ox) * geo.cout;
          outer_accumulate(&large[l_off], &small[s_off], dst, geo.cin, geo.cout);
        }
      }
    }
  });
}

void accumulate_bias_grad(const Tensor& g, std::size_t channels, Tensor& db) {
  const std::size_t pixels = g.size() / channels;
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t c = 0; c < channels; ++c) db[c] += g[p * channels + c];
}

}  // namespace

Var conv2d(Var x, Var weight, std::optional<Var> bias, ConvOptions opt) {
  check_conv_operands("conv2d", x, weight, bias);
  if (opt.stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx[1] + 2 * opt.pad < sw[0] || sx[2] + 2 * opt.pad < sw[1]) throw ShapeError::mismatch("conv2d", sx, sw);
  ConvGeometry geo{sx[0], sx[1], sx[2], sx[3], sw[0], sw[1], sw[3],
                   (sx[1] + 2 * opt.pad - sw[0]) / opt.stride + 1,
                   (sx[2] + 2 * opt.pad - sw[1]) / opt.stride + 1,
                   opt.stride, opt.pad};
  const Tensor& in = x.value();
  const Tensor& w = weight.value();
  Tensor out(Shape{geo.n, geo.oh, geo.ow, geo.cout});
  if (bias) {
    const Tensor& b = bias->value();
    for (std::size_t p = 0; p < out.size() / geo.cout; ++p)
      for (std::size_t c = 0; c < geo.cout; ++c) out[p * geo.cout + c] = b[c];
  }
  parallel_for(geo.n, [&](std::size_t n) {
    for_each_tap_forward(geo, n, [&](std::size_t i, std::size_t k, std::size_t o) {
      gemv_accumulate(&in[i], &w[k], &out[o], geo.cin, geo.cout);
    });
  });
  std::vector<std::size_t> inputs{x.id(), weight.id()};
  if (bias) inputs.push_back(bias->id());
  const auto ix = x.id(), iw = weight.id();
  const std::optional<std::size_t> ib = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
  return x.tape()->record(OpKind::Conv2d, std::move(inputs), std::move(out),
                          [geo, ix, iw, ib](Tape& t, const Tensor&, const Tensor& g) {
                            const Tensor& in = t.value(ix);
                            const Tensor& w = t.value(iw);
                            if (Tensor* dx = t.grad_sink(ix)) {
                              parallel_for(geo.n, [&](std::size_t n) {
                                for_each_tap_forward(geo, n, [&](std::size_t i, std::size_t k, std::size_t o) {
                                  gemv_transpose_accumulate(&g[o], &w[k], &(*dx)[i], geo.cin, geo.cout);
                                });
                              });
                            }
                            if (Tensor* dw = t.grad_sink(iw)) accumulate_weight_grad(geo, in, g, dw->data().data());
                            if (ib) {
                              if (Tensor* db = t.grad_sink(*ib)) accumulate_bias_grad(g, geo.cout, *db);
                            }
                          });
}

Var conv2d_transpose(Var x, Var weight, std::optional<Var> bias, ConvOptions opt) {
  check_conv_operands("conv2d_transpose", x, weight, bias);
  if (opt.stride == 0) throw std::invalid_argument("conv2d_transpose: stride must be positive");
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  const long oh = static_cast<long>((sx[1] - 1) * opt.stride + sw[0]) - 2 * static_cast<long>(opt.pad);
  const long ow = static_cast<long>((sx[2] - 1) * opt.stride + sw[1]) - 2 * static_cast<long>(opt.pad);
  if (oh <= 0 || ow <= 0) throw ShapeError::mismatch("conv2d_transpose", sx, sw);
  // Geometry of the equivalent forward conv: "input" is the large output
  // side with cin = Cout, "output" is x with cout = Cin. Weight rows are
  // laid out (tap, Cin, Cout) so gemv roles swap below.
  const std::size_t cin = sw[2], cout = sw[3];
  ConvGeometry geo{sx[0], static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), cout, sw[0], sw[1], cin,
                   sx[1], sx[2], opt.stride, opt.pad};
  const Tensor& in = x.value();
  const Tensor& w = weight.value();
  Tensor out(Shape{geo.n, geo.h, geo.w, cout});
  if (bias) {
    const Tensor& b = bias->value();
    for (std::size_t p = 0; p < out.size() / cout; ++p)
      for (std::size_t c = 0; c < cout; ++c) out[p * cout + c] = b[c];
  }
  // large[l] += sum_ci small[ci] * w[ci, co]
  parallel_for(geo.n, [&](std::size_t n) {
    for_each_tap_forward(geo, n, [&](std::size_t l, std::size_t k, std::size_t s) {
      gemv_accumulate(&in[s], &w[k], &out[l], cin, cout);
    });
  });
  std::vector<std::size_t> inputs{x.id(), weight.id()};
  if (bias) inputs.push_back(bias->id());
  const auto ix = x.id(), iw = weight.id();
  const std::optional<std::size_t> ib = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
  return x.tape()->record(
      OpKind::Conv2dTranspose, std::move(inputs), std::move(out),
      [geo, ix, iw, ib, cin, cout](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& in = t.value(ix);
        const Tensor& w = t.value(iw);
        if (Tensor* dx = t.grad_sink(ix)) {
          parallel_for(geo.n, [&](std::size_t n) {
            for_each_tap_forward(geo, n, [&](std::size_t l, std::size_t k, std::size_t s) {
              gemv_transpose_accumulate(&g[l], &w[k], &(*dx)[s], cin, cout);
            });
          });
        }
        if (Tensor* dw = t.grad_sink(iw)) {
          // dw[tap, ci, co] += x[s, ci] * g[l, co]; here "large" = g with
          // cin_geo = cout and "small" = x with cout_geo = cin.
          double* dst = dw->data().data();
          parallel_for(geo.kh * geo.kw, [&](std::size_t tap) {
            const std::size_t ky = tap / geo.kw, kx = tap % geo.kw;
            double* row = dst + tap * cin * cout;
            for (std::size_t n = 0; n < geo.n; ++n) {
              for (std::size_t sy = 0; sy < geo.oh; ++sy) {
                const long ly = static_cast<long>(sy * geo.stride + ky) - static_cast<long>(geo.pad);
                if (ly < 0 || ly >= static_cast<long>(geo.h)) continue;
                for (std::size_t sx_ = 0; sx_ < geo.ow; ++sx_) {
                  const long lx = static_cast<long>(sx_ * geo.stride + kx) - static_cast<long>(geo.pad);
                  if (lx < 0 || lx >= static_cast<long>(geo.w)) continue;
                  const std::size_t l_off =
                      ((n * geo.h + static_cast<std::size_t>(ly)) * geo.w + static_cast<std::size_t>(lx)) * cout;
                  const std::size_t s_off = ((n * geo.oh + sy) * geo.ow + sx_) * cin;
                  outer_accumulate(&in[s_off], &g[l_off], row, cin, cout);
                }
              }
            }
          });
        }
        if (ib) {
          if (Tensor* db = t.grad_sink(*ib)) accumulate_bias_grad(g, cout, *db);
        }
      });
}

// ---------------------------------------------------------------------------
// Non-linearities

Var relu(Var x) {
  const auto ix = x.id();
  return unary(OpKind::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
               [ix](Tape& t, const Tensor&, const Tensor& g) {
                 if (Tensor* s = t.grad_sink(ix)) {
                   const Tensor& in = t.value(ix);
                   for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += in[i] > 0.0 ? g[i] : 0.0;
                 }
               });
}

Var leaky_relu(Var x, double slope) {
  const auto ix = x.id();
  return unary(OpKind::LeakyRelu, x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [ix, slope](Tape& t, const Tensor&, const Tensor& g) {
                 if (Tensor* s = t.grad_sink(ix)) {
                   const Tensor& in = t.value(ix);
                   for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += in[i] > 0.0 ? g[i] : slope * g[i];
                 }
               });
}

Var tanh(Var x) {
  const auto ix = x.id();
  return unary(OpKind::Tanh, x, [](double v) { return std::tanh(v); },
               [ix](Tape& t, const Tensor& y, const Tensor& g) {
                 if (Tensor* s = t.grad_sink(ix)) {
                   for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * (1.0 - y[i] * y[i]);
                 }
               });
}

Var exp(Var x) {
  const auto ix = x.id();
  return unary(OpKind::Exp, x, [](double v) { return std::exp(v); },
               [ix](Tape& t, const Tensor& y, const Tensor& g) {
                 if (Tensor* s = t.grad_sink(ix)) {
                   for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * y[i];
                 }
               });
}

Var log(Var x) {
  const auto ix = x.id();
  return unary(OpKind::Log, x, [](double v) { return std::log(v); },
               [ix](Tape& t, const Tensor&, const Tensor& g) {
                 if (Tensor* s = t.grad_sink(ix)) {
                   const Tensor& in = t.value(ix);
                   for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] / in[i];
                 }
               });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var x) {
  const auto ix = x.id();
  return unary(OpKind::Sigmoid, x, stable_sigmoid, [ix](Tape& t, const Tensor& y, const Tensor& g) {
    if (Tensor* s = t.grad_sink(ix)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * y[i] * (1.0 - y[i]);
    }
  });
}

Var log_sigmoid(Var x) {
  const auto ix = x.id();
  return unary(OpKind::LogSigmoid, x,
               [](double v) { return std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v))); },
               [ix](Tape& t, const Tensor&, const Tensor& g) {
                 if (Tensor* s = t.grad_sink(ix)) {
                   const Tensor& in = t.value(ix);
                   for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * stable_sigmoid(-in[i]);
                 }
               });
}

Var swish(Var x) { return mul(x, sigmoid(x)); }

Var softmax(Var x) {
  const Tensor& in = x.value();
  const std::size_t k = last_dim(in.shape());
  const std::size_t rows = in.size() / k;
  Tensor out(in.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &in[r * k];
    const double m = *std::max_element(row, row + k);
    Accumulator acc(k);
    for (std::size_t j = 0; j < k; ++j) {
      out[r * k + j] = std::exp(row[j] - m);
      acc.add(out[r * k + j]);
    }
    const double s = acc.value();
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= s;
  }
  const auto ix = x.id();
  return x.tape()->record(OpKind::Softmax, {ix}, std::move(out), [ix, k, rows](Tape& t, const Tensor& p, const Tensor& g) {
    if (Tensor* s = t.grad_sink(ix)) {
      for (std::size_t r = 0; r < rows; ++r) {
        Accumulator dot(k);
        for (std::size_t j = 0; j < k; ++j) dot.add(g[r * k + j] * p[r * k + j]);
        for (std::size_t j = 0; j < k; ++j) (*s)[r * k + j] += p[r * k + j] * (g[r * k + j] - dot.value());
      }
    }
  });
}

Var log_softmax(Var x) {
  const Tensor& in = x.value();
  const std::size_t k = last_dim(in.shape());
  const std::size_t rows = in.size() / k;
  Tensor out(in.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &in[r * k];
    const double m = *std::max_element(row, row + k);
    Accumulator acc(k);
    for (std::size_t j = 0; j < k; ++j) acc.add(std::exp(row[j] - m));
    const double log_s = std::log(acc.value());
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = (row[j] - m) - log_s;
  }
  const auto ix = x.id();
  return x.tape()->record(OpKind::LogSoftmax, {ix}, std::move(out),
                          [ix, k, rows](Tape& t, const Tensor& lp, const Tensor& g) {
                            if (Tensor* s = t.grad_sink(ix)) {
                              for (std::size_t r = 0; r < rows; ++r) {
                                Accumulator total(k);
                                for (std::size_t j = 0; j < k; ++j) total.add(g[r * k + j]);
                                for (std::size_t j = 0; j < k; ++j)
                                  (*s)[r * k + j] += g[r * k + j] - std::exp(lp[r * k + j]) * total.value();
                              }
                            }
                          });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var x) {
  const double s = reduce_sum(x.value().data());
  const auto ix = x.id();
  return x.tape()->record(OpKind::Sum, {ix}, Tensor::scalar(s), [ix](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* d = t.grad_sink(ix)) {
      for (auto& v : d->data()) v += g[0];
    }
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  const double s = reduce_sum(x.value().data()) / n;
  const auto ix = x.id();
  return x.tape()->record(OpKind::Mean, {ix}, Tensor::scalar(s), [ix, n](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* d = t.grad_sink(ix)) {
      const double v = g[0] / n;
      for (auto& e : d->data()) e += v;
    }
  });
}

namespace {
Var reduce_axis(Var x, std::size_t axis, bool average) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("sum: axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  const AxisSplit sp = split_at(s, axis);
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<long>(axis));
  const Tensor& in = x.value();
  Tensor out(out_shape);
  const double n = static_cast<double>(sp.extent);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      Accumulator acc(sp.extent);
      for (std::size_t e = 0; e < sp.extent; ++e) acc.add(in[(o * sp.extent + e) * sp.inner + i]);
      out[o * sp.inner + i] = average ? acc.value() / n : acc.value();
    }
  }
  const auto ix = x.id();
  return x.tape()->record(average ? OpKind::MeanAxis : OpKind::SumAxis, {ix}, std::move(out),
                          [ix, sp, average, n](Tape& t, const Tensor&, const Tensor& g) {
                            if (Tensor* d = t.grad_sink(ix)) {
                              for (std::size_t o = 0; o < sp.outer; ++o)
                                for (std::size_t e = 0; e < sp.extent; ++e)
                                  for (std::size_t i = 0; i < sp.inner; ++i) {
                                    const double v = g[o * sp.inner + i];
                                    (*d)[(o * sp.extent + e) * sp.inner + i] += average ? v / n : v;
                                  }
                            }
                          });
}
}  // namespace

Var sum(Var x, std::size_t axis) { return reduce_axis(x, axis, false); }
Var mean(Var x, std::size_t axis) { return reduce_axis(x, axis, true); }

// ---------------------------------------------------------------------------
// Shape manipulation

Var reshape(Var x, Shape shape) {
  if (shape_numel(shape) != x.value().size()) throw ShapeError::mismatch("reshape", x.shape(), shape);
  const auto ix = x.id();
  return x.tape()->record(OpKind::Reshape, {ix}, x.value().reshaped(std::move(shape)),
                          [ix](Tape& t, const Tensor&, const Tensor& g) {
                            if (Tensor* d = t.grad_sink(ix)) {
                              for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
                            }
                          });
}

Var concat(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat: no operands");
  const Shape& s0 = xs.front().shape();
  if (s0.empty()) throw ShapeError("concat: scalar operands");
  std::size_t total = 0;
  std::vector<std::size_t> widths, ids;
  for (const auto& v : xs) {
    require_same_tape(xs.front(), v);
    const Shape& s = v.shape();
    if (s.size() != s0.size() || !std::equal(s.begin(), s.end() - 1, s0.begin())) {
      throw ShapeError::mismatch("concat", s0, s);
    }
    widths.push_back(s.back());
    ids.push_back(v.id());
    total += s.back();
  }
  Shape out_shape = s0;
  out_shape.back() = total;
  const std::size_t rows = shape_numel(s0) / s0.back();
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor& in = xs[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(&in[r * widths[k]], widths[k], &out[r * total + offset]);
    offset += widths[k];
  }
  return xs.front().tape()->record(OpKind::Concat, ids, std::move(out),
                                   [ids, widths, rows, total](Tape& t, const Tensor&, const Tensor& g) {
                                     std::size_t offset = 0;
                                     for (std::size_t k = 0; k < ids.size(); ++k) {
                                       if (Tensor* d = t.grad_sink(ids[k])) {
                                         for (std::size_t r = 0; r < rows; ++r)
                                           for (std::size_t c = 0; c < widths[k]; ++c)
                                             (*d)[r * widths[k] + c] += g[r * total + offset + c];
                                       }
                                       offset += widths[k];
                                     }
                                   });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for " + shape_string(s));
  }
  const AxisSplit sp = split_at(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t len = end - begin;
  const Tensor& in = x.value();
  Tensor out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(&in[(o * sp.extent + begin) * sp.inner], len * sp.inner, &out[o * len * sp.inner]);
  const auto ix = x.id();
  return x.tape()->record(OpKind::Slice, {ix}, std::move(out), [ix, sp, begin, len](Tape& t, const Tensor&, const Tensor& g) {
    if (Tensor* d = t.grad_sink(ix)) {
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < len * sp.inner; ++e)
          (*d)[(o * sp.extent + begin) * sp.inner + e] += g[o * len * sp.inner + e];
    }
  });
}

Var broadcast(Var x, Shape shape) {
  const Shape& s = x.shape();
  if (s.size() > shape.size()) throw ShapeError::mismatch("broadcast", s, shape);
  const std::size_t lead = shape.size() - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != 1 && s[i] != shape[lead + i]) throw ShapeError::mismatch("broadcast", s, shape);
  }
  // Source strides with zero stride on broadcast axes.
  std::vector<std::size_t> src_stride(shape.size(), 0);
  {
    std::size_t stride = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
      src_stride[lead + i] = s[i] == 1 ? 0 : stride;
      stride *= s[i];
    }
  }
  const std::size_t total = shape_numel(shape);
  std::vector<std::size_t> src_index(total);
  {
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
      std::size_t off = 0;
      for (std::size_t a = 0; a < shape.size(); ++a) off += idx[a] * src_stride[a];
      src_index[flat] = off;
      for (std::size_t a = shape.size(); a-- > 0;) {
        if (++idx[a] < shape[a]) break;
        idx[a] = 0;
      }
    }
  }
  const Tensor& in = x.value();
  Tensor out(shape);
  for (std::size_t i = 0; i < total; ++i) out[i] = in[src_index[i]];
  const auto ix = x.id();
  return x.tape()->record(OpKind::Broadcast, {ix}, std::move(out),
                          [ix, src_index = std::move(src_index)](Tape& t, const Tensor&, const Tensor& g) {
                            if (Tensor* d = t.grad_sink(ix)) {
                              for (std::size_t i = 0; i < g.size(); ++i) (*d)[src_index[i]] += g[i];
                            }
                          });
}

Var stop_gradient(Var x) {
  Var out = x.tape()->record(OpKind::StopGradient, {}, x.value(), nullptr);
  return out;
}

}  // namespace gqtok::ad
