#pragma once

// Reverse-mode automatic differentiation over dense Tensors.
//
// A Tape records every operation as a Node holding its output value and a
// closure that pushes the output gradient to its inputs. Nodes are appended
// in evaluation order, so the node list is already a topological order and
// backward() simply walks it in reverse.

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gqtok/tensor.hpp"

namespace gqtok::ad {

enum class OpKind {
  Variable,
  Constant,
  Parameter,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  MatMul,
  Conv2d,
  Conv2dTranspose,
  Relu,
  LeakyRelu,
  Tanh,
  Exp,
  Log,
  Softmax,
  LogSoftmax,
  Sigmoid,
  LogSigmoid,
  Sum,
  SumAxis,
  Mean,
  MeanAxis,
  Reshape,
  Concat,
  Slice,
  Broadcast,
  StopGradient,
};

std::string_view op_name(OpKind kind);

/// A named trainable array and its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Pushes a node's output gradient into its inputs' gradient sinks.
  using BackwardFn = std::function<void(Tape& tape, const Tensor& out_value, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Tensor value);
  Var constant(Tensor value);
  /// Binds a parameter; gradients flow back to it via accumulate_parameter_grads().
  Var parameter(Parameter& p);

  /// Populates gradients of every node on a differentiable path to `loss`.
  void backward(Var loss);

  /// Adds each bound parameter's node gradient into Parameter::grad.
  void accumulate_parameter_grads();

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }

  /// Gradient of a node after backward(); zeros when the node received none.
  Tensor gradient(Var v) const;

  /// Used by op implementations. Records a node whose value was computed
  /// eagerly; checks the value is finite.
  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

  /// Gradient accumulator of an input node, or nullptr when it needs none.
  Tensor* grad_sink(std::size_t id);

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // stable references across appends
  std::vector<std::pair<std::size_t, Parameter*>> bindings_;
};

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

// Element-wise binary ops require equal shapes; use broadcast() first.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);

/// (M, K) x (K, N) -> (M, N).
Var matmul(Var a, Var b);

/// NHWC input, weights (KH, KW, Cin, Cout), optional bias (Cout).
Var conv2d(Var x, Var weight, std::optional<Var> bias, ConvOptions opt = {});
/// Transposed convolution; output extent (in - 1) * stride - 2 * pad + k.
Var conv2d_transpose(Var x, Var weight, std::optional<Var> bias, ConvOptions opt = {});

Var relu(Var x);
Var leaky_relu(Var x, double slope = 0.2);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);
Var sigmoid(Var x);
Var log_sigmoid(Var x);
/// x * sigmoid(x), composed from primitives.
Var swish(Var x);

// Normalize over the last axis.
Var softmax(Var x);
Var log_softmax(Var x);

Var sum(Var x);
Var sum(Var x, std::size_t axis);
Var mean(Var x);
Var mean(Var x, std::size_t axis);

Var reshape(Var x, Shape shape);
/// Concatenates along the last (channel) axis.
Var concat(const std::vector<Var>& xs);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
/// Numpy-style broadcast with right-aligned extents.
Var broadcast(Var x, Shape shape);

/// Value identity that contributes no gradient.
Var stop_gradient(Var x);

}  // namespace gqtok::ad
