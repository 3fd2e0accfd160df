#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dvae/tensor.hpp"

namespace dvae::ad {

enum class OpKind : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Matmul,
  Sum,
  Mean,
  Exp,
  Log,
  Tanh,
  Relu,
  LeakyRelu,
  Softplus,
  Sigmoid,
  Square,
  Sqrt,
  Negate,
  Abs,
  Clamp,
  Scale,
  AddScalar,
  BroadcastAddRowvec,
  BroadcastMulRowvec,
  Reshape,
  Transpose,
  Slice,
  Concat,
  RowSum,
  LogSumExpRows,
  Custom,
};

const char* op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Accumulates d(root)/d(inputs) given d(root)/d(output). Entries of `grads` are null
/// for inputs that do not need a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, const Tensor& out_value,
                                      std::span<const Tensor* const> inputs,
                                      std::span<Tensor* const> grads)>;

struct TapeNode {
  OpKind kind = OpKind::Constant;
  std::string label;
  std::vector<std::size_t> inputs;
  Tensor value;
  BackwardFn backward;
  bool requires_grad = false;
};

/// Result of a backward pass: one gradient per node that lies on a path to the root.
class Gradients {
 public:
  /// Gradient of the root with respect to `v`; zeros when `v` does not influence the root.
  const Tensor& of(Var v) const;
  bool has(Var v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
  mutable std::map<std::size_t, Tensor> zeros_;
};

/// Records a single evaluation. Node ids follow creation order, which is a valid
/// topological order; backward walks it in reverse exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  /// Appends an op node. `label` is used in diagnostics for custom ops.
  Var record(OpKind kind, std::vector<Var> inputs, Tensor value, BackwardFn backward,
             std::string label = {});

  Gradients backward(Var root);

  const TapeNode& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<TapeNode> nodes_;
  bool consumed_ = false;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var matmul(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope = 0.2);
Var softplus(Var a);
Var sigmoid(Var a);
Var square(Var a);
Var sqrt(Var a);
Var negate(Var a);
Var abs(Var a);
/// Gradient passes only where lo < a < hi.
Var clamp(Var a, double lo, double hi);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
/// a: r x c, v: 1 x c (or length c); v is added to every row.
Var broadcast_add_rowvec(Var a, Var v);
Var broadcast_mul_rowvec(Var a, Var v);
Var reshape(Var a, Shape shape);
Var transpose(Var a);
/// Sub-block rows [r0, r1) x cols [c0, c1) of a matrix.
Var slice(Var a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1);
/// axis 0 stacks rows, axis 1 stacks columns.
Var concat(std::span<const Var> parts, std::size_t axis);
/// r x c -> r x 1
Var row_sum(Var a);
/// r x c -> r x 1, max-shifted.
Var logsumexp_rows(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return negate(a); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, Var a) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }
inline Var operator-(double c, Var a) { return add_scalar(negate(a), c); }

}  // namespace dvae::ad
