#include "dvae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dvae/error.hpp"

namespace dvae::ad {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Matmul: return "matmul";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Negate: return "negate";
    case OpKind::Abs: return "abs";
    case OpKind::Clamp: return "clamp";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::BroadcastAddRowvec: return "broadcast_add_rowvec";
    case OpKind::BroadcastMulRowvec: return "broadcast_mul_rowvec";
    case OpKind::Reshape: return "reshape";
    case OpKind::Transpose: return "transpose";
    case OpKind::Slice: return "slice";
    case OpKind::Concat: return "concat";
    case OpKind::RowSum: return "row_sum";
    case OpKind::LogSumExpRows: return "logsumexp_rows";
    case OpKind::Custom: return "custom";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape_) throw Error("ad: use of an unbound Var");
  return tape_->node(id_).value;
}

const Tensor& Gradients::of(Var v) const {
  const std::size_t id = v.id();
  if (id < present_.size() && present_[id]) return grads_[id];
  // Cached per id so the returned reference stays valid.
  auto [it, inserted] = zeros_.try_emplace(id, v.shape(), 0.0);
  return it->second;
}

bool Gradients::has(Var v) const { return v.id() < present_.size() && present_[v.id()]; }

Var Tape::constant(Tensor value) {
  TapeNode node;
  node.kind = OpKind::Constant;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
  TapeNode node;
  node.kind = OpKind::Leaf;
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, std::vector<Var> inputs, Tensor value, BackwardFn backward, std::string label) {
  if (consumed_) throw Error("ad: tape already consumed by backward()");
  TapeNode node;
  node.kind = kind;
  node.label = std::move(label);
  node.backward = std::move(backward);
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw Error("ad: input from a different tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (!value.all_finite()) {
    std::string shapes;
    for (const Var& in : inputs) shapes += shape_string(in.shape()) + " ";
    throw NumericError(std::string("ad: ") + (node.label.empty() ? op_name(kind) : node.label.c_str()) +
                       " produced a non-finite value (inputs " + shapes + ")");
  }
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var root) {
  if (consumed_) throw Error("ad: tape already consumed by backward()");
  if (&root.tape() != this) throw Error("ad: root belongs to a different tape");
  if (root.value().size() != 1) {
    throw ShapeError("ad: backward() needs a scalar root, got " + shape_string(root.shape()));
  }
  consumed_ = true;
  Gradients out;
  out.grads_.resize(nodes_.size());
  out.present_.assign(nodes_.size(), false);
  out.grads_[root.id()] = Tensor(root.shape(), 1.0);
  out.present_[root.id()] = true;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    if (!out.present_[i]) continue;
    const TapeNode& node = nodes_[i];
    if (node.inputs.empty() || !node.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t in : node.inputs) {
      in_values.push_back(&nodes_[in].value);
      if (nodes_[in].requires_grad) {
        if (!out.present_[in]) {
          out.grads_[in] = Tensor(nodes_[in].value.shape(), 0.0);
          out.present_[in] = true;
        }
        in_grads.push_back(&out.grads_[in]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    // Inputs may repeat (x * x); the closures accumulate, so aliasing is harmless.
    node.backward(out.grads_[i], node.value, in_values, in_grads);
  }
  return out;
}

namespace {

[[noreturn]] void shape_fail(const char* op, const Var& a, const Var& b) {
  throw ShapeError(std::string("ad: ") + op + " shape mismatch " + shape_string(a.shape()) + " vs " +
                   shape_string(b.shape()));
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_fail(op, a, b);
}

void require_matrix(const char* op, const Var& a) {
  if (a.shape().size() != 2) {
    throw ShapeError(std::string("ad: ") + op + " needs a matrix, got " + shape_string(a.shape()));
  }
}

void require_rowvec(const char* op, const Var& a, const Var& v) {
  require_matrix(op, a);
  const Shape& s = v.shape();
  const bool ok = (s.size() == 2 && s[0] == 1 && s[1] == a.shape()[1]) || (s.size() == 1 && s[0] == a.shape()[1]);
  if (!ok) shape_fail(op, a, v);
}

template <class F, class D>
Var unary(OpKind kind, Var a, F f, D df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape().record(kind, {a}, std::move(y),
                         [df](const Tensor& g, const Tensor& out, auto in, auto grads) {
                           if (!grads[0]) return;
                           const Tensor& x = *in[0];
                           Tensor& gx = *grads[0];
                           for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], out[i]);
                         });
}

}  // namespace

Var add(Var a, Var b) {
  require_same("add", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return a.tape().record(OpKind::Add, {a, b}, std::move(y), [](const Tensor& g, const Tensor&, auto, auto grads) {
    for (Tensor* gr : grads)
      if (gr)
        for (std::size_t i = 0; i < g.size(); ++i) (*gr)[i] += g[i];
  });
}

Var sub(Var a, Var b) {
  require_same("sub", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return a.tape().record(OpKind::Sub, {a, b}, std::move(y), [](const Tensor& g, const Tensor&, auto, auto grads) {
    if (grads[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
    if (grads[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  require_same("mul", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.tape().record(OpKind::Mul, {a, b}, std::move(y), [](const Tensor& g, const Tensor&, auto in, auto grads) {
    if (grads[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * (*in[1])[i];
    if (grads[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * (*in[0])[i];
  });
}

Var div(Var a, Var b) {
  require_same("div", a, b);
  const Tensor& den = b.value();
  for (std::size_t i = 0; i < den.size(); ++i) {
    if (den[i] == 0.0) throw NumericError("ad: div by zero, shapes " + shape_string(a.shape()) + " / " + shape_string(b.shape()));
  }
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= den[i];
  return a.tape().record(OpKind::Div, {a, b}, std::move(y), [](const Tensor& g, const Tensor& out, auto in, auto grads) {
    const Tensor& den = *in[1];
    if (grads[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] / den[i];
    if (grads[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] -= g[i] * out[i] / den[i];
  });
}

Var matmul(Var a, Var b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a.shape()[1] != b.shape()[0]) shape_fail("matmul", a, b);
  Tensor y = dvae::matmul(a.value(), b.value());
  return a.tape().record(OpKind::Matmul, {a, b}, std::move(y), [](const Tensor& g, const Tensor&, auto in, auto grads) {
    if (grads[0]) {
      Tensor ga = dvae::matmul_nt(g, *in[1]);
      for (std::size_t i = 0; i < ga.size(); ++i) (*grads[0])[i] += ga[i];
    }
    if (grads[1]) {
      Tensor gb = dvae::matmul_tn(*in[0], g);
      for (std::size_t i = 0; i < gb.size(); ++i) (*grads[1])[i] += gb[i];
    }
  });
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return a.tape().record(OpKind::Sum, {a}, Tensor::scalar(acc), [](const Tensor& g, const Tensor&, auto, auto grads) {
    if (!grads[0]) return;
    const double gv = g[0];
    for (double& v : grads[0]->data()) v += gv;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("ad: mean of an empty tensor");
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return a.tape().record(OpKind::Mean, {a}, Tensor::scalar(acc / double(n)),
                         [n](const Tensor& g, const Tensor&, auto, auto grads) {
                           if (!grads[0]) return;
                           const double gv = g[0] / double(n);
                           for (double& v : grads[0]->data()) v += gv;
                         });
}

Var exp(Var a) {
  return unary(OpKind::Exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw NumericError("ad: log of non-positive value " + std::to_string(v) + " in " + shape_string(a.shape()));
  }
  return unary(OpKind::Log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary(OpKind::Tanh, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(OpKind::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return unary(OpKind::LeakyRelu, a, [slope](double x) { return x > 0.0 ? x : slope * x; },
               [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var softplus(Var a) {
  return unary(OpKind::Softplus, a,
               [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
               [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var sigmoid(Var a) {
  return unary(OpKind::Sigmoid, a,
               [](double x) {
                 if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                 const double e = std::exp(x);
                 return e / (1.0 + e);
               },
               [](double, double y) { return y * (1.0 - y); });
}

Var square(Var a) {
  return unary(OpKind::Square, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw NumericError("ad: sqrt of non-positive value " + std::to_string(v) + " in " + shape_string(a.shape()));
  }
  return unary(OpKind::Sqrt, a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var negate(Var a) {
  return unary(OpKind::Negate, a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var abs(Var a) {
  return unary(OpKind::Abs, a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var clamp(Var a, double lo, double hi) {
  return unary(OpKind::Clamp, a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var scale(Var a, double factor) {
  return unary(OpKind::Scale, a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(OpKind::AddScalar, a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var broadcast_add_rowvec(Var a, Var v) {
  require_rowvec("broadcast_add_rowvec", a, v);
  Tensor y = a.value();
  const std::size_t r = y.rows(), c = y.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] += v.value()[j];
  return a.tape().record(OpKind::BroadcastAddRowvec, {a, v}, std::move(y),
                         [r, c](const Tensor& g, const Tensor&, auto, auto grads) {
                           if (grads[0])
                             for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                           if (grads[1])
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) (*grads[1])[j] += g[i * c + j];
                         });
}

Var broadcast_mul_rowvec(Var a, Var v) {
  require_rowvec("broadcast_mul_rowvec", a, v);
  Tensor y = a.value();
  const std::size_t r = y.rows(), c = y.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] *= v.value()[j];
  return a.tape().record(OpKind::BroadcastMulRowvec, {a, v}, std::move(y),
                         [r, c](const Tensor& g, const Tensor&, auto in, auto grads) {
                           const Tensor& x = *in[0];
                           const Tensor& w = *in[1];
                           if (grads[0])
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) (*grads[0])[i * c + j] += g[i * c + j] * w[j];
                           if (grads[1])
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) (*grads[1])[j] += g[i * c + j] * x[i * c + j];
                         });
}

Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return a.tape().record(OpKind::Reshape, {a}, std::move(y), [](const Tensor& g, const Tensor&, auto, auto grads) {
    if (!grads[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
  });
}

Var transpose(Var a) {
  require_matrix("transpose", a);
  Tensor y = a.value().transposed();
  return a.tape().record(OpKind::Transpose, {a}, std::move(y), [](const Tensor& g, const Tensor&, auto, auto grads) {
    if (!grads[0]) return;
    Tensor gt = g.transposed();
    for (std::size_t i = 0; i < gt.size(); ++i) (*grads[0])[i] += gt[i];
  });
}

Var slice(Var a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  require_matrix("slice", a);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (r0 > r1 || r1 > rows || c0 > c1 || c1 > cols) {
    throw ShapeError("ad: slice [" + std::to_string(r0) + "," + std::to_string(r1) + ")x[" + std::to_string(c0) +
                     "," + std::to_string(c1) + ") out of " + shape_string(a.shape()));
  }
  const std::size_t nr = r1 - r0, nc = c1 - c0;
  Tensor y(Shape{nr, nc});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nc; ++j) y[i * nc + j] = x[(r0 + i) * cols + c0 + j];
  return a.tape().record(OpKind::Slice, {a}, std::move(y),
                         [r0, c0, nr, nc, cols](const Tensor& g, const Tensor&, auto, auto grads) {
                           if (!grads[0]) return;
                           for (std::size_t i = 0; i < nr; ++i)
                             for (std::size_t j = 0; j < nc; ++j) (*grads[0])[(r0 + i) * cols + c0 + j] += g[i * nc + j];
                         });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("ad: concat of nothing");
  if (axis > 1) throw ShapeError("ad: concat axis must be 0 or 1");
  for (const Var& p : parts) require_matrix("concat", p);
  const std::size_t fixed = parts[0].shape()[1 - axis];
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.shape()[1 - axis] != fixed) shape_fail("concat", parts[0], p);
    total += p.shape()[axis];
  }
  const std::size_t rows = axis == 0 ? total : fixed;
  const std::size_t cols = axis == 0 ? fixed : total;
  Tensor y(Shape{rows, cols});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const Tensor& x = p.value();
    const std::size_t pr = x.rows(), pc = x.cols();
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t r = axis == 0 ? off + i : i;
        const std::size_t c = axis == 0 ? j : off + j;
        y[r * cols + c] = x[i * pc + j];
      }
    off += p.shape()[axis];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(
      OpKind::Concat, std::move(inputs), std::move(y),
      [offsets, axis, cols](const Tensor& g, const Tensor&, auto in, auto grads) {
        for (std::size_t k = 0; k < grads.size(); ++k) {
          if (!grads[k]) continue;
          const std::size_t pr = in[k]->rows(), pc = in[k]->cols();
          for (std::size_t i = 0; i < pr; ++i)
            for (std::size_t j = 0; j < pc; ++j) {
              const std::size_t r = axis == 0 ? offsets[k] + i : i;
              const std::size_t c = axis == 0 ? j : offsets[k] + j;
              (*grads[k])[i * pc + j] += g[r * cols + c];
            }
        }
      });
}

Var row_sum(Var a) {
  require_matrix("row_sum", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor y(Shape{r, 1});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += x[i * c + j];
    y[i] = acc;
  }
  return a.tape().record(OpKind::RowSum, {a}, std::move(y), [r, c](const Tensor& g, const Tensor&, auto, auto grads) {
    if (!grads[0]) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*grads[0])[i * c + j] += g[i];
  });
}

Var logsumexp_rows(Var a) {
  require_matrix("logsumexp_rows", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (c == 0) throw ShapeError("ad: logsumexp_rows over zero columns");
  Tensor y(Shape{r, 1});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < r; ++i) y[i] = log_sum_exp(x.row_span(i));
  return a.tape().record(OpKind::LogSumExpRows, {a}, std::move(y),
                         [r, c](const Tensor& g, const Tensor& out, auto in, auto grads) {
                           if (!grads[0]) return;
                           const Tensor& x = *in[0];
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j)
                               (*grads[0])[i * c + j] += g[i] * std::exp(x[i * c + j] - out[i]);
                         });
}

}  // namespace dvae::ad
