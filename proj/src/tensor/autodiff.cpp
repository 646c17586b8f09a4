#include "cflow/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "cflow/errors.hpp"

namespace cflow {

const Tensor& Var::value() const { return tape().check(*this).tape_->value(id_); }

Tape& Var::tape() const {
  if (tape_ == nullptr) {
    throw StateError("use of an unbound Var");
  }
  return *tape_;
}

const Var& Tape::check(const Var& v) const {
  if (v.tape_ != this || v.generation_ != generation_ || v.id_ >= nodes_.size()) {
    throw StateError("Var does not belong to the current contents of this tape");
  }
  return v;
}

Var Tape::constant(Tensor value) {
  value.check_finite("constant");
  Node node;
  node.value = std::move(value);
  node.op = "constant";
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::watch(Tensor& param) {
  if (!param.requires_grad()) {
    throw ContractError("watch() needs a tensor with requires_grad set");
  }
  param.check_finite("watched parameter");
  Node node;
  node.value = param;
  node.value.set_requires_grad(false);
  node.sink = &param;
  node.needs_grad = true;
  node.op = "parameter";
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, const char* op, BackwardFn backward) {
  value.check_finite(op);
  Node node;
  node.value = std::move(value);
  node.op = op;
  for (std::size_t in : inputs) {
    node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
  }
  node.inputs = std::move(inputs);
  if (node.needs_grad) {
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1, generation_);
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) {
    node.grad.assign(node.value.size(), 0.0);
  }
  return node.grad;
}

void Tape::backward(Var loss) {
  check(loss);
  if (value(loss.id()).size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(value(loss.id()).shape()));
  }
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty() || !node.needs_grad) {
      continue;
    }
    if (node.backward) {
      node.backward(*this, id);
    }
    if (node.sink != nullptr) {
      node.sink->accumulate_grad(node.grad);
    }
  }
  clear();
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<RowMatrix> map(double* p, std::size_t rows, std::size_t cols) {
  return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

Eigen::Map<const RowMatrix> cmap(const double* p, std::size_t rows, std::size_t cols) {
  return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = a.tape();
  if (&b.tape() != &t) {
    throw ContractError("operands recorded on different tapes");
  }
  t.check(a);
  t.check(b);
  return t;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " needs a rank-2 operand, got " + shape_string(t.shape()));
  }
}

bool is_single(const Tensor& t) { return t.size() == 1; }

// Shared driver for unary elementwise ops: derivative(x, y) gives dy/dx.
template <typename F, typename D>
Var unary(const Var& a, const char* op, F f, D derivative) {
  Tape& t = a.tape();
  t.check(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = f(x[i]);
  }
  const std::size_t ia = a.id();
  return t.record(std::move(y), {ia}, op, [ia, derivative](Tape& tape, std::size_t self) {
    const Tensor& xv = tape.value(ia);
    const Tensor& yv = tape.value(self);
    auto g = tape.grad(self);
    auto ga = tape.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * derivative(xv[i], yv[i]);
    }
  });
}

// Equal-shape or single-element broadcast binary op. df_da/df_db take (a, b).
template <typename F, typename DA, typename DB>
Var binary(const Var& a, const Var& b, const char* op, F f, DA da, DB db) {
  Tape& t = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Shape out_shape;
  if (x.shape() == y.shape()) {
    out_shape = x.shape();
  } else if (is_single(y)) {
    out_shape = x.shape();
  } else if (is_single(x)) {
    out_shape = y.shape();
  } else {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(x.shape()) + " and " +
                         shape_string(y.shape()));
  }
  Tensor out(out_shape);
  const bool xs = x.size() == 1 && out.size() != 1;
  const bool ys = y.size() == 1 && out.size() != 1;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = f(x[xs ? 0 : i], y[ys ? 0 : i]);
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return t.record(std::move(out), {ia, ib}, op, [ia, ib, xs, ys, da, db](Tape& tape, std::size_t self) {
    const Tensor& xv = tape.value(ia);
    const Tensor& yv = tape.value(ib);
    auto g = tape.grad(self);
    if (tape.needs_grad(ia)) {
      auto ga = tape.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[xs ? 0 : i] += g[i] * da(xv[xs ? 0 : i], yv[ys ? 0 : i]);
      }
    }
    if (tape.needs_grad(ib)) {
      auto gb = tape.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[ys ? 0 : i] += g[i] * db(xv[xs ? 0 : i], yv[ys ? 0 : i]);
      }
    }
  });
}

}  // namespace

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(Shape{m, n});
  map(out.data().data(), m, n).noalias() = cmap(a.data().data(), m, k) * cmap(b.data().data(), k, n);
  return out;
}

Tensor affine(const Tensor& a, const Tensor& weight, const Tensor& bias) {
  Tensor out = matmul(a, weight);
  if (bias.size() != out.cols()) {
    throw DimensionError("affine: bias of shape " + shape_string(bias.shape()) + " for output " +
                         shape_string(out.shape()));
  }
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] += bias[j];
    }
  }
  return out;
}

void elu_inplace(Tensor& t) {
  for (double& v : t.data()) {
    v = v > 0.0 ? v : std::expm1(v);
  }
}

}  // namespace kernels

Var matmul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  Tensor out = kernels::matmul(a.value(), b.value());
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return t.record(std::move(out), {ia, ib}, "matmul", [ia, ib](Tape& tape, std::size_t self) {
    const Tensor& av = tape.value(ia);
    const Tensor& bv = tape.value(ib);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    const double* g = tape.grad(self).data();
    const double* pa = av.data().data();
    const double* pb = bv.data().data();
    if (tape.needs_grad(ia)) {
      map(tape.grad_buffer(ia).data(), m, k).noalias() += cmap(g, m, n) * cmap(pb, k, n).transpose();
    }
    if (tape.needs_grad(ib)) {
      map(tape.grad_buffer(ib).data(), k, n).noalias() += cmap(pa, m, k).transpose() * cmap(g, m, n);
    }
  });
}

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(const Var& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(
      a, "add_scalar", [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var exp(const Var& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) {
      throw DomainError("log of non-positive value " + std::to_string(v));
    }
  }
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var elu(const Var& a) {
  return unary(
      a, "elu", [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Var elementwise(ElementwiseOp op, std::span<const Var> operands) {
  const std::size_t arity = (op == ElementwiseOp::add || op == ElementwiseOp::mul) ? 2 : 1;
  if (operands.size() != arity) {
    throw ContractError("elementwise op expects " + std::to_string(arity) + " operand(s), got " +
                        std::to_string(operands.size()));
  }
  switch (op) {
    case ElementwiseOp::add:
      return add(operands[0], operands[1]);
    case ElementwiseOp::mul:
      return mul(operands[0], operands[1]);
    case ElementwiseOp::exp:
      return exp(operands[0]);
    case ElementwiseOp::log:
      return log(operands[0]);
    case ElementwiseOp::tanh:
      return tanh(operands[0]);
    case ElementwiseOp::elu:
      return elu(operands[0]);
  }
  throw ContractError("unknown elementwise op");
}

Var sum(const Var& a) {
  Tape& t = a.tape();
  t.check(a);
  double total = 0.0;
  for (double v : a.value().data()) {
    total += v;
  }
  const std::size_t ia = a.id();
  return t.record(Tensor::scalar(total), {ia}, "sum", [ia](Tape& tape, std::size_t self) {
    const double g = tape.grad(self)[0];
    for (double& v : tape.grad_buffer(ia)) {
      v += g;
    }
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var row_sum(const Var& a) {
  Tape& t = a.tape();
  t.check(a);
  const Tensor& x = a.value();
  require_rank2(x, "row_sum");
  Tensor out(Shape{x.rows()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double acc = 0.0;
    for (double v : x.row(r)) {
      acc += v;
    }
    out[r] = acc;
  }
  const std::size_t ia = a.id();
  const std::size_t cols = x.cols();
  return t.record(std::move(out), {ia}, "row_sum", [ia, cols](Tape& tape, std::size_t self) {
    auto g = tape.grad(self);
    auto ga = tape.grad_buffer(ia);
    for (std::size_t r = 0; r < g.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        ga[r * cols + c] += g[r];
      }
    }
  });
}

Var add_bias(const Var& a, const Var& bias) {
  Tape& t = common_tape(a, bias);
  const Tensor& x = a.value();
  const Tensor& b = bias.value();
  require_rank2(x, "add_bias");
  if (b.size() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(b.shape()) + " for " + shape_string(x.shape()));
  }
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      row[c] += b[c];
    }
  }
  const std::size_t ia = a.id();
  const std::size_t ib = bias.id();
  const std::size_t cols = x.cols();
  return t.record(std::move(out), {ia, ib}, "add_bias", [ia, ib, cols](Tape& tape, std::size_t self) {
    auto g = tape.grad(self);
    if (tape.needs_grad(ia)) {
      auto ga = tape.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
      }
    }
    if (tape.needs_grad(ib)) {
      auto gb = tape.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[i % cols] += g[i];
      }
    }
  });
}

Var gather_cols(const Var& a, std::vector<std::size_t> columns) {
  Tape& t = a.tape();
  t.check(a);
  const Tensor& x = a.value();
  require_rank2(x, "gather_cols");
  if (columns.empty()) {
    throw ContractError("gather_cols with no columns");
  }
  for (std::size_t c : columns) {
    if (c >= x.cols()) {
      throw IndexError("gather_cols: column " + std::to_string(c) + " of " + std::to_string(x.cols()));
    }
  }
  const std::size_t rows = x.rows(), in_cols = x.cols(), out_cols = columns.size();
  Tensor out(Shape{rows, out_cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < out_cols; ++j) {
      out(r, j) = x(r, columns[j]);
    }
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, "gather_cols",
                  [ia, rows, in_cols, cols = std::move(columns)](Tape& tape, std::size_t self) {
                    auto g = tape.grad(self);
                    auto ga = tape.grad_buffer(ia);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < cols.size(); ++j) {
                        ga[r * in_cols + cols[j]] += g[r * cols.size() + j];
                      }
                    }
                  });
}

Var concat_cols(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank2(x, "concat_cols");
  require_rank2(y, "concat_cols");
  if (x.rows() != y.rows()) {
    throw DimensionError("concat_cols: " + shape_string(x.shape()) + " and " + shape_string(y.shape()));
  }
  const std::size_t rows = x.rows(), ca = x.cols(), cb = y.cols();
  Tensor out(Shape{rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(x.row(r).begin(), x.row(r).end(), out.row(r).begin());
    std::copy(y.row(r).begin(), y.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(ca));
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return t.record(std::move(out), {ia, ib}, "concat_cols", [ia, ib, rows, ca, cb](Tape& tape, std::size_t self) {
    auto g = tape.grad(self);
    if (tape.needs_grad(ia)) {
      auto ga = tape.grad_buffer(ia);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < ca; ++c) {
          ga[r * ca + c] += g[r * (ca + cb) + c];
        }
      }
    }
    if (tape.needs_grad(ib)) {
      auto gb = tape.grad_buffer(ib);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cb; ++c) {
          gb[r * cb + c] += g[r * (ca + cb) + ca + c];
        }
      }
    }
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  Tape& t = logits.tape();
  t.check(logits);
  const Tensor& x = logits.value();
  require_rank2(x, "softmax_cross_entropy");
  const std::size_t batch = x.rows(), classes = x.cols();
  if (labels.size() != batch) {
    throw ContractError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                        std::to_string(batch));
  }
  std::vector<double> probs(batch * classes);
  double loss = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw IndexError("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
    const auto row = x.row(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[r * classes + c] = std::exp(row[c] - peak);
      denom += probs[r * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) {
      probs[r * classes + c] /= denom;
    }
    loss += -(row[static_cast<std::size_t>(label)] - peak - std::log(denom));
  }
  loss /= static_cast<double>(batch);
  const std::size_t ia = logits.id();
  std::vector<int> owned(labels.begin(), labels.end());
  return t.record(Tensor::scalar(loss), {ia}, "softmax_cross_entropy",
                  [ia, classes, probs = std::move(probs), owned = std::move(owned)](Tape& tape, std::size_t self) {
                    const double g = tape.grad(self)[0] / static_cast<double>(owned.size());
                    auto ga = tape.grad_buffer(ia);
                    for (std::size_t r = 0; r < owned.size(); ++r) {
                      for (std::size_t c = 0; c < classes; ++c) {
                        const double onehot = static_cast<int>(c) == owned[r] ? 1.0 : 0.0;
                        ga[r * classes + c] += g * (probs[r * classes + c] - onehot);
                      }
                    }
                  });
}

}  // namespace cflow
