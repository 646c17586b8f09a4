#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cflow/tensor.hpp"

namespace cflow {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; invalidated when the
// tape is cleared (backward() clears it).
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id, std::uint64_t generation) : tape_(tape), id_(id), generation_(generation) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
  std::uint64_t generation_ = 0;
};

// Records differentiable operations in execution order. Node ids are a
// topological order, so backward() walks ids in reverse.
//
// A tape is single-threaded. Separate tapes share nothing and can be used
// from separate threads.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A leaf that never receives a gradient.
  Var constant(Tensor value);

  // A leaf whose gradient is accumulated into `param.grad()` by backward().
  // `param` must outlive the backward() call and have requires_grad set.
  Var watch(Tensor& param);

  // Populates gradients of every watched tensor, then clears the tape.
  void backward(Var loss);

  void clear();
  std::size_t size() const noexcept { return nodes_.size(); }

  // Op-implementation interface.
  Var record(Tensor value, std::vector<std::size_t> inputs, const char* op, BackwardFn backward);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::span<const double> grad(std::size_t id) const { return nodes_[id].grad; }
  // Lazily allocated, zero-initialised gradient buffer for an input node.
  std::span<double> grad_buffer(std::size_t id);
  const Var& check(const Var& v) const;

 private:
  friend class Var;

  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* sink = nullptr;
    std::vector<double> grad;
    bool needs_grad = false;
    const char* op = "";
  };

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
};

Var matmul(const Var& a, const Var& b);

// Equal shapes, or one side a single-element tensor broadcast over the other.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);

Var exp(const Var& a);
// Throws DomainError on any non-positive input.
Var log(const Var& a);
Var tanh(const Var& a);
// x for x > 0, e^x - 1 otherwise.
Var elu(const Var& a);

enum class ElementwiseOp { add, mul, exp, log, tanh, elu };
Var elementwise(ElementwiseOp op, std::span<const Var> operands);

Var sum(const Var& a);
Var mean(const Var& a);
// [rows, cols] -> [rows]
Var row_sum(const Var& a);
// [rows, cols] + [cols] broadcast over rows.
Var add_bias(const Var& a, const Var& bias);
// [rows, cols] -> [rows, columns.size()], gathering the listed columns.
Var gather_cols(const Var& a, std::vector<std::size_t> columns);
Var concat_cols(const Var& a, const Var& b);

// Mean over the batch of -log softmax(logits)[label], computed with
// max-subtraction. Throws IndexError for labels outside [0, classes).
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// Plain (untaped) kernels shared with inference code.
namespace kernels {

// out[m,n] = a[m,k] * b[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// out[m,n] = a[m,k] * b[k,n] + bias[n]
Tensor affine(const Tensor& a, const Tensor& weight, const Tensor& bias);
void elu_inplace(Tensor& t);

}  // namespace kernels

}  // namespace cflow
