#pragma once

#include <cstddef>
#include <vector>

#include "cflow/autodiff.hpp"
#include "cflow/random.hpp"
#include "cflow/tensor.hpp"

namespace cflow {

// Records `param` on the tape: watched when trainable and requires_grad is
// set, otherwise as a constant copy.
Var bind(Tape& tape, Tensor& param, bool trainable);

// Affine layer y = x W + b with W [in, out] and b [out].
struct Dense {
  Tensor weight;
  Tensor bias;

  static Dense glorot(std::size_t in, std::size_t out, Rng& rng);
  static Dense zeros(std::size_t in, std::size_t out);

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

// Stack of Dense layers with ELU between them. The final layer is activated
// only when `activate_last` is set.
class Mlp {
 public:
  Mlp() = default;
  // widths = {in, hidden..., out}. zero_last initialises the final layer to 0.
  Mlp(const std::vector<std::size_t>& widths, bool activate_last, bool zero_last, Rng& rng);

  Var forward(Tape& tape, const Var& x, bool trainable);
  Tensor eval(const Tensor& x) const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<Dense>& layers() { return layers_; }
  const std::vector<Dense>& layers() const { return layers_; }
  bool activate_last() const { return activate_last_; }
  void set_activate_last(bool on) { activate_last_ = on; }

  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }

 private:
  std::vector<Dense> layers_;
  bool activate_last_ = false;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with decoupled weight decay: p <- p (1 - lr wd) before the Adam step.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, AdamWConfig cfg);

  void step(double lr);
  void zero_grad();

 private:
  std::vector<Tensor*> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long steps_ = 0;
};

}  // namespace cflow
