#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cflow {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major float64 array. Rank 0 is a scalar.
//
// Every value entering a Tensor through a constructor is checked for
// finiteness; mutable access through data() is unchecked and callers that
// write through it are expected to call check_finite() themselves.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on);

  const std::optional<std::vector<double>>& grad() const noexcept { return grad_; }
  std::optional<std::vector<double>>& grad() noexcept { return grad_; }
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

  // Throws NumericError naming `where` if any element is NaN or Inf.
  void check_finite(const char* where) const;

  // Same shape and bit-identical values; gradient state is ignored.
  bool same_values(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
};

// Copies rows `indices` of a rank-2 tensor into a new [indices.size(), cols] tensor.
Tensor take_rows(const Tensor& m, std::span<const std::size_t> indices);

// Stacks two rank-2 tensors with equal column counts.
Tensor vstack(const Tensor& top, const Tensor& bottom);

}  // namespace cflow
