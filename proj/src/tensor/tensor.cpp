#include "cflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "cflow/errors.hpp"

namespace cflow {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) {
    n *= extent;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? ", " : "") << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (std::size_t extent : shape) {
    if (extent == 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
  check_finite("Tensor(shape, fill)");
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                         " values, got " + std::to_string(data_.size()));
  }
  check_finite("Tensor(shape, data)");
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> flat;
  flat.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw DimensionError("ragged matrix literal");
    }
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(flat));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    t(i, i) = 1.0;
  }
  return t;
}

std::size_t Tensor::rows() const {
  if (rank() != 2) {
    throw DimensionError("rows() needs a rank-2 tensor, got " + shape_string(shape_));
  }
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) {
    throw DimensionError("cols() needs a rank-2 tensor, got " + shape_string(shape_));
  }
  return shape_[1];
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (!on) {
    grad_.reset();
  }
}

void Tensor::zero_grad() {
  if (grad_) {
    std::fill(grad_->begin(), grad_->end(), 0.0);
  }
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != data_.size()) {
    throw DimensionError("gradient size mismatch for tensor " + shape_string(shape_));
  }
  if (!grad_) {
    grad_.emplace(data_.size(), 0.0);
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    (*grad_)[i] += g[i];
  }
}

void Tensor::check_finite(const char* where) const {
  for (double v : data_) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value in ") + where);
    }
  }
}

bool Tensor::same_values(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

Tensor take_rows(const Tensor& m, std::span<const std::size_t> indices) {
  const std::size_t c = m.cols();
  if (indices.empty()) {
    throw ContractError("take_rows with no indices");
  }
  std::vector<double> out;
  out.reserve(indices.size() * c);
  for (std::size_t idx : indices) {
    if (idx >= m.rows()) {
      throw IndexError("row index " + std::to_string(idx) + " out of range");
    }
    const auto r = m.row(idx);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor(Shape{indices.size(), c}, std::move(out));
}

Tensor vstack(const Tensor& top, const Tensor& bottom) {
  if (top.cols() != bottom.cols()) {
    throw DimensionError("vstack column mismatch: " + shape_string(top.shape()) + " vs " +
                         shape_string(bottom.shape()));
  }
  std::vector<double> out(top.values());
  out.insert(out.end(), bottom.values().begin(), bottom.values().end());
  return Tensor(Shape{top.rows() + bottom.rows(), top.cols()}, std::move(out));
}

}  // namespace cflow
