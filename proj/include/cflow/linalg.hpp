#pragma once

#include <cstddef>
#include <vector>

#include "cflow/tensor.hpp"

namespace cflow {

// Square matrix whose entries are symmetric to within 1e-9.
class SymmetricMatrix {
 public:
  static constexpr double kSymmetryTolerance = 1e-9;

  explicit SymmetricMatrix(std::size_t dim);
  // Throws ContractError if `m` is not square or not symmetric within tolerance.
  explicit SymmetricMatrix(const Tensor& m);
  // Builds (m + m^T) / 2 from any square matrix.
  static SymmetricMatrix symmetrized(const Tensor& m);

  std::size_t dim() const noexcept { return dim_; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * dim_ + j]; }
  // Writes both (i, j) and (j, i).
  void set(std::size_t i, std::size_t j, double value);

  Tensor to_tensor() const;
  double trace() const;

 private:
  std::size_t dim_;
  std::vector<double> entries_;
};

struct EigenDecomposition {
  std::vector<double> values;  // descending
  Tensor vectors;              // column k is the eigenvector of values[k]
};

// Cyclic Jacobi eigensolver. Supported up to dim 256.
EigenDecomposition sym_eig(const SymmetricMatrix& m);

// Principal square root of a positive semidefinite matrix. Eigenvalues in
// [-1e-8, 0) are clamped to zero; anything more negative is a DomainError.
SymmetricMatrix sqrtm_psd(const SymmetricMatrix& m);

}  // namespace cflow
