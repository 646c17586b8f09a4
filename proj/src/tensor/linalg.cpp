#include "cflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cflow/errors.hpp"

namespace cflow {

namespace {

constexpr std::size_t kMaxEigDim = 256;
constexpr int kMaxSweeps = 100;
constexpr double kNegativeEigenTolerance = 1e-8;

}  // namespace

SymmetricMatrix::SymmetricMatrix(std::size_t dim) : dim_(dim), entries_(dim * dim, 0.0) {
  if (dim == 0) {
    throw ContractError("SymmetricMatrix needs a positive dimension");
  }
}

SymmetricMatrix::SymmetricMatrix(const Tensor& m) : SymmetricMatrix(m.rank() == 2 ? m.rows() : 0) {
  if (m.rows() != m.cols()) {
    throw ContractError("SymmetricMatrix from non-square " + shape_string(m.shape()));
  }
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j < dim_; ++j) {
      if (std::abs(m(i, j) - m(j, i)) > kSymmetryTolerance) {
        throw ContractError("matrix is not symmetric at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
      }
      entries_[i * dim_ + j] = m(i, j);
    }
  }
}

SymmetricMatrix SymmetricMatrix::symmetrized(const Tensor& m) {
  if (m.rank() != 2 || m.rows() != m.cols()) {
    throw ContractError("symmetrized() needs a square matrix, got " + shape_string(m.shape()));
  }
  SymmetricMatrix out(m.rows());
  for (std::size_t i = 0; i < out.dim_; ++i) {
    for (std::size_t j = i; j < out.dim_; ++j) {
      out.set(i, j, 0.5 * (m(i, j) + m(j, i)));
    }
  }
  return out;
}

void SymmetricMatrix::set(std::size_t i, std::size_t j, double value) {
  entries_[i * dim_ + j] = value;
  entries_[j * dim_ + i] = value;
}

Tensor SymmetricMatrix::to_tensor() const { return Tensor(Shape{dim_, dim_}, entries_); }

double SymmetricMatrix::trace() const {
  double t = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) {
    t += entries_[i * dim_ + i];
  }
  return t;
}

EigenDecomposition sym_eig(const SymmetricMatrix& m) {
  const std::size_t n = m.dim();
  if (n > kMaxEigDim) {
    throw ContractError("sym_eig supports dim <= 256, got " + std::to_string(n));
  }
  std::vector<double> a(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      a[i * n + j] = m(i, j);
    }
  }
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    v[i * n + i] = 1.0;
  }

  double scale = 0.0;
  for (double x : a) {
    scale = std::max(scale, std::abs(x));
  }

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        off += a[p * n + q] * a[p * n + q];
      }
    }
    if (off <= 1e-30 * scale * scale || off == 0.0) {
      break;
    }
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) {
          continue;
        }
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        // Rotation angle zeroing a[p][q] (Golub & Van Loan, sym.schur2).
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });

  EigenDecomposition out{std::vector<double>(n), Tensor(Shape{n, n})};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.values[k] = a[src * n + src];
    for (std::size_t i = 0; i < n; ++i) {
      out.vectors(i, k) = v[i * n + src];
    }
  }
  out.vectors.check_finite("sym_eig");
  return out;
}

SymmetricMatrix sqrtm_psd(const SymmetricMatrix& m) {
  const EigenDecomposition eig = sym_eig(m);
  const std::size_t n = m.dim();
  std::vector<double> roots(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (eig.values[k] < -kNegativeEigenTolerance) {
      throw DomainError("sqrtm_psd: eigenvalue " + std::to_string(eig.values[k]) + " is negative");
    }
    roots[k] = std::sqrt(std::max(eig.values[k], 0.0));
  }
  SymmetricMatrix out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        acc += eig.vectors(i, k) * roots[k] * eig.vectors(j, k);
      }
      out.set(i, j, acc);
    }
  }
  return out;
}

}  // namespace cflow
