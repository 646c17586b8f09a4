#include <cmath>
#include <numbers>

#include "doctest.h"

#include "cflow/autodiff.hpp"
#include "cflow/errors.hpp"
#include "cflow/linalg.hpp"
#include "gradcheck.hpp"

using namespace cflow;

namespace {

Tensor mat_product(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        acc += a(i, k) * b(k, j);
      }
      out(i, j) = acc;
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      out(j, i) = a(i, j);
    }
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

SymmetricMatrix random_symmetric(std::size_t n, Rng& rng) {
  SymmetricMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      m.set(i, j, rng.uniform(-1.0, 1.0));
    }
  }
  return m;
}

}  // namespace

TEST_CASE("matmul matches hand multiplication") {
  Tape tape;
  Var a = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var b = tape.constant(Tensor::matrix({{0}, {1}}));
  const Tensor out = matmul(a, b).value();
  CHECK(out.shape() == Shape{2, 1});
  CHECK(out(0, 0) == 2.0);
  CHECK(out(1, 0) == 4.0);
}

TEST_CASE("identity matmul and shape errors") {
  Rng rng(3);
  Tensor m = testing::random_tensor({3, 5}, rng);
  Tape tape;
  CHECK(matmul(tape.constant(Tensor::identity(3)), tape.constant(m)).value().same_values(m));
  CHECK_THROWS_AS(matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({4, 2}))), DimensionError);
}

TEST_CASE("plain matmul kernel agrees with a triple loop") {
  Rng rng(5);
  const Tensor a = testing::random_tensor({7, 11}, rng);
  const Tensor b = testing::random_tensor({11, 4}, rng);
  CHECK(max_abs_diff(kernels::matmul(a, b), mat_product(a, b)) < 1e-13);
}

TEST_CASE("elementwise scalar values") {
  Tape tape;
  CHECK(elu(tape.constant(Tensor::scalar(0.0))).value().item() == 0.0);
  CHECK(elu(tape.constant(Tensor::scalar(-1.0))).value().item() == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
  CHECK(elu(tape.constant(Tensor::scalar(2.5))).value().item() == 2.5);
  const Tensor ones = exp(tape.constant(Tensor({2, 3}))).value();
  for (double v : ones.data()) {
    CHECK(v == 1.0);
  }
  CHECK_THROWS_AS(log(tape.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  CHECK_THROWS_AS(log(tape.constant(Tensor::vector({-2.0}))), DomainError);
}

TEST_CASE("broadcasting supports only scalars and equal shapes") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}, 1.0));
  CHECK(add(a, tape.constant(Tensor::scalar(2.0))).value()(1, 2) == 3.0);
  CHECK_THROWS_AS(add(a, tape.constant(Tensor({3}))), DimensionError);
}

TEST_CASE("non-finite values are rejected on construction") {
  CHECK_THROWS_AS(Tensor::vector({1.0, std::nan("")}), NumericError);
  CHECK_THROWS_AS(Tensor::scalar(INFINITY), NumericError);
}

TEST_CASE("cross-entropy values") {
  Tape tape;
  const int zero[] = {0};
  CHECK(softmax_cross_entropy(tape.constant(Tensor::matrix({{0, 0}})), zero).value().item() ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  const double stable = softmax_cross_entropy(tape.constant(Tensor::matrix({{1000, 0}})), zero).value().item();
  CHECK(std::isfinite(stable));
  CHECK(stable < 1e-300);

  const int two[] = {2};
  const double direct = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(softmax_cross_entropy(tape.constant(Tensor::matrix({{1, 2, 3}})), two).value().item() ==
        doctest::Approx(direct).epsilon(1e-14));

  const int bad[] = {3};
  CHECK_THROWS_AS(softmax_cross_entropy(tape.constant(Tensor::matrix({{1, 2, 3}})), bad), IndexError);
}

TEST_CASE("cross-entropy is nonnegative on random logits") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Tape tape;
    const Tensor logits = testing::random_tensor({5, 4}, rng, -30.0, 30.0);
    std::vector<int> labels(5);
    for (int& l : labels) {
      l = static_cast<int>(rng.below(4));
    }
    CHECK(softmax_cross_entropy(tape.constant(logits), labels).value().item() >= 0.0);
  }
}

TEST_CASE("backward hand examples") {
  Tensor w = Tensor::vector({1.0, 2.0, 5.0});
  w.set_requires_grad(true);
  {
    Tape tape;
    tape.backward(sum(tape.watch(w)));
  }
  CHECK(*w.grad() == std::vector<double>{1.0, 1.0, 1.0});

  Tensor v = Tensor::vector({1.0, 2.0});
  v.set_requires_grad(true);
  Tape tape;
  Var x = tape.watch(v);
  tape.backward(sum(mul(x, x)));  // fan-out: both operands are x
  CHECK(*v.grad() == std::vector<double>{2.0, 4.0});
  CHECK(tape.size() == 0);
}

TEST_CASE("backward on a non-scalar is a contract violation") {
  Tensor w = Tensor::vector({1.0, 2.0});
  w.set_requires_grad(true);
  Tape tape;
  CHECK_THROWS_AS(tape.backward(exp(tape.watch(w))), ContractError);
}

TEST_CASE("every op passes the central-difference check") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& c : testing::op_cases(seed)) {
      CAPTURE(c.name);
      const auto r = testing::check_gradients(c);
      CHECK(r.checked > 0);
      CHECK(r.worst_relative <= 1e-4);
    }
  }
}

TEST_CASE("ops are bit-deterministic") {
  const auto run = [] {
    std::vector<double> out;
    for (const auto& c : testing::op_cases(9)) {
      out.push_back(testing::evaluate(c, c.inputs));
    }
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("sym_eig hand examples") {
  SymmetricMatrix d(2);
  d.set(0, 0, 1.0);
  d.set(1, 1, 3.0);
  auto e = sym_eig(d);
  CHECK(e.values[0] == doctest::Approx(3.0));
  CHECK(e.values[1] == doctest::Approx(1.0));
  CHECK(std::abs(e.vectors(1, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(e.vectors(0, 1)) == doctest::Approx(1.0));

  auto p = sym_eig(SymmetricMatrix(Tensor::matrix({{2, 1}, {1, 2}})));
  CHECK(p.values[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(p.values[1] == doctest::Approx(1.0).epsilon(1e-14));
  const double h = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(p.vectors(0, 0)) == doctest::Approx(h));
  CHECK(p.vectors(0, 0) * p.vectors(1, 0) > 0.0);
  CHECK(p.vectors(0, 1) * p.vectors(1, 1) < 0.0);

  CHECK_THROWS_AS(SymmetricMatrix(Tensor::matrix({{1, 2}, {0, 1}})), ContractError);
}

TEST_CASE("sym_eig reconstructs random matrices with orthonormal vectors") {
  Rng rng(21);
  for (std::size_t n : {2u, 5u, 8u, 20u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const SymmetricMatrix m = random_symmetric(n, rng);
      const auto e = sym_eig(m);
      for (std::size_t k = 1; k < n; ++k) {
        CHECK(e.values[k - 1] >= e.values[k]);
      }
      Tensor scaled = e.vectors;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
          scaled(i, k) *= e.values[k];
        }
      }
      CHECK(max_abs_diff(mat_product(scaled, transpose(e.vectors)), m.to_tensor()) <= 1e-8 * static_cast<double>(n));
      CHECK(max_abs_diff(mat_product(transpose(e.vectors), e.vectors), Tensor::identity(n)) <= 1e-8);
    }
  }
}

TEST_CASE("sqrtm_psd") {
  const auto id = sqrtm_psd(SymmetricMatrix(Tensor::identity(3)));
  CHECK(max_abs_diff(id.to_tensor(), Tensor::identity(3)) < 1e-14);

  const auto d = sqrtm_psd(SymmetricMatrix(Tensor::matrix({{4, 0}, {0, 9}})));
  CHECK(d(0, 0) == doctest::Approx(2.0));
  CHECK(d(1, 1) == doctest::Approx(3.0));
  CHECK(std::abs(d(0, 1)) < 1e-14);

  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = testing::random_tensor({6, 4}, rng);
    const SymmetricMatrix psd = SymmetricMatrix::symmetrized(mat_product(a, transpose(a)));  // rank 4
    const Tensor root = sqrtm_psd(psd).to_tensor();
    const Tensor sq = mat_product(root, root);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < sq.size(); ++i) {
      num += (sq[i] - psd.to_tensor()[i]) * (sq[i] - psd.to_tensor()[i]);
      den += psd.to_tensor()[i] * psd.to_tensor()[i];
    }
    CHECK(std::sqrt(num / den) <= 1e-6);
  }

  CHECK_THROWS_AS(sqrtm_psd(SymmetricMatrix(Tensor::matrix({{1, 0}, {0, -0.5}}))), DomainError);
}
