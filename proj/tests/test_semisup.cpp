#include <cmath>

#include "doctest.h"

#include "cflow/errors.hpp"
#include "cflow/semisup.hpp"
#include "fixtures.hpp"

using namespace cflow;

namespace {

// Exhaustive nearest-centroid labels by squared distance; strict comparison
// keeps the lower index on ties.
std::vector<int> brute_force(const Tensor& points, const Tensor& centroids) {
  std::vector<int> out(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double best = INFINITY;
    for (std::size_t k = 0; k < centroids.rows(); ++k) {
      double d = 0.0;
      for (std::size_t j = 0; j < points.cols(); ++j) {
        d += (points(i, j) - centroids(k, j)) * (points(i, j) - centroids(k, j));
      }
      if (d < best) {
        best = d;
        out[i] = static_cast<int>(k);
      }
    }
  }
  return out;
}

SemisupConfig blob_semisup() {
  SemisupConfig cfg;
  cfg.classifier = testing::blob_classifier(16, 5);
  cfg.classifier.min_steps = 200;
  cfg.retrain_epochs = 5;
  return cfg;
}

}  // namespace

TEST_CASE("similarity values") {
  const std::vector<double> a{1.0, 2.0}, b{1.0, 2.0}, c{1.0, 4.0};
  CHECK(similarity(SimilarityMetric::gaussian(0.7), a, b) == 1.0);
  CHECK(similarity(SimilarityMetric::gaussian(std::sqrt(2.0)), a, c) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(similarity(SimilarityMetric::negative_euclidean(), a, c) == -2.0);
  CHECK_THROWS_AS(SimilarityMetric::gaussian(0.0), ParameterError);
  CHECK_THROWS_AS(SimilarityMetric::gaussian(-1.0), ParameterError);
}

TEST_CASE("similarity decreases along a ray") {
  const std::vector<double> origin{0.2, -0.1, 0.4};
  const std::vector<double> dir{0.6, 0.0, -0.8};
  for (const auto& metric : {SimilarityMetric::gaussian(0.5), SimilarityMetric::gaussian(3.0),
                             SimilarityMetric::negative_euclidean()}) {
    double previous = INFINITY;
    for (int step = 0; step < 30; ++step) {
      const double t = 0.1 * step;
      std::vector<double> p(3);
      for (std::size_t j = 0; j < 3; ++j) {
        p[j] = origin[j] + t * dir[j];
      }
      const double s = similarity(metric, origin, p);
      CHECK(s < previous);
      if (metric.kind == SimilarityMetric::Kind::gaussian_kernel) {
        CHECK(s > 0.0);
        CHECK(s <= 1.0);
      }
      previous = s;
    }
  }
}

TEST_CASE("centroids") {
  const Tensor one = Tensor::matrix({{0.6, 0.8}, {-1.0, 0.0}});
  const CentroidSet c = compute_centroids(one, std::vector<int>{1, 0}, 2);
  CHECK(c.centroids.row(0)[0] == -1.0);
  CHECK(c.centroids.row(1)[1] == 0.8);

  const Tensor sym = Tensor::matrix({{0.6, 0.8}, {-0.6, -0.8}, {1.0, 0.0}});
  const CentroidSet zero = compute_centroids(sym, std::vector<int>{0, 0, 1}, 2);
  CHECK(zero.centroids(0, 0) == 0.0);
  CHECK(zero.centroids(0, 1) == 0.0);

  Rng rng(4);
  const Tensor pts = testing::random_tensor({40, 2}, rng);
  std::vector<int> labels(40);
  double sum[3][2] = {};
  int count[3] = {};
  for (std::size_t i = 0; i < 40; ++i) {
    labels[i] = static_cast<int>(i % 3);
    sum[i % 3][0] += pts(i, 0);
    sum[i % 3][1] += pts(i, 1);
    ++count[i % 3];
  }
  const CentroidSet mean = compute_centroids(pts, labels, 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(mean.centroids(k, 0) == doctest::Approx(sum[k][0] / count[k]).epsilon(1e-14));
    CHECK(mean.centroids(k, 1) == doctest::Approx(sum[k][1] / count[k]).epsilon(1e-14));
  }
  CHECK_THROWS_AS(compute_centroids(pts, labels, 4), ContractError);
}

TEST_CASE("assignment rules") {
  CentroidSet c{Tensor::matrix({{1.0, 0.0}, {-1.0, 0.0}, {0.0, 2.0}})};
  const Tensor pts = Tensor::matrix({{-1.0, 0.0}, {0.0, 2.0}, {0.0, 0.5}});
  const Assignment a = assign_embeddings(pts, c, SimilarityMetric::gaussian(1.0));
  CHECK(a.labels == std::vector<int>{1, 2, 0});  // last point is equidistant from 0 and 1
  CHECK(a.margins[2] == 0.0);
  CHECK(a.margins[0] > 0.0);

  CentroidSet same{Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}})};
  CHECK_THROWS_AS(assign_embeddings(pts, same, SimilarityMetric::negative_euclidean()), DegeneracyError);
}

TEST_CASE("assignment equals exhaustive enumeration for every similarity") {
  Rng rng(12);
  for (int instance = 0; instance < 100; ++instance) {
    const std::size_t k = 2 + rng.below(4);
    const std::size_t n = 1 + rng.below(500);
    const std::size_t dim = 2 + rng.below(5);
    const Tensor centroids = testing::random_tensor({k, dim}, rng);
    const Tensor pts = testing::random_tensor({n, dim}, rng, -1.5, 1.5);
    const auto expected = brute_force(pts, centroids);
    CentroidSet c{centroids};
    CHECK(assign_embeddings(pts, c, SimilarityMetric::negative_euclidean()).labels == expected);
    for (double sigma : {0.5, 1.0, 4.0}) {
      CHECK(assign_embeddings(pts, c, SimilarityMetric::gaussian(sigma)).labels == expected);
    }
  }
}

TEST_CASE("median pairwise distance") {
  const Tensor pts = Tensor::matrix({{0, 0}, {3, 0}, {0, 4}});  // distances 3, 4, 5
  CHECK(median_pairwise_distance(pts) == 4.0);
}

TEST_CASE("label budgets") {
  CHECK(LabelBudget::parse("20").resolve(1000) == 20);
  CHECK(LabelBudget::parse("0.5%").resolve(1000) == 5);
  CHECK(LabelBudget::parse("100%").resolve(1000) == 1000);
  CHECK(LabelBudget::parse("5%").percent);
  CHECK_THROWS_AS(LabelBudget::parse("abc"), ParameterError);
  CHECK_THROWS_AS(LabelBudget::parse("0"), ParameterError);
  CHECK_THROWS_AS(LabelBudget::parse("120%"), ParameterError);
  CHECK_THROWS_AS(LabelBudget::parse("2.5"), ParameterError);
}

TEST_CASE("labelled selection keeps class ratio and disjointness") {
  Dataset pool = testing::blobs(50, 4, 3);
  for (std::size_t i = 0; i < 40; ++i) {
    pool.labels[2 * i + 1] = 0;  // 80 / 20 imbalance
  }
  const LabelSplit s = select_labeled(pool, 10, true, 1);
  CHECK(s.state.labeled.class_counts() == std::vector<std::size_t>{8, 2});
  CHECK(s.labeled_index.size() + s.unlabeled_index.size() == pool.size());
  std::vector<int> seen(pool.size(), 0);
  for (std::size_t i : s.labeled_index) {
    ++seen[i];
  }
  for (std::size_t i : s.unlabeled_index) {
    ++seen[i];
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
  CHECK(select_labeled(pool, 2, true, 1).state.labeled.class_counts() == std::vector<std::size_t>{1, 1});
  CHECK_THROWS_AS(select_labeled(pool, 1, true, 1), ContractError);
}

TEST_CASE("two labels per class recover separable blobs") {
  const Dataset pool = testing::blobs(100, 16, 21);
  const LabelSplit split = select_labeled(pool, 4, true, 2);
  REQUIRE(split.state.labeled.class_counts() == std::vector<std::size_t>{2, 2});
  const SemisupResult r = alternate_train(split.state, blob_semisup());
  REQUIRE(r.state.presumptive.has_value());
  CHECK(testing::accuracy(split.unlabeled_truth, *r.state.presumptive) >= 0.99);
  CHECK(r.converged);
  CHECK(r.history.size() <= 2);
  CHECK(r.history.front().changed_fraction == 1.0);
  CHECK(r.history.back().changed == 0);

  const SemisupResult again = alternate_train(split.state, blob_semisup());
  CHECK(*again.state.presumptive == *r.state.presumptive);
  CHECK(again.model.serialize() == r.model.serialize());
}

TEST_CASE("stability threshold of one stops after the first assignment") {
  const Dataset pool = testing::blobs(30, 16, 22);
  const LabelSplit split = select_labeled(pool, 4, true, 2);
  SemisupConfig cfg = blob_semisup();
  cfg.epsilon = 1.0;
  const SemisupResult r = alternate_train(split.state, cfg);
  CHECK(r.history.size() == 1);
  CHECK(r.converged);
  CHECK(r.state.presumptive->size() == split.unlabeled_index.size());
}

TEST_CASE("configuration and state checks") {
  SemisupConfig cfg = blob_semisup();
  cfg.max_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = blob_semisup();
  cfg.epsilon = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);

  LabelState missing;
  missing.labeled = testing::blobs(5, 16, 1);
  for (int& l : missing.labeled.labels) {
    l = 0;
  }
  CHECK_THROWS_AS(missing.validate(), ContractError);
}
