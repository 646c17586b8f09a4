#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cflow/classifier.hpp"
#include "cflow/dataset.hpp"

namespace cflow {

// Labelled pool, unlabelled pool and (after the first assignment) the
// presumptive labels covering the unlabelled pool.
struct LabelState {
  Dataset labeled;
  Tensor unlabeled;  // [m, D]; a rank-0 tensor means "no unlabelled samples"
  std::optional<std::vector<int>> presumptive;
  std::size_t iteration = 0;

  std::size_t unlabeled_count() const { return unlabeled.rank() == 0 ? 0 : unlabeled.rows(); }
  // Labelled samples followed by presumptively labelled ones.
  Dataset training_set() const;
  // Throws ContractError when a class has no labelled sample or the
  // presumptive labels do not cover the unlabelled pool.
  void validate() const;
};

// One row per class, [K, embed_dim].
struct CentroidSet {
  Tensor centroids;

  std::size_t num_classes() const { return centroids.rows(); }
};

struct SimilarityMetric {
  enum class Kind { gaussian_kernel, negative_euclidean };
  Kind kind = Kind::gaussian_kernel;
  double sigma = 1.0;

  static SimilarityMetric gaussian(double sigma);
  static SimilarityMetric negative_euclidean() { return {Kind::negative_euclidean, 0.0}; }
};

// gaussian: exp(-|a-b|^2 / (2 sigma^2)); negative_euclidean: -|a-b|.
double similarity(const SimilarityMetric& metric, std::span<const double> a, std::span<const double> b);

// Class means of row embeddings; throws ContractError for an empty class.
CentroidSet compute_centroids(const Tensor& embeddings, std::span<const int> labels, std::size_t num_classes);
// Centroids of the labelled samples plus, once assigned, the presumptive ones.
CentroidSet compute_centroids(const ClassifierModel& model, const LabelState& state);

// Median of pairwise Euclidean distances between rows.
double median_pairwise_distance(const Tensor& embeddings);

struct Assignment {
  std::vector<int> labels;
  // Best minus runner-up similarity per sample.
  std::vector<double> margins;
};

// Nearest-centroid labels for row embeddings; ties go to the lower class.
// Throws DegeneracyError when two centroids coincide.
Assignment assign_embeddings(const Tensor& embeddings, const CentroidSet& centroids, const SimilarityMetric& metric);
Assignment greedy_assign(const ClassifierModel& model, const CentroidSet& centroids, const Tensor& unlabeled,
                         const SimilarityMetric& metric);

struct SemisupConfig {
  ClassifierConfig classifier;
  std::size_t max_iters = 10;
  double epsilon = 1e-3;  // stop once the changed-label fraction is at most this
  SimilarityMetric::Kind metric = SimilarityMetric::Kind::gaussian_kernel;
  double sigma = 0.0;  // 0 selects the median heuristic on labelled embeddings
  std::size_t retrain_epochs = 0;  // 0 reuses classifier.epochs
  double retrain_lr_decay = 0.99;

  void validate() const;
};

struct IterationRecord {
  std::size_t iteration = 0;
  std::size_t changed = 0;
  double changed_fraction = 0.0;
  std::size_t train_size = 0;
  double sigma = 0.0;
};

struct SemisupResult {
  ClassifierModel model;
  LabelState state;
  std::vector<IterationRecord> history;
  bool converged = false;
};

// Train on labels, assign presumptive labels, retrain on both; repeat.
SemisupResult alternate_train(LabelState state, const SemisupConfig& cfg);

// "20" is a sample count; "0.5%" and "100%" are fractions of the pool.
struct LabelBudget {
  bool percent = false;
  double value = 0.0;
  std::string text;

  static LabelBudget parse(const std::string& text);
  // Resolved sample count for a pool of n.
  std::size_t resolve(std::size_t n) const;
};

struct LabelSplit {
  LabelState state;
  std::vector<std::size_t> labeled_index;
  std::vector<std::size_t> unlabeled_index;
  std::vector<int> unlabeled_truth;
};

// Picks `count` labelled samples (at least one per class). With
// preserve_ratio the per-class quotas follow the pool's class ratio.
LabelSplit select_labeled(const Dataset& pool, std::size_t count, bool preserve_ratio, std::uint64_t seed);

}  // namespace cflow
