#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cflow/classifier.hpp"
#include "cflow/dataset.hpp"
#include "cflow/linalg.hpp"

namespace cflow {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);
  // Throws ValidationError for labels outside [0, num_classes).
  static ConfusionMatrix from_labels(std::span<const int> truth, std::span<const int> predicted,
                                     std::size_t num_classes);

  std::size_t num_classes() const noexcept { return k_; }
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  void add(std::size_t truth, std::size_t predicted, std::size_t n = 1);
  std::size_t total() const;

  bool operator==(const ConfusionMatrix& other) const = default;

 private:
  std::size_t k_;
  std::vector<std::size_t> counts_;
};

ConfusionMatrix confusion(const ClassifierModel& model, const Dataset& data);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the corresponding denominator was zero and the value defaulted to 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

struct MetricsReport {
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::size_t sample_count = 0;

  bool degenerate() const;
};

// Throws ContractError on an empty matrix; zero denominators are flagged.
MetricsReport metrics(const ConfusionMatrix& cm);

struct FrechetStats {
  std::vector<double> mean;
  SymmetricMatrix covariance;
};

// Sample mean and unbiased covariance of the rows; at least two rows.
FrechetStats embedding_stats(const Tensor& embeddings);
FrechetStats embed_stats(const ClassifierModel& model, const Dataset& data);

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
double frechet_distance(const FrechetStats& a, const FrechetStats& b);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
};

Summary summarize(std::span<const double> values);

struct BootstrapResult {
  std::size_t resamples = 0;
  Summary accuracy;
  Summary macro_precision;
  Summary macro_recall;
  Summary macro_f1;
  std::vector<Summary> class_recall;
  std::vector<double> accuracy_values;
  std::vector<double> macro_f1_values;
};

// Resamples (truth, prediction) pairs with replacement B times.
BootstrapResult bootstrap(std::span<const int> truth, std::span<const int> predicted, std::size_t num_classes,
                          std::size_t resamples, std::uint64_t seed);

}  // namespace cflow
