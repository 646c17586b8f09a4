#include "cflow/eval.hpp"

#include <cmath>

#include "cflow/errors.hpp"
#include "cflow/random.hpp"

namespace cflow {

namespace {

constexpr double kTraceResidue = 1e-6;

double ratio(std::size_t num, std::size_t den, bool& undefined) {
  undefined = den == 0;
  return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) {
    throw ContractError("confusion matrix needs at least one class");
  }
}

ConfusionMatrix ConfusionMatrix::from_labels(std::span<const int> truth, std::span<const int> predicted,
                                             std::size_t num_classes) {
  if (truth.size() != predicted.size()) {
    throw ContractError("truth and prediction counts differ");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (int y : {truth[i], predicted[i]}) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw ValidationError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
    cm.add(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
  return cm;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::size_t n) {
  if (truth >= k_ || predicted >= k_) {
    throw IndexError("confusion cell outside the class range");
  }
  counts_[truth * k_ + predicted] += n;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (std::size_t c : counts_) {
    t += c;
  }
  return t;
}

ConfusionMatrix confusion(const ClassifierModel& model, const Dataset& data) {
  if (data.size() == 0) {
    throw ContractError("confusion needs a non-empty dataset");
  }
  const auto predicted = predict_labels(model, data.samples);
  return ConfusionMatrix::from_labels(data.labels, predicted, model.config().num_classes);
}

bool MetricsReport::degenerate() const {
  for (const auto& c : per_class) {
    if (c.precision_undefined || c.recall_undefined || c.f1_undefined) {
      return true;
    }
  }
  return false;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  const std::size_t k = cm.num_classes();
  MetricsReport r;
  r.sample_count = cm.total();
  if (r.sample_count == 0) {
    throw ContractError("metrics of an empty confusion matrix");
  }
  std::size_t correct = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t predicted = 0, actual = 0;
    for (std::size_t j = 0; j < k; ++j) {
      predicted += cm.at(j, c);
      actual += cm.at(c, j);
    }
    const std::size_t tp = cm.at(c, c);
    correct += tp;
    ClassMetrics m;
    m.precision = ratio(tp, predicted, m.precision_undefined);
    m.recall = ratio(tp, actual, m.recall_undefined);
    const double denom = m.precision + m.recall;
    m.f1_undefined = denom == 0.0;
    m.f1 = m.f1_undefined ? 0.0 : 2.0 * m.precision * m.recall / denom;
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
    r.per_class.push_back(m);
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.sample_count);
  r.macro_precision /= static_cast<double>(k);
  r.macro_recall /= static_cast<double>(k);
  r.macro_f1 /= static_cast<double>(k);
  return r;
}

FrechetStats embedding_stats(const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.rows() < 2) {
    throw ContractError("embedding statistics need at least two samples");
  }
  const std::size_t n = embeddings.rows();
  const std::size_t d = embeddings.cols();
  FrechetStats s{std::vector<double>(d, 0.0), SymmetricMatrix(d)};
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = embeddings.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      s.mean[j] += row[j];
    }
  }
  for (double& m : s.mean) {
    m /= static_cast<double>(n);
  }
  std::vector<double> acc(d * d, 0.0);
  std::vector<double> centred(d);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = embeddings.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      centred[j] = row[j] - s.mean[j];
    }
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) {
        acc[i * d + j] += centred[i] * centred[j];
      }
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      s.covariance.set(i, j, acc[i * d + j] / static_cast<double>(n - 1));
    }
  }
  return s;
}

FrechetStats embed_stats(const ClassifierModel& model, const Dataset& data) {
  if (data.size() < 2) {
    throw ContractError("embedding statistics need at least two samples");
  }
  return embedding_stats(extract_embeddings(model, data.samples));
}

double frechet_distance(const FrechetStats& a, const FrechetStats& b) {
  const std::size_t d = a.mean.size();
  if (b.mean.size() != d || a.covariance.dim() != d || b.covariance.dim() != d) {
    throw ContractError("Frechet statistics of different dimensions");
  }
  double mean_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a.mean[i] - b.mean[i];
    mean_term += diff * diff;
  }
  // tr((S_a S_b)^1/2) = tr((S_a^1/2 S_b S_a^1/2)^1/2), and the latter is symmetric PSD.
  const Tensor root_a = sqrtm_psd(a.covariance).to_tensor();
  std::vector<double> product(d * d, 0.0);
  std::vector<double> tmp(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double v = root_a(i, k);
      for (std::size_t j = 0; j < d; ++j) {
        tmp[i * d + j] += v * b.covariance(k, j);
      }
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double v = tmp[i * d + k];
      for (std::size_t j = 0; j < d; ++j) {
        product[i * d + j] += v * root_a(k, j);
      }
    }
  }
  const SymmetricMatrix middle = SymmetricMatrix::symmetrized(Tensor(Shape{d, d}, std::move(product)));
  const double cross = sqrtm_psd(middle).trace();
  const double value = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
  if (value < -kTraceResidue) {
    throw NumericError("Frechet distance came out negative (" + std::to_string(value) + ")");
  }
  return value < 0.0 ? 0.0 : value;
}

Summary summarize(std::span<const double> values) {
  if (values.empty()) {
    throw ContractError("summary of an empty sample");
  }
  Summary s;
  for (double v : values) {
    s.mean += v;
  }
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) {
      ss += (v - s.mean) * (v - s.mean);
    }
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

BootstrapResult bootstrap(std::span<const int> truth, std::span<const int> predicted, std::size_t num_classes,
                          std::size_t resamples, std::uint64_t seed) {
  if (truth.empty()) {
    throw ContractError("bootstrap of an empty test set");
  }
  if (truth.size() != predicted.size()) {
    throw ContractError("truth and prediction counts differ");
  }
  if (resamples < 2) {
    throw ParameterError("bootstrap needs at least two resamples");
  }
  const std::size_t n = truth.size();
  ConfusionMatrix::from_labels(truth, predicted, num_classes);  // range check

  Rng rng(seed);
  BootstrapResult out;
  out.resamples = resamples;
  std::vector<double> precision, recall;
  std::vector<std::vector<double>> class_recall(num_classes);
  for (std::size_t b = 0; b < resamples; ++b) {
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = static_cast<std::size_t>(rng.below(n));
      cm.add(static_cast<std::size_t>(truth[j]), static_cast<std::size_t>(predicted[j]));
    }
    const MetricsReport m = metrics(cm);
    out.accuracy_values.push_back(m.accuracy);
    out.macro_f1_values.push_back(m.macro_f1);
    precision.push_back(m.macro_precision);
    recall.push_back(m.macro_recall);
    for (std::size_t c = 0; c < num_classes; ++c) {
      class_recall[c].push_back(m.per_class[c].recall);
    }
  }
  out.accuracy = summarize(out.accuracy_values);
  out.macro_f1 = summarize(out.macro_f1_values);
  out.macro_precision = summarize(precision);
  out.macro_recall = summarize(recall);
  for (const auto& v : class_recall) {
    out.class_recall.push_back(summarize(v));
  }
  return out;
}

}  // namespace cflow
