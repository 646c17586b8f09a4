#include "cflow/semisup.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cflow/errors.hpp"
#include "cflow/random.hpp"

namespace cflow {

namespace {

constexpr double kCoincidentCentroids = 1e-12;

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

Dataset LabelState::training_set() const {
  if (!presumptive || unlabeled_count() == 0) {
    return labeled;
  }
  Dataset extra;
  extra.num_classes = labeled.num_classes;
  extra.samples = unlabeled;
  extra.labels = *presumptive;
  return concat(labeled, extra);
}

void LabelState::validate() const {
  if (labeled.size() == 0 || labeled.samples.rows() != labeled.labels.size()) {
    throw ContractError("label state needs a non-empty labelled set");
  }
  const auto counts = labeled.class_counts();
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) {
      throw ContractError("class " + std::to_string(k) + " has no labelled sample");
    }
  }
  if (unlabeled_count() > 0 && unlabeled.cols() != labeled.dim()) {
    throw DimensionError("labelled and unlabelled samples differ in dimension");
  }
  if (presumptive && presumptive->size() != unlabeled_count()) {
    throw ContractError("presumptive labels must cover the unlabelled set exactly");
  }
}

SimilarityMetric SimilarityMetric::gaussian(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("gaussian kernel bandwidth must be positive, got " + std::to_string(sigma));
  }
  return {Kind::gaussian_kernel, sigma};
}

double similarity(const SimilarityMetric& metric, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("similarity of vectors with lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  const double d2 = squared_distance(a, b);
  if (metric.kind == SimilarityMetric::Kind::negative_euclidean) {
    return -std::sqrt(d2);
  }
  if (!(metric.sigma > 0.0)) {
    throw ParameterError("gaussian kernel bandwidth must be positive");
  }
  return std::exp(-d2 / (2.0 * metric.sigma * metric.sigma));
}

CentroidSet compute_centroids(const Tensor& embeddings, std::span<const int> labels, std::size_t num_classes) {
  if (embeddings.rank() != 2 || embeddings.rows() != labels.size()) {
    throw ContractError("compute_centroids needs one label per embedding row");
  }
  const std::size_t dim = embeddings.cols();
  std::vector<double> sums(num_classes * dim, 0.0);
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    const auto row = embeddings.row(r);
    double* dst = sums.data() + static_cast<std::size_t>(y) * dim;
    for (std::size_t j = 0; j < dim; ++j) {
      dst[j] += row[j];
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) {
      throw ContractError("class " + std::to_string(k) + " has no samples for its centroid");
    }
    for (std::size_t j = 0; j < dim; ++j) {
      sums[k * dim + j] /= static_cast<double>(counts[k]);
    }
  }
  return {Tensor(Shape{num_classes, dim}, std::move(sums))};
}

CentroidSet compute_centroids(const ClassifierModel& model, const LabelState& state) {
  state.validate();
  const Dataset pool = state.training_set();
  return compute_centroids(extract_embeddings(model, pool.samples), pool.labels, pool.num_classes);
}

double median_pairwise_distance(const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.rows() < 2) {
    throw ContractError("median pairwise distance needs at least two rows");
  }
  std::vector<double> d;
  const std::size_t n = embeddings.rows();
  d.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      d.push_back(std::sqrt(squared_distance(embeddings.row(i), embeddings.row(j))));
    }
  }
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  const double upper = d[mid];
  if (d.size() % 2 == 1) {
    return upper;
  }
  const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

Assignment assign_embeddings(const Tensor& embeddings, const CentroidSet& centroids, const SimilarityMetric& metric) {
  const Tensor& c = centroids.centroids;
  const std::size_t k = c.rows();
  if (embeddings.rank() != 2 || embeddings.cols() != c.cols()) {
    throw DimensionError("embeddings " + shape_string(embeddings.shape()) + " vs centroids " +
                         shape_string(c.shape()));
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      if (std::sqrt(squared_distance(c.row(i), c.row(j))) < kCoincidentCentroids) {
        throw DegeneracyError("centroids of classes " + std::to_string(i) + " and " + std::to_string(j) +
                              " coincide");
      }
    }
  }
  Assignment out;
  out.labels.resize(embeddings.rows());
  out.margins.resize(embeddings.rows());
  for (std::size_t r = 0; r < embeddings.rows(); ++r) {
    int best = 0;
    double best_sim = similarity(metric, embeddings.row(r), c.row(0));
    double second = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j < k; ++j) {
      const double s = similarity(metric, embeddings.row(r), c.row(j));
      if (s > best_sim) {
        second = best_sim;
        best_sim = s;
        best = static_cast<int>(j);
      } else if (s > second) {
        second = s;
      }
    }
    out.labels[r] = best;
    out.margins[r] = best_sim - second;
  }
  return out;
}

Assignment greedy_assign(const ClassifierModel& model, const CentroidSet& centroids, const Tensor& unlabeled,
                         const SimilarityMetric& metric) {
  return assign_embeddings(extract_embeddings(model, unlabeled), centroids, metric);
}

void SemisupConfig::validate() const {
  classifier.validate();
  if (max_iters == 0) {
    throw ParameterError("max_iters must be at least 1");
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ParameterError("stability threshold must lie in [0, 1]");
  }
  if (sigma < 0.0) {
    throw ParameterError("sigma must be positive (or 0 for the median heuristic)");
  }
  if (!(retrain_lr_decay > 0.0 && retrain_lr_decay <= 1.0)) {
    throw ParameterError("retrain_lr_decay must lie in (0, 1]");
  }
}

namespace {

template <typename Fn>
void at_iteration(std::size_t iteration, Fn&& fn) {
  const std::string where = "label propagation iteration " + std::to_string(iteration) + ": ";
  try {
    fn();
  } catch (const NumericError& e) {
    throw NumericError(where + e.what());
  } catch (const TrainingDataError& e) {
    throw TrainingDataError(where + e.what());
  } catch (const DegeneracyError& e) {
    throw DegeneracyError(where + e.what());
  }
}

}  // namespace

SemisupResult alternate_train(LabelState state, const SemisupConfig& cfg) {
  cfg.validate();
  state.validate();
  if (state.labeled.num_classes != cfg.classifier.num_classes) {
    throw ContractError("label state and classifier disagree on the number of classes");
  }
  std::optional<ClassifierModel> model;
  at_iteration(1, [&] { model.emplace(train_classifier(state.labeled, cfg.classifier)); });

  SemisupResult result{*model, state, {}, false};
  const std::size_t m = state.unlabeled_count();
  if (m == 0) {
    result.history.push_back({1, 0, 0.0, state.labeled.size(), 0.0});
    result.state.iteration = 1;
    result.converged = true;
    return result;
  }

  const std::size_t retrain_epochs = cfg.retrain_epochs > 0 ? cfg.retrain_epochs : cfg.classifier.epochs;
  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    at_iteration(it, [&] {
      if (it > 1) {
        continue_training(*model, state.training_set(), retrain_epochs, cfg.retrain_lr_decay,
                          Rng::derive(cfg.classifier.seed, 100 + it));
      }
      rec.train_size = state.training_set().size();
      const CentroidSet centroids = compute_centroids(*model, state);
      SimilarityMetric metric = SimilarityMetric::negative_euclidean();
      if (cfg.metric == SimilarityMetric::Kind::gaussian_kernel) {
        const double sigma =
            cfg.sigma > 0.0 ? cfg.sigma : median_pairwise_distance(extract_embeddings(*model, state.labeled.samples));
        if (!(sigma > 0.0)) {
          throw DegeneracyError("labelled embeddings coincide; median bandwidth is zero");
        }
        metric = SimilarityMetric::gaussian(sigma);
        rec.sigma = sigma;
      }
      Assignment a = greedy_assign(*model, centroids, state.unlabeled, metric);
      if (state.presumptive) {
        for (std::size_t i = 0; i < m; ++i) {
          rec.changed += a.labels[i] != (*state.presumptive)[i] ? 1 : 0;
        }
      } else {
        rec.changed = m;
      }
      state.presumptive = std::move(a.labels);
      state.iteration = it;
    });
    rec.changed_fraction = static_cast<double>(rec.changed) / static_cast<double>(m);
    result.history.push_back(rec);
    if (rec.changed_fraction <= cfg.epsilon) {
      result.converged = true;
      break;
    }
  }
  result.model = std::move(*model);
  result.state = std::move(state);
  return result;
}

LabelBudget LabelBudget::parse(const std::string& text) {
  LabelBudget b;
  b.text = text;
  std::string body = text;
  if (!body.empty() && body.back() == '%') {
    b.percent = true;
    body.pop_back();
  }
  std::size_t used = 0;
  try {
    b.value = std::stod(body, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != body.size() || !std::isfinite(b.value) || b.value <= 0.0) {
    throw ParameterError("label budget '" + text + "' must be a positive count or percentage");
  }
  if (b.percent && b.value > 100.0) {
    throw ParameterError("label budget '" + text + "' exceeds 100%");
  }
  if (!b.percent && b.value != std::floor(b.value)) {
    throw ParameterError("label budget '" + text + "' must be a whole number of samples");
  }
  return b;
}

std::size_t LabelBudget::resolve(std::size_t n) const {
  if (!percent) {
    return static_cast<std::size_t>(value);
  }
  return static_cast<std::size_t>(std::llround(value / 100.0 * static_cast<double>(n)));
}

LabelSplit select_labeled(const Dataset& pool, std::size_t count, bool preserve_ratio, std::uint64_t seed) {
  const std::size_t n = pool.size();
  const std::size_t k = pool.num_classes;
  if (count < k) {
    throw ContractError("labelled budget " + std::to_string(count) + " is below the number of classes");
  }
  if (count > n) {
    throw ContractError("labelled budget " + std::to_string(count) + " exceeds the pool of " + std::to_string(n));
  }
  const auto counts = pool.class_counts();
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < n; ++i) {
    by_class[static_cast<std::size_t>(pool.labels[i])].push_back(i);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) {
      throw TrainingDataError("class " + std::to_string(c) + " is absent from the pool");
    }
  }
  Rng rng(seed);
  for (auto& members : by_class) {
    rng.shuffle(members);
  }

  std::vector<std::size_t> picked;
  if (preserve_ratio) {
    // Largest-remainder quotas, each class guaranteed one sample.
    std::vector<std::size_t> quota(k, 1);
    const std::size_t spare = count - k;
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double exact = spare == 0 ? 0.0
                                      : static_cast<double>(spare) * static_cast<double>(counts[c] - 1) /
                                            static_cast<double>(n - k);
      const auto whole = std::min(static_cast<std::size_t>(std::floor(exact)), counts[c] - 1);
      quota[c] += whole;
      assigned += whole;
      remainders.emplace_back(exact - static_cast<double>(whole), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < spare; r = (r + 1) % k) {
      const std::size_t c = remainders[r].second;
      if (quota[c] < counts[c]) {
        ++quota[c];
        ++assigned;
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      picked.insert(picked.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
    }
  } else {
    std::vector<std::size_t> rest;
    for (std::size_t c = 0; c < k; ++c) {
      picked.push_back(by_class[c].front());
      rest.insert(rest.end(), by_class[c].begin() + 1, by_class[c].end());
    }
    std::sort(rest.begin(), rest.end());
    rng.shuffle(rest);
    picked.insert(picked.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(count - k));
  }
  std::sort(picked.begin(), picked.end());

  LabelSplit out;
  out.labeled_index = picked;
  std::vector<bool> is_labeled(n, false);
  for (std::size_t i : picked) {
    is_labeled[i] = true;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_labeled[i]) {
      out.unlabeled_index.push_back(i);
      out.unlabeled_truth.push_back(pool.labels[i]);
    }
  }
  out.state.labeled = pool.subset(out.labeled_index);
  if (!out.unlabeled_index.empty()) {
    out.state.unlabeled = take_rows(pool.samples, out.unlabeled_index);
  }
  return out;
}

}  // namespace cflow
