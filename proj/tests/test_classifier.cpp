#include <cmath>

#include "doctest.h"

#include "cflow/classifier.hpp"
#include "cflow/errors.hpp"
#include "cflow/semisup.hpp"
#include "cflow/toy.hpp"
#include "fixtures.hpp"

using namespace cflow;

namespace {

// Plain logistic regression by full-batch gradient descent; it confirms the
// blobs are linearly separable and gives a reference accuracy.
std::vector<int> logistic_oracle(const Dataset& train, const Tensor& eval) {
  const std::size_t d = train.dim();
  std::vector<double> w(d, 0.0);
  double b = 0.0;
  for (int step = 0; step < 500; ++step) {
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      double s = b;
      for (std::size_t j = 0; j < d; ++j) {
        s += w[j] * train.samples(i, j);
      }
      const double err = 1.0 / (1.0 + std::exp(-s)) - train.labels[i];
      for (std::size_t j = 0; j < d; ++j) {
        gw[j] += err * train.samples(i, j);
      }
      gb += err;
    }
    for (std::size_t j = 0; j < d; ++j) {
      w[j] -= 0.5 * gw[j] / static_cast<double>(train.size());
    }
    b -= 0.5 * gb / static_cast<double>(train.size());
  }
  std::vector<int> out(eval.rows());
  for (std::size_t i = 0; i < eval.rows(); ++i) {
    double s = b;
    for (std::size_t j = 0; j < d; ++j) {
      s += w[j] * eval(i, j);
    }
    out[i] = s > 0.0 ? 1 : 0;
  }
  return out;
}

// Forward pass written directly against the stored weights.
std::vector<double> scalar_logits(ClassifierModel& model, std::span<const double> x) {
  std::vector<double> h(x.begin(), x.end());
  const auto& layers = model.extractor().layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Dense& layer = layers[l];
    std::vector<double> next(layer.out_dim());
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      double s = layer.bias[o];
      for (std::size_t i = 0; i < layer.in_dim(); ++i) {
        s += h[i] * layer.weight(i, o);
      }
      const bool activate = l + 1 < layers.size() || model.extractor().activate_last();
      next[o] = activate && s <= 0.0 ? std::exp(s) - 1.0 : s;
    }
    h = std::move(next);
  }
  const Dense& head = model.head();
  std::vector<double> out(head.out_dim());
  for (std::size_t o = 0; o < head.out_dim(); ++o) {
    out[o] = head.bias[o];
    for (std::size_t i = 0; i < head.in_dim(); ++i) {
      out[o] += h[i] * head.weight(i, o);
    }
  }
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

struct ToyFixture {
  Dataset train;
  Dataset test;
  ClassifierModel model;
};

const ToyFixture& toy_fixture() {
  static const ToyFixture f = [] {
    ToyParams p;
    p.side = 8;
    p.train_counts = {400, 400};
    p.val_counts = {10, 10};
    p.test_counts = {200, 200};
    p.seed = 5;
    const ToySplits s = synth_toy_dataset(p);
    ClassifierConfig cfg;
    cfg.input_dim = 64;
    cfg.hidden_dims = {64};
    cfg.embed_dim = 16;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 32;
    cfg.epochs = 80;
    cfg.seed = 3;
    ClassifierModel m = train_classifier(s.train.data, cfg);
    return ToyFixture{s.train.data, s.test.data, std::move(m)};
  }();
  return f;
}

}  // namespace

TEST_CASE("separable blobs: training and held-out accuracy against the logistic oracle") {
  const Dataset train = testing::blobs(100, 16, 1);
  const Dataset test = testing::blobs(100, 16, 2);
  const auto oracle = logistic_oracle(train, test.samples);
  REQUIRE(testing::accuracy(test.labels, oracle) >= 0.99);

  ClassifierTrainLog log;
  const ClassifierModel model = train_classifier(train, testing::blob_classifier(16), &log);
  CHECK(model.trained());
  CHECK(log.final_loss < log.initial_loss);
  CHECK(testing::accuracy(train.labels, predict_labels(model, train.samples)) >= 0.99);
  CHECK(testing::accuracy(test.labels, predict_labels(model, test.samples)) >= 0.95);
}

TEST_CASE("training errors") {
  Dataset single = testing::blobs(10, 16, 1);
  for (int& l : single.labels) {
    l = 0;
  }
  CHECK_THROWS_AS(train_classifier(single, testing::blob_classifier(16)), TrainingDataError);

  ClassifierConfig bad = testing::blob_classifier(16);
  bad.embed_dim = 16;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = testing::blob_classifier(16);
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);

  ClassifierModel fresh(testing::blob_classifier(16));
  CHECK_THROWS_AS(predict(fresh, Tensor({16}, 0.5)), StateError);
}

TEST_CASE("same seed gives identical parameters") {
  const Dataset train = testing::blobs(40, 16, 3);
  const auto a = train_classifier(train, testing::blob_classifier(16, 11)).serialize();
  const auto b = train_classifier(train, testing::blob_classifier(16, 11)).serialize();
  const auto c = train_classifier(train, testing::blob_classifier(16, 12)).serialize();
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("embeddings are unit length and deterministic") {
  const Dataset train = testing::blobs(40, 16, 4);
  const ClassifierModel model = train_classifier(train, testing::blob_classifier(16));
  for (std::size_t i = 0; i < 10; ++i) {
    const Tensor x = take_rows(train.samples, std::vector<std::size_t>{i});
    const Embedding e = extract_embedding(model, x);
    double norm = 0.0;
    for (double v : e.values) {
      norm += v * v;
    }
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(extract_embedding(model, x).values == e.values);
  }
}

TEST_CASE("probabilities form a distribution") {
  const Dataset train = testing::blobs(40, 16, 4);
  const ClassifierModel model = train_classifier(train, testing::blob_classifier(16));
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = testing::random_tensor({16}, rng, 0.0, 1.0);
    const Prediction p = predict(model, x);
    double total = 0.0;
    for (double v : p.probabilities) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
}

TEST_CASE("equal logits break toward class 0") {
  ClassifierConfig cfg = testing::blob_classifier(16);
  cfg.num_classes = 3;
  ClassifierModel model(cfg);
  for (double& v : model.head().weight.data()) {
    v = 0.0;
  }
  for (double& v : model.head().bias.data()) {
    v = 0.25;
  }
  model.mark_trained();
  const Prediction p = predict(model, Tensor({16}, 0.4));
  CHECK(p.label == 0);
  CHECK(p.probabilities[1] == p.probabilities[0]);
}

TEST_CASE("zero raw embedding is degenerate") {
  ClassifierModel model(testing::blob_classifier(16));
  for (Tensor* t : model.extractor().parameters()) {
    for (double& v : t->data()) {
      v = 0.0;
    }
  }
  model.mark_trained();
  CHECK_THROWS_AS(extract_embedding(model, Tensor({16}, 0.5)), DegeneracyError);
}

TEST_CASE("reported loss equals a scalar evaluation of the mean negative log-probability") {
  const Dataset train = testing::blobs(30, 16, 6);
  ClassifierModel model = train_classifier(train, testing::blob_classifier(16));
  double total = 0.0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto logits = scalar_logits(model, train.samples.row(i));
    double denom = 0.0;
    for (double l : logits) {
      denom += std::exp(l);
    }
    total += -std::log(std::exp(logits[static_cast<std::size_t>(train.labels[i])]) / denom);
  }
  const double expected = total / static_cast<double>(train.size());
  CHECK(std::abs(model.loss(train) - expected) <= 1e-10 * std::abs(expected));
}

TEST_CASE("frozen models refuse further training") {
  const Dataset train = testing::blobs(20, 16, 6);
  ClassifierModel model = train_classifier(train, testing::blob_classifier(16));
  model.freeze();
  CHECK_THROWS_AS(continue_training(model, train, 1, 0.99, 1), StateError);
}

TEST_CASE("model files round-trip") {
  const Dataset train = testing::blobs(20, 16, 8);
  const ClassifierModel model = train_classifier(train, testing::blob_classifier(16));
  const auto bytes = model.serialize();
  const ClassifierModel back = ClassifierModel::from_file(decode_model(bytes));
  CHECK(back.trained());
  CHECK(back.serialize() == bytes);
  CHECK(back.logits(train.samples).same_values(model.logits(train.samples)));

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_model(truncated), FormatError);
  auto wrong_magic = bytes;
  wrong_magic[0] = 'X';
  CHECK_THROWS_AS(decode_model(wrong_magic), FormatError);
}

TEST_CASE("toy data: embedding space keeps the class structure") {
  const ToyFixture& f = toy_fixture();
  const auto pred = predict_labels(f.model, f.test.samples);
  const double full = testing::accuracy(f.test.labels, pred);
  CHECK(full >= 0.9);

  const Tensor train_z = extract_embeddings(f.model, f.train.samples);
  const CentroidSet centroids = compute_centroids(train_z, f.train.labels, 2);
  const Tensor test_z = extract_embeddings(f.model, f.test.samples);
  const auto nearest = assign_embeddings(test_z, centroids, SimilarityMetric::negative_euclidean());
  CHECK(testing::accuracy(f.test.labels, nearest.labels) >= 0.9 * full);

  double same = 0.0, cross = 0.0;
  std::size_t n_same = 0, n_cross = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    for (std::size_t j = i + 1; j < 100; ++j) {
      const double c = cosine(test_z.row(i), test_z.row(j));
      if (f.test.labels[i] == f.test.labels[j]) {
        same += c;
        ++n_same;
      } else {
        cross += c;
        ++n_cross;
      }
    }
  }
  CHECK(cross / static_cast<double>(n_cross) < same / static_cast<double>(n_same));
}
