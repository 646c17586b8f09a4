#include <cmath>
#include <numbers>
#include <numeric>

#include "doctest.h"

#include "cflow/condflow.hpp"
#include "cflow/errors.hpp"
#include "cflow/toy.hpp"
#include "fixtures.hpp"
#include "flow_oracles.hpp"

using namespace cflow;
using testing::log_abs_det;
using testing::numeric_jacobian;
using testing::randomize;
using testing::unit_rows;

namespace {

FlowConfig small_flow(std::size_t dim, std::size_t cond, std::uint64_t seed, std::size_t blocks = 2) {
  FlowConfig cfg;
  cfg.data_dim = dim;
  cfg.cond_dim = cond;
  cfg.blocks = blocks;
  cfg.hidden = 8;
  cfg.seed = seed;
  return cfg;
}

struct TrainedFixture {
  Dataset train;
  Dataset test;
  ClassifierModel classifier;
  std::vector<std::uint8_t> classifier_bytes;
  FlowModel flow;
  FlowTrainLog log;
};

FlowTrainConfig fixture_train_config() {
  FlowTrainConfig t;
  t.learning_rate = 1e-3;
  t.batch_size = 64;
  t.epochs = 40;
  t.warmup_epochs = 2;
  t.seed = 4;
  return t;
}

TrainedFixture& trained() {
  static TrainedFixture f = [] {
    ToyParams p;
    p.side = 8;
    p.train_counts = {300, 300};
    p.val_counts = {10, 10};
    p.test_counts = {100, 100};
    p.seed = 9;
    const ToySplits s = synth_toy_dataset(p);
    ClassifierConfig cc;
    cc.input_dim = 64;
    cc.hidden_dims = {64};
    cc.embed_dim = 16;
    cc.learning_rate = 3e-3;
    cc.batch_size = 32;
    cc.epochs = 80;
    cc.seed = 1;
    ClassifierModel classifier = train_classifier(s.train.data, cc);
    classifier.freeze();
    const auto bytes = classifier.serialize();
    FlowConfig fc;
    fc.data_dim = 64;
    fc.cond_dim = 16;
    fc.hidden = 32;
    fc.seed = 2;
    FlowTrainLog log;
    FlowModel flow = train_flow(FlowModel(fc), s.train.data, classifier, fixture_train_config(), &log);
    return TrainedFixture{s.train.data, s.test.data, std::move(classifier), bytes, std::move(flow), log};
  }();
  return f;
}

}  // namespace

TEST_CASE("fresh model is a pure permutation") {
  const FlowModel model(small_flow(6, 3, 1));
  Rng rng(1);
  const Tensor x = testing::random_tensor({5, 6}, rng);
  const Tensor z = unit_rows(5, 3, rng);
  const FlowForward out = forward(model, x, z);

  std::vector<std::size_t> order(6);
  std::iota(order.begin(), order.end(), 0);
  for (const FlowStep& step : model.steps()) {
    if (const auto* p = std::get_if<Permutation>(&step)) {
      std::vector<std::size_t> next(6);
      for (std::size_t i = 0; i < 6; ++i) {
        next[i] = order[p->order[i]];
      }
      order = next;
    }
  }
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(out.log_det[r] == 0.0);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(out.noise(r, i) == x(r, order[i]));
    }
  }
  CHECK(inverse(model, out.noise, z).same_values(x));
}

TEST_CASE("two-dimensional coupling with a constant log-scale") {
  FlowConfig cfg = small_flow(2, 1, 0, 1);
  Rng rng(0);
  CouplingLayer layer({0}, {1}, 1, {4}, 2.0, rng);
  Dense& out = layer.scale_net().layers().back();
  for (double& v : out.weight.data()) {
    v = 0.0;
  }
  out.bias[0] = 2.0 * std::atanh(0.5 / 2.0);  // bounded log-scale of exactly 0.5
  FlowModel model(cfg, {layer});

  const Tensor x = Tensor::matrix({{0.3, -1.2}});
  const Tensor z = Tensor::matrix({{1.0}});
  const FlowForward f = forward(model, x, z);
  CHECK(f.noise(0, 0) == 0.3);
  CHECK(f.noise(0, 1) == doctest::Approx(std::exp(0.5) * -1.2).epsilon(1e-14));
  CHECK(f.log_det[0] == doctest::Approx(0.5).epsilon(1e-14));
  const Tensor back = inverse(model, f.noise, z);
  CHECK(back(0, 1) == doctest::Approx(-1.2).epsilon(1e-15));
}

TEST_CASE("log-determinant agrees with a numeric Jacobian") {
  std::size_t cases = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    FlowModel model(small_flow(6, 3, seed));
    randomize(model, 100 + seed);
    Rng rng(seed);
    for (int trial = 0; trial < 6; ++trial) {
      const Tensor x = testing::random_tensor({1, 6}, rng);
      const Tensor z = unit_rows(1, 3, rng);
      const double analytic = forward(model, x, z).log_det[0];
      const double numeric = log_abs_det(numeric_jacobian(model, x, z));
      CHECK(std::abs(analytic - numeric) <= 1e-5 * std::max(1.0, std::abs(numeric)));
      ++cases;
    }
  }
  CHECK(cases >= 50);
}

TEST_CASE("log-scales stay within the bound") {
  FlowModel model(small_flow(6, 3, 4));
  randomize(model, 5, 20.0);
  Rng rng(3);
  const Tensor x = testing::random_tensor({50, 6}, rng, -3.0, 3.0);
  const Tensor z = unit_rows(50, 3, rng);
  const std::size_t couplings = 2 * model.config().blocks;
  for (double ld : forward(model, x, z).log_det) {
    CHECK(std::abs(ld) <= couplings * 3 * 2.0 + 1e-12);  // three transformed coordinates per coupling
  }
}

TEST_CASE("random round-trips are exact to float64 precision") {
  FlowModel model(small_flow(10, 4, 7, 4));
  randomize(model, 8);
  Rng rng(9);
  const Tensor x = testing::random_tensor({1000, 10}, rng, -2.0, 2.0);
  const Tensor z = unit_rows(1000, 4, rng);
  const Tensor back = inverse(model, forward(model, x, z).noise, z);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, std::abs(back[i] - x[i]));
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("likelihood values") {
  const FlowModel model(small_flow(4, 2, 1));
  const double nll = negative_log_likelihood(model, Tensor({1, 4}), Tensor::matrix({{1.0, 0.0}})).item();
  CHECK(nll == doctest::Approx(2.0 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(nll == doctest::Approx(3.6758).epsilon(1e-4));

  FlowModel tiny(small_flow(2, 2, 3, 1));
  randomize(tiny, 4);
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = testing::random_tensor({1, 2}, rng);
    const Tensor z = unit_rows(1, 2, rng);
    const Tensor nu = forward(tiny, x, z).noise;
    const double density = 0.5 * (nu[0] * nu[0] + nu[1] * nu[1]) + std::log(2.0 * std::numbers::pi) -
                           log_abs_det(numeric_jacobian(tiny, x, z));
    const double value = negative_log_likelihood(tiny, x, z).item();
    CHECK(std::abs(value - density) <= 1e-5 * std::abs(density));
  }

  CHECK_THROWS_AS(negative_log_likelihood(model, Tensor({3, 4}), Tensor({2, 2})), ContractError);
}

TEST_CASE("likelihood gradient through the couplings matches finite differences") {
  FlowModel model(small_flow(4, 2, 11, 1));
  randomize(model, 12, 0.4);
  Rng rng(13);
  const Tensor x = testing::random_tensor({3, 4}, rng);
  const Tensor z = unit_rows(3, 2, rng);
  const auto params = model.parameters();
  for (Tensor* p : params) {
    p->zero_grad();
  }
  {
    Tape tape;
    tape.backward(negative_log_likelihood(tape, model, tape.constant(x), tape.constant(z), true));
  }
  double worst = 0.0;
  const double step = 1e-6;
  for (Tensor* p : params) {
    const std::vector<double> analytic = *p->grad();
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double keep = (*p)[i];
      (*p)[i] = keep + step;
      const double up = negative_log_likelihood(model, x, z).item();
      (*p)[i] = keep - step;
      const double down = negative_log_likelihood(model, x, z).item();
      (*p)[i] = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double scale = std::max(std::abs(analytic[i]), std::abs(numeric));
      if (scale > 1e-9) {
        worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
      }
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("learning-rate schedule warms up then decays") {
  FlowTrainConfig t;
  t.learning_rate = 1e-3;
  t.warmup_epochs = 4;
  t.lr_decay = 0.5;
  CHECK(t.rate_at(0) == doctest::Approx(2.5e-4));
  CHECK(t.rate_at(3) == doctest::Approx(1e-3));
  CHECK(t.rate_at(5) == doctest::Approx(5e-4));
}

TEST_CASE("training requires a frozen classifier") {
  const Dataset data = testing::blobs(20, 16, 1);
  ClassifierModel classifier = train_classifier(data, testing::blob_classifier(16));
  FlowModel flow(small_flow(16, 4, 1));
  CHECK_THROWS_AS(train_flow(flow, data, classifier, FlowTrainConfig{}), StateError);
  CHECK_THROWS_AS(generate(flow, classifier, Tensor({16}, 0.5), 0.9, 1), StateError);
}

TEST_CASE("training on toy data lowers the likelihood loss and leaves the classifier untouched") {
  TrainedFixture& f = trained();
  CHECK(f.flow.trained());
  CHECK(f.log.final_nll <= f.log.initial_nll - 0.1 * std::abs(f.log.initial_nll));
  CHECK(f.classifier.serialize() == f.classifier_bytes);
}

TEST_CASE("training is deterministic under a seed") {
  const Dataset data = testing::head(trained().train, 120);
  FlowConfig fc = trained().flow.config();
  FlowTrainConfig t = fixture_train_config();
  t.epochs = 3;
  const auto a = encode_model(train_flow(FlowModel(fc), data, trained().classifier, t).to_file());
  const auto b = encode_model(train_flow(FlowModel(fc), data, trained().classifier, t).to_file());
  CHECK(a == b);
}

TEST_CASE("trained flow round-trips and survives serialisation") {
  TrainedFixture& f = trained();
  const Tensor z = extract_embeddings(f.classifier, f.test.samples);
  const Tensor back = inverse(f.flow, forward(f.flow, f.test.samples, z).noise, z);
  double worst = 0.0;
  for (std::size_t i = 0; i < back.size(); ++i) {
    worst = std::max(worst, std::abs(back[i] - f.test.samples[i]));
  }
  CHECK(worst <= 1e-8);

  const auto bytes = encode_model(f.flow.to_file());
  const FlowModel loaded = FlowModel::from_file(decode_model(bytes));
  CHECK(loaded.trained());
  CHECK(encode_model(loaded.to_file()) == bytes);
  CHECK(forward(loaded, f.test.samples, z).noise.same_values(forward(f.flow, f.test.samples, z).noise));
  CHECK_THROWS_AS(ClassifierModel::from_file(decode_model(bytes)), ValidationError);
}

TEST_CASE("generation") {
  TrainedFixture& f = trained();
  const Tensor ref = take_rows(f.test.samples, std::vector<std::size_t>{0});
  const int ref_class = f.test.labels[0];

  const Tensor mode = generate(f.flow, f.classifier, ref, 0.0, 1);
  CHECK(mode.same_values(generate(f.flow, f.classifier, ref, 0.0, 99)));
  CHECK(generate(f.flow, f.classifier, ref, 0.9, 5).same_values(generate(f.flow, f.classifier, ref, 0.9, 5)));
  CHECK_THROWS_AS(generate(f.flow, f.classifier, ref, 1.6, 1), ParameterError);
  CHECK_THROWS_AS(generate(f.flow, f.classifier, ref, -0.1, 1), ParameterError);

  std::size_t kept = 0;
  double diff = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Tensor x = generate(f.flow, f.classifier, ref, 0.9, seed);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(x[i] >= 0.0);
      CHECK(x[i] <= 1.0);
      diff += std::abs(x[i] - ref[i]);
    }
    kept += predict(f.classifier, x).label == ref_class;
  }
  CHECK(kept >= 90);
  CHECK(diff > 0.0);
}

TEST_CASE("batch generation inherits labels") {
  TrainedFixture& f = trained();
  const Dataset refs = testing::head(f.test, 30);
  const Dataset one = generate_batch(f.flow, f.classifier, refs, 1, 0.9, 3);
  CHECK(one.size() == 30);
  CHECK(one.class_counts() == refs.class_counts());
  const Dataset three = generate_batch(f.flow, f.classifier, refs, 3, 0.9, 3);
  CHECK(three.size() == 90);
  for (std::size_t i = 0; i < 90; ++i) {
    CHECK(three.labels[i] == refs.labels[i / 3]);
  }
  CHECK(three.samples.same_values(generate_batch(f.flow, f.classifier, refs, 3, 0.9, 3).samples));
  CHECK_THROWS_AS(generate_batch(f.flow, f.classifier, refs, 0, 0.9, 3), ContractError);
  Dataset empty;
  CHECK_THROWS_AS(generate_batch(f.flow, f.classifier, empty, 1, 0.9, 3), ContractError);
}
