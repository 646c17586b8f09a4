#include "cflow/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <numeric>
#include <thread>

#include "cflow/condflow.hpp"
#include "cflow/errors.hpp"
#include "cflow/eval.hpp"
#include "cflow/random.hpp"
#include "cflow/report.hpp"
#include "cflow/semisup.hpp"
#include "cflow/toy.hpp"

namespace cflow {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

json base_entry(const char* kind, std::uint64_t seed) {
  return {{"kind", kind},
          {"seed", seed},
          {"status", "ok"},
          {"metrics", json::object()},
          {"frechet", json::object()},
          {"timings", json::object()}};
}

// Runs named stages, timing each; the first failure marks the entry.
class Stages {
 public:
  explicit Stages(json& entry) : entry_(entry), start_(Clock::now()) {}

  template <typename Fn>
  void run(const std::string& name, Fn&& fn) {
    current_ = name;
    const auto t0 = Clock::now();
    fn();
    entry_["timings"][name + "_s"] = std::chrono::duration<double>(Clock::now() - t0).count();
  }

  void fail(const std::string& what) {
    entry_["status"] = "failed";
    entry_["failed_stage"] = current_;
    entry_["error"] = what;
  }

  void finish() { entry_["timings"]["total_s"] = std::chrono::duration<double>(Clock::now() - start_).count(); }

 private:
  json& entry_;
  Clock::time_point start_;
  std::string current_ = "setup";
};

template <typename Body>
void guarded(json& entry, Body&& body) {
  Stages stages(entry);
  try {
    body(stages);
  } catch (const std::exception& e) {
    stages.fail(e.what());
  }
  stages.finish();
}

ClassifierConfig classifier_for(const ExperimentSetup& s, const Dataset& train, std::uint64_t seed) {
  ClassifierConfig c = s.classifier;
  c.input_dim = train.dim();
  c.num_classes = train.num_classes;
  c.seed = seed;
  return c;
}

FlowModel fit_flow(const ExperimentSetup& s, const Dataset& train, const ClassifierModel& clf, std::uint64_t seed,
                   json& metrics) {
  FlowConfig fc = s.flow;
  fc.data_dim = train.dim();
  fc.cond_dim = clf.config().embed_dim;
  fc.seed = Rng::derive(seed, 0);
  FlowTrainConfig tc = s.flow_train;
  tc.seed = Rng::derive(seed, 1);
  FlowTrainLog log;
  FlowModel flow = train_flow(FlowModel(fc), train, clf, tc, &log);
  metrics["flow_nll"] = {{"initial", log.initial_nll}, {"final", log.final_nll}};
  return flow;
}

double agreement(const ClassifierModel& clf, const Dataset& data) {
  const auto predicted = predict_labels(clf, data.samples);
  std::size_t same = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    same += predicted[i] == data.labels[i] ? 1 : 0;
  }
  return static_cast<double>(same) / static_cast<double>(predicted.size());
}

json evaluate(const ClassifierModel& clf, const Dataset& test, std::size_t resamples, std::uint64_t seed) {
  const auto predicted = predict_labels(clf, test.samples);
  const auto cm = ConfusionMatrix::from_labels(test.labels, predicted, test.num_classes);
  json out = to_json(metrics(cm));
  out["bootstrap"] = to_json(bootstrap(test.labels, predicted, test.num_classes, resamples, seed));
  return out;
}

Dataset halve(const Dataset& d, bool second) {
  const std::size_t half = d.size() / 2;
  std::vector<std::size_t> idx(second ? d.size() - half : half);
  std::iota(idx.begin(), idx.end(), second ? half : 0);
  return d.subset(idx);
}

std::vector<double> values_at(const json& entries, const std::function<const json*(const json&)>& pick) {
  std::vector<double> out;
  for (const auto& e : entries) {
    if (e.value("status", "") != "ok") {
      continue;
    }
    if (const json* v = pick(e); v != nullptr && v->is_number()) {
      out.push_back(v->get<double>());
    }
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json describe_values(const std::vector<double>& v) {
  if (v.empty()) {
    return {{"count", 0}};
  }
  const Summary s = summarize(v);
  return {{"count", v.size()}, {"mean", s.mean}, {"std", s.std}, {"median", median(v)}};
}

const json* path(const json& e, std::initializer_list<const char*> keys) {
  const json* cur = &e;
  for (const char* k : keys) {
    if (!cur->is_object() || !cur->contains(k)) {
      return nullptr;
    }
    cur = &(*cur)[k];
  }
  return cur;
}

// Mean and sample standard deviation of the union of equally sized bootstrap
// samples, from their per-sample means and standard deviations.
json pooled(const std::vector<std::pair<double, double>>& parts, std::size_t resamples) {
  if (parts.empty()) {
    return {{"count", 0}};
  }
  const double b = static_cast<double>(resamples);
  double grand = 0.0;
  for (const auto& [m, s] : parts) {
    grand += m;
  }
  grand /= static_cast<double>(parts.size());
  double ss = 0.0;
  for (const auto& [m, s] : parts) {
    ss += (b - 1.0) * s * s + b * (m - grand) * (m - grand);
  }
  const double n = b * static_cast<double>(parts.size());
  return {{"count", parts.size()}, {"mean", grand}, {"std", std::sqrt(ss / (n - 1.0))}};
}

json run_seeds(const ExperimentSetup& setup, const std::function<json(std::uint64_t)>& work) {
  const std::size_t n = setup.seeds.size();
  std::vector<json> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        results[i] = work(setup.seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(setup.jobs, n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) {
    pool.emplace_back(worker);
  }
  worker();
  for (auto& t : pool) {
    t.join();
  }
  json merged = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) {
      std::rethrow_exception(errors[i]);
    }
    if (results[i].is_array()) {
      for (auto& e : results[i]) {
        merged.push_back(std::move(e));
      }
    } else {
      merged.push_back(std::move(results[i]));
    }
  }
  return merged;
}

}  // namespace

SeedData load_seed_data(const ExperimentSetup& setup, std::uint64_t seed,
                        const std::vector<std::size_t>* train_counts) {
  SeedData out;
  if (!setup.train_file.empty()) {
    DatasetFile train = load_dataset(setup.train_file);
    DatasetFile test = load_dataset(setup.test_file);
    if (train.data.dim() != test.data.dim()) {
      throw ValidationError("training and test files differ in image size");
    }
    out.side = train.manifest.side;
    out.train = std::move(train.data);
    out.test = std::move(test.data);
    return out;
  }
  ToyParams p = setup.data;
  p.seed = seed;
  if (train_counts != nullptr) {
    p.train_counts = *train_counts;
  }
  ToySplits splits = synth_toy_dataset(p);
  out.side = p.side;
  out.train = std::move(splits.train.data);
  out.test = std::move(splits.test.data);
  return out;
}

std::size_t balancing_count(std::size_t majority, std::size_t minority, double target) {
  if (!(target > 0.0 && target < 1.0)) {
    throw ContractError("target balance must lie in (0, 1)");
  }
  const double current = static_cast<double>(minority) / static_cast<double>(majority + minority);
  const auto wanted = static_cast<std::size_t>(std::llround(target / (1.0 - target) * static_cast<double>(majority)));
  if (wanted < minority) {
    throw ContractError("target balance " + std::to_string(target) + " is below the current share " +
                        std::to_string(current));
  }
  return wanted - minority;
}

json compare_seed(const ExperimentSetup& setup, std::uint64_t seed) {
  json e = base_entry("compare", seed);
  guarded(e, [&](Stages& st) {
    SeedData d;
    st.run("data", [&] { d = load_seed_data(setup, seed); });
    json& m = e["metrics"];
    m["train_size"] = d.train.size();
    m["test_size"] = d.test.size();

    std::optional<ClassifierModel> real;
    st.run("real_classifier", [&] {
      real.emplace(train_classifier(d.train, classifier_for(setup, d.train, Rng::derive(seed, 11))));
      real->freeze();
    });
    std::optional<FlowModel> flow;
    st.run("flow", [&] { flow.emplace(fit_flow(setup, d.train, *real, Rng::derive(seed, 12), m)); });
    Dataset synthetic;
    st.run("generate", [&] {
      synthetic = generate_batch(*flow, *real, d.train, setup.per_ref, setup.temperature, Rng::derive(seed, 13));
      m["synthetic_size"] = synthetic.size();
      m["condition_preservation"] = agreement(*real, synthetic);
    });
    std::optional<ClassifierModel> synth;
    st.run("synthetic_classifier", [&] {
      synth.emplace(train_classifier(synthetic, classifier_for(setup, synthetic, Rng::derive(seed, 14))));
      synth->freeze();
    });
    st.run("evaluate", [&] {
      m["real"] = evaluate(*real, d.test, setup.bootstrap, Rng::derive(seed, 15));
      m["synthetic"] = evaluate(*synth, d.test, setup.bootstrap, Rng::derive(seed, 15));
      m["accuracy_gap"] = m["real"]["accuracy"].get<double>() - m["synthetic"]["accuracy"].get<double>();
    });
    st.run("frechet", [&] {
      const FrechetStats test_stats = embed_stats(*real, d.test);
      e["frechet"]["real_vs_synthetic"] = frechet_distance(test_stats, embed_stats(*real, synthetic));
      e["frechet"]["real_vs_real"] =
          frechet_distance(embed_stats(*real, halve(d.test, false)), embed_stats(*real, halve(d.test, true)));
    });
  });
  return e;
}

json label_scarcity_seed(const ExperimentSetup& setup, std::uint64_t seed) {
  json entries = json::array();
  SeedData d;
  std::exception_ptr data_error;
  try {
    d = load_seed_data(setup, seed);
  } catch (...) {
    data_error = std::current_exception();
  }
  for (std::size_t g = 0; g < setup.label_grid.size(); ++g) {
    json e = base_entry("label_scarcity", seed);
    e["metrics"]["budget"] = setup.label_grid[g];
    guarded(e, [&](Stages& st) {
      json& m = e["metrics"];
      st.run("data", [&] {
        if (data_error) {
          std::rethrow_exception(data_error);
        }
      });
      LabelSplit split;
      st.run("select", [&] {
        const std::size_t count = LabelBudget::parse(setup.label_grid[g]).resolve(d.train.size());
        split = select_labeled(d.train, count, setup.preserve_ratio, Rng::derive(seed, 100 + g));
        m["labeled_count"] = split.labeled_index.size();
        m["unlabeled_count"] = split.unlabeled_index.size();
      });
      std::optional<SemisupResult> semi;
      st.run("label_propagation", [&] {
        SemisupConfig sc = setup.semisup;
        sc.classifier = classifier_for(setup, d.train, Rng::derive(seed, 200 + g));
        semi.emplace(alternate_train(split.state, sc));
        semi->model.freeze();
        std::size_t right = 0;
        const auto& presumed = semi->state.presumptive;
        for (std::size_t i = 0; presumed && i < presumed->size(); ++i) {
          right += (*presumed)[i] == split.unlabeled_truth[i] ? 1 : 0;
        }
        m["presumptive_accuracy"] =
            split.unlabeled_truth.empty()
                ? 1.0
                : static_cast<double>(right) / static_cast<double>(split.unlabeled_truth.size());
        m["iterations"] = semi->history.size();
        m["converged"] = semi->converged;
        json changes = json::array();
        for (const auto& rec : semi->history) {
          changes.push_back(rec.changed_fraction);
        }
        m["changed_fraction"] = changes;
        m["semisup_classifier"] = to_json(metrics(confusion(semi->model, d.test)));
      });
      // Training pool with the labels the scheme believes in.
      Dataset believed = d.train;
      for (std::size_t i = 0; i < split.unlabeled_index.size(); ++i) {
        believed.labels[split.unlabeled_index[i]] = (*semi->state.presumptive)[i];
      }
      std::optional<FlowModel> flow;
      st.run("flow", [&] { flow.emplace(fit_flow(setup, believed, semi->model, Rng::derive(seed, 300 + g), m)); });
      Dataset synthetic;
      st.run("generate", [&] {
        synthetic = generate_batch(*flow, semi->model, believed, setup.per_ref, setup.temperature,
                                   Rng::derive(seed, 400 + g));
      });
      std::optional<ClassifierModel> eval_clf;
      st.run("synthetic_classifier", [&] {
        eval_clf.emplace(train_classifier(synthetic, classifier_for(setup, synthetic, Rng::derive(seed, 500 + g))));
        eval_clf->freeze();
      });
      st.run("evaluate", [&] {
        m["synthetic"] = evaluate(*eval_clf, d.test, setup.bootstrap, Rng::derive(seed, 600 + g));
        e["frechet"]["real_vs_synthetic"] =
            frechet_distance(embed_stats(semi->model, d.test), embed_stats(semi->model, synthetic));
      });
    });
    entries.push_back(std::move(e));
  }
  return entries;
}

json augmentation_seed(const ExperimentSetup& setup, std::uint64_t seed) {
  json e = base_entry("augmentation", seed);
  guarded(e, [&](Stages& st) {
    json& m = e["metrics"];
    SeedData d;
    st.run("data", [&] {
      const std::size_t majority = setup.data.train_counts[0];
      const auto minority = static_cast<std::size_t>(
          std::llround(setup.minority_fraction / (1.0 - setup.minority_fraction) * static_cast<double>(majority)));
      const std::vector<std::size_t> counts{majority, minority};
      d = load_seed_data(setup, seed, &counts);
      const auto have = d.train.class_counts();
      m["majority_count"] = have[0];
      m["minority_count"] = have[1];
    });
    const auto have = d.train.class_counts();
    const ClassifierConfig cc = classifier_for(setup, d.train, Rng::derive(seed, 21));

    std::optional<ClassifierModel> base;
    st.run("baseline_classifier", [&] {
      base.emplace(train_classifier(d.train, cc));
      base->freeze();
      m["baseline"] = evaluate(*base, d.test, setup.bootstrap, Rng::derive(seed, 22));
    });
    std::optional<FlowModel> flow;
    st.run("flow", [&] { flow.emplace(fit_flow(setup, d.train, *base, Rng::derive(seed, 23), m)); });

    std::vector<std::size_t> minority_index;
    for (std::size_t i = 0; i < d.train.size(); ++i) {
      if (d.train.labels[i] == 1) {
        minority_index.push_back(i);
      }
    }
    m["augmented"] = json::array();
    for (std::size_t t = 0; t < setup.target_balance.size(); ++t) {
      const double target = setup.target_balance[t];
      json row{{"target_balance", target}};
      st.run("augment_" + std::to_string(t), [&] {
        const std::size_t needed = balancing_count(have[0], have[1], target);
        row["synthetic_count"] = needed;
        Dataset augmented = d.train;
        if (needed > 0) {
          std::vector<std::size_t> refs(needed);
          for (std::size_t i = 0; i < needed; ++i) {
            refs[i] = minority_index[i % minority_index.size()];
          }
          const Dataset synthetic = generate_batch(*flow, *base, d.train.subset(refs), 1, setup.temperature,
                                                   Rng::derive(seed, 30 + t));
          augmented = concat(d.train, synthetic);
          if (synthetic.size() >= 2 && t == 0) {
            Dataset real_minority = d.train.subset(minority_index);
            e["frechet"]["minority_real_vs_synthetic"] =
                frechet_distance(embed_stats(*base, real_minority), embed_stats(*base, synthetic));
          }
        }
        ClassifierModel clf = train_classifier(augmented, cc);
        clf.freeze();
        row["metrics"] = evaluate(clf, d.test, setup.bootstrap, Rng::derive(seed, 22));
        row["minority_recall_delta"] = row["metrics"]["per_class"][1]["recall"].get<double>() -
                                       m["baseline"]["per_class"][1]["recall"].get<double>();
      });
      m["augmented"].push_back(std::move(row));
    }
  });
  return e;
}

json aggregate_compare(const json& experiments) {
  auto at = [&](std::initializer_list<const char*> keys) {
    return values_at(experiments, [keys](const json& e) { return path(e, keys); });
  };
  return {{"runs", experiments.size()},
          {"failed", experiments.size() - at({"metrics", "accuracy_gap"}).size()},
          {"real_accuracy", describe_values(at({"metrics", "real", "accuracy"}))},
          {"synthetic_accuracy", describe_values(at({"metrics", "synthetic", "accuracy"}))},
          {"real_macro_f1", describe_values(at({"metrics", "real", "macro_f1"}))},
          {"synthetic_macro_f1", describe_values(at({"metrics", "synthetic", "macro_f1"}))},
          {"accuracy_gap", describe_values(at({"metrics", "accuracy_gap"}))},
          {"condition_preservation", describe_values(at({"metrics", "condition_preservation"}))},
          {"frechet_real_vs_synthetic", describe_values(at({"frechet", "real_vs_synthetic"}))},
          {"frechet_real_vs_real", describe_values(at({"frechet", "real_vs_real"}))}};
}

json aggregate_label_scarcity(const json& experiments) {
  std::vector<std::string> order;
  for (const auto& e : experiments) {
    const std::string b = e["metrics"].value("budget", "");
    if (std::find(order.begin(), order.end(), b) == order.end()) {
      order.push_back(b);
    }
  }
  json budgets = json::array();
  struct Point {
    double labeled, f1_mean, f1_std;
  };
  std::vector<Point> points;
  for (const auto& b : order) {
    std::vector<std::pair<double, double>> f1, acc;
    std::size_t resamples = 0;
    json members = json::array();
    double labeled = 0.0;
    for (const auto& e : experiments) {
      if (e["metrics"].value("budget", "") != b || e.value("status", "") != "ok") {
        continue;
      }
      const json& boot = e["metrics"]["synthetic"]["bootstrap"];
      resamples = boot["resamples"].get<std::size_t>();
      f1.emplace_back(boot["macro_f1"]["mean"].get<double>(), boot["macro_f1"]["std"].get<double>());
      acc.emplace_back(boot["accuracy"]["mean"].get<double>(), boot["accuracy"]["std"].get<double>());
      labeled = e["metrics"]["labeled_count"].get<double>();
      members.push_back(e);
    }
    auto pick = [&](std::initializer_list<const char*> keys) {
      return describe_values(values_at(members, [keys](const json& e) { return path(e, keys); }));
    };
    json row{{"budget", b},
             {"labeled_count", labeled},
             {"runs", members.size()},
             {"macro_f1", pooled(f1, resamples)},
             {"accuracy", pooled(acc, resamples)},
             {"presumptive_accuracy", pick({"metrics", "presumptive_accuracy"})},
             {"iterations", pick({"metrics", "iterations"})}};
    if (!f1.empty()) {
      points.push_back({labeled, row["macro_f1"]["mean"].get<double>(), row["macro_f1"]["std"].get<double>()});
    }
    budgets.push_back(std::move(row));
  }
  json out{{"runs", experiments.size()}, {"budgets", budgets}};
  if (points.size() >= 2) {
    std::stable_sort(points.begin(), points.end(), [](const Point& a, const Point& b) { return a.labeled < b.labeled; });
    bool monotone = true;
    for (std::size_t i = 1; i < points.size(); ++i) {
      monotone = monotone && points[i].f1_mean >= points[i - 1].f1_mean;
    }
    const Point& low = points.front();
    const Point& high = points.back();
    out["trend"] = {{"smallest_macro_f1", low.f1_mean},
                    {"largest_macro_f1", high.f1_mean},
                    {"smallest_std", low.f1_std},
                    {"largest_std", high.f1_std},
                    {"macro_f1_non_decreasing", high.f1_mean >= low.f1_mean},
                    {"macro_f1_monotone_over_grid", monotone},
                    {"std_shrinks", low.f1_std >= high.f1_std}};
  }
  return out;
}

json aggregate_augmentation(const json& experiments) {
  std::vector<double> targets;
  for (const auto& e : experiments) {
    if (e.value("status", "") != "ok") {
      continue;
    }
    for (const auto& row : e["metrics"]["augmented"]) {
      const double t = row["target_balance"].get<double>();
      if (std::find(targets.begin(), targets.end(), t) == targets.end()) {
        targets.push_back(t);
      }
    }
  }
  json rows = json::array();
  for (double t : targets) {
    std::vector<double> delta, recall, f1;
    for (const auto& e : experiments) {
      if (e.value("status", "") != "ok") {
        continue;
      }
      for (const auto& row : e["metrics"]["augmented"]) {
        if (row["target_balance"].get<double>() == t && row.contains("minority_recall_delta")) {
          delta.push_back(row["minority_recall_delta"].get<double>());
          recall.push_back(row["metrics"]["per_class"][1]["recall"].get<double>());
          f1.push_back(row["metrics"]["macro_f1"].get<double>());
        }
      }
    }
    rows.push_back({{"target_balance", t},
                    {"minority_recall_delta", describe_values(delta)},
                    {"minority_recall", describe_values(recall)},
                    {"macro_f1", describe_values(f1)}});
  }
  auto base = [&](std::initializer_list<const char*> keys) {
    return describe_values(values_at(experiments, [keys](const json& e) { return path(e, keys); }));
  };
  json baseline_recall = json::array();
  std::vector<double> br;
  for (const auto& e : experiments) {
    if (e.value("status", "") == "ok") {
      br.push_back(e["metrics"]["baseline"]["per_class"][1]["recall"].get<double>());
    }
  }
  return {{"runs", experiments.size()},
          {"baseline_minority_recall", describe_values(br)},
          {"baseline_macro_f1", base({"metrics", "baseline", "macro_f1"})},
          {"targets", rows}};
}

json run_compare(const ExperimentSetup& setup, const std::string& config_hash) {
  json entries = run_seeds(setup, [&](std::uint64_t seed) { return compare_seed(setup, seed); });
  json agg = aggregate_compare(entries);
  return make_report(config_hash, std::move(entries), std::move(agg));
}

json run_label_scarcity(const ExperimentSetup& setup, const std::string& config_hash) {
  json entries = run_seeds(setup, [&](std::uint64_t seed) { return label_scarcity_seed(setup, seed); });
  json agg = aggregate_label_scarcity(entries);
  return make_report(config_hash, std::move(entries), std::move(agg));
}

json run_augmentation(const ExperimentSetup& setup, const std::string& config_hash) {
  json entries = run_seeds(setup, [&](std::uint64_t seed) { return augmentation_seed(setup, seed); });
  json agg = aggregate_augmentation(entries);
  return make_report(config_hash, std::move(entries), std::move(agg));
}

json run_experiment(const ExperimentSetup& setup, const std::string& config_hash) {
  if (setup.kind == "compare") {
    return run_compare(setup, config_hash);
  }
  if (setup.kind == "label_scarcity") {
    return run_label_scarcity(setup, config_hash);
  }
  if (setup.kind == "augmentation") {
    return run_augmentation(setup, config_hash);
  }
  throw ParameterError("unknown experiment kind '" + setup.kind + "'");
}

}  // namespace cflow
