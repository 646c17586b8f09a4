#include "cflow/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "cflow/condflow.hpp"
#include "cflow/config.hpp"
#include "cflow/errors.hpp"
#include "cflow/eval.hpp"
#include "cflow/experiments.hpp"
#include "cflow/random.hpp"
#include "cflow/report.hpp"
#include "cflow/semisup.hpp"
#include "cflow/toy.hpp"

namespace cflow {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr int kUsage = 1;
constexpr int kFailure = 2;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::size_t jobs = 0;
};

struct Inputs {
  std::string data;
  std::string classifier;
  std::string flow;
  std::string refs;
  std::string input;
  std::string budget = "20";
  std::optional<std::size_t> per_ref;
  std::optional<double> temperature;
};

Config load_config(const Globals& g, const std::string& kind) {
  Config cfg = g.config.empty() ? Config() : Config::load(g.config);
  if (!kind.empty()) {
    cfg.set("experiment", kind);
  }
  if (g.seed) {
    cfg.set("seeds", std::to_string(*g.seed));
  }
  if (g.jobs > 0) {
    cfg.set("jobs", std::to_string(g.jobs));
  }
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) {
    throw Error("cannot write " + path.string());
  }
  f << j.dump(2) << "\n";
}

json single_entry(const std::string& kind, std::uint64_t seed, json metrics) {
  return json::array({{{"kind", kind},
                       {"seed", seed},
                       {"status", "ok"},
                       {"metrics", std::move(metrics)},
                       {"frechet", json::object()},
                       {"timings", json::object()}}});
}

std::uint64_t first_seed(const ExperimentSetup& s) { return s.seeds.front(); }

ClassifierModel load_classifier(const std::string& path) {
  return ClassifierModel::from_file(decode_model(read_file_bytes(path)));
}

int finish(const fs::path& out_dir, const json& report, std::ostream& out) {
  validate_report(report);
  const fs::path path = out_dir / "report.json";
  write_json(path, report);
  out << "report written to " << path.string() << "\n";
  for (const auto& e : report["experiments"]) {
    if (e["status"] != "ok") {
      out << "experiment (seed " << e["seed"] << ") failed at stage " << e["failed_stage"].get<std::string>()
          << ": " << e.value("error", "") << "\n";
      return kFailure;
    }
  }
  return 0;
}

int gen_data(const Globals& g, std::ostream& out) {
  const Config cfg = load_config(g, "");
  ExperimentSetup s = resolve(cfg);
  ToyParams p = s.data;
  p.seed = first_seed(s);
  const ToySplits splits = synth_toy_dataset(p);
  const fs::path dir(g.out);
  save_dataset(splits.train, dir / "train.cfds");
  save_dataset(splits.val, dir / "val.cfds");
  save_dataset(splits.test, dir / "test.cfds");
  json m{{"side", p.side},
         {"train", splits.train.manifest.class_counts},
         {"val", splits.val.manifest.class_counts},
         {"test", splits.test.manifest.class_counts}};
  return finish(dir, make_report(cfg.hash(), single_entry("gen-data", p.seed, m), json::object()), out);
}

int train_classifier_cmd(const Globals& g, const Inputs& in, std::ostream& out) {
  const Config cfg = load_config(g, "");
  const ExperimentSetup s = resolve(cfg);
  const DatasetFile data = load_dataset(in.data);
  ClassifierConfig cc = s.classifier;
  cc.input_dim = data.data.dim();
  cc.num_classes = data.data.num_classes;
  cc.seed = first_seed(s);
  ClassifierTrainLog log;
  ClassifierModel model = train_classifier(data.data, cc, &log);
  const fs::path dir(g.out);
  write_file_bytes(dir / "classifier.cflw", model.serialize());
  json m{{"initial_loss", log.initial_loss},
         {"final_loss", log.final_loss},
         {"train", to_json(metrics(confusion(model, data.data)))}};
  return finish(dir, make_report(cfg.hash(), single_entry("train-classifier", cc.seed, m), json::object()), out);
}

int train_flow_cmd(const Globals& g, const Inputs& in, std::ostream& out) {
  const Config cfg = load_config(g, "");
  const ExperimentSetup s = resolve(cfg);
  const DatasetFile data = load_dataset(in.data);
  ClassifierModel clf = load_classifier(in.classifier);
  clf.freeze();
  FlowConfig fc = s.flow;
  fc.data_dim = data.data.dim();
  fc.cond_dim = clf.config().embed_dim;
  fc.seed = Rng::derive(first_seed(s), 0);
  FlowTrainConfig tc = s.flow_train;
  tc.seed = Rng::derive(first_seed(s), 1);
  FlowTrainLog log;
  const FlowModel flow = train_flow(FlowModel(fc), data.data, clf, tc, &log);
  const fs::path dir(g.out);
  write_file_bytes(dir / "flow.cflw", encode_model(flow.to_file()));
  json m{{"initial_nll", log.initial_nll}, {"final_nll", log.final_nll}, {"epoch_nll", log.epoch_nll}};
  return finish(dir, make_report(cfg.hash(), single_entry("train-flow", first_seed(s), m), json::object()), out);
}

int generate_cmd(const Globals& g, const Inputs& in, std::ostream& out) {
  const Config cfg = load_config(g, "");
  const ExperimentSetup s = resolve(cfg);
  const DatasetFile refs = load_dataset(in.refs);
  const ClassifierModel clf = load_classifier(in.classifier);
  const FlowModel flow = FlowModel::from_file(decode_model(read_file_bytes(in.flow)));
  const double temperature = in.temperature.value_or(s.temperature);
  const std::size_t per_ref = in.per_ref.value_or(s.per_ref);
  DatasetFile synthetic;
  synthetic.data = generate_batch(flow, clf, refs.data, per_ref, temperature, first_seed(s));
  synthetic.manifest = describe(synthetic.data, "synthetic", refs.manifest.side, first_seed(s));
  synthetic.manifest.class_names = refs.manifest.class_names;
  synthetic.manifest.source = {{"generator", "flow"},
                               {"refs", in.refs},
                               {"temperature", temperature},
                               {"per_ref", per_ref}};
  const fs::path dir(g.out);
  save_dataset(synthetic, dir / "synthetic.cfds");
  json m{{"samples", synthetic.data.size()},
         {"class_counts", synthetic.manifest.class_counts},
         {"condition_preservation", metrics(confusion(clf, synthetic.data)).accuracy}};
  return finish(dir, make_report(cfg.hash(), single_entry("generate", first_seed(s), m), json::object()), out);
}

int label_prop_cmd(const Globals& g, const Inputs& in, std::ostream& out) {
  const Config cfg = load_config(g, "");
  const ExperimentSetup s = resolve(cfg);
  const DatasetFile data = load_dataset(in.data);
  const std::size_t count = LabelBudget::parse(in.budget).resolve(data.data.size());
  LabelSplit split = select_labeled(data.data, count, s.preserve_ratio, first_seed(s));
  SemisupConfig sc = s.semisup;
  sc.classifier.input_dim = data.data.dim();
  sc.classifier.num_classes = data.data.num_classes;
  sc.classifier.seed = first_seed(s);
  SemisupResult res = alternate_train(split.state, sc);
  std::size_t right = 0;
  for (std::size_t i = 0; res.state.presumptive && i < res.state.presumptive->size(); ++i) {
    right += (*res.state.presumptive)[i] == split.unlabeled_truth[i] ? 1 : 0;
  }
  json history = json::array();
  for (const auto& r : res.history) {
    history.push_back({{"iteration", r.iteration}, {"changed", r.changed}, {"changed_fraction", r.changed_fraction},
                       {"train_size", r.train_size}, {"sigma", r.sigma}});
  }
  const fs::path dir(g.out);
  write_file_bytes(dir / "classifier.cflw", res.model.serialize());
  json m{{"budget", in.budget},
         {"labeled_count", split.labeled_index.size()},
         {"presumptive_accuracy", split.unlabeled_truth.empty()
                                      ? 1.0
                                      : static_cast<double>(right) / static_cast<double>(split.unlabeled_truth.size())},
         {"converged", res.converged},
         {"history", history}};
  return finish(dir, make_report(cfg.hash(), single_entry("label-prop", first_seed(s), m), json::object()), out);
}

int experiment_cmd(const Globals& g, const std::string& kind, std::ostream& out) {
  const Config cfg = load_config(g, kind);
  const ExperimentSetup s = resolve(cfg);
  const json report = run_experiment(s, cfg.hash());
  out << report["aggregate"].dump(2) << "\n";
  return finish(fs::path(g.out), report, out);
}

int report_cmd(const Inputs& in, std::ostream& out) {
  std::ifstream f(in.input);
  if (!f) {
    throw Error("cannot read report " + in.input);
  }
  json report;
  try {
    report = json::parse(f);
  } catch (const json::exception& e) {
    throw ValidationError(in.input + " is not valid JSON: " + e.what());
  }
  validate_report(report);
  out << in.input << ": valid report, config " << report["config_hash"].get<std::string>() << ", "
      << report["experiments"].size() << " experiment entries\n";
  out << report["aggregate"].dump(2) << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditional flow toolkit: classifier-conditioned synthetic data, label propagation and evaluation"};
  app.name("cflow");
  app.fallthrough();
  app.require_subcommand(1);

  Globals g;
  Inputs in;
  app.add_option("--config", g.config, "flat key = value config file");
  app.add_option("--seed", g.seed, "single seed overriding the config's seed list");
  app.add_option("--out", g.out, "output directory (created if missing)");
  app.add_option("--jobs", g.jobs, "worker threads for multi-seed experiments");

  auto* gen = app.add_subcommand("gen-data", "write toy train/val/test CFDS files");
  auto* tcl = app.add_subcommand("train-classifier", "train the condition classifier");
  tcl->add_option("--data", in.data, "training CFDS file")->required();
  auto* tfl = app.add_subcommand("train-flow", "train the conditional flow against a classifier");
  tfl->add_option("--data", in.data, "training CFDS file")->required();
  tfl->add_option("--classifier", in.classifier, "classifier CFLW file")->required();
  auto* gen_syn = app.add_subcommand("generate", "generate a synthetic dataset from reference samples");
  gen_syn->add_option("--flow", in.flow, "flow CFLW file")->required();
  gen_syn->add_option("--classifier", in.classifier, "classifier CFLW file")->required();
  gen_syn->add_option("--refs", in.refs, "reference CFDS file")->required();
  gen_syn->add_option("--per-ref", in.per_ref, "samples per reference");
  gen_syn->add_option("--temperature", in.temperature, "noise standard-deviation scale in [0, 1.5]");
  auto* lp = app.add_subcommand("label-prop", "presumptive labelling from a small labelled subset");
  lp->add_option("--data", in.data, "CFDS file with ground-truth labels")->required();
  lp->add_option("--budget", in.budget, "labelled budget, e.g. 20 or 5%");
  auto* cmp = app.add_subcommand("compare", "real-trained vs synthetic-trained classifier");
  auto* sca = app.add_subcommand("scarcity", "label-scarcity grid");
  auto* aug = app.add_subcommand("augment", "minority augmentation study");
  auto* rep = app.add_subcommand("report", "validate and summarise a report file");
  rep->add_option("--input", in.input, "report JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    if (argc <= 1) {
      out << app.help();
    }
    return kUsage;
  }

  try {
    if (!rep->parsed()) {
      fs::create_directories(g.out);
    }
    if (gen->parsed()) return gen_data(g, out);
    if (tcl->parsed()) return train_classifier_cmd(g, in, out);
    if (tfl->parsed()) return train_flow_cmd(g, in, out);
    if (gen_syn->parsed()) return generate_cmd(g, in, out);
    if (lp->parsed()) return label_prop_cmd(g, in, out);
    if (cmp->parsed()) return experiment_cmd(g, "compare", out);
    if (sca->parsed()) return experiment_cmd(g, "label_scarcity", out);
    if (aug->parsed()) return experiment_cmd(g, "augmentation", out);
    if (rep->parsed()) return report_cmd(in, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace cflow
