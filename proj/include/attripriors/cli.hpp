#pragma once

// Command-line front end: gen-data, train, attribute, benchmark, experiment
// and report. Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attripriors/attrib.hpp"
#include "attripriors/config.hpp"
#include "attripriors/data.hpp"
#include "attripriors/errors.hpp"
#include "attripriors/eval.hpp"
#include "attripriors/experiments.hpp"
#include "attripriors/nn.hpp"
#include "attripriors/priors.hpp"
#include "attripriors/train.hpp"

namespace attripriors::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kConfigError = 1, kRuntimeError = 2 };

inline constexpr const char* kJobsEnv = "ATTRIPRIOR_JOBS";

// Seed streams derived from the run seed.
enum SeedTag : std::uint64_t { kData = 1, kSplit = 2, kInit = 3, kTrain = 4, kAttrib = 5, kGraph = 6 };

struct Options {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t jobs = 1;
};

// ---------------------------------------------------------------------------
// File helpers.

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw FormatError("write to '" + path.string() + "' failed");
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

template <class F>
void write_stream(const fs::path& path, F&& f) {
  std::ostringstream os;
  f(os);
  write_text(path, os.str());
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Data preparation shared by gen-data, train, attribute and custom experiments.

struct Prepared {
  data::Dataset all;
  std::optional<priors::FeatureGraph> graph;
  data::Splits splits;
  Matrix Xtr, Xva, Xte;  // standardized with training statistics when enabled
};

inline const config::DatasetConfig& need_dataset(const config::Config& c) {
  if (!c.dataset) throw ConfigError("config.dataset is required for this command");
  return *c.dataset;
}

inline Prepared prepare(const config::DatasetConfig& d, std::uint64_t seed) {
  Prepared p;
  const std::uint64_t s = derive_seed(seed, kData);
  if (d.kind == "image") {
    p.all = data::gen_image_task(d.n, d.image, s);
  } else if (d.kind == "graph") {
    data::GraphTask t = data::gen_graph_task(d.n, d.p, d.graph, s);
    p.all = std::move(t.data);
    p.graph = std::move(t.graph);
  } else if (d.kind == "sparse") {
    p.all = data::gen_sparse_binary(d.n, d.sparse, s);
  } else if (d.kind == "csv") {
    p.all = data::load_csv(d.path, d.label,
                           d.task == "auto" ? std::nullopt : std::optional<data::Task>(data::task_from_string(d.task)));
  } else {
    p.all = experiments::benchmark_dataset(d.kind, d.n, s);
  }
  p.splits = data::split(p.all, d.train, d.val, !p.all.groups.empty(), derive_seed(seed, kSplit));
  if (d.standardize) {
    const auto st = data::Standardizer::fit(p.splits.train.X);
    p.Xtr = st.apply(p.splits.train.X);
    p.Xva = st.apply(p.splits.val.X);
    p.Xte = st.apply(p.splits.test.X);
  } else {
    p.Xtr = p.splits.train.X;
    p.Xva = p.splits.val.X;
    p.Xte = p.splits.test.X;
  }
  return p;
}

inline nn::LossSpec resolve_loss(const std::string& name, data::Task task) {
  nn::LossSpec l;
  if (name == "auto") {
    l.kind = task == data::Task::regression ? nn::LossKind::mse
             : task == data::Task::binary   ? nn::LossKind::bce
                                            : nn::LossKind::softmax_ce;
    return l;
  }
  l.kind = nn::loss_from_string(name);
  if (l.kind == nn::LossKind::bce && task != data::Task::binary) {
    throw ConfigError("config.training.loss: binary cross-entropy needs a binary task, dataset is " +
                      std::string(data::to_string(task)));
  }
  if (l.kind == nn::LossKind::softmax_ce && task == data::Task::regression) {
    throw ConfigError("config.training.loss: softmax cross-entropy needs a classification task");
  }
  return l;
}

inline nn::Model init_model(const experiments::NetConfig& net, const Prepared& p, nn::LossSpec loss,
                            std::uint64_t seed) {
  std::size_t outputs = 1;
  nn::Activation out = nn::Activation::identity;
  if (loss.kind == nn::LossKind::bce) out = nn::Activation::sigmoid;
  if (loss.kind == nn::LossKind::softmax_ce) {
    out = nn::Activation::softmax;
    outputs = static_cast<std::size_t>(p.all.y.maxCoeff()) + 1;
  }
  nn::ModelSpec spec = nn::mlp_spec(p.all.features(), net.hidden, net.activation, outputs, out);
  spec.input.grid = p.all.grid;
  if (net.dropout > 0.0) {
    spec.dropout.assign(spec.layers.size(), net.dropout);
    spec.dropout[0] = 0.0;
  }
  return nn::init_model(spec, derive_seed(seed, kInit));
}

inline std::vector<priors::PriorSpec> resolve_priors(const std::vector<config::PriorConfig>& list, const Prepared& p,
                                                     std::uint64_t seed) {
  std::vector<priors::PriorSpec> out;
  const std::size_t features = p.all.features();
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& pc = list[i];
    const std::string where = "config.priors[" + std::to_string(i) + "]";
    priors::PriorSpec spec = pc.spec;
    if (!pc.graph.empty()) {
      if (pc.graph == "dataset") {
        if (!p.graph) throw ConfigError(where + ".graph: this dataset has no feature graph");
        spec.graph = *p.graph;
      } else if (pc.graph == "random") {
        if (p.graph) {
          spec.graph = data::randomize_graph(*p.graph, derive_seed(seed, kGraph));
        } else {
          Rng rng(derive_seed(seed, kGraph));
          spec.graph = data::random_graph(features, data::GraphSpec{}, rng);
        }
      } else {
        std::ifstream in(pc.graph);
        if (!in) throw ConfigError(where + ".graph: cannot open '" + pc.graph + "'");
        spec.graph = priors::read_edge_list(in, features);
      }
    }
    if (spec.kind == priors::PriorKind::pixel_tv && !p.all.grid) {
      throw ConfigError(where + ": pixel-tv needs an image dataset");
    }
    if (spec.kind == priors::PriorKind::ross_grad_mask) {
      Matrix mask = Matrix::Zero(p.Xtr.rows(), p.Xtr.cols());
      for (std::size_t c : pc.mask_features) {
        if (c >= features) {
          throw ConfigError(where + ".mask_features: column " + std::to_string(c) + " is out of range");
        }
        mask.col(static_cast<Eigen::Index>(c)).setOnes();
      }
      spec.mask = std::move(mask);
    }
    out.push_back(std::move(spec));
  }
  return out;
}

inline train::TrainConfig training_config(const config::Config& c, const Prepared& p, std::uint64_t seed) {
  train::TrainConfig t = c.training.train;
  t.loss = resolve_loss(c.training.loss, p.all.task);
  t.priors = resolve_priors(c.priors, p, seed);
  t.seed = derive_seed(seed, kTrain);
  return t;
}

inline json split_sizes(const Prepared& p) {
  return {{"train", p.splits.train.rows()}, {"val", p.splits.val.rows()}, {"test", p.splits.test.rows()}};
}

inline json metrics_json(const nn::Model& m, const Prepared& p, nn::LossSpec loss) {
  const std::string name = loss.kind == nn::LossKind::mse ? "r2" : "accuracy";
  json j;
  j["name"] = name;
  j["train"] = train::detail::metric(m, p.Xtr, p.splits.train.y, loss);
  j["val"] = train::detail::metric(m, p.Xva, p.splits.val.y, loss);
  j["test"] = train::detail::metric(m, p.Xte, p.splits.test.y, loss);
  if (loss.kind == nn::LossKind::bce) {
    j["test_auc"] = eval::roc_auc(nn::evaluate(m, p.Xte).col(0), p.splits.test.y);
  }
  return j;
}

inline json base_report(const std::string& command, const config::Config& c) {
  return {{"command", command}, {"config", c.resolved}};
}

inline json data_seeds(std::uint64_t seed) {
  return {{"run", seed}, {"data", derive_seed(seed, kData)}, {"split", derive_seed(seed, kSplit)}};
}

// ---------------------------------------------------------------------------
// Single-run commands.

inline int cmd_gen_data(const config::Config& c, const fs::path& out, std::ostream& log) {
  const auto& d = need_dataset(c);
  const Prepared p = prepare(d, c.seed);
  write_stream(out / "data.csv", [&](std::ostream& os) { data::save_csv(os, p.all, d.label); });
  write_stream(out / "train.csv", [&](std::ostream& os) { data::save_csv(os, p.splits.train, d.label); });
  write_stream(out / "val.csv", [&](std::ostream& os) { data::save_csv(os, p.splits.val, d.label); });
  write_stream(out / "test.csv", [&](std::ostream& os) { data::save_csv(os, p.splits.test, d.label); });
  json r = base_report("gen-data", c);
  r["seeds"] = data_seeds(c.seed);
  r["rows"] = split_sizes(p);
  r["features"] = p.all.features();
  r["task"] = data::to_string(p.all.task);
  if (p.all.grid) r["grid"] = {{"h", p.all.grid->h}, {"w", p.all.grid->w}};
  if (p.graph) {
    write_stream(out / "graph.edges", [&](std::ostream& os) { priors::write_edge_list(os, *p.graph); });
    r["graph"] = "graph.edges";
  }
  write_json(out / "gen-data.json", r);
  log << "wrote " << p.all.rows() << " rows to " << (out / "data.csv").string() << '\n';
  return kOk;
}

struct Trained {
  nn::Model model;
  train::TrainResult result;
  train::TrainConfig cfg;
};

inline Trained fit(const config::Config& c, const Prepared& p) {
  Trained t;
  t.cfg = training_config(c, p, c.seed);
  const nn::Model init = init_model(c.model, p, t.cfg.loss, c.seed);
  t.result = train::train(init, p.Xtr, p.splits.train.y, p.Xva, p.splits.val.y, t.cfg);
  t.model = t.result.model;
  return t;
}

inline json train_seeds(std::uint64_t seed) {
  json j = data_seeds(seed);
  j["init"] = derive_seed(seed, kInit);
  j["train"] = derive_seed(seed, kTrain);
  return j;
}

inline int cmd_train(const config::Config& c, const fs::path& out, std::ostream& log) {
  const Prepared p = prepare(need_dataset(c), c.seed);
  const Trained t = fit(c, p);
  write_json(out / "model.json", nn::to_json(t.model));
  json r = base_report("train", c);
  r["seeds"] = train_seeds(c.seed);
  r["rows"] = split_sizes(p);
  r["loss"] = nn::to_string(t.cfg.loss.kind);
  r["history"] = train::to_json(t.result, "model.json");
  r["metrics"] = metrics_json(t.model, p, t.cfg.loss);
  write_json(out / "train.json", r);
  log << "trained " << t.result.train_loss.size() << " epochs, test " << r["metrics"]["name"].get<std::string>()
      << " " << r["metrics"]["test"].get<double>() << '\n';
  return kOk;
}

inline int cmd_attribute(const config::Config& c, const fs::path& out, std::ostream& log) {
  const Prepared p = prepare(need_dataset(c), c.seed);
  const config::AttributionConfig a = c.attribution.value_or(config::AttributionConfig{});
  json r = base_report("attribute", c);
  r["seeds"] = train_seeds(c.seed);
  nn::Model m;
  if (!a.model.empty()) {
    m = nn::model_from_json(read_json(a.model));
    if (m.features() != p.all.features()) {
      throw ShapeError("model expects " + std::to_string(m.features()) + " features, dataset has " +
                       std::to_string(p.all.features()));
    }
  } else {
    m = fit(c, p).model;
  }
  const std::uint64_t seed = derive_seed(c.seed, kAttrib);
  r["seeds"]["attrib"] = seed;
  const attrib::Target target = train::detail::target_for(m, p.splits.test.y);
  Matrix phi;
  if (a.method == "expected-gradients") {
    phi = attrib::expected_gradients(m, p.Xte, attrib::ReferenceSet{p.Xtr}, a.k, seed, target).values;
  } else if (a.method == "integrated-gradients") {
    const Vector baseline =
        a.baseline == "zero" ? Vector(Vector::Zero(p.Xtr.cols())) : Vector(p.Xtr.colwise().mean().transpose());
    phi = attrib::integrated_gradients(m, p.Xte, baseline, a.steps, target).values;
  } else if (a.method == "gradients") {
    phi = attrib::grad_attrib(m, p.Xte, target).values;
  } else {
    phi = attrib::random_attrib(p.Xte.rows(), p.Xte.cols(), seed).values;
  }
  write_stream(out / "attributions.csv", [&](std::ostream& os) { attrib::write_csv(os, phi); });
  const Vector global = attrib::global_mean_abs(phi);
  r["method"] = a.method;
  r["rows"] = phi.rows();
  r["global_mean_abs"] = std::vector<double>(global.data(), global.data() + global.size());
  r["gini"] = eval::gini_coefficient(global);
  if (p.all.grid) {
    write_stream(out / "attribution_grid.csv", [&](std::ostream& os) { attrib::write_grid_csv(os, phi, 0, *p.all.grid); });
  }
  write_json(out / "attribute.json", r);
  log << "wrote " << phi.rows() << " x " << phi.cols() << " attributions to "
      << (out / "attributions.csv").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// Replicated experiments. Each replicate is written to its own file, and the
// aggregate is computed from those files only, so `report` can rebuild it.

inline config::ExperimentConfig experiment_of(const config::Config& c, bool benchmark_command) {
  if (benchmark_command) {
    if (!c.benchmark) throw ConfigError("config.benchmark is required for the benchmark command");
    config::ExperimentConfig e;
    e.kind = "benchmark";
    e.benchmark = *c.benchmark;
    e.replicates = e.benchmark.replicates;
    return e;
  }
  if (!c.experiment) throw ConfigError("config.experiment is required for the experiment command");
  return *c.experiment;
}

inline std::uint64_t replicate_seed(const config::Config& c, const config::ExperimentConfig& e, std::size_t i) {
  if (e.kind == "benchmark" || e.kind == "image") return c.seed + i;
  return derive_seed(c.seed, i);
}

inline json run_custom(const config::Config& c, const config::ExperimentConfig& e, std::uint64_t seed) {
  const Prepared p = prepare(need_dataset(c), seed);
  train::TrainConfig t = training_config(c, p, seed);
  const nn::Model init = init_model(c.model, p, t.loss, seed);
  const auto& cc = e.custom;
  const auto sweep = train::lambda_sweep(init, p.Xtr, p.splits.train.y, p.Xva, p.splits.val.y, t, 0, cc.lambda_grid,
                                         cc.slack, cc.eval_k);
  const nn::Model& base = sweep.runs[0].model;
  const nn::Model& chosen = sweep.runs[sweep.chosen].model;
  // Raw penalty on the test set, so base and prior are comparable.
  const auto penalty = [&](const nn::Model& m) {
    priors::PriorSpec spec = t.priors[0];
    if (spec.kind == priors::PriorKind::ross_grad_mask) {
      spec.mask = Matrix(spec.mask->topRows(1).replicate(p.Xte.rows(), 1));
    }
    return train::evaluate_priors(m, p.Xte, p.splits.test.y, {spec}, cc.eval_k, derive_seed(seed, kAttrib), t.loss)[0];
  };
  json sweep_j = json::array();
  for (const auto& rep : sweep.choice.reports) {
    sweep_j.push_back({{"lambda", rep.lambda}, {"val_metric", rep.val_metric}, {"val_penalty", rep.penalty}});
  }
  return {{"seed", seed},
          {"prior", t.priors[0].name()},
          {"lambda", sweep.choice.lambda},
          {"warning", sweep.choice.warning},
          {"sweep", sweep_j},
          {"metric", t.loss.kind == nn::LossKind::mse ? "r2" : "accuracy"},
          {"test_metric",
           {{"base", train::detail::metric(base, p.Xte, p.splits.test.y, t.loss)},
            {"prior", train::detail::metric(chosen, p.Xte, p.splits.test.y, t.loss)}}},
          {"test_penalty", {{"base", penalty(base)}, {"prior", penalty(chosen)}}}};
}

inline json run_replicate(const config::Config& c, const config::ExperimentConfig& e, std::size_t i) {
  const std::uint64_t seed = replicate_seed(c, e, i);
  if (e.kind == "benchmark") {
    json runs = json::array();
    for (const auto& d : e.benchmark.bench.datasets) {
      runs.push_back(experiments::to_json(experiments::run_benchmark(e.benchmark.bench, d, seed)));
    }
    return runs;
  }
  if (e.kind == "graph") return experiments::to_json(experiments::run_graph_replicate(e.graph, i));
  if (e.kind == "sparse") return experiments::to_json(experiments::run_sparse_replicate(e.sparse, i));
  if (e.kind == "image") return experiments::to_json(experiments::run_image_replicate(e.image, i));
  return run_custom(c, e, seed);
}

inline std::string replicate_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "replicate_%03zu.json", i);
  return buf;
}

inline json custom_summary(const std::vector<json>& results) {
  std::vector<double> mb, mp, pb, pp;
  std::size_t warnings = 0;
  for (const auto& r : results) {
    mb.push_back(r.at("test_metric").at("base").get<double>());
    mp.push_back(r.at("test_metric").at("prior").get<double>());
    pb.push_back(r.at("test_penalty").at("base").get<double>());
    pp.push_back(r.at("test_penalty").at("prior").get<double>());
    warnings += r.at("warning").get<bool>();
  }
  return {{"metric", results.front().at("metric")},
          {"mean_test_metric", {{"base", experiments::mean_of(mb)}, {"prior", experiments::mean_of(mp)}}},
          {"mean_test_penalty", {{"base", experiments::mean_of(pb)}, {"prior", experiments::mean_of(pp)}}},
          {"paired_t_metric", experiments::t_test_json(experiments::try_t_test(mp, mb))},
          {"warnings", warnings}};
}

// Summary of the replicate results; also writes the CSV tables.
inline json aggregate(const config::ExperimentConfig& e, const std::vector<json>& results, const fs::path& out) {
  if (e.kind == "benchmark") {
    std::vector<experiments::BenchmarkRun> runs;
    for (const auto& r : results)
      for (const auto& d : r) runs.push_back(experiments::benchmark_run_from_json(d));
    const auto summaries = experiments::summarize(runs);
    for (const auto& s : summaries) {
      write_stream(out / ("benchmark_" + s.dataset + ".csv"),
                   [&](std::ostream& os) { bench::write_table_csv(os, s.mean); });
    }
    return experiments::to_json(summaries);
  }
  if (e.kind == "graph") {
    std::vector<experiments::GraphReplicate> reps;
    for (const auto& r : results) reps.push_back(experiments::graph_replicate_from_json(r));
    return experiments::to_json(experiments::summarize(reps));
  }
  if (e.kind == "sparse") {
    std::vector<experiments::SparseReplicate> reps;
    std::vector<eval::LorenzCurve> lb, lp;
    for (const auto& r : results) {
      reps.push_back(experiments::sparse_replicate_from_json(r));
      lb.push_back(reps.back().lorenz_base);
      lp.push_back(reps.back().lorenz_prior);
    }
    const auto mb = experiments::mean_lorenz(lb), mp = experiments::mean_lorenz(lp);
    write_stream(out / "lorenz_base.csv", [&](std::ostream& os) { eval::write_lorenz_csv(os, mb); });
    write_stream(out / "lorenz_prior.csv", [&](std::ostream& os) { eval::write_lorenz_csv(os, mp); });
    json j = experiments::to_json(experiments::summarize(reps));
    j["mean_lorenz"] = {{"base", experiments::to_json(mb)}, {"prior", experiments::to_json(mp)}};
    return j;
  }
  if (e.kind == "image") {
    std::vector<experiments::ImageReplicate> reps;
    for (const auto& r : results) reps.push_back(experiments::image_replicate_from_json(r));
    const auto s = experiments::summarize(reps, e.image.sigmas);
    write_stream(out / "robustness_base.csv", [&](std::ostream& os) { eval::write_robustness_csv(os, s.base); });
    write_stream(out / "robustness_prior.csv", [&](std::ostream& os) { eval::write_robustness_csv(os, s.prior); });
    return experiments::to_json(s);
  }
  return custom_summary(results);
}

inline json write_aggregate(const config::Config& c, const config::ExperimentConfig& e, const fs::path& out) {
  std::vector<json> results;
  json seeds = json::array();
  for (std::size_t i = 0; i < e.replicates; ++i) {
    const fs::path path = out / replicate_name(i);
    if (!fs::exists(path)) throw FormatError("missing replicate report '" + path.string() + "'");
    const json r = read_json(path);
    try {
      if (r.at("config") != c.resolved) {
        throw FormatError("'" + path.string() + "' was produced by a different configuration");
      }
      if (r.at("replicate").get<std::size_t>() != i) throw FormatError("'" + path.string() + "' has the wrong index");
      seeds.push_back(r.at("seed"));
      results.push_back(r.at("result"));
    } catch (const json::exception& ex) {
      throw FormatError("'" + path.string() + "': " + ex.what());
    }
  }
  json agg;
  agg["config"] = c.resolved;
  agg["kind"] = e.kind;
  agg["replicates"] = e.replicates;
  agg["seeds"] = seeds;
  agg["summary"] = aggregate(e, results, out);
  write_json(out / "aggregate.json", agg);
  return agg;
}

inline int cmd_replicated(const config::Config& c, const config::ExperimentConfig& e, const std::string& command,
                          const fs::path& out, std::size_t jobs, std::ostream& log) {
  std::vector<json> results(e.replicates);
  experiments::parallel_for(e.replicates, jobs, [&](std::size_t i) { results[i] = run_replicate(c, e, i); });
  for (std::size_t i = 0; i < e.replicates; ++i) {
    json r = base_report(command, c);
    r["replicate"] = i;
    r["seed"] = replicate_seed(c, e, i);
    r["result"] = results[i];
    write_json(out / replicate_name(i), r);
  }
  write_aggregate(c, e, out);
  log << "wrote " << e.replicates << " " << e.kind << " replicates and " << (out / "aggregate.json").string()
      << '\n';
  return kOk;
}

inline int cmd_report(const config::Config& c, const fs::path& out, std::ostream& log) {
  const bool bench_only = !c.experiment && c.benchmark;
  const config::ExperimentConfig e = experiment_of(c, bench_only);
  write_aggregate(c, e, out);
  log << "recomputed " << (out / "aggregate.json").string() << " from " << e.replicates << " replicates\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point.

inline std::size_t parse_jobs(const std::string& s, const std::string& source) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size() || v < 1 || s.front() == '-') {
    throw ConfigError(source + ": expected a positive integer, got '" + s + "'");
  }
  return static_cast<std::size_t>(v);
}

inline int execute(const Options& o, std::ostream& log) {
  json j = config::read_json_file(o.config_path);
  if (o.seed) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    j["seed"] = *o.seed;
  }
  const config::Config c = config::parse(j);
  const fs::path out = o.out.value_or(c.output);
  fs::create_directories(out);
  if (o.command == "gen-data") return cmd_gen_data(c, out, log);
  if (o.command == "train") return cmd_train(c, out, log);
  if (o.command == "attribute") return cmd_attribute(c, out, log);
  if (o.command == "benchmark") return cmd_replicated(c, experiment_of(c, true), "benchmark", out, o.jobs, log);
  if (o.command == "experiment") return cmd_replicated(c, experiment_of(c, false), "experiment", out, o.jobs, log);
  return cmd_report(c, out, log);
}

inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Attribution priors: train models with priors on their feature attributions"};
  app.require_subcommand(1);
  Options o;
  std::optional<std::size_t> jobs_flag;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "generate a dataset and its splits"},
      {"train", "train a model, optionally with attribution priors"},
      {"attribute", "explain a model on the test split"},
      {"benchmark", "run the masking benchmark over replicates"},
      {"experiment", "run a replicated experiment"},
      {"report", "recompute the aggregate of a finished run from its replicate files"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "JSON configuration file")->required();
    sub->add_option("--seed", o.seed, "override the configured seed");
    sub->add_option("--jobs", jobs_flag, std::string("worker threads (default $") + kJobsEnv + " or 1)");
    sub->add_option("--out", o.out, "output directory (default: config output)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, log, err);
    return code == 0 ? kOk : kConfigError;
  }
  for (const auto* sub : app.get_subcommands()) o.command = sub->get_name();
  try {
    if (jobs_flag) {
      if (*jobs_flag < 1) throw ConfigError("--jobs must be >= 1");
      o.jobs = *jobs_flag;
    } else if (const char* env = std::getenv(kJobsEnv)) {
      o.jobs = parse_jobs(env, kJobsEnv);
    }
    return execute(o, log);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace attripriors::cli
