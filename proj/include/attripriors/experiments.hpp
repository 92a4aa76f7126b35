#pragma once

// End-to-end experiments shared by the command-line tool and the acceptance
// runner: the masking benchmark, sampling convergence, and the graph,
// sparsity and pixel prior studies.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "attripriors/attrib.hpp"
#include "attripriors/bench.hpp"
#include "attripriors/data.hpp"
#include "attripriors/eval.hpp"
#include "attripriors/nn.hpp"
#include "attripriors/priors.hpp"
#include "attripriors/train.hpp"

namespace attripriors::experiments {

using nlohmann::json;

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be written
// by index so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

struct NetConfig {
  std::vector<std::size_t> hidden{32};
  nn::Activation activation = nn::Activation::relu;
  double dropout = 0.0;  // on the input of every hidden layer after the first
};

inline nn::Model make_net(const NetConfig& net, std::size_t features, const std::optional<nn::Grid>& grid,
                          nn::Activation output, std::uint64_t seed) {
  nn::ModelSpec spec = nn::mlp_spec(features, net.hidden, net.activation, 1, output);
  spec.input.grid = grid;
  if (net.dropout > 0.0) {
    spec.dropout.assign(spec.layers.size(), net.dropout);
    spec.dropout[0] = 0.0;
  }
  return nn::init_model(spec, seed);
}

inline json curve_json(const std::vector<double>& v) { return json(v); }

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline data::Dataset benchmark_dataset(const std::string& name, std::size_t n, std::uint64_t seed) {
  if (name == "correlated-groups-60") return data::gen_correlated_groups_60(n, seed);
  if (name == "independent-linear-60") return data::gen_independent_linear_60(n, seed);
  throw InvalidSpec("unknown benchmark dataset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Masking benchmark.

struct BenchmarkConfig {
  std::vector<std::string> datasets{"correlated-groups-60", "independent-linear-60"};
  std::size_t n_train = 900;
  std::size_t n_test = 100;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  NetConfig net{{32, 32}};
  train::TrainConfig training = [] {
    train::TrainConfig t;
    t.epochs = 40;
    t.batch_size = 32;
    return t;
  }();
  std::size_t k = 200;
  std::size_t ig_steps = 100;
  std::size_t resample_draws = bench::kResampleDraws;
};

inline const std::vector<std::string>& benchmark_methods() {
  static const std::vector<std::string> m{"expected-gradients", "integrated-gradients", "gradients", "random"};
  return m;
}

struct BenchmarkRun {
  std::string dataset;
  std::uint64_t seed = 0;
  double test_r2 = 0.0;
  bench::BenchmarkResult result;
};

inline nn::Model train_benchmark_model(const BenchmarkConfig& cfg, const std::string& dataset, std::uint64_t seed,
                                       data::Dataset* train_out = nullptr, data::Dataset* test_out = nullptr) {
  const data::Dataset tr = benchmark_dataset(dataset, cfg.n_train, derive_seed(seed, 1));
  const data::Dataset te = benchmark_dataset(dataset, cfg.n_test, derive_seed(seed, 2));
  const data::Dataset va = benchmark_dataset(dataset, cfg.n_test, derive_seed(seed, 4));
  train::TrainConfig t = cfg.training;
  t.seed = derive_seed(seed, 5);
  const nn::Model init = make_net(cfg.net, tr.features(), std::nullopt, nn::Activation::identity, derive_seed(seed, 3));
  nn::Model m = train::train(init, tr.X, tr.y, va.X, va.y, t).model;
  if (train_out) *train_out = tr;
  if (test_out) *test_out = te;
  return m;
}

inline BenchmarkRun run_benchmark(const BenchmarkConfig& cfg, const std::string& dataset, std::uint64_t seed) {
  data::Dataset tr, te;
  const nn::Model m = train_benchmark_model(cfg, dataset, seed, &tr, &te);
  BenchmarkRun run;
  run.dataset = dataset;
  run.seed = seed;
  run.test_r2 = eval::r_squared(nn::evaluate(m, te.X).col(0), te.y);

  const Vector mean = tr.X.colwise().mean().transpose();
  const bench::ModelFn f = [&m](const Matrix& X) { return nn::evaluate(m, X); };
  const bench::Maskers maskers = bench::Maskers::fit(tr.X, derive_seed(seed, 6), cfg.resample_draws);
  for (const auto& method : benchmark_methods()) {
    Matrix phi;
    if (method == "expected-gradients") {
      phi = attrib::expected_gradients(m, te.X, attrib::ReferenceSet{tr.X}, cfg.k, derive_seed(seed, 7)).values;
    } else if (method == "integrated-gradients") {
      phi = attrib::integrated_gradients(m, te.X, mean, cfg.ig_steps).values;
    } else if (method == "gradients") {
      phi = attrib::grad_attrib(m, te.X).values;
    } else {
      phi = attrib::random_attrib(te.X.rows(), te.X.cols(), derive_seed(seed, 8)).values;
    }
    run.result.methods.push_back(bench::run_all_18(f, te.X, phi, maskers, method));
  }
  return run;
}

inline json to_json(const BenchmarkRun& r) {
  json j;
  j["dataset"] = r.dataset;
  j["seed"] = r.seed;
  j["test_r2"] = r.test_r2;
  j["methods"] = bench::to_json(r.result);
  return j;
}

struct DatasetSummary {
  std::string dataset;
  bench::BenchmarkResult mean;  // scores averaged over seeds
  std::vector<bench::Comparison> comparisons;
  std::size_t eg_ge_ig = 0;  // (seed, metric) pairs where EG >= IG
  std::size_t pairs = 0;
};

inline std::vector<DatasetSummary> summarize(const std::vector<BenchmarkRun>& runs) {
  std::vector<DatasetSummary> out;
  for (const auto& r : runs) {
    auto it = std::find_if(out.begin(), out.end(), [&](const DatasetSummary& s) { return s.dataset == r.dataset; });
    if (it == out.end()) {
      out.push_back({r.dataset, {}, {}, 0, 0});
      it = out.end() - 1;
      for (const auto& m : r.result.methods) it->mean.methods.push_back({m.method, {}, {}});
    }
    for (std::size_t mi = 0; mi < r.result.methods.size(); ++mi) {
      for (std::size_t i = 0; i < 18; ++i) it->mean.methods[mi].scores[i] += r.result.methods[mi].scores[i];
    }
    const auto& eg = r.result.methods[0];
    const auto& ig = r.result.methods[1];
    for (std::size_t i = 0; i < 18; ++i) it->eg_ge_ig += eg.scores[i] >= ig.scores[i];
    it->pairs += 18;
  }
  for (auto& s : out) {
    const auto n = static_cast<double>(std::count_if(runs.begin(), runs.end(),
                                                     [&](const BenchmarkRun& r) { return r.dataset == s.dataset; }));
    for (auto& m : s.mean.methods)
      for (double& v : m.scores) v /= n;
    const auto& ms = s.mean.methods;
    for (std::size_t a = 0; a < ms.size(); ++a) {
      for (std::size_t b = 0; b < ms.size(); ++b) {
        if (a != b) s.comparisons.push_back(bench::compare_methods(ms[a], ms[b]));
      }
    }
  }
  return out;
}

inline json to_json(const std::vector<DatasetSummary>& summaries) {
  json j = json::array();
  for (const auto& s : summaries) {
    json d;
    d["dataset"] = s.dataset;
    for (const auto& m : s.mean.methods) {
      for (std::size_t i = 0; i < 18; ++i) d["mean_scores"][m.method][bench::all_metrics()[i].name()] = m.scores[i];
    }
    for (const auto& c : s.comparisons) {
      d["comparisons"].push_back({{"a", c.a}, {"b", c.b}, {"wins", c.wins}, {"trials", c.trials}, {"p", c.p}});
    }
    d["ranking"] = bench::rank_methods(s.mean);
    d["eg_ge_ig"] = s.eg_ge_ig;
    d["eg_ig_pairs"] = s.pairs;
    j.push_back(d);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Sampling convergence of expected gradients.

struct ConvergenceConfig {
  std::string dataset = "correlated-groups-60";
  BenchmarkConfig model;  // dataset sizes, network and training
  std::uint64_t model_seed = 1;
  std::size_t n_explain = 20;
  std::size_t n_references = 100;
  std::vector<std::size_t> k_grid{10, 20, 50, 100, 200};
  std::size_t baseline_steps = 200;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
};

struct ConvergenceResult {
  std::vector<std::size_t> k_grid;
  std::vector<std::vector<double>> per_seed;  // seed x k
  std::vector<double> mean;                   // per k, averaged over seeds
  double ratio = 0.0;                         // mean at the largest k over mean at the smallest k
};

inline ConvergenceResult run_convergence(const ConvergenceConfig& cfg, std::size_t jobs = 1) {
  if (cfg.k_grid.empty()) throw InvalidSpec("k grid is empty");
  data::Dataset tr, te;
  const nn::Model m = train_benchmark_model(cfg.model, cfg.dataset, cfg.model_seed, &tr, &te);
  const Matrix X = te.X.topRows(static_cast<Eigen::Index>(std::min<std::size_t>(cfg.n_explain, te.rows())));
  const attrib::ReferenceSet refs{
      tr.X.topRows(static_cast<Eigen::Index>(std::min<std::size_t>(cfg.n_references, tr.rows())))};
  const Matrix baseline = attrib::expected_gradients_full(m, X, refs, cfg.baseline_steps);
  ConvergenceResult out;
  out.k_grid = cfg.k_grid;
  out.per_seed.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), jobs, [&](std::size_t i) {
    out.per_seed[i] = attrib::convergence_diagnostic(m, X, refs, cfg.k_grid, baseline, cfg.seeds[i]);
  });
  out.mean.assign(cfg.k_grid.size(), 0.0);
  for (const auto& row : out.per_seed)
    for (std::size_t k = 0; k < row.size(); ++k) out.mean[k] += row[k] / static_cast<double>(cfg.seeds.size());
  const auto lo = std::min_element(cfg.k_grid.begin(), cfg.k_grid.end()) - cfg.k_grid.begin();
  const auto hi = std::max_element(cfg.k_grid.begin(), cfg.k_grid.end()) - cfg.k_grid.begin();
  out.ratio = out.mean[static_cast<std::size_t>(hi)] / out.mean[static_cast<std::size_t>(lo)];
  return out;
}

inline json to_json(const ConvergenceResult& r) {
  return {{"k_grid", r.k_grid}, {"per_seed", r.per_seed}, {"mean_abs_diff", r.mean}, {"ratio", r.ratio}};
}

// ---------------------------------------------------------------------------
// Graph prior.

struct GraphConfig {
  std::size_t n = 1000;
  std::size_t p = 64;
  data::GraphSpec graph;
  std::size_t replicates = 10;
  std::uint64_t seed = 1;
  double train_frac = 0.5;
  double val_frac = 0.2;
  NetConfig net{{32}};
  train::TrainConfig pretrain = [] {
    train::TrainConfig t;
    t.epochs = 100;
    t.batch_size = 32;
    t.patience = 10;
    return t;
  }();
  std::size_t finetune_epochs = 20;
  std::size_t finetune_patience = 0;  // counted in loss epochs; 0 keeps the last model
  std::size_t k = 4;
  std::optional<double> nu;  // automatic when empty
  std::size_t eval_k = 100;
};

struct GraphReplicate {
  std::uint64_t seed = 0;
  double r2_base = 0.0, r2_graph = 0.0, r2_random = 0.0;
  double smooth_base = 0.0, smooth_graph = 0.0, smooth_random = 0.0;  // phi_bar^T L phi_bar on the true graph
  double nu_graph = 0.0, nu_random = 0.0;
};

inline GraphReplicate run_graph_replicate(const GraphConfig& cfg, std::size_t index) {
  GraphReplicate out;
  out.seed = derive_seed(cfg.seed, index);
  const data::GraphTask task = data::gen_graph_task(cfg.n, cfg.p, cfg.graph, out.seed);
  const data::Splits s = data::split(task.data, cfg.train_frac, cfg.val_frac, false, derive_seed(out.seed, 1));
  const auto st = data::Standardizer::fit(s.train.X);
  const Matrix Xtr = st.apply(s.train.X), Xva = st.apply(s.val.X), Xte = st.apply(s.test.X);
  train::TrainConfig pre = cfg.pretrain;
  pre.seed = derive_seed(out.seed, 2);
  const nn::Model init = make_net(cfg.net, cfg.p, std::nullopt, nn::Activation::identity, derive_seed(out.seed, 3));
  const nn::Model base = train::train(init, Xtr, s.train.y, Xva, s.val.y, pre).model;

  const auto smoothness = [&](const nn::Model& m) {
    const Matrix phi = attrib::expected_gradients(m, Xte, attrib::ReferenceSet{Xtr}, cfg.eval_k,
                                                  derive_seed(out.seed, 4)).values;
    return priors::graph_penalty(attrib::global_mean_abs(phi), task.graph);
  };
  const auto r2 = [&](const nn::Model& m) { return eval::r_squared(nn::evaluate(m, Xte).col(0), s.test.y); };
  const auto finetune = [&](const priors::FeatureGraph& g, double* nu) {
    train::TrainConfig ft = pre;
    ft.k = cfg.k;
    ft.patience = cfg.finetune_patience;
    priors::PriorSpec prior = priors::prior_from_string("graph");
    prior.lambda = 1.0;
    prior.graph = g;
    ft.priors = {prior};
    const auto r = train::alternating_finetune(base, Xtr, s.train.y, Xva, s.val.y, ft, cfg.finetune_epochs, cfg.nu);
    *nu = r.nu;
    return r.model;
  };
  const nn::Model graph = finetune(task.graph, &out.nu_graph);
  const nn::Model random = finetune(data::randomize_graph(task.graph, derive_seed(out.seed, 5)), &out.nu_random);
  out.r2_base = r2(base);
  out.r2_graph = r2(graph);
  out.r2_random = r2(random);
  out.smooth_base = smoothness(base);
  out.smooth_graph = smoothness(graph);
  out.smooth_random = smoothness(random);
  return out;
}

inline json to_json(const GraphReplicate& r) {
  return {{"seed", r.seed},
          {"r2", {{"base", r.r2_base}, {"graph", r.r2_graph}, {"random_graph", r.r2_random}}},
          {"smoothness", {{"base", r.smooth_base}, {"graph", r.smooth_graph}, {"random_graph", r.smooth_random}}},
          {"nu", {{"graph", r.nu_graph}, {"random_graph", r.nu_random}}}};
}

struct GraphSummary {
  double r2_base = 0.0, r2_graph = 0.0, r2_random = 0.0;
  double smooth_base = 0.0, smooth_graph = 0.0, smooth_random = 0.0;
  double smooth_reduction = 0.0;  // mean base / mean graph
  std::optional<eval::TTest> graph_vs_base, random_vs_base;
};

inline std::optional<eval::TTest> try_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  try {
    return eval::paired_t_test(a, b);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline GraphSummary summarize(const std::vector<GraphReplicate>& reps) {
  GraphSummary s;
  std::vector<double> base, graph, random, sb, sg, sr;
  for (const auto& r : reps) {
    base.push_back(r.r2_base);
    graph.push_back(r.r2_graph);
    random.push_back(r.r2_random);
    sb.push_back(r.smooth_base);
    sg.push_back(r.smooth_graph);
    sr.push_back(r.smooth_random);
  }
  s.r2_base = mean_of(base);
  s.r2_graph = mean_of(graph);
  s.r2_random = mean_of(random);
  s.smooth_base = mean_of(sb);
  s.smooth_graph = mean_of(sg);
  s.smooth_random = mean_of(sr);
  s.smooth_reduction = s.smooth_base / s.smooth_graph;
  s.graph_vs_base = try_t_test(graph, base);
  s.random_vs_base = try_t_test(random, base);
  return s;
}

inline json t_test_json(const std::optional<eval::TTest>& t) {
  if (!t) return nullptr;
  return {{"t", t->t}, {"p", t->p}};
}

inline json to_json(const GraphSummary& s) {
  return {{"mean_r2", {{"base", s.r2_base}, {"graph", s.r2_graph}, {"random_graph", s.r2_random}}},
          {"mean_smoothness", {{"base", s.smooth_base}, {"graph", s.smooth_graph}, {"random_graph", s.smooth_random}}},
          {"smoothness_reduction", s.smooth_reduction},
          {"paired_t", {{"graph_vs_base", t_test_json(s.graph_vs_base)},
                        {"random_graph_vs_base", t_test_json(s.random_vs_base)}}}};
}

// ---------------------------------------------------------------------------
// Sparsity prior.

struct SparseConfig {
  data::SparseSpec task;
  std::size_t n_train = 100;
  std::size_t n_val = 100;
  std::size_t n_test = 1000;
  std::size_t replicates = 20;
  std::uint64_t seed = 1;
  NetConfig net{{16}};
  train::TrainConfig training = [] {
    train::TrainConfig t;
    t.epochs = 100;
    t.batch_size = 20;
    t.patience = 20;
    t.k = 4;
    t.optimizer.learning_rate = 1e-2;
    t.loss.kind = nn::LossKind::bce;
    return t;
  }();
  std::string prior = "sparse-gini";
  std::vector<double> lambda_grid{0.03, 0.1, 0.3, 1.0, 3.0};
  std::size_t eval_k = 100;
};

struct SparseReplicate {
  std::uint64_t seed = 0;
  double lambda = 0.0;  // chosen by validation ROC-AUC
  double auc_base = 0.0, auc_prior = 0.0;
  double gini_base = 0.0, gini_prior = 0.0;
  eval::LorenzCurve lorenz_base, lorenz_prior;
  std::vector<double> val_auc;  // per lambda in the grid
};

inline SparseReplicate run_sparse_replicate(const SparseConfig& cfg, std::size_t index) {
  SparseReplicate out;
  out.seed = derive_seed(cfg.seed, index);
  const data::Dataset all = data::gen_sparse_binary(cfg.n_train + cfg.n_val + cfg.n_test, cfg.task, out.seed);
  std::vector<std::size_t> idx(all.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto part = [&](std::size_t from, std::size_t count) {
    return data::subset(all, std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(from),
                                                      idx.begin() + static_cast<std::ptrdiff_t>(from + count)));
  };
  const data::Dataset tr = part(0, cfg.n_train), va = part(cfg.n_train, cfg.n_val),
                      te = part(cfg.n_train + cfg.n_val, cfg.n_test);
  const auto st = data::Standardizer::fit(tr.X);
  const Matrix Xtr = st.apply(tr.X), Xva = st.apply(va.X), Xte = st.apply(te.X);
  const nn::Model init = make_net(cfg.net, cfg.task.p, std::nullopt, nn::Activation::sigmoid, derive_seed(out.seed, 1));
  train::TrainConfig t = cfg.training;
  t.seed = derive_seed(out.seed, 2);
  priors::PriorSpec prior = priors::prior_from_string(cfg.prior);
  t.priors = {prior};
  const auto score = [](const nn::Model& m, const Matrix& X, const Vector& y) {
    return eval::roc_auc(nn::evaluate(m, X).col(0), y);
  };
  const nn::Model base = train::train(init, Xtr, tr.y, Xva, va.y, t).model;
  std::optional<nn::Model> best;
  double best_auc = -1.0;
  for (double lambda : cfg.lambda_grid) {
    t.priors[0].lambda = lambda;
    nn::Model m = train::train(init, Xtr, tr.y, Xva, va.y, t).model;
    const double auc = score(m, Xva, va.y);
    out.val_auc.push_back(auc);
    if (auc > best_auc) {
      best_auc = auc;
      best = std::move(m);
      out.lambda = lambda;
    }
  }
  const auto phi_bar = [&](const nn::Model& m) {
    return attrib::global_mean_abs(
        attrib::expected_gradients(m, Xte, attrib::ReferenceSet{Xtr}, cfg.eval_k, derive_seed(out.seed, 3)));
  };
  const Vector gb = phi_bar(base), gp = phi_bar(*best);
  out.auc_base = score(base, Xte, te.y);
  out.auc_prior = score(*best, Xte, te.y);
  out.gini_base = eval::gini_coefficient(gb);
  out.gini_prior = eval::gini_coefficient(gp);
  out.lorenz_base = eval::lorenz_curve(gb);
  out.lorenz_prior = eval::lorenz_curve(gp);
  return out;
}

inline json to_json(const eval::LorenzCurve& c) {
  return {{"fraction", c.fraction}, {"cumulative_share", c.cumulative_share}};
}

inline json to_json(const SparseReplicate& r) {
  return {{"seed", r.seed},
          {"lambda", r.lambda},
          {"val_auc", r.val_auc},
          {"test_auc", {{"base", r.auc_base}, {"prior", r.auc_prior}}},
          {"gini", {{"base", r.gini_base}, {"prior", r.gini_prior}}},
          {"lorenz", {{"base", to_json(r.lorenz_base)}, {"prior", to_json(r.lorenz_prior)}}}};
}

struct SparseSummary {
  double auc_base = 0.0, auc_prior = 0.0, gini_base = 0.0, gini_prior = 0.0;
  std::optional<eval::TTest> auc_t;
};

inline SparseSummary summarize(const std::vector<SparseReplicate>& reps) {
  std::vector<double> ab, ap, gb, gp;
  for (const auto& r : reps) {
    ab.push_back(r.auc_base);
    ap.push_back(r.auc_prior);
    gb.push_back(r.gini_base);
    gp.push_back(r.gini_prior);
  }
  return {mean_of(ab), mean_of(ap), mean_of(gb), mean_of(gp), try_t_test(ap, ab)};
}

inline json to_json(const SparseSummary& s) {
  return {{"mean_test_auc", {{"base", s.auc_base}, {"prior", s.auc_prior}}},
          {"mean_gini", {{"base", s.gini_base}, {"prior", s.gini_prior}}},
          {"paired_t_auc", t_test_json(s.auc_t)}};
}

// ---------------------------------------------------------------------------
// Pixel prior and noise robustness.

struct ImageConfig {
  data::ImageTaskSpec task;
  priors::Source source = priors::Source::expected_gradients;
  std::size_t n_train = 600;
  std::size_t n_val = 200;
  std::size_t n_test = 500;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  NetConfig net{{32}};
  train::TrainConfig training = [] {
    train::TrainConfig t;
    t.epochs = 30;
    t.batch_size = 32;
    t.k = 1;
    t.loss.kind = nn::LossKind::bce;
    return t;
  }();
  std::vector<double> lambda_grid{1e-5, 1e-4, 1e-3, 1e-2};
  double slack = 0.1;
  std::vector<double> sigmas{0.0, 0.5, 1.0, 1.5, 2.0};
  std::size_t eval_k = 50;
};

struct ImageReplicate {
  std::uint64_t seed = 0;
  train::LambdaChoice choice;
  double tv_base = 0.0, tv_prior = 0.0;  // normalized attribution TV on the test set
  std::vector<double> acc_base, acc_prior;  // per sigma
};

inline ImageReplicate run_image_replicate(const ImageConfig& cfg, std::size_t index) {
  ImageReplicate out;
  out.seed = cfg.seeds.at(index);
  const data::Dataset tr = data::gen_image_task(cfg.n_train, cfg.task, derive_seed(out.seed, 1));
  const data::Dataset va = data::gen_image_task(cfg.n_val, cfg.task, derive_seed(out.seed, 2));
  const data::Dataset te = data::gen_image_task(cfg.n_test, cfg.task, derive_seed(out.seed, 3));
  const auto st = data::Standardizer::fit(tr.X);
  const Matrix Xtr = st.apply(tr.X), Xva = st.apply(va.X), Xte = st.apply(te.X);
  const nn::Model init = make_net(cfg.net, tr.features(), tr.grid, nn::Activation::sigmoid, derive_seed(out.seed, 4));
  train::TrainConfig t = cfg.training;
  t.seed = derive_seed(out.seed, 5);
  priors::PriorSpec tv = priors::prior_from_string("pixel-tv");
  tv.source = cfg.source;
  t.priors = {tv};
  const train::SweepResult sweep = train::lambda_sweep(init, Xtr, tr.y, Xva, va.y, t, 0, cfg.lambda_grid, cfg.slack,
                                                       cfg.eval_k);
  out.choice = sweep.choice;
  const nn::Model& base = sweep.runs[0].model;
  const nn::Model& chosen = sweep.runs[sweep.chosen].model;
  const auto tv_of = [&](const nn::Model& m) {
    const Matrix phi = attrib::expected_gradients(m, Xte, attrib::ReferenceSet{Xtr}, cfg.eval_k,
                                                  derive_seed(out.seed, 6)).values;
    return priors::tv_penalty(phi, te.grid, tv.normalize);
  };
  out.tv_base = tv_of(base);
  out.tv_prior = tv_of(chosen);
  const auto robustness = [&](const nn::Model& m) {
    const std::vector<std::function<Matrix(const Matrix&)>> f{[&m](const Matrix& X) { return nn::evaluate(m, X); }};
    return eval::noise_robustness(f, Xte, te.y, cfg.sigmas, derive_seed(out.seed, 7)).mean_accuracy;
  };
  out.acc_base = robustness(base);
  out.acc_prior = robustness(chosen);
  return out;
}

inline json to_json(const ImageReplicate& r) {
  json sweep = json::array();
  for (const auto& rep : r.choice.reports) {
    sweep.push_back({{"lambda", rep.lambda}, {"val_accuracy", rep.val_metric}, {"val_penalty", rep.penalty}});
  }
  return {{"seed", r.seed},
          {"lambda", r.choice.lambda},
          {"warning", r.choice.warning},
          {"sweep", sweep},
          {"tv", {{"base", r.tv_base}, {"prior", r.tv_prior}}},
          {"accuracy", {{"base", r.acc_base}, {"prior", r.acc_prior}}}};
}

struct ImageSummary {
  std::vector<double> sigmas;
  eval::RobustnessCurve base, prior;
  double tv_base = 0.0, tv_prior = 0.0;
  double tv_ratio = 0.0;
};

inline eval::RobustnessCurve robustness_curve(const std::vector<double>& sigmas,
                                              const std::vector<std::vector<double>>& acc) {
  eval::RobustnessCurve c;
  c.sigma = sigmas;
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    std::vector<double> v;
    for (const auto& a : acc) v.push_back(a[s]);
    const double m = mean_of(v);
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    c.mean_accuracy.push_back(m);
    c.std_accuracy.push_back(v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0);
  }
  return c;
}

inline ImageSummary summarize(const std::vector<ImageReplicate>& reps, const std::vector<double>& sigmas) {
  ImageSummary s;
  s.sigmas = sigmas;
  std::vector<std::vector<double>> ab, ap;
  std::vector<double> tb, tp;
  for (const auto& r : reps) {
    ab.push_back(r.acc_base);
    ap.push_back(r.acc_prior);
    tb.push_back(r.tv_base);
    tp.push_back(r.tv_prior);
  }
  s.base = robustness_curve(sigmas, ab);
  s.prior = robustness_curve(sigmas, ap);
  s.tv_base = mean_of(tb);
  s.tv_prior = mean_of(tp);
  s.tv_ratio = s.tv_prior / s.tv_base;
  return s;
}

inline json to_json(const eval::RobustnessCurve& c) {
  return {{"sigma", c.sigma}, {"mean_accuracy", c.mean_accuracy}, {"std_accuracy", c.std_accuracy}};
}

inline json to_json(const ImageSummary& s) {
  return {{"robustness", {{"base", to_json(s.base)}, {"prior", to_json(s.prior)}}},
          {"mean_tv", {{"base", s.tv_base}, {"prior", s.tv_prior}}},
          {"tv_ratio", s.tv_ratio}};
}

// ---------------------------------------------------------------------------
// Replicate reports read back from JSON, so aggregates can be recomputed
// from saved files alone.

namespace detail {

template <class F>
auto read_report(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + " report: " + e.what());
  }
}

}  // namespace detail

inline BenchmarkRun benchmark_run_from_json(const json& j) {
  return detail::read_report("benchmark", [&] {
    BenchmarkRun r;
    r.dataset = j.at("dataset").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.test_r2 = j.at("test_r2").get<double>();
    for (const auto& method : benchmark_methods()) {
      const json& m = j.at("methods").at(method);
      bench::MethodScores s;
      s.method = method;
      for (std::size_t i = 0; i < 18; ++i) {
        const std::string name = bench::all_metrics()[i].name();
        s.scores[i] = m.at("scores").at(name).get<double>();
        s.curves[i] = m.at("curves").at(name).get<std::vector<double>>();
      }
      r.result.methods.push_back(std::move(s));
    }
    return r;
  });
}

inline GraphReplicate graph_replicate_from_json(const json& j) {
  return detail::read_report("graph", [&] {
    GraphReplicate r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.r2_base = j.at("r2").at("base").get<double>();
    r.r2_graph = j.at("r2").at("graph").get<double>();
    r.r2_random = j.at("r2").at("random_graph").get<double>();
    r.smooth_base = j.at("smoothness").at("base").get<double>();
    r.smooth_graph = j.at("smoothness").at("graph").get<double>();
    r.smooth_random = j.at("smoothness").at("random_graph").get<double>();
    r.nu_graph = j.at("nu").at("graph").get<double>();
    r.nu_random = j.at("nu").at("random_graph").get<double>();
    return r;
  });
}

inline eval::LorenzCurve lorenz_from_json(const json& j) {
  return {j.at("fraction").get<std::vector<double>>(), j.at("cumulative_share").get<std::vector<double>>()};
}

inline SparseReplicate sparse_replicate_from_json(const json& j) {
  return detail::read_report("sparse", [&] {
    SparseReplicate r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.lambda = j.at("lambda").get<double>();
    r.val_auc = j.at("val_auc").get<std::vector<double>>();
    r.auc_base = j.at("test_auc").at("base").get<double>();
    r.auc_prior = j.at("test_auc").at("prior").get<double>();
    r.gini_base = j.at("gini").at("base").get<double>();
    r.gini_prior = j.at("gini").at("prior").get<double>();
    r.lorenz_base = lorenz_from_json(j.at("lorenz").at("base"));
    r.lorenz_prior = lorenz_from_json(j.at("lorenz").at("prior"));
    return r;
  });
}

inline ImageReplicate image_replicate_from_json(const json& j) {
  return detail::read_report("image", [&] {
    ImageReplicate r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.choice.lambda = j.at("lambda").get<double>();
    r.choice.warning = j.at("warning").get<bool>();
    for (const auto& s : j.at("sweep")) {
      r.choice.reports.push_back(
          {s.at("lambda").get<double>(), s.at("val_accuracy").get<double>(), s.at("val_penalty").get<double>()});
    }
    r.tv_base = j.at("tv").at("base").get<double>();
    r.tv_prior = j.at("tv").at("prior").get<double>();
    r.acc_base = j.at("accuracy").at("base").get<std::vector<double>>();
    r.acc_prior = j.at("accuracy").at("prior").get<std::vector<double>>();
    return r;
  });
}

// Pointwise mean of Lorenz curves over replicates with the same feature count.
inline eval::LorenzCurve mean_lorenz(const std::vector<eval::LorenzCurve>& curves) {
  if (curves.empty()) throw InvalidSpec("no Lorenz curves to average");
  eval::LorenzCurve out = curves.front();
  for (std::size_t c = 1; c < curves.size(); ++c) {
    if (curves[c].cumulative_share.size() != out.cumulative_share.size()) {
      throw ShapeError("Lorenz curves have different lengths");
    }
    for (std::size_t i = 0; i < out.cumulative_share.size(); ++i) out.cumulative_share[i] += curves[c].cumulative_share[i];
  }
  for (double& v : out.cumulative_share) v /= static_cast<double>(curves.size());
  return out;
}

}  // namespace attripriors::experiments
