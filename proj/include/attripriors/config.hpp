#pragma once

// JSON run configuration for the command-line tool. Every section is read
// through a Section, which rejects unknown keys and records the value used
// for each key (given or default), so the resolved configuration can be
// embedded in reports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "attripriors/data.hpp"
#include "attripriors/errors.hpp"
#include "attripriors/experiments.hpp"
#include "attripriors/nn.hpp"
#include "attripriors/priors.hpp"
#include "attripriors/train.hpp"

namespace attripriors::config {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

namespace detail {

template <class T>
struct is_vector : std::false_type {};
template <class T>
struct is_vector<std::vector<T>> : std::true_type {
  using value_type = T;
};

template <class T>
T convert(const json& j, const std::string& where) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw ConfigError(where + ": expected true or false");
    return j.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) throw ConfigError(where + ": expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (!j.is_number_unsigned()) throw ConfigError(where + ": expected a non-negative integer");
    }
    return j.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) throw ConfigError(where + ": expected a number");
    return j.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) throw ConfigError(where + ": expected a string");
    return j.get<std::string>();
  } else if constexpr (is_vector<T>::value) {
    if (!j.is_array()) throw ConfigError(where + ": expected an array");
    T out;
    for (std::size_t i = 0; i < j.size(); ++i) {
      out.push_back(convert<typename is_vector<T>::value_type>(j[i], where + "[" + std::to_string(i) + "]"));
    }
    return out;
  } else {
    static_assert(sizeof(T) == 0, "unsupported config value type");
  }
}

}  // namespace detail

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    used_.insert(key);
    const auto it = j_.find(key);
    T v = it == j_.end() ? fallback : detail::convert<T>(*it, where(key));
    resolved_[key] = v;
    return v;
  }

  template <class T>
  T require(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(where(key) + " is required");
    return get<T>(key, T{});
  }

  template <class T>
  std::optional<T> optional(const std::string& key) {
    used_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) {
      resolved_[key] = nullptr;
      return std::nullopt;
    }
    T v = detail::convert<T>(*it, where(key));
    resolved_[key] = v;
    return v;
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  void mark(const std::string& key) { used_.insert(key); }

  // Sub-object; missing keys read as an empty object.
  Section child(const std::string& key) {
    used_.insert(key);
    static const json empty = json::object();
    const auto it = j_.find(key);
    return Section(it == j_.end() ? empty : *it, where(key));
  }

  const json& raw(const std::string& key) const { return j_.at(key); }
  void put(const std::string& key, json v) { resolved_[key] = std::move(v); }
  std::string where(const std::string& key) const { return path_ + "." + key; }

  json finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown key " + where(key));
    }
    return resolved_;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
  json resolved_ = json::object();
};

inline void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

// ---------------------------------------------------------------------------
// Sections.

struct DatasetConfig {
  std::string kind;  // correlated-groups-60, independent-linear-60, image, graph, sparse, csv
  std::size_t n = 1000;
  double train = 0.6;
  double val = 0.2;
  bool standardize = true;
  data::ImageTaskSpec image;
  std::size_t p = 64;
  data::GraphSpec graph;
  data::SparseSpec sparse;
  std::string path;
  std::string label = "y";
  std::string task = "auto";  // csv only
};

inline const std::vector<std::string>& dataset_kinds() {
  static const std::vector<std::string> k{"correlated-groups-60", "independent-linear-60", "image", "graph",
                                          "sparse", "csv"};
  return k;
}

inline data::ImageTaskSpec read_image_spec(Section& s, data::ImageTaskSpec d) {
  d.h = s.get("h", d.h);
  d.w = s.get("w", d.w);
  d.noise = s.get("noise", d.noise);
  d.pixel_jitter = s.get("pixel_jitter", d.pixel_jitter);
  d.blob_sigma = s.get("blob_sigma", d.blob_sigma);
  d.shift = s.get("shift", d.shift);
  check(d.h >= 4 && d.w >= 4, s.where("h") + ": image grids need h, w >= 4");
  check(d.noise >= 0.0 && d.pixel_jitter >= 0.0 && d.blob_sigma > 0.0 && d.shift >= 0.0,
        s.where("noise") + ": image noise, jitter and shift must be >= 0 and blob_sigma > 0");
  return d;
}

inline data::GraphSpec read_graph_spec(Section& s, data::GraphSpec d) {
  d.community_size = s.get("community_size", d.community_size);
  d.within_degree = s.get("within_degree", d.within_degree);
  d.between_degree = s.get("between_degree", d.between_degree);
  d.min_weight = s.get("min_weight", d.min_weight);
  d.max_weight = s.get("max_weight", d.max_weight);
  d.ridge = s.get("ridge", d.ridge);
  d.noise = s.get("noise", d.noise);
  check(d.community_size >= 2, s.where("community_size") + " must be >= 2");
  check(d.within_degree >= 0.0 && d.between_degree >= 0.0, s.where("within_degree") + ": degrees must be >= 0");
  check(d.min_weight > 0.0 && d.max_weight >= d.min_weight, s.where("min_weight") + ": need 0 < min <= max");
  check(d.ridge > 0.0, s.where("ridge") + " must be > 0");
  check(d.noise >= 0.0, s.where("noise") + " must be >= 0");
  return d;
}

inline data::SparseSpec read_sparse_spec(Section& s, data::SparseSpec d) {
  d.p = s.get("p", d.p);
  d.informative = s.get("informative", d.informative);
  d.signal = s.get("signal", d.signal);
  check(d.informative >= 1 && d.informative <= d.p, s.where("informative") + " must be in [1, p]");
  return d;
}

inline DatasetConfig read_dataset(Section& s) {
  DatasetConfig d;
  d.kind = s.require<std::string>("kind");
  check(std::find(dataset_kinds().begin(), dataset_kinds().end(), d.kind) != dataset_kinds().end(),
        s.where("kind") + ": unknown dataset '" + d.kind + "'");
  if (d.kind != "csv") d.n = s.get("n", d.n);
  d.train = s.get("train", d.train);
  d.val = s.get("val", d.val);
  d.standardize = s.get("standardize", d.standardize);
  check(d.train > 0.0 && d.val > 0.0 && d.train + d.val < 1.0,
        s.where("train") + ": split fractions must be positive and sum to less than 1");
  check(d.kind == "csv" || d.n >= 10, s.where("n") + " must be >= 10");
  if (d.kind == "image") {
    Section c = s.child("image");
    d.image = read_image_spec(c, d.image);
    s.put("image", c.finish());
  } else if (d.kind == "graph") {
    d.p = s.get("p", d.p);
    check(d.p >= 4, s.where("p") + " must be >= 4");
    Section c = s.child("graph");
    d.graph = read_graph_spec(c, d.graph);
    s.put("graph", c.finish());
  } else if (d.kind == "sparse") {
    Section c = s.child("sparse");
    d.sparse = read_sparse_spec(c, d.sparse);
    s.put("sparse", c.finish());
  } else if (d.kind == "csv") {
    d.path = s.require<std::string>("path");
    d.label = s.get("label", d.label);
    d.task = s.get("task", d.task);
    check(d.task == "auto" || d.task == "regression" || d.task == "binary" || d.task == "multiclass",
          s.where("task") + ": expected auto, regression, binary or multiclass");
  }
  return d;
}

inline experiments::NetConfig read_net(Section& s, experiments::NetConfig d) {
  d.hidden = s.get("hidden", d.hidden);
  const std::string act = s.get<std::string>("activation", nn::to_string(d.activation));
  d.dropout = s.get("dropout", d.dropout);
  try {
    d.activation = nn::activation_from_string(act);
  } catch (const InvalidSpec&) {
    throw ConfigError(s.where("activation") + ": unknown activation '" + act + "'");
  }
  check(d.activation != nn::Activation::softmax, s.where("activation") + ": softmax is an output activation only");
  for (std::size_t h : d.hidden) check(h >= 1, s.where("hidden") + ": layer widths must be >= 1");
  check(d.dropout >= 0.0 && d.dropout < 1.0, s.where("dropout") + " must be in [0, 1)");
  return d;
}

inline train::OptimizerSpec read_optimizer(Section& s, train::OptimizerSpec d) {
  const std::string kind = s.get<std::string>("kind", train::to_string(d.kind));
  try {
    d.kind = train::optimizer_from_string(kind);
  } catch (const InvalidSpec&) {
    throw ConfigError(s.where("kind") + ": unknown optimizer '" + kind + "'");
  }
  d.learning_rate = s.get("learning_rate", d.learning_rate);
  d.momentum = s.get("momentum", d.momentum);
  d.beta1 = s.get("beta1", d.beta1);
  d.beta2 = s.get("beta2", d.beta2);
  d.epsilon = s.get("epsilon", d.epsilon);
  d.decay_factor = s.get("decay_factor", d.decay_factor);
  d.decay_period = s.get("decay_period", d.decay_period);
  try {
    d.validate();
  } catch (const InvalidSpec& e) {
    throw ConfigError(s.where("kind") + ": " + e.what());
  }
  return d;
}

// Training section. The loss may be "auto", resolved from the task later.
struct TrainingConfig {
  train::TrainConfig train;
  std::string loss = "auto";
};

inline TrainingConfig read_training(Section& s, train::TrainConfig d, const std::string& default_loss) {
  TrainingConfig out;
  d.epochs = s.get("epochs", d.epochs);
  d.batch_size = s.get("batch_size", d.batch_size);
  d.k = s.get("k", d.k);
  d.patience = s.get("patience", d.patience);
  Section o = s.child("optimizer");
  d.optimizer = read_optimizer(o, d.optimizer);
  s.put("optimizer", o.finish());
  out.loss = s.get("loss", default_loss);
  if (out.loss != "auto") {
    try {
      d.loss.kind = nn::loss_from_string(out.loss);
    } catch (const InvalidSpec&) {
      throw ConfigError(s.where("loss") + ": unknown loss '" + out.loss + "'");
    }
  }
  check(d.epochs >= 1, s.where("epochs") + " must be >= 1");
  check(d.batch_size >= 2, s.where("batch_size") + " must be >= 2");
  check(d.k >= 1 && d.k < d.batch_size, s.where("k") + " must satisfy 1 <= k < batch_size");
  out.train = d;
  return out;
}

// A prior entry. Graph and mask sources are resolved against the dataset at
// run time.
struct PriorConfig {
  priors::PriorSpec spec;
  std::string graph;                      // "dataset", "random", or an edge-list path
  std::vector<std::size_t> mask_features;  // ross-grad-mask: penalised columns
};

inline PriorConfig read_prior(Section& s) {
  PriorConfig p;
  const std::string kind = s.require<std::string>("kind");
  try {
    p.spec = priors::prior_from_string(kind);
  } catch (const InvalidSpec&) {
    throw ConfigError(s.where("kind") + ": unknown prior '" + kind + "'");
  }
  p.spec.lambda = s.get("lambda", 1.0);
  check(p.spec.lambda >= 0.0 && std::isfinite(p.spec.lambda), s.where("lambda") + " must be finite and >= 0");
  if (p.spec.attribution_source() && p.spec.kind != priors::PriorKind::gini_gradients &&
      p.spec.kind != priors::PriorKind::l1_gradients) {
    const std::string src = s.get<std::string>("source", priors::to_string(p.spec.source));
    try {
      p.spec.source = priors::source_from_string(src);
    } catch (const InvalidSpec&) {
      throw ConfigError(s.where("source") + ": unknown attribution source '" + src + "'");
    }
  }
  if (p.spec.kind == priors::PriorKind::pixel_tv) p.spec.normalize = s.get("normalize", p.spec.normalize);
  const bool needs_graph = p.spec.kind == priors::PriorKind::graph ||
                           (p.spec.kind == priors::PriorKind::weight &&
                            p.spec.weight_kind == priors::WeightKind::graph_weights);
  if (needs_graph) p.graph = s.get<std::string>("graph", "dataset");
  if (p.spec.kind == priors::PriorKind::ross_grad_mask) {
    p.mask_features = s.require<std::vector<std::size_t>>("mask_features");
    check(!p.mask_features.empty(), s.where("mask_features") + " must not be empty");
  }
  return p;
}

inline std::vector<PriorConfig> read_priors(const json& j, const std::string& path, json* resolved) {
  check(j.is_array(), path + " must be an array");
  std::vector<PriorConfig> out;
  *resolved = json::array();
  for (std::size_t i = 0; i < j.size(); ++i) {
    Section s(j[i], path + "[" + std::to_string(i) + "]");
    out.push_back(read_prior(s));
    resolved->push_back(s.finish());
  }
  return out;
}

struct AttributionConfig {
  std::string method = "expected-gradients";
  std::size_t k = 100;
  std::size_t steps = 100;
  std::string baseline = "mean";  // integrated gradients: training mean or zero
  std::string model;              // path to a model JSON written by `train`
};

inline AttributionConfig read_attribution(Section& s) {
  AttributionConfig a;
  a.method = s.get("method", a.method);
  check(a.method == "expected-gradients" || a.method == "integrated-gradients" || a.method == "gradients" ||
            a.method == "random",
        s.where("method") + ": expected expected-gradients, integrated-gradients, gradients or random");
  a.k = s.get("k", a.k);
  a.steps = s.get("steps", a.steps);
  a.baseline = s.get("baseline", a.baseline);
  a.model = s.get("model", a.model);
  check(a.k >= 1 && a.steps >= 1, s.where("k") + ": k and steps must be >= 1");
  check(a.baseline == "mean" || a.baseline == "zero", s.where("baseline") + ": expected mean or zero");
  return a;
}

struct BenchmarkSection {
  experiments::BenchmarkConfig bench;
  std::size_t replicates = 5;
};

inline BenchmarkSection read_benchmark(Section& s) {
  BenchmarkSection b;
  auto& c = b.bench;
  c.datasets = s.get("datasets", c.datasets);
  check(!c.datasets.empty(), s.where("datasets") + " must not be empty");
  for (const auto& d : c.datasets) {
    check(d == "correlated-groups-60" || d == "independent-linear-60",
          s.where("datasets") + ": unknown benchmark dataset '" + d + "'");
  }
  c.n_train = s.get("n_train", c.n_train);
  c.n_test = s.get("n_test", c.n_test);
  b.replicates = s.get("replicates", b.replicates);
  Section m = s.child("model");
  c.net = read_net(m, c.net);
  s.put("model", m.finish());
  Section t = s.child("training");
  c.training = read_training(t, c.training, "mse").train;
  s.put("training", t.finish());
  c.k = s.get("k", c.k);
  c.ig_steps = s.get("ig_steps", c.ig_steps);
  c.resample_draws = s.get("resample_draws", c.resample_draws);
  check(c.n_train >= 10 && c.n_test >= 2, s.where("n_train") + ": need n_train >= 10 and n_test >= 2");
  check(b.replicates >= 1, s.where("replicates") + " must be >= 1");
  check(c.k >= 1 && c.ig_steps >= 1 && c.resample_draws >= 1, s.where("k") + ": k, ig_steps, resample_draws must be >= 1");
  return b;
}

inline std::vector<double> read_grid(Section& s, const std::string& key, const std::vector<double>& d) {
  std::vector<double> g = s.get(key, d);
  check(!g.empty(), s.where(key) + " must not be empty");
  for (double v : g) check(v >= 0.0 && std::isfinite(v), s.where(key) + ": values must be finite and >= 0");
  return g;
}

struct CustomConfig {
  std::size_t replicates = 3;
  std::vector<double> lambda_grid{0.01, 0.1, 1.0};
  double slack = 0.1;
  std::size_t eval_k = 50;
};

struct ExperimentConfig {
  std::string kind;  // benchmark, graph, sparse, image, custom
  std::size_t replicates = 0;
  BenchmarkSection benchmark;
  experiments::GraphConfig graph;
  experiments::SparseConfig sparse;
  experiments::ImageConfig image;
  CustomConfig custom;
};

inline ExperimentConfig read_experiment(Section& s, std::uint64_t seed) {
  ExperimentConfig e;
  e.kind = s.require<std::string>("kind");
  if (e.kind == "benchmark") {
    e.benchmark = read_benchmark(s);
    e.replicates = e.benchmark.replicates;
  } else if (e.kind == "graph") {
    auto& g = e.graph;
    g.seed = seed;
    g.replicates = s.get("replicates", g.replicates);
    g.n = s.get("n", g.n);
    g.p = s.get("p", g.p);
    Section gs = s.child("graph");
    g.graph = read_graph_spec(gs, g.graph);
    s.put("graph", gs.finish());
    g.train_frac = s.get("train_frac", g.train_frac);
    g.val_frac = s.get("val_frac", g.val_frac);
    Section m = s.child("model");
    g.net = read_net(m, g.net);
    s.put("model", m.finish());
    Section t = s.child("pretrain");
    g.pretrain = read_training(t, g.pretrain, "mse").train;
    s.put("pretrain", t.finish());
    g.finetune_epochs = s.get("finetune_epochs", g.finetune_epochs);
    g.finetune_patience = s.get("finetune_patience", g.finetune_patience);
    g.k = s.get("k", g.k);
    g.nu = s.optional<double>("nu");
    g.eval_k = s.get("eval_k", g.eval_k);
    check(g.replicates >= 1, s.where("replicates") + " must be >= 1");
    check(g.p >= 4 && g.n >= 10, s.where("n") + ": need n >= 10 and p >= 4");
    check(g.train_frac > 0.0 && g.val_frac > 0.0 && g.train_frac + g.val_frac < 1.0,
          s.where("train_frac") + ": split fractions must be positive and sum to less than 1");
    check(g.k >= 1 && g.k < g.pretrain.batch_size, s.where("k") + " must satisfy 1 <= k < batch_size");
    check(!g.nu || *g.nu > 0.0, s.where("nu") + " must be > 0");
    check(g.eval_k >= 1, s.where("eval_k") + " must be >= 1");
    e.replicates = g.replicates;
  } else if (e.kind == "sparse") {
    auto& c = e.sparse;
    c.seed = seed;
    c.replicates = s.get("replicates", c.replicates);
    Section ts = s.child("task");
    c.task = read_sparse_spec(ts, c.task);
    s.put("task", ts.finish());
    c.n_train = s.get("n_train", c.n_train);
    c.n_val = s.get("n_val", c.n_val);
    c.n_test = s.get("n_test", c.n_test);
    Section m = s.child("model");
    c.net = read_net(m, c.net);
    s.put("model", m.finish());
    Section t = s.child("training");
    c.training = read_training(t, c.training, "bce").train;
    check(c.training.loss.kind == nn::LossKind::bce, t.where("loss") + ": the sparse experiment is binary (bce)");
    s.put("training", t.finish());
    c.prior = s.get("prior", c.prior);
    try {
      const auto spec = priors::prior_from_string(c.prior);
      check(spec.kind != priors::PriorKind::graph && spec.kind != priors::PriorKind::ross_grad_mask &&
                spec.kind != priors::PriorKind::pixel_tv &&
                !(spec.kind == priors::PriorKind::weight && spec.weight_kind == priors::WeightKind::graph_weights),
            s.where("prior") + ": needs a prior without graph, mask or image structure");
    } catch (const InvalidSpec&) {
      throw ConfigError(s.where("prior") + ": unknown prior '" + c.prior + "'");
    }
    c.lambda_grid = read_grid(s, "lambda_grid", c.lambda_grid);
    c.eval_k = s.get("eval_k", c.eval_k);
    check(c.replicates >= 1, s.where("replicates") + " must be >= 1");
    check(c.n_train >= c.training.batch_size && c.n_val >= 2 && c.n_test >= 2,
          s.where("n_train") + ": need n_train >= batch_size and n_val, n_test >= 2");
    check(c.eval_k >= 1, s.where("eval_k") + " must be >= 1");
    e.replicates = c.replicates;
  } else if (e.kind == "image") {
    auto& c = e.image;
    const std::size_t reps = s.get<std::size_t>("replicates", c.seeds.size());
    check(reps >= 1, s.where("replicates") + " must be >= 1");
    c.seeds.clear();
    for (std::size_t i = 0; i < reps; ++i) c.seeds.push_back(seed + i);
    Section ts = s.child("task");
    c.task = read_image_spec(ts, c.task);
    s.put("task", ts.finish());
    const std::string src = s.get<std::string>("source", priors::to_string(c.source));
    check(src == "expected-gradients" || src == "gradients",
          s.where("source") + ": expected expected-gradients or gradients");
    c.source = priors::source_from_string(src);
    c.n_train = s.get("n_train", c.n_train);
    c.n_val = s.get("n_val", c.n_val);
    c.n_test = s.get("n_test", c.n_test);
    Section m = s.child("model");
    c.net = read_net(m, c.net);
    s.put("model", m.finish());
    Section t = s.child("training");
    c.training = read_training(t, c.training, "bce").train;
    check(c.training.loss.kind == nn::LossKind::bce, t.where("loss") + ": the image experiment is binary (bce)");
    s.put("training", t.finish());
    c.lambda_grid = read_grid(s, "lambda_grid", c.lambda_grid);
    c.slack = s.get("slack", c.slack);
    c.sigmas = s.get("sigmas", c.sigmas);
    c.eval_k = s.get("eval_k", c.eval_k);
    check(c.slack >= 0.0 && c.slack < 1.0, s.where("slack") + " must be in [0, 1)");
    check(!c.sigmas.empty() && c.sigmas.front() == 0.0, s.where("sigmas") + " must start at 0");
    for (std::size_t i = 1; i < c.sigmas.size(); ++i) {
      check(c.sigmas[i] > c.sigmas[i - 1], s.where("sigmas") + " must be strictly increasing");
    }
    check(c.n_train >= c.training.batch_size && c.n_val >= 2 && c.n_test >= 2,
          s.where("n_train") + ": need n_train >= batch_size and n_val, n_test >= 2");
    check(c.eval_k >= 1, s.where("eval_k") + " must be >= 1");
    e.replicates = reps;
  } else if (e.kind == "custom") {
    auto& c = e.custom;
    c.replicates = s.get("replicates", c.replicates);
    c.lambda_grid = read_grid(s, "lambda_grid", c.lambda_grid);
    c.slack = s.get("slack", c.slack);
    c.eval_k = s.get("eval_k", c.eval_k);
    check(c.replicates >= 1, s.where("replicates") + " must be >= 1");
    check(c.slack >= 0.0 && c.slack < 1.0, s.where("slack") + " must be in [0, 1)");
    check(c.eval_k >= 1, s.where("eval_k") + " must be >= 1");
    e.replicates = c.replicates;
  } else {
    throw ConfigError(s.where("kind") + ": unknown experiment '" + e.kind +
                      "' (expected benchmark, graph, sparse, image or custom)");
  }
  return e;
}

// ---------------------------------------------------------------------------
// Whole file.

struct Config {
  std::uint64_t seed = 1;
  std::string output = "out";
  std::optional<DatasetConfig> dataset;
  experiments::NetConfig model;
  TrainingConfig training;
  std::vector<PriorConfig> priors;
  std::optional<AttributionConfig> attribution;
  std::optional<BenchmarkSection> benchmark;
  std::optional<ExperimentConfig> experiment;
  json resolved;  // every setting actually used, output directory excluded
};

inline Config parse(const json& j) {
  check(j.is_object(), "config must be a JSON object");
  Section s(j, "config");
  Config c;
  const auto version = s.require<int>("schema_version");
  check(version == kSchemaVersion, "config.schema_version: expected " + std::to_string(kSchemaVersion) + ", got " +
                                       std::to_string(version));
  c.seed = s.get("seed", c.seed);
  c.output = s.get("output", c.output);
  if (s.has("dataset")) {
    Section d = s.child("dataset");
    c.dataset = read_dataset(d);
    s.put("dataset", d.finish());
  }
  Section m = s.child("model");
  c.model = read_net(m, c.model);
  s.put("model", m.finish());
  Section t = s.child("training");
  c.training = read_training(t, train::TrainConfig{}, "auto");
  s.put("training", t.finish());
  if (s.has("priors")) {
    json r;
    c.priors = read_priors(s.raw("priors"), "config.priors", &r);
    s.mark("priors");
    s.put("priors", r);
  } else {
    s.put("priors", json::array());
  }
  if (s.has("attribution")) {
    Section a = s.child("attribution");
    c.attribution = read_attribution(a);
    s.put("attribution", a.finish());
  }
  if (s.has("benchmark")) {
    Section b = s.child("benchmark");
    c.benchmark = read_benchmark(b);
    s.put("benchmark", b.finish());
  }
  if (s.has("experiment")) {
    Section e = s.child("experiment");
    c.experiment = read_experiment(e, c.seed);
    s.put("experiment", e.finish());
  }
  c.resolved = s.finish();
  c.resolved.erase("output");
  // Model, training and priors only apply to a dataset.
  if (!c.dataset) {
    for (const char* key : {"model", "training", "priors"}) {
      if (j.contains(key)) throw ConfigError(std::string("config.") + key + " needs config.dataset");
      c.resolved.erase(key);
    }
  }
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace attripriors::config
