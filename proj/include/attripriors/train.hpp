#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attripriors/attrib.hpp"
#include "attripriors/errors.hpp"
#include "attripriors/eval.hpp"
#include "attripriors/linalg.hpp"
#include "attripriors/nn.hpp"
#include "attripriors/priors.hpp"

namespace attripriors::train {

using ad::NodeId;
using ad::Tape;
using priors::PriorKind;
using priors::PriorSpec;

// ---------------------------------------------------------------------------
// Optimizers.

enum class OptimizerKind { sgd_momentum, adam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd-momentum"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd-momentum" || s == "sgd") return OptimizerKind::sgd_momentum;
  throw InvalidSpec("unknown optimizer '" + s + "'");
}

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay_factor = 1.0;
  std::size_t decay_period = 1;  // epochs

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidSpec("learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidSpec("momentum must be in [0,1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw InvalidSpec("adam betas must be in [0,1)");
    }
    if (!(epsilon > 0.0)) throw InvalidSpec("adam epsilon must be > 0");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw InvalidSpec("decay factor must be in (0,1]");
    if (decay_period < 1) throw InvalidSpec("decay period must be >= 1");
  }

  double rate_at(std::size_t epoch) const {
    const auto d = static_cast<int>(epoch / decay_period);
    return decay_factor == 1.0 ? learning_rate : learning_rate * std::pow(decay_factor, d);
  }
};

class Optimizer {
 public:
  Optimizer(const OptimizerSpec& spec, std::size_t params) : spec_(spec), m_(params, 0.0), v_(params, 0.0) {
    spec_.validate();
  }

  void step(std::vector<double>& params, const std::vector<double>& grad, std::size_t epoch) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw ShapeError("optimizer parameter count changed");
    const double lr = spec_.rate_at(epoch);
    ++t_;
    if (spec_.kind == OptimizerKind::sgd_momentum) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = spec_.momentum * m_[i] + grad[i];
        params[i] -= lr * m_[i];
      }
      return;
    }
    const double c1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = spec_.beta1 * m_[i] + (1.0 - spec_.beta1) * grad[i];
      v_[i] = spec_.beta2 * v_[i] + (1.0 - spec_.beta2) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + spec_.epsilon);
    }
  }

  std::size_t steps() const { return t_; }
  const OptimizerSpec& spec() const { return spec_; }

 private:
  OptimizerSpec spec_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Configuration and results.

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::size_t k = 1;  // references per sample for the training estimator
  std::vector<PriorSpec> priors;
  std::size_t patience = 0;  // 0 disables early stopping
  std::uint64_t seed = 0;
  OptimizerSpec optimizer;
  nn::LossSpec loss;
  bool alternating = false;

  bool needs_expected_gradients() const {
    return std::any_of(priors.begin(), priors.end(), [](const PriorSpec& p) {
      return p.lambda > 0.0 && p.attribution_source() == priors::Source::expected_gradients;
    });
  }

  void validate() const {
    if (epochs < 1 && !alternating) throw InvalidSpec("epochs must be >= 1");
    if (batch_size < 1) throw InvalidSpec("batch size must be >= 1");
    optimizer.validate();
    for (const auto& p : priors) p.validate();
    if (needs_expected_gradients() && !(k >= 1 && k < batch_size)) {
      throw InvalidK("training estimator needs 1 <= k < batch size (k=" + std::to_string(k) +
                     ", batch=" + std::to_string(batch_size) + ")");
    }
  }
};

struct TrainResult {
  nn::Model model;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_metric;  // accuracy for classification losses, R^2 for mse
  std::vector<double> penalty;     // mean over batches of the summed raw penalties of active priors
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  double nu = 0.0;  // alternating fine-tuning only
  double wall_time = 0.0;  // seconds
};

inline nlohmann::json to_json(const TrainResult& r, const std::string& model_ref) {
  nlohmann::json j;
  j["model"] = model_ref;
  j["epochs"] = r.train_loss.size();
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  j["val_metric"] = r.val_metric;
  j["penalty"] = r.penalty;
  j["best_epoch"] = r.best_epoch;
  j["steps"] = r.steps;
  if (r.nu != 0.0) j["nu"] = r.nu;
  return j;
}

// ---------------------------------------------------------------------------
// Shared pieces.

namespace detail {

inline bool is_classification(nn::LossSpec spec) { return spec.kind != nn::LossKind::mse; }

inline double metric(const nn::Model& m, const Matrix& X, const Vector& y, nn::LossSpec spec) {
  const Matrix out = nn::evaluate(m, X);
  if (is_classification(spec)) return eval::accuracy(out, y);
  return eval::r_squared(out.col(0), y);
}

inline attrib::Target target_for(const nn::Model& m, const Vector& y) {
  attrib::Target t;
  if (m.outputs() > 1) {
    for (Eigen::Index r = 0; r < y.size(); ++r) t.per_row.push_back(static_cast<std::size_t>(y[r]));
  }
  return t;
}

inline void check_sets(const nn::Model& m, const Matrix& X, const Vector& y, const char* what) {
  if (X.rows() < 1) throw ShapeError(std::string(what) + " set is empty");
  if (X.rows() != y.size()) throw ShapeError(std::string(what) + " set has mismatched X and y rows");
  if (static_cast<std::size_t>(X.cols()) != m.features()) {
    throw ShapeError(std::string(what) + " set has " + std::to_string(X.cols()) + " features, model expects " +
                     std::to_string(m.features()));
  }
}

// Batches of a permutation. A short tail that cannot host the training
// estimator is merged into the previous batch.
inline std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& order, std::size_t size,
                                                     std::size_t min_tail) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += size) {
    const std::size_t end = std::min(order.size(), start + size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (out.size() > 1 && out.back().size() < min_tail) {
    auto tail = std::move(out.back());
    out.pop_back();
    out.back().insert(out.back().end(), tail.begin(), tail.end());
  }
  return out;
}

// Penalty nodes of the selected priors on one batch. `phi` is computed at
// most once per attribution source.
struct PriorTerms {
  std::vector<std::pair<double, NodeId>> terms;  // (lambda, penalty)
};

inline PriorTerms prior_terms(Tape& tape, const nn::BoundModel& bm, const std::vector<PriorSpec>& specs,
                              const Matrix& Xb, const Vector& yb, const std::vector<std::size_t>& rows,
                              std::size_t k, Rng& eg_rng, nn::LossSpec loss, bool include_zero) {
  PriorTerms out;
  std::optional<attrib::NodeMatrix> eg, grad;
  const attrib::Target target = target_for(*bm.model, yb);
  for (const auto& spec : specs) {
    if (spec.lambda == 0.0 && !include_zero) continue;
    NodeId penalty = 0;
    if (spec.kind == PriorKind::weight) {
      penalty = priors::weight_penalty(tape, bm, spec.weight_kind, spec.graph ? &*spec.graph : nullptr);
    } else if (spec.kind == PriorKind::ross_grad_mask) {
      penalty = priors::ross_grad_mask_penalty(tape, bm, Xb, yb, rows_of(*spec.mask, rows), loss);
    } else if (spec.attribution_source() == priors::Source::expected_gradients) {
      if (!eg) eg = attrib::expected_gradients_train_batch(tape, bm, Xb, k, eg_rng, target);
      penalty = priors::attribution_penalty(tape, spec, *eg, bm.model->input.grid);
    } else {
      if (!grad) grad = attrib::gradients_train_batch(tape, bm, Xb, target);
      penalty = priors::attribution_penalty(tape, spec, *grad, bm.model->input.grid);
    }
    out.terms.emplace_back(spec.lambda, penalty);
  }
  return out;
}

inline void check_finite(const std::vector<double>& v, const std::string& where) {
  for (double x : v) {
    if (!std::isfinite(x)) throw DivergenceError("non-finite gradient " + where);
  }
}

inline std::string context(std::size_t epoch, std::size_t step) {
  return "at epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(step + 1);
}

inline void check_masks(const std::vector<PriorSpec>& specs, const Matrix& X) {
  for (const auto& s : specs) {
    if (s.kind == PriorKind::ross_grad_mask && s.mask &&
        (s.mask->rows() != X.rows() || s.mask->cols() != X.cols())) {
      throw ShapeError("gradient mask must match the training matrix shape");
    }
  }
}

}  // namespace detail

// Penalties of every listed prior for a fixed model, regardless of lambda.
// Expected gradients use the data itself as references with `k` draws per row.
inline std::vector<double> evaluate_priors(const nn::Model& m, const Matrix& X, const Vector& y,
                                           const std::vector<PriorSpec>& specs, std::size_t k, std::uint64_t seed,
                                           nn::LossSpec loss = {}) {
  detail::check_sets(m, X, y, "evaluation");
  std::vector<double> out;
  std::optional<Matrix> eg, grad;
  const attrib::Target target = detail::target_for(m, y);
  for (const auto& spec : specs) {
    spec.validate();
    if (spec.kind == PriorKind::weight) {
      out.push_back(priors::weight_penalty(m, spec.weight_kind, spec.graph ? &*spec.graph : nullptr));
      continue;
    }
    if (spec.kind == PriorKind::ross_grad_mask) {
      Tape tape;
      const auto bm = nn::bind(tape, m, false);
      out.push_back(tape.value(priors::ross_grad_mask_penalty(tape, bm, X, y, *spec.mask, loss)));
      continue;
    }
    const Matrix* phi = nullptr;
    if (spec.attribution_source() == priors::Source::expected_gradients) {
      if (!eg) eg = attrib::expected_gradients(m, X, attrib::ReferenceSet{X}, k, seed, target).values;
      phi = &*eg;
    } else {
      if (!grad) grad = attrib::grad_attrib(m, X, target).values;
      phi = &*grad;
    }
    const Vector g = attrib::global_mean_abs(*phi);
    const double n = static_cast<double>(phi->rows());
    switch (spec.kind) {
      case PriorKind::pixel_tv: out.push_back(priors::tv_penalty(*phi, m.input.grid, spec.normalize)); break;
      case PriorKind::graph: out.push_back(priors::graph_penalty(g, *spec.graph)); break;
      case PriorKind::sparse_gini:
      case PriorKind::gini_gradients: out.push_back(priors::gini_penalty(g)); break;
      case PriorKind::mixed_l1_gini: out.push_back(g.sum() + priors::gini_penalty(g)); break;
      case PriorKind::l1_attrib:
      case PriorKind::l1_gradients: out.push_back(g.sum()); break;
      case PriorKind::l2_attrib: out.push_back(phi->squaredNorm() / n); break;
      default: throw InvalidSpec("unhandled prior '" + spec.name() + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop.

class Trainer {
 public:
  Trainer(const nn::Model& init, const Matrix& X, const Vector& y, const Matrix& Xv, const Vector& yv,
          const TrainConfig& cfg)
      : cfg_(cfg), X_(X), y_(y), Xv_(Xv), yv_(yv), optimizer_(cfg.optimizer, init.parameter_count()) {
    cfg_.validate();
    init.validate();
    detail::check_sets(init, X, y, "training");
    detail::check_sets(init, Xv, yv, "validation");
    detail::check_masks(cfg_.priors, X);
    result_.model = init;
  }

  // One pass over the training set. `mode` selects what is minimized:
  // 0 = loss + all priors, 1 = loss + weight penalties only, 2 = nu * attribution priors only.
  void epoch(int mode = 0) {
    const std::size_t e = result_.train_loss.size();
    const auto n = static_cast<std::size_t>(X_.rows());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(cfg_.seed, e, 1));
    std::shuffle(order.begin(), order.end(), shuffle);
    Rng eg_rng(derive_seed(cfg_.seed, e, 2));
    const std::size_t min_tail = cfg_.needs_expected_gradients() ? cfg_.k + 1 : 1;
    const auto parts = detail::batches(order, std::min(cfg_.batch_size, n), min_tail);

    std::vector<PriorSpec> active;
    for (const auto& p : cfg_.priors) {
      const bool is_weight = p.kind == PriorKind::weight;
      if (mode == 0 || (mode == 1 && is_weight) || (mode == 2 && !is_weight)) active.push_back(p);
    }

    double loss_sum = 0.0, penalty_sum = 0.0;
    for (std::size_t s = 0; s < parts.size(); ++s) {
      const auto& rows = parts[s];
      const Matrix Xb = rows_of(X_, rows);
      const Vector yb = rows_of(y_, rows);
      tape_.clear();
      try {
        const auto bm = nn::bind(tape_, result_.model);
        const auto pred = nn::predict(tape_, bm, Xb, true, derive_seed(cfg_.seed, e, 3 + s));
        const NodeId l = nn::loss(tape_, pred, yb, result_.model, cfg_.loss);
        auto pt = detail::prior_terms(tape_, bm, active, Xb, yb, rows, cfg_.k, eg_rng, cfg_.loss, false);
        double raw = 0.0;
        for (auto [lambda, node] : pt.terms) raw += tape_.value(node);
        NodeId objective = 0;
        if (mode == 2) {
          if (!nu_) nu_ = auto_nu(tape_.value(l), pt.terms);
          result_.nu = *nu_;
          for (auto& t : pt.terms) t.first *= *nu_;
          const NodeId zero = tape_.constant(0.0);
          objective = priors::compose_objective(tape_, zero, pt.terms);
        } else {
          objective = priors::compose_objective(tape_, l, pt.terms);
        }
        if (!std::isfinite(tape_.value(objective))) {
          throw DivergenceError("non-finite objective " + detail::context(e, s));
        }
        const std::vector<double> grad = tape_.values(tape_.gradient(objective, bm.all));
        detail::check_finite(grad, detail::context(e, s));
        std::vector<double> params = nn::flatten(result_.model);
        optimizer_.step(params, grad, e);
        detail::check_finite(params, "in parameters " + detail::context(e, s));
        nn::unflatten(result_.model, params);
        loss_sum += tape_.value(l);
        penalty_sum += raw;
      } catch (const NonFiniteValue& err) {
        throw DivergenceError(std::string(err.what()) + " " + detail::context(e, s));
      }
    }
    const double batches = static_cast<double>(parts.size());
    result_.train_loss.push_back(loss_sum / batches);
    result_.penalty.push_back(penalty_sum / batches);
    result_.val_loss.push_back(nn::loss_value(result_.model, Xv_, yv_, cfg_.loss));
    result_.val_metric.push_back(detail::metric(result_.model, Xv_, yv_, cfg_.loss));
    result_.steps = optimizer_.steps();
    if (!std::isfinite(result_.val_loss.back())) {
      throw DivergenceError("non-finite validation loss after epoch " + std::to_string(e + 1));
    }
  }

  void set_nu(std::optional<double> nu) { nu_ = nu; }
  const TrainResult& result() const { return result_; }
  TrainResult& result() { return result_; }

 private:
  double auto_nu(double loss, const std::vector<std::pair<double, NodeId>>& terms) const {
    double total = 0.0;
    for (auto [lambda, node] : terms) total += lambda * tape_.value(node);
    if (total == 0.0) return 1.0;
    return std::abs(loss) / std::abs(total);
  }

  TrainConfig cfg_;
  const Matrix& X_;
  const Vector& y_;
  const Matrix& Xv_;
  const Vector& yv_;
  Optimizer optimizer_;
  Tape tape_;
  TrainResult result_;
  std::optional<double> nu_;
};

inline TrainResult train(const nn::Model& init, const Matrix& X, const Vector& y, const Matrix& Xv,
                         const Vector& yv, const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(init, X, y, Xv, yv, cfg);
  nn::Model best = init;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    trainer.epoch();
    const auto& r = trainer.result();
    if (r.val_loss.back() < best_loss) {
      best_loss = r.val_loss.back();
      best = r.model;
      trainer.result().best_epoch = e;
      since = 0;
    } else if (cfg.patience > 0 && ++since >= cfg.patience) {
      break;
    }
  }
  TrainResult out = trainer.result();
  if (cfg.patience > 0) {
    out.model = best;
  } else {
    out.best_epoch = out.train_loss.size() - 1;
  }
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// Alternates one epoch on nu * (attribution priors) with one epoch on
// loss + weight penalties, starting with the prior. Without `nu`, the prior
// term is scaled to the loss magnitude on the first batch. With patience,
// the model after the loss epoch with the lowest validation loss is kept.
inline TrainResult alternating_finetune(const nn::Model& pretrained, const Matrix& X, const Vector& y,
                                        const Matrix& Xv, const Vector& yv, const TrainConfig& cfg,
                                        std::size_t extra_epochs, std::optional<double> nu = std::nullopt) {
  const auto start = std::chrono::steady_clock::now();
  TrainConfig c = cfg;
  c.alternating = true;
  if (nu && !(*nu > 0.0)) throw InvalidSpec("nu must be > 0");
  Trainer trainer(pretrained, X, y, Xv, yv, c);
  trainer.set_nu(nu);
  std::optional<nn::Model> best;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since = 0;
  for (std::size_t e = 0; e < extra_epochs; ++e) {
    const bool prior_epoch = e % 2 == 0;
    trainer.epoch(prior_epoch ? 2 : 1);
    if (prior_epoch || cfg.patience == 0) continue;
    const auto& r = trainer.result();
    if (r.val_loss.back() < best_loss) {
      best_loss = r.val_loss.back();
      best = r.model;
      trainer.result().best_epoch = e;
      since = 0;
    } else if (++since >= cfg.patience) {
      break;
    }
  }
  TrainResult out = trainer.result();
  if (best) {
    out.model = *best;
  } else {
    out.best_epoch = out.train_loss.empty() ? 0 : out.train_loss.size() - 1;
  }
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---------------------------------------------------------------------------
// Lambda selection.

struct LambdaReport {
  double lambda = 0.0;
  double val_metric = 0.0;  // higher is better
  double penalty = 0.0;
};

struct LambdaChoice {
  double lambda = 0.0;
  bool warning = false;  // no lambda > 0 was within slack
  std::vector<LambdaReport> reports;
};

// Minimal-penalty lambda > 0 whose validation metric is within `slack`
// (relative) of the lambda = 0 baseline.
inline LambdaChoice select_lambda(const std::vector<LambdaReport>& reports, double slack) {
  if (reports.empty()) throw InvalidSpec("lambda grid is empty");
  if (!(slack >= 0.0 && slack < 1.0)) throw InvalidSpec("slack must be in [0,1)");
  const auto base = std::find_if(reports.begin(), reports.end(), [](const LambdaReport& r) { return r.lambda == 0.0; });
  if (base == reports.end()) throw InvalidSpec("lambda grid needs the 0 baseline");
  LambdaChoice out;
  out.reports = reports;
  const double floor = base->val_metric - slack * std::abs(base->val_metric);
  std::optional<LambdaReport> best;
  bool any_positive = false;
  for (const auto& r : reports) {
    if (r.lambda == 0.0) continue;
    any_positive = true;
    if (r.val_metric < floor) continue;
    if (!best || r.penalty < best->penalty) best = r;
  }
  if (best) {
    out.lambda = best->lambda;
  } else {
    out.warning = any_positive;
  }
  return out;
}

struct SweepResult {
  LambdaChoice choice;
  std::vector<TrainResult> runs;  // aligned with choice.reports
  std::size_t chosen = 0;
};

// Trains one model per lambda for prior `index` of `base`, all from the same
// initialization. Penalties are measured on the validation set.
inline SweepResult lambda_sweep(const nn::Model& init, const Matrix& X, const Vector& y, const Matrix& Xv,
                                const Vector& yv, const TrainConfig& base, std::size_t index,
                                std::vector<double> grid, double slack, std::size_t eval_k = 0) {
  if (grid.empty()) throw InvalidSpec("lambda grid is empty");
  if (index >= base.priors.size()) throw InvalidSpec("lambda sweep prior index out of range");
  if (std::find(grid.begin(), grid.end(), 0.0) == grid.end()) grid.insert(grid.begin(), 0.0);
  SweepResult out;
  std::vector<LambdaReport> reports;
  for (double lambda : grid) {
    TrainConfig cfg = base;
    cfg.priors[index].lambda = lambda;
    TrainResult r = train(init, X, y, Xv, yv, cfg);
    const std::size_t k = eval_k > 0 ? eval_k : std::max<std::size_t>(base.k, 1);
    const double penalty = evaluate_priors(r.model, Xv, yv, {cfg.priors[index]}, k, derive_seed(base.seed, 0x5eu),
                                           base.loss)[0];
    reports.push_back({lambda, detail::metric(r.model, Xv, yv, base.loss), penalty});
    out.runs.push_back(std::move(r));
  }
  out.choice = select_lambda(reports, slack);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (reports[i].lambda == out.choice.lambda) {
      out.chosen = i;
      break;
    }
  }
  return out;
}

}  // namespace attripriors::train
