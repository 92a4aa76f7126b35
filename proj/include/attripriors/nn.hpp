#pragma once

// Dense feed-forward networks, on the tape and as plain numeric evaluation.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "attripriors/autodiff.hpp"
#include "attripriors/errors.hpp"
#include "attripriors/linalg.hpp"

namespace attripriors::nn {

using ad::NodeId;
using ad::Tape;
using ad::Var;

enum class Activation { relu, sigmoid, tanh, identity, softmax };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
    case Activation::softmax: return "softmax";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity" || s == "linear") return Activation::identity;
  if (s == "softmax") return Activation::softmax;
  throw InvalidSpec("unknown activation '" + s + "'");
}

struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;
  bool operator==(const Grid&) const = default;
};

struct InputShape {
  std::size_t features = 0;
  std::optional<Grid> grid;
};

struct DenseLayer {
  Matrix weights;  // out x in
  Vector biases;   // out
  Activation activation = Activation::identity;

  std::size_t inputs() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t outputs() const { return static_cast<std::size_t>(weights.rows()); }
};

struct Model {
  InputShape input;
  std::vector<DenseLayer> layers;
  // dropout[l] is the drop probability applied to the input of layer l during
  // training. Empty means no dropout anywhere.
  std::vector<double> dropout;

  std::size_t features() const { return input.features; }
  std::size_t outputs() const { return layers.empty() ? 0 : layers.back().outputs(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.biases.size();
    return n;
  }

  double dropout_rate(std::size_t layer) const {
    return layer < dropout.size() ? dropout[layer] : 0.0;
  }

  void validate() const {
    if (layers.empty()) throw InvalidSpec("model has no layers");
    if (input.grid && input.grid->h * input.grid->w != input.features) {
      throw InvalidSpec("grid shape does not match feature count");
    }
    std::size_t in = input.features;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      if (layer.inputs() != in) {
        throw InvalidSpec("layer " + std::to_string(l) + " expects " +
                          std::to_string(layer.inputs()) + " inputs, previous layer gives " +
                          std::to_string(in));
      }
      if (static_cast<std::size_t>(layer.biases.size()) != layer.outputs()) {
        throw InvalidSpec("layer " + std::to_string(l) + " bias size mismatch");
      }
      if (layer.activation == Activation::softmax && l + 1 != layers.size()) {
        throw InvalidSpec("softmax is only allowed on the output layer");
      }
      in = layer.outputs();
    }
    if (!dropout.empty() && dropout.size() != layers.size()) {
      throw InvalidSpec("dropout needs one rate per layer");
    }
    for (double r : dropout) {
      if (!(r >= 0.0 && r < 1.0)) throw InvalidSpec("dropout rate must be in [0,1)");
    }
  }
};

struct LayerSpec {
  std::size_t units = 1;
  Activation activation = Activation::identity;
};

struct ModelSpec {
  InputShape input;
  std::vector<LayerSpec> layers;
  std::vector<double> dropout;
};

// Glorot-uniform weights, zero biases.
inline Model init_model(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.layers.empty()) throw InvalidSpec("empty layer specification");
  if (spec.input.features < 1) throw InvalidSpec("input size must be >= 1");
  Rng rng(derive_seed(seed, 0x11u));
  Model m;
  m.input = spec.input;
  m.dropout = spec.dropout;
  std::size_t in = spec.input.features;
  for (const auto& ls : spec.layers) {
    if (ls.units < 1) throw InvalidSpec("layer size must be >= 1");
    DenseLayer layer;
    layer.activation = ls.activation;
    const double limit = std::sqrt(6.0 / static_cast<double>(in + ls.units));
    std::uniform_real_distribution<double> dist(-limit, limit);
    layer.weights.resize(static_cast<Eigen::Index>(ls.units), static_cast<Eigen::Index>(in));
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = dist(rng);
    layer.biases = Vector::Zero(static_cast<Eigen::Index>(ls.units));
    m.layers.push_back(std::move(layer));
    in = ls.units;
  }
  m.validate();
  return m;
}

// Convenience: hidden layers with one activation, then a single output layer.
inline ModelSpec mlp_spec(std::size_t features, const std::vector<std::size_t>& hidden,
                          Activation hidden_act, std::size_t outputs, Activation output_act) {
  ModelSpec s;
  s.input.features = features;
  for (std::size_t h : hidden) s.layers.push_back({h, hidden_act});
  s.layers.push_back({outputs, output_act});
  return s;
}

inline std::vector<double> flatten(const Model& m) {
  std::vector<double> out;
  out.reserve(m.parameter_count());
  for (const auto& l : m.layers) {
    out.insert(out.end(), l.weights.data(), l.weights.data() + l.weights.size());
    out.insert(out.end(), l.biases.data(), l.biases.data() + l.biases.size());
  }
  return out;
}

inline void unflatten(Model& m, std::span<const double> params) {
  if (params.size() != m.parameter_count()) throw ShapeError("parameter vector size mismatch");
  std::size_t k = 0;
  for (auto& l : m.layers) {
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) l.weights.data()[i] = params[k++];
    for (Eigen::Index i = 0; i < l.biases.size(); ++i) l.biases[i] = params[k++];
  }
}

// ---------------------------------------------------------------------------
// Numeric evaluation.

namespace detail {

inline void activate(Matrix& z, Activation a) {
  switch (a) {
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::sigmoid: z = z.unaryExpr([](double v) { return ad::sigmoid(v); }); break;
    case Activation::tanh: z = z.array().tanh().matrix(); break;
    case Activation::identity: break;
    case Activation::softmax:
      for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double m = z.row(r).maxCoeff();
        z.row(r) = (z.row(r).array() - m).exp().matrix();
        z.row(r) /= z.row(r).sum();
      }
      break;
  }
}

}  // namespace detail

inline void check_features(const Model& m, const Matrix& X) {
  if (static_cast<std::size_t>(X.cols()) != m.features()) {
    throw ShapeError("input has " + std::to_string(X.cols()) + " features, model expects " +
                     std::to_string(m.features()));
  }
}

// Pre-activation of the final layer (logits) for every row.
inline Matrix evaluate_logits(const Model& m, const Matrix& X) {
  check_features(m, X);
  Matrix h = X;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& layer = m.layers[l];
    Matrix z = h * layer.weights.transpose();
    z.rowwise() += layer.biases.transpose();
    if (l + 1 == m.layers.size()) return z;
    detail::activate(z, layer.activation);
    h = std::move(z);
  }
  return h;
}

// Eval-mode outputs, n x o.
inline Matrix evaluate(const Model& m, const Matrix& X) {
  Matrix z = evaluate_logits(m, X);
  detail::activate(z, m.layers.back().activation);
  return z;
}

// Gradient of output `target` with respect to each input row (eval mode).
inline Matrix input_gradients(const Model& m, const Matrix& X, std::size_t target) {
  check_features(m, X);
  if (target >= m.outputs()) throw ShapeError("target output out of range");
  const std::size_t L = m.layers.size();
  std::vector<Matrix> pre(L);
  Matrix h = X;
  for (std::size_t l = 0; l < L; ++l) {
    Matrix z = h * m.layers[l].weights.transpose();
    z.rowwise() += m.layers[l].biases.transpose();
    pre[l] = z;
    detail::activate(z, m.layers[l].activation);
    h = std::move(z);
  }
  const Eigen::Index n = X.rows();
  const auto t = static_cast<Eigen::Index>(target);
  Matrix delta = Matrix::Zero(n, static_cast<Eigen::Index>(m.outputs()));
  switch (m.layers.back().activation) {
    case Activation::identity: delta.col(t).setOnes(); break;
    case Activation::relu:
      delta.col(t) = (pre[L - 1].col(t).array() > 0.0).cast<double>().matrix();
      break;
    case Activation::sigmoid:
      delta.col(t) = h.col(t).array() * (1.0 - h.col(t).array());
      break;
    case Activation::tanh: delta.col(t) = 1.0 - h.col(t).array().square(); break;
    case Activation::softmax:
      for (Eigen::Index r = 0; r < n; ++r) {
        const double st = h(r, t);
        delta.row(r) = -st * h.row(r);
        delta(r, t) += st;
      }
      break;
  }
  for (std::size_t l = L; l-- > 0;) {
    Matrix up = delta * m.layers[l].weights;
    if (l == 0) return up;
    const auto& z = pre[l - 1];
    switch (m.layers[l - 1].activation) {
      case Activation::relu: up = up.cwiseProduct((z.array() > 0.0).cast<double>().matrix()); break;
      case Activation::sigmoid: {
        Matrix s = z.unaryExpr([](double v) { return ad::sigmoid(v); });
        up = up.cwiseProduct((s.array() * (1.0 - s.array())).matrix());
        break;
      }
      case Activation::tanh:
        up = up.cwiseProduct((1.0 - z.array().tanh().square()).matrix());
        break;
      case Activation::identity: break;
      case Activation::softmax: throw InvalidSpec("softmax on a hidden layer");
    }
    delta = std::move(up);
  }
  return delta;
}

// ---------------------------------------------------------------------------
// Tape evaluation.

// Parameters of a model registered on a tape, row-major per layer.
struct BoundModel {
  const Model* model = nullptr;
  std::vector<std::vector<NodeId>> weights;
  std::vector<std::vector<NodeId>> biases;
  std::vector<NodeId> all;  // in flatten() order
};

inline BoundModel bind(Tape& tape, const Model& m, bool trainable = true) {
  BoundModel b;
  b.model = &m;
  for (const auto& l : m.layers) {
    std::vector<NodeId> w, bias;
    w.reserve(static_cast<std::size_t>(l.weights.size()));
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) {
      const double v = l.weights.data()[i];
      w.push_back(trainable ? tape.variable(v) : tape.constant(v));
      b.all.push_back(w.back());
    }
    for (Eigen::Index i = 0; i < l.biases.size(); ++i) {
      const double v = l.biases[i];
      bias.push_back(trainable ? tape.variable(v) : tape.constant(v));
      b.all.push_back(bias.back());
    }
    b.weights.push_back(std::move(w));
    b.biases.push_back(std::move(bias));
  }
  return b;
}

// Per-row dropout source. A null pointer means eval mode.
struct Dropout {
  Rng* rng = nullptr;
};

struct RowOutput {
  std::vector<NodeId> logits;
  std::vector<NodeId> outputs;
};

inline RowOutput forward_row(Tape& tape, const BoundModel& bm, std::span<const NodeId> x,
                             Dropout dropout = {}) {
  const Model& m = *bm.model;
  if (x.size() != m.features()) throw ShapeError("row width does not match model input");
  std::vector<NodeId> h(x.begin(), x.end());
  std::vector<ad::Term> terms;
  RowOutput out;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& layer = m.layers[l];
    const std::size_t in = layer.inputs();
    const std::size_t units = layer.outputs();
    const double rate = dropout.rng ? m.dropout_rate(l) : 0.0;
    std::vector<double> scale(in, 1.0);
    if (rate > 0.0) {
      std::bernoulli_distribution keep(1.0 - rate);
      for (auto& s : scale) s = keep(*dropout.rng) ? 1.0 / (1.0 - rate) : 0.0;
    }
    std::vector<NodeId> z(units);
    for (std::size_t u = 0; u < units; ++u) {
      terms.clear();
      const NodeId* wrow = bm.weights[l].data() + u * in;
      for (std::size_t j = 0; j < in; ++j) {
        if (scale[j] != 0.0) terms.push_back({scale[j], wrow[j], h[j]});
      }
      terms.push_back({1.0, bm.biases[l][u], ad::kNone});
      z[u] = tape.linear(ad::Op::matmul_cell, 0.0, terms);
    }
    const bool last = l + 1 == m.layers.size();
    if (last) out.logits = z;
    std::vector<NodeId> a(units);
    switch (layer.activation) {
      case Activation::relu:
        for (std::size_t u = 0; u < units; ++u) a[u] = tape.unary(ad::Op::relu, z[u]);
        break;
      case Activation::sigmoid:
        for (std::size_t u = 0; u < units; ++u) a[u] = tape.unary(ad::Op::sigmoid, z[u]);
        break;
      case Activation::tanh:
        for (std::size_t u = 0; u < units; ++u) a[u] = tape.unary(ad::Op::tanh, z[u]);
        break;
      case Activation::identity: a = z; break;
      case Activation::softmax: {
        double mx = tape.value(z[0]);
        for (NodeId id : z) mx = std::max(mx, tape.value(id));
        std::vector<NodeId> e(units);
        std::vector<ad::Term> st;
        for (std::size_t u = 0; u < units; ++u) {
          const ad::Term shifted[] = {{1.0, z[u], ad::kNone}};
          e[u] = tape.unary(ad::Op::exp, tape.linear(ad::Op::add, -mx, shifted));
          st.push_back({1.0, e[u], ad::kNone});
        }
        const NodeId total = tape.linear(ad::Op::sum, 0.0, st);
        for (std::size_t u = 0; u < units; ++u) a[u] = tape.binary(ad::Op::div, e[u], total);
        break;
      }
    }
    h = std::move(a);
  }
  out.outputs = std::move(h);
  return out;
}

// Records a whole batch. Inputs are variables when `input_grad` is set so that
// gradients with respect to X can be taken.
struct Prediction {
  std::vector<std::vector<NodeId>> inputs;
  std::vector<RowOutput> rows;
};

inline Prediction predict(Tape& tape, const BoundModel& bm, const Matrix& X, bool train_mode,
                          std::uint64_t dropout_seed, bool input_grad = false) {
  check_features(*bm.model, X);
  Prediction p;
  Rng rng(derive_seed(dropout_seed, 0x22u));
  Dropout dropout{train_mode ? &rng : nullptr};
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    std::vector<NodeId> x(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      x[static_cast<std::size_t>(c)] = input_grad ? tape.variable(X(r, c)) : tape.constant(X(r, c));
    }
    p.rows.push_back(forward_row(tape, bm, x, dropout));
    p.inputs.push_back(std::move(x));
  }
  return p;
}

inline Matrix values(const Tape& tape, const Prediction& p) {
  if (p.rows.empty()) return {};
  Matrix out(static_cast<Eigen::Index>(p.rows.size()),
             static_cast<Eigen::Index>(p.rows.front().outputs.size()));
  for (std::size_t r = 0; r < p.rows.size(); ++r) {
    for (std::size_t c = 0; c < p.rows[r].outputs.size(); ++c) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = tape.value(p.rows[r].outputs[c]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses.

enum class LossKind { mse, bce, softmax_ce };

struct LossSpec {
  LossKind kind = LossKind::mse;
};

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::bce: return "binary-cross-entropy";
    case LossKind::softmax_ce: return "softmax-cross-entropy";
  }
  return "mse";
}

inline LossKind loss_from_string(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "bce" || s == "binary-cross-entropy") return LossKind::bce;
  if (s == "softmax-ce" || s == "softmax-cross-entropy") return LossKind::softmax_ce;
  throw InvalidSpec("unknown loss '" + s + "'");
}

inline void check_loss(const Model& m, const Vector& y, std::size_t n, LossSpec spec) {
  if (static_cast<std::size_t>(y.size()) != n) throw ShapeError("label count does not match rows");
  switch (spec.kind) {
    case LossKind::mse:
      if (m.outputs() != 1) throw ShapeError("mse needs a single output");
      break;
    case LossKind::bce:
      if (m.outputs() != 1 || m.layers.back().activation != Activation::sigmoid) {
        throw InvalidSpec("binary cross-entropy needs a single sigmoid output");
      }
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) throw LabelError("bce labels must be 0 or 1");
      }
      break;
    case LossKind::softmax_ce:
      if (m.layers.back().activation != Activation::softmax) {
        throw InvalidSpec("softmax cross-entropy needs a softmax head");
      }
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double c = y[i];
        if (c < 0.0 || c != std::floor(c) || c >= static_cast<double>(m.outputs())) {
          throw LabelError("class label out of range");
        }
      }
      break;
  }
}

// log(1 + exp(z)) with the branch picked by the sign of z.
inline double softplus(double z) {
  return z >= 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// Mean loss over the recorded rows.
inline NodeId loss(Tape& tape, const Prediction& p, const Vector& y, const Model& m, LossSpec spec) {
  check_loss(m, y, p.rows.size(), spec);
  const double inv_n = 1.0 / static_cast<double>(p.rows.size());
  std::vector<ad::Term> terms;
  double bias = 0.0;
  for (std::size_t r = 0; r < p.rows.size(); ++r) {
    const double yr = y[static_cast<Eigen::Index>(r)];
    switch (spec.kind) {
      case LossKind::mse: {
        const ad::Term d[] = {{1.0, p.rows[r].outputs[0], ad::kNone}};
        const NodeId diff = tape.linear(ad::Op::add, -yr, d);
        terms.push_back({inv_n, diff, diff});
        break;
      }
      case LossKind::bce: {
        // softplus(z) - y z
        const NodeId z = p.rows[r].logits[0];
        const double zv = tape.value(z);
        const ad::Term neg[] = {{zv >= 0.0 ? -1.0 : 1.0, z, ad::kNone}};
        const NodeId e = tape.unary(ad::Op::exp, tape.linear(ad::Op::neg, 0.0, neg));
        const ad::Term one_plus[] = {{1.0, e, ad::kNone}};
        const NodeId lg = tape.unary(ad::Op::log, tape.linear(ad::Op::add, 1.0, one_plus));
        terms.push_back({inv_n, lg, ad::kNone});
        terms.push_back({inv_n * ((zv >= 0.0 ? 1.0 : 0.0) - yr), z, ad::kNone});
        break;
      }
      case LossKind::softmax_ce: {
        const auto& z = p.rows[r].logits;
        double mx = tape.value(z[0]);
        for (NodeId id : z) mx = std::max(mx, tape.value(id));
        std::vector<ad::Term> es;
        for (NodeId id : z) {
          const ad::Term shifted[] = {{1.0, id, ad::kNone}};
          es.push_back({1.0, tape.unary(ad::Op::exp, tape.linear(ad::Op::add, -mx, shifted)), ad::kNone});
        }
        const NodeId lse = tape.unary(ad::Op::log, tape.linear(ad::Op::sum, 0.0, es));
        terms.push_back({inv_n, lse, ad::kNone});
        terms.push_back({-inv_n, z[static_cast<std::size_t>(yr)], ad::kNone});
        bias += inv_n * mx;
        break;
      }
    }
  }
  return tape.linear(ad::Op::sum, bias, terms);
}

// Same quantity without a tape.
inline double loss_value(const Model& m, const Matrix& X, const Vector& y, LossSpec spec) {
  check_loss(m, y, static_cast<std::size_t>(X.rows()), spec);
  const Matrix z = evaluate_logits(m, X);
  double total = 0.0;
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    switch (spec.kind) {
      case LossKind::mse: {
        Matrix zr = z.row(r);
        detail::activate(zr, m.layers.back().activation);
        total += (zr(0, 0) - y[r]) * (zr(0, 0) - y[r]);
        break;
      }
      case LossKind::bce: total += softplus(z(r, 0)) - y[r] * z(r, 0); break;
      case LossKind::softmax_ce: {
        const double mx = z.row(r).maxCoeff();
        const double lse = mx + std::log((z.row(r).array() - mx).exp().sum());
        total += lse - z(r, static_cast<Eigen::Index>(y[r]));
        break;
      }
    }
  }
  return total / static_cast<double>(X.rows());
}

// ---------------------------------------------------------------------------
// JSON. Doubles are written with shortest round-trip formatting, so a
// save/load cycle is value-exact.

inline nlohmann::json to_json(const Model& m) {
  nlohmann::json j;
  j["input_shape"] = {{"features", m.input.features}};
  if (m.input.grid) j["input_shape"]["grid"] = {m.input.grid->h, m.input.grid->w};
  j["dropout"] = m.dropout;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : m.layers) {
    nlohmann::json lj;
    lj["rows"] = l.outputs();
    lj["cols"] = l.inputs();
    lj["weights"] = std::vector<double>(l.weights.data(), l.weights.data() + l.weights.size());
    lj["biases"] = std::vector<double>(l.biases.data(), l.biases.data() + l.biases.size());
    lj["activation"] = to_string(l.activation);
    j["layers"].push_back(std::move(lj));
  }
  return j;
}

inline Model model_from_json(const nlohmann::json& j) {
  try {
    Model m;
    m.input.features = j.at("input_shape").at("features").get<std::size_t>();
    if (j.at("input_shape").contains("grid")) {
      const auto g = j.at("input_shape").at("grid").get<std::vector<std::size_t>>();
      if (g.size() != 2) throw FormatError("grid must have two entries");
      m.input.grid = Grid{g[0], g[1]};
    }
    if (j.contains("dropout")) m.dropout = j.at("dropout").get<std::vector<double>>();
    for (const auto& lj : j.at("layers")) {
      DenseLayer l;
      const auto rows = lj.at("rows").get<Eigen::Index>();
      const auto cols = lj.at("cols").get<Eigen::Index>();
      const auto w = lj.at("weights").get<std::vector<double>>();
      const auto b = lj.at("biases").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != rows * cols ||
          static_cast<Eigen::Index>(b.size()) != rows) {
        throw FormatError("layer array sizes disagree with rows/cols");
      }
      l.weights = Eigen::Map<const Matrix>(w.data(), rows, cols);
      l.biases = Eigen::Map<const Vector>(b.data(), rows);
      l.activation = activation_from_string(lj.at("activation").get<std::string>());
      m.layers.push_back(std::move(l));
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model JSON: ") + e.what());
  }
}

}  // namespace attripriors::nn
