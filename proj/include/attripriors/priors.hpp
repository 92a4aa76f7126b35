#pragma once

// Penalties on attributions and weights: total variation over attribution
// maps, graph-Laplacian smoothness, Gini sparsity, the gradient-mask prior,
// and the weight regularizers used as baselines.

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "attripriors/attrib.hpp"
#include "attripriors/autodiff.hpp"
#include "attripriors/errors.hpp"
#include "attripriors/linalg.hpp"
#include "attripriors/nn.hpp"

namespace attripriors::priors {

using ad::NodeId;
using ad::Tape;
using ad::Term;
using attrib::NodeMatrix;

inline constexpr double kTvFloor = 1e-8;

// ---------------------------------------------------------------------------
// Feature graph.

struct Edge {
  std::size_t i = 0;
  std::size_t j = 0;
  double weight = 0.0;
};

struct FeatureGraph {
  Matrix adjacency;  // symmetric, zero diagonal, nonnegative

  std::size_t size() const { return static_cast<std::size_t>(adjacency.rows()); }

  Matrix laplacian() const {
    Matrix l = -adjacency;
    for (Eigen::Index i = 0; i < adjacency.rows(); ++i) l(i, i) = adjacency.row(i).sum();
    return l;
  }

  // Upper-triangle nonzeros in row-major order.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (Eigen::Index i = 0; i < adjacency.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < adjacency.cols(); ++j) {
        if (adjacency(i, j) != 0.0) {
          out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), adjacency(i, j)});
        }
      }
    }
    return out;
  }

  void validate() const {
    if (adjacency.rows() != adjacency.cols()) throw InvalidSpec("graph adjacency must be square");
    for (Eigen::Index i = 0; i < adjacency.rows(); ++i) {
      if (adjacency(i, i) != 0.0) throw InvalidSpec("graph adjacency must have a zero diagonal");
      for (Eigen::Index j = 0; j < adjacency.cols(); ++j) {
        if (adjacency(i, j) < 0.0 || !std::isfinite(adjacency(i, j))) {
          throw InvalidSpec("graph weights must be finite and nonnegative");
        }
        if (std::abs(adjacency(i, j) - adjacency(j, i)) > 1e-12) throw InvalidSpec("graph adjacency must be symmetric");
      }
    }
  }

  static FeatureGraph from_edges(std::size_t p, const std::vector<Edge>& edges) {
    FeatureGraph g{Matrix::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p))};
    for (const auto& e : edges) {
      if (e.i >= p || e.j >= p) throw InvalidSpec("edge endpoint out of range");
      if (e.i == e.j) throw InvalidSpec("self loops are not allowed");
      const auto a = static_cast<Eigen::Index>(e.i), b = static_cast<Eigen::Index>(e.j);
      g.adjacency(a, b) = e.weight;
      g.adjacency(b, a) = e.weight;
    }
    g.validate();
    return g;
  }
};

// Edge list text: one "i j weight" line per undirected edge, 0-indexed.
inline void write_edge_list(std::ostream& os, const FeatureGraph& g) {
  char buf[32];
  for (const auto& e : g.edges()) {
    std::snprintf(buf, sizeof buf, "%.17g", e.weight);
    os << e.i << ' ' << e.j << ' ' << buf << '\n';
  }
}

// Blank lines and lines starting with '#' are skipped.
inline FeatureGraph read_edge_list(std::istream& is, std::size_t p) {
  std::vector<Edge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    long long i = -1, j = -1;
    double w = 0.0;
    std::string rest;
    if (!(ls >> i >> j >> w) || (ls >> rest) || i < 0 || j < 0) {
      throw FormatError("edge list line " + std::to_string(lineno) + ": expected 'i j weight'");
    }
    edges.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), w});
  }
  try {
    return FeatureGraph::from_edges(p, edges);
  } catch (const InvalidSpec& e) {
    throw FormatError(std::string("edge list: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Total variation over attribution maps.

namespace detail {

inline void check_grid(std::size_t width, const std::optional<nn::Grid>& grid) {
  if (!grid) throw ShapeError("total variation needs grid-shaped attributions");
  if (grid->h * grid->w != width) {
    throw ShapeError("grid " + std::to_string(grid->h) + "x" + std::to_string(grid->w) + " does not match " +
                     std::to_string(width) + " features");
  }
}

// Neighbour pairs (right and down) of a row-major grid.
inline std::vector<std::pair<std::size_t, std::size_t>> grid_pairs(const nn::Grid& g) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < g.h; ++i) {
    for (std::size_t j = 0; j < g.w; ++j) {
      const std::size_t a = i * g.w + j;
      if (i + 1 < g.h) out.emplace_back(a, a + g.w);
      if (j + 1 < g.w) out.emplace_back(a, a + 1);
    }
  }
  return out;
}

}  // namespace detail

inline double tv_penalty(const Matrix& phi, const std::optional<nn::Grid>& grid, bool normalize) {
  detail::check_grid(static_cast<std::size_t>(phi.cols()), grid);
  const auto pairs = detail::grid_pairs(*grid);
  double total = 0.0;
  for (Eigen::Index r = 0; r < phi.rows(); ++r) {
    double tv = 0.0;
    for (auto [a, b] : pairs) {
      tv += std::abs(phi(r, static_cast<Eigen::Index>(b)) - phi(r, static_cast<Eigen::Index>(a)));
    }
    if (normalize) {
      const double mean = phi.row(r).mean();
      const double sd = std::sqrt((phi.row(r).array() - mean).square().mean());
      tv /= sd + kTvFloor;
    }
    total += tv;
  }
  return total;
}

inline NodeId tv_penalty(Tape& tape, const NodeMatrix& phi, const std::optional<nn::Grid>& grid, bool normalize) {
  if (phi.empty()) return tape.constant(0.0);
  detail::check_grid(phi.front().size(), grid);
  const auto pairs = detail::grid_pairs(*grid);
  std::vector<Term> per_sample, terms;
  for (const auto& row : phi) {
    terms.clear();
    for (auto [a, b] : pairs) {
      const Term diff[2] = {{1.0, row[b], ad::kNone}, {-1.0, row[a], ad::kNone}};
      terms.push_back({1.0, tape.unary(ad::Op::abs, tape.linear(ad::Op::add, 0.0, diff)), ad::kNone});
    }
    NodeId tv = tape.linear(ad::Op::sum, 0.0, terms);
    if (normalize) {
      const double inv_p = 1.0 / static_cast<double>(row.size());
      terms.clear();
      for (NodeId v : row) terms.push_back({inv_p, v, ad::kNone});
      const NodeId mean = tape.linear(ad::Op::sum, 0.0, terms);
      terms.clear();
      for (NodeId v : row) {
        const Term c[2] = {{1.0, v, ad::kNone}, {-1.0, mean, ad::kNone}};
        const NodeId d = tape.linear(ad::Op::add, 0.0, c);
        terms.push_back({inv_p, d, d});
      }
      const NodeId sd = tape.unary(ad::Op::sqrt, tape.linear(ad::Op::sum, 0.0, terms));
      const Term s[1] = {{1.0, sd, ad::kNone}};
      tv = tape.binary(ad::Op::div, tv, tape.linear(ad::Op::add, kTvFloor, s));
    }
    per_sample.push_back({1.0, tv, ad::kNone});
  }
  return tape.linear(ad::Op::sum, 0.0, per_sample);
}

// ---------------------------------------------------------------------------
// Graph smoothness: phi^T L phi = sum over undirected edges of w (phi_i - phi_j)^2.

inline double graph_penalty(const Vector& phi, const FeatureGraph& g) {
  if (static_cast<std::size_t>(phi.size()) != g.size()) throw ShapeError("graph size does not match attribution");
  return phi.dot(g.laplacian() * phi);
}

inline NodeId graph_penalty(Tape& tape, std::span<const NodeId> phi, const FeatureGraph& g) {
  if (phi.size() != g.size()) throw ShapeError("graph size does not match attribution");
  std::vector<Term> terms;
  for (const auto& e : g.edges()) {
    const Term diff[2] = {{1.0, phi[e.i], ad::kNone}, {-1.0, phi[e.j], ad::kNone}};
    const NodeId d = tape.linear(ad::Op::add, 0.0, diff);
    terms.push_back({e.weight, d, d});
  }
  return tape.linear(ad::Op::sum, 0.0, terms);
}

// ---------------------------------------------------------------------------
// Gini sparsity. penalty = -sum_{i,j} |phi_i - phi_j| / (p sum_i phi_i) = -2G.
//
// sum_{i<j} |phi_i - phi_j| = sum_i c_i phi_i, where c_i is the number of
// entries below phi_i minus the number above. Tied entries share the same
// coefficient, matching a zero derivative of |.| at 0.

namespace detail {

struct GiniTerms {
  std::vector<std::size_t> order;  // ascending by value, ties by index
  std::vector<double> coef;        // indexed like order
};

inline GiniTerms gini_terms(const std::vector<double>& v) {
  const std::size_t p = v.size();
  GiniTerms t;
  t.order.resize(p);
  std::iota(t.order.begin(), t.order.end(), 0);
  std::stable_sort(t.order.begin(), t.order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  t.coef.resize(p);
  std::size_t k = 0;
  while (k < p) {
    std::size_t e = k;
    while (e + 1 < p && v[t.order[e + 1]] == v[t.order[k]]) ++e;
    // Ranks k..e tie: k entries below, p - 1 - e above.
    const double c = static_cast<double>(k) - static_cast<double>(p - 1 - e);
    for (std::size_t r = k; r <= e; ++r) t.coef[r] = c;
    k = e + 1;
  }
  return t;
}

inline void check_nonnegative(const std::vector<double>& v) {
  for (double x : v) {
    if (x < 0.0) throw InvalidAttribution("gini penalty needs nonnegative global attributions");
  }
}

}  // namespace detail

// Sums run in sorted order, so permuting phi leaves the result bit-identical.
inline double gini_penalty(const Vector& phi) {
  std::vector<double> v(phi.data(), phi.data() + phi.size());
  detail::check_nonnegative(v);
  if (v.empty()) return 0.0;
  const auto t = detail::gini_terms(v);
  double num = 0.0, total = 0.0;
  for (std::size_t r = 0; r < v.size(); ++r) {
    num += t.coef[r] * v[t.order[r]];
    total += v[t.order[r]];
  }
  if (total == 0.0) return 0.0;
  return -2.0 * num / (static_cast<double>(v.size()) * total);
}

inline NodeId gini_penalty(Tape& tape, std::span<const NodeId> phi) {
  std::vector<double> v(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) v[i] = tape.value(phi[i]);
  detail::check_nonnegative(v);
  double total = 0.0;
  for (double x : v) total += x;
  if (total == 0.0 || v.empty()) return tape.constant(0.0);
  const auto t = detail::gini_terms(v);
  const double scale = -2.0 / static_cast<double>(v.size());
  std::vector<Term> num, den;
  for (std::size_t r = 0; r < phi.size(); ++r) {
    const NodeId x = phi[t.order[r]];
    if (t.coef[r] != 0.0) num.push_back({scale * t.coef[r], x, ad::kNone});
    den.push_back({1.0, x, ad::kNone});
  }
  return tape.binary(ad::Op::div, tape.linear(ad::Op::sum, 0.0, num), tape.linear(ad::Op::sum, 0.0, den));
}

// ---------------------------------------------------------------------------
// Simple attribution norms.

// (1/n) sum |phi|  (= sum of the global attribution)
inline NodeId l1_attrib_penalty(Tape& tape, const NodeMatrix& phi) {
  if (phi.empty()) return tape.constant(0.0);
  const double inv_n = 1.0 / static_cast<double>(phi.size());
  std::vector<Term> terms;
  for (const auto& row : phi) {
    for (NodeId v : row) terms.push_back({inv_n, tape.unary(ad::Op::abs, v), ad::kNone});
  }
  return tape.linear(ad::Op::sum, 0.0, terms);
}

// (1/n) sum phi^2
inline NodeId l2_attrib_penalty(Tape& tape, const NodeMatrix& phi) {
  if (phi.empty()) return tape.constant(0.0);
  const double inv_n = 1.0 / static_cast<double>(phi.size());
  std::vector<Term> terms;
  for (const auto& row : phi) {
    for (NodeId v : row) terms.push_back({inv_n, v, v});
  }
  return tape.linear(ad::Op::sum, 0.0, terms);
}

// ---------------------------------------------------------------------------
// Gradient-mask prior: || A (.) dL/dX ||_F^2, with L the summed per-sample
// loss so the penalty does not shrink with batch size.

inline NodeId ross_grad_mask_penalty(Tape& tape, const nn::BoundModel& bm, const Matrix& X, const Vector& y,
                                     const Matrix& mask, const nn::LossSpec& spec) {
  if (mask.rows() != X.rows() || mask.cols() != X.cols()) throw ShapeError("mask shape does not match X");
  const nn::Prediction pred = nn::predict(tape, bm, X, false, 0, true);
  const NodeId l = nn::loss(tape, pred, y, *bm.model, spec);
  std::vector<NodeId> flat;
  for (const auto& row : pred.inputs) flat.insert(flat.end(), row.begin(), row.end());
  const std::vector<NodeId> g = tape.gradient(l, flat);
  const double n = static_cast<double>(X.rows());
  std::vector<Term> terms;
  const auto p = static_cast<std::size_t>(X.cols());
  for (std::size_t r = 0; r < static_cast<std::size_t>(X.rows()); ++r) {
    for (std::size_t c = 0; c < p; ++c) {
      const double a = mask(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      if (a != 0.0) terms.push_back({a * a * n * n, g[r * p + c], g[r * p + c]});
    }
  }
  return tape.linear(ad::Op::sum, 0.0, terms);
}

// ---------------------------------------------------------------------------
// Weight penalties.

enum class WeightKind { l1_all, l1_first, l2_all, l2_first, sgl_all, sgl_first, graph_weights };

inline const char* to_string(WeightKind k) {
  switch (k) {
    case WeightKind::l1_all: return "l1-all";
    case WeightKind::l1_first: return "l1-first";
    case WeightKind::l2_all: return "l2-all";
    case WeightKind::l2_first: return "l2-first";
    case WeightKind::sgl_all: return "sgl-all";
    case WeightKind::sgl_first: return "sgl-first";
    case WeightKind::graph_weights: return "graph-weights";
  }
  return "unknown";
}

inline std::optional<WeightKind> weight_kind_from_string(const std::string& s) {
  for (auto k : {WeightKind::l1_all, WeightKind::l1_first, WeightKind::l2_all, WeightKind::l2_first,
                 WeightKind::sgl_all, WeightKind::sgl_first, WeightKind::graph_weights}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

namespace detail {

inline bool is_linear_model(const nn::Model& m) {
  return m.layers.size() == 1 && m.layers[0].outputs() == 1 && m.layers[0].activation == nn::Activation::identity;
}

}  // namespace detail

// Shared by the numeric and tape forms: T is double or ad::Var.
template <class Get, class Abs, class Sq, class Sqrt, class T>
T weight_penalty_impl(const nn::Model& m, WeightKind kind, const FeatureGraph* graph, Get get, Abs abs_, Sq sq,
                      Sqrt sqrt_, T zero) {
  if (m.layers.empty()) throw InvalidSpec("weight penalty needs at least one layer");
  const bool first_only = kind == WeightKind::l1_first || kind == WeightKind::l2_first || kind == WeightKind::sgl_first;
  const std::size_t layers = first_only ? 1 : m.layers.size();
  T total = zero;
  switch (kind) {
    case WeightKind::l1_all:
    case WeightKind::l1_first:
      for (std::size_t l = 0; l < layers; ++l) {
        for (Eigen::Index i = 0; i < m.layers[l].weights.size(); ++i) total = total + abs_(get(l, false, i));
      }
      return total;
    case WeightKind::l2_all:
    case WeightKind::l2_first:
      for (std::size_t l = 0; l < layers; ++l) {
        for (Eigen::Index i = 0; i < m.layers[l].weights.size(); ++i) total = total + sq(get(l, false, i));
      }
      return total;
    case WeightKind::sgl_all:
    case WeightKind::sgl_first: {
      for (std::size_t l = 0; l < layers; ++l) {
        for (Eigen::Index i = 0; i < m.layers[l].weights.size(); ++i) total = total + abs_(get(l, false, i));
        for (Eigen::Index i = 0; i < m.layers[l].biases.size(); ++i) total = total + abs_(get(l, true, i));
      }
      const auto& w = m.layers[0].weights;
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        T col = zero;
        for (Eigen::Index r = 0; r < w.rows(); ++r) col = col + sq(get(0, false, r * w.cols() + c));
        total = total + sqrt_(col);
      }
      return total;
    }
    case WeightKind::graph_weights: {
      if (!detail::is_linear_model(m)) throw InvalidSpec("graph-weights penalty needs a linear model");
      if (!graph) throw InvalidSpec("graph-weights penalty needs a feature graph");
      if (graph->size() != m.features()) throw ShapeError("graph size does not match model input");
      for (const auto& e : graph->edges()) {
        total = total + e.weight * sq(get(0, false, static_cast<Eigen::Index>(e.i)) -
                                      get(0, false, static_cast<Eigen::Index>(e.j)));
      }
      return total;
    }
  }
  return total;
}

inline double weight_penalty(const nn::Model& m, WeightKind kind, const FeatureGraph* graph = nullptr) {
  return weight_penalty_impl(
      m, kind, graph,
      [&](std::size_t l, bool bias, Eigen::Index i) {
        return bias ? m.layers[l].biases[i] : m.layers[l].weights.data()[i];
      },
      [](double v) { return std::abs(v); }, [](double v) { return v * v; }, [](double v) { return std::sqrt(v); },
      0.0);
}

inline NodeId weight_penalty(Tape& tape, const nn::BoundModel& bm, WeightKind kind,
                             const FeatureGraph* graph = nullptr) {
  using ad::Var;
  const Var zero(tape, tape.constant(0.0));
  const Var out = weight_penalty_impl(
      *bm.model, kind, graph,
      [&](std::size_t l, bool bias, Eigen::Index i) {
        const auto idx = static_cast<std::size_t>(i);
        return Var(tape, bias ? bm.biases[l][idx] : bm.weights[l][idx]);
      },
      [](Var v) { return abs(v); }, [](Var v) { return v * v; }, [](Var v) { return sqrt(v); }, zero);
  return out.id();
}

// ---------------------------------------------------------------------------
// Prior specifications.

enum class PriorKind {
  pixel_tv,
  graph,
  sparse_gini,
  mixed_l1_gini,
  ross_grad_mask,
  l1_attrib,
  l2_attrib,
  gini_gradients,
  l1_gradients,
  weight,  // one of WeightKind
};

enum class Source { expected_gradients, gradients };

inline const char* to_string(Source s) {
  return s == Source::expected_gradients ? "expected-gradients" : "gradients";
}

inline Source source_from_string(const std::string& s) {
  if (s == "expected-gradients") return Source::expected_gradients;
  if (s == "gradients") return Source::gradients;
  throw InvalidSpec("unknown attribution source '" + s + "'");
}

struct PriorSpec {
  PriorKind kind = PriorKind::sparse_gini;
  WeightKind weight_kind = WeightKind::l1_all;  // used when kind == weight
  double lambda = 0.0;
  Source source = Source::expected_gradients;
  bool normalize = true;  // total variation only
  std::optional<Matrix> mask;
  std::optional<FeatureGraph> graph;

  std::string name() const;
  void validate() const;

  // Which attributions the prior reads, if any.
  std::optional<Source> attribution_source() const {
    switch (kind) {
      case PriorKind::ross_grad_mask:
      case PriorKind::weight: return std::nullopt;
      case PriorKind::gini_gradients:
      case PriorKind::l1_gradients: return Source::gradients;
      default: return source;
    }
  }
};

inline const std::vector<std::pair<PriorKind, const char*>>& prior_names() {
  static const std::vector<std::pair<PriorKind, const char*>> names = {
      {PriorKind::pixel_tv, "pixel-tv"},       {PriorKind::graph, "graph"},
      {PriorKind::sparse_gini, "sparse-gini"}, {PriorKind::mixed_l1_gini, "mixed-l1-gini"},
      {PriorKind::ross_grad_mask, "ross-grad-mask"}, {PriorKind::l1_attrib, "l1-attrib"},
      {PriorKind::l2_attrib, "l2-attrib"},     {PriorKind::gini_gradients, "gini-gradients"},
      {PriorKind::l1_gradients, "l1-gradients"},
  };
  return names;
}

inline std::string PriorSpec::name() const {
  if (kind == PriorKind::weight) return to_string(weight_kind);
  for (const auto& [k, n] : prior_names()) {
    if (k == kind) return n;
  }
  return "unknown";
}

// Accepts attribution prior names and weight penalty names.
inline PriorSpec prior_from_string(const std::string& s) {
  PriorSpec spec;
  for (const auto& [k, n] : prior_names()) {
    if (s == n) {
      spec.kind = k;
      return spec;
    }
  }
  if (auto w = weight_kind_from_string(s)) {
    spec.kind = PriorKind::weight;
    spec.weight_kind = *w;
    return spec;
  }
  throw InvalidSpec("unknown prior kind '" + s + "'");
}

inline void PriorSpec::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidSpec("prior strength must be finite and >= 0");
  if (kind == PriorKind::graph && !graph) throw InvalidSpec("graph prior needs a feature graph");
  if (kind == PriorKind::weight && weight_kind == WeightKind::graph_weights && !graph) {
    throw InvalidSpec("graph-weights penalty needs a feature graph");
  }
  if (kind == PriorKind::ross_grad_mask && !mask) throw InvalidSpec("gradient-mask prior needs a mask");
  if (graph) graph->validate();
}

// Penalty of one attribution-reading prior given the attributions of a batch.
inline NodeId attribution_penalty(Tape& tape, const PriorSpec& spec, const NodeMatrix& phi,
                                  const std::optional<nn::Grid>& grid) {
  switch (spec.kind) {
    case PriorKind::pixel_tv: return tv_penalty(tape, phi, grid, spec.normalize);
    case PriorKind::graph: return graph_penalty(tape, attrib::global_mean_abs(tape, phi), *spec.graph);
    case PriorKind::sparse_gini:
    case PriorKind::gini_gradients: return gini_penalty(tape, attrib::global_mean_abs(tape, phi));
    case PriorKind::mixed_l1_gini: {
      const auto g = attrib::global_mean_abs(tape, phi);
      std::vector<Term> terms;
      for (NodeId v : g) terms.push_back({1.0, v, ad::kNone});
      terms.push_back({1.0, gini_penalty(tape, g), ad::kNone});
      return tape.linear(ad::Op::sum, 0.0, terms);
    }
    case PriorKind::l1_attrib:
    case PriorKind::l1_gradients: return l1_attrib_penalty(tape, phi);
    case PriorKind::l2_attrib: return l2_attrib_penalty(tape, phi);
    case PriorKind::ross_grad_mask:
    case PriorKind::weight: break;
  }
  throw InvalidSpec("prior '" + spec.name() + "' does not read attributions");
}

// loss + sum lambda_i penalty_i
inline NodeId compose_objective(Tape& tape, NodeId loss, const std::vector<std::pair<double, NodeId>>& terms) {
  std::vector<Term> t{{1.0, loss, ad::kNone}};
  for (auto [lambda, penalty] : terms) {
    if (!(lambda >= 0.0)) throw InvalidSpec("prior strength must be >= 0");
    if (lambda != 0.0) t.push_back({lambda, penalty, ad::kNone});
  }
  if (t.size() == 1) return loss;
  return tape.linear(ad::Op::sum, 0.0, t);
}

inline double compose_objective(double loss, const std::vector<std::pair<double, double>>& terms) {
  double total = loss;
  for (auto [lambda, penalty] : terms) {
    if (!(lambda >= 0.0)) throw InvalidSpec("prior strength must be >= 0");
    if (lambda != 0.0) total += lambda * penalty;
  }
  return total;
}

}  // namespace attripriors::priors
