#pragma once

// Feature attributions: plain gradients, integrated gradients, expected
// gradients (evaluation and in-batch training estimators) and a random
// baseline.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "attripriors/autodiff.hpp"
#include "attripriors/errors.hpp"
#include "attripriors/linalg.hpp"
#include "attripriors/nn.hpp"

namespace attripriors::attrib {

using ad::NodeId;
using ad::Tape;

enum class Method { expected_gradients, integrated_gradients, gradients, random };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::expected_gradients: return "expected_gradients";
    case Method::integrated_gradients: return "integrated_gradients";
    case Method::gradients: return "gradients";
    case Method::random: return "random";
  }
  return "unknown";
}

inline Method method_from_string(const std::string& s) {
  if (s == "expected_gradients" || s == "eg") return Method::expected_gradients;
  if (s == "integrated_gradients" || s == "ig") return Method::integrated_gradients;
  if (s == "gradients" || s == "grad") return Method::gradients;
  if (s == "random") return Method::random;
  throw InvalidSpec("unknown attribution method '" + s + "'");
}

struct AttributionMatrix {
  Matrix values;  // samples x features
  Method method = Method::gradients;
  std::size_t k = 0;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
};

struct ReferenceSet {
  Matrix rows;
};

// Which model output is explained. Multi-output models explain `output`
// unless `per_row` gives a class for each explained sample.
struct Target {
  std::size_t output = 0;
  std::vector<std::size_t> per_row;

  std::size_t for_row(std::size_t r) const { return per_row.empty() ? output : per_row.at(r); }
};

namespace detail {

inline void check_width(const nn::Model& m, Eigen::Index cols, const char* what) {
  if (static_cast<std::size_t>(cols) != m.features()) {
    throw ShapeError(std::string(what) + " has " + std::to_string(cols) + " features, model expects " +
                     std::to_string(m.features()));
  }
}

// Gradients of one output at many points.
inline Matrix gradients_at(const nn::Model& m, const Matrix& points, std::size_t target) {
  return nn::input_gradients(m, points, target);
}

}  // namespace detail

inline AttributionMatrix grad_attrib(const nn::Model& m, const Matrix& X, const Target& target = {}) {
  detail::check_width(m, X.cols(), "input");
  AttributionMatrix out;
  out.method = Method::gradients;
  if (target.per_row.empty()) {
    out.values = detail::gradients_at(m, X, target.output);
    return out;
  }
  out.values.resize(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    out.values.row(r) = detail::gradients_at(m, X.row(r), target.for_row(static_cast<std::size_t>(r)));
  }
  return out;
}

// Gradients of a scalar function at each row of a point matrix. Lets the
// path methods run on any differentiable function, not only models.
using GradientFn = std::function<Matrix(const Matrix&)>;

inline GradientFn model_gradient(const nn::Model& m, std::size_t target = 0) {
  return [&m, target](const Matrix& points) { return detail::gradients_at(m, points, target); };
}

// Midpoint rule: alpha_t = (t - 0.5) / steps.
inline Vector integrated_gradients(const GradientFn& grad, const Vector& x, const Vector& baseline,
                                   std::size_t steps) {
  if (steps < 1) throw InvalidSpec("integrated gradients needs at least one step");
  if (baseline.size() != x.size()) throw ShapeError("baseline dimension does not match input");
  const Vector diff = x - baseline;
  Matrix points(static_cast<Eigen::Index>(steps), x.size());
  for (std::size_t t = 0; t < steps; ++t) {
    const double alpha = (static_cast<double>(t) + 0.5) / static_cast<double>(steps);
    points.row(static_cast<Eigen::Index>(t)) = (baseline + alpha * diff).transpose();
  }
  const Matrix g = grad(points);
  return diff.cwiseProduct(g.colwise().mean().transpose());
}

inline Vector integrated_gradients(const nn::Model& m, const Vector& x, const Vector& baseline,
                                   std::size_t steps, std::size_t target = 0) {
  detail::check_width(m, x.size(), "input");
  return integrated_gradients(model_gradient(m, target), x, baseline, steps);
}

inline AttributionMatrix integrated_gradients(const nn::Model& m, const Matrix& X, const Vector& baseline,
                                              std::size_t steps, const Target& target = {}) {
  AttributionMatrix out;
  out.method = Method::integrated_gradients;
  out.steps = steps;
  out.values.resize(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    out.values.row(r) = integrated_gradients(m, X.row(r).transpose(), baseline, steps,
                                             target.for_row(static_cast<std::size_t>(r)))
                            .transpose();
  }
  return out;
}

// Monte Carlo expected gradients for one sample: k independent draws of a
// reference row (with replacement) and an interpolation point alpha ~ U(0,1).
inline Vector expected_gradients(const GradientFn& grad, const Vector& x, const ReferenceSet& refs,
                                 std::size_t k, std::uint64_t seed) {
  if (refs.rows.rows() == 0) throw EmptyReferences("reference set is empty");
  if (k < 1) throw InvalidK("expected gradients needs k >= 1");
  if (refs.rows.cols() != x.size()) throw ShapeError("reference set width does not match input");
  Rng rng(seed);
  const auto r = static_cast<std::size_t>(refs.rows.rows());
  Matrix points(static_cast<Eigen::Index>(k), x.size());
  Matrix diffs(static_cast<Eigen::Index>(k), x.size());
  for (std::size_t s = 0; s < k; ++s) {
    const auto idx = static_cast<Eigen::Index>(uniform_index(rng, r));
    const double alpha = uniform01(rng);
    const auto row = static_cast<Eigen::Index>(s);
    diffs.row(row) = x.transpose() - refs.rows.row(idx);
    points.row(row) = refs.rows.row(idx) + alpha * diffs.row(row);
  }
  return diffs.cwiseProduct(grad(points)).colwise().mean().transpose();
}

inline Vector expected_gradients(const nn::Model& m, const Vector& x, const ReferenceSet& refs, std::size_t k,
                                 std::uint64_t seed, std::size_t target = 0) {
  if (refs.rows.rows() == 0) throw EmptyReferences("reference set is empty");
  detail::check_width(m, x.size(), "input");
  detail::check_width(m, refs.rows.cols(), "reference set");
  return expected_gradients(model_gradient(m, target), x, refs, k, seed);
}

// Row r uses the generator seeded with derive_seed(seed, r).
inline AttributionMatrix expected_gradients(const nn::Model& m, const Matrix& X, const ReferenceSet& refs,
                                            std::size_t k, std::uint64_t seed, const Target& target = {}) {
  AttributionMatrix out;
  out.method = Method::expected_gradients;
  out.k = k;
  out.seed = seed;
  out.values.resize(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const auto row = static_cast<std::size_t>(r);
    out.values.row(r) = expected_gradients(m, X.row(r).transpose(), refs, k, derive_seed(seed, row),
                                           target.for_row(row))
                            .transpose();
  }
  return out;
}

// Expected gradients with the reference expectation taken exactly (every
// reference row, equally weighted) and the alpha integral by the midpoint
// rule. Used as a low-noise baseline for convergence checks.
inline Matrix expected_gradients_full(const nn::Model& m, const Matrix& X, const ReferenceSet& refs,
                                      std::size_t steps, std::size_t target = 0) {
  if (refs.rows.rows() == 0) throw EmptyReferences("reference set is empty");
  Matrix out = Matrix::Zero(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const Vector x = X.row(r).transpose();
    Vector acc = Vector::Zero(X.cols());
    for (Eigen::Index j = 0; j < refs.rows.rows(); ++j) {
      acc += integrated_gradients(m, x, refs.rows.row(j).transpose(), steps, target);
    }
    out.row(r) = acc.transpose() / static_cast<double>(refs.rows.rows());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training-time estimators. The returned nodes are differentiable with
// respect to the bound parameters.

using NodeMatrix = std::vector<std::vector<NodeId>>;

// Row j is explained against batch rows (j + s) mod b for s = 1..k, one fresh
// alpha per (row, shift). The model is evaluated without dropout.
inline NodeMatrix expected_gradients_train_batch(Tape& tape, const nn::BoundModel& bm, const Matrix& batch,
                                                 std::size_t k, Rng& rng, const Target& target = {}) {
  const auto b = static_cast<std::size_t>(batch.rows());
  const auto p = static_cast<std::size_t>(batch.cols());
  if (k < 1 || k >= b) {
    throw InvalidK("training estimator needs 1 <= k < batch size (k=" + std::to_string(k) +
                   ", batch=" + std::to_string(b) + ")");
  }
  detail::check_width(*bm.model, batch.cols(), "batch");

  std::vector<std::vector<NodeId>> leaves;
  leaves.reserve(b * k);
  std::vector<ad::Term> outputs;
  outputs.reserve(b * k);
  std::vector<NodeId> point(p);
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t s = 1; s <= k; ++s) {
      const auto ref = static_cast<Eigen::Index>((j + s) % b);
      const double alpha = uniform01(rng);
      for (std::size_t i = 0; i < p; ++i) {
        const double xr = batch(ref, static_cast<Eigen::Index>(i));
        const double xj = batch(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
        point[i] = tape.variable(xr + alpha * (xj - xr));
      }
      const auto row = nn::forward_row(tape, bm, point);
      outputs.push_back({1.0, row.outputs[target.for_row(j)], ad::kNone});
      leaves.push_back(point);
    }
  }
  const NodeId total = tape.linear(ad::Op::sum, 0.0, outputs);
  std::vector<NodeId> flat;
  flat.reserve(b * k * p);
  for (const auto& l : leaves) flat.insert(flat.end(), l.begin(), l.end());
  const std::vector<NodeId> grads = tape.gradient(total, flat);

  NodeMatrix phi(b, std::vector<NodeId>(p));
  std::vector<ad::Term> terms;
  const double inv_k = 1.0 / static_cast<double>(k);
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t i = 0; i < p; ++i) {
      terms.clear();
      for (std::size_t s = 1; s <= k; ++s) {
        const auto ref = static_cast<Eigen::Index>((j + s) % b);
        const double diff = batch(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) -
                            batch(ref, static_cast<Eigen::Index>(i));
        if (diff != 0.0) terms.push_back({diff * inv_k, grads[(j * k + (s - 1)) * p + i], ad::kNone});
      }
      phi[j][i] = tape.linear(ad::Op::sum, 0.0, terms);
    }
  }
  return phi;
}

// Input gradients of the (eval-mode) model at each batch row.
inline NodeMatrix gradients_train_batch(Tape& tape, const nn::BoundModel& bm, const Matrix& batch,
                                        const Target& target = {}) {
  detail::check_width(*bm.model, batch.cols(), "batch");
  const auto b = static_cast<std::size_t>(batch.rows());
  const auto p = static_cast<std::size_t>(batch.cols());
  std::vector<NodeId> flat;
  std::vector<ad::Term> outputs;
  std::vector<NodeId> x(p);
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t i = 0; i < p; ++i) {
      x[i] = tape.variable(batch(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)));
    }
    const auto row = nn::forward_row(tape, bm, x);
    outputs.push_back({1.0, row.outputs[target.for_row(j)], ad::kNone});
    flat.insert(flat.end(), x.begin(), x.end());
  }
  const NodeId total = tape.linear(ad::Op::sum, 0.0, outputs);
  const std::vector<NodeId> grads = tape.gradient(total, flat);
  NodeMatrix phi(b, std::vector<NodeId>(p));
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t i = 0; i < p; ++i) phi[j][i] = grads[j * p + i];
  }
  return phi;
}

inline Matrix values(const Tape& tape, const NodeMatrix& phi) {
  Matrix out(static_cast<Eigen::Index>(phi.size()),
             phi.empty() ? 0 : static_cast<Eigen::Index>(phi.front().size()));
  for (std::size_t r = 0; r < phi.size(); ++r) {
    for (std::size_t c = 0; c < phi[r].size(); ++c) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = tape.value(phi[r][c]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions.

// phi_bar_i = (1/n) sum_l |phi_l_i|
inline Vector global_mean_abs(const Matrix& phi) {
  if (phi.rows() < 1) throw ShapeError("global attribution needs at least one row");
  return phi.cwiseAbs().colwise().mean().transpose();
}

inline Vector global_mean_abs(const AttributionMatrix& phi) { return global_mean_abs(phi.values); }

inline std::vector<NodeId> global_mean_abs(Tape& tape, const NodeMatrix& phi) {
  if (phi.empty()) throw ShapeError("global attribution needs at least one row");
  const std::size_t p = phi.front().size();
  const double inv_n = 1.0 / static_cast<double>(phi.size());
  std::vector<NodeId> out(p);
  std::vector<ad::Term> terms;
  for (std::size_t i = 0; i < p; ++i) {
    terms.clear();
    for (const auto& row : phi) terms.push_back({inv_n, tape.unary(ad::Op::abs, row[i]), ad::kNone});
    out[i] = tape.linear(ad::Op::sum, 0.0, terms);
  }
  return out;
}

inline AttributionMatrix random_attrib(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  AttributionMatrix out;
  out.method = Method::random;
  out.seed = seed;
  out.values.resize(rows, cols);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < out.values.size(); ++i) out.values.data()[i] = standard_normal(rng);
  return out;
}

// Mean |Phi_k - Phi_baseline| over all entries, one value per k.
inline std::vector<double> convergence_diagnostic(const nn::Model& m, const Matrix& X, const ReferenceSet& refs,
                                                  const std::vector<std::size_t>& k_grid, const Matrix& baseline,
                                                  std::uint64_t seed) {
  if (baseline.rows() != X.rows() || baseline.cols() != X.cols()) {
    throw ShapeError("baseline attribution shape does not match X");
  }
  std::vector<double> out;
  out.reserve(k_grid.size());
  for (std::size_t k : k_grid) {
    const Matrix phi = expected_gradients(m, X, refs, k, seed).values;
    out.push_back((phi - baseline).cwiseAbs().mean());
  }
  return out;
}

inline std::vector<double> convergence_diagnostic(const nn::Model& m, const Matrix& X, const ReferenceSet& refs,
                                                  const std::vector<std::size_t>& k_grid, std::size_t baseline_k,
                                                  std::uint64_t seed) {
  for (std::size_t k : k_grid) {
    if (k > baseline_k) throw InvalidK("baseline k must be at least every k in the grid");
  }
  const Matrix baseline = expected_gradients(m, X, refs, baseline_k, seed).values;
  return convergence_diagnostic(m, X, refs, k_grid, baseline, seed);
}

// ---------------------------------------------------------------------------
// CSV export.

inline void write_csv(std::ostream& os, const Matrix& phi) {
  os << "sample_index";
  for (Eigen::Index c = 0; c < phi.cols(); ++c) os << ",feature_" << c;
  os << '\n';
  char buf[32];
  for (Eigen::Index r = 0; r < phi.rows(); ++r) {
    os << r;
    for (Eigen::Index c = 0; c < phi.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", phi(r, c));
      os << ',' << buf;
    }
    os << '\n';
  }
}

// One sample's attribution laid out as an h x w grid.
inline void write_grid_csv(std::ostream& os, const Matrix& phi, Eigen::Index sample, const nn::Grid& grid) {
  if (static_cast<std::size_t>(phi.cols()) != grid.h * grid.w) throw ShapeError("grid does not match width");
  char buf[32];
  for (std::size_t i = 0; i < grid.h; ++i) {
    for (std::size_t j = 0; j < grid.w; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", phi(sample, static_cast<Eigen::Index>(i * grid.w + j)));
      os << (j ? "," : "") << buf;
    }
    os << '\n';
  }
}

}  // namespace attripriors::attrib
