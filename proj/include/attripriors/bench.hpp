#pragma once

// Keep/remove masking benchmarks for attribution methods.

#include <algorithm>
#include <array>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <json.hpp>

#include "attripriors/errors.hpp"
#include "attripriors/eval.hpp"
#include "attripriors/linalg.hpp"

namespace attripriors::bench {

using ModelFn = std::function<Matrix(const Matrix&)>;

enum class MaskKind { mean, resample, impute };
enum class Direction { keep, remove };
enum class Sign { positive, negative, absolute };

inline char letter(MaskKind k) { return k == MaskKind::mean ? 'M' : (k == MaskKind::resample ? 'R' : 'I'); }
inline char letter(Direction d) { return d == Direction::keep ? 'K' : 'R'; }
inline char letter(Sign s) { return s == Sign::positive ? 'P' : (s == Sign::negative ? 'N' : 'A'); }

inline constexpr double kImputeRidge = 1e-6;
inline constexpr std::size_t kResampleDraws = 10;

// ---------------------------------------------------------------------------
// Maskers.

class Masker {
 public:
  Masker() = default;

  static Masker fit(MaskKind kind, const Matrix& train, std::uint64_t seed = 0,
                    std::size_t draws = kResampleDraws) {
    if (train.rows() < 1) throw ShapeError("masker needs training rows");
    Masker m;
    m.kind_ = kind;
    m.seed_ = seed;
    m.draws_ = draws;
    m.mean_ = train.colwise().mean().transpose();
    if (kind == MaskKind::resample) {
      if (draws < 1) throw InvalidSpec("resample masking needs at least one draw");
      m.train_ = train;
    }
    if (kind == MaskKind::impute) {
      const Matrix centered = train.rowwise() - m.mean_.transpose();
      const double denom = train.rows() > 1 ? static_cast<double>(train.rows() - 1) : 1.0;
      m.set_covariance((centered.transpose() * centered) / denom);
    }
    m.fitted_ = true;
    return m;
  }

  // Impute masker from given moments.
  static Masker from_moments(const Vector& mean, const Matrix& cov) {
    if (cov.rows() != mean.size() || cov.cols() != mean.size()) throw ShapeError("covariance shape mismatch");
    Masker m;
    m.kind_ = MaskKind::impute;
    m.mean_ = mean;
    m.set_covariance(cov);
    m.fitted_ = true;
    return m;
  }

  MaskKind kind() const { return kind_; }
  bool fitted() const { return fitted_; }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return cov_; }
  std::size_t draws() const { return kind_ == MaskKind::resample ? draws_ : 1; }

  // Model inputs for sample x with masked[i] set for replaced features. Resample
  // gives one row per draw; `stream` picks the donor rows.
  Matrix inputs(const Vector& x, const std::vector<bool>& masked, std::uint64_t stream = 0) const {
    if (!fitted_) throw NotFitted("masker has not been fitted");
    if (x.size() != mean_.size() || masked.size() != static_cast<std::size_t>(x.size())) {
      throw ShapeError("sample width does not match the masker");
    }
    const Eigen::Index p = x.size();
    switch (kind_) {
      case MaskKind::mean: {
        Matrix out = x.transpose();
        for (Eigen::Index i = 0; i < p; ++i) {
          if (masked[static_cast<std::size_t>(i)]) out(0, i) = mean_[i];
        }
        return out;
      }
      case MaskKind::resample: {
        Rng rng(derive_seed(seed_, stream));
        Matrix out(static_cast<Eigen::Index>(draws_), p);
        for (Eigen::Index d = 0; d < out.rows(); ++d) {
          const auto donor = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(train_.rows())));
          for (Eigen::Index i = 0; i < p; ++i) {
            out(d, i) = masked[static_cast<std::size_t>(i)] ? train_(donor, i) : x[i];
          }
        }
        return out;
      }
      case MaskKind::impute: return impute(x, masked).transpose();
    }
    return {};
  }

  // The masked sample; under resample, the average of the drawn inputs.
  Vector apply(const Vector& x, const std::vector<bool>& masked, std::uint64_t stream = 0) const {
    return inputs(x, masked, stream).colwise().mean().transpose();
  }

 private:
  void set_covariance(const Matrix& cov) {
    cov_ = cov + kImputeRidge * Matrix::Identity(cov.rows(), cov.cols());
    Eigen::LLT<Eigen::MatrixXd> llt(cov_);
    if (llt.info() != Eigen::Success) throw InvalidSpec("impute covariance is not positive definite");
  }

  Vector impute(const Vector& x, const std::vector<bool>& masked) const {
    std::vector<Eigen::Index> m, u;
    for (Eigen::Index i = 0; i < x.size(); ++i) (masked[static_cast<std::size_t>(i)] ? m : u).push_back(i);
    Vector out = x;
    if (m.empty()) return out;
    if (u.empty()) return mean_;
    const auto mi = static_cast<Eigen::Index>(m.size()), ui = static_cast<Eigen::Index>(u.size());
    Eigen::MatrixXd suu(ui, ui), smu(mi, ui);
    Eigen::VectorXd du(ui);
    for (Eigen::Index a = 0; a < ui; ++a) {
      du[a] = x[u[a]] - mean_[u[a]];
      for (Eigen::Index b = 0; b < ui; ++b) suu(a, b) = cov_(u[a], u[b]);
      for (Eigen::Index b = 0; b < mi; ++b) smu(b, a) = cov_(m[b], u[a]);
    }
    const Eigen::VectorXd shift = smu * suu.llt().solve(du);
    for (Eigen::Index b = 0; b < mi; ++b) out[m[b]] = mean_[m[b]] + shift[b];
    return out;
  }

  MaskKind kind_ = MaskKind::mean;
  bool fitted_ = false;
  std::uint64_t seed_ = 0;
  std::size_t draws_ = kResampleDraws;
  Vector mean_;
  Matrix cov_;
  Matrix train_;
};

inline Vector mask_apply(const Vector& x, const std::vector<bool>& masked, const Masker& m) {
  return m.apply(x, masked);
}

// ---------------------------------------------------------------------------
// Metrics.

struct MetricSpec {
  Direction direction = Direction::keep;
  Sign sign = Sign::positive;
  MaskKind mask = MaskKind::mean;

  std::string name() const { return {letter(direction), letter(sign), letter(mask)}; }
};

// KPM, KPR, KPI, KNM, ..., RAI.
inline const std::array<MetricSpec, 18>& all_metrics() {
  static const std::array<MetricSpec, 18> specs = [] {
    std::array<MetricSpec, 18> out{};
    std::size_t i = 0;
    for (Direction d : {Direction::keep, Direction::remove}) {
      for (Sign s : {Sign::positive, Sign::negative, Sign::absolute}) {
        for (MaskKind k : {MaskKind::mean, MaskKind::resample, MaskKind::impute}) out[i++] = {d, s, k};
      }
    }
    return out;
  }();
  return specs;
}

// Features ranked most important first for the given sign; ties by index.
inline std::vector<std::size_t> importance_order(const Eigen::Ref<const Vector>& phi, Sign sign) {
  std::vector<double> score(static_cast<std::size_t>(phi.size()));
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    const double v = phi[i];
    score[static_cast<std::size_t>(i)] = sign == Sign::positive ? v : (sign == Sign::negative ? -v : std::abs(v));
  }
  std::vector<std::size_t> order(score.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return order;
}

// Mean over test rows of the metric value after j = 0..p steps. Keep curves
// unmask the j most important features; remove curves mask them. Values are
// oriented so that a higher curve means a better attribution.
inline std::vector<double> metric_curve(const ModelFn& f, const Matrix& X, const Matrix& phi, const MetricSpec& spec,
                                        const Masker& masker) {
  if (phi.rows() != X.rows() || phi.cols() != X.cols()) throw ShapeError("attributions do not align with X");
  if (masker.kind() != spec.mask) throw InvalidSpec("masker kind does not match the metric");
  const auto p = static_cast<std::size_t>(X.cols());
  const auto draws = static_cast<Eigen::Index>(masker.draws());
  std::vector<double> curve(p + 1, 0.0);
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const Vector x = X.row(r).transpose();
    const auto order = importance_order(phi.row(r).transpose(), spec.sign);
    Matrix batch(static_cast<Eigen::Index>(p + 2) * draws, X.cols());
    std::vector<bool> masked(p, spec.direction == Direction::keep);
    const auto stream = static_cast<std::uint64_t>(r);
    for (std::size_t j = 0; j <= p; ++j) {
      if (j > 0) masked[order[j - 1]] = !masked[order[j - 1]];
      batch.middleRows(static_cast<Eigen::Index>(j) * draws, draws) = masker.inputs(x, masked, stream);
    }
    // Reference point for absolute variants: fully masked (keep) or untouched (remove).
    const std::vector<bool> ref(p, spec.direction == Direction::keep);
    batch.middleRows(static_cast<Eigen::Index>(p + 1) * draws, draws) = masker.inputs(x, ref, stream);
    const Matrix out = f(batch);
    const auto avg = [&](std::size_t j) {
      return out.col(0).segment(static_cast<Eigen::Index>(j) * draws, draws).mean();
    };
    const double base = avg(p + 1);
    for (std::size_t j = 0; j <= p; ++j) {
      const double v = avg(j);
      double value = 0.0;
      switch (spec.sign) {
        case Sign::positive: value = spec.direction == Direction::keep ? v : -v; break;
        case Sign::negative: value = spec.direction == Direction::keep ? -v : v; break;
        case Sign::absolute: value = std::abs(v - base); break;
      }
      curve[j] += value;
    }
  }
  for (double& c : curve) c /= static_cast<double>(X.rows());
  return curve;
}

// Trapezoidal area over the fraction axis j/p.
inline double metric_auc(const std::vector<double>& curve) {
  if (curve.empty()) throw InvalidSpec("empty curve");
  if (curve.size() == 1) return curve[0];
  const double h = 1.0 / static_cast<double>(curve.size() - 1);
  double area = 0.0;
  for (std::size_t j = 0; j + 1 < curve.size(); ++j) area += 0.5 * (curve[j] + curve[j + 1]) * h;
  return area;
}

struct Maskers {
  Masker mean, resample, impute;

  static Maskers fit(const Matrix& train, std::uint64_t seed, std::size_t draws = kResampleDraws) {
    return {Masker::fit(MaskKind::mean, train), Masker::fit(MaskKind::resample, train, seed, draws),
            Masker::fit(MaskKind::impute, train)};
  }

  const Masker& get(MaskKind k) const {
    return k == MaskKind::mean ? mean : (k == MaskKind::resample ? resample : impute);
  }
};

struct MethodScores {
  std::string method;
  std::array<double, 18> scores{};
  std::array<std::vector<double>, 18> curves;
};

inline MethodScores run_all_18(const ModelFn& f, const Matrix& X, const Matrix& phi, const Maskers& maskers,
                               const std::string& method = "") {
  MethodScores out;
  out.method = method;
  for (std::size_t i = 0; i < 18; ++i) {
    const MetricSpec& spec = all_metrics()[i];
    out.curves[i] = metric_curve(f, X, phi, spec, maskers.get(spec.mask));
    out.scores[i] = metric_auc(out.curves[i]);
  }
  return out;
}

struct BenchmarkResult {
  std::vector<MethodScores> methods;
};

struct Comparison {
  std::string a, b;
  std::size_t wins = 0;  // metrics where a scores strictly higher than b
  std::size_t trials = 18;
  double p = 1.0;  // one-tailed binomial, p0 = 1/2
};

inline Comparison compare_methods(const MethodScores& a, const MethodScores& b) {
  Comparison c{a.method, b.method};
  for (std::size_t i = 0; i < 18; ++i) c.wins += a.scores[i] > b.scores[i];
  c.p = eval::binomial_one_tailed(c.wins, c.trials);
  return c;
}

// Methods ordered by total pairwise metric wins, most first; ties keep input order.
inline std::vector<std::string> rank_methods(const BenchmarkResult& r) {
  std::vector<std::size_t> wins(r.methods.size(), 0);
  for (std::size_t a = 0; a < r.methods.size(); ++a) {
    for (std::size_t b = 0; b < r.methods.size(); ++b) {
      if (a != b) wins[a] += compare_methods(r.methods[a], r.methods[b]).wins;
    }
  }
  std::vector<std::size_t> order(r.methods.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return wins[a] > wins[b]; });
  std::vector<std::string> out;
  for (std::size_t i : order) out.push_back(r.methods[i].method);
  return out;
}

// ---------------------------------------------------------------------------
// Export.

inline void write_table_csv(std::ostream& os, const BenchmarkResult& r) {
  os << "method";
  for (const auto& s : all_metrics()) os << ',' << s.name();
  os << '\n';
  char buf[32];
  for (const auto& m : r.methods) {
    os << m.method;
    for (double v : m.scores) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
}

inline nlohmann::json to_json(const BenchmarkResult& r) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& m : r.methods) {
    nlohmann::json entry;
    for (std::size_t i = 0; i < 18; ++i) {
      const std::string name = all_metrics()[i].name();
      entry["scores"][name] = m.scores[i];
      entry["curves"][name] = m.curves[i];
    }
    j[m.method] = entry;
  }
  return j;
}

}  // namespace attripriors::bench
