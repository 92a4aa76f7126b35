#pragma once

// Evaluation metrics, attribution sparsity summaries, noise robustness and
// significance tests.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include "attripriors/errors.hpp"
#include "attripriors/linalg.hpp"

namespace attripriors::eval {

// Mann-Whitney form: fraction of (positive, negative) pairs ranked correctly,
// ties counting one half.
inline double roc_auc(const Vector& scores, const Vector& labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
  const auto n = static_cast<std::size_t>(scores.size());
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = labels[static_cast<Eigen::Index>(i)];
    if (l != 0.0 && l != 1.0) throw LabelError("ROC-AUC labels must be 0 or 1");
    pos += l == 1.0;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw DegenerateLabels("ROC-AUC needs both classes");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[static_cast<Eigen::Index>(a)] < scores[static_cast<Eigen::Index>(b)];
  });
  // Sum of average ranks (1-based) of the positives.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[static_cast<Eigen::Index>(order[j + 1])] == scores[static_cast<Eigen::Index>(order[i])]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[static_cast<Eigen::Index>(order[k])] == 1.0) rank_sum += avg;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

inline double r_squared(const Vector& pred, const Vector& y) {
  if (pred.size() != y.size()) throw ShapeError("predictions and targets differ in length");
  if (y.size() < 2) throw ShapeError("R^2 needs at least two samples");
  const double mean = y.mean();
  const double sst = (y.array() - mean).square().sum();
  if (sst == 0.0) throw DegenerateTarget("R^2 undefined for a constant target");
  return 1.0 - (pred - y).squaredNorm() / sst;
}

inline double mean_squared_error(const Vector& pred, const Vector& y) {
  if (pred.size() != y.size()) throw ShapeError("predictions and targets differ in length");
  return (pred - y).squaredNorm() / static_cast<double>(y.size());
}

// Single-column outputs are thresholded at 0.5; wider outputs use argmax.
inline double accuracy(const Matrix& outputs, const Vector& y) {
  if (outputs.rows() != y.size()) throw ShapeError("outputs and labels differ in length");
  if (y.size() == 0) throw ShapeError("accuracy needs at least one sample");
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < outputs.rows(); ++r) {
    double label;
    if (outputs.cols() == 1) {
      label = outputs(r, 0) >= 0.5 ? 1.0 : 0.0;
    } else {
      Eigen::Index best = 0;
      outputs.row(r).maxCoeff(&best);
      label = static_cast<double>(best);
    }
    correct += label == y[r];
  }
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

// ---------------------------------------------------------------------------
// Attribution sparsity.

// G = sum_{i,j} |a_i - a_j| / (2 p sum_i a_i)
inline double gini_coefficient(const Vector& phi) {
  std::vector<double> v(phi.data(), phi.data() + phi.size());
  for (double x : v) {
    if (x < 0.0) throw InvalidAttribution("gini coefficient needs nonnegative values");
  }
  std::sort(v.begin(), v.end());
  double total = 0.0, weighted = 0.0;
  const auto p = static_cast<double>(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    total += v[k];
    weighted += (2.0 * static_cast<double>(k) - p + 1.0) * v[k];
  }
  if (total == 0.0) throw DegenerateAttribution("gini coefficient undefined for all-zero attributions");
  return weighted / (p * total);
}

struct LorenzCurve {
  std::vector<double> fraction;          // k / p, k = 0..p
  std::vector<double> cumulative_share;  // of features sorted ascending
};

inline LorenzCurve lorenz_curve(const Vector& phi) {
  std::vector<double> v(phi.data(), phi.data() + phi.size());
  for (double x : v) {
    if (x < 0.0) throw InvalidAttribution("Lorenz curve needs nonnegative values");
  }
  std::sort(v.begin(), v.end());
  LorenzCurve c;
  const auto p = static_cast<double>(v.size());
  std::vector<double> cum(v.size() + 1, 0.0);
  for (std::size_t k = 0; k < v.size(); ++k) cum[k + 1] = cum[k] + v[k];
  if (cum.back() == 0.0) throw DegenerateAttribution("Lorenz curve undefined for all-zero attributions");
  for (std::size_t k = 0; k <= v.size(); ++k) {
    c.fraction.push_back(static_cast<double>(k) / p);
    c.cumulative_share.push_back(cum[k] / cum.back());
  }
  return c;
}

inline void write_lorenz_csv(std::ostream& os, const LorenzCurve& c) {
  os << "fraction,cumulative_share\n";
  char buf[64];
  for (std::size_t k = 0; k < c.fraction.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", c.fraction[k], c.cumulative_share[k]);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Noise robustness.

struct RobustnessCurve {
  std::vector<double> sigma;
  std::vector<double> mean_accuracy;
  std::vector<double> std_accuracy;  // sample std across models; 0 for one model
};

// predictors[m](X) returns model m's outputs. The same noise draw at each
// sigma is shared by every model.
inline RobustnessCurve noise_robustness(const std::vector<std::function<Matrix(const Matrix&)>>& predictors,
                                        const Matrix& X, const Vector& y, const std::vector<double>& sigmas,
                                        std::uint64_t seed) {
  if (sigmas.empty() || sigmas.front() != 0.0) throw InvalidSpec("noise grid must start at 0");
  for (std::size_t i = 1; i < sigmas.size(); ++i) {
    if (!(sigmas[i] > sigmas[i - 1])) throw InvalidSpec("noise grid must be strictly increasing");
  }
  if (predictors.empty()) throw InvalidSpec("noise robustness needs at least one model");
  RobustnessCurve c;
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    Matrix noisy = X;
    if (sigmas[s] > 0.0) {
      Rng rng(derive_seed(seed, s));
      for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy.data()[i] += sigmas[s] * standard_normal(rng);
    }
    std::vector<double> acc;
    for (const auto& f : predictors) acc.push_back(accuracy(f(noisy), y));
    const double mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
    double var = 0.0;
    for (double a : acc) var += (a - mean) * (a - mean);
    c.sigma.push_back(sigmas[s]);
    c.mean_accuracy.push_back(mean);
    c.std_accuracy.push_back(acc.size() > 1 ? std::sqrt(var / static_cast<double>(acc.size() - 1)) : 0.0);
  }
  return c;
}

inline void write_robustness_csv(std::ostream& os, const RobustnessCurve& c) {
  os << "sigma,mean_acc,std_acc\n";
  char buf[96];
  for (std::size_t k = 0; k < c.sigma.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", c.sigma[k], c.mean_accuracy[k], c.std_accuracy[k]);
    os << buf;
  }
}

// Majority-class frequency.
inline double chance_level(const Vector& y) {
  std::vector<double> v(y.data(), y.data() + y.size());
  std::sort(v.begin(), v.end());
  std::size_t best = 0, i = 0;
  while (i < v.size()) {
    std::size_t j = i;
    while (j < v.size() && v[j] == v[i]) ++j;
    best = std::max(best, j - i);
    i = j;
  }
  return static_cast<double>(best) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Significance tests.

namespace detail {

// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lbt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double bt = std::exp(lbt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * detail::beta_cf(a, b, x) / a;
  return 1.0 - bt * detail::beta_cf(b, a, 1.0 - x) / b;
}

// Two-sided tail P(|T| >= |t|) of Student's t with nu degrees of freedom.
inline double student_t_two_sided(double t, double nu) {
  return incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t));
}

struct TTest {
  double t = 0.0;
  double p = 1.0;
};

inline TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("paired samples differ in length");
  if (a.size() < 3) throw ShapeError("paired t-test needs at least 3 pairs");
  const auto n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  if (ss == 0.0) {
    if (mean == 0.0) return {0.0, 1.0};
    throw DegeneratePairs("paired differences have zero variance");
  }
  const double sd = std::sqrt(ss / (n - 1.0));
  const double t = mean / (sd / std::sqrt(n));
  return {t, student_t_two_sided(t, n - 1.0)};
}

// P(X >= wins) for X ~ Binomial(trials, 1/2).
inline double binomial_one_tailed(std::size_t wins, std::size_t trials) {
  if (wins > trials) throw InvalidSpec("wins exceed trials");
  if (wins == 0) return 1.0;
  const double n = static_cast<double>(trials);
  double p = 0.0;
  for (std::size_t k = wins; k <= trials; ++k) {
    const double kk = static_cast<double>(k);
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(kk + 1.0) - std::lgamma(n - kk + 1.0) - n * std::log(2.0));
  }
  return std::min(1.0, p);
}

}  // namespace attripriors::eval
