#pragma once

// Datasets: synthetic generators, splits, standardization, noise, CSV I/O.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "attripriors/errors.hpp"
#include "attripriors/linalg.hpp"
#include "attripriors/nn.hpp"
#include "attripriors/priors.hpp"

namespace attripriors::data {

enum class Task { regression, binary, multiclass };

inline const char* to_string(Task t) {
  switch (t) {
    case Task::regression: return "regression";
    case Task::binary: return "binary";
    case Task::multiclass: return "multiclass";
  }
  return "unknown";
}

inline Task task_from_string(const std::string& s) {
  if (s == "regression") return Task::regression;
  if (s == "binary") return Task::binary;
  if (s == "multiclass") return Task::multiclass;
  throw InvalidSpec("unknown task '" + s + "'");
}

struct Dataset {
  Matrix X;
  Vector y;
  std::vector<std::string> feature_names;
  Task task = Task::regression;
  std::optional<nn::Grid> grid;
  std::vector<std::int64_t> groups;  // empty, or one id per row

  std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t features() const { return static_cast<std::size_t>(X.cols()); }
};

inline std::vector<std::string> default_names(std::size_t p) {
  std::vector<std::string> out(p);
  for (std::size_t i = 0; i < p; ++i) out[i] = "feature_" + std::to_string(i);
  return out;
}

inline Dataset subset(const Dataset& d, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.X = rows_of(d.X, idx);
  out.y = rows_of(d.y, idx);
  out.feature_names = d.feature_names;
  out.task = d.task;
  out.grid = d.grid;
  if (!d.groups.empty()) {
    for (std::size_t i : idx) out.groups.push_back(d.groups[i]);
  }
  return out;
}

inline Matrix standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Tabular benchmark generators.

inline constexpr double kFeatureNoise = 0.1;
inline constexpr double kLabelNoise = 0.1;
inline constexpr std::uint64_t kBenchmarkBetaSeed = 0x5eed0060;

// Fixed coefficients shared by every draw of a benchmark task, so training
// and test sets generated with different seeds describe the same function.
inline Vector benchmark_beta(std::size_t p, std::uint64_t beta_seed = kBenchmarkBetaSeed) {
  Rng rng(beta_seed);
  Vector beta(static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < beta.size(); ++i) beta[i] = standard_normal(rng);
  return beta;
}

namespace detail {

inline Dataset linear_task(const Matrix& latent, Rng& rng, std::uint64_t beta_seed) {
  Dataset d;
  d.X = latent + kFeatureNoise * standard_normal_matrix(latent.rows(), latent.cols(), rng);
  const Vector beta = benchmark_beta(static_cast<std::size_t>(latent.cols()), beta_seed);
  d.y = d.X * beta;
  for (Eigen::Index i = 0; i < d.y.size(); ++i) d.y[i] += kLabelNoise * standard_normal(rng);
  d.feature_names = default_names(static_cast<std::size_t>(latent.cols()));
  d.task = Task::regression;
  return d;
}

}  // namespace detail

// x = z + e with z ~ N(0, I_60), e ~ N(0, 0.1^2 I); y = beta^T x + N(0, 0.1^2).
inline Dataset gen_independent_linear_60(std::size_t n, std::uint64_t seed,
                                         std::uint64_t beta_seed = kBenchmarkBetaSeed) {
  if (n < 1) throw InvalidSpec("dataset needs at least one row");
  Rng rng(seed);
  const Matrix z = standard_normal_matrix(static_cast<Eigen::Index>(n), 60, rng);
  return detail::linear_task(z, rng, beta_seed);
}

// Observed correlation inside each triple of features (0-2, 3-5, ...).
inline constexpr double kGroupCorrelation = 0.99;

// Latent covariance of one triple: unit variances, off-diagonal chosen so the
// observed features (latent plus noise) correlate at exactly 0.99.
inline Matrix correlated_block() {
  const double c = kGroupCorrelation * (1.0 + kFeatureNoise * kFeatureNoise);
  Matrix b = Matrix::Constant(3, 3, c);
  b.diagonal().setOnes();
  return b;
}

inline Dataset gen_correlated_groups_60(std::size_t n, std::uint64_t seed,
                                        std::uint64_t beta_seed = kBenchmarkBetaSeed) {
  if (n < 1) throw InvalidSpec("dataset needs at least one row");
  Eigen::LLT<Eigen::MatrixXd> llt(correlated_block());
  if (llt.info() != Eigen::Success) throw InvalidSpec("correlated block is not positive definite");
  const Eigen::MatrixXd l = llt.matrixL();
  Rng rng(seed);
  Matrix z = standard_normal_matrix(static_cast<Eigen::Index>(n), 60, rng);
  for (Eigen::Index g = 0; g < 20; ++g) {
    const Matrix block = z.middleCols(3 * g, 3);
    z.middleCols(3 * g, 3) = block * l.transpose();
  }
  return detail::linear_task(z, rng, beta_seed);
}

// ---------------------------------------------------------------------------
// Image task: a Gaussian blob in the left half (class 0) or right half
// (class 1), with random centre shift, amplitude jitter and per-pixel jitter.

struct ImageTaskSpec {
  std::size_t h = 14;
  std::size_t w = 14;
  double noise = 0.0;        // extra N(0, noise^2) per pixel
  double pixel_jitter = 0.1; // per-pixel N(0, jitter^2) present in every image
  double blob_sigma = 1.5;
  double shift = 1.0;        // max centre shift in pixels, both axes
};

inline Dataset gen_image_task(std::size_t n, const ImageTaskSpec& spec, std::uint64_t seed) {
  if (spec.h < 4 || spec.w < 4) throw InvalidSpec("image task needs h, w >= 4");
  if (n < 1) throw InvalidSpec("dataset needs at least one row");
  Rng rng(seed);
  std::vector<double> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<double>(i % 2);
  std::shuffle(labels.begin(), labels.end(), rng);

  Dataset d;
  const auto p = static_cast<Eigen::Index>(spec.h * spec.w);
  d.X.resize(static_cast<Eigen::Index>(n), p);
  d.y.resize(static_cast<Eigen::Index>(n));
  const double cy0 = (static_cast<double>(spec.h) - 1.0) / 2.0;
  for (std::size_t r = 0; r < n; ++r) {
    const bool right = labels[r] == 1.0;
    const double cx = (right ? 0.75 : 0.25) * (static_cast<double>(spec.w) - 1.0) +
                      spec.shift * (2.0 * uniform01(rng) - 1.0);
    const double cy = cy0 + spec.shift * (2.0 * uniform01(rng) - 1.0);
    const double amp = 0.8 + 0.4 * uniform01(rng);
    for (std::size_t i = 0; i < spec.h; ++i) {
      for (std::size_t j = 0; j < spec.w; ++j) {
        const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
        double v = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * spec.blob_sigma * spec.blob_sigma));
        v += spec.pixel_jitter * standard_normal(rng);
        if (spec.noise > 0.0) v += spec.noise * standard_normal(rng);
        d.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i * spec.w + j)) = v;
      }
    }
    d.y[static_cast<Eigen::Index>(r)] = labels[r];
  }
  d.feature_names.resize(static_cast<std::size_t>(p));
  for (std::size_t i = 0; i < spec.h; ++i) {
    for (std::size_t j = 0; j < spec.w; ++j) {
      d.feature_names[i * spec.w + j] = "px_" + std::to_string(i) + "_" + std::to_string(j);
    }
  }
  d.task = Task::binary;
  d.grid = nn::Grid{spec.h, spec.w};
  return d;
}

inline Dataset gen_image_task(std::size_t n, std::size_t h, std::size_t w, double noise, std::uint64_t seed) {
  ImageTaskSpec spec;
  spec.h = h;
  spec.w = w;
  spec.noise = noise;
  return gen_image_task(n, spec, seed);
}

// ---------------------------------------------------------------------------
// Graph task.

// Planted-partition graph over consecutive communities of features. The
// default makes every community a clique with no edges between them.
struct GraphSpec {
  std::size_t community_size = 8;
  double within_degree = 7.0;   // expected neighbours inside the community
  double between_degree = 0.0;  // expected neighbours outside it
  double min_weight = 0.5;
  double max_weight = 1.5;
  double ridge = 0.1;        // beta ~ N(0, (L + ridge I)^-1)
  double noise = 1.0;        // label noise std, relative to std(beta^T x)
};

struct GraphTask {
  Dataset data;
  priors::FeatureGraph graph;
  Vector beta;
};

inline priors::FeatureGraph random_graph(std::size_t p, const GraphSpec& spec, Rng& rng) {
  const std::size_t c = std::clamp<std::size_t>(spec.community_size, 2, p);
  const double inside = static_cast<double>(c - 1);
  const double outside = static_cast<double>(p - c);
  const double p_in = std::min(1.0, spec.within_degree / inside);
  const double p_out = outside > 0.0 ? std::min(1.0, spec.between_degree / outside) : 0.0;
  std::vector<priors::Edge> edges;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i + 1; j < p; ++j) {
      const double prob = i / c == j / c ? p_in : p_out;
      const double u = uniform01(rng);
      const double w = spec.min_weight + (spec.max_weight - spec.min_weight) * uniform01(rng);
      if (u < prob) edges.push_back({i, j, w});
    }
  }
  return priors::FeatureGraph::from_edges(p, edges);
}

// Draws beta with precision matrix L + ridge I via its Cholesky factor.
inline Vector smooth_coefficients(const priors::FeatureGraph& g, double ridge, Rng& rng) {
  Eigen::MatrixXd q = g.laplacian();
  q.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(q);
  if (llt.info() != Eigen::Success) throw InvalidSpec("graph precision matrix is not positive definite");
  Vector u(q.rows());
  for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = standard_normal(rng);
  // q = L L^T, beta = L^-T u has covariance q^-1.
  return llt.matrixU().solve(u);
}

inline GraphTask gen_graph_task(std::size_t n, std::size_t p, const GraphSpec& spec, std::uint64_t seed) {
  if (p < 4) throw InvalidSpec("graph task needs p >= 4");
  if (n < 1) throw InvalidSpec("dataset needs at least one row");
  Rng rng(seed);
  GraphTask t;
  t.graph = random_graph(p, spec, rng);
  t.beta = smooth_coefficients(t.graph, spec.ridge, rng);
  t.data.X = standard_normal_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p), rng);
  const Vector signal = t.data.X * t.beta;
  // The signal variance is |beta|^2 for standard-normal features.
  const double scale = spec.noise * t.beta.norm();
  t.data.y = signal;
  for (Eigen::Index i = 0; i < t.data.y.size(); ++i) t.data.y[i] += scale * standard_normal(rng);
  t.data.feature_names = default_names(p);
  t.data.task = Task::regression;
  return t;
}

// Same number of upper-triangle edges at uniformly redrawn positions, with
// the original weights permuted over them.
inline priors::FeatureGraph randomize_graph(const priors::FeatureGraph& g, std::uint64_t seed) {
  g.validate();
  const std::size_t p = g.size();
  const auto edges = g.edges();
  std::vector<double> weights;
  for (const auto& e : edges) weights.push_back(e.weight);
  Rng rng(seed);
  std::vector<std::size_t> slots(p * (p - 1) / 2);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  std::shuffle(weights.begin(), weights.end(), rng);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(slots.size());
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i + 1; j < p; ++j) pairs.emplace_back(i, j);
  }
  std::vector<priors::Edge> out;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto [i, j] = pairs[slots[k]];
    out.push_back({i, j, weights[k]});
  }
  return priors::FeatureGraph::from_edges(p, out);
}

// ---------------------------------------------------------------------------
// Sparse binary task: only the first `informative` of p standard-normal
// features matter; y ~ Bernoulli(sigmoid(beta^T x)) with beta alternating
// +signal / -signal on those features.

struct SparseSpec {
  std::size_t p = 50;
  std::size_t informative = 5;
  double signal = 1.5;
};

inline Dataset gen_sparse_binary(std::size_t n, const SparseSpec& spec, std::uint64_t seed) {
  if (n < 1) throw InvalidSpec("dataset needs at least one row");
  if (spec.informative < 1 || spec.informative > spec.p) throw InvalidSpec("informative count must be in [1, p]");
  Rng rng(seed);
  Dataset d;
  d.X = standard_normal_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.p), rng);
  d.y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index r = 0; r < d.X.rows(); ++r) {
    double z = 0.0;
    for (std::size_t i = 0; i < spec.informative; ++i) {
      z += (i % 2 == 0 ? spec.signal : -spec.signal) * d.X(r, static_cast<Eigen::Index>(i));
    }
    d.y[r] = uniform01(rng) < ad::sigmoid(z) ? 1.0 : 0.0;
  }
  d.feature_names = default_names(spec.p);
  d.task = Task::binary;
  return d;
}

// ---------------------------------------------------------------------------
// Splits.

struct Splits {
  Dataset train, val, test;
};

inline Splits split(const Dataset& d, double train_frac, double val_frac, bool grouped, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0) || !(val_frac > 0.0 && val_frac < 1.0) ||
      !(train_frac + val_frac < 1.0)) {
    throw SplitError("fractions must lie in (0,1) and sum to less than 1");
  }
  const std::size_t n = d.rows();
  Rng rng(seed);
  std::vector<std::size_t> tr, va, te;
  if (!grouped) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_tr = static_cast<std::size_t>(std::lround(static_cast<double>(n) * train_frac));
    const auto n_va = static_cast<std::size_t>(std::lround(static_cast<double>(n) * val_frac));
    if (n_tr + n_va >= n || n_tr == 0 || n_va == 0) throw SplitError("dataset too small for the requested split");
    tr.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_tr));
    va.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_tr), idx.begin() + static_cast<std::ptrdiff_t>(n_tr + n_va));
    te.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_tr + n_va), idx.end());
  } else {
    if (d.groups.size() != n) throw SplitError("grouped split needs one group id per row");
    std::map<std::int64_t, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < n; ++i) members[d.groups[i]].push_back(i);
    if (members.size() < 3) throw SplitError("grouped split needs at least 3 groups");
    std::vector<std::int64_t> ids;
    for (const auto& [id, rows] : members) ids.push_back(id);
    std::shuffle(ids.begin(), ids.end(), rng);
    // Groups fill train, then validation, by row count; at least one group
    // is kept for each partition.
    const double target_tr = static_cast<double>(n) * train_frac;
    const double target_va = static_cast<double>(n) * (train_frac + val_frac);
    std::size_t k = 0, count = 0;
    const std::size_t g = ids.size();
    auto take = [&](std::vector<std::size_t>& part, double target, std::size_t reserve) {
      do {
        const auto& rows = members[ids[k++]];
        part.insert(part.end(), rows.begin(), rows.end());
        count += rows.size();
      } while (k + reserve < g && static_cast<double>(count) < target);
    };
    take(tr, target_tr, 2);
    take(va, target_va, 1);
    while (k < g) {
      const auto& rows = members[ids[k++]];
      te.insert(te.end(), rows.begin(), rows.end());
    }
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    std::sort(te.begin(), te.end());
  }
  return {subset(d, tr), subset(d, va), subset(d, te)};
}

// ---------------------------------------------------------------------------
// Standardization and noise.

struct Standardizer {
  Vector mean;
  Vector std;  // population std; constant features keep scale 1

  static Standardizer fit(const Matrix& X) {
    if (X.rows() < 1) throw ShapeError("cannot fit a standardizer on zero rows");
    Standardizer s;
    s.mean = X.colwise().mean().transpose();
    s.std.resize(X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double sd = std::sqrt((X.col(c).array() - s.mean[c]).square().mean());
      s.std[c] = sd > 0.0 ? sd : 1.0;
    }
    return s;
  }

  Matrix apply(const Matrix& X) const {
    if (X.cols() != mean.size()) throw ShapeError("standardizer width does not match");
    Matrix out(X.rows(), X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) out.col(c) = (X.col(c).array() - mean[c]) / std[c];
    return out;
  }
};

inline Matrix add_gaussian_noise(const Matrix& X, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw InvalidSpec("noise sigma must be >= 0");
  if (sigma == 0.0) return X;
  Rng rng(seed);
  Matrix out = X;
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += sigma * standard_normal(rng);
  return out;
}

// ---------------------------------------------------------------------------
// CSV: header row, one label column by name, remaining columns are features.
// Non-numeric feature cells are mean-imputed per column.

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  if (quoted) throw FormatError("unterminated quote in CSV line");
  out.push_back(cell);
  return out;
}

inline std::optional<double> parse_number(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return std::nullopt;
  const auto e = s.find_last_not_of(" \t");
  const std::string t = s.substr(b, e - b + 1);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

inline Dataset load_csv(std::istream& is, const std::string& label_column,
                        std::optional<Task> task = std::nullopt) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("CSV is empty");
  const auto header = detail::split_csv_line(line);
  std::size_t label = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == label_column) label = i;
  }
  if (label == header.size()) throw FormatError("label column '" + label_column + "' not found");
  const std::size_t p = header.size() - 1;

  std::vector<std::vector<double>> cells;
  std::vector<double> labels;
  std::size_t lineno = 1;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto row = detail::split_csv_line(line);
    if (row.size() != header.size()) {
      throw FormatError("CSV line " + std::to_string(lineno) + " has " + std::to_string(row.size()) +
                        " cells, header has " + std::to_string(header.size()));
    }
    const auto yv = detail::parse_number(row[label]);
    if (!yv) throw FormatError("CSV line " + std::to_string(lineno) + ": label is not numeric");
    labels.push_back(*yv);
    std::vector<double> x;
    x.reserve(p);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == label) continue;
      x.push_back(detail::parse_number(row[c]).value_or(nan));
    }
    cells.push_back(std::move(x));
  }
  if (cells.empty()) throw FormatError("CSV has no data rows");

  Dataset d;
  d.X.resize(static_cast<Eigen::Index>(cells.size()), static_cast<Eigen::Index>(p));
  for (std::size_t c = 0; c < p; ++c) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : cells) {
      if (!std::isnan(r[c])) {
        sum += r[c];
        ++count;
      }
    }
    if (count == 0) throw FormatError("feature column " + std::to_string(c) + " has no numeric values");
    const double mean = sum / static_cast<double>(count);
    for (std::size_t r = 0; r < cells.size(); ++r) {
      const double v = cells[r][c];
      d.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = std::isnan(v) ? mean : v;
    }
  }
  d.y = Eigen::Map<const Vector>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i != label) d.feature_names.push_back(header[i]);
  }
  if (task) {
    d.task = *task;
  } else {
    const bool binary = std::all_of(labels.begin(), labels.end(), [](double v) { return v == 0.0 || v == 1.0; });
    d.task = binary ? Task::binary : Task::regression;
  }
  return d;
}

inline Dataset load_csv(const std::string& path, const std::string& label_column,
                        std::optional<Task> task = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return load_csv(in, label_column, task);
}

inline void save_csv(std::ostream& os, const Dataset& d, const std::string& label_column = "y") {
  const auto names = d.feature_names.size() == d.features() ? d.feature_names : default_names(d.features());
  for (const auto& n : names) os << n << ',';
  os << label_column << '\n';
  char buf[32];
  for (Eigen::Index r = 0; r < d.X.rows(); ++r) {
    for (Eigen::Index c = 0; c < d.X.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", d.X(r, c));
      os << buf << ',';
    }
    std::snprintf(buf, sizeof buf, "%.17g", d.y[r]);
    os << buf << '\n';
  }
}

}  // namespace attripriors::data
