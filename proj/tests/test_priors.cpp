#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "attripriors/priors.hpp"

using namespace attripriors;
using namespace attripriors::priors;
using nn::Activation;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

FeatureGraph random_graph(std::size_t p, std::uint64_t seed, double density = 0.35) {
  Rng rng(seed);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i + 1; j < p; ++j) {
      if (uniform01(rng) < density) edges.push_back({i, j, 0.1 + uniform01(rng)});
    }
  }
  return FeatureGraph::from_edges(p, edges);
}

double tape_tv(const Matrix& phi, nn::Grid g, bool normalize) {
  Tape tape;
  NodeMatrix nodes(static_cast<std::size_t>(phi.rows()));
  for (Eigen::Index r = 0; r < phi.rows(); ++r)
    for (Eigen::Index c = 0; c < phi.cols(); ++c) nodes[r].push_back(tape.variable(phi(r, c)));
  return tape.value(tv_penalty(tape, nodes, g, normalize));
}

double tape_gini(const Vector& phi) {
  Tape tape;
  std::vector<NodeId> v;
  for (Eigen::Index i = 0; i < phi.size(); ++i) v.push_back(tape.variable(phi[i]));
  return tape.value(gini_penalty(tape, v));
}

}  // namespace

TEST(FeatureGraph, LaplacianAndValidation) {
  const FeatureGraph g = random_graph(7, 3);
  const Matrix l = g.laplacian();
  EXPECT_LE(l.rowwise().sum().cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(l, l.transpose());
  EXPECT_THROW(FeatureGraph::from_edges(3, {{0, 0, 1.0}}), InvalidSpec);
  EXPECT_THROW(FeatureGraph::from_edges(3, {{0, 3, 1.0}}), InvalidSpec);
  EXPECT_THROW(FeatureGraph::from_edges(3, {{0, 1, -1.0}}), InvalidSpec);
  FeatureGraph bad{Matrix::Zero(2, 2)};
  bad.adjacency(0, 1) = 1.0;
  EXPECT_THROW(bad.validate(), InvalidSpec);
}

TEST(FeatureGraph, EdgeListRoundTrip) {
  const FeatureGraph g = random_graph(9, 4);
  std::stringstream ss;
  write_edge_list(ss, g);
  const FeatureGraph back = read_edge_list(ss, 9);
  EXPECT_EQ(back.adjacency, g.adjacency);
  std::istringstream bad("0 1\n");
  EXPECT_THROW(read_edge_list(bad, 3), FormatError);
  std::istringstream oob("# comment\n0 5 1.0\n");
  EXPECT_THROW(read_edge_list(oob, 3), FormatError);
}

TEST(TotalVariation, Examples) {
  const nn::Grid g{2, 2};
  Matrix flat(1, 4);
  flat << 1, 1, 1, 1;
  EXPECT_EQ(tv_penalty(flat, g, false), 0.0);
  Matrix cols(1, 4);
  cols << 0, 1, 0, 1;  // [[0,1],[0,1]]
  EXPECT_EQ(tv_penalty(cols, g, false), 2.0);
  EXPECT_EQ(tape_tv(cols, g, false), 2.0);
  // Scale invariance holds up to the 1e-8 floor: sd is 0.5 here, so the floor
  // contributes at most 1e-8 / 0.5 relative.
  const double unit = tv_penalty(cols, g, true);
  EXPECT_NEAR(tv_penalty(Matrix(cols * 10.0), g, true), unit, 1e-9 * unit + 2e-8 * unit);
  EXPECT_NEAR(unit * (0.5 + kTvFloor), 2.0, 1e-15);
  EXPECT_THROW(tv_penalty(cols, std::nullopt, false), ShapeError);
  EXPECT_THROW(tv_penalty(cols, nn::Grid{2, 3}, false), ShapeError);
}

TEST(TotalVariation, NormalizedIsScaleInvariantPerSample) {
  const nn::Grid g{4, 5};
  const Matrix phi = random_matrix(6, 20, 8);
  Matrix scaled = phi;
  Rng rng(2);
  for (Eigen::Index r = 0; r < 6; ++r) scaled.row(r) *= 0.01 + 100.0 * uniform01(rng);
  const auto sd = [](const Matrix& row) { return std::sqrt((row.array() - row.mean()).square().mean()); };
  for (Eigen::Index r = 0; r < 6; ++r) {
    const double a = tv_penalty(phi.row(r), g, true);
    const double b = tv_penalty(scaled.row(r), g, true);
    const double floor_effect = kTvFloor / std::min(sd(phi.row(r)), sd(scaled.row(r)));
    EXPECT_NEAR(a, b, (1e-9 + floor_effect) * a);
    // With the floor divided back out the two agree to rounding.
    EXPECT_NEAR(a * (sd(phi.row(r)) + kTvFloor), b * (sd(scaled.row(r)) + kTvFloor) / (sd(scaled.row(r)) / sd(phi.row(r))),
                1e-9 * a);
  }
  EXPECT_NEAR(tape_tv(phi, g, true), tv_penalty(phi, g, true), 1e-12);
  EXPECT_NEAR(tape_tv(phi, g, false), tv_penalty(phi, g, false), 1e-12);
}

TEST(GraphPenalty, Examples) {
  const FeatureGraph two = FeatureGraph::from_edges(2, {{0, 1, 1.0}});
  EXPECT_EQ(graph_penalty(vec({3, 1}), two), 4.0);
  const FeatureGraph path = FeatureGraph::from_edges(3, {{0, 1, 1.0}, {1, 2, 1.0}});
  EXPECT_EQ(graph_penalty(vec({0, 1, 3}), path), 5.0);
  const FeatureGraph g = random_graph(6, 1);
  EXPECT_NEAR(graph_penalty(Vector::Constant(6, 2.5), g), 0.0, 1e-12);
  EXPECT_THROW(graph_penalty(vec({1, 2}), path), ShapeError);

  Tape tape;
  const std::vector<NodeId> v{tape.variable(0.0), tape.variable(1.0), tape.variable(3.0)};
  EXPECT_EQ(tape.value(graph_penalty(tape, v, path)), 5.0);
}

TEST(GraphPenalty, PositiveSemidefiniteAgainstEigendecomposition) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t p = 3 + seed % 6;
    const FeatureGraph g = random_graph(p, seed, 0.3);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.laplacian());
    const Vector phi = random_matrix(static_cast<Eigen::Index>(p), 1, 100 + seed).col(0);
    const Vector proj = es.eigenvectors().transpose() * phi;
    const double oracle = (es.eigenvalues().array() * proj.array().square()).sum();
    const double got = graph_penalty(phi, g);
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, oracle, 1e-10 * (1.0 + oracle));

    // Constant on each connected component -> zero; project onto the null space.
    Vector null = Vector::Zero(static_cast<Eigen::Index>(p));
    for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
      if (es.eigenvalues()[k] < 1e-9) null += es.eigenvectors().col(k) * proj[k];
    }
    EXPECT_NEAR(graph_penalty(null, g), 0.0, 1e-12);
    if ((phi - null).norm() > 1e-6) {
      EXPECT_GT(got, 0.0);
    }
  }
}

TEST(GiniPenalty, Examples) {
  EXPECT_NEAR(gini_penalty(vec({1, 0, 0, 0})), -1.5, 1e-15);
  EXPECT_EQ(gini_penalty(vec({2, 2, 2})), 0.0);
  EXPECT_NEAR(gini_penalty(vec({3, 1})), -0.5, 1e-15);
  EXPECT_EQ(gini_penalty(vec({0, 0, 0})), 0.0);
  EXPECT_THROW(gini_penalty(vec({1, -1})), InvalidAttribution);
  EXPECT_NEAR(tape_gini(vec({3, 1})), -0.5, 1e-15);
  EXPECT_EQ(tape_gini(vec({0, 0})), 0.0);
}

TEST(GiniPenalty, MatchesDoubleSumDefinition) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Vector phi = random_matrix(7, 1, seed).col(0).cwiseAbs();
    double pairs = 0.0;
    for (Eigen::Index i = 0; i < 7; ++i)
      for (Eigen::Index j = 0; j < 7; ++j) pairs += std::abs(phi[i] - phi[j]);
    const double want = -pairs / (7.0 * phi.sum());
    EXPECT_NEAR(gini_penalty(phi), want, 1e-14);
    EXPECT_NEAR(tape_gini(phi), want, 1e-14);
  }
}

TEST(GiniPenalty, SimplexExtremes) {
  double lo = 1.0, hi = -1.0;
  Vector arg_lo;
  for (int a = 0; a <= 100; ++a) {
    for (int b = 0; a + b <= 100; ++b) {
      const Vector phi = vec({a / 100.0, b / 100.0, (100 - a - b) / 100.0});
      const double v = gini_penalty(phi);
      if (v < lo) {
        lo = v;
        arg_lo = phi;
      }
      hi = std::max(hi, v);
    }
  }
  EXPECT_NEAR(lo, -4.0 / 3.0, 1e-12);
  EXPECT_EQ((arg_lo.array() == 1.0).count(), 1);
  EXPECT_LE(hi, 0.0);
  EXPECT_EQ(gini_penalty(Vector::Constant(3, 1.0 / 3.0)), 0.0);
}

TEST(GiniPenalty, PermutationInvariantExactly) {
  Vector phi = random_matrix(9, 1, 5).col(0).cwiseAbs();
  const double base = gini_penalty(phi);
  const double tbase = tape_gini(phi);
  std::vector<int> idx(9);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    std::shuffle(idx.begin(), idx.end(), rng);
    Vector perm(9);
    for (int i = 0; i < 9; ++i) perm[i] = phi[idx[i]];
    EXPECT_EQ(gini_penalty(perm), base);
    EXPECT_EQ(tape_gini(perm), tbase);
  }
}

TEST(RossMask, Examples) {
  // f = w^T x + b, L = (f - y)^2, dL/dx = 2 (f - y) w.
  nn::Model m = nn::init_model(nn::mlp_spec(2, {}, Activation::relu, 1, Activation::identity), 0);
  m.layers[0].weights << 1.5, -2.0;
  m.layers[0].biases << 0.5;
  Matrix X(1, 2);
  X << 1.0, 2.0;
  Vector y(1);
  y << 1.0;
  const double resid = 1.5 - 4.0 + 0.5 - 1.0;  // -3
  const auto penalty = [&](const Matrix& mask) {
    Tape tape;
    const auto bm = nn::bind(tape, m);
    return tape.value(ross_grad_mask_penalty(tape, bm, X, y, mask, {nn::LossKind::mse}));
  };
  EXPECT_EQ(penalty(Matrix::Zero(1, 2)), 0.0);
  Matrix first(1, 2);
  first << 1.0, 0.0;
  EXPECT_NEAR(penalty(first), std::pow(2 * resid * 1.5, 2), 1e-12);
  const double full = std::pow(2 * resid * 1.5, 2) + std::pow(2 * resid * -2.0, 2);
  EXPECT_NEAR(penalty(Matrix::Ones(1, 2)), full, 1e-12);
  EXPECT_THROW(penalty(Matrix::Ones(2, 2)), ShapeError);
}

TEST(WeightPenalty, Examples) {
  nn::Model m = nn::init_model(nn::mlp_spec(2, {2}, Activation::relu, 1, Activation::identity), 0);
  for (auto& l : m.layers) {
    l.weights.setZero();
    l.biases.setZero();
  }
  for (auto k : {WeightKind::l1_all, WeightKind::l1_first, WeightKind::l2_all, WeightKind::l2_first,
                 WeightKind::sgl_all, WeightKind::sgl_first}) {
    EXPECT_EQ(weight_penalty(m, k), 0.0) << to_string(k);
  }
  m.layers[0].weights << 3, 0, 4, 0;
  EXPECT_NEAR(weight_penalty(m, WeightKind::sgl_first), 12.0, 1e-10);
  m.layers[0].biases << 0.5, -1.0;
  EXPECT_NEAR(weight_penalty(m, WeightKind::sgl_first), 13.5, 1e-10);

  nn::Model lin = nn::init_model(nn::mlp_spec(2, {}, Activation::relu, 1, Activation::identity), 0);
  lin.layers[0].weights << 1, 2;
  EXPECT_EQ(weight_penalty(lin, WeightKind::l2_all), 5.0);
  EXPECT_EQ(weight_penalty(lin, WeightKind::l1_all), 3.0);
  const FeatureGraph g = FeatureGraph::from_edges(2, {{0, 1, 2.0}});
  EXPECT_EQ(weight_penalty(lin, WeightKind::graph_weights, &g), 2.0);
  EXPECT_THROW(weight_penalty(m, WeightKind::graph_weights, &g), InvalidSpec);
}

TEST(WeightPenalty, TapeMatchesNumeric) {
  const nn::Model m = nn::init_model(nn::mlp_spec(5, {4, 3}, Activation::relu, 1, Activation::identity), 9);
  for (auto k : {WeightKind::l1_all, WeightKind::l1_first, WeightKind::l2_all, WeightKind::l2_first,
                 WeightKind::sgl_all, WeightKind::sgl_first}) {
    Tape tape;
    const auto bm = nn::bind(tape, m);
    EXPECT_NEAR(tape.value(weight_penalty(tape, bm, k)), weight_penalty(m, k), 1e-12) << to_string(k);
  }
}

TEST(ComposeObjective, Examples) {
  EXPECT_EQ(compose_objective(1.0, {}), 1.0);
  EXPECT_EQ(compose_objective(1.0, {{0.0, 7.0}}), 1.0);
  EXPECT_EQ(compose_objective(1.0, {{0.5, 2.0}}), 2.0);
  Tape tape;
  const NodeId l = tape.variable(1.0);
  EXPECT_EQ(compose_objective(tape, l, {}), l);
  EXPECT_EQ(tape.value(compose_objective(tape, l, {{0.5, tape.variable(2.0)}})), 2.0);
  EXPECT_THROW(compose_objective(1.0, {{-1.0, 1.0}}), InvalidSpec);
}

TEST(PriorSpec, NamesAndValidation) {
  for (const char* n : {"pixel-tv", "graph", "sparse-gini", "mixed-l1-gini", "ross-grad-mask", "l1-attrib",
                        "l2-attrib", "gini-gradients", "l1-gradients", "l1-all", "sgl-first", "graph-weights"}) {
    EXPECT_EQ(prior_from_string(n).name(), n);
  }
  EXPECT_THROW(prior_from_string("bogus"), InvalidSpec);
  PriorSpec g = prior_from_string("graph");
  EXPECT_THROW(g.validate(), InvalidSpec);
  PriorSpec r = prior_from_string("ross-grad-mask");
  EXPECT_THROW(r.validate(), InvalidSpec);
  PriorSpec neg = prior_from_string("sparse-gini");
  neg.lambda = -1.0;
  EXPECT_THROW(neg.validate(), InvalidSpec);
  EXPECT_EQ(prior_from_string("gini-gradients").attribution_source(), Source::gradients);
  EXPECT_FALSE(prior_from_string("l2-first").attribution_source().has_value());
}

// ---------------------------------------------------------------------------
// End-to-end parameter gradients: penalty of the attributions of a model.

namespace {

struct Pipeline {
  PriorSpec spec;
  std::optional<nn::Grid> grid;
};

NodeId build_penalty(Tape& tape, const nn::BoundModel& bm, const Matrix& X, const Vector& y, const Pipeline& pl) {
  const PriorSpec& spec = pl.spec;
  if (spec.kind == PriorKind::weight) return weight_penalty(tape, bm, spec.weight_kind, spec.graph ? &*spec.graph : nullptr);
  if (spec.kind == PriorKind::ross_grad_mask) return ross_grad_mask_penalty(tape, bm, X, y, *spec.mask, {nn::LossKind::mse});
  Rng rng(42);
  const NodeMatrix phi = *spec.attribution_source() == Source::expected_gradients
                             ? attrib::expected_gradients_train_batch(tape, bm, X, 2, rng)
                             : attrib::gradients_train_batch(tape, bm, X);
  return attribution_penalty(tape, spec, phi, pl.grid);
}

double pipeline_fd_error(const nn::Model& m, const Matrix& X, const Vector& y, const Pipeline& pl) {
  Tape tape;
  const auto bm = nn::bind(tape, m);
  const NodeId pen = build_penalty(tape, bm, X, y, pl);
  const auto grad = tape.values(tape.gradient(pen, bm.all));
  const auto theta = nn::flatten(m);
  const auto value_at = [&](const std::vector<double>& t) {
    nn::Model mm = m;
    nn::unflatten(mm, t);
    Tape tp;
    const auto b = nn::bind(tp, mm);
    return tp.value(build_penalty(tp, b, X, y, pl));
  };
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    const double fd = (value_at(tp) - value_at(tm)) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max({1.0, std::abs(fd), std::abs(grad[i])}));
  }
  return worst;
}

}  // namespace

TEST(Pipeline, PenaltyParameterGradientsMatchFiniteDifferences) {
  const nn::Model m = nn::init_model(nn::mlp_spec(8, {6}, Activation::tanh, 1, Activation::identity), 17);
  const Matrix X = random_matrix(5, 8, 3);
  const Vector y = random_matrix(5, 1, 4).col(0);
  std::vector<Pipeline> cases;
  for (const char* n : {"pixel-tv", "graph", "sparse-gini", "mixed-l1-gini", "ross-grad-mask", "l1-attrib",
                        "l2-attrib", "gini-gradients", "l1-gradients", "l1-all", "l2-all", "sgl-all", "sgl-first"}) {
    Pipeline pl{prior_from_string(n), nn::Grid{2, 4}};
    pl.spec.graph = random_graph(8, 6, 0.4);
    pl.spec.mask = Matrix::Ones(5, 8);
    pl.spec.mask->col(3).setZero();
    cases.push_back(pl);
  }
  Pipeline unnorm{prior_from_string("pixel-tv"), nn::Grid{2, 4}};
  unnorm.spec.normalize = false;
  cases.push_back(unnorm);
  for (const auto& pl : cases) {
    EXPECT_LE(pipeline_fd_error(m, X, y, pl), 1e-3) << pl.spec.name();
  }

  // Same pipeline through ReLU hidden units.
  const nn::Model r = nn::init_model(nn::mlp_spec(8, {6}, Activation::relu, 1, Activation::sigmoid), 5);
  for (const char* n : {"sparse-gini", "graph", "pixel-tv"}) {
    Pipeline pl{prior_from_string(n), nn::Grid{2, 4}};
    pl.spec.graph = random_graph(8, 6, 0.4);
    EXPECT_LE(pipeline_fd_error(r, X, y, pl), 1e-3) << n;
  }
}

TEST(Pipeline, GraphWeightsOnLinearModel) {
  const nn::Model lin = nn::init_model(nn::mlp_spec(8, {}, Activation::relu, 1, Activation::identity), 2);
  Pipeline pl{prior_from_string("graph-weights"), std::nullopt};
  pl.spec.graph = random_graph(8, 7, 0.4);
  EXPECT_LE(pipeline_fd_error(lin, random_matrix(4, 8, 1), Vector::Zero(4), pl), 1e-6);
}
