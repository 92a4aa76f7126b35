#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "attripriors/attrib.hpp"

using namespace attripriors;
using namespace attripriors::attrib;
using nn::Activation;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

nn::Model linear_model(const std::vector<double>& w, double bias = 0.0) {
  nn::Model m = nn::init_model(nn::mlp_spec(w.size(), {}, Activation::relu, 1, Activation::identity), 0);
  for (std::size_t i = 0; i < w.size(); ++i) m.layers[0].weights(0, static_cast<Eigen::Index>(i)) = w[i];
  m.layers[0].biases[0] = bias;
  return m;
}

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

double f_scalar(const nn::Model& m, const Vector& x) { return nn::evaluate(m, x.transpose())(0, 0); }

const GradientFn square_grad = [](const Matrix& pts) { return Matrix(2.0 * pts); };

}  // namespace

TEST(GradAttrib, Examples) {
  const nn::Model m = linear_model({3.0, -2.0});
  const Matrix phi = grad_attrib(m, random_matrix(5, 2, 1)).values;
  for (Eigen::Index r = 0; r < 5; ++r) {
    EXPECT_EQ(phi(r, 0), 3.0);
    EXPECT_EQ(phi(r, 1), -2.0);
  }
  nn::Model d = nn::init_model(nn::mlp_spec(3, {4}, Activation::tanh, 1, Activation::identity), 2);
  d.layers[0].weights.col(1).setZero();
  const Matrix pd = grad_attrib(d, random_matrix(6, 3, 3)).values;
  EXPECT_EQ(pd.col(1).cwiseAbs().maxCoeff(), 0.0);
  Vector two(1);
  two << 2.0;
  EXPECT_EQ(square_grad(two.transpose())(0, 0), 4.0);
  EXPECT_THROW(grad_attrib(m, Matrix::Zero(2, 3)), ShapeError);
}

TEST(IntegratedGradients, Examples) {
  const nn::Model m = linear_model({1.5, -0.5, 2.0});
  const Vector x = random_matrix(3, 1, 4).col(0);
  const Vector base = random_matrix(3, 1, 5).col(0);
  for (std::size_t steps : {1u, 7u, 50u}) {
    const Vector phi = integrated_gradients(m, x, base, steps);
    EXPECT_NEAR(phi[0], 1.5 * (x[0] - base[0]), 1e-14);
    EXPECT_NEAR(phi[1], -0.5 * (x[1] - base[1]), 1e-14);
    EXPECT_NEAR(phi[2], 2.0 * (x[2] - base[2]), 1e-14);
  }
  Vector two(1), zero(1);
  two << 2.0;
  zero << 0.0;
  EXPECT_NEAR(integrated_gradients(square_grad, two, zero, 1000)[0], 4.0, 1e-12);
  EXPECT_EQ(integrated_gradients(m, x, x, 10).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(integrated_gradients(m, x, Vector::Zero(2), 10), ShapeError);
  EXPECT_THROW(integrated_gradients(m, x, base, 0), InvalidSpec);
}

TEST(ExpectedGradients, Examples) {
  const nn::Model m = linear_model({2.0, -1.0});
  // Symmetric references with exact mean (0, 0).
  ReferenceSet refs{rows({{1, 1}, {-1, -1}, {1, -1}, {-1, 1}})};
  Vector x(2);
  x << 1.0, 1.0;
  const Vector phi = expected_gradients(m, x, refs, 20000, 3);
  EXPECT_NEAR(phi[0], 2.0, 0.05);
  EXPECT_NEAR(phi[1], -1.0, 0.05);

  ReferenceSet self{x.transpose()};
  EXPECT_EQ(expected_gradients(m, x, self, 10, 1).cwiseAbs().maxCoeff(), 0.0);

  Vector two(1);
  two << 2.0;
  ReferenceSet origin{Matrix::Zero(1, 1)};
  const double eg = expected_gradients(square_grad, two, origin, 200000, 9)[0];
  const double ig = integrated_gradients(square_grad, two, Vector::Zero(1), 4096)[0];
  EXPECT_NEAR(eg, ig, 0.02);

  EXPECT_EQ(expected_gradients(m, x, refs, 50, 11), expected_gradients(m, x, refs, 50, 11));
  EXPECT_THROW(expected_gradients(m, x, ReferenceSet{Matrix(0, 2)}, 5, 1), EmptyReferences);
  EXPECT_THROW(expected_gradients(m, x, refs, 0, 1), InvalidK);
}

TEST(TrainBatch, CyclicShiftReferences) {
  // With a linear model the gradient is constant, so row j's attribution is
  // w_i times the mean difference to its k successor rows.
  const std::vector<double> w{0.5, -2.0, 1.25};
  const nn::Model m = linear_model(w, 0.3);
  const Matrix batch = random_matrix(4, 3, 8);
  Rng rng(5);
  Tape tape;
  const auto bm = nn::bind(tape, m);
  const Matrix phi = values(tape, expected_gradients_train_batch(tape, bm, batch, 3, rng));
  for (Eigen::Index j = 0; j < 4; ++j) {
    for (Eigen::Index i = 0; i < 3; ++i) {
      double others = 0.0;
      for (Eigen::Index r = 0; r < 4; ++r) {
        if (r != j) others += batch(r, i);
      }
      EXPECT_NEAR(phi(j, i), w[i] * (batch(j, i) - others / 3.0), 1e-12);
    }
  }

  const Matrix two = random_matrix(2, 3, 9);
  Tape t2;
  const auto b2 = nn::bind(t2, m);
  const Matrix p2 = values(t2, expected_gradients_train_batch(t2, b2, two, 1, rng));
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(p2(0, i), w[i] * (two(0, i) - two(1, i)), 1e-14);
    EXPECT_NEAR(p2(1, i), w[i] * (two(1, i) - two(0, i)), 1e-14);
  }
}

TEST(TrainBatch, IdenticalRowsAndInvalidK) {
  const nn::Model m = nn::init_model(nn::mlp_spec(3, {5}, Activation::relu, 1, Activation::sigmoid), 1);
  Matrix same(4, 3);
  for (Eigen::Index r = 0; r < 4; ++r) same.row(r) << 0.2, -1.0, 3.0;
  Rng rng(1);
  Tape tape;
  const auto bm = nn::bind(tape, m);
  EXPECT_EQ(values(tape, expected_gradients_train_batch(tape, bm, same, 2, rng)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(expected_gradients_train_batch(tape, bm, same, 4, rng), InvalidK);
  EXPECT_THROW(expected_gradients_train_batch(tape, bm, same, 0, rng), InvalidK);
}

TEST(TrainBatch, MatchesNumericPathAtSameDraws) {
  // Replaying the estimator's draws through the numeric gradient path.
  const nn::Model m = nn::init_model(nn::mlp_spec(4, {6}, Activation::tanh, 1, Activation::identity), 3);
  const Matrix batch = random_matrix(5, 4, 10);
  const std::size_t k = 2;
  Rng rng(77);
  Tape tape;
  const auto bm = nn::bind(tape, m);
  const Matrix phi = values(tape, expected_gradients_train_batch(tape, bm, batch, k, rng));
  Rng replay(77);
  for (Eigen::Index j = 0; j < 5; ++j) {
    Vector acc = Vector::Zero(4);
    for (std::size_t s = 1; s <= k; ++s) {
      const Eigen::Index ref = (j + static_cast<Eigen::Index>(s)) % 5;
      const double a = uniform01(replay);
      const Matrix pt = batch.row(ref) + a * (batch.row(j) - batch.row(ref));
      acc += (batch.row(j) - batch.row(ref)).transpose().cwiseProduct(nn::input_gradients(m, pt, 0).row(0).transpose());
    }
    acc /= static_cast<double>(k);
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(phi(j, i), acc[i], 1e-13);
  }
}

TEST(TrainBatch, GradientsSource) {
  const nn::Model m = nn::init_model(nn::mlp_spec(4, {6}, Activation::relu, 1, Activation::sigmoid), 3);
  const Matrix batch = random_matrix(5, 4, 10);
  Tape tape;
  const auto bm = nn::bind(tape, m);
  const Matrix phi = values(tape, gradients_train_batch(tape, bm, batch));
  EXPECT_LT((phi - grad_attrib(m, batch).values).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(GlobalMeanAbs, Examples) {
  const Vector g = global_mean_abs(rows({{1, -1}, {3, 1}}));
  EXPECT_EQ(g[0], 2.0);
  EXPECT_EQ(g[1], 1.0);
  EXPECT_EQ(global_mean_abs(Matrix::Zero(3, 4)).cwiseAbs().maxCoeff(), 0.0);
  const Vector single = global_mean_abs(rows({{-2.5, 0.5, 0.0}}));
  EXPECT_EQ(single, (Vector(3) << 2.5, 0.5, 0.0).finished());
  EXPECT_THROW(global_mean_abs(Matrix(0, 3)), ShapeError);

  Tape tape;
  NodeMatrix phi(2, std::vector<NodeId>(2));
  const Matrix v = rows({{1, -1}, {3, 1}});
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) phi[r][c] = tape.variable(v(r, c));
  const auto gt = global_mean_abs(tape, phi);
  EXPECT_EQ(tape.value(gt[0]), 2.0);
  EXPECT_EQ(tape.value(gt[1]), 1.0);
  const auto d = tape.gradient(gt[1], std::vector<NodeId>{phi[0][1], phi[1][1]});
  EXPECT_EQ(tape.value(d[0]), -0.5);
  EXPECT_EQ(tape.value(d[1]), 0.5);
}

TEST(RandomAttrib, Examples) {
  EXPECT_EQ(random_attrib(4, 5, 1).values, random_attrib(4, 5, 1).values);
  EXPECT_NE(random_attrib(4, 5, 1).values, random_attrib(4, 5, 2).values);
  EXPECT_NEAR(random_attrib(1000, 100, 3).values.mean(), 0.0, 1e-2);
}

TEST(ConvergenceDiagnostic, Examples) {
  const nn::Model m = nn::init_model(nn::mlp_spec(5, {8}, Activation::relu, 1, Activation::identity), 4);
  const Matrix X = random_matrix(6, 5, 1);
  const ReferenceSet refs{random_matrix(30, 5, 2)};
  const auto same = convergence_diagnostic(m, X, refs, {40}, 40, 17);
  EXPECT_EQ(same[0], 0.0);
  EXPECT_THROW(convergence_diagnostic(m, X, refs, {50}, 40, 17), InvalidK);

  // Linear model: per-entry error is w_i times the sampling error of the
  // reference mean; bound it at four standard errors of each estimate.
  const std::vector<double> w{1.0, -0.5, 2.0, 0.25, -1.5};
  const nn::Model lin = linear_model(w);
  const std::size_t k = 100, base_k = 1600;
  const auto diff = convergence_diagnostic(lin, X, refs, {k}, base_k, 5);
  double bound = 0.0;
  for (Eigen::Index i = 0; i < 5; ++i) {
    const double sd = std::sqrt((refs.rows.col(i).array() - refs.rows.col(i).mean()).square().mean());
    bound += std::abs(w[i]) * sd * 4.0 * (1.0 / std::sqrt(double(k)) + 1.0 / std::sqrt(double(base_k)));
  }
  EXPECT_LE(diff[0], bound / 5.0);
}

TEST(ConvergenceDiagnostic, ErrorShrinksLikeInverseRootK) {
  const nn::Model m = nn::init_model(nn::mlp_spec(4, {10}, Activation::tanh, 1, Activation::identity), 6);
  const Matrix X = random_matrix(4, 4, 3);
  const ReferenceSet refs{random_matrix(25, 4, 4)};
  const Matrix exact = expected_gradients_full(m, X, refs, 512);
  double ratio = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto d = convergence_diagnostic(m, X, refs, {100, 200}, exact, 1000 + seed);
    ratio += d[1] / d[0];
  }
  ratio /= 20.0;
  EXPECT_NEAR(ratio, 1.0 / std::sqrt(2.0), 0.1);
}

// ---------------------------------------------------------------------------
// Axioms.

TEST(Axioms, CompletenessIntegratedGradients) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const nn::Model m = nn::init_model(nn::mlp_spec(6, {12}, Activation::relu, 1, Activation::identity), seed);
    const Vector x = random_matrix(6, 1, 100 + seed).col(0);
    const Vector base = random_matrix(6, 1, 200 + seed).col(0);
    const double delta = f_scalar(m, x) - f_scalar(m, base);
    const Vector phi = integrated_gradients(m, x, base, 256);
    EXPECT_LE(std::abs(phi.sum() - delta), 1e-3 * (1.0 + std::abs(delta))) << seed;
  }
}

TEST(Axioms, CompletenessExpectedGradients) {
  const nn::Model m = nn::init_model(nn::mlp_spec(5, {10}, Activation::relu, 1, Activation::identity), 12);
  const ReferenceSet refs{random_matrix(40, 5, 13)};
  const double ref_mean = nn::evaluate(m, refs.rows).mean();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Vector x = random_matrix(5, 1, 300 + seed).col(0);
    const double fx = f_scalar(m, x);
    const Vector phi = expected_gradients(m, x, refs, 5000, seed);
    EXPECT_LE(std::abs(phi.sum() - (fx - ref_mean)), 0.05 * (1.0 + std::abs(fx))) << seed;
  }
}

TEST(Axioms, Sensitivity) {
  nn::Model m = nn::init_model(nn::mlp_spec(4, {7, 3}, Activation::relu, 1, Activation::sigmoid), 8);
  m.layers[0].weights.col(2).setZero();
  const Matrix X = random_matrix(5, 4, 1);
  const ReferenceSet refs{random_matrix(10, 4, 2)};
  EXPECT_EQ(grad_attrib(m, X).values.col(2).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(integrated_gradients(m, X, refs.rows.row(0).transpose(), 32).values.col(2).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(expected_gradients(m, X, refs, 64, 3).values.col(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Axioms, Linearity) {
  // f3 = a*f1 + b*f2 built as one network with block-diagonal hidden layer.
  const double a = 1.7, b = -0.6;
  const nn::Model f1 = nn::init_model(nn::mlp_spec(3, {4}, Activation::tanh, 1, Activation::identity), 1);
  const nn::Model f2 = nn::init_model(nn::mlp_spec(3, {5}, Activation::tanh, 1, Activation::identity), 2);
  nn::Model f3 = nn::init_model(nn::mlp_spec(3, {9}, Activation::tanh, 1, Activation::identity), 3);
  f3.layers[0].weights << f1.layers[0].weights, f2.layers[0].weights;
  f3.layers[0].biases << f1.layers[0].biases, f2.layers[0].biases;
  f3.layers[1].weights << a * f1.layers[1].weights, b * f2.layers[1].weights;
  f3.layers[1].biases[0] = a * f1.layers[1].biases[0] + b * f2.layers[1].biases[0];

  const Matrix X = random_matrix(4, 3, 5);
  const ReferenceSet refs{random_matrix(10, 3, 6)};
  const Matrix eg = expected_gradients(f3, X, refs, 30, 7).values;
  const Matrix combo = a * expected_gradients(f1, X, refs, 30, 7).values + b * expected_gradients(f2, X, refs, 30, 7).values;
  EXPECT_LT((eg - combo).cwiseAbs().maxCoeff(), 1e-10);
  const Vector base = refs.rows.row(0).transpose();
  const Matrix ig = integrated_gradients(f3, X, base, 20).values;
  const Matrix igc = a * integrated_gradients(f1, X, base, 20).values + b * integrated_gradients(f2, X, base, 20).values;
  EXPECT_LT((ig - igc).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Axioms, Symmetry) {
  // f(x) = g(x1 + x2) with x1 = x2 and references symmetric in (x1, x2).
  nn::Model m = nn::init_model(nn::mlp_spec(3, {6}, Activation::tanh, 1, Activation::identity), 4);
  m.layers[0].weights.col(1) = m.layers[0].weights.col(0);
  Matrix refs = random_matrix(12, 3, 9);
  refs.col(1) = refs.col(0);
  Matrix X = random_matrix(5, 3, 10);
  X.col(1) = X.col(0);
  const Matrix eg = expected_gradients(m, X, ReferenceSet{refs}, 40, 2).values;
  for (Eigen::Index r = 0; r < X.rows(); ++r) EXPECT_EQ(eg(r, 0), eg(r, 1));
}

TEST(Axioms, ImplementationInvariance) {
  // y = w^T x as one layer, and as W2 * (W1 x) with identity activations.
  const nn::Model one = linear_model({1.0, -0.75, 0.5}, 0.25);
  nn::Model two = nn::init_model(nn::mlp_spec(3, {2}, Activation::identity, 1, Activation::identity), 0);
  two.layers[0].weights << 1.0, 0.0, 0.5, 0.0, -0.75, 0.0;
  two.layers[0].biases << 0.25, 0.0;
  two.layers[1].weights << 1.0, 1.0;
  two.layers[1].biases << 0.0;
  const Matrix X = random_matrix(6, 3, 1);
  const ReferenceSet refs{random_matrix(8, 3, 2)};
  EXPECT_LT((expected_gradients(one, X, refs, 25, 3).values - expected_gradients(two, X, refs, 25, 3).values)
                .cwiseAbs()
                .maxCoeff(),
            1e-10);
  EXPECT_LT((grad_attrib(one, X).values - grad_attrib(two, X).values).cwiseAbs().maxCoeff(), 1e-10);
  const Vector base = refs.rows.row(1).transpose();
  EXPECT_LT((integrated_gradients(one, X, base, 9).values - integrated_gradients(two, X, base, 9).values)
                .cwiseAbs()
                .maxCoeff(),
            1e-10);
}

TEST(Export, CsvLayout) {
  std::ostringstream os;
  write_csv(os, rows({{1, -0.5}, {0.1, 2}}));
  EXPECT_EQ(os.str(), "sample_index,feature_0,feature_1\n0,1,-0.5\n1,0.10000000000000001,2\n");
  std::ostringstream g;
  write_grid_csv(g, rows({{1, 2, 3, 4, 5, 6}}), 0, nn::Grid{2, 3});
  EXPECT_EQ(g.str(), "1,2,3\n4,5,6\n");
  EXPECT_THROW(write_grid_csv(g, rows({{1, 2, 3}}), 0, nn::Grid{2, 2}), ShapeError);
}
