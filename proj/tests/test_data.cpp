#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "attripriors/data.hpp"

using namespace attripriors;
using namespace attripriors::data;

namespace {

double correlation(const Matrix& X, Eigen::Index a, Eigen::Index b) {
  const Vector xa = X.col(a).array() - X.col(a).mean();
  const Vector xb = X.col(b).array() - X.col(b).mean();
  return xa.dot(xb) / std::sqrt(xa.squaredNorm() * xb.squaredNorm());
}

}  // namespace

TEST(IndependentLinear, MomentsAndDeterminism) {
  const Dataset d = gen_independent_linear_60(100000, 1);
  ASSERT_EQ(d.X.cols(), 60);
  for (Eigen::Index c = 0; c < 60; ++c) EXPECT_LE(std::abs(d.X.col(c).mean()), 0.02);
  double worst = 0.0;
  for (Eigen::Index a = 0; a < 60; ++a)
    for (Eigen::Index b = a + 1; b < 60; ++b) worst = std::max(worst, std::abs(correlation(d.X, a, b)));
  EXPECT_LE(worst, 0.02);
  const Dataset e = gen_independent_linear_60(50, 7);
  EXPECT_EQ(e.X, gen_independent_linear_60(50, 7).X);
  EXPECT_EQ(e.y, gen_independent_linear_60(50, 7).y);
  EXPECT_NE(e.X, gen_independent_linear_60(50, 8).X);
}

TEST(IndependentLinear, LabelsFollowSharedCoefficients) {
  const Dataset a = gen_independent_linear_60(2000, 1);
  const Vector beta = benchmark_beta(60);
  const Vector resid = a.y - a.X * beta;
  const double sd = std::sqrt(resid.squaredNorm() / 2000.0);
  EXPECT_NEAR(sd, kLabelNoise, 0.01);
}

TEST(CorrelatedGroups, WithinAndAcrossTriples) {
  const Dataset d = gen_correlated_groups_60(100000, 2);
  ASSERT_EQ(d.X.rows(), 100000);
  ASSERT_EQ(d.X.cols(), 60);
  for (Eigen::Index g = 0; g < 20; ++g) {
    EXPECT_NEAR(correlation(d.X, 3 * g, 3 * g + 1), 0.99, 0.01);
    EXPECT_NEAR(correlation(d.X, 3 * g + 1, 3 * g + 2), 0.99, 0.01);
    EXPECT_NEAR(correlation(d.X, 3 * g, 3 * g + 2), 0.99, 0.01);
  }
  for (Eigen::Index g = 0; g + 1 < 20; ++g) EXPECT_LE(std::abs(correlation(d.X, 3 * g, 3 * g + 3)), 0.02);
  EXPECT_EQ(gen_correlated_groups_60(30, 4).X, gen_correlated_groups_60(30, 4).X);
}

TEST(CorrelatedGroups, BlockCovarianceIsPositiveDefinite) {
  Eigen::LLT<Eigen::MatrixXd> llt(correlated_block());
  EXPECT_EQ(llt.info(), Eigen::Success);
  // Observed correlation in population: c / (1 + noise^2).
  EXPECT_NEAR(correlated_block()(0, 1) / (1.0 + kFeatureNoise * kFeatureNoise), 0.99, 1e-15);
}

TEST(ImageTask, LinearlySeparableWithoutNoise) {
  const Dataset d = gen_image_task(1200, 14, 14, 0.0, 3);
  ASSERT_TRUE(d.grid.has_value());
  EXPECT_EQ(d.grid->h * d.grid->w, 196u);
  // Linear probe oracle: ridge least squares onto +/-1 labels, fit on 1000
  // rows and scored on the remaining 200.
  const Matrix Xtr = d.X.topRows(1000), Xte = d.X.bottomRows(200);
  Eigen::MatrixXd A(1000, 197);
  A << Eigen::MatrixXd(Xtr), Eigen::VectorXd::Ones(1000);
  const Eigen::VectorXd t = 2.0 * d.y.head(1000).array() - 1.0;
  const Eigen::MatrixXd gram = A.transpose() * A + 1e-3 * Eigen::MatrixXd::Identity(197, 197);
  const Eigen::VectorXd w = gram.ldlt().solve(A.transpose() * t);
  int correct = 0;
  for (Eigen::Index r = 0; r < 200; ++r) {
    const double s = Xte.row(r).dot(w.head(196)) + w[196];
    correct += (s > 0) == (d.y[1000 + r] == 1.0);
  }
  EXPECT_GE(correct / 200.0, 0.99);
}

TEST(ImageTask, BalanceAndDeterminism) {
  const Dataset d = gen_image_task(1000, 14, 14, 0.5, 4);
  EXPECT_NEAR(d.y.mean(), 0.5, 0.05);
  EXPECT_EQ(d.task, Task::binary);
  EXPECT_EQ(d.X, gen_image_task(1000, 14, 14, 0.5, 4).X);
  EXPECT_THROW(gen_image_task(10, 3, 14, 0.0, 1), InvalidSpec);
}

TEST(GraphTask, CoefficientsAreSmoothOverTheGraph) {
  const GraphTask t = gen_graph_task(200, 64, {}, 5);
  t.graph.validate();
  const Matrix l = t.graph.laplacian();
  const double smooth = t.beta.dot(l * t.beta);
  Rng rng(9);
  std::vector<double> permuted;
  std::vector<Eigen::Index> idx(64);
  std::iota(idx.begin(), idx.end(), 0);
  for (int k = 0; k < 1000; ++k) {
    std::shuffle(idx.begin(), idx.end(), rng);
    Vector b(64);
    for (Eigen::Index i = 0; i < 64; ++i) b[i] = t.beta[idx[i]];
    permuted.push_back(b.dot(l * b));
  }
  std::sort(permuted.begin(), permuted.end());
  EXPECT_LT(smooth, permuted[100]);
  EXPECT_EQ(t.data.X, gen_graph_task(200, 64, {}, 5).data.X);
  EXPECT_EQ(t.beta, gen_graph_task(200, 64, {}, 5).beta);
  EXPECT_THROW(gen_graph_task(10, 3, {}, 1), InvalidSpec);
}

TEST(RandomizeGraph, PreservesCountAndWeights) {
  const GraphTask t = gen_graph_task(10, 30, {}, 6);
  const auto r = randomize_graph(t.graph, 11);
  r.validate();
  EXPECT_EQ(r.adjacency, r.adjacency.transpose());
  const auto a = t.graph.edges(), b = r.edges();
  ASSERT_EQ(a.size(), b.size());
  std::vector<double> wa, wb;
  for (const auto& e : a) wa.push_back(e.weight);
  for (const auto& e : b) wb.push_back(e.weight);
  std::sort(wa.begin(), wa.end());
  std::sort(wb.begin(), wb.end());
  EXPECT_EQ(wa, wb);
  EXPECT_EQ(std::accumulate(wa.begin(), wa.end(), 0.0), std::accumulate(wb.begin(), wb.end(), 0.0));
  EXPECT_NE(r.adjacency, t.graph.adjacency);
  EXPECT_EQ(randomize_graph(t.graph, 11).adjacency, r.adjacency);
}

TEST(Split, SizesDeterminismAndGroups) {
  Dataset d = gen_independent_linear_60(1000, 1);
  const Splits s = split(d, 0.8, 0.1, false, 3);
  EXPECT_EQ(s.train.rows(), 800u);
  EXPECT_EQ(s.val.rows(), 100u);
  EXPECT_EQ(s.test.rows(), 100u);
  EXPECT_EQ(s.train.X, split(d, 0.8, 0.1, false, 3).train.X);

  for (std::size_t i = 0; i < d.rows(); ++i) d.groups.push_back(static_cast<std::int64_t>(i / 7));
  const Splits g = split(d, 0.6, 0.2, true, 4);
  std::set<std::int64_t> a(g.train.groups.begin(), g.train.groups.end());
  std::set<std::int64_t> b(g.val.groups.begin(), g.val.groups.end());
  std::set<std::int64_t> c(g.test.groups.begin(), g.test.groups.end());
  for (auto id : a) EXPECT_FALSE(b.count(id) || c.count(id));
  for (auto id : b) EXPECT_FALSE(c.count(id));
  EXPECT_EQ(g.train.rows() + g.val.rows() + g.test.rows(), 1000u);
  EXPECT_FALSE(g.val.rows() == 0 || g.test.rows() == 0);

  Dataset few = subset(d, {0, 1, 7, 8});
  EXPECT_THROW(split(few, 0.5, 0.2, true, 1), SplitError);
  EXPECT_THROW(split(d, 0.9, 0.2, false, 1), SplitError);
}

TEST(Standardizer, FitApply) {
  Dataset d = gen_correlated_groups_60(500, 2);
  d.X.col(5).setConstant(3.0);
  const auto s = Standardizer::fit(d.X);
  const Matrix z = s.apply(d.X);
  for (Eigen::Index c = 0; c < 60; ++c) {
    EXPECT_LE(std::abs(z.col(c).mean()), 1e-10);
    if (c != 5) {
      EXPECT_NEAR(std::sqrt(z.col(c).array().square().mean()), 1.0, 1e-8);
    }
  }
  EXPECT_EQ(z.col(5).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(s.apply(Matrix::Zero(2, 3)), ShapeError);
}

TEST(Noise, ZeroSigmaAndDeterminism) {
  const Matrix X = gen_independent_linear_60(20, 1).X;
  EXPECT_EQ(add_gaussian_noise(X, 0.0, 5), X);
  EXPECT_EQ(add_gaussian_noise(X, 0.3, 5), add_gaussian_noise(X, 0.3, 5));
  EXPECT_NE(add_gaussian_noise(X, 0.3, 5), X);
}

TEST(Csv, RoundTripAndImputation) {
  const Dataset d = gen_independent_linear_60(25, 3);
  std::stringstream ss;
  save_csv(ss, d, "target");
  const Dataset back = load_csv(ss, "target");
  EXPECT_LE((back.X - d.X).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((back.y - d.y).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(back.feature_names, d.feature_names);

  std::istringstream messy("a,label,b\n1,0,x\n3,1,4\n,1,8\n");
  const Dataset m = load_csv(messy, "label");
  EXPECT_EQ(m.task, Task::binary);
  EXPECT_EQ(m.X(2, 0), 2.0);
  EXPECT_EQ(m.X(0, 1), 6.0);
  EXPECT_FALSE(m.X.hasNaN());

  std::istringstream nolabel("a,b\n1,2\n");
  EXPECT_THROW(load_csv(nolabel, "y"), FormatError);
  std::istringstream ragged("a,y\n1,2,3\n");
  EXPECT_THROW(load_csv(ragged, "y"), FormatError);
  EXPECT_THROW(load_csv(std::string("/nonexistent/file.csv"), "y"), FormatError);
}
