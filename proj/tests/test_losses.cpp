#include <cmath>

#include <gtest/gtest.h>

#include "disco/losses.hpp"

using namespace disco;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

double cos_ref(const Vector& a, const Vector& b) { return a.dot(b) / std::sqrt(a.dot(a) * b.dot(b)); }
double triplet_ref(const Vector& a, const Vector& p, const Vector& n) {
  return std::log(1.0 + std::exp(1.0 - cos_ref(a, p) + cos_ref(a, n)));
}

// Central differences of f over every entry of x.
template <class F>
Matrix numeric_grad(Matrix x, F f) {
  Matrix g(x.rows(), x.cols());
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = f(x);
    x.data()[i] = saved - h;
    const double down = f(x);
    x.data()[i] = saved;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel_error(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1e-8, a.norm() + b.norm()); }

}  // namespace

TEST(Cosine, Examples) {
  EXPECT_DOUBLE_EQ(cosine_similarity(vec({1, 0}), vec({2, 0})), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(vec({1, 0}), vec({0, 3})), 0.0);
  EXPECT_NEAR(cosine_similarity(vec({3, 4}), vec({4, 3})), 0.96, 1e-15);
  EXPECT_NEAR(cosine_similarity(vec({1, 0}), vec({4, 3})), 0.8, 1e-15);
}

TEST(Cosine, ZeroVectorPolicy) {
  EXPECT_THROW(cosine_similarity(vec({0, 0}), vec({1, 0})), NumericError);
  EXPECT_THROW(cosine_similarity(vec({1, 0}), vec({1, 0, 0})), DataError);
  CosineOptions floor{true, 1e-8};
  EXPECT_DOUBLE_EQ(cosine_similarity(vec({0, 0}), vec({1, 0}), floor), 0.0);
  EXPECT_THROW(cosine_similarity(vec({NAN, 0}), vec({1, 0})), NumericError);
}

TEST(Triplet, ClosedForms) {
  // a = p, n orthogonal: log(1 + e^0) = ln 2.
  EXPECT_NEAR(triplet(vec({1, 0}), vec({1, 0}), vec({0, 1})), std::log(2.0), 1e-9);
  // S(a,p) = S(a,n): log(1 + e).
  EXPECT_NEAR(triplet(vec({1, 1}), vec({1, 0}), vec({0, 1})), std::log(1.0 + std::exp(1.0)), 1e-9);
  // p opposite, n = a: log(1 + e^3).
  EXPECT_NEAR(triplet(vec({1, 0}), vec({-1, 0}), vec({1, 0})), std::log(1.0 + std::exp(3.0)), 1e-9);
  // p orthogonal, n = a: log(1 + e^2).
  EXPECT_NEAR(triplet(vec({1, 0}), vec({0, 1}), vec({1, 0})), 2.1269280110429727, 1e-9);
}

TEST(Triplet, GradientsAgainstFiniteDifferences) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix x = random_matrix(3, 6, rng);
    const auto f = [](const Matrix& m) {
      return triplet(m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose());
    };
    const TripletGrad g = triplet_with_grad(x.row(0).transpose(), x.row(1).transpose(), x.row(2).transpose());
    EXPECT_NEAR(g.value, f(x), 1e-12);
    Matrix analytic(3, 6);
    analytic.row(0) = g.da.transpose();
    analytic.row(1) = g.dp.transpose();
    analytic.row(2) = g.dn.transpose();
    EXPECT_LT(rel_error(analytic, numeric_grad(x, f)), 1e-4);
  }
}

TEST(Tcon, ZeroWithoutEarlierTasks) {
  Rng rng(2);
  const Matrix z = random_matrix(8, 4, rng);
  const auto r = tcon(z, z.colwise().mean().transpose(), {});
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.grad, Matrix::Zero(8, 4));
}

TEST(Tcon, SingleTripletIsLn2) {
  Matrix z(1, 2);
  z << 1, 0;
  const auto r = tcon(z, vec({2, 0}), {vec({0, 5})});
  EXPECT_NEAR(r.value, std::log(2.0), 1e-12);
}

TEST(Tcon, MatchesDoubleLoopOracle) {
  Rng rng(3);
  const Matrix z = random_matrix(6, 5, rng);
  const Vector pos = random_matrix(5, 1, rng);
  std::vector<Vector> negs{random_matrix(5, 1, rng), random_matrix(5, 1, rng), random_matrix(5, 1, rng)};
  double expect = 0.0;
  for (Eigen::Index j = 0; j < z.rows(); ++j)
    for (const auto& n : negs) expect += triplet_ref(z.row(j).transpose(), pos, n);
  expect /= static_cast<double>(z.rows() * 3);
  EXPECT_NEAR(tcon(z, pos, negs).value, expect, 1e-12);
}

TEST(Tcon, GradientsAgainstFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix z = random_matrix(4, 5, rng);
    const Vector pos = random_matrix(5, 1, rng);
    std::vector<Vector> negs{random_matrix(5, 1, rng), random_matrix(5, 1, rng)};
    const auto r = tcon(z, pos, negs);
    EXPECT_LT(rel_error(r.grad, numeric_grad(z, [&](const Matrix& m) { return tcon(m, pos, negs).value; })), 1e-4);
  }
}

TEST(Ccon, SingleClassBatchIsZero) {
  Rng rng(5), pick(0);
  const auto r = ccon(random_matrix(5, 3, rng), {7, 7, 7, 7, 7}, pick);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_TRUE(r.triplets.empty());
}

TEST(Ccon, AlignedClassesOrthogonalAcrossIsLn2) {
  Matrix z(4, 2);
  z << 1, 0, 2, 0, 0, 1, 0, 3;
  Rng pick(9);
  const auto r = ccon(z, {0, 0, 1, 1}, pick);
  EXPECT_EQ(r.triplets.size(), 4u);
  EXPECT_NEAR(r.value, std::log(2.0), 1e-12);
}

TEST(Ccon, SamplingDeterministicAndMatchesOracle) {
  Rng data(6);
  const Matrix z = random_matrix(10, 4, data);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1, 2, 3};
  Rng a(42), b(42);
  const auto ra = ccon(z, labels, a);
  const auto rb = ccon(z, labels, b);
  EXPECT_EQ(ra.triplets, rb.triplets);
  EXPECT_EQ(ra.value, rb.value);
  // Label 3 has no same-class peer.
  EXPECT_EQ(ra.triplets.size(), 9u);
  double expect = 0.0;
  for (const auto& [j, p, n] : ra.triplets) {
    EXPECT_EQ(labels[static_cast<std::size_t>(j)], labels[static_cast<std::size_t>(p)]);
    EXPECT_NE(labels[static_cast<std::size_t>(j)], labels[static_cast<std::size_t>(n)]);
    EXPECT_NE(j, p);
    expect += triplet_ref(z.row(j).transpose(), z.row(p).transpose(), z.row(n).transpose());
  }
  EXPECT_NEAR(ra.value, expect / 9.0, 1e-12);
}

TEST(Ccon, GradientsAgainstFiniteDifferences) {
  Rng rng(7);
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix z = random_matrix(6, 4, rng);
    const std::uint64_t seed = rng.next();
    Rng r0(seed);
    const auto r = ccon(z, labels, r0);
    const auto f = [&](const Matrix& m) {
      Rng again(seed);
      return ccon(m, labels, again).value;
    };
    EXPECT_LT(rel_error(r.grad, numeric_grad(z, f)), 1e-4);
  }
}

TEST(Ccd, IdenticalOrthogonalIsLn2) {
  Matrix s(2, 2);
  s << 1, 0, 0, 1;
  const auto r = ccd(s, s, {0, 1});
  EXPECT_NEAR(r.value, std::log(2.0), 1e-12);
  const auto sum = ccd(s, s, {0, 1}, CcdNormalization::kSum);
  EXPECT_NEAR(sum.value, 2.0 * std::log(2.0), 1e-12);
}

TEST(Ccd, SingleClassIsZero) {
  Rng rng(8);
  const Matrix s = random_matrix(4, 3, rng);
  const auto r = ccd(s, random_matrix(4, 3, rng), {2, 2, 2, 2});
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.grad, Matrix::Zero(4, 3));
}

TEST(Ccd, MisalignedBatchesRejected) {
  Rng rng(9);
  EXPECT_THROW(ccd(random_matrix(4, 3, rng), random_matrix(3, 3, rng), {0, 1, 2, 3}), DataError);
  EXPECT_THROW(ccd(random_matrix(4, 3, rng), random_matrix(4, 3, rng), {0, 1, 2}), DataError);
}

TEST(Ccd, MatchesPairLoopOracle) {
  Rng rng(10);
  const Matrix s = random_matrix(5, 4, rng), t = random_matrix(5, 4, rng);
  const std::vector<int> labels{0, 1, 1, 2, 0};
  double expect = 0.0;
  int pairs = 0;
  for (int j = 0; j < 5; ++j)
    for (int k = 0; k < 5; ++k) {
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(k)]) continue;
      expect += triplet_ref(s.row(j).transpose(), t.row(j).transpose(), s.row(k).transpose());
      ++pairs;
    }
  EXPECT_NEAR(ccd(s, t, labels).value, expect / pairs, 1e-12);
  EXPECT_NEAR(ccd(s, t, labels, CcdNormalization::kSum).value, expect, 1e-12);
}

TEST(Ccd, GradientsAgainstFiniteDifferences) {
  Rng rng(11);
  const std::vector<int> labels{0, 1, 1, 2, 0};
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix s = random_matrix(5, 4, rng), t = random_matrix(5, 4, rng);
    for (auto mode : {CcdNormalization::kMean, CcdNormalization::kSum}) {
      const auto r = ccd(s, t, labels, mode);
      EXPECT_LT(rel_error(r.grad, numeric_grad(s, [&](const Matrix& m) { return ccd(m, t, labels, mode).value; })), 1e-4);
    }
  }
}

TEST(TotalLoss, WeightedSum) {
  // 1 + 0.5 ln2 + 0.5 ln2 + 1 * ln2
  const double l2 = std::log(2.0);
  EXPECT_NEAR(total_loss(1.0, l2, l2, l2, LossWeights{}), 1.0 + 2.0 * l2, 1e-12);
  EXPECT_NEAR(total_loss(1.0, l2, l2, l2, LossWeights{}), 2.386294361119891, 1e-12);
  EXPECT_EQ(total_loss(0.75, 3.0, 4.0, 5.0, LossWeights{0, 0, 0}), 0.75);
  EXPECT_THROW(total_loss(NAN, 0, 0, 0, LossWeights{}), NumericError);
  EXPECT_THROW(total_loss(0, 0, INFINITY, 0, LossWeights{}), NumericError);
}

TEST(LossWeights, Validation) {
  EXPECT_NO_THROW((LossWeights{0, 0, 0}.validate()));
  EXPECT_THROW((LossWeights{-0.1, 0, 0}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{0, NAN, 0}.validate()), ConfigError);
}
