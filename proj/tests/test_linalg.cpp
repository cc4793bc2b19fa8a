#include <gtest/gtest.h>

#include <numeric>

#include "fednerf/linalg.hpp"
#include "test_util.hpp"

namespace fednerf {
namespace {

using testing::from_eigen;
using testing::max_abs_diff;
using testing::random_matrix;
using testing::reconstruct;
using testing::to_eigen;

double orthonormality_error(const Matrix& q) {
  const Matrix g = q.transposed() * q;
  return max_abs_diff(g, Matrix::identity(g.rows()));
}

TEST(Svd, IdentityHasUnitSpectrum) {
  const auto d = svd(Matrix::identity(4));
  for (double s : d.singular) EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_LE(orthonormality_error(d.left * d.right.transposed()), 1e-12);
}

TEST(Svd, DiagonalMatrix) {
  const Matrix w(2, 2, {3, 0, 0, 2});
  const auto d = svd(w);
  EXPECT_NEAR(d.singular[0], 3.0, 1e-14);
  EXPECT_NEAR(d.singular[1], 2.0, 1e-14);
}

TEST(Svd, InvariantsAcrossShapes) {
  const std::pair<std::size_t, std::size_t> shapes[] = {{8, 5}, {5, 8}, {6, 6}, {1, 7}, {7, 1}, {1, 1}, {33, 20}};
  std::uint64_t seed = 100;
  for (auto [u, v] : shapes) {
    for (int rep = 0; rep < 5; ++rep) {
      const Matrix w = random_matrix(u, v, ++seed);
      const auto d = svd(w);
      const std::size_t k = std::min(u, v);
      ASSERT_EQ(d.singular.size(), k);
      ASSERT_EQ(d.left.rows(), u);
      ASSERT_EQ(d.right.rows(), v);
      for (std::size_t i = 0; i < k; ++i) {
        EXPECT_GE(d.singular[i], 0.0);
        if (i > 0) {
          EXPECT_LE(d.singular[i], d.singular[i - 1]);
        }
      }
      const double err = (reconstruct(d) - w).frobenius_norm();
      EXPECT_LE(err, 1e-9 * std::max(1.0, w.frobenius_norm())) << u << "x" << v;
      EXPECT_LE(orthonormality_error(d.left), 1e-9);
      EXPECT_LE(orthonormality_error(d.right), 1e-9);
    }
  }
}

TEST(Svd, SingularValuesMatchEigenOracle) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Matrix w = random_matrix(8, 5, seed);
    const auto d = svd(w);
    const Eigen::MatrixXd e = to_eigen(w);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(e.transpose() * e);
    Eigen::VectorXd ev = eig.eigenvalues().reverse();
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(d.singular[i], std::sqrt(std::max(0.0, ev(i))), 1e-7);
  }
}

TEST(Svd, SignConvention) {
  const auto d = svd(random_matrix(7, 4, 9));
  for (std::size_t c = 0; c < d.left.cols(); ++c) {
    double best = 0.0;
    for (std::size_t r = 0; r < d.left.rows(); ++r)
      if (std::fabs(d.left(r, c)) > std::fabs(best)) best = d.left(r, c);
    EXPECT_GE(best, 0.0);
  }
  const auto again = svd(random_matrix(7, 4, 9));
  EXPECT_EQ(d.left, again.left);
  EXPECT_EQ(d.right, again.right);
}

TEST(Svd, RankDeficientInputKeepsOrthonormalBasis) {
  const Matrix a = random_matrix(6, 1, 3);
  const Matrix b = random_matrix(1, 4, 4);
  const auto d = svd(a * b);
  EXPECT_LE(orthonormality_error(d.left), 1e-9);
  EXPECT_LE(d.singular[1], 1e-12);
  EXPECT_LE((reconstruct(d) - a * b).frobenius_norm(), 1e-12);
}

TEST(Svd, RejectsNonFiniteEntry) {
  Matrix w = random_matrix(3, 3, 1);
  w(1, 2) = std::nan("");
  try {
    svd(w);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("(1, 2)"), std::string::npos) << e.what();
  }
}

TEST(SelectRank, Examples) {
  const std::vector<double> uniform{1, 1, 1, 1};
  EXPECT_EQ(select_rank(uniform, 0.5), 2u);
  const std::vector<double> elbow{10, 1, 1};
  EXPECT_EQ(select_rank(elbow, 0.9), 2u);
  const std::vector<double> positive{5, 1e-20, 1e-30};
  EXPECT_EQ(select_rank(positive, 1.0), 3u);
}

// Independent cumulative-scan oracle.
std::size_t scan_rank(const std::vector<double>& s, double alpha) {
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  double cum = 0.0;
  for (std::size_t r = 0; r < s.size(); ++r) {
    cum += s[r];
    if (cum >= alpha * total) return r + 1;
  }
  return s.size();
}

TEST(SelectRank, MonotoneInAlphaAndMatchesScan) {
  Rng rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> s(1 + rng.below(12));
    for (double& x : s) x = rng.uniform(0.0, 10.0);
    std::sort(s.rbegin(), s.rend());
    std::size_t prev = 0;
    for (double a = 0.05; a <= 1.0001; a += 0.05) {
      const double alpha = std::min(a, 1.0);
      const std::size_t r = select_rank(s, alpha);
      EXPECT_GE(r, prev);
      EXPECT_GE(r, 1u);
      EXPECT_LE(r, s.size());
      if (alpha < 1.0) {
        EXPECT_EQ(r, scan_rank(s, alpha));
      }
      prev = r;
    }
  }
}

TEST(SelectRank, RejectsBadInput) {
  const std::vector<double> zeros{0, 0};
  EXPECT_THROW(select_rank(zeros, 0.9), std::invalid_argument);
  const std::vector<double> increasing{1, 2};
  EXPECT_THROW(select_rank(increasing, 0.9), std::invalid_argument);
  const std::vector<double> ok{2, 1};
  EXPECT_THROW(select_rank(ok, 0.0), std::invalid_argument);
  EXPECT_THROW(select_rank(ok, 1.5), std::invalid_argument);
  EXPECT_THROW(select_rank(std::vector<double>{}, 0.5), std::invalid_argument);
}

TEST(Truncate, FullRankReconstructs) {
  const Matrix w = random_matrix(5, 7, 11);
  const auto f = truncate(svd(w), 5);
  EXPECT_LE(max_abs_diff(f.left * f.right, w), 1e-9);
}

TEST(Truncate, RankOneExact) {
  const Matrix w = random_matrix(6, 1, 12) * random_matrix(1, 4, 13);
  const auto f = truncate(svd(w), 1);
  EXPECT_LE(max_abs_diff(f.left * f.right, w), 1e-9);
}

TEST(Truncate, EckartYoungResidual) {
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    const Matrix w = random_matrix(6, 6, seed);
    const auto d = svd(w);
    const auto f = truncate(d, 3);
    double tail = 0.0;
    for (std::size_t i = 3; i < 6; ++i) tail += d.singular[i] * d.singular[i];
    EXPECT_NEAR((w - f.left * f.right).frobenius_norm(), std::sqrt(tail), 1e-7);
  }
}

TEST(Truncate, EckartYoungBeatsRandomRankRMatrices) {
  for (std::uint64_t seed = 40; seed < 50; ++seed) {
    const Matrix w = random_matrix(7, 5, seed);
    const auto d = svd(w);
    for (std::size_t r = 1; r <= 5; ++r) {
      const auto f = truncate(d, r);
      const double best = (w - f.left * f.right).frobenius_norm();
      for (int rep = 0; rep < 10; ++rep) {
        const Matrix a = random_matrix(7, r, seed * 100 + rep) * random_matrix(r, 5, seed * 1000 + rep);
        EXPECT_LE(best, (w - a).frobenius_norm() + 1e-12);
      }
    }
  }
}

TEST(Truncate, RejectsRankOutOfRange) {
  const auto d = svd(random_matrix(3, 4, 1));
  EXPECT_THROW(truncate(d, 0), std::invalid_argument);
  EXPECT_THROW(truncate(d, 4), std::invalid_argument);
}

TEST(RefactorLstsq, ConsistentSystem) {
  const Matrix l0 = random_matrix(6, 3, 1);
  const Matrix r = random_matrix(3, 8, 2);
  EXPECT_LE(max_abs_diff(refactor_lstsq(l0 * r, r), l0), 1e-8);
}

TEST(RefactorLstsq, IdentityFactor) {
  const Matrix w = random_matrix(4, 5, 3);
  EXPECT_LE(max_abs_diff(refactor_lstsq(w, Matrix::identity(5)), w), 1e-12);
}

TEST(RefactorLstsq, MatchesPseudoinverseOracle) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Matrix w = random_matrix(7, 9, seed);
    // Orthonormal rows from the thin QR of a random 9×4 matrix.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(to_eigen(random_matrix(9, 4, seed + 500)));
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(9, 4);
    const Matrix r = from_eigen(q.transpose());
    const Eigen::MatrixXd re = to_eigen(r);
    const Matrix oracle = from_eigen(to_eigen(w) * re.transpose() * (re * re.transpose()).inverse());
    const Matrix l = refactor_lstsq(w, r);
    EXPECT_LE(max_abs_diff(l, oracle), 1e-7);
    EXPECT_LE(max_abs_diff((w - l * r) * r.transposed(), Matrix(7, 4)), 1e-7);
    // Projection property on orthonormal rows.
    EXPECT_LE(max_abs_diff(refactor_lstsq(l * r, r), l), 1e-10);
  }
}

TEST(RefactorLstsq, GeneralRowsSatisfyNormalEquations) {
  const Matrix w = random_matrix(5, 10, 7);
  const Matrix r = random_matrix(4, 10, 8);
  const Matrix l = refactor_lstsq(w, r);
  EXPECT_LE(max_abs_diff((w - l * r) * r.transposed(), Matrix(5, 4)), 1e-7);
}

TEST(RefactorLstsq, RejectsRankDeficientFactor) {
  Matrix r = random_matrix(3, 6, 1);
  for (std::size_t c = 0; c < 6; ++c) r(2, c) = 2.0 * r(0, c);
  EXPECT_THROW(refactor_lstsq(random_matrix(4, 6, 2), r), std::invalid_argument);
  EXPECT_THROW(refactor_lstsq(random_matrix(4, 3, 2), random_matrix(4, 3, 3)), std::invalid_argument);
}

}  // namespace
}  // namespace fednerf
