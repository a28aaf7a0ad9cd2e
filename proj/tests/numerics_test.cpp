#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "deftx/error.hpp"
#include "deftx/rng.hpp"
#include "deftx/svd.hpp"
#include "deftx/tensor.hpp"
#include "deftx/topk.hpp"

#if DEFTX_HAVE_EIGEN
#include <Eigen/Dense>
#include <Eigen/SVD>
#endif

using namespace deftx;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                     double scale = 1.0) {
  Rng rng(seed);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data) v = (2.0 * rng.next_double() - 1.0) * scale;
  return t;
}

double orthonormality_residual(const Tensor& m, bool columns) {
  // ||M^T M - I||_F for column orthonormality, ||M M^T - I||_F for rows.
  const std::size_t n = columns ? m.cols() : m.rows();
  double sum = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      double dot = 0.0;
      const std::size_t len = columns ? m.rows() : m.cols();
      for (std::size_t i = 0; i < len; ++i) {
        const double x = columns ? m.at(i, a) : m.at(a, i);
        const double y = columns ? m.at(i, b) : m.at(b, i);
        dot += x * y;
      }
      const double expect = a == b ? 1.0 : 0.0;
      sum += (dot - expect) * (dot - expect);
    }
  }
  return std::sqrt(sum);
}

}  // namespace

TEST_CASE("svd of identity is exact") {
  Tensor eye = Tensor::matrix(3, 3);
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const SvdFactors f = svd(eye);
  REQUIRE(f.s.numel() == 3);
  for (double s : f.s.data) CHECK(s == 1.0);
  const Tensor recon = svd_reconstruct(f);
  for (std::size_t i = 0; i < 9; ++i) CHECK(recon.data[i] == eye.data[i]);
}

TEST_CASE("singular values of a diagonal matrix are the sorted magnitudes") {
  Tensor d = Tensor::matrix(2, 2);
  d.at(0, 0) = 3.0;
  d.at(1, 1) = 1.0;
  const SvdFactors f = svd(d);
  CHECK(f.s.data[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(f.s.data[1] == doctest::Approx(1.0).epsilon(1e-12));

  Tensor signs = Tensor::matrix(3, 3);
  signs.at(0, 0) = -4.0;
  signs.at(1, 1) = 0.0;
  signs.at(2, 2) = 2.5;
  const SvdFactors g = svd(signs);
  CHECK(g.s.data[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(g.s.data[1] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(g.s.data[2] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("svd round trip on random shapes") {
  Rng shape_rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + shape_rng.next_below(64);
    const std::size_t n = 1 + shape_rng.next_below(64);
    const Tensor w = random_matrix(m, n, 1000 + static_cast<std::uint64_t>(trial));
    const SvdFactors f = svd(w);
    CHECK(relative_frobenius_distance(svd_reconstruct(f), w) <= 1e-10);
    CHECK(orthonormality_residual(f.u, true) <= 1e-10);
    CHECK(orthonormality_residual(f.vt, false) <= 1e-10);
    for (std::size_t i = 1; i < f.s.numel(); ++i) {
      CHECK(f.s.data[i - 1] >= f.s.data[i]);
    }
  }
}

#if DEFTX_HAVE_EIGEN
TEST_CASE("random 32x48 matrix matches an independent reference svd") {
  const Tensor w = random_matrix(32, 48, 7);
  const SvdFactors f = svd(w);
  CHECK(relative_frobenius_distance(svd_reconstruct(f), w) <= 1e-10);

  Eigen::MatrixXd ew(32, 48);
  for (std::size_t r = 0; r < 32; ++r) {
    for (std::size_t c = 0; c < 48; ++c) ew(static_cast<int>(r), static_cast<int>(c)) = w.at(r, c);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> reference(ew);
  REQUIRE(reference.singularValues().size() == 32);
  const double scale = reference.singularValues()(0);
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(std::fabs(f.s.data[i] - reference.singularValues()(static_cast<int>(i))) <=
          1e-10 * scale);
  }
}
#endif

TEST_CASE("svd rejects bad inputs") {
  CHECK_THROWS_WITH_AS(svd(Tensor({4}, {1, 2, 3, 4})), doctest::Contains("2-D"), Error);
  Tensor bad = Tensor::matrix(2, 2);
  bad.at(0, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    svd(bad);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NumericInput);
  }
}

TEST_CASE("svd handles rank-deficient and zero matrices") {
  const Tensor zero = Tensor::matrix(4, 3);
  const SvdFactors f = svd(zero);
  for (double s : f.s.data) CHECK(s == 0.0);
  CHECK(orthonormality_residual(f.u, true) <= 1e-10);

  // duplicated column
  Tensor dup = Tensor::matrix(5, 3);
  Rng rng(3);
  for (std::size_t r = 0; r < 5; ++r) {
    dup.at(r, 0) = rng.next_double();
    dup.at(r, 1) = dup.at(r, 0);
    dup.at(r, 2) = rng.next_double();
  }
  const SvdFactors g = svd(dup);
  CHECK(relative_frobenius_distance(svd_reconstruct(g), dup) <= 1e-10);
  CHECK(orthonormality_residual(g.u, true) <= 1e-9);
}

TEST_CASE("svd low rank truncation") {
  const Tensor w = random_matrix(8, 6, 42);
  const SvdFactors f = svd(w);
  const Tensor full = svd_low_rank(f, 6);
  CHECK(relative_frobenius_distance(full, w) <= 1e-10);
  const Tensor rank0 = svd_low_rank(f, 0);
  for (double v : rank0.data) CHECK(v == 0.0);
}

TEST_CASE("top_k_indices basics") {
  const std::vector<double> values{0.5, -2.0, 1.0};
  CHECK(top_k_indices(values, 2) == std::vector<std::size_t>{1, 2});

  const std::vector<double> ties{1.0, 1.0, 1.0};
  CHECK(top_k_indices(ties, 2) == std::vector<std::size_t>{0, 1});

  CHECK(top_k_indices(values, 0).empty());
  CHECK(top_k_indices(values, 3) == std::vector<std::size_t>{0, 1, 2});

  try {
    top_k_indices(values, 4);
    FAIL("expected budget error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Budget);
  }
}

TEST_CASE("top_k_indices is stable under permutation when magnitudes separate") {
  Rng rng(11);
  std::vector<double> values(50);
  // strictly distinct magnitudes
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = (static_cast<double>(i) + 1.0) * (rng.next_u64() % 2 == 0 ? 1.0 : -1.0);
  }
  const std::size_t k = 17;
  const std::vector<std::size_t> direct = top_k_indices(values, k);

  std::vector<std::size_t> perm(values.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.next_below(i)]);
  }
  std::vector<double> permuted(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) permuted[i] = values[perm[i]];
  const std::vector<std::size_t> on_permuted = top_k_indices(permuted, k);
  std::set<std::size_t> mapped_back;
  for (std::size_t idx : on_permuted) mapped_back.insert(perm[idx]);
  CHECK(mapped_back == std::set<std::size_t>(direct.begin(), direct.end()));
}

TEST_CASE("rng streams are reproducible") {
  Rng a(1234);
  Rng b(1234);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(1234);
  Rng d(5678);
  bool differs = false;
  for (int i = 0; i < 10; ++i) differs |= c.next_u64() != d.next_u64();
  CHECK(differs);

  CHECK(Rng(7).fork("x").seed() == Rng(7).fork("x").seed());
  CHECK(Rng(7).fork("x").seed() != Rng(7).fork("y").seed());
  CHECK(Rng(7).fork("x", 1).seed() != Rng(7).fork("x", 2).seed());
}

TEST_CASE("rng uniform and bounded draws stay in range") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.next_below(7) < 7);
  }
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)), Error);
  CHECK_THROWS_AS(Tensor({0}, {}), Error);
  const Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
}
