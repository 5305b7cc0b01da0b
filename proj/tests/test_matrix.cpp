#include <cmath>
#include <random>

#include "doctest.h"
#include "ema/matrix.hpp"
#include "test_support.hpp"

using namespace ema;
using test_support::matmul_reference;
using test_support::random_matrix;

TEST_SUITE_BEGIN("matrix");

TEST_CASE("matmul identity leaves the operand unchanged") {
  const MatF m = random_matrix<float>(2, 2, 11);
  CHECK(matmul(identity_matrix<float>(2), m) == m);
}

TEST_CASE("matmul hand-checked 2x2 times column") {
  const MatF a = MatF::from_rows(2, 2, {1, 2, 3, 4});
  const MatF b = MatF::from_rows(2, 1, {0, 1});
  const MatF c = matmul(a, b);
  CHECK(c(0, 0) == 2.0f);
  CHECK(c(1, 0) == 4.0f);
}

TEST_CASE("matmul matches the scalar triple-loop oracle") {
  const MatF a = random_matrix<float>(7, 5, 21);
  const MatF b = random_matrix<float>(5, 3, 22);
  CHECK(test_support::max_rel_diff(matmul(a, b), matmul_reference(a, b)) < 1e-6);
}

TEST_CASE("matmul oracle property up to 32x32") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t m = 1 + rng() % 32, p = 1 + rng() % 32, q = 1 + rng() % 32;
    const MatF a = random_matrix<float>(m, p, rng());
    const MatF b = random_matrix<float>(p, q, rng());
    REQUIRE(test_support::max_rel_diff(matmul(a, b), matmul_reference(a, b)) < 1e-6);
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions with shapes in the message") {
  const MatF a(3, 4), b(5, 2);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("3x4"), std::invalid_argument);
}

TEST_CASE("matmul bumps the MAC counter by rows*inner*cols") {
  mac_counter_reset();
  matmul(MatF(3, 4), MatF(4, 5));
  CHECK(mac_counter() == 60);
}

TEST_CASE("softmax of equal logits is uniform") {
  const MatF z = softmax_rows(MatF::from_rows(1, 2, {0, 0}), 1.0);
  CHECK(z(0, 0) == doctest::Approx(0.5));
  CHECK(z(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("softmax hand evaluation of [1, 0]") {
  const MatF z = softmax_rows(MatF::from_rows(1, 2, {1, 0}), 1.0);
  CHECK(z(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-6));
  CHECK(z(0, 1) == doctest::Approx(0.2689414213699951).epsilon(1e-6));
}

TEST_CASE("softmax is stable for large logits and shift invariant") {
  const MatF big = softmax_rows(MatF::from_rows(1, 2, {1000, 999}), 1.0);
  const MatF small = softmax_rows(MatF::from_rows(1, 2, {1, 0}), 1.0);
  CHECK(all_finite(big));
  CHECK(max_abs_diff(big, small) < 1e-6);
}

TEST_CASE("softmax rows sum to 1 on random inputs") {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 30; ++trial) {
    const MatF m = random_matrix<float>(1 + rng() % 20, 1 + rng() % 20, rng(), 10.0);
    REQUIRE(max_row_sum_deviation(softmax_rows(m, 0.5 + static_cast<double>(rng() % 8))) < 1e-6);
  }
}

TEST_CASE("softmax shift invariance on a random matrix") {
  const MatF m = random_matrix<float>(4, 6, 77);
  MatF shifted = m;
  for (float& v : shifted.data) v += 3.25f;
  CHECK(max_abs_diff(softmax_rows(m, 2.0), softmax_rows(shifted, 2.0)) < 1e-6);
}

TEST_CASE("softmax rejects non-positive scale and non-finite input") {
  CHECK_THROWS_AS(softmax_rows(MatF(1, 2), 0.0), std::invalid_argument);
  MatF bad(1, 2);
  bad(0, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(softmax_rows(bad, 1.0), NonFiniteError);
}

TEST_CASE("l2_normalize_rows on the 3-4-5 triangle") {
  const MatF out = l2_normalize_rows(MatF::from_rows(1, 2, {3, 4}));
  CHECK(out(0, 0) == doctest::Approx(0.6));
  CHECK(out(0, 1) == doctest::Approx(0.8));
}

TEST_CASE("l2_normalize_rows leaves unit rows unchanged and zero rows zero") {
  const MatF unit = MatF::from_rows(1, 2, {1, 0});
  CHECK(max_abs_diff(l2_normalize_rows(unit), unit) < 1e-7);
  const MatF zero = l2_normalize_rows(MatF(1, 3), 1e-12);
  CHECK(all_finite(zero));
  CHECK(zero == MatF(1, 3));
}

TEST_CASE("l2_normalize_rows preserves direction and is idempotent") {
  const MatF m = random_matrix<float>(6, 5, 91, 4.0);
  const MatF once = l2_normalize_rows(m);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      dot += static_cast<double>(m(i, j)) * once(i, j);
      na += static_cast<double>(m(i, j)) * m(i, j);
      nb += static_cast<double>(once(i, j)) * once(i, j);
    }
    REQUIRE(dot / std::sqrt(na * nb) == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(max_abs_diff(once, l2_normalize_rows(once)) < 1e-6);
}

TEST_CASE("numerical_rank of identity, outer product and low-rank product") {
  CHECK(numerical_rank(identity_matrix<float>(3), 1e-8) == 3);

  const MatF u = random_matrix<float>(5, 1, 31);
  const MatF v = random_matrix<float>(1, 4, 32);
  CHECK(numerical_rank(matmul(u, v)) == 1);

  const MatF z = random_matrix<float>(6, 2, 33);
  const MatF mu = random_matrix<float>(2, 4, 34);
  CHECK(numerical_rank(matmul(z, mu)) == 2);
}

TEST_CASE("numerical_rank of the zero matrix is 0 and tol must be positive") {
  CHECK(numerical_rank(MatF(4, 3)) == 0);
  CHECK_THROWS_AS(numerical_rank(MatF(2, 2), 0.0), std::invalid_argument);
}

TEST_CASE("reshape lays one channel out as single-column pixels") {
  FeatureMap<float> fm(1, 2, 2);
  fm.data = {1, 2, 3, 4};
  const MatF pm = reshape_to_pixels(fm);
  CHECK(pm.rows == 4);
  CHECK(pm.cols == 1);
  CHECK(pm.data == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("reshape interleaves channel-major data per pixel") {
  FeatureMap<float> fm(2, 1, 2);
  fm.data = {10, 11, 20, 21};  // channel 0 plane then channel 1 plane
  const MatF pm = reshape_to_pixels(fm);
  CHECK(pm(0, 0) == 10.0f);
  CHECK(pm(0, 1) == 20.0f);
  CHECK(pm(1, 0) == 11.0f);
  CHECK(pm(1, 1) == 21.0f);
}

TEST_CASE("reshape round trip is bit-identical") {
  const FeatureMap<float> fm = test_support::random_map<float>(3, 4, 5, 101);
  CHECK(reshape_to_map(reshape_to_pixels(fm), 4, 5) == fm);
}

TEST_CASE("reshape_to_map rejects pixel counts that do not fill the map") {
  CHECK_THROWS_AS(reshape_to_map(MatF(5, 2), 2, 2), std::invalid_argument);
}

TEST_SUITE_END();
