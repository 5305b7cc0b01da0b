#include <cmath>

#include "doctest.h"
#include "ema/bases.hpp"
#include "test_support.hpp"

using namespace ema;
using test_support::random_matrix;

TEST_SUITE_BEGIN("bases");

TEST_CASE("init_bases is deterministic per seed and distinct across seeds") {
  const MatF a = init_bases<float>(8, 16, 42, false);
  const MatF b = init_bases<float>(8, 16, 42, false);
  const MatF c = init_bases<float>(8, 16, 43, false);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("init_bases entries have standard deviation near sqrt(2/C)") {
  const MatF m = init_bases<float>(1024, 512, 7, false);
  double mean = 0;
  for (float v : m.data) mean += v;
  mean /= static_cast<double>(m.data.size());
  double var = 0;
  for (float v : m.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(m.data.size());
  const double expected = std::sqrt(2.0 / 512.0);
  CHECK(std::sqrt(var) == doctest::Approx(expected).epsilon(0.1));
}

TEST_CASE("init_bases with normalize gives unit rows") {
  const MatF m = init_bases<float>(6, 9, 11, true);
  for (std::size_t k = 0; k < m.rows; ++k) {
    double sq = 0;
    for (std::size_t c = 0; c < m.cols; ++c) sq += static_cast<double>(m(k, c)) * m(k, c);
    REQUIRE(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("batch_average of one element is that element") {
  const MatF m = random_matrix<float>(3, 4, 1);
  CHECK(max_abs_diff(batch_average<float>({m}), m) == 0.0);
}

TEST_CASE("batch_average of m and -m is zero") {
  const MatF m = random_matrix<float>(3, 4, 2);
  MatF neg = m;
  for (float& v : neg.data) v = -v;
  CHECK(max_abs_diff(batch_average<float>({m, neg}), MatF(3, 4)) < 1e-7);
}

TEST_CASE("batch_average matches the scalar-loop mean oracle") {
  const std::vector<MatF> mus{random_matrix<float>(4, 5, 3), random_matrix<float>(4, 5, 4),
                              random_matrix<float>(4, 5, 5)};
  MatF expected(4, 5);
  for (std::size_t i = 0; i < expected.data.size(); ++i) {
    double acc = 0;
    for (const MatF& m : mus) acc += m.data[i];
    expected.data[i] = static_cast<float>(acc / 3.0);
  }
  CHECK(max_abs_diff(batch_average(mus), expected) < 1e-7);
}

TEST_CASE("batch_average is permutation invariant within accumulation noise") {
  const std::vector<MatF> mus{random_matrix<float>(4, 5, 3), random_matrix<float>(4, 5, 4),
                              random_matrix<float>(4, 5, 5)};
  const std::vector<MatF> permuted{mus[2], mus[0], mus[1]};
  CHECK(max_abs_diff(batch_average(mus), batch_average(permuted)) < 1e-7);
}

TEST_CASE("batch_average rejects an empty list and mixed shapes") {
  CHECK_THROWS_AS(batch_average<float>({}), std::invalid_argument);
  CHECK_THROWS_AS(batch_average<float>({MatF(2, 2), MatF(2, 3)}), std::invalid_argument);
}

TEST_CASE("moving_average_update at the endpoints is bit-identical") {
  const MatF mu0 = random_matrix<float>(4, 6, 8);
  const MatF bar = random_matrix<float>(4, 6, 9);
  CHECK(moving_average_update(mu0, bar, 1.0) == mu0);
  CHECK(moving_average_update(mu0, bar, 0.0) == bar);
}

TEST_CASE("moving_average_update hand values at alpha = 0.9") {
  const MatF mu0 = MatF::from_rows(1, 2, {1, 0});
  const MatF bar = MatF::from_rows(1, 2, {0, 1});
  const MatF out = moving_average_update(mu0, bar, 0.9);
  CHECK(out(0, 0) == static_cast<float>(0.9));
  CHECK(out(0, 1) == static_cast<float>(0.1));
}

TEST_CASE("moving_average_update output lies on the segment between inputs") {
  const MatF mu0 = random_matrix<float>(5, 3, 10);
  const MatF bar = random_matrix<float>(5, 3, 11);
  const MatF out = moving_average_update(mu0, bar, 0.35);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const float lo = std::min(mu0.data[i], bar.data[i]);
    const float hi = std::max(mu0.data[i], bar.data[i]);
    REQUIRE(out.data[i] >= lo - 1e-6f);
    REQUIRE(out.data[i] <= hi + 1e-6f);
  }
}

TEST_CASE("moving_average_update rejects alpha outside [0, 1] and shape mismatch") {
  CHECK_THROWS_AS(moving_average_update(MatF(2, 2), MatF(2, 2), -0.1), std::invalid_argument);
  CHECK_THROWS_AS(moving_average_update(MatF(2, 2), MatF(2, 2), 1.1), std::invalid_argument);
  CHECK_THROWS_AS(moving_average_update(MatF(2, 2), MatF(2, 3), 0.5), std::invalid_argument);
}

TEST_CASE("BatchBasesAverage requires at least one accumulated matrix") {
  BatchBasesAverage<float> acc;
  CHECK(acc.count() == 0);
  CHECK_THROWS_AS(acc.mean(), std::invalid_argument);
  acc.accumulate(MatF(2, 2, 3.0f));
  CHECK(acc.count() == 1);
  CHECK(acc.mean() == MatF(2, 2, 3.0f));
}

TEST_CASE("BasesMaintainer applies the momentum update explicitly") {
  const MatF initial = random_matrix<float>(3, 4, 12);
  BasesMaintainer<float> maintainer(initial, 0.9);
  CHECK(maintainer.current() == initial);

  const std::vector<MatF> batch{random_matrix<float>(3, 4, 13), random_matrix<float>(3, 4, 14)};
  maintainer.absorb_batch(batch);
  const MatF expected = moving_average_update(initial, batch_average(batch), 0.9);
  CHECK(maintainer.current() == expected);
}

TEST_SUITE_END();
