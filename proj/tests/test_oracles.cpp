#include <cmath>
#include <random>

#include "doctest.h"
#include "ema/bases.hpp"
#include "ema/ema.hpp"
#include "ema/oracles.hpp"
#include "test_support.hpp"

using namespace ema;
using namespace ema::oracles;
using test_support::random_matrix;

namespace {

// Two clusters of points around the given 1-D centers along the x axis.
MatD two_cluster_data(std::size_t per_cluster, double c0, double c1, std::uint64_t seed,
                      double spread) {
  NormalSampler s(seed);
  MatD x(2 * per_cluster, 2);
  for (std::size_t i = 0; i < per_cluster; ++i) {
    x(i, 0) = c0 + spread * s.next();
    x(i, 1) = spread * s.next();
    x(per_cluster + i, 0) = c1 + spread * s.next();
    x(per_cluster + i, 1) = spread * s.next();
  }
  return x;
}

MatD centroid_of_rows(const MatD& x, std::size_t begin, std::size_t end) {
  MatD c(1, x.cols);
  for (std::size_t i = begin; i < end; ++i)
    for (std::size_t d = 0; d < x.cols; ++d) c(0, d) += x(i, d);
  for (std::size_t d = 0; d < x.cols; ++d) c(0, d) /= static_cast<double>(end - begin);
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("oracles");

TEST_CASE("gmm recovers two well-separated cluster centroids") {
  const MatD x = two_cluster_data(25, 0.0, 10.0, 3, 0.5);
  MatD mu0(2, 2);
  mu0(0, 0) = 1.0;
  mu0(1, 0) = 9.0;
  const GmmTrace trace = gmm_em_identity(x, mu0, 5);
  const MatD c0 = centroid_of_rows(x, 0, 25);
  const MatD c1 = centroid_of_rows(x, 25, 50);
  const MatD& mu = trace.means.back();
  for (std::size_t d = 0; d < 2; ++d) {
    CHECK(std::abs(mu(0, d) - c0(0, d)) < 1e-3);
    CHECK(std::abs(mu(1, d) - c1(0, d)) < 1e-3);
  }
}

TEST_CASE("single-component gmm lands on the data mean after one iteration") {
  const MatD x = test_support::random_matrix<double>(17, 3, 5);
  const GmmTrace trace = gmm_em_identity(x, MatD(1, 3), 1);
  MatD mean(1, 3);
  for (std::size_t d = 0; d < 3; ++d) {
    for (std::size_t i = 0; i < 17; ++i) mean(0, d) += x(i, d);
    mean(0, d) /= 17.0;
  }
  CHECK(trace.means.back() == mean);
}

TEST_CASE("gmm marginal log-likelihood is non-decreasing") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    NormalSampler s(seed * 31 + 7);
    MatD x(60, 3);
    for (std::size_t i = 0; i < 60; ++i) {
      const std::size_t cluster = i % 3;
      for (std::size_t d = 0; d < 3; ++d)
        x(i, d) = 4.0 * static_cast<double>(cluster == d) + 0.6 * s.next();
    }
    MatD mu0(3, 3);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t d = 0; d < 3; ++d) mu0(k, d) = s.next();
    const GmmTrace trace = gmm_em_identity(x, mu0, 20);
    REQUIRE(trace.log_likelihood.size() == 20);
    for (std::size_t t = 1; t < 20; ++t)
      REQUIRE(trace.log_likelihood[t] >= trace.log_likelihood[t - 1] - 1e-9);
  }
}

TEST_CASE("gmm trace responsibilities are row-stochastic") {
  const MatD x = two_cluster_data(10, 0.0, 4.0, 9, 0.8);
  const GmmTrace trace = gmm_em_identity(x, MatD(2, 2), 4);
  for (const MatD& z : trace.responsibilities) REQUIRE(max_row_sum_deviation(z) < 1e-12);
}

TEST_CASE("gmm_reestimate matches data_reestimation bit-exactly") {
  const MatF z = softmax_rows(random_matrix<float>(9, 3, 11), 1.0);
  const MatF mu = random_matrix<float>(3, 5, 12);
  CHECK(gmm_reestimate(z, mu) == data_reestimation(z, mu));

  const MatF rows = gmm_reestimate(identity_matrix<float>(3), mu);
  CHECK(rows == mu);
}

TEST_CASE("kmeans converges in one iteration on the 1-D hand example") {
  MatF x(4, 1);
  x(0, 0) = 0;
  x(1, 0) = 1;
  x(2, 0) = 10;
  x(3, 0) = 11;
  MatF mu0(2, 1);
  mu0(0, 0) = 0.4f;
  mu0(1, 0) = 10.4f;
  const auto r = kmeans(x, mu0, 1, KmeansMode::euclidean);
  CHECK(r.means(0, 0) == doctest::Approx(0.5));
  CHECK(r.means(1, 0) == doctest::Approx(10.5));
  CHECK(r.assignments == std::vector<std::size_t>{0, 0, 1, 1});
}

TEST_CASE("identical points all land on the lowest-index basis") {
  MatF x(6, 2, 1.5f);
  const MatF mu0 = random_matrix<float>(3, 2, 13);
  const auto r = kmeans(x, mu0, 2, KmeansMode::euclidean);
  // Every point ties across iterations only if a mean equals another; with
  // random means the nearest is unique, and after one update that cluster
  // sits exactly on the point.
  const std::size_t owner = r.assignments[0];
  for (std::size_t i = 0; i < 6; ++i) REQUIRE(r.assignments[i] == owner);
  CHECK(r.means(owner, 0) == doctest::Approx(1.5));
  CHECK(r.means(owner, 1) == doctest::Approx(1.5));
}

TEST_CASE("exact ties go to the lowest basis index") {
  MatF x(1, 1, 0.0f);
  MatF mu0(2, 1);
  mu0(0, 0) = 1.0f;
  mu0(1, 0) = -1.0f;  // equidistant from 0
  const auto r = kmeans(x, mu0, 1, KmeansMode::euclidean);
  CHECK(r.assignments[0] == 0);
}

TEST_CASE("spherical assignments match the brute-force inner-product oracle") {
  NormalSampler s(17);
  MatF x(40, 2);
  for (std::size_t i = 0; i < 40; ++i) {
    const double angle = (i < 20 ? 0.3 : 3.1) + 0.25 * s.next();
    x(i, 0) = static_cast<float>(std::cos(angle));
    x(i, 1) = static_cast<float>(std::sin(angle));
  }
  const MatF mu0 = l2_normalize_rows(random_matrix<float>(2, 2, 18));
  const auto r = kmeans(x, mu0, 3, KmeansMode::spherical);

  // means stay unit-norm
  for (std::size_t k = 0; k < 2; ++k) {
    double sq = 0;
    for (std::size_t d = 0; d < 2; ++d) sq += static_cast<double>(r.means(k, d)) * r.means(k, d);
    REQUIRE(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-6));
  }
  // final assignments agree with argmax inner product against the final means
  for (std::size_t i = 0; i < 40; ++i) {
    double best = -1e30;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < 2; ++k) {
      double dot = 0;
      for (std::size_t d = 0; d < 2; ++d)
        dot += static_cast<double>(x(i, d)) * r.means(k, d);
      if (dot > best) {
        best = dot;
        arg = k;
      }
    }
    // one more assignment round with the converged means
    const auto final_round = kmeans(x, r.means, 1, KmeansMode::spherical);
    REQUIRE(final_round.assignment_history[0][i] == arg);
  }
}

TEST_CASE("euclidean objective is non-increasing") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 5; ++trial) {
    const MatF x = random_matrix<float>(30, 4, rng(), 2.0);
    const MatF mu0 = random_matrix<float>(4, 4, rng());
    const auto r = kmeans(x, mu0, 8, KmeansMode::euclidean);
    for (std::size_t t = 1; t < r.objective.size(); ++t)
      REQUIRE(r.objective[t] <= r.objective[t - 1] + 1e-6);
  }
}

TEST_CASE("empty clusters keep their previous mean") {
  MatF x(3, 1);
  x(0, 0) = 1.0f;
  x(1, 0) = 1.1f;
  x(2, 0) = 0.9f;
  MatF mu0(2, 1);
  mu0(0, 0) = 1.0f;
  mu0(1, 0) = 100.0f;  // never wins
  const auto r = kmeans(x, mu0, 3, KmeansMode::euclidean);
  CHECK(r.means(1, 0) == 100.0f);
}

TEST_CASE("nonlocal on a single row returns g of that row") {
  const MatF x = random_matrix<float>(1, 6, 21);
  NonLocalConfig<float> cfg;
  CHECK(max_abs_diff(nonlocal_forward(x, cfg), x) < 1e-7);
}

TEST_CASE("nonlocal hand evaluation on two orthogonal unit rows") {
  const MatF x = identity_matrix<float>(2);
  NonLocalConfig<float> cfg;
  const MatF y = nonlocal_forward(x, cfg);
  const double e = std::exp(1.0);
  CHECK(y(0, 0) == doctest::Approx(e / (e + 1.0)).epsilon(1e-6));
  CHECK(y(0, 1) == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-6));
}

TEST_CASE("nonlocal equals run_ema with the input as bases and T = 0") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 4 + rng() % 60;
    const MatF x = random_matrix<float>(n, 8, rng(), 0.6);
    EmaConfig cfg;
    cfg.k_bases = n;
    cfg.iterations = 0;
    cfg.lambda = 1.0;
    const auto ema_out = run_ema(x, x, cfg);
    NonLocalConfig<float> nl;
    REQUIRE(max_abs_diff(ema_out.reconstruction, nonlocal_forward(x, nl)) < 1e-5);
  }
}

TEST_CASE("nonlocal linear value transform applies g before mixing") {
  const MatF x = random_matrix<float>(5, 3, 24, 0.5);
  NonLocalConfig<float> cfg;
  cfg.g = ValueTransform::linear;
  cfg.g_weight = identity_matrix<float>(3);
  NonLocalConfig<float> plain;
  CHECK(max_abs_diff(nonlocal_forward(x, cfg), nonlocal_forward(x, plain)) < 1e-6);
}

TEST_CASE("nonlocal rejects inputs above the quadratic cap") {
  NonLocalConfig<float> cfg;
  cfg.n_cap = 8;
  CHECK_THROWS_WITH_AS(nonlocal_forward(MatF(9, 2), cfg), doctest::Contains("EMA"),
                       std::invalid_argument);
}

TEST_CASE("a2 with one pixel degenerates to the phi projection") {
  const MatF x = random_matrix<float>(1, 5, 25);
  A2Params<float> p{random_matrix<float>(5, 5, 26), random_matrix<float>(5, 3, 27),
                    random_matrix<float>(5, 3, 28), false};
  CHECK(max_abs_diff(a2_forward(x, p), matmul(x, p.w_phi)) < 1e-6);
}

TEST_CASE("a2 output rank is bounded by the descriptor count") {
  const MatF x = random_matrix<float>(32, 16, 29);
  A2Params<float> p{random_matrix<float>(16, 16, 30), random_matrix<float>(16, 4, 31),
                    random_matrix<float>(16, 4, 32), false};
  const MatF y = a2_forward(x, p);
  CHECK(y.rows == 32);
  CHECK(y.cols == 16);
  CHECK(numerical_rank(y) <= 4);
}

TEST_CASE("a2 matches a straight-line scalar re-implementation") {
  const std::size_t n = 7, c = 4, k = 3;
  const MatF x = random_matrix<float>(n, c, 33, 0.7);
  A2Params<float> p{random_matrix<float>(c, c, 34), random_matrix<float>(c, k, 35),
                    random_matrix<float>(c, k, 36), false};
  const MatF got = a2_forward(x, p);

  // scalar oracle of the same formula
  std::vector<double> theta(n * k), rho(n * k), phi(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double t = 0, r = 0;
      for (std::size_t d = 0; d < c; ++d) {
        t += static_cast<double>(x(i, d)) * p.w_theta(d, j);
        r += static_cast<double>(x(i, d)) * p.w_rho(d, j);
      }
      theta[i * k + j] = static_cast<float>(t);
      rho[i * k + j] = static_cast<float>(r);
    }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < c; ++d) {
      double v = 0;
      for (std::size_t q = 0; q < c; ++q) v += static_cast<double>(x(i, q)) * p.w_phi(q, d);
      phi[i * c + d] = static_cast<float>(v);
    }
  // softmax of theta over positions, per descriptor column
  for (std::size_t j = 0; j < k; ++j) {
    double mx = -1e300;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, theta[i * k + j]);
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      theta[i * k + j] = std::exp(theta[i * k + j] - mx);
      sum += theta[i * k + j];
    }
    for (std::size_t i = 0; i < n; ++i)
      theta[i * k + j] = static_cast<float>(theta[i * k + j] / sum);
  }
  // softmax of rho over descriptors, per pixel
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, rho[i * k + j]);
    double sum = 0;
    for (std::size_t j = 0; j < k; ++j) {
      rho[i * k + j] = std::exp(rho[i * k + j] - mx);
      sum += rho[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) rho[i * k + j] = static_cast<float>(rho[i * k + j] / sum);
  }
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < c; ++d) {
      double acc = 0;
      for (std::size_t j = 0; j < k; ++j) {
        double desc = 0;
        for (std::size_t q = 0; q < n; ++q) desc += theta[q * k + j] * phi[q * c + d];
        acc += rho[i * k + j] * static_cast<float>(desc);
      }
      worst = std::max(worst, std::abs(acc - static_cast<double>(got(i, d))));
    }
  CHECK(worst < 1e-5);
}

TEST_CASE("a2 sharing flag reuses w_theta for the distribute softmax") {
  const MatF x = random_matrix<float>(6, 4, 37);
  A2Params<float> shared{random_matrix<float>(4, 4, 38), random_matrix<float>(4, 2, 39), MatF(),
                         true};
  A2Params<float> explicit_same{shared.w_phi, shared.w_theta, shared.w_theta, false};
  CHECK(a2_forward(x, shared) == a2_forward(x, explicit_same));
}

TEST_CASE("ema hard assignments match spherical kmeans in the large-lambda limit") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    NormalSampler s(seed * 77 + 5);
    const std::size_t n = 30, c = 6, k = 3, t = 3;
    MatF centers(k, c);
    for (auto& v : centers.data) v = static_cast<float>(s.next());
    centers = l2_normalize_rows(centers);
    MatF x(n, c), mu0(k, c);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < c; ++d)
        x(i, d) = centers(i % k, d) + 0.25f * static_cast<float>(s.next());
    x = l2_normalize_rows(x);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t d = 0; d < c; ++d)
        mu0(j, d) = centers(j, d) + 0.25f * static_cast<float>(s.next());
    mu0 = l2_normalize_rows(mu0);

    EmaConfig cfg;
    cfg.k_bases = k;
    cfg.iterations = t;
    cfg.lambda = 1e4;
    cfg.base_norm = BaseNorm::l2;
    const auto ema_run = run_ema(x, mu0, cfg);
    const auto km = kmeans(x, mu0, t, KmeansMode::spherical);
    for (std::size_t it = 0; it < t; ++it)
      for (std::size_t i = 0; i < n; ++i)
        REQUIRE(row_argmax(ema_run.trace.responsibilities[it], i) ==
                km.assignment_history[it][i]);
  }
}

TEST_SUITE_END();
