#include "ema/oracles.hpp"

#include <cmath>

namespace ema::oracles {

GmmTrace gmm_em_identity(const MatD& x, const MatD& mu0, std::size_t iters) {
  if (x.cols != mu0.cols)
    throw std::invalid_argument("gmm_em_identity: channel counts disagree (" + shape_string(x) +
                                " vs " + shape_string(mu0) + ")");
  if (iters == 0) throw std::invalid_argument("gmm_em_identity: iters must be positive");
  const std::size_t n = x.rows, k = mu0.rows, c = x.cols;
  constexpr double kMassFloor = 1e-12;
  const double log_norm =
      -std::log(static_cast<double>(k)) - 0.5 * static_cast<double>(c) * std::log(2.0 * 3.14159265358979323846);

  GmmTrace trace;
  MatD mu = mu0;
  std::vector<double> logp(k);
  for (std::size_t it = 0; it < iters; ++it) {
    // E step with the current means; identity covariance makes the log
    // density -0.5*||x - mu||^2 up to the shared constant.
    MatD z(n, k);
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        double sq = 0.0;
        for (std::size_t d = 0; d < c; ++d) {
          const double diff = x(i, d) - mu(j, d);
          sq += diff * diff;
        }
        logp[j] = -0.5 * sq;
        mx = std::max(mx, logp[j]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double e = std::exp(logp[j] - mx);
        z(i, j) = e;
        sum += e;
      }
      for (std::size_t j = 0; j < k; ++j) z(i, j) /= sum;
      ll += mx + std::log(sum) + log_norm;
    }
    trace.log_likelihood.push_back(ll);

    // M step: responsibility-weighted means with N_k = sum_n z_nk.
    for (std::size_t j = 0; j < k; ++j) {
      double mass = 0.0;
      for (std::size_t i = 0; i < n; ++i) mass += z(i, j);
      if (mass < kMassFloor) continue;  // degenerate component keeps its mean
      for (std::size_t d = 0; d < c; ++d) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += z(i, j) * x(i, d);
        mu(j, d) = acc / mass;
      }
    }
    trace.responsibilities.push_back(std::move(z));
    trace.means.push_back(mu);
  }
  return trace;
}

}  // namespace ema::oracles
