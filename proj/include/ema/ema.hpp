#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "ema/matrix.hpp"

namespace ema {

enum class Kernel { exp_inner_dot };
enum class BaseNorm { l2, none };

inline const char* to_string(Kernel k) {
  return k == Kernel::exp_inner_dot ? "exp-inner-dot" : "?";
}
inline const char* to_string(BaseNorm n) { return n == BaseNorm::l2 ? "l2" : "none"; }

/// Hyper-parameters of the EM attention loop.
struct EmaConfig {
  std::size_t k_bases = 64;
  double lambda = 1.0;       // logit scale of the exponential inner-dot kernel
  std::size_t iterations = 3;
  double momentum = 0.9;     // base maintenance momentum, see bases.hpp
  double denom_eps = 1e-6;   // guards dead bases in the M step
  Kernel kernel = Kernel::exp_inner_dot;
  BaseNorm base_norm = BaseNorm::none;

  void validate() const {
    if (!(lambda > 0.0)) throw std::invalid_argument("EmaConfig: lambda must be positive");
    if (momentum < 0.0 || momentum > 1.0)
      throw std::invalid_argument("EmaConfig: momentum must lie in [0, 1]");
    if (!(denom_eps > 0.0)) throw std::invalid_argument("EmaConfig: denom_eps must be positive");
    if (k_bases == 0) throw std::invalid_argument("EmaConfig: k_bases must be positive");
  }
};

/// Per-iteration snapshots: bases[t] for t = 0..T, responsibilities and the
/// soft-assignment inner-product objective for t = 1..T.
template <typename T>
struct EmaTrace {
  std::vector<Mat<T>> bases;
  std::vector<Mat<T>> responsibilities;
  std::vector<double> objective;
};

template <typename T>
struct EmaResult {
  Mat<T> reconstruction;   // N x C
  Mat<T> responsibility;   // N x K, the final Z
  Mat<T> bases;            // K x C, the final mu
  EmaTrace<T> trace;
};

namespace detail {

/// M-step sums: S = Z^T X (K x C, counted as N*K*C MACs) and the per-basis
/// responsibility masses d_k = sum_n z_nk.
template <typename T>
std::pair<Mat<T>, std::vector<double>> am_sums(const Mat<T>& x, const Mat<T>& z) {
  Mat<T> s = matmul(transpose(z), x);
  std::vector<double> d(z.cols, 0.0);
  for (std::size_t n = 0; n < z.rows; ++n)
    for (std::size_t k = 0; k < z.cols; ++k) d[k] += static_cast<double>(z(n, k));
  return {std::move(s), std::move(d)};
}

template <typename T>
Mat<T> divide_rows(const Mat<T>& s, const std::vector<double>& d, double eps) {
  Mat<T> mu(s.rows, s.cols);
  for (std::size_t k = 0; k < s.rows; ++k) {
    const double inv = 1.0 / (d[k] + eps);
    for (std::size_t c = 0; c < s.cols; ++c)
      mu(k, c) = static_cast<T>(static_cast<double>(s(k, c)) * inv);
  }
  return mu;
}

}  // namespace detail

/// A_E: Z = softmax(lambda * X mu^T), row-wise over the K bases.
template <typename T>
Mat<T> responsibility_estimation(const Mat<T>& x, const Mat<T>& mu, double lambda) {
  if (x.cols != mu.cols)
    throw std::invalid_argument("responsibility_estimation: channel counts disagree (" +
                                shape_string(x) + " vs " + shape_string(mu) + ")");
  return softmax_rows(matmul(x, transpose(mu)), lambda);
}

/// A_M: mu_k = (sum_n z_nk x_n) / (sum_m z_mk + eps). The eps keeps bases
/// that receive no responsibility at zero instead of NaN.
template <typename T>
Mat<T> likelihood_maximization(const Mat<T>& x, const Mat<T>& z, double eps) {
  if (x.rows != z.rows)
    throw std::invalid_argument("likelihood_maximization: pixel counts disagree (" +
                                shape_string(x) + " vs " + shape_string(z) + ")");
  auto [s, d] = detail::am_sums(x, z);
  return detail::divide_rows(s, d, eps);
}

/// A_R: X~ = Z mu. Every output row is a convex combination of the bases.
template <typename T>
Mat<T> data_reestimation(const Mat<T>& z, const Mat<T>& mu) {
  if (z.cols != mu.rows)
    throw std::invalid_argument("data_reestimation: basis counts disagree (" + shape_string(z) +
                                " vs " + shape_string(mu) + ")");
  return matmul(z, mu);
}

/// Alternates A_E and A_M for cfg.iterations steps, then reconstructs with
/// A_R. With iterations = 0 the responsibilities are computed once from mu0
/// and the reconstruction uses mu0 directly (the full-attention special
/// case, see oracles::nonlocal_forward).
///
/// The trace records mu^(t) for t = 0..T and, for t >= 1, Z^(t) together
/// with the objective J^(t) = sum_nk z_nk <x_n, mu_k> evaluated at (Z^(t),
/// mu^(t)). J is diagnostic; it is only guaranteed to grow in the textbook
/// GMM setting (see oracles::gmm_em_identity).
template <typename T>
EmaResult<T> run_ema(const Mat<T>& x, const Mat<T>& mu0, const EmaConfig& cfg) {
  cfg.validate();
  if (mu0.rows != cfg.k_bases)
    throw std::invalid_argument("run_ema: mu0 has " + std::to_string(mu0.rows) +
                                " rows but cfg.k_bases = " + std::to_string(cfg.k_bases));
  if (x.cols != mu0.cols)
    throw std::invalid_argument("run_ema: channel counts disagree (" + shape_string(x) + " vs " +
                                shape_string(mu0) + ")");

  EmaResult<T> out;
  out.trace.bases.push_back(mu0);
  Mat<T> mu = mu0;
  Mat<T> z;
  for (std::size_t t = 1; t <= cfg.iterations; ++t) {
    z = responsibility_estimation(x, mu, cfg.lambda);
    auto [s, d] = detail::am_sums(x, z);
    mu = detail::divide_rows(s, d, cfg.denom_eps);
    if (cfg.base_norm == BaseNorm::l2) mu = l2_normalize_rows(mu);
    double objective = 0.0;
    for (std::size_t i = 0; i < s.data.size(); ++i)
      objective += static_cast<double>(s.data[i]) * static_cast<double>(mu.data[i]);
    out.trace.responsibilities.push_back(z);
    out.trace.bases.push_back(mu);
    out.trace.objective.push_back(objective);
  }
  if (cfg.iterations == 0) z = responsibility_estimation(x, mu0, cfg.lambda);
  out.reconstruction = data_reestimation(z, mu);
  out.responsibility = std::move(z);
  out.bases = std::move(mu);
  return out;
}

}  // namespace ema
