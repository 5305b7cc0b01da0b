#pragma once

#include <cstddef>
#include <vector>

#include "ema/ema.hpp"
#include "ema/matrix.hpp"

namespace ema::oracles {

/// GMM-EM history: means and responsibilities after each M step, and the
/// marginal log-likelihood of the means in effect during each E step (the
/// quantity EM provably does not decrease).
struct GmmTrace {
  std::vector<MatD> means;
  std::vector<MatD> responsibilities;
  std::vector<double> log_likelihood;
};

/// Textbook EM for a Gaussian mixture with identity covariance and uniform
/// mixing weights 1/K, in full double precision. A component whose
/// responsibility mass falls below 1e-12 keeps its previous mean.
GmmTrace gmm_em_identity(const MatD& x, const MatD& mu0, std::size_t iters);

/// Identical formula to data_reestimation, provided under the GMM name.
template <typename T>
Mat<T> gmm_reestimate(const Mat<T>& z, const Mat<T>& mu) {
  return data_reestimation(z, mu);
}

enum class KmeansMode { euclidean, spherical };

template <typename T>
struct KmeansResult {
  Mat<T> means;
  std::vector<std::size_t> assignments;                    // final
  std::vector<double> objective;                           // one value per iteration
  std::vector<std::vector<std::size_t>> assignment_history;  // one vector per iteration
};

/// Lloyd iterations. euclidean: nearest mean by squared distance, objective
/// is the summed squared distance (non-increasing). spherical: assign by
/// maximum inner product and renormalize updated means to unit length,
/// objective is the summed inner product. Ties go to the lowest basis index;
/// empty clusters keep their previous mean.
template <typename T>
KmeansResult<T> kmeans(const Mat<T>& x, const Mat<T>& mu0, std::size_t iters, KmeansMode mode) {
  if (x.cols != mu0.cols)
    throw std::invalid_argument("kmeans: channel counts disagree (" + shape_string(x) + " vs " +
                                shape_string(mu0) + ")");
  const std::size_t n = x.rows, k = mu0.rows, c = x.cols;
  KmeansResult<T> out;
  out.means = mu0;
  out.assignments.assign(n, 0);

  for (std::size_t it = 0; it < iters; ++it) {
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_score = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        double score = 0.0;
        if (mode == KmeansMode::euclidean) {
          for (std::size_t d = 0; d < c; ++d) {
            const double diff =
                static_cast<double>(x(i, d)) - static_cast<double>(out.means(j, d));
            score -= diff * diff;
          }
        } else {
          for (std::size_t d = 0; d < c; ++d)
            score += static_cast<double>(x(i, d)) * static_cast<double>(out.means(j, d));
        }
        if (j == 0 || score > best_score) {
          best_score = score;
          best = j;
        }
      }
      out.assignments[i] = best;
      objective += mode == KmeansMode::euclidean ? -best_score : best_score;
    }
    out.assignment_history.push_back(out.assignments);
    out.objective.push_back(objective);

    Mat<double> sums(k, c);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = out.assignments[i];
      ++counts[j];
      for (std::size_t d = 0; d < c; ++d) sums(j, d) += static_cast<double>(x(i, d));
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;
      for (std::size_t d = 0; d < c; ++d)
        out.means(j, d) = static_cast<T>(sums(j, d) / static_cast<double>(counts[j]));
    }
    if (mode == KmeansMode::spherical) out.means = l2_normalize_rows(out.means);
  }
  return out;
}

enum class ValueTransform { identity, linear };

/// Configuration of the full pairwise attention reference. The quadratic
/// cost makes a hard cap on N necessary.
template <typename T>
struct NonLocalConfig {
  Kernel kernel = Kernel::exp_inner_dot;
  ValueTransform g = ValueTransform::identity;
  Mat<T> g_weight;            // C x C, used when g == linear
  std::size_t n_cap = 16384;
};

/// y_i = sum_j softmax_j(x_i . x_j) g(x_j), evaluated row by row from the
/// definition (independent of the matmul-based EMA path it is compared
/// against). Counts 2*N^2*C MACs, plus N*C^2 when g is linear.
template <typename T>
Mat<T> nonlocal_forward(const Mat<T>& x, const NonLocalConfig<T>& cfg) {
  const std::size_t n = x.rows, c = x.cols;
  if (n > cfg.n_cap)
    throw std::invalid_argument("nonlocal_forward: N = " + std::to_string(n) +
                                " exceeds the O(N^2) cap of " + std::to_string(cfg.n_cap) +
                                "; use the EMA operator for inputs this large");
  Mat<T> values;
  if (cfg.g == ValueTransform::linear) {
    if (cfg.g_weight.rows != c || cfg.g_weight.cols != c)
      throw std::invalid_argument("nonlocal_forward: g_weight must be " + std::to_string(c) +
                                  "x" + std::to_string(c) + ", got " + shape_string(cfg.g_weight));
    values = matmul(x, transpose(cfg.g_weight));
  }
  const Mat<T>& g = cfg.g == ValueTransform::linear ? values : x;

  Mat<T> y(n, c);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < c; ++d)
        dot += static_cast<double>(x(i, d)) * static_cast<double>(x(j, d));
      w[j] = dot;
      mx = std::max(mx, dot);
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      w[j] = std::exp(w[j] - mx);
      norm += w[j];
    }
    for (std::size_t d = 0; d < c; ++d) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += w[j] * static_cast<double>(g(j, d));
      y(i, d) = static_cast<T>(acc / norm);
    }
  }
  detail::mac_count_add(2 * static_cast<std::uint64_t>(n) * n * c);
  return y;
}

/// The three 1x1 convolutions of the double-attention block. w_theta and
/// w_rho project onto the K descriptors; w_phi stays in feature space so
/// the gathered descriptors live in R^{K x C}.
template <typename T>
struct A2Params {
  Mat<T> w_phi;    // C x C
  Mat<T> w_theta;  // C x K
  Mat<T> w_rho;    // C x K, ignored when theta_rho_shared
  bool theta_rho_shared = false;
};

/// Y = sfm_K(X w_rho) [ sfm_N(X w_theta)^T (X w_phi) ]. The bracket gathers
/// position-normalized features into K descriptors; the outer softmax
/// distributes them per pixel. One-iteration gather/distribute attention,
/// related to run_ema with T = 1 but with a softmax-over-positions gather
/// instead of the responsibility-mass division, so elementwise equality
/// with EMA is not expected.
template <typename T>
Mat<T> a2_forward(const Mat<T>& x, const A2Params<T>& p) {
  const std::size_t c = x.cols;
  const Mat<T>& w_rho = p.theta_rho_shared ? p.w_theta : p.w_rho;
  if (p.w_phi.rows != c || p.w_phi.cols != c)
    throw std::invalid_argument("a2_forward: w_phi must be " + std::to_string(c) + "x" +
                                std::to_string(c) + ", got " + shape_string(p.w_phi));
  if (p.w_theta.rows != c)
    throw std::invalid_argument("a2_forward: w_theta must have " + std::to_string(c) +
                                " rows, got " + shape_string(p.w_theta));
  if (w_rho.rows != c || w_rho.cols != p.w_theta.cols)
    throw std::invalid_argument("a2_forward: w_rho shape " + shape_string(w_rho) +
                                " does not match w_theta " + shape_string(p.w_theta));

  const Mat<T> phi = matmul(x, p.w_phi);                                  // N x C
  const Mat<T> gather = softmax_rows(transpose(matmul(x, p.w_theta)), 1.0);  // K x N
  const Mat<T> distribute = softmax_rows(matmul(x, w_rho), 1.0);          // N x K
  return matmul(distribute, matmul(gather, phi));
}

}  // namespace ema::oracles
