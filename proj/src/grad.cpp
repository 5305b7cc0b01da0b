#include "ema/grad.hpp"

#include <cmath>

#include "ema/bases.hpp"

namespace ema::grad {
namespace {

// Forward pass with every intermediate the backward sweep needs. Built from
// the same primitives as emau_forward so the taped values are bit-identical
// to what the public forward computes.
struct Tape {
  MatD x0;                             // N x C reshaped input
  MatD x1;                             // after the pre projection
  std::vector<MatD> z;                 // Z^(t), t = 1..T
  std::vector<MatD> mu;                // mu^(t), t = 0..T
  std::vector<MatD> mu_hat;            // pre-normalization bases, t = 1..T
  std::vector<std::vector<double>> mass;  // d^(t)_k = sum_n z_nk
  MatD z_final;                        // Z^(T), or Z^(0) when T = 0
  MatD xt;                             // reconstruction
  MatD y_lin;                          // residual sum before the ReLU
};

Tape run_tape(const FeatureMap<double>& x_in, const EmauParams<double>& params, const MatD& mu0,
              const EmaConfig& cfg) {
  Tape tape;
  tape.x0 = reshape_to_pixels(x_in);
  tape.x1 = matmul(tape.x0, transpose(params.w_pre));
  tape.mu.push_back(mu0);
  for (std::size_t t = 1; t <= cfg.iterations; ++t) {
    MatD z = responsibility_estimation(tape.x1, tape.mu.back(), cfg.lambda);
    auto [s, d] = ema::detail::am_sums(tape.x1, z);
    MatD mu_hat = ema::detail::divide_rows(s, d, cfg.denom_eps);
    tape.mu.push_back(cfg.base_norm == BaseNorm::l2 ? l2_normalize_rows(mu_hat) : mu_hat);
    tape.mu_hat.push_back(std::move(mu_hat));
    tape.mass.push_back(std::move(d));
    tape.z.push_back(std::move(z));
  }
  tape.z_final = cfg.iterations == 0 ? responsibility_estimation(tape.x1, mu0, cfg.lambda)
                                     : tape.z.back();
  tape.xt = data_reestimation(tape.z_final, tape.mu.back());
  tape.y_lin = add(tape.x0, matmul(tape.xt, transpose(params.w_post)));
  return tape;
}

// Per row: gl = z .* (gz - <gz, z>).
MatD softmax_backward_rows(const MatD& z, const MatD& gz) {
  MatD gl(z.rows, z.cols);
  for (std::size_t i = 0; i < z.rows; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < z.cols; ++j) dot += gz(i, j) * z(i, j);
    for (std::size_t j = 0; j < z.cols; ++j) gl(i, j) = z(i, j) * (gz(i, j) - dot);
  }
  return gl;
}

// Backward of v -> v / max(||v||, eps) per row, evaluated at pre-norm rows.
MatD l2_normalize_backward_rows(const MatD& pre, const MatD& g, double eps = 1e-12) {
  MatD out(pre.rows, pre.cols);
  for (std::size_t i = 0; i < pre.rows; ++i) {
    double sq = 0.0, vg = 0.0;
    for (std::size_t j = 0; j < pre.cols; ++j) {
      sq += pre(i, j) * pre(i, j);
      vg += pre(i, j) * g(i, j);
    }
    const double nrm = std::sqrt(sq);
    if (nrm > eps) {
      const double inv = 1.0 / nrm;
      const double inv3 = inv * inv * inv;
      for (std::size_t j = 0; j < pre.cols; ++j)
        out(i, j) = g(i, j) * inv - pre(i, j) * vg * inv3;
    } else {
      for (std::size_t j = 0; j < pre.cols; ++j) out(i, j) = g(i, j) / eps;
    }
  }
  return out;
}

void accumulate(MatD& into, const MatD& term, double scale = 1.0) {
  for (std::size_t i = 0; i < into.data.size(); ++i) into.data[i] += scale * term.data[i];
}

}  // namespace

EmauGrads emau_backward(const FeatureMap<double>& x_in, const EmauParams<double>& params,
                        const MatD& mu0, const EmaConfig& cfg, bool relu_after_residual,
                        const FeatureMap<double>& upstream) {
  cfg.validate();
  if (upstream.channels != x_in.channels || upstream.height != x_in.height ||
      upstream.width != x_in.width)
    throw std::invalid_argument("emau_backward: upstream shape does not match x_in");

  const std::size_t n = x_in.height * x_in.width;
  const std::size_t c = x_in.channels;
  const std::size_t k = mu0.rows;
  const std::size_t t_total = cfg.iterations;

  Tape tape = run_tape(x_in, params, mu0, cfg);

  MatD g = reshape_to_pixels(upstream);
  if (relu_after_residual)
    for (std::size_t i = 0; i < g.data.size(); ++i)
      if (!(tape.y_lin.data[i] > 0.0)) g.data[i] = 0.0;  // subgradient 0 at the kink

  MatD gx0 = g;  // residual branch
  MatD gw_post = matmul(transpose(g), tape.xt);
  const MatD gxt = matmul(g, params.w_post);
  MatD gx1(n, c);

  MatD gz = matmul(gxt, transpose(tape.mu.back()));
  if (t_total == 0) {
    const MatD gl = softmax_backward_rows(tape.z_final, gz);
    accumulate(gx1, matmul(gl, mu0), cfg.lambda);
  } else {
    MatD gmu = matmul(transpose(tape.z_final), gxt);
    for (std::size_t t = t_total; t >= 1; --t) {
      if (t != t_total) gz = MatD(n, k);  // Z^(t) feeds only its own M step
      const MatD gmu_hat = cfg.base_norm == BaseNorm::l2
                               ? l2_normalize_backward_rows(tape.mu_hat[t - 1], gmu)
                               : gmu;
      // mu_hat_k = S_k / (d_k + eps) with S = Z^T X1, d_k = sum_n z_nk.
      const std::vector<double>& d = tape.mass[t - 1];
      MatD gs(k, c);
      std::vector<double> gd(k, 0.0);
      for (std::size_t j = 0; j < k; ++j) {
        const double inv = 1.0 / (d[j] + cfg.denom_eps);
        double dot = 0.0;
        for (std::size_t cc = 0; cc < c; ++cc) {
          gs(j, cc) = gmu_hat(j, cc) * inv;
          dot += tape.mu_hat[t - 1](j, cc) * gmu_hat(j, cc);
        }
        gd[j] = -dot * inv;
      }
      accumulate(gz, matmul(tape.x1, transpose(gs)));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) gz(i, j) += gd[j];
      accumulate(gx1, matmul(tape.z[t - 1], gs));
      const MatD gl = softmax_backward_rows(tape.z[t - 1], gz);
      accumulate(gx1, matmul(gl, tape.mu[t - 1]), cfg.lambda);
      if (t >= 2) {
        gmu = matmul(transpose(gl), tape.x1);
        for (double& v : gmu.data) v *= cfg.lambda;
      }
      // t == 1 would flow into mu^(0); dropped, mu0 is a constant.
    }
  }

  EmauGrads out;
  out.w_post = std::move(gw_post);
  out.w_pre = matmul(transpose(gx1), tape.x0);
  accumulate(gx0, matmul(gx1, params.w_pre));
  out.x_in = reshape_to_map(gx0, x_in.height, x_in.width);
  return out;
}

MatD finite_difference_grad(const std::function<double(const MatD&)>& f, const MatD& at,
                            double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_grad: h must be positive");
  MatD gradient(at.rows, at.cols);
  MatD probe = at;
  for (std::size_t i = 0; i < at.data.size(); ++i) {
    const double original = probe.data[i];
    probe.data[i] = original + h;
    const double plus = f(probe);
    probe.data[i] = original - h;
    const double minus = f(probe);
    probe.data[i] = original;
    gradient.data[i] = (plus - minus) / (2.0 * h);
  }
  return gradient;
}

namespace {

// Relative error with a floor so exactly-zero gradient entries compared
// against finite-difference noise (~1e-10) do not dominate the verdict.
GradCheckReport make_report(std::string name, MatD analytic, MatD numeric, double rel_tol) {
  GradCheckReport rep;
  rep.param = std::move(name);
  rep.max_abs_err = 0.0;
  rep.max_rel_err = 0.0;
  for (std::size_t i = 0; i < analytic.data.size(); ++i) {
    const double a = analytic.data[i];
    const double b = numeric.data[i];
    const double abs_err = std::abs(a - b);
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    rep.max_rel_err =
        std::max(rep.max_rel_err, abs_err / std::max({std::abs(a), std::abs(b), 1e-6}));
  }
  rep.passed = rep.max_rel_err < rel_tol;
  rep.analytic = std::move(analytic);
  rep.numeric = std::move(numeric);
  return rep;
}

MatD as_matrix(const FeatureMap<double>& fm) {
  MatD m(fm.channels, fm.height * fm.width);
  m.data = fm.data;
  return m;
}

}  // namespace

std::vector<GradCheckReport> gradcheck_emau(std::uint64_t seed, std::size_t n, std::size_t c,
                                            const EmaConfig& cfg, bool relu_after_residual,
                                            double step, double rel_tol) {
  if (n == 0 || n > 64 || c == 0 || c > 8 || cfg.k_bases > 4 || cfg.iterations > 3)
    throw std::invalid_argument(
        "gradcheck_emau: sizes capped at n <= 64, c <= 8, k <= 4, iters <= 3");
  cfg.validate();

  FeatureMap<double> x_in(c, 1, n);
  EmauParams<double> params{MatD(c, c), MatD(c, c)};
  MatD mu0;
  FeatureMap<double> functional(c, 1, n);

  // Resample until the evaluation point is smooth: pre-activations away
  // from the ReLU kink and M-step outputs away from zero norm.
  bool smooth = false;
  for (std::uint64_t attempt = 0; attempt < 100 && !smooth; ++attempt) {
    NormalSampler sampler(seed + attempt * 1000003ULL);
    for (double& v : x_in.data) v = 0.8 * sampler.next();
    for (double& v : params.w_pre.data) v = 0.5 * sampler.next();
    for (double& v : params.w_post.data) v = 0.5 * sampler.next();
    for (double& v : functional.data) v = sampler.next();
    mu0 = init_bases<double>(cfg.k_bases, c, seed + attempt * 7919ULL,
                             cfg.base_norm == BaseNorm::l2);
    const Tape tape = run_tape(x_in, params, mu0, cfg);
    smooth = true;
    if (relu_after_residual)
      for (double v : tape.y_lin.data) smooth = smooth && std::abs(v) > 1e-3;
    for (const MatD& mu_hat : tape.mu_hat) {
      for (std::size_t i = 0; i < mu_hat.rows; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < mu_hat.cols; ++j) sq += mu_hat(i, j) * mu_hat(i, j);
        smooth = smooth && sq > 1e-6;
      }
    }
  }
  if (!smooth) throw std::runtime_error("gradcheck_emau: no smooth sample point found");

  const auto objective = [&](const FeatureMap<double>& x, const EmauParams<double>& p) {
    const EmauResult<double> r = emau_forward(x, p, mu0, cfg, relu_after_residual);
    double acc = 0.0;
    for (std::size_t i = 0; i < r.y.data.size(); ++i) acc += functional.data[i] * r.y.data[i];
    return acc;
  };

  const EmauGrads analytic =
      emau_backward(x_in, params, mu0, cfg, relu_after_residual, functional);

  std::vector<GradCheckReport> reports;
  reports.push_back(make_report(
      "x_in", as_matrix(analytic.x_in),
      finite_difference_grad(
          [&](const MatD& m) {
            FeatureMap<double> x = x_in;
            x.data = m.data;
            return objective(x, params);
          },
          as_matrix(x_in), step),
      rel_tol));
  reports.push_back(make_report(
      "w_pre", analytic.w_pre,
      finite_difference_grad(
          [&](const MatD& m) {
            return objective(x_in, EmauParams<double>{m, params.w_post});
          },
          params.w_pre, step),
      rel_tol));
  reports.push_back(make_report(
      "w_post", analytic.w_post,
      finite_difference_grad(
          [&](const MatD& m) {
            return objective(x_in, EmauParams<double>{params.w_pre, m});
          },
          params.w_post, step),
      rel_tol));
  return reports;
}

}  // namespace ema::grad
