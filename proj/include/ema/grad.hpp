#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ema/emau.hpp"
#include "ema/matrix.hpp"

namespace ema::grad {

struct EmauGrads {
  FeatureMap<double> x_in;
  MatD w_pre;
  MatD w_post;
};

/// Exact reverse-mode derivatives of emau_forward in double precision,
/// unrolled through all T iterations: softmax, M-step normalization,
/// optional L2 row normalization, both projections and the residual sum.
/// mu0 is treated as a constant (it is maintained by moving averaging, not
/// by backpropagation), so no gradient is returned for it.
EmauGrads emau_backward(const FeatureMap<double>& x_in, const EmauParams<double>& params,
                        const MatD& mu0, const EmaConfig& cfg, bool relu_after_residual,
                        const FeatureMap<double>& upstream);

/// Central differences (f(x + h e) - f(x - h e)) / (2h) per coordinate.
MatD finite_difference_grad(const std::function<double(const MatD&)>& f, const MatD& at,
                            double h);

struct GradCheckReport {
  std::string param;   // "x_in", "w_pre" or "w_post"
  MatD analytic;       // x_in gradients are reported as a C x (H*W) matrix
  MatD numeric;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool passed = false;
};

/// Compares emau_backward against the finite-difference oracle on a seeded
/// random instance with N = H*W pixels laid out as a 1 x n map. Inputs are
/// resampled until they sit away from ReLU kinks and zero-norm bases, so
/// the function is smooth at the evaluation point. Sizes are capped
/// (n <= 64, c <= 8, K <= 4, T <= 3) to keep the oracle cheap.
std::vector<GradCheckReport> gradcheck_emau(std::uint64_t seed, std::size_t n, std::size_t c,
                                            const EmaConfig& cfg,
                                            bool relu_after_residual = true, double step = 1e-5,
                                            double rel_tol = 1e-4);

}  // namespace ema::grad
