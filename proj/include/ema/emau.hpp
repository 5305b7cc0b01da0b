#pragma once

#include <cstdint>

#include "ema/ema.hpp"
#include "ema/matrix.hpp"

namespace ema {

/// The two per-pixel linear maps (1x1 convolutions) around the EMA core.
/// No biases. The pre map deliberately has no activation so the projected
/// features, and hence the bases, can take negative values.
template <typename T>
struct EmauParams {
  Mat<T> w_pre;   // C x C
  Mat<T> w_post;  // C x C
};

template <typename T>
struct EmauResult {
  FeatureMap<T> y;
  Mat<T> bases;           // mu^(T)
  Mat<T> responsibility;  // Z^(T)
  EmaTrace<T> trace;
};

/// y = relu(x + w_post(EMA(w_pre(x)))), with the relu after the residual sum
/// optional so the block can be analyzed (and gradient-checked) as a purely
/// linear-plus-softmax pipeline.
template <typename T>
EmauResult<T> emau_forward(const FeatureMap<T>& x_in, const EmauParams<T>& params,
                           const Mat<T>& mu0, const EmaConfig& cfg,
                           bool relu_after_residual = true) {
  const std::size_t c = x_in.channels;
  if (params.w_pre.rows != c || params.w_pre.cols != c)
    throw std::invalid_argument("emau_forward: w_pre must be " + std::to_string(c) + "x" +
                                std::to_string(c) + ", got " + shape_string(params.w_pre));
  if (params.w_post.rows != c || params.w_post.cols != c)
    throw std::invalid_argument("emau_forward: w_post must be " + std::to_string(c) + "x" +
                                std::to_string(c) + ", got " + shape_string(params.w_post));

  const Mat<T> x0 = reshape_to_pixels(x_in);
  const Mat<T> x1 = matmul(x0, transpose(params.w_pre));
  EmaResult<T> ema = run_ema(x1, mu0, cfg);
  Mat<T> y = add(x0, matmul(ema.reconstruction, transpose(params.w_post)));
  if (relu_after_residual)
    for (T& v : y.data) v = v > T(0) ? v : T(0);

  EmauResult<T> out;
  out.y = reshape_to_map(y, x_in.height, x_in.width);
  out.bases = std::move(ema.bases);
  out.responsibility = std::move(ema.responsibility);
  out.trace = std::move(ema.trace);
  return out;
}

/// Analytic cost report in multiply-accumulates. The EMA term is the
/// closed-form (2T+1)*N*K*C; the comparison baseline is a single 3x3
/// convolution with C input and C output channels (9*N*C^2 MACs), softmax
/// and normalization costs excluded as lower order.
struct FlopReport {
  std::uint64_t macs_pre = 0;
  std::uint64_t macs_ema = 0;
  std::uint64_t macs_post = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t total_flops = 0;  // 2 * total_macs
  double ratio_vs_conv3x3 = 0.0;
};

inline FlopReport emau_flops(std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                             std::size_t t) {
  if (c == 0 || h == 0 || w == 0 || k == 0)
    throw std::invalid_argument("emau_flops: sizes must be positive");
  const std::uint64_t n = static_cast<std::uint64_t>(h) * w;
  FlopReport r;
  r.macs_pre = n * c * c;
  r.macs_post = n * c * c;
  r.macs_ema = (2 * static_cast<std::uint64_t>(t) + 1) * n * k * c;
  r.total_macs = r.macs_pre + r.macs_ema + r.macs_post;
  r.total_flops = 2 * r.total_macs;
  r.ratio_vs_conv3x3 =
      static_cast<double>(r.total_macs) / (9.0 * static_cast<double>(n) * c * c);
  return r;
}

struct EmauParamCount {
  std::uint64_t bases = 0;        // K*C, the only state EMA itself maintains
  std::uint64_t projections = 0;  // 2*C^2
  std::uint64_t total = 0;
};

inline EmauParamCount emau_param_count(std::size_t c, std::size_t k) {
  if (c == 0 || k == 0) throw std::invalid_argument("emau_param_count: sizes must be positive");
  EmauParamCount p;
  p.bases = static_cast<std::uint64_t>(k) * c;
  p.projections = 2 * static_cast<std::uint64_t>(c) * c;
  p.total = p.bases + p.projections;
  return p;
}

}  // namespace ema
