#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ema/matrix.hpp"

namespace ema {

/// Standard-normal sampler with a fixed, portable construction: mt19937_64
/// drives Box-Muller. mt19937_64 output is pinned by the C++ standard and
/// the Box-Muller transform is spelled out here, so a seed reproduces the
/// same stream on every platform (up to libm rounding of exp/log/cos/sin).
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1], u2 in [0, 1): 53-bit mantissas from one engine draw each.
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 rng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Kaiming-style initial bases: entries i.i.d. N(0, 2/C) with fan-in C (the
/// bases multiply C-dimensional pixel vectors). Deterministic given the
/// seed. With normalize, rows are scaled to unit length afterwards.
template <typename T>
Mat<T> init_bases(std::size_t k, std::size_t c, std::uint64_t seed, bool normalize) {
  if (k == 0 || c == 0) throw std::invalid_argument("init_bases: k and c must be positive");
  NormalSampler sampler(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(c));
  Mat<T> mu(k, c);
  for (std::size_t i = 0; i < mu.data.size(); ++i)
    mu.data[i] = static_cast<T>(sampler.next() * stddev);
  if (normalize) mu = l2_normalize_rows(mu);
  return mu;
}

/// Running elementwise mean of same-shaped base matrices, accumulated in
/// 64-bit precision.
template <typename T>
class BatchBasesAverage {
 public:
  void accumulate(const Mat<T>& mu) {
    if (count_ == 0) {
      sum_ = Mat<double>(mu.rows, mu.cols);
    } else if (sum_.rows != mu.rows || sum_.cols != mu.cols) {
      throw std::invalid_argument("BatchBasesAverage: shape changed mid-batch (" +
                                  shape_string(sum_) + " vs " + shape_string(mu) + ")");
    }
    for (std::size_t i = 0; i < mu.data.size(); ++i)
      sum_.data[i] += static_cast<double>(mu.data[i]);
    ++count_;
  }

  std::size_t count() const { return count_; }

  Mat<T> mean() const {
    if (count_ == 0) throw std::invalid_argument("BatchBasesAverage: mean of an empty batch");
    Mat<T> m(sum_.rows, sum_.cols);
    const double inv = 1.0 / static_cast<double>(count_);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<T>(sum_.data[i] * inv);
    return m;
  }

 private:
  Mat<double> sum_;
  std::size_t count_ = 0;
};

template <typename T>
Mat<T> batch_average(const std::vector<Mat<T>>& mus) {
  if (mus.empty()) throw std::invalid_argument("batch_average: empty list");
  BatchBasesAverage<T> acc;
  for (const auto& m : mus) acc.accumulate(m);
  return acc.mean();
}

/// mu0 <- alpha*mu0 + (1-alpha)*mu_bar, elementwise in 64-bit. alpha = 1
/// leaves mu0 bit-identical, alpha = 0 returns mu_bar bit-identical.
template <typename T>
Mat<T> moving_average_update(const Mat<T>& mu0, const Mat<T>& mu_bar, double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("moving_average_update: alpha must lie in [0, 1]");
  if (!mu0.same_shape(mu_bar))
    throw std::invalid_argument("moving_average_update: shapes disagree (" + shape_string(mu0) +
                                " vs " + shape_string(mu_bar) + ")");
  if (alpha == 1.0) return mu0;
  if (alpha == 0.0) return mu_bar;
  Mat<T> out(mu0.rows, mu0.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<T>(alpha * static_cast<double>(mu0.data[i]) +
                                 (1.0 - alpha) * static_cast<double>(mu_bar.data[i]));
  return out;
}

/// Owns the maintained mu^(0). Single-writer: converged per-image bases may
/// be produced concurrently and collected into a batch, but absorb_batch is
/// applied by one thread between batches. At inference the held bases stay
/// fixed; there is no gradient path into them.
template <typename T>
class BasesMaintainer {
 public:
  BasesMaintainer(Mat<T> initial, double alpha) : mu0_(std::move(initial)), alpha_(alpha) {
    if (alpha < 0.0 || alpha > 1.0)
      throw std::invalid_argument("BasesMaintainer: alpha must lie in [0, 1]");
  }

  const Mat<T>& current() const { return mu0_; }
  double alpha() const { return alpha_; }

  void absorb_batch(const std::vector<Mat<T>>& batch_mu_t) {
    mu0_ = moving_average_update(mu0_, batch_average(batch_mu_t), alpha_);
  }

 private:
  Mat<T> mu0_;
  double alpha_;
};

}  // namespace ema
