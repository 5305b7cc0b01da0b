#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace ema {

/// Thrown when a value that must be finite is NaN or infinite.
struct NonFiniteError : std::runtime_error {
  explicit NonFiniteError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

// Multiply-accumulate counter. Incremented by every routine that performs
// MACs (matmul and the hand-rolled attention loops); softmax, normalization
// and additions are not counted. Thread-local so concurrent callers do not
// interfere.
inline thread_local std::uint64_t g_mac_count = 0;

inline void mac_count_add(std::uint64_t n) { g_mac_count += n; }

}  // namespace detail

inline void mac_counter_reset() { detail::g_mac_count = 0; }
inline std::uint64_t mac_counter() { return detail::g_mac_count; }

/// Dense row-major matrix. Storage is float in the default pipeline and
/// double when gradient checking; arithmetic accumulates in double either way.
template <typename T>
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

  static Mat from_rows(std::size_t r, std::size_t c, std::initializer_list<T> values) {
    if (values.size() != r * c)
      throw std::invalid_argument("Mat::from_rows: value count does not match shape");
    Mat m(r, c);
    std::copy(values.begin(), values.end(), m.data.begin());
    return m;
  }

  T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Mat& o) const = default;
};

using MatF = Mat<float>;
using MatD = Mat<double>;

/// Channel-major feature map: all of channel 0's H*W plane first, then
/// channel 1, ...; within a plane rows are stored top to bottom.
template <typename T>
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(std::size_t c, std::size_t h, std::size_t w)
      : channels(c), height(h), width(w), data(c * h * w, T(0)) {}

  T& at(std::size_t c, std::size_t h, std::size_t w) {
    return data[(c * height + h) * width + w];
  }
  const T& at(std::size_t c, std::size_t h, std::size_t w) const {
    return data[(c * height + h) * width + w];
  }

  bool operator==(const FeatureMap& o) const = default;
};

template <typename T>
std::string shape_string(const Mat<T>& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

template <typename To, typename From>
Mat<To> mat_cast(const Mat<From>& m) {
  Mat<To> out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = static_cast<To>(m.data[i]);
  return out;
}

template <typename To, typename From>
FeatureMap<To> map_cast(const FeatureMap<From>& m) {
  FeatureMap<To> out(m.channels, m.height, m.width);
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = static_cast<To>(m.data[i]);
  return out;
}

template <typename T>
bool all_finite(const Mat<T>& m) {
  for (T v : m.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
bool all_finite(const FeatureMap<T>& m) {
  for (T v : m.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
Mat<T> identity_matrix(std::size_t n) {
  Mat<T> m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
  return m;
}

template <typename T>
Mat<T> transpose(const Mat<T>& m) {
  Mat<T> out(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

/// c = a * b with a fixed accumulation order (row by row, inner index
/// ascending) and 64-bit accumulators. Counts rows*inner*cols MACs.
template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
  if (a.cols != b.rows)
    throw std::invalid_argument("matmul: inner dimensions disagree (" + shape_string(a) + " * " +
                                shape_string(b) + ")");
  Mat<T> c(a.rows, b.cols);
  std::vector<double> acc(b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < a.cols; ++p) {
      const double aip = static_cast<double>(a(i, p));
      const T* brow = &b.data[p * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) acc[j] += aip * static_cast<double>(brow[j]);
    }
    for (std::size_t j = 0; j < b.cols; ++j) c(i, j) = static_cast<T>(acc[j]);
  }
  detail::mac_count_add(static_cast<std::uint64_t>(a.rows) * a.cols * b.cols);
  return c;
}

template <typename T>
Mat<T> add(const Mat<T>& a, const Mat<T>& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("add: shapes disagree (" + shape_string(a) + " vs " +
                                shape_string(b) + ")");
  Mat<T> c(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) c.data[i] = a.data[i] + b.data[i];
  return c;
}

/// Row-wise softmax of scale*m with max-subtraction, so inputs like
/// [1000, 999] stay finite. Each output row sums to 1.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& m, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("softmax_rows: scale must be positive");
  if (!all_finite(m)) throw NonFiniteError("softmax_rows: non-finite input");
  Mat<T> out(m.rows, m.cols);
  std::vector<double> e(m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m.cols; ++j) mx = std::max(mx, scale * static_cast<double>(m(i, j)));
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      e[j] = std::exp(scale * static_cast<double>(m(i, j)) - mx);
      sum += e[j];
    }
    for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = static_cast<T>(e[j] / sum);
  }
  return out;
}

/// Divides each row by max(||row||_2, eps); zero rows stay zero.
template <typename T>
Mat<T> l2_normalize_rows(const Mat<T>& m, double eps = 1e-12) {
  Mat<T> out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      const double v = static_cast<double>(m(i, j));
      sq += v * v;
    }
    const double inv = 1.0 / std::max(std::sqrt(sq), eps);
    for (std::size_t j = 0; j < m.cols; ++j)
      out(i, j) = static_cast<T>(static_cast<double>(m(i, j)) * inv);
  }
  return out;
}

/// Numerical rank by completely pivoted Gaussian elimination in double
/// precision: each step pivots on the largest remaining entry (rows and
/// columns), and pivots are counted against tol * (largest pivot
/// magnitude). Complete pivoting keeps elimination growth near 1, so the
/// rank of a float-stored low-rank product is detected reliably at
/// tol = 1e-6; row pivoting alone lets storage noise grow past that
/// threshold on a few percent of random instances. Cheap and adequate for
/// the rank bounds this library asserts; not a substitute for an SVD.
template <typename T>
std::size_t numerical_rank(const Mat<T>& m, double tol = 1e-6) {
  if (!(tol > 0.0)) throw std::invalid_argument("numerical_rank: tol must be positive");
  if (m.rows == 0 || m.cols == 0) return 0;
  Mat<double> w = mat_cast<double>(m);
  std::vector<double> pivots;
  const std::size_t steps = std::min(w.rows, w.cols);
  for (std::size_t step = 0; step < steps; ++step) {
    std::size_t bi = step, bj = step;
    double best = 0.0;
    for (std::size_t i = step; i < w.rows; ++i)
      for (std::size_t j = step; j < w.cols; ++j) {
        const double a = std::abs(w(i, j));
        if (a > best) {
          best = a;
          bi = i;
          bj = j;
        }
      }
    if (best == 0.0) break;
    if (bi != step)
      for (std::size_t j = 0; j < w.cols; ++j) std::swap(w(step, j), w(bi, j));
    if (bj != step)
      for (std::size_t i = 0; i < w.rows; ++i) std::swap(w(i, step), w(i, bj));
    pivots.push_back(best);
    for (std::size_t i = step + 1; i < w.rows; ++i) {
      const double f = w(i, step) / w(step, step);
      if (f == 0.0) continue;
      for (std::size_t j = step; j < w.cols; ++j) w(i, j) -= f * w(step, j);
    }
  }
  if (pivots.empty()) return 0;
  const double largest = *std::max_element(pivots.begin(), pivots.end());
  std::size_t rank = 0;
  for (double p : pivots)
    if (p > tol * largest) ++rank;
  return rank;
}

/// Pixel n = h*W + w carries the channel vector at spatial position (h, w).
template <typename T>
Mat<T> reshape_to_pixels(const FeatureMap<T>& fm) {
  const std::size_t n = fm.height * fm.width;
  Mat<T> pm(n, fm.channels);
  for (std::size_t c = 0; c < fm.channels; ++c)
    for (std::size_t p = 0; p < n; ++p) pm(p, c) = fm.data[c * n + p];
  return pm;
}

template <typename T>
FeatureMap<T> reshape_to_map(const Mat<T>& pm, std::size_t h, std::size_t w) {
  if (pm.rows != h * w)
    throw std::invalid_argument("reshape_to_map: " + std::to_string(pm.rows) +
                                " pixels do not fill a " + std::to_string(h) + "x" +
                                std::to_string(w) + " map");
  FeatureMap<T> fm(pm.cols, h, w);
  const std::size_t n = h * w;
  for (std::size_t c = 0; c < pm.cols; ++c)
    for (std::size_t p = 0; p < n; ++p) fm.data[c * n + p] = pm(p, c);
  return fm;
}

template <typename T>
double max_abs_diff(const Mat<T>& a, const Mat<T>& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("max_abs_diff: shapes disagree (" + shape_string(a) + " vs " +
                                shape_string(b) + ")");
  double d = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    d = std::max(d, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
  return d;
}

/// Largest deviation of any row sum from 1; used to check row-stochasticity.
template <typename T>
double max_row_sum_deviation(const Mat<T>& m) {
  double dev = 0.0;
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += static_cast<double>(m(i, j));
    dev = std::max(dev, std::abs(s - 1.0));
  }
  return dev;
}

template <typename T>
std::size_t row_argmax(const Mat<T>& m, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < m.cols; ++j)
    if (m(row, j) > m(row, best)) best = j;
  return best;
}

}  // namespace ema
