#include "ema/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "ema/bases.hpp"
#include "ema/ema.hpp"
#include "ema/oracles.hpp"

namespace ema::bench {
namespace {

// Keeps the optimizer from discarding untimed results.
volatile double g_sink = 0.0;

MatF random_pixels(std::size_t n, std::size_t c, std::uint64_t seed) {
  NormalSampler sampler(seed);
  MatF x(n, c);
  for (float& v : x.data) v = static_cast<float>(sampler.next());
  return x;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::uint64_t ema_mac_count(std::size_t n, std::size_t k, std::size_t c, std::size_t t) {
  const std::uint64_t nkc = static_cast<std::uint64_t>(n) * k * c;
  return t == 0 ? 2 * nkc : (2 * static_cast<std::uint64_t>(t) + 1) * nkc;
}

std::uint64_t nonlocal_mac_count(std::size_t n, std::size_t c) {
  return 2 * static_cast<std::uint64_t>(n) * n * c;
}

ScalingTable time_scaling(Mechanism mechanism, const std::vector<std::size_t>& sizes,
                          std::size_t c, std::size_t k, std::size_t t, int repeats,
                          std::uint64_t seed) {
  if (sizes.empty()) throw std::invalid_argument("time_scaling: empty size list");
  for (std::size_t i = 1; i < sizes.size(); ++i)
    if (sizes[i] <= sizes[i - 1])
      throw std::invalid_argument("time_scaling: sizes must be strictly ascending");
  if (repeats < 3) throw std::invalid_argument("time_scaling: repeats must be at least 3");

  oracles::NonLocalConfig<float> nl_cfg;
  if (mechanism == Mechanism::nonlocal && sizes.back() > nl_cfg.n_cap)
    throw std::invalid_argument("time_scaling: N = " + std::to_string(sizes.back()) +
                                " exceeds the nonlocal cap of " + std::to_string(nl_cfg.n_cap));

  EmaConfig cfg;
  cfg.k_bases = k;
  cfg.iterations = t;
  cfg.base_norm = BaseNorm::none;

  ScalingTable table;
  for (std::size_t n : sizes) {
    const MatF x = random_pixels(n, c, seed ^ (0x9e3779b97f4a7c15ULL * (n + 1)));
    const MatF mu0 = init_bases<float>(k, c, seed + 1, false);

    const auto run_once = [&]() {
      if (mechanism == Mechanism::ema) {
        const EmaResult<float> r = run_ema(x, mu0, cfg);
        g_sink = g_sink + static_cast<double>(r.reconstruction.data[0]);
      } else {
        const MatF y = nonlocal_forward(x, nl_cfg);
        g_sink = g_sink + static_cast<double>(y.data[0]);
      }
    };

    run_once();  // warm-up
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(repeats));
    for (int r = 0; r < repeats; ++r) {
      const auto start = std::chrono::steady_clock::now();
      run_once();
      const auto stop = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double>(stop - start).count());
    }

    ScalingRow row;
    row.n = n;
    row.time_s = median(std::move(times));
    row.macs = mechanism == Mechanism::ema ? ema_mac_count(n, k, c, t) : nonlocal_mac_count(n, c);
    row.transient_elems = mechanism == Mechanism::ema ? static_cast<std::uint64_t>(n) * k
                                                      : static_cast<std::uint64_t>(n) * n;
    table.push_back(row);
  }
  return table;
}

double fit_scaling_exponent(const ScalingTable& table) {
  if (table.size() < 4)
    throw std::invalid_argument("fit_scaling_exponent: need at least 4 rows, got " +
                                std::to_string(table.size()));
  const double span = static_cast<double>(table.back().n) / static_cast<double>(table.front().n);
  if (span < 8.0)
    throw std::invalid_argument("fit_scaling_exponent: sizes must span at least a factor of 8");
  for (const ScalingRow& row : table)
    if (!(row.time_s > 0.0))
      throw std::invalid_argument("fit_scaling_exponent: non-positive time for N = " +
                                  std::to_string(row.n));

  double mx = 0.0, my = 0.0;
  for (const ScalingRow& row : table) {
    mx += std::log(static_cast<double>(row.n));
    my += std::log(row.time_s);
  }
  mx /= static_cast<double>(table.size());
  my /= static_cast<double>(table.size());
  double sxy = 0.0, sxx = 0.0;
  for (const ScalingRow& row : table) {
    const double dx = std::log(static_cast<double>(row.n)) - mx;
    sxy += dx * (std::log(row.time_s) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

void write_scaling_csv(std::ostream& out, const ScalingTable& table) {
  out << "n,time_s,macs,transient_elems\n";
  char buf[64];
  for (const ScalingRow& row : table) {
    std::snprintf(buf, sizeof(buf), "%.9g", row.time_s);
    out << row.n << "," << buf << "," << row.macs << "," << row.transient_elems << "\n";
  }
}

}  // namespace ema::bench
