#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "ema/matrix.hpp"

namespace ema::bench {

enum class Mechanism { ema, nonlocal };

struct ScalingRow {
  std::size_t n = 0;
  double time_s = 0.0;               // median over the timed repeats
  std::uint64_t macs = 0;            // analytic multiply-accumulate count
  std::uint64_t transient_elems = 0; // N*K for ema, N*N for nonlocal
};

using ScalingTable = std::vector<ScalingRow>;

/// Closed-form MAC counts matching the instrumented counter exactly.
/// run_ema executes T x (A_E + A_M) plus one A_R; with T = 0 the single A_E
/// runs outside the loop, hence the 2NKC special case.
std::uint64_t ema_mac_count(std::size_t n, std::size_t k, std::size_t c, std::size_t t);
/// Pairwise logits plus the weighted sum with g = identity.
std::uint64_t nonlocal_mac_count(std::size_t n, std::size_t c);

/// Times the mechanism's forward pass on seeded random data, strictly
/// single-threaded: one warm-up run, then `repeats` timed runs per N with
/// the median recorded. sizes must be strictly ascending and repeats >= 3.
ScalingTable time_scaling(Mechanism mechanism, const std::vector<std::size_t>& sizes,
                          std::size_t c, std::size_t k, std::size_t t, int repeats,
                          std::uint64_t seed = 0);

/// Least-squares slope of log(time) vs log(N). Requires at least 4 rows
/// spanning at least a factor of 8 in N.
double fit_scaling_exponent(const ScalingTable& table);

/// CSV with header `n,time_s,macs,transient_elems`, times printed with 9
/// significant digits.
void write_scaling_csv(std::ostream& out, const ScalingTable& table);

}  // namespace ema::bench
