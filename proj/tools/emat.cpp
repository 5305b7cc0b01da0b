// emat: command-line front end for the EM attention library. Subcommands
// cover running the operator, oracle comparisons, FLOP accounting, scaling
// benchmarks, gradient checks and responsibility-map export. Exit codes:
// 0 success, 2 usage error, 3 input-format error, 4 numeric failure,
// 5 gradcheck failure.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ema/bases.hpp"
#include "ema/bench.hpp"
#include "ema/ema.hpp"
#include "ema/emau.hpp"
#include "ema/grad.hpp"
#include "ema/oracles.hpp"
#include "ema/tensor_io.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitInputFormat = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitGradcheck = 5;

struct GradcheckFailure : std::runtime_error {
  GradcheckFailure() : std::runtime_error("gradient check failed") {}
};

// Flag-level semantic problems discovered after parsing; mapped to the
// usage exit code.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

ema::io::TensorData load_tensor(const std::string& path) {
  ema::io::TensorData t = ema::io::read_tensor_file(path);
  for (float v : t.values)
    if (!std::isfinite(v)) throw ema::NonFiniteError("'" + path + "': non-finite payload value");
  return t;
}

ema::MatF load_matrix(const std::string& path) {
  const ema::io::TensorData t = load_tensor(path);
  if (t.dims.size() != 2)
    throw std::invalid_argument("'" + path + "': expected a 2-D tensor, got " +
                                std::to_string(t.dims.size()) + " dims");
  return ema::io::tensor_as_matrix(t);
}

double frobenius(const ema::MatF& m) {
  double sq = 0.0;
  for (float v : m.data) sq += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sq);
}

struct RunArgs {
  std::string input, output, bases, dump_z, w_pre, w_post;
  std::uint64_t init_seed = 0;
  std::size_t k = 64;
  bool k_explicit = false;
  double lambda = 1.0;
  std::size_t iters = 3;
  std::string normalize = "none";
  double alpha = 0.9;
  double eps = 1e-6;
  bool emau = false;
};

int cmd_run(const RunArgs& a) {
  ema::EmaConfig cfg;
  cfg.k_bases = a.k;
  cfg.lambda = a.lambda;
  cfg.iterations = a.iters;
  cfg.momentum = a.alpha;
  cfg.denom_eps = a.eps;
  cfg.base_norm = a.normalize == "l2" ? ema::BaseNorm::l2 : ema::BaseNorm::none;
  cfg.validate();  // flag-level validation before any file is touched

  const ema::io::TensorData t = load_tensor(a.input);
  ema::FeatureMap<float> fm;
  bool spatial = false;
  if (t.dims.size() == 3) {
    fm = ema::io::tensor_as_feature_map(t);
    spatial = true;
  } else if (t.dims.size() == 2) {
    fm = ema::reshape_to_map(ema::io::tensor_as_matrix(t), t.dims[0], 1);
  } else {
    throw std::invalid_argument("'" + a.input + "': --input must be a 2-D or 3-D tensor");
  }

  ema::MatF mu0;
  std::size_t k = a.k;
  if (!a.bases.empty()) {
    mu0 = load_matrix(a.bases);
    if (!a.k_explicit) k = mu0.rows;  // adopt the file's basis count
    if (mu0.rows != k)
      throw std::invalid_argument("'" + a.bases + "': has " + std::to_string(mu0.rows) +
                                  " bases but --k is " + std::to_string(k));
    if (mu0.cols != fm.channels)
      throw std::invalid_argument("'" + a.bases + "': channel count " +
                                  std::to_string(mu0.cols) + " does not match --input (" +
                                  std::to_string(fm.channels) + ")");
  } else {
    mu0 = ema::init_bases<float>(k, fm.channels, a.init_seed, cfg.base_norm == ema::BaseNorm::l2);
  }
  cfg.k_bases = k;

  ema::MatF result_pixels;
  ema::MatF z;
  if (a.emau) {
    ema::EmauParams<float> params{load_matrix(a.w_pre), load_matrix(a.w_post)};
    ema::EmauResult<float> r = ema::emau_forward(fm, params, mu0, cfg);
    result_pixels = ema::reshape_to_pixels(r.y);
    z = std::move(r.responsibility);
  } else {
    ema::EmaResult<float> r = ema::run_ema(ema::reshape_to_pixels(fm), mu0, cfg);
    result_pixels = std::move(r.reconstruction);
    z = std::move(r.responsibility);
  }
  if (!ema::all_finite(result_pixels) || !ema::all_finite(z))
    throw ema::NonFiniteError("run: non-finite values in the result");

  if (spatial)
    ema::io::write_tensor_file(a.output, ema::reshape_to_map(result_pixels, fm.height, fm.width));
  else
    ema::io::write_tensor_file(a.output, result_pixels);
  if (!a.dump_z.empty()) ema::io::write_tensor_file(a.dump_z, z);

  std::cout << "k=" << k << "\n"
            << "lambda=" << fmt_double(a.lambda) << "\n"
            << "iters=" << a.iters << "\n"
            << "alpha=" << fmt_double(a.alpha) << "\n"
            << "eps=" << fmt_double(a.eps) << "\n"
            << "kernel=" << ema::to_string(cfg.kernel) << "\n"
            << "base_norm=" << ema::to_string(cfg.base_norm) << "\n"
            << "seed=" << a.init_seed << "\n"
            << "mode=" << (a.emau ? "emau" : "ema") << "\n"
            << "input=" << a.input << "\n"
            << "bases=" << a.bases << "\n"
            << "output=" << a.output << "\n"
            << "dump_z=" << a.dump_z << "\n"
            << "w_pre=" << a.w_pre << "\n"
            << "w_post=" << a.w_post << "\n";
  return 0;
}

struct BenchArgs {
  std::string mode = "ema";
  std::vector<std::size_t> sizes;
  std::size_t c = 64, k = 64, iters = 3;
  int repeats = 3;
  std::string csv;
};

int cmd_bench(const BenchArgs& a) {
  const auto mechanism =
      a.mode == "ema" ? ema::bench::Mechanism::ema : ema::bench::Mechanism::nonlocal;
  ema::bench::ScalingTable table;
  try {
    table = ema::bench::time_scaling(mechanism, a.sizes, a.c, a.k, a.iters, a.repeats);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string(e.what()) + " (check --sizes/--repeats/--mode)");
  }
  std::ostringstream csv;
  ema::bench::write_scaling_csv(csv, table);
  std::cout << csv.str();
  if (!a.csv.empty()) {
    std::ofstream out(a.csv, std::ios::trunc);
    if (!out) throw std::runtime_error("bench: cannot open '" + a.csv + "' for writing");
    out << csv.str();
  }
  return 0;
}

struct GradcheckArgs {
  std::size_t n = 12, c = 5, k = 3, iters = 2;
  std::uint64_t seed = 0;
  std::string normalize = "none";
  bool no_relu = false;
  bool csv = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  ema::EmaConfig cfg;
  cfg.k_bases = a.k;
  cfg.iterations = a.iters;
  cfg.base_norm = a.normalize == "l2" ? ema::BaseNorm::l2 : ema::BaseNorm::none;
  const auto reports = ema::grad::gradcheck_emau(a.seed, a.n, a.c, cfg, !a.no_relu);
  bool all_passed = true;
  if (a.csv) {
    std::cout << "param,max_rel_err,max_abs_err,passed\n";
    for (const auto& r : reports) {
      std::cout << r.param << "," << fmt9(r.max_rel_err) << "," << fmt9(r.max_abs_err) << ","
                << (r.passed ? 1 : 0) << "\n";
      all_passed = all_passed && r.passed;
    }
  } else {
    std::printf("%-8s %14s %14s  %s\n", "param", "max_rel_err", "max_abs_err", "verdict");
    for (const auto& r : reports) {
      std::printf("%-8s %14.6e %14.6e  %s\n", r.param.c_str(), r.max_rel_err, r.max_abs_err,
                  r.passed ? "pass" : "FAIL");
      all_passed = all_passed && r.passed;
    }
  }
  if (!all_passed) throw GradcheckFailure();
  return 0;
}

struct VisualizeArgs {
  std::string z, out;
  std::size_t height = 0, width = 0, basis = 0;
};

int cmd_visualize(const VisualizeArgs& a) {
  ema::io::export_responsibility_map(load_matrix(a.z), a.basis, a.height, a.width, a.out);
  return 0;
}

struct OracleArgs {
  std::string which;
  std::string input, output, bases;
  std::size_t k = 3, iters = 10;
  std::uint64_t init_seed = 0;
  std::string mode = "euclidean";
};

int cmd_oracle(const OracleArgs& a) {
  const ema::MatF x = load_matrix(a.input);
  ema::MatF mu0;
  if (a.which == "gmm" || a.which == "kmeans") {
    if (!a.bases.empty()) {
      mu0 = load_matrix(a.bases);
      if (mu0.cols != x.cols)
        throw std::invalid_argument("'" + a.bases + "': channel count does not match --input");
    } else {
      mu0 = ema::init_bases<float>(a.k, x.cols, a.init_seed, false);
    }
  }

  if (a.which == "gmm") {
    const ema::oracles::GmmTrace trace = ema::oracles::gmm_em_identity(
        ema::mat_cast<double>(x), ema::mat_cast<double>(mu0), a.iters);
    std::cout << "iter,log_likelihood\n";
    for (std::size_t i = 0; i < trace.log_likelihood.size(); ++i)
      std::cout << i + 1 << "," << fmt_double(trace.log_likelihood[i]) << "\n";
    if (!a.output.empty())
      ema::io::write_tensor_file(a.output, ema::mat_cast<float>(trace.means.back()));
  } else if (a.which == "kmeans") {
    const auto mode = a.mode == "spherical" ? ema::oracles::KmeansMode::spherical
                                            : ema::oracles::KmeansMode::euclidean;
    const auto r = ema::oracles::kmeans(x, mu0, a.iters, mode);
    std::cout << "iter,objective\n";
    for (std::size_t i = 0; i < r.objective.size(); ++i)
      std::cout << i + 1 << "," << fmt9(r.objective[i]) << "\n";
    if (!a.output.empty()) ema::io::write_tensor_file(a.output, r.means);
  } else if (a.which == "nonlocal") {
    ema::oracles::NonLocalConfig<float> cfg;
    const ema::MatF y = ema::oracles::nonlocal_forward(x, cfg);
    std::cout << "n,c,frobenius_norm\n"
              << y.rows << "," << y.cols << "," << fmt9(frobenius(y)) << "\n";
    if (!a.output.empty()) ema::io::write_tensor_file(a.output, y);
  } else {  // a2
    ema::NormalSampler sampler(a.init_seed);
    ema::oracles::A2Params<float> p;
    p.w_phi = ema::MatF(x.cols, x.cols);
    p.w_theta = ema::MatF(x.cols, a.k);
    p.w_rho = ema::MatF(x.cols, a.k);
    const double scale = std::sqrt(2.0 / static_cast<double>(x.cols));
    for (float& v : p.w_phi.data) v = static_cast<float>(sampler.next() * scale);
    for (float& v : p.w_theta.data) v = static_cast<float>(sampler.next() * scale);
    for (float& v : p.w_rho.data) v = static_cast<float>(sampler.next() * scale);
    const ema::MatF y = ema::oracles::a2_forward(x, p);
    std::cout << "n,c,frobenius_norm\n"
              << y.rows << "," << y.cols << "," << fmt9(frobenius(y)) << "\n";
    if (!a.output.empty()) ema::io::write_tensor_file(a.output, y);
  }
  return 0;
}

struct FlopsArgs {
  std::size_t c = 512, k = 64, iters = 3, h = 1, w = 1;
  std::string csv;
};

int cmd_flops(const FlopsArgs& a) {
  const ema::FlopReport r = ema::emau_flops(a.c, a.h, a.w, a.k, a.iters);
  std::cout << "macs_pre=" << r.macs_pre << "\n"
            << "macs_ema=" << r.macs_ema << "\n"
            << "macs_post=" << r.macs_post << "\n"
            << "total_macs=" << r.total_macs << "\n"
            << "total_flops=" << r.total_flops << "\n"
            << "ratio_vs_conv3x3=" << fmt_double(r.ratio_vs_conv3x3) << "\n";
  if (!a.csv.empty()) {
    std::ofstream out(a.csv, std::ios::trunc);
    if (!out) throw std::runtime_error("flops: cannot open '" + a.csv + "' for writing");
    out << "macs_pre,macs_ema,macs_post,total_macs,total_flops,ratio_vs_conv3x3\n"
        << r.macs_pre << "," << r.macs_ema << "," << r.macs_post << "," << r.total_macs << ","
        << r.total_flops << "," << fmt9(r.ratio_vs_conv3x3) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EM attention operator toolkit"};
  app.require_subcommand(1);

  RunArgs run_args;
  CLI::App* run = app.add_subcommand("run", "Run the EMA operator (or a full EMAU block)");
  run->add_option("--input", run_args.input, "Input tensor (2-D pixel matrix or 3-D feature map)")
      ->required();
  run->add_option("--output", run_args.output, "Output tensor path")->required();
  auto* opt_bases = run->add_option("--bases", run_args.bases, "Initial bases (K x C tensor)");
  auto* opt_seed = run->add_option("--init-seed", run_args.init_seed,
                                   "Seed for Kaiming-initialized bases")
                       ->capture_default_str();
  opt_bases->excludes(opt_seed);
  auto* opt_k = run->add_option("--k", run_args.k, "Number of bases")->capture_default_str();
  run->add_option("--lambda", run_args.lambda, "Logit scale")->capture_default_str();
  run->add_option("--iters", run_args.iters, "EM iterations T")->capture_default_str();
  run->add_option("--normalize", run_args.normalize, "Base normalization")
      ->check(CLI::IsMember({"l2", "none"}))
      ->capture_default_str();
  run->add_option("--alpha", run_args.alpha, "Maintenance momentum")->capture_default_str();
  run->add_option("--eps", run_args.eps, "M-step denominator guard")->capture_default_str();
  run->add_option("--dump-z", run_args.dump_z, "Write final responsibilities (N x K tensor)");
  auto* opt_emau = run->add_flag("--emau", run_args.emau, "Run the full EMAU residual block");
  auto* opt_wpre = run->add_option("--w-pre", run_args.w_pre, "Pre-projection weights (C x C)");
  auto* opt_wpost = run->add_option("--w-post", run_args.w_post, "Post-projection weights (C x C)");
  opt_wpre->needs(opt_emau);
  opt_wpost->needs(opt_emau);
  opt_emau->needs(opt_wpre)->needs(opt_wpost);

  BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand("bench", "Time the forward pass across sizes");
  bench->add_option("--mode", bench_args.mode, "Mechanism to time")
      ->check(CLI::IsMember({"ema", "nonlocal"}))
      ->capture_default_str();
  bench->add_option("--sizes", bench_args.sizes, "Comma-separated pixel counts, ascending")
      ->required()
      ->delimiter(',');
  bench->add_option("--c", bench_args.c, "Channels")->capture_default_str();
  bench->add_option("--k", bench_args.k, "Bases (ema mode)")->capture_default_str();
  bench->add_option("--iters", bench_args.iters, "EM iterations (ema mode)")->capture_default_str();
  bench->add_option("--repeats", bench_args.repeats, "Timed repeats per size (>= 3)")
      ->capture_default_str();
  bench->add_option("--csv", bench_args.csv, "Also write the table to this CSV file");

  GradcheckArgs gc_args;
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Compare the analytic backward pass to finite differences");
  gradcheck->add_option("--n", gc_args.n, "Pixels")->check(CLI::Range(1, 64))->capture_default_str();
  gradcheck->add_option("--c", gc_args.c, "Channels")->check(CLI::Range(1, 8))->capture_default_str();
  gradcheck->add_option("--k", gc_args.k, "Bases")->check(CLI::Range(1, 4))->capture_default_str();
  gradcheck->add_option("--iters", gc_args.iters, "EM iterations")
      ->check(CLI::Range(0, 3))
      ->capture_default_str();
  gradcheck->add_option("--seed", gc_args.seed, "Sample seed")->capture_default_str();
  gradcheck->add_option("--normalize", gc_args.normalize, "Base normalization")
      ->check(CLI::IsMember({"l2", "none"}))
      ->capture_default_str();
  gradcheck->add_flag("--no-relu", gc_args.no_relu, "Disable the ReLU after the residual sum");
  gradcheck->add_flag("--csv", gc_args.csv, "Print reports as CSV instead of aligned text");

  VisualizeArgs vis_args;
  CLI::App* visualize =
      app.add_subcommand("visualize", "Export one responsibility column as a PGM image");
  visualize->add_option("--z", vis_args.z, "Responsibility tensor (N x K)")->required();
  visualize->add_option("--height", vis_args.height, "Image height")->required();
  visualize->add_option("--width", vis_args.width, "Image width")->required();
  visualize->add_option("--basis", vis_args.basis, "Basis column index")->capture_default_str();
  visualize->add_option("--out", vis_args.out, "Output PGM path")->required();

  OracleArgs oracle_args;
  CLI::App* oracle = app.add_subcommand("oracle", "Run a reference mechanism, trace as CSV");
  oracle->add_option("--which", oracle_args.which, "Oracle to run")
      ->check(CLI::IsMember({"gmm", "kmeans", "nonlocal", "a2"}))
      ->required();
  oracle->add_option("--input", oracle_args.input, "Input pixel matrix (N x C tensor)")->required();
  oracle->add_option("--k", oracle_args.k, "Components / bases / descriptors")
      ->capture_default_str();
  oracle->add_option("--iters", oracle_args.iters, "Iterations (gmm, kmeans)")
      ->capture_default_str();
  oracle->add_option("--bases", oracle_args.bases, "Initial means (gmm, kmeans)");
  oracle->add_option("--init-seed", oracle_args.init_seed, "Seed for generated means or weights")
      ->capture_default_str();
  oracle->add_option("--mode", oracle_args.mode, "K-means metric")
      ->check(CLI::IsMember({"euclidean", "spherical"}))
      ->capture_default_str();
  oracle->add_option("--output", oracle_args.output, "Write the oracle's result tensor here");

  FlopsArgs flops_args;
  CLI::App* flops = app.add_subcommand("flops", "Analytic MAC report for one EMAU block");
  flops->set_help_flag("--help", "Print this help message and exit");  // frees --h for height
  flops->add_option("--c", flops_args.c, "Channels")->capture_default_str();
  flops->add_option("--k", flops_args.k, "Bases")->capture_default_str();
  flops->add_option("--iters", flops_args.iters, "EM iterations T")->capture_default_str();
  flops->add_option("--h", flops_args.h, "Feature-map height")->capture_default_str();
  flops->add_option("--w", flops_args.w, "Feature-map width")->capture_default_str();
  flops->add_option("--csv", flops_args.csv, "Also write the report to this CSV file");

  try {
    app.parse(argc, argv);
    run_args.k_explicit = opt_k->count() > 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (run->parsed()) return cmd_run(run_args);
    if (bench->parsed()) return cmd_bench(bench_args);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_args);
    if (visualize->parsed()) return cmd_visualize(vis_args);
    if (oracle->parsed()) return cmd_oracle(oracle_args);
    if (flops->parsed()) return cmd_flops(flops_args);
  } catch (const GradcheckFailure& e) {
    std::cerr << "emat: " << e.what() << "\n";
    return kExitGradcheck;
  } catch (const UsageError& e) {
    std::cerr << "emat: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ema::io::TensorFormatError& e) {
    std::cerr << "emat: " << e.what() << "\n";
    return kExitInputFormat;
  } catch (const ema::NonFiniteError& e) {
    std::cerr << "emat: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "emat: " << e.what() << "\n";
    return kExitInputFormat;
  } catch (const std::exception& e) {
    std::cerr << "emat: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
