// vilong: verification, cost accounting, and runtime benchmarking for the
// attention library. Subcommands: check, flops, bench, forward, params.
// Exit codes: 0 success, 1 check failure, 2 usage error.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vilong/attention.hpp"
#include "vilong/complexity.hpp"
#include "vilong/model.hpp"
#include "vilong/ops.hpp"
#include "vilong/oracle.hpp"
#include "vilong/posenc.hpp"
#include "vilong/rng.hpp"
#include "vilong/serialize.hpp"
#include "vilong/tensor.hpp"

namespace {

using namespace vilong;

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::uint64_t fnv1a_tensor(const Tensor<float>& t, std::uint64_t h) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(t[i]);
    for (int shift = 0; shift < 32; shift += 8) {
      h ^= (bits >> shift) & 0xffu;
      h *= kFnvPrime;
    }
  }
  return h;
}

ModelConfig resolve_config(const std::string& arg) {
  if (std::filesystem::exists(arg)) return load_config_file(arg);
  return registry_lookup(arg);
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
}

// ---------------------------------------------------------------------------
// check

struct CheckArgs {
  std::vector<std::string> mechanisms{"all"};
  std::size_t grid_max = 8;
  std::uint64_t seed = 7;
  bool f64 = false;
};

struct CheckLine {
  bool pass = false;
  std::string mechanism;
  std::string suite;
  std::string detail;
};

AttentionSpec check_spec(AttnKind kind) {
  AttentionSpec spec;
  spec.kind = kind;
  spec.dim = 8;
  spec.heads = 2;
  spec.n_global = 1;
  spec.window = 3;
  spec.masking = MaskingMode::SlidingChunkNoPad;
  spec.shift_mode = 0;
  spec.linformer_k = 4;
  spec.sra_ratio = 2;
  spec.performer_features = 8;
  return spec;
}

// Masked mechanisms against the scalar-loop dense reference, through the
// full LayerNorm + residual wrapper. For ViL both the chunked and the
// masked-dense implementations are compared.
template <class T>
CheckLine dense_equivalence(AttnKind kind, const CheckArgs& args, double tolerance) {
  Rng rng(args.seed);
  CheckLine line{true, to_string(kind), "oracle equivalence", ""};
  std::size_t cases = 0;
  double max_diff = 0.0;

  struct VilMode {
    MaskingMode masking;
    int shift;
  };
  const std::vector<VilMode> vil_modes = {
      {MaskingMode::ExactSlidingWindow, 0}, {MaskingMode::SlidingChunkNoPad, 0},
      {MaskingMode::SlidingChunkNoPad, -1}, {MaskingMode::SlidingChunkNoPad, 5},
      {MaskingMode::SlidingChunkCyclic, 0}, {MaskingMode::SlidingChunkCyclic, 3},
  };
  const std::vector<VilMode> single = {{MaskingMode::SlidingChunkNoPad, 0}};

  std::vector<std::size_t> sides = {2, 3, 5};
  if (args.grid_max >= 6 && args.grid_max != 5) sides.push_back(args.grid_max);

  for (std::size_t H : sides) {
    for (std::size_t W : {H, H + 1}) {
      if (W > args.grid_max && W > 2) continue;
      for (std::size_t n_g : {std::size_t{0}, std::size_t{1}, std::size_t{2}}) {
        if (kind == AttnKind::Global && n_g == 0) continue;
        for (const VilMode& mode : kind == AttnKind::ViL ? vil_modes : single) {
          AttentionSpec spec = check_spec(kind);
          spec.n_global = n_g;
          spec.masking = mode.masking;
          spec.shift_mode = mode.shift;
          const std::size_t n = n_g + H * W;
          MsaParams<T> params = make_msa_params<T>(spec, H * W, rng);
          Tensor<T> tokens = trunc_normal_init<T>({n, spec.dim}, 1.0, rng);

          MaskBundle bundle;
          if (kind == AttnKind::ViL) {
            bundle = build_vil_mask_bundle(H, W, n_g, spec.window, spec.masking, spec.shift_mode);
          } else if (kind == AttnKind::Global) {
            bundle.mask = build_global_mask(H, W, n_g);
          } else {
            bundle.mask = build_full_mask(H, W, n_g);
          }
          const std::size_t max_disp =
              kind == AttnKind::ViL ? 2 * spec.chunk_size() : std::max(H, W);
          RpbTable<T> rpb = make_rpb_table<T>(spec.heads, max_disp, rng);
          const bool cyclic = spec.masking == MaskingMode::SlidingChunkCyclic;
          Tensor<T> bias = rpb_bias_matrix(rpb, H, W, n_g, bundle.mask.attend,
                                           kind == AttnKind::ViL && cyclic ? &bundle.dy : nullptr,
                                           kind == AttnKind::ViL && cyclic ? &bundle.dx : nullptr);

          Tensor<T> x_ln = layer_norm(tokens, params.ln_gamma, params.ln_beta);
          Tensor<T> ref = add(
              tokens, oracle::masked_dense_reference(x_ln, params, spec, bundle.mask, &bias));
          Tensor<T> impl = msa_forward(tokens, params, spec, H, W, &rpb);
          max_diff = std::max(max_diff, max_abs_diff(impl, ref));
          ++cases;
          if (kind == AttnKind::ViL) {
            Tensor<T> dense =
                add(tokens, vil_masked_dense_forward(x_ln, params, spec, H, W, &rpb));
            max_diff = std::max(max_diff, max_abs_diff(dense, ref));
            ++cases;
          }
        }
      }
    }
  }
  line.pass = max_diff < tolerance;
  line.detail = "cases=" + std::to_string(cases) + " max_diff=" + sci(max_diff) +
                " tolerance=" + sci(tolerance);
  return line;
}

CheckLine sweep_line(const CheckArgs& args) {
  oracle::SweepOptions opt;
  opt.grid.clear();
  for (std::size_t g = 2; g <= args.grid_max; ++g) opt.grid.push_back(g);
  opt.seed = args.seed;
  oracle::SweepResult r = oracle::chunk_dense_sweep(opt);
  CheckLine line;
  line.mechanism = "vil";
  line.suite = "chunk vs dense sweep";
  line.pass = r.failures == 0;
  line.detail = "cases=" + std::to_string(r.cases) + " max_fwd=" + sci(r.max_forward_diff) +
                " max_bwd=" + sci(r.max_backward_diff);
  if (!line.pass) line.detail += " first_failure: " + r.first_failure;
  return line;
}

CheckLine gradient_line(AttnKind kind, const CheckArgs& args) {
  oracle::GradCheckOptions opt;
  opt.spec = check_spec(kind);
  opt.H = 4;
  opt.W = 4;
  opt.seed = args.seed;
  opt.with_rpb =
      kind == AttnKind::Full || kind == AttnKind::ViL || kind == AttnKind::Global;
  oracle::GradCheckReport report = oracle::grad_check_msa(opt);
  CheckLine line;
  line.mechanism = to_string(kind);
  line.suite = "gradient check";
  line.pass = report.passed(1e-4);
  line.detail = "max_rel_err=" + sci(report.max_rel_err);
  if (const auto* worst = report.worst()) line.detail += " worst=" + worst->name;
  return line;
}

int cmd_check(const CheckArgs& args) {
  std::vector<AttnKind> kinds;
  for (const std::string& name : args.mechanisms) {
    if (name == "all") {
      kinds = {AttnKind::Full, AttnKind::ViL,       AttnKind::Global,
               AttnKind::Linformer, AttnKind::SRA, AttnKind::Performer};
      break;
    }
    AttnKind kind;
    if (!attn_kind_from_string(name, kind)) {
      std::cerr << "unknown mechanism \"" << name
                << "\"; expected full, vil, global, linformer, sra, performer or all\n";
      return 2;
    }
    kinds.push_back(kind);
  }

  std::vector<CheckLine> lines;
  for (AttnKind kind : kinds) {
    const bool masked =
        kind == AttnKind::Full || kind == AttnKind::ViL || kind == AttnKind::Global;
    if (masked) {
      lines.push_back(args.f64 ? dense_equivalence<double>(kind, args, 1e-10)
                               : dense_equivalence<float>(kind, args, 1e-5));
    }
    if (kind == AttnKind::ViL) lines.push_back(sweep_line(args));
    lines.push_back(gradient_line(kind, args));
  }

  bool all_pass = true;
  for (const CheckLine& line : lines) {
    all_pass = all_pass && line.pass;
    std::printf("%s  %-9s  %-22s  %s\n", line.pass ? "PASS" : "FAIL", line.mechanism.c_str(),
                line.suite.c_str(), line.detail.c_str());
  }
  std::printf("%s\n", all_pass ? "all checks passed" : "CHECK FAILURES");
  return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// flops / params

struct ReportArgs {
  std::string config;
  std::size_t resolution = 224;
  std::string csv;
};

void print_breakdown(const CostReport& report) {
  std::printf("%-6s %-12s %14s %16s %14s\n", "stage", "component", "params", "flops",
              "attn_pairs");
  for (const CostRow& row : report.breakdown) {
    const std::string stage =
        row.stage == kModelScope ? std::string("-") : std::to_string(row.stage);
    std::printf("%-6s %-12s %14llu %16llu %14llu\n", stage.c_str(), row.component.c_str(),
                static_cast<unsigned long long>(row.params),
                static_cast<unsigned long long>(row.flops),
                static_cast<unsigned long long>(row.attn_pairs));
  }
  std::printf("%-6s %-12s %14llu %16llu %14llu\n", "-", "total",
              static_cast<unsigned long long>(report.params),
              static_cast<unsigned long long>(report.flops),
              static_cast<unsigned long long>(report.attn_pairs));
}

int cmd_flops(const ReportArgs& args) {
  const ModelConfig config = resolve_config(args.config);
  const CostReport report = flops_model(config, args.resolution);
  std::printf("config %s  resolution %zu\n", args.config.c_str(), args.resolution);
  print_breakdown(report);
  std::printf("params %.3f M  flops %.3f G\n", double(report.params) / 1e6,
              double(report.flops) / 1e9);
  if (!args.csv.empty())
    write_text(args.csv, cost_report_csv(report, args.config, args.resolution));
  return 0;
}

int cmd_params(const ReportArgs& args) {
  const ModelConfig config = resolve_config(args.config);
  const CostReport report = flops_model(config, args.resolution);
  std::printf("config %s  resolution %zu\n", args.config.c_str(), args.resolution);
  print_breakdown(report);
  std::printf("params %llu (%.3f M)\n",
              static_cast<unsigned long long>(param_count(config, args.resolution)),
              double(report.params) / 1e6);
  if (!args.csv.empty())
    write_text(args.csv, cost_report_csv(report, args.config, args.resolution));
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::vector<std::string> mechanisms{"vil"};
  std::string impl = "chunk";
  std::vector<std::size_t> sides{28, 56};
  std::size_t d = 96;
  std::size_t heads = 3;
  std::size_t window = 15;
  std::size_t n_global = 1;
  std::size_t repeats = 3;
  bool backward = false;
  std::string csv;
  unsigned threads = 1;
  std::uint64_t seed = 1;
};

struct BenchRecord {
  std::string mechanism;
  std::string impl;
  std::size_t side = 0;
  std::uint64_t median_ns = 0, min_ns = 0, max_ns = 0;
  std::uint64_t pairs = 0;
};

AttentionSpec bench_spec(AttnKind kind, const BenchArgs& args) {
  AttentionSpec spec;
  spec.kind = kind;
  spec.dim = args.d;
  spec.heads = args.heads;
  spec.n_global = args.n_global;
  spec.window = args.window;
  spec.masking = MaskingMode::SlidingChunkNoPad;
  spec.shift_mode = 0;
  spec.linformer_k = 256;
  spec.sra_ratio = 2;
  spec.performer_features = 256;
  return spec;
}

BenchRecord bench_point(AttnKind kind, bool vil_dense, std::size_t side,
                        const BenchArgs& args) {
  AttentionSpec spec = bench_spec(kind, args);
  Rng rng(args.seed);
  const std::size_t n = spec.n_global + side * side;
  MsaParams<float> params = make_msa_params<float>(spec, side * side, rng);
  Tensor<float> tokens = trunc_normal_init<float>({n, spec.dim}, 1.0, rng);
  const Tensor<float> dout = Tensor<float>::full({n, spec.dim}, 1.0f);

  const RpbTable<float>* no_rpb = nullptr;
  auto run = [&] {
    if (kind == AttnKind::ViL && vil_dense) {
      Tensor<float> x_ln = layer_norm(tokens, params.ln_gamma, params.ln_beta);
      MsaCache<float> cache;
      Tensor<float> out = add(
          tokens, vil_masked_dense_forward(x_ln, params, spec, side, side, no_rpb,
                                           args.backward ? &cache : nullptr));
      if (args.backward) msa_backward(params, cache, dout);
      return out[0];
    }
    MsaCache<float> cache;
    Tensor<float> out =
        msa_forward(tokens, params, spec, side, side, no_rpb, args.backward ? &cache : nullptr);
    if (args.backward) msa_backward(params, cache, dout);
    return out[0];
  };

  volatile float sink = run();  // warmup
  std::vector<std::uint64_t> times;
  for (std::size_t r = 0; r < args.repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    sink = run();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
  }
  (void)sink;
  std::sort(times.begin(), times.end());

  BenchRecord rec;
  rec.mechanism = to_string(kind);
  rec.impl = kind == AttnKind::ViL ? (vil_dense ? "dense" : "chunk")
             : kind == AttnKind::Performer ? "favor"
                                           : "dense";
  rec.side = side;
  rec.median_ns = times[times.size() / 2];
  rec.min_ns = times.front();
  rec.max_ns = times.back();
  rec.pairs = attn_pairs(spec, side, side);
  return rec;
}

double loglog_slope(const std::vector<std::pair<double, double>>& pts) {
  double mx = 0, my = 0;
  for (const auto& [x, y] : pts) {
    mx += std::log(x);
    my += std::log(y);
  }
  mx /= pts.size();
  my /= pts.size();
  double num = 0, den = 0;
  for (const auto& [x, y] : pts) {
    num += (std::log(x) - mx) * (std::log(y) - my);
    den += (std::log(x) - mx) * (std::log(x) - mx);
  }
  return num / den;
}

int cmd_bench(const BenchArgs& args) {
  if (args.repeats < 3) {
    std::cerr << "bench needs --repeats >= 3\n";
    return 2;
  }
  if (args.impl != "dense" && args.impl != "chunk") {
    std::cerr << "unknown --impl \"" << args.impl << "\"; expected dense or chunk\n";
    return 2;
  }
  std::vector<AttnKind> kinds;
  for (const std::string& name : args.mechanisms) {
    AttnKind kind;
    if (!attn_kind_from_string(name, kind)) {
      std::cerr << "unknown mechanism \"" << name
                << "\"; expected full, vil, global, linformer, sra or performer\n";
      return 2;
    }
    kinds.push_back(kind);
  }
  set_compute_threads(args.threads);

  std::string csv =
      "mechanism,implementation,height,width,d,heads,window,n_g,repeats,"
      "median_ns,min_ns,max_ns,attn_pairs\n";
  std::printf("%-10s %-6s %6s %14s %14s %14s %14s\n", "mechanism", "impl", "side", "median_ns",
              "min_ns", "max_ns", "attn_pairs");
  for (AttnKind kind : kinds) {
    std::vector<std::pair<double, double>> pts;
    std::string impl_label;
    for (std::size_t side : args.sides) {
      BenchRecord rec = bench_point(kind, args.impl == "dense", side, args);
      impl_label = rec.impl;
      pts.emplace_back(double(side) * side, double(rec.median_ns));
      std::printf("%-10s %-6s %6zu %14llu %14llu %14llu %14llu\n", rec.mechanism.c_str(),
                  rec.impl.c_str(), rec.side, static_cast<unsigned long long>(rec.median_ns),
                  static_cast<unsigned long long>(rec.min_ns),
                  static_cast<unsigned long long>(rec.max_ns),
                  static_cast<unsigned long long>(rec.pairs));
      csv += rec.mechanism + "," + rec.impl + "," + std::to_string(side) + "," +
             std::to_string(side) + "," + std::to_string(args.d) + "," +
             std::to_string(args.heads) + "," + std::to_string(args.window) + "," +
             std::to_string(args.n_global) + "," + std::to_string(args.repeats) + "," +
             std::to_string(rec.median_ns) + "," + std::to_string(rec.min_ns) + "," +
             std::to_string(rec.max_ns) + "," + std::to_string(rec.pairs) + "\n";
    }
    if (pts.size() >= 2) {
      std::printf("slope mechanism=%s impl=%s points=%zu slope=%s\n", to_string(kind).c_str(),
                  impl_label.c_str(), pts.size(), fixed3(loglog_slope(pts)).c_str());
    }
  }
  if (!args.csv.empty()) write_text(args.csv, csv);
  return 0;
}

// ---------------------------------------------------------------------------
// forward

struct ForwardArgs {
  std::string config;
  std::size_t resolution = 224;
  std::uint64_t seed = 1;
  std::string head;
  std::string weights;
};

int cmd_forward(const ForwardArgs& args) {
  ModelConfig config = resolve_config(args.config);
  if (!args.head.empty() && !head_mode_from_string(args.head, config.head_mode)) {
    std::cerr << "unknown --head \"" << args.head << "\"; expected cls or avgpool\n";
    return 2;
  }
  Rng rng(args.seed);
  Model<float> model = make_model<float>(config, args.resolution, rng);
  if (!args.weights.empty()) load_weights(model, args.weights);

  Tensor<float> image =
      uniform_init<float>({args.resolution, args.resolution, config.in_channels}, 0.0, 1.0, rng);
  const ModelOutput<float> out = model_forward(image, model);

  std::size_t side = args.resolution;
  for (const StageConfig& s : config.stages) side /= s.patch;
  const std::size_t d_last = config.stages.back().attention.dim;

  double mn = out.logits[0], mx = out.logits[0], sum = 0;
  for (std::size_t i = 0; i < out.logits.size(); ++i) {
    mn = std::min(mn, double(out.logits[i]));
    mx = std::max(mx, double(out.logits[i]));
    sum += out.logits[i];
  }
  std::uint64_t hash = fnv1a_tensor(out.features, kFnvOffset);
  hash = fnv1a_tensor(out.logits, hash);

  std::printf("config %s  resolution %zu  seed %llu\n", args.config.c_str(), args.resolution,
              static_cast<unsigned long long>(args.seed));
  std::printf("final grid %zux%zux%zu\n", side, side, d_last);
  std::printf("logits [%zu]  min %.6g  mean %.6g  max %.6g\n", out.logits.size(), mn,
              sum / double(out.logits.size()), mx);
  std::printf("hash %016llx\n", static_cast<unsigned long long>(hash));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Multi-scale windowed-attention library tool.\n"
      "CSV schemas:\n"
      "  flops/params: config,resolution,component,stage,params,flops,attn_pairs\n"
      "  bench: mechanism,implementation,height,width,d,heads,window,n_g,repeats,"
      "median_ns,min_ns,max_ns,attn_pairs"};
  app.require_subcommand(1);

  CheckArgs check_args;
  CLI::App* check = app.add_subcommand(
      "check", "Run oracle-equivalence and gradient suites; exit 0 iff all pass");
  check->add_option("--mechanism", check_args.mechanisms,
                    "Mechanisms: full, vil, global, linformer, sra, performer, all")
      ->delimiter(',');
  check->add_option("--grid-max", check_args.grid_max, "Largest grid side in the sweeps");
  check->add_option("--seed", check_args.seed, "RNG seed");
  check->add_flag("--f64", check_args.f64, "Run equivalence suites in double precision");

  ReportArgs flops_args;
  CLI::App* flops = app.add_subcommand("flops", "Analytic FLOP and parameter report");
  flops->add_option("--config", flops_args.config, "Registry name or config file path")
      ->required();
  flops->add_option("--resolution", flops_args.resolution, "Input resolution");
  flops->add_option("--csv", flops_args.csv, "Write breakdown CSV to this path ('-' = stdout)");

  ReportArgs params_args;
  CLI::App* params = app.add_subcommand("params", "Parameter-count report");
  params->add_option("--config", params_args.config, "Registry name or config file path")
      ->required();
  params->add_option("--resolution", params_args.resolution, "Input resolution");
  params->add_option("--csv", params_args.csv, "Write breakdown CSV to this path ('-' = stdout)");

  BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand("bench", "Wall-clock scaling benchmark, CSV output");
  bench->add_option("--mechanism", bench_args.mechanisms,
                    "Mechanisms: full, vil, global, linformer, sra, performer")
      ->delimiter(',');
  bench->add_option("--impl", bench_args.impl, "ViL implementation: chunk (default) or dense");
  bench->add_option("--resolutions", bench_args.sides, "Feature-map side lengths")
      ->delimiter(',');
  bench->add_option("--d", bench_args.d, "Token dimension");
  bench->add_option("--heads", bench_args.heads, "Attention heads");
  bench->add_option("--window", bench_args.window, "ViL window size");
  bench->add_option("--n-global", bench_args.n_global, "Global token count");
  bench->add_option("--repeats", bench_args.repeats, "Timed repeats per point (>= 3)");
  bench->add_flag("--backward", bench_args.backward, "Time forward+backward");
  bench->add_option("--csv", bench_args.csv, "Write BenchRecord CSV to this path ('-' = stdout)");
  bench->add_option("--threads", bench_args.threads,
                    "Compute threads (affects timing only, never results)");
  bench->add_option("--seed", bench_args.seed, "RNG seed for inputs");

  ForwardArgs forward_args;
  CLI::App* forward = app.add_subcommand("forward", "Run a model forward on a seeded image");
  forward->add_option("--config", forward_args.config, "Registry name or config file path")
      ->required();
  forward->add_option("--resolution", forward_args.resolution, "Input resolution");
  forward->add_option("--seed", forward_args.seed, "RNG seed for weights and image");
  forward->add_option("--head", forward_args.head, "Classification head: cls or avgpool");
  forward->add_option("--weights", forward_args.weights, "Weight snapshot to load");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (check->parsed()) return cmd_check(check_args);
    if (flops->parsed()) return cmd_flops(flops_args);
    if (params->parsed()) return cmd_params(params_args);
    if (bench->parsed()) return cmd_bench(bench_args);
    if (forward->parsed()) return cmd_forward(forward_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
