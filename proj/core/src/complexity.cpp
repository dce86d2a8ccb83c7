#include "vilong/complexity.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include "chunk_geometry.hpp"

namespace vilong {

namespace {

std::uint64_t cells(std::size_t lo, std::size_t hi_exclusive, std::size_t bound) {
  const std::size_t hi = std::min(hi_exclusive, bound);
  return hi > lo ? hi - lo : 0;
}

// Pairs scored by the local window rows, exact-window variant: every token
// attends its in-bounds (window x window) neighborhood.
std::uint64_t exact_window_local_pairs(std::size_t H, std::size_t W, std::size_t window) {
  const std::size_t r = (window - 1) / 2;
  auto span = [r](std::size_t pos, std::size_t bound) -> std::uint64_t {
    const std::size_t lo = pos > r ? pos - r : 0;
    const std::size_t hi = std::min(pos + r, bound - 1);
    return hi - lo + 1;
  };
  std::uint64_t total = 0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) total += span(y, H) * span(x, W);
  return total;
}

// Pairs scored by the local window rows, chunked variant: every real cell of
// a chunk attends every real cell of the chunk's reachable neighbors, with
// wrapped duplicates collapsing to one target.
std::uint64_t chunk_local_pairs(std::size_t H, std::size_t W, const AttentionSpec& spec) {
  const detail::ChunkGrid grid =
      detail::ChunkGrid::make(H, W, spec.n_global, spec.window, spec.masking);
  const std::vector<int> slots = detail::active_slots(spec.shift_mode);
  const std::size_t w_c = grid.w_c;
  auto chunk_cells = [&](std::size_t cy, std::size_t cx) {
    return cells(cy * w_c, (cy + 1) * w_c, H) * cells(cx * w_c, (cx + 1) * w_c, W);
  };
  std::uint64_t total = 0;
  for (std::size_t cy = 0; cy < grid.gy; ++cy)
    for (std::size_t cx = 0; cx < grid.gx; ++cx) {
      std::set<std::pair<std::size_t, std::size_t>> targets;
      for (int slot : slots) {
        std::size_t ty = 0, tx = 0;
        if (grid.slot_target(cy, cx, slot, ty, tx)) targets.emplace(ty, tx);
      }
      std::uint64_t keys = 0;
      for (const auto& t : targets) keys += chunk_cells(t.first, t.second);
      total += chunk_cells(cy, cx) * keys;
    }
  return total;
}

struct MechExtras {
  std::uint64_t params = 0;  // parameters beyond the shared QKV/O block
  std::uint64_t flops = 0;   // projection MACs beyond the shared 4nd^2
};

MechExtras mechanism_extras(const AttentionSpec& spec, std::uint64_t n_l, std::uint64_t n) {
  const std::uint64_t d = spec.dim;
  MechExtras e;
  switch (spec.kind) {
    case AttnKind::Linformer:
      e.params = std::uint64_t(spec.linformer_k) * n_l;
      e.flops = 2 * std::uint64_t(spec.linformer_k) * n_l * d;  // K and V reductions
      break;
    case AttnKind::SRA:
      e.params = std::uint64_t(spec.sra_ratio) * spec.sra_ratio * d * d + 2 * d;
      e.flops = n_l * d * d;  // R x R stride-R reduction touches each cell once
      break;
    case AttnKind::Performer:
      e.params = std::uint64_t(spec.performer_features) * (d / spec.heads);
      e.flops = 2 * n * std::uint64_t(spec.performer_features) * d;  // feature maps of Q and K
      break;
    default:
      break;
  }
  return e;
}

}  // namespace

std::uint64_t attn_pairs(const AttentionSpec& spec, std::size_t H, std::size_t W) {
  validate_spec(spec);
  const std::uint64_t n_g = spec.n_global;
  const std::uint64_t n_l = std::uint64_t(H) * W;
  const std::uint64_t n = n_g + n_l;
  switch (spec.kind) {
    case AttnKind::Full:
      return n * n;
    case AttnKind::ViL: {
      const std::uint64_t local = spec.masking == MaskingMode::ExactSlidingWindow
                                      ? exact_window_local_pairs(H, W, spec.window)
                                      : chunk_local_pairs(H, W, spec);
      return n_g * n + n_l * n_g + local;
    }
    case AttnKind::Global:
      return n_g * n + n_l * (n_g + 1);
    case AttnKind::Linformer:
      return n * (spec.linformer_k + n_g);
    case AttnKind::SRA: {
      const std::uint64_t reduced = (H / spec.sra_ratio) * std::uint64_t(W / spec.sra_ratio);
      return n * (reduced + n_g);
    }
    case AttnKind::Performer:
      return std::uint64_t(spec.performer_features) * n;
  }
  throw std::logic_error("attn_pairs: unhandled attention kind");
}

std::uint64_t memory_theoretical(const AttentionSpec& spec, std::size_t H, std::size_t W) {
  const std::uint64_t n = std::uint64_t(spec.n_global) + std::uint64_t(H) * W;
  return attn_pairs(spec, H, W) + n * spec.dim;
}

CostReport flops_model(const ModelConfig& config, std::size_t resolution) {
  validate_config(config);
  CostReport report;
  auto push = [&report](std::size_t stage, const char* component, std::uint64_t params,
                        std::uint64_t flops, std::uint64_t pairs) {
    report.breakdown.push_back({stage, component, params, flops, pairs});
    report.params += params;
    report.flops += flops;
    report.attn_pairs += pairs;
  };
  std::uint64_t grid = resolution;
  std::uint64_t c = config.in_channels;
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    const StageConfig& s = config.stages[i];
    if (grid % s.patch != 0) {
      throw std::invalid_argument("flops_model: patch size " + std::to_string(s.patch) +
                                  " does not divide the stage input grid " +
                                  std::to_string(grid));
    }
    grid /= s.patch;
    const AttentionSpec& spec = s.attention;
    const std::uint64_t d = spec.dim, h = spec.heads, n_g = spec.n_global;
    const std::uint64_t n_l = grid * grid, n = n_g + n_l, p = s.patch;
    const std::uint64_t blocks = s.blocks;

    std::uint64_t embed_params = p * p * c * d + d + 2 * d + n_g * d;
    if (config.pos_mode == PosMode::APE) {
      embed_params += 2 * grid * (d / 2) + n_g * d;
    }
    push(i, "patch-embed", embed_params, n_l * p * p * c * d, 0);

    const MechExtras extras = mechanism_extras(spec, n_l, n);
    push(i, "qkv/proj", blocks * (4 * d * d + 6 * d + extras.params),
         blocks * (4 * n * d * d + extras.flops), 0);

    std::uint64_t rpb_params = 0;
    if (config.pos_mode == PosMode::RPB &&
        (spec.kind == AttnKind::Full || spec.kind == AttnKind::ViL ||
         spec.kind == AttnKind::Global)) {
      const std::uint64_t disp = spec.kind == AttnKind::ViL ? 2 * spec.chunk_size() : grid;
      rpb_params = h * (2 * disp - 1) * (2 * disp - 1) + 3 * h;
    }
    const std::uint64_t pairs = attn_pairs(spec, grid, grid);
    push(i, "attention", rpb_params, blocks * 2 * pairs * (d / h) * h, blocks * pairs);

    push(i, "ffn", blocks * (8 * d * d + 7 * d), blocks * 8 * n * d * d, 0);
    c = d;
  }
  const std::uint64_t d_last = config.stages.back().attention.dim;
  const std::uint64_t classes = config.num_classes;
  push(kModelScope, "head", 2 * d_last + d_last * classes + classes, d_last * classes, 0);
  return report;
}

std::string cost_report_csv(const CostReport& report, const std::string& config_name,
                            std::size_t resolution) {
  std::string out = "config,resolution,component,stage,params,flops,attn_pairs\n";
  auto row = [&](const std::string& component, std::size_t stage, std::uint64_t params,
                 std::uint64_t flops, std::uint64_t pairs) {
    out += config_name;
    out += ',';
    out += std::to_string(resolution);
    out += ',';
    out += component;
    out += ',';
    out += stage == kModelScope ? std::string("-") : std::to_string(stage);
    out += ',';
    out += std::to_string(params);
    out += ',';
    out += std::to_string(flops);
    out += ',';
    out += std::to_string(pairs);
    out += '\n';
  };
  for (const CostRow& r : report.breakdown)
    row(r.component, r.stage, r.params, r.flops, r.attn_pairs);
  row("total", kModelScope, report.params, report.flops, report.attn_pairs);
  return out;
}

}  // namespace vilong
