#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vilong/attention.hpp"
#include "vilong/model.hpp"

namespace vilong {

// One breakdown row of a cost report. Stage-scoped rows carry the 0-based
// stage index; model-scoped rows (the classifier head, the total) use
// kModelScope in the stage column.
inline constexpr std::size_t kModelScope = static_cast<std::size_t>(-1);

struct CostRow {
  std::size_t stage = kModelScope;
  std::string component;  // patch-embed | qkv/proj | attention | ffn | head
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t attn_pairs = 0;
};

struct CostReport {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t attn_pairs = 0;
  std::vector<CostRow> breakdown;  // row sums equal the totals above
};

// Number of (query, key) pairs the mechanism actually scores on an H x W
// grid. For ViL this is masking-aware: the exact-window modes count the
// in-bounds window of every token, the chunk modes count whole chunk
// neighborhoods (a boundary token in a chunk reaches more tokens than its
// exact window). Performer reports feature-space pairs m * (n_g + n_l).
std::uint64_t attn_pairs(const AttentionSpec& spec, std::size_t H, std::size_t W);

// Attention-memory proxy: scored pairs plus token storage (n_g + n_l) * d.
// A proxy for scale comparisons, not a bytes prediction.
std::uint64_t memory_theoretical(const AttentionSpec& spec, std::size_t H, std::size_t W);

// Multiply-accumulate counts for a full model at the given input resolution.
// One MAC = one FLOP; elementwise work (softmax, LayerNorm, GELU, bias and
// positional adds) is excluded. Parameter counts ride along per component.
CostReport flops_model(const ModelConfig& config, std::size_t resolution);

// CSV serialization with the fixed header
// config,resolution,component,stage,params,flops,attn_pairs. Breakdown rows
// come first, then one "total" row; model-scoped rows print "-" for stage.
std::string cost_report_csv(const CostReport& report, const std::string& config_name,
                            std::size_t resolution);

}  // namespace vilong
