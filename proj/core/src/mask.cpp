#include <map>
#include <stdexcept>
#include <string>

#include "chunk_geometry.hpp"
#include "vilong/attention.hpp"

namespace vilong {

std::string to_string(AttnKind kind) {
  switch (kind) {
    case AttnKind::Full: return "full";
    case AttnKind::ViL: return "vil";
    case AttnKind::Global: return "global";
    case AttnKind::Linformer: return "linformer";
    case AttnKind::SRA: return "sra";
    case AttnKind::Performer: return "performer";
  }
  return "?";
}

std::string to_string(MaskingMode mode) {
  switch (mode) {
    case MaskingMode::ExactSlidingWindow: return "exact-window";
    case MaskingMode::SlidingChunkNoPad: return "chunk-nopad";
    case MaskingMode::SlidingChunkCyclic: return "chunk-cyclic";
  }
  return "?";
}

bool attn_kind_from_string(const std::string& name, AttnKind& out) {
  for (AttnKind k : {AttnKind::Full, AttnKind::ViL, AttnKind::Global, AttnKind::Linformer,
                     AttnKind::SRA, AttnKind::Performer}) {
    if (name == to_string(k)) {
      out = k;
      return true;
    }
  }
  return false;
}

bool masking_mode_from_string(const std::string& name, MaskingMode& out) {
  for (MaskingMode m : {MaskingMode::ExactSlidingWindow, MaskingMode::SlidingChunkNoPad,
                        MaskingMode::SlidingChunkCyclic}) {
    if (name == to_string(m)) {
      out = m;
      return true;
    }
  }
  return false;
}

void validate_spec(const AttentionSpec& spec) {
  if (spec.heads == 0 || spec.dim == 0 || spec.dim % spec.heads != 0) {
    throw std::invalid_argument("attention spec: dim " + std::to_string(spec.dim) +
                                " must be a positive multiple of heads " +
                                std::to_string(spec.heads));
  }
  if (spec.kind == AttnKind::ViL) {
    if (spec.window % 2 == 0 || spec.window == 0) {
      throw std::invalid_argument("attention spec: window must be odd, got " +
                                  std::to_string(spec.window));
    }
    if (spec.shift_mode < -1 || spec.shift_mode > 8) {
      throw std::invalid_argument("attention spec: shift mode must be in [-1, 8], got " +
                                  std::to_string(spec.shift_mode));
    }
    if (spec.masking == MaskingMode::ExactSlidingWindow && spec.shift_mode != 0) {
      throw std::invalid_argument(
          "attention spec: shift modes are defined only for the sliding-chunk masking modes");
    }
  }
  if (spec.kind == AttnKind::Linformer && spec.linformer_k == 0) {
    throw std::invalid_argument("attention spec: Linformer projection dim must be positive");
  }
  if (spec.kind == AttnKind::SRA && spec.sra_ratio == 0) {
    throw std::invalid_argument("attention spec: SRA reduction ratio must be positive");
  }
  if (spec.kind == AttnKind::Performer && spec.performer_features == 0) {
    throw std::invalid_argument("attention spec: Performer feature count must be positive");
  }
}

std::uint64_t AttnMask::popcount() const {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < attend.size(); ++i) n += attend[i] ? 1 : 0;
  return n;
}

namespace {

void require_grid(std::size_t H, std::size_t W) {
  if (H == 0 || W == 0) throw std::invalid_argument("attention mask: grid extents must be >= 1");
}

AttnMask blank_mask(std::size_t H, std::size_t W, std::size_t n_g) {
  AttnMask m;
  m.n_global = n_g;
  m.height = H;
  m.width = W;
  m.attend = Tensor<std::uint8_t>({m.tokens(), m.tokens()});
  return m;
}

void fill_global_rows_cols(AttnMask& m) {
  const std::size_t n = m.tokens();
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k < n; ++k) {
      if (q < m.n_global || k < m.n_global) m.attend(q, k) = 1;
    }
  }
}

// Core of the ViL mask; displacement maps are filled only when requested.
MaskBundle build_vil(std::size_t H, std::size_t W, std::size_t n_g, std::size_t window,
                     MaskingMode masking, int shift_mode, bool want_disp) {
  require_grid(H, W);
  if (window % 2 == 0 || window == 0) {
    throw std::invalid_argument("build_vil_mask: window must be odd, got " +
                                std::to_string(window));
  }
  if (shift_mode < -1 || shift_mode > 8) {
    throw std::invalid_argument("build_vil_mask: shift mode must be in [-1, 8], got " +
                                std::to_string(shift_mode));
  }
  if (masking == MaskingMode::ExactSlidingWindow && shift_mode != 0) {
    throw std::invalid_argument(
        "build_vil_mask: shift modes are defined only for the sliding-chunk masking modes");
  }

  const std::size_t n_l = H * W;
  MaskBundle bundle;
  bundle.mask = blank_mask(H, W, n_g);
  fill_global_rows_cols(bundle.mask);
  if (want_disp) {
    bundle.dy = Tensor<std::int32_t>({n_l, n_l});
    bundle.dx = Tensor<std::int32_t>({n_l, n_l});
  }
  auto& attend = bundle.mask.attend;

  if (masking == MaskingMode::ExactSlidingWindow) {
    const std::int64_t hw = static_cast<std::int64_t>((window - 1) / 2);
    for (std::size_t q = 0; q < n_l; ++q) {
      const std::int64_t qy = static_cast<std::int64_t>(q / W);
      const std::int64_t qx = static_cast<std::int64_t>(q % W);
      for (std::size_t k = 0; k < n_l; ++k) {
        const std::int64_t dy = static_cast<std::int64_t>(k / W) - qy;
        const std::int64_t dx = static_cast<std::int64_t>(k % W) - qx;
        if (dy < -hw || dy > hw || dx < -hw || dx > hw) continue;
        attend(n_g + q, n_g + k) = 1;
        if (want_disp) {
          bundle.dy(q, k) = static_cast<std::int32_t>(dy);
          bundle.dx(q, k) = static_cast<std::int32_t>(dx);
        }
      }
    }
    return bundle;
  }

  const auto grid = detail::ChunkGrid::make(H, W, n_g, window, masking);
  const auto slots = detail::active_slots(shift_mode);
  const std::size_t w_c = grid.w_c;

  for (std::size_t cy = 0; cy < grid.gy; ++cy) {
    for (std::size_t cx = 0; cx < grid.gx; ++cx) {
      // Unique reachable key chunks with the slots that reach them (cyclic
      // wrapping can map several slots onto one chunk).
      std::map<std::pair<std::size_t, std::size_t>, std::vector<int>> targets;
      for (int slot : slots) {
        std::size_t ty, tx;
        if (grid.slot_target(cy, cx, slot, ty, tx)) targets[{ty, tx}].push_back(slot);
      }
      for (std::size_t qyi = 0; qyi < w_c; ++qyi) {
        const std::size_t qy = cy * w_c + qyi;
        if (qy >= H) continue;
        for (std::size_t qxi = 0; qxi < w_c; ++qxi) {
          const std::size_t qx = cx * w_c + qxi;
          if (qx >= W) continue;
          const std::size_t q = qy * W + qx;
          for (const auto& [chunk, hitting] : targets) {
            for (std::size_t kyi = 0; kyi < w_c; ++kyi) {
              const std::size_t ky = chunk.first * w_c + kyi;
              if (ky >= H) continue;
              for (std::size_t kxi = 0; kxi < w_c; ++kxi) {
                const std::size_t kx = chunk.second * w_c + kxi;
                if (kx >= W) continue;
                const std::size_t k = ky * W + kx;
                attend(n_g + q, n_g + k) = 1;
                if (want_disp) {
                  std::int32_t dy = 0, dx = 0;
                  grid.canonical_displacement(hitting, qy, qx, ky, kx, dy, dx);
                  bundle.dy(q, k) = dy;
                  bundle.dx(q, k) = dx;
                }
              }
            }
          }
        }
      }
    }
  }
  return bundle;
}

}  // namespace

AttnMask build_vil_mask(std::size_t H, std::size_t W, std::size_t n_g, std::size_t window,
                        MaskingMode masking, int shift_mode) {
  return build_vil(H, W, n_g, window, masking, shift_mode, false).mask;
}

MaskBundle build_vil_mask_bundle(std::size_t H, std::size_t W, std::size_t n_g,
                                 std::size_t window, MaskingMode masking, int shift_mode) {
  return build_vil(H, W, n_g, window, masking, shift_mode, true);
}

AttnMask build_full_mask(std::size_t H, std::size_t W, std::size_t n_g) {
  require_grid(H, W);
  AttnMask m = blank_mask(H, W, n_g);
  m.attend.fill(1);
  return m;
}

AttnMask build_global_mask(std::size_t H, std::size_t W, std::size_t n_g) {
  require_grid(H, W);
  AttnMask m = blank_mask(H, W, n_g);
  fill_global_rows_cols(m);
  for (std::size_t t = 0; t < m.tokens(); ++t) m.attend(t, t) = 1;
  return m;
}

int sample_shift_mode(Rng& rng, std::uint64_t step, std::uint64_t total_steps,
                      double switch_fraction) {
  if (switch_fraction < 0.0 || switch_fraction > 1.0) {
    throw std::invalid_argument("sample_shift_mode: switch_fraction must be in [0, 1], got " +
                                std::to_string(switch_fraction));
  }
  if (static_cast<double>(step) < switch_fraction * static_cast<double>(total_steps)) {
    return 1 + static_cast<int>(rng.next_below(8));
  }
  return 0;
}

}  // namespace vilong
