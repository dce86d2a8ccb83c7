#pragma once

// Internal helpers shared by the mask builder and the sliding-chunk kernel:
// the fixed 3x3 chunk-slot ordering, padded chunk-grid arithmetic, and the
// canonical displacement rule for cyclically wrapped pairs.

#include <cstdint>
#include <cstdlib>
#include <vector>

#include "vilong/attention.hpp"

namespace vilong::detail {

// Slot 0 is the own chunk; slots 1..8 are the neighbors in row-major order
// (NW, N, NE, W, E, SW, S, SE). Shift mode i in 1..8 activates slot i next to
// the own chunk; mode 0 activates all nine; mode -1 only slot 0.
inline constexpr int kSlotDy[9] = {0, -1, -1, -1, 0, 0, 1, 1, 1};
inline constexpr int kSlotDx[9] = {0, -1, 0, 1, -1, 1, -1, 0, 1};

inline std::vector<int> active_slots(int shift_mode) {
  std::vector<int> slots{0};
  if (shift_mode == 0) {
    for (int s = 1; s <= 8; ++s) slots.push_back(s);
  } else if (shift_mode >= 1 && shift_mode <= 8) {
    slots.push_back(shift_mode);
  }
  return slots;
}

struct ChunkGrid {
  std::size_t H = 0, W = 0, n_g = 0, w_c = 1;
  std::size_t gy = 0, gx = 0;  // chunk-grid extents over the padded grid
  MaskingMode masking = MaskingMode::SlidingChunkNoPad;

  static ChunkGrid make(std::size_t H, std::size_t W, std::size_t n_g, std::size_t window,
                        MaskingMode masking) {
    ChunkGrid g;
    g.H = H;
    g.W = W;
    g.n_g = n_g;
    g.w_c = (window + 1) / 2;
    g.gy = (H + g.w_c - 1) / g.w_c;
    g.gx = (W + g.w_c - 1) / g.w_c;
    g.masking = masking;
    return g;
  }

  // Key chunk reached from query chunk (cy,cx) through a slot; false when the
  // slot leaves the grid (non-cyclic modes only; cyclic wraps).
  bool slot_target(std::size_t cy, std::size_t cx, int slot, std::size_t& ty,
                   std::size_t& tx) const {
    long y = static_cast<long>(cy) + kSlotDy[slot];
    long x = static_cast<long>(cx) + kSlotDx[slot];
    if (masking == MaskingMode::SlidingChunkCyclic) {
      long my = static_cast<long>(gy), mx = static_cast<long>(gx);
      ty = static_cast<std::size_t>(((y % my) + my) % my);
      tx = static_cast<std::size_t>(((x % mx) + mx) % mx);
      return true;
    }
    if (y < 0 || x < 0 || y >= static_cast<long>(gy) || x >= static_cast<long>(gx)) return false;
    ty = static_cast<std::size_t>(y);
    tx = static_cast<std::size_t>(x);
    return true;
  }

  // Displacement of a local pair as seen through one slot: the slot offset in
  // cells plus the in-chunk difference. Equals the plain key-minus-query
  // offset whenever the slot did not wrap.
  void slot_displacement(int slot, std::size_t qy, std::size_t qx, std::size_t ky, std::size_t kx,
                         std::int32_t& dy, std::int32_t& dx) const {
    std::int32_t wc = static_cast<std::int32_t>(w_c);
    dy = kSlotDy[slot] * wc +
         (static_cast<std::int32_t>(ky % w_c) - static_cast<std::int32_t>(qy % w_c));
    dx = kSlotDx[slot] * wc +
         (static_cast<std::int32_t>(kx % w_c) - static_cast<std::int32_t>(qx % w_c));
  }

  // Canonical displacement over every slot that reaches the key's chunk:
  // smallest |dy| + |dx| wins, earliest slot in the fixed ordering on ties.
  // The candidate list is never empty for an attended pair.
  void canonical_displacement(const std::vector<int>& slots_hitting_key, std::size_t qy,
                              std::size_t qx, std::size_t ky, std::size_t kx, std::int32_t& dy,
                              std::int32_t& dx) const {
    bool first = true;
    std::int32_t best = 0;
    for (int slot : slots_hitting_key) {
      std::int32_t cy, cx;
      slot_displacement(slot, qy, qx, ky, kx, cy, cx);
      std::int32_t score = std::abs(cy) + std::abs(cx);
      if (first || score < best) {
        first = false;
        best = score;
        dy = cy;
        dx = cx;
      }
    }
  }
};

}  // namespace vilong::detail
