#pragma once

// Positional encodings: absolute 2-D embeddings (APE) with separate x/y
// tables, and the relative positional bias (RPB) table with bilinear
// resolution transfer.

#include <cstdint>

#include "vilong/rng.hpp"
#include "vilong/tensor.hpp"

namespace vilong {

// Separate y/x tables of d/2 channels each, concatenated per local token,
// plus one d-wide row per global token. Bound to a maximum grid size; inputs
// beyond it are an error rather than a silent interpolation.
template <class T>
struct Ape2d {
  Tensor<T> y_table;       // [H_max, d/2]
  Tensor<T> x_table;       // [W_max, d/2]
  Tensor<T> global_table;  // [n_g, d]; default-constructed when n_g == 0

  std::size_t h_max() const { return y_table.empty() ? 0 : y_table.dim(0); }
  std::size_t w_max() const { return x_table.empty() ? 0 : x_table.dim(0); }
  std::size_t n_global() const { return global_table.empty() ? 0 : global_table.dim(0); }
  std::size_t dim() const { return y_table.empty() ? 0 : 2 * y_table.dim(1); }
};

template <class T>
Ape2d<T> make_ape2d(std::size_t h_max, std::size_t w_max, std::size_t n_g, std::size_t d,
                    Rng& rng);

// tokens: [n_g + H*W, d], globals first, locals row-major. Adds the
// positional tables to a copy of the tokens.
template <class T>
Tensor<T> ape_apply(const Tensor<T>& tokens, const Ape2d<T>& ape, std::size_t H, std::size_t W);

// Per-head bias indexed by 2-D relative offset. Lookups are defined exactly
// for |dy|, |dx| <= max_disp - 1. Pairs that involve a global token use one of
// three learned scalars per head instead of the table.
template <class T>
struct RpbTable {
  std::size_t heads = 0;
  std::size_t max_disp = 0;  // table side length is 2*max_disp - 1
  Tensor<T> table;           // [heads, 2*max_disp-1, 2*max_disp-1]
  Tensor<T> global_bias;     // [heads, 3]: {global->any, local->global, global->global}
};

template <class T>
RpbTable<T> make_rpb_table(std::size_t heads, std::size_t max_disp, Rng& rng);

// Bias value for a single local-local displacement.
template <class T>
T rpb_lookup(const RpbTable<T>& rpb, std::size_t head, std::int64_t dy, std::int64_t dx);

// Builds the dense [heads, N, N] bias for a layout of n_g globals followed by
// H*W row-major locals. mask marks the attended pairs; masked-out entries are
// left at 0 and never consulted. Displacements default to (key - query); the
// optional dy/dx maps ([n_l, n_l], valid where the mask is set) override them
// for cyclic chunk attention, whose wrapped pairs use the canonical
// in-neighborhood displacement instead of the plain one.
template <class T>
Tensor<T> rpb_bias_matrix(const RpbTable<T>& rpb, std::size_t H, std::size_t W, std::size_t n_g,
                          const Tensor<std::uint8_t>& mask,
                          const Tensor<std::int32_t>* dy = nullptr,
                          const Tensor<std::int32_t>* dx = nullptr);

// Align-corners bilinear transfer of the per-head tables to a new maximum
// displacement; the global-bias scalars are copied unchanged.
template <class T>
RpbTable<T> rpb_resize(const RpbTable<T>& rpb, std::size_t new_max_disp);

}  // namespace vilong
