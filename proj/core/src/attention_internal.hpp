#pragma once

// Internal helpers shared by the dense attention paths and the sliding-chunk
// kernel.

#include "vilong/attention.hpp"
#include "vilong/ops.hpp"

namespace vilong::detail {

// [N, d] -> [heads, N, d/heads]
template <class T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t n = x.dim(0), d = x.dim(1), dh = d / heads;
  Tensor<T> out({heads, n, dh});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dh; ++j) out(h, i, j) = x(i, h * dh + j);
  return out;
}

// [heads, N, d_h] -> [N, heads*d_h]
template <class T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  const std::size_t heads = x.dim(0), n = x.dim(1), dh = x.dim(2);
  Tensor<T> out({n, heads * dh});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dh; ++j) out(i, h * dh + j) = x(h, i, j);
  return out;
}

template <class T>
Tensor<T> project(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_row_bias(matmul(x, w), b);
}

// Column sums of a [m, n] tensor, rows accumulated in ascending order.
template <class T>
Tensor<T> column_sum(const Tensor<T>& x) {
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor<T> out({n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x(i, j);
  return out;
}

template <class T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return t.empty() ? Tensor<T>() : Tensor<T>(t.shape());
}

template <class T>
MsaParams<T> zero_params_like(const MsaParams<T>& p) {
  MsaParams<T> z;
  z.ln_gamma = zeros_like(p.ln_gamma);
  z.ln_beta = zeros_like(p.ln_beta);
  z.w_q = zeros_like(p.w_q);
  z.w_k = zeros_like(p.w_k);
  z.w_v = zeros_like(p.w_v);
  z.w_o = zeros_like(p.w_o);
  z.b_q = zeros_like(p.b_q);
  z.b_k = zeros_like(p.b_k);
  z.b_v = zeros_like(p.b_v);
  z.b_o = zeros_like(p.b_o);
  z.linformer_p = zeros_like(p.linformer_p);
  z.sra_conv = zeros_like(p.sra_conv);
  z.sra_ln_gamma = zeros_like(p.sra_ln_gamma);
  z.sra_ln_beta = zeros_like(p.sra_ln_beta);
  z.performer_omega = zeros_like(p.performer_omega);
  return z;
}

// Gradient plumbing shared by every mechanism: the W_o head split at the top
// of the backward pass.
template <class T>
struct ProjGradCtx {
  Tensor<T> dheads;  // [heads, N, d_h] gradient flowing into the attention core
  MsaGrads<T> grads;
};

template <class T>
ProjGradCtx<T> begin_mech_backward(const MsaParams<T>& params, const MsaCache<T>& cache,
                                   const Tensor<T>& dout) {
  if (!dout.same_shape(cache.x_ln)) {
    throw std::invalid_argument("msa_backward: dout " + shape_to_string(dout.shape()) +
                                " does not match the forward tokens " +
                                shape_to_string(cache.x_ln.shape()));
  }
  ProjGradCtx<T> ctx;
  ctx.grads.dparams = zero_params_like(params);
  ctx.grads.dparams.w_o = matmul_tn(cache.attn_concat, dout);
  ctx.grads.dparams.b_o = column_sum(dout);
  Tensor<T> dconcat = matmul_nt(dout, params.w_o);
  ctx.dheads = split_heads(dconcat, cache.spec.heads);
  return ctx;
}

// Folds a per-token gradient through one of the Q/K/V projections and adds
// the token-side result to dsrc_tokens.
template <class T>
void fold_projection(const Tensor<T>& src_tokens, const Tensor<T>& dflat, const Tensor<T>& w,
                     Tensor<T>& dw, Tensor<T>& db, Tensor<T>& dsrc_tokens) {
  dw = matmul_tn(src_tokens, dflat);
  db = column_sum(dflat);
  add_inplace(dsrc_tokens, matmul_nt(dflat, w));
}

// Masked, biased, scaled softmax(Q K^T) V over [heads, N, d_h] inputs,
// streamed in query-row blocks. All inner reductions run in ascending key
// order, so results do not depend on the thread count.
template <class T>
Tensor<T> dense_core_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             const Tensor<std::uint8_t>* mask, const Tensor<T>* bias);

template <class T>
AttendGrads<T> dense_core_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                   const Tensor<std::uint8_t>* mask, const Tensor<T>* bias,
                                   const Tensor<T>& dout);

// Backward of vil_sliding_chunk_forward, consuming the per-chunk
// probabilities it cached. Defined alongside the forward pass.
template <class T>
MsaGrads<T> vil_chunk_backward(const MsaParams<T>& params, const MsaCache<T>& cache,
                               const Tensor<T>& dout);

}  // namespace vilong::detail
