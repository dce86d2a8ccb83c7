#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "attention_internal.hpp"
#include "chunk_geometry.hpp"
#include "vilong/attention.hpp"

namespace vilong {

namespace {

// Query rows, gathered keys and the geometry needed to score one block.
struct BlockLayout {
  std::vector<std::size_t> q_tok;  // full-array token ids
  std::vector<std::size_t> k_tok;
  // Local-local lookup data, indexed [qi * n_local_keys + kj]: the bias
  // displacement of the pair, and for the exact-window mode whether the pair
  // is inside the window at all.
  std::vector<std::int32_t> dy, dx;
  std::vector<std::uint8_t> allowed;  // empty unless the exact-window mode
  std::size_t n_local_keys = 0;
};

// Grid coordinates of a full-array local token id.
inline void local_yx(std::size_t tok, std::size_t n_g, std::size_t W, std::size_t& y,
                     std::size_t& x) {
  const std::size_t l = tok - n_g;
  y = l / W;
  x = l % W;
}

// want_pairs skips the per-pair displacement tables when nothing will read
// them (no bias table and no exact-window trimming).
std::vector<BlockLayout> build_block_layouts(const detail::ChunkGrid& grid, int shift_mode,
                                             std::size_t window, bool want_pairs) {
  const std::size_t n_g = grid.n_g, W = grid.W, w_c = grid.w_c;
  const bool exact = grid.masking == MaskingMode::ExactSlidingWindow;
  const bool cyclic = grid.masking == MaskingMode::SlidingChunkCyclic;
  const std::int64_t radius = static_cast<std::int64_t>((window - 1) / 2);
  const std::vector<int> slots = detail::active_slots(shift_mode);
  std::vector<BlockLayout> blocks;
  blocks.reserve(grid.gy * grid.gx);
  for (std::size_t cy = 0; cy < grid.gy; ++cy) {
    for (std::size_t cx = 0; cx < grid.gx; ++cx) {
      BlockLayout b;
      const std::size_t y_lo = cy * w_c, y_hi = std::min(grid.H, y_lo + w_c);
      const std::size_t x_lo = cx * w_c, x_hi = std::min(grid.W, x_lo + w_c);
      for (std::size_t y = y_lo; y < y_hi; ++y)
        for (std::size_t x = x_lo; x < x_hi; ++x) b.q_tok.push_back(n_g + y * W + x);

      // Distinct reachable chunks with the slots that reach them; the map
      // keeps a fixed (ty, tx) order and the slot lists stay ascending.
      std::map<std::pair<std::size_t, std::size_t>, std::vector<int>> targets;
      for (int slot : slots) {
        std::size_t ty, tx;
        if (grid.slot_target(cy, cx, slot, ty, tx)) targets[{ty, tx}].push_back(slot);
      }
      std::vector<const std::vector<int>*> key_slots;
      for (const auto& [chunk, slot_list] : targets) {
        const std::size_t ky_lo = chunk.first * w_c, ky_hi = std::min(grid.H, ky_lo + w_c);
        const std::size_t kx_lo = chunk.second * w_c, kx_hi = std::min(grid.W, kx_lo + w_c);
        for (std::size_t ky = ky_lo; ky < ky_hi; ++ky)
          for (std::size_t kx = kx_lo; kx < kx_hi; ++kx) {
            b.k_tok.push_back(n_g + ky * W + kx);
            key_slots.push_back(&slot_list);
          }
      }
      b.n_local_keys = b.k_tok.size();
      if (want_pairs || exact) {
        b.dy.resize(b.q_tok.size() * b.n_local_keys);
        b.dx.resize(b.dy.size());
        if (exact) b.allowed.assign(b.dy.size(), 0);
        for (std::size_t qi = 0; qi < b.q_tok.size(); ++qi) {
          std::size_t qy, qx;
          local_yx(b.q_tok[qi], n_g, W, qy, qx);
          for (std::size_t kj = 0; kj < b.n_local_keys; ++kj) {
            std::size_t ky, kx;
            local_yx(b.k_tok[kj], n_g, W, ky, kx);
            std::int32_t dy = 0, dx = 0;
            if (cyclic) {
              grid.canonical_displacement(*key_slots[kj], qy, qx, ky, kx, dy, dx);
            } else {
              dy = static_cast<std::int32_t>(ky) - static_cast<std::int32_t>(qy);
              dx = static_cast<std::int32_t>(kx) - static_cast<std::int32_t>(qx);
            }
            const std::size_t at = qi * b.n_local_keys + kj;
            b.dy[at] = dy;
            b.dx[at] = dx;
            if (exact) b.allowed[at] = std::abs(dy) <= radius && std::abs(dx) <= radius ? 1 : 0;
          }
        }
      }
      for (std::size_t g = 0; g < n_g; ++g) b.k_tok.push_back(g);
      blocks.push_back(std::move(b));
    }
  }
  return blocks;
}

template <class Task>
void run_over_range(std::size_t count, Task&& task) {
  if (compute_threads() <= 1 || count <= 1) {
    task(std::size_t{0}, count);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(compute_threads(), count);
  const std::size_t chunk = (count + workers - 1) / workers;
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex mu;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        task(lo, hi);
      } catch (...) {
        std::lock_guard<std::mutex> hold(mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// Scores one block for one head and writes the output rows. probs, when
// given, receives the [nq, nk] probabilities of this head.
template <class T>
void score_block(const BlockLayout& b, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                 const RpbTable<T>* rpb, std::size_t head, T scale, Tensor<T>& out, T* probs) {
  const std::size_t dh = q.dim(2);
  const std::size_t nq = b.q_tok.size(), nk = b.k_tok.size();
  const T* qh = q.data() + head * q.dim(1) * dh;
  const T* kh = k.data() + head * k.dim(1) * dh;
  const T* vh = v.data() + head * v.dim(1) * dh;
  T* oh = out.data() + head * out.dim(1) * dh;
  std::vector<T> scores(nk);
  for (std::size_t qi = 0; qi < nq; ++qi) {
    const T* qrow = qh + b.q_tok[qi] * dh;
    T maxv = T(0);
    bool any = false;
    for (std::size_t kj = 0; kj < nk; ++kj) {
      const bool local_key = kj < b.n_local_keys;
      if (local_key && !b.allowed.empty() && !b.allowed[qi * b.n_local_keys + kj]) continue;
      const T* krow = kh + b.k_tok[kj] * dh;
      T acc = T(0);
      for (std::size_t t = 0; t < dh; ++t) acc += qrow[t] * krow[t];
      acc *= scale;
      if (rpb) {
        if (!local_key) {
          acc += rpb->global_bias(head, 1);  // local query, global key
        } else {
          const std::size_t at = qi * b.n_local_keys + kj;
          acc += rpb_lookup(*rpb, head, b.dy[at], b.dx[at]);
        }
      }
      scores[kj] = acc;
      if (!any || acc > maxv) maxv = acc;
      any = true;
    }
    if (!any) {
      throw std::invalid_argument("sliding-chunk attention: query token " +
                                  std::to_string(b.q_tok[qi]) + " attends nothing");
    }
    T denom = T(0);
    for (std::size_t kj = 0; kj < nk; ++kj) {
      const bool local_key = kj < b.n_local_keys;
      if (local_key && !b.allowed.empty() && !b.allowed[qi * b.n_local_keys + kj]) {
        scores[kj] = T(0);
        continue;
      }
      T e = std::exp(scores[kj] - maxv);
      scores[kj] = e;
      denom += e;
    }
    const T inv = T(1) / denom;
    T* orow = oh + b.q_tok[qi] * dh;
    for (std::size_t kj = 0; kj < nk; ++kj) {
      const T p = scores[kj] * inv;
      if (probs) probs[qi * nk + kj] = p;
      if (p == T(0)) continue;
      const T* vrow = vh + b.k_tok[kj] * dh;
      for (std::size_t t = 0; t < dh; ++t) orow[t] += p * vrow[t];
    }
  }
}

// Dense rows for the global queries: every key, with the global-global and
// global-local bias scalars.
template <class T>
void score_global_rows(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                       const RpbTable<T>* rpb, std::size_t head, std::size_t n_g, T scale,
                       Tensor<T>& out, T* probs) {
  const std::size_t dh = q.dim(2), n = q.dim(1);
  const T* qh = q.data() + head * n * dh;
  const T* kh = k.data() + head * n * dh;
  const T* vh = v.data() + head * n * dh;
  T* oh = out.data() + head * n * dh;
  std::vector<T> scores(n);
  for (std::size_t g = 0; g < n_g; ++g) {
    const T* qrow = qh + g * dh;
    T maxv = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T* krow = kh + j * dh;
      T acc = T(0);
      for (std::size_t t = 0; t < dh; ++t) acc += qrow[t] * krow[t];
      acc *= scale;
      if (rpb) acc += rpb->global_bias(head, j < n_g ? 2 : 0);
      scores[j] = acc;
      if (j == 0 || acc > maxv) maxv = acc;
    }
    T denom = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      T e = std::exp(scores[j] - maxv);
      scores[j] = e;
      denom += e;
    }
    const T inv = T(1) / denom;
    T* orow = oh + g * dh;
    for (std::size_t j = 0; j < n; ++j) {
      const T p = scores[j] * inv;
      if (probs) probs[g * n + j] = p;
      const T* vrow = vh + j * dh;
      for (std::size_t t = 0; t < dh; ++t) orow[t] += p * vrow[t];
    }
  }
}

}  // namespace

template <class T>
Tensor<T> vil_sliding_chunk_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                                    const AttentionSpec& spec, std::size_t H, std::size_t W,
                                    const RpbTable<T>* rpb, MsaCache<T>* cache) {
  validate_spec(spec);
  const std::size_t n_g = spec.n_global, n = n_g + H * W, d = spec.dim;
  if (tokens.rank() != 2 || tokens.dim(0) != n || tokens.dim(1) != d) {
    throw std::invalid_argument("vil_sliding_chunk_forward: tokens " +
                                detail::shape_to_string(tokens.shape()) + " do not match " +
                                std::to_string(n_g) + " globals + " + std::to_string(H) + "x" +
                                std::to_string(W) + " locals, dim " + std::to_string(d));
  }
  if (H == 0 || W == 0) {
    throw std::invalid_argument("vil_sliding_chunk_forward: the local grid must be non-empty");
  }
  const std::size_t heads = spec.heads, dh = spec.head_dim();
  if (rpb) {
    const std::size_t need = 2 * spec.chunk_size();
    if (rpb->max_disp < need) {
      throw std::invalid_argument("vil_sliding_chunk_forward: bias table covers displacements "
                                  "up to " + std::to_string(rpb->max_disp - 1) + ", window " +
                                  std::to_string(spec.window) + " needs " +
                                  std::to_string(need - 1));
    }
  }
  Tensor<T> q = detail::split_heads(detail::project(tokens, params.w_q, params.b_q), heads);
  Tensor<T> k = detail::split_heads(detail::project(tokens, params.w_k, params.b_k), heads);
  Tensor<T> v = detail::split_heads(detail::project(tokens, params.w_v, params.b_v), heads);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  const detail::ChunkGrid grid = detail::ChunkGrid::make(H, W, n_g, spec.window, spec.masking);
  std::vector<BlockLayout> layouts =
      build_block_layouts(grid, spec.shift_mode, spec.window, rpb != nullptr);

  Tensor<T> attn({heads, n, dh});
  std::vector<ChunkBlock<T>> blocks;
  if (cache) {
    blocks.resize(layouts.size() + (n_g > 0 ? 1 : 0));
    if (n_g > 0) {
      ChunkBlock<T>& gb = blocks[0];
      for (std::size_t g = 0; g < n_g; ++g) gb.q_tok.push_back(g);
      for (std::size_t j = 0; j < n; ++j) gb.k_tok.push_back(j);
      gb.probs = Tensor<T>({heads, n_g, n});
    }
  }

  // Chunks own disjoint query rows, so they parallelize cleanly; each block
  // is scored serially inside, keeping results independent of threading.
  run_over_range(layouts.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t bi = lo; bi < hi; ++bi) {
      const BlockLayout& b = layouts[bi];
      ChunkBlock<T>* cb = nullptr;
      if (cache) {
        cb = &blocks[bi + (n_g > 0 ? 1 : 0)];
        cb->q_tok = b.q_tok;
        cb->k_tok = b.k_tok;
        cb->probs = Tensor<T>({heads, b.q_tok.size(), b.k_tok.size()});
        if (!b.allowed.empty()) {
          cb->mask = Tensor<std::uint8_t>({b.q_tok.size(), b.k_tok.size()});
          for (std::size_t qi = 0; qi < b.q_tok.size(); ++qi)
            for (std::size_t kj = 0; kj < b.k_tok.size(); ++kj)
              cb->mask(qi, kj) =
                  kj < b.n_local_keys ? b.allowed[qi * b.n_local_keys + kj] : std::uint8_t{1};
        }
      }
      for (std::size_t h = 0; h < heads; ++h) {
        T* probs = cb ? cb->probs.data() + h * b.q_tok.size() * b.k_tok.size() : nullptr;
        score_block(b, q, k, v, rpb, h, scale, attn, probs);
      }
    }
  });
  if (n_g > 0) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* probs = cache ? blocks[0].probs.data() + h * n_g * n : nullptr;
      score_global_rows(q, k, v, rpb, h, n_g, scale, attn, probs);
    }
  }

  Tensor<T> concat = detail::merge_heads(attn);
  Tensor<T> out = detail::project(concat, params.w_o, params.b_o);
  if (cache) {
    cache->spec = spec;
    cache->H = H;
    cache->W = W;
    cache->x_ln = tokens;
    cache->attn_concat = std::move(concat);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->chunks = std::move(blocks);
  }
  return out;
}

namespace detail {

template <class T>
MsaGrads<T> vil_chunk_backward(const MsaParams<T>& params, const MsaCache<T>& cache,
                               const Tensor<T>& dout) {
  ProjGradCtx<T> ctx = begin_mech_backward(params, cache, dout);
  const std::size_t heads = cache.spec.heads, dh = cache.spec.head_dim();
  const std::size_t n = cache.x_ln.dim(0);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Tensor<T> dq({heads, n, dh}), dk({heads, n, dh}), dv({heads, n, dh});

  // dk/dv rows are shared between neighboring blocks, so the parallel
  // dimension is heads; per head the blocks run in a fixed serial order.
  run_over_range(heads, [&](std::size_t h_lo, std::size_t h_hi) {
    std::vector<T> dp;
    for (std::size_t h = h_lo; h < h_hi; ++h) {
      const T* qh = cache.q.data() + h * n * dh;
      const T* kh = cache.k.data() + h * n * dh;
      const T* vh = cache.v.data() + h * n * dh;
      const T* doh = ctx.dheads.data() + h * n * dh;
      T* dqh = dq.data() + h * n * dh;
      T* dkh = dk.data() + h * n * dh;
      T* dvh = dv.data() + h * n * dh;
      for (const ChunkBlock<T>& b : cache.chunks) {
        const std::size_t nq = b.q_tok.size(), nk = b.k_tok.size();
        const T* ph = b.probs.data() + h * nq * nk;
        dp.resize(nk);
        for (std::size_t qi = 0; qi < nq; ++qi) {
          const std::size_t qt = b.q_tok[qi];
          const T* doi = doh + qt * dh;
          const T* prow = ph + qi * nk;
          T rowdot = T(0);
          for (std::size_t kj = 0; kj < nk; ++kj) {
            const T* vrow = vh + b.k_tok[kj] * dh;
            T acc = T(0);
            for (std::size_t t = 0; t < dh; ++t) acc += doi[t] * vrow[t];
            dp[kj] = acc;
            rowdot += prow[kj] * acc;
          }
          const T* qrow = qh + qt * dh;
          T* dqrow = dqh + qt * dh;
          for (std::size_t kj = 0; kj < nk; ++kj) {
            const T p = prow[kj];
            if (p == T(0)) continue;
            const T ds = p * (dp[kj] - rowdot) * scale;
            const std::size_t kt = b.k_tok[kj];
            const T* krow = kh + kt * dh;
            T* dkrow = dkh + kt * dh;
            T* dvrow = dvh + kt * dh;
            for (std::size_t t = 0; t < dh; ++t) {
              dqrow[t] += ds * krow[t];
              dkrow[t] += ds * qrow[t];
              dvrow[t] += p * doi[t];
            }
          }
        }
      }
    }
  });

  MsaGrads<T> g = std::move(ctx.grads);
  g.dtokens = Tensor<T>(cache.x_ln.shape());
  Tensor<T> dq_flat = merge_heads(dq);
  Tensor<T> dk_flat = merge_heads(dk);
  Tensor<T> dv_flat = merge_heads(dv);
  fold_projection(cache.x_ln, dq_flat, params.w_q, g.dparams.w_q, g.dparams.b_q, g.dtokens);
  fold_projection(cache.x_ln, dk_flat, params.w_k, g.dparams.w_k, g.dparams.b_k, g.dtokens);
  fold_projection(cache.x_ln, dv_flat, params.w_v, g.dparams.w_v, g.dparams.b_v, g.dtokens);
  return g;
}

template MsaGrads<float> vil_chunk_backward<float>(const MsaParams<float>&,
                                                   const MsaCache<float>&, const Tensor<float>&);
template MsaGrads<double> vil_chunk_backward<double>(const MsaParams<double>&,
                                                     const MsaCache<double>&,
                                                     const Tensor<double>&);

}  // namespace detail

template Tensor<float> vil_sliding_chunk_forward<float>(const Tensor<float>&,
                                                        const MsaParams<float>&,
                                                        const AttentionSpec&, std::size_t,
                                                        std::size_t, const RpbTable<float>*,
                                                        MsaCache<float>*);
template Tensor<double> vil_sliding_chunk_forward<double>(const Tensor<double>&,
                                                          const MsaParams<double>&,
                                                          const AttentionSpec&, std::size_t,
                                                          std::size_t, const RpbTable<double>*,
                                                          MsaCache<double>*);

}  // namespace vilong
