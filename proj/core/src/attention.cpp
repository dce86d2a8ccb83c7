#include "vilong/attention.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "attention_internal.hpp"

namespace vilong {

namespace detail {

namespace {

constexpr std::size_t kRowBlock = 256;

// Runs task(h_lo, h_hi) over disjoint head ranges, serially when threading is
// off. Exceptions from workers are rethrown on the caller.
template <class Task>
void run_over_heads(std::size_t heads, Task&& task) {
  if (compute_threads() <= 1 || heads <= 1) {
    task(std::size_t{0}, heads);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(compute_threads(), heads);
  const std::size_t chunk = (heads + workers - 1) / workers;
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex mu;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(heads, lo + chunk);
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

template <class T>
void require_qkv(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(0) != k.dim(0) ||
      k.dim(0) != v.dim(0) || q.dim(2) != k.dim(2) || !k.same_shape(v)) {
    throw std::invalid_argument("attention: q/k/v must be [heads, tokens, head_dim] with "
                                "matching heads and head_dim, got " +
                                detail::shape_to_string(q.shape()) + ", " +
                                detail::shape_to_string(k.shape()) + ", " +
                                detail::shape_to_string(v.shape()));
  }
}

}  // namespace

template <class T>
Tensor<T> dense_core_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             const Tensor<std::uint8_t>* mask, const Tensor<T>* bias) {
  require_qkv(q, k, v);
  const std::size_t heads = q.dim(0), nq = q.dim(1), dh = q.dim(2), nk = k.dim(1);
  if (mask && (mask->rank() != 2 || mask->dim(0) != nq || mask->dim(1) != nk)) {
    throw std::invalid_argument("attention: mask " + detail::shape_to_string(mask->shape()) +
                                " does not match scores [" + std::to_string(nq) + "x" +
                                std::to_string(nk) + "]");
  }
  if (bias && (bias->rank() != 3 || bias->dim(0) != heads || bias->dim(1) != nq ||
               bias->dim(2) != nk)) {
    throw std::invalid_argument("attention: bias " + detail::shape_to_string(bias->shape()) +
                                " does not match [heads x " + std::to_string(nq) + " x " +
                                std::to_string(nk) + "]");
  }
  Tensor<T> out({heads, nq, dh});
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  // Heads are independent; each output element keeps its serial reduction
  // order regardless of the thread count.
  run_over_heads(heads, [&](std::size_t h_lo, std::size_t h_hi) {
    std::vector<T> scores(kRowBlock * nk);
    for (std::size_t h = h_lo; h < h_hi; ++h) {
      const T* qh = q.data() + h * nq * dh;
      const T* kh = k.data() + h * nk * dh;
      const T* vh = v.data() + h * nk * dh;
      T* oh = out.data() + h * nq * dh;
      for (std::size_t lo = 0; lo < nq; lo += kRowBlock) {
        const std::size_t hi = std::min(nq, lo + kRowBlock);
        for (std::size_t i = lo; i < hi; ++i) {
          const T* qi = qh + i * dh;
          T* srow = scores.data() + (i - lo) * nk;
          const std::uint8_t* mrow = mask ? mask->data() + i * nk : nullptr;
          const T* brow = bias ? bias->data() + (h * nq + i) * nk : nullptr;
          T maxv = T(0);
          bool any = false;
          for (std::size_t j = 0; j < nk; ++j) {
            if (mrow && !mrow[j]) continue;
            const T* kj = kh + j * dh;
            T acc = T(0);
            for (std::size_t t = 0; t < dh; ++t) acc += qi[t] * kj[t];
            acc *= scale;
            if (brow) acc += brow[j];
            srow[j] = acc;
            if (!any || acc > maxv) maxv = acc;
            any = true;
          }
          if (!any) {
            throw std::invalid_argument("attention: query row " + std::to_string(i) +
                                        " is fully masked");
          }
          T denom = T(0);
          for (std::size_t j = 0; j < nk; ++j) {
            if (mrow && !mrow[j]) {
              srow[j] = T(0);
              continue;
            }
            T e = std::exp(srow[j] - maxv);
            srow[j] = e;
            denom += e;
          }
          const T inv = T(1) / denom;
          T* orow = oh + i * dh;
          for (std::size_t j = 0; j < nk; ++j) {
            const T p = srow[j] * inv;
            if (p == T(0)) continue;
            const T* vj = vh + j * dh;
            for (std::size_t t = 0; t < dh; ++t) orow[t] += p * vj[t];
          }
        }
      }
    }
  });
  return out;
}

template <class T>
AttendGrads<T> dense_core_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                   const Tensor<std::uint8_t>* mask, const Tensor<T>* bias,
                                   const Tensor<T>& dout) {
  require_qkv(q, k, v);
  const std::size_t heads = q.dim(0), nq = q.dim(1), dh = q.dim(2), nk = k.dim(1);
  if (!dout.same_shape(q)) {
    throw std::invalid_argument("attention backward: dout " +
                                detail::shape_to_string(dout.shape()) + " does not match q " +
                                detail::shape_to_string(q.shape()));
  }
  AttendGrads<T> g{Tensor<T>(q.shape()), Tensor<T>(k.shape()), Tensor<T>(v.shape())};
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  run_over_heads(heads, [&](std::size_t h_lo, std::size_t h_hi) {
    std::vector<T> probs(nk);
    std::vector<T> dp(nk);
    for (std::size_t h = h_lo; h < h_hi; ++h) {
      const T* qh = q.data() + h * nq * dh;
      const T* kh = k.data() + h * nk * dh;
      const T* vh = v.data() + h * nk * dh;
      const T* doh = dout.data() + h * nq * dh;
      T* dqh = g.dq.data() + h * nq * dh;
      T* dkh = g.dk.data() + h * nk * dh;
      T* dvh = g.dv.data() + h * nk * dh;
      for (std::size_t i = 0; i < nq; ++i) {
        const T* qi = qh + i * dh;
        const T* doi = doh + i * dh;
        const std::uint8_t* mrow = mask ? mask->data() + i * nk : nullptr;
        const T* brow = bias ? bias->data() + (h * nq + i) * nk : nullptr;
        // Recompute this row's probabilities exactly as the forward did.
        T maxv = T(0);
        bool any = false;
        for (std::size_t j = 0; j < nk; ++j) {
          if (mrow && !mrow[j]) continue;
          const T* kj = kh + j * dh;
          T acc = T(0);
          for (std::size_t t = 0; t < dh; ++t) acc += qi[t] * kj[t];
          acc *= scale;
          if (brow) acc += brow[j];
          probs[j] = acc;
          if (!any || acc > maxv) maxv = acc;
          any = true;
        }
        if (!any) {
          throw std::invalid_argument("attention backward: query row " + std::to_string(i) +
                                      " is fully masked");
        }
        T denom = T(0);
        for (std::size_t j = 0; j < nk; ++j) {
          if (mrow && !mrow[j]) {
            probs[j] = T(0);
            continue;
          }
          T e = std::exp(probs[j] - maxv);
          probs[j] = e;
          denom += e;
        }
        const T inv = T(1) / denom;
        T rowdot = T(0);
        for (std::size_t j = 0; j < nk; ++j) {
          if (probs[j] == T(0) && mrow && !mrow[j]) {
            dp[j] = T(0);
            continue;
          }
          probs[j] *= inv;
          const T* vj = vh + j * dh;
          T acc = T(0);
          for (std::size_t t = 0; t < dh; ++t) acc += doi[t] * vj[t];
          dp[j] = acc;
          rowdot += probs[j] * acc;
        }
        T* dqi = dqh + i * dh;
        for (std::size_t j = 0; j < nk; ++j) {
          const T p = probs[j];
          if (p == T(0)) continue;
          const T ds = p * (dp[j] - rowdot) * scale;
          const T* kj = kh + j * dh;
          T* dkj = dkh + j * dh;
          T* dvj = dvh + j * dh;
          for (std::size_t t = 0; t < dh; ++t) {
            dqi[t] += ds * kj[t];
            dkj[t] += ds * qi[t];
            dvj[t] += p * doi[t];
          }
        }
      }
    }
  });
  return g;
}

#define VILONG_INSTANTIATE_CORE(T)                                                            \
  template Tensor<T> dense_core_forward<T>(const Tensor<T>&, const Tensor<T>&,                \
                                           const Tensor<T>&, const Tensor<std::uint8_t>*,     \
                                           const Tensor<T>*);                                 \
  template AttendGrads<T> dense_core_backward<T>(const Tensor<T>&, const Tensor<T>&,          \
                                                 const Tensor<T>&, const Tensor<std::uint8_t>*, \
                                                 const Tensor<T>*, const Tensor<T>&);

VILONG_INSTANTIATE_CORE(float)
VILONG_INSTANTIATE_CORE(double)

#undef VILONG_INSTANTIATE_CORE

}  // namespace detail

template <class T>
Tensor<T> attend_dense(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                       const Tensor<T>* bias, const AttnMask& mask) {
  if (q.rank() != 3 || q.dim(1) != mask.tokens()) {
    throw std::invalid_argument("attend_dense: q " + detail::shape_to_string(q.shape()) +
                                " does not cover the mask's " + std::to_string(mask.tokens()) +
                                " tokens");
  }
  return detail::dense_core_forward(q, k, v, &mask.attend, bias);
}

template <class T>
AttendGrads<T> attend_dense_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     const Tensor<T>* bias, const AttnMask& mask,
                                     const Tensor<T>& dout) {
  return detail::dense_core_backward(q, k, v, &mask.attend, bias, dout);
}

bool redraw_due(const RedrawPolicy& policy, std::uint64_t step, std::uint64_t epoch) {
  if (policy.kind == RedrawPolicy::Kind::FixedInterval) {
    return policy.interval == 0 ? false : step % policy.interval == 0;
  }
  return step % (1 + 5 * epoch) == 0;
}

template <class T>
Tensor<T> draw_orthogonal_features(std::size_t m, std::size_t d_h, Rng& rng) {
  if (m == 0 || d_h == 0) {
    throw std::invalid_argument("draw_orthogonal_features: m and d_h must be positive");
  }
  Tensor<T> omega({m, d_h});
  std::vector<std::vector<double>> block;
  for (std::size_t row = 0; row < m; ++row) {
    const std::size_t r = row % d_h;
    if (r == 0) {
      // Fresh block: d_h Gaussian rows, Gram-Schmidt orthonormalized.
      block.assign(d_h, std::vector<double>(d_h));
      for (std::size_t i = 0; i < d_h; ++i)
        for (std::size_t j = 0; j < d_h; ++j) block[i][j] = rng.next_normal();
      for (std::size_t i = 0; i < d_h; ++i) {
        for (std::size_t p = 0; p < i; ++p) {
          double dot = 0.0;
          for (std::size_t j = 0; j < d_h; ++j) dot += block[i][j] * block[p][j];
          for (std::size_t j = 0; j < d_h; ++j) block[i][j] -= dot * block[p][j];
        }
        double norm = 0.0;
        for (std::size_t j = 0; j < d_h; ++j) norm += block[i][j] * block[i][j];
        norm = std::sqrt(norm);
        if (!(norm > 1e-12)) {
          throw std::runtime_error("draw_orthogonal_features: degenerate Gaussian block");
        }
        for (std::size_t j = 0; j < d_h; ++j) block[i][j] /= norm;
      }
    }
    // Restore chi(d_h)-distributed row norms so the rows match unstructured
    // Gaussian features in distribution.
    double norm2 = 0.0;
    for (std::size_t j = 0; j < d_h; ++j) {
      double gsample = rng.next_normal();
      norm2 += gsample * gsample;
    }
    const double rownorm = std::sqrt(norm2);
    for (std::size_t j = 0; j < d_h; ++j)
      omega(row, j) = static_cast<T>(block[r][j] * rownorm);
  }
  return omega;
}

template <class T>
MsaParams<T> make_msa_params(const AttentionSpec& spec, std::size_t n_l, Rng& rng) {
  validate_spec(spec);
  const std::size_t d = spec.dim;
  MsaParams<T> p;
  p.ln_gamma = Tensor<T>::full({d}, T(1));
  p.ln_beta = Tensor<T>({d});
  p.w_q = trunc_normal_init<T>({d, d}, 0.02, rng);
  p.w_k = trunc_normal_init<T>({d, d}, 0.02, rng);
  p.w_v = trunc_normal_init<T>({d, d}, 0.02, rng);
  p.w_o = trunc_normal_init<T>({d, d}, 0.02, rng);
  p.b_q = Tensor<T>({d});
  p.b_k = Tensor<T>({d});
  p.b_v = Tensor<T>({d});
  p.b_o = Tensor<T>({d});
  if (spec.kind == AttnKind::Linformer) {
    if (n_l == 0) throw std::invalid_argument("make_msa_params: Linformer needs n_l >= 1");
    p.linformer_p =
        trunc_normal_init<T>({spec.linformer_k, n_l}, 1.0 / std::sqrt(double(n_l)), rng);
  }
  if (spec.kind == AttnKind::SRA) {
    const std::size_t r = spec.sra_ratio;
    p.sra_conv = trunc_normal_init<T>({r, r, d, d}, 0.02, rng);
    p.sra_ln_gamma = Tensor<T>::full({d}, T(1));
    p.sra_ln_beta = Tensor<T>({d});
  }
  if (spec.kind == AttnKind::Performer) {
    p.performer_omega = draw_orthogonal_features<T>(spec.performer_features, spec.head_dim(), rng);
  }
  return p;
}

template <class T>
MsaParams<T> redraw_features(const MsaParams<T>& params, const AttentionSpec& spec, Rng& rng,
                             std::uint64_t step, std::uint64_t epoch, const RedrawPolicy& policy) {
  if (spec.kind != AttnKind::Performer) {
    throw std::invalid_argument("redraw_features: only the Performer draws random features");
  }
  if (!redraw_due(policy, step, epoch)) return params;
  MsaParams<T> out = params;
  out.performer_omega = draw_orthogonal_features<T>(spec.performer_features, spec.head_dim(), rng);
  return out;
}

namespace {

template <class T>
void require_tokens(const char* who, const Tensor<T>& tokens, const AttentionSpec& spec,
                    std::size_t H, std::size_t W) {
  if (tokens.rank() != 2 || tokens.dim(0) != spec.n_global + H * W ||
      tokens.dim(1) != spec.dim) {
    throw std::invalid_argument(std::string(who) + ": tokens " +
                                detail::shape_to_string(tokens.shape()) + " do not match " +
                                std::to_string(spec.n_global) + " globals + " +
                                std::to_string(H) + "x" + std::to_string(W) + " locals, dim " +
                                std::to_string(spec.dim));
  }
}

template <class T>
Tensor<T> head_slice(const Tensor<T>& t, std::size_t h) {
  const std::size_t n = t.dim(1), dh = t.dim(2);
  Tensor<T> out({n, dh});
  const T* src = t.data() + h * n * dh;
  std::copy(src, src + n * dh, out.data());
  return out;
}

template <class T>
void set_head_slice(Tensor<T>& t, std::size_t h, const Tensor<T>& rows) {
  const std::size_t n = t.dim(1), dh = t.dim(2);
  std::copy(rows.data(), rows.data() + n * dh, t.data() + h * n * dh);
}

// Rows [lo, hi) of a [n, d] tensor.
template <class T>
Tensor<T> row_range(const Tensor<T>& t, std::size_t lo, std::size_t hi) {
  const std::size_t d = t.dim(1);
  Tensor<T> out({hi - lo, d});
  std::copy(t.data() + lo * d, t.data() + hi * d, out.data());
  return out;
}

// out = W_o projection of the merged heads; fills the shared cache slots.
template <class T>
Tensor<T> finish_attention(const Tensor<T>& tokens, const Tensor<T>& attn_heads,
                           const MsaParams<T>& params, const AttentionSpec& spec, std::size_t H,
                           std::size_t W, MsaCache<T>* cache) {
  Tensor<T> concat = detail::merge_heads(attn_heads);
  Tensor<T> out = detail::project(concat, params.w_o, params.b_o);
  if (cache) {
    cache->spec = spec;
    cache->H = H;
    cache->W = W;
    cache->x_ln = tokens;
    cache->attn_concat = std::move(concat);
  }
  return out;
}

// Shared forward for the mechanisms whose keys are the tokens themselves:
// Full (no mask), Global, and the masked-dense ViL reference.
template <class T>
Tensor<T> dense_masked_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                               const AttentionSpec& spec, std::size_t H, std::size_t W,
                               const RpbTable<T>* rpb, AttnMask mask, const MaskBundle* bundle,
                               MsaCache<T>* cache) {
  Tensor<T> q = detail::split_heads(detail::project(tokens, params.w_q, params.b_q), spec.heads);
  Tensor<T> k = detail::split_heads(detail::project(tokens, params.w_k, params.b_k), spec.heads);
  Tensor<T> v = detail::split_heads(detail::project(tokens, params.w_v, params.b_v), spec.heads);
  Tensor<T> bias;
  const bool has_mask = !mask.attend.empty();
  if (rpb) {
    AttnMask full_for_bias;
    if (!has_mask) full_for_bias = build_full_mask(H, W, spec.n_global);
    const Tensor<std::uint8_t>& attend = has_mask ? mask.attend : full_for_bias.attend;
    bias = rpb_bias_matrix(*rpb, H, W, spec.n_global, attend, bundle ? &bundle->dy : nullptr,
                           bundle ? &bundle->dx : nullptr);
  }
  Tensor<T> attn = detail::dense_core_forward(q, k, v, has_mask ? &mask.attend : nullptr,
                                              bias.empty() ? nullptr : &bias);
  Tensor<T> out = finish_attention(tokens, attn, params, spec, H, W, cache);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->mask = std::move(mask);
    cache->bias = std::move(bias);
  }
  return out;
}

}  // namespace

template <class T>
Tensor<T> vil_masked_dense_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                                   const AttentionSpec& spec, std::size_t H, std::size_t W,
                                   const RpbTable<T>* rpb, MsaCache<T>* cache) {
  validate_spec(spec);
  require_tokens("vil_masked_dense_forward", tokens, spec, H, W);
  if (rpb) {
    MaskBundle bundle =
        build_vil_mask_bundle(H, W, spec.n_global, spec.window, spec.masking, spec.shift_mode);
    AttnMask mask = std::move(bundle.mask);
    return dense_masked_forward(tokens, params, spec, H, W, rpb, std::move(mask), &bundle, cache);
  }
  AttnMask mask = build_vil_mask(H, W, spec.n_global, spec.window, spec.masking, spec.shift_mode);
  return dense_masked_forward(tokens, params, spec, H, W, rpb, std::move(mask), nullptr, cache);
}

template <class T>
Tensor<T> global_attention_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                                   const AttentionSpec& spec, std::size_t H, std::size_t W,
                                   const RpbTable<T>* rpb, MsaCache<T>* cache) {
  validate_spec(spec);
  require_tokens("global_attention_forward", tokens, spec, H, W);
  if (spec.n_global == 0) {
    throw std::invalid_argument(
        "global_attention_forward: needs at least one global token (locals would attend only "
        "themselves)");
  }
  AttnMask mask = build_global_mask(H, W, spec.n_global);
  return dense_masked_forward(tokens, params, spec, H, W, rpb, std::move(mask), nullptr, cache);
}

template <class T>
Tensor<T> linformer_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                            const AttentionSpec& spec, std::size_t H, std::size_t W,
                            MsaCache<T>* cache) {
  validate_spec(spec);
  require_tokens("linformer_forward", tokens, spec, H, W);
  const std::size_t n_g = spec.n_global, n_l = H * W, kdim = spec.linformer_k;
  if (params.linformer_p.rank() != 2 || params.linformer_p.dim(0) != kdim ||
      params.linformer_p.dim(1) != n_l) {
    const std::string bound = params.linformer_p.rank() == 2
                                  ? std::to_string(params.linformer_p.dim(1))
                                  : std::string("none");
    throw std::invalid_argument("linformer_forward: projection is bound to n_l=" + bound +
                                ", got a " + std::to_string(H) + "x" + std::to_string(W) +
                                " grid (n_l=" + std::to_string(n_l) + ")");
  }
  const std::size_t heads = spec.heads, dh = spec.head_dim();
  Tensor<T> q = detail::split_heads(detail::project(tokens, params.w_q, params.b_q), heads);
  Tensor<T> k_all = detail::split_heads(detail::project(tokens, params.w_k, params.b_k), heads);
  Tensor<T> v_all = detail::split_heads(detail::project(tokens, params.w_v, params.b_v), heads);

  Tensor<T> k_local({heads, n_l, dh}), v_local({heads, n_l, dh});
  Tensor<T> k_red({heads, n_g + kdim, dh}), v_red({heads, n_g + kdim, dh});
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor<T> kh = head_slice(k_all, h);
    Tensor<T> vh = head_slice(v_all, h);
    Tensor<T> kloc = row_range(kh, n_g, n_g + n_l);
    Tensor<T> vloc = row_range(vh, n_g, n_g + n_l);
    set_head_slice(k_local, h, kloc);
    set_head_slice(v_local, h, vloc);
    Tensor<T> kproj = matmul(params.linformer_p, kloc);  // [K, dh]
    Tensor<T> vproj = matmul(params.linformer_p, vloc);
    for (std::size_t g = 0; g < n_g; ++g)
      for (std::size_t t = 0; t < dh; ++t) {
        k_red(h, g, t) = kh(g, t);
        v_red(h, g, t) = vh(g, t);
      }
    for (std::size_t i = 0; i < kdim; ++i)
      for (std::size_t t = 0; t < dh; ++t) {
        k_red(h, n_g + i, t) = kproj(i, t);
        v_red(h, n_g + i, t) = vproj(i, t);
      }
  }
  Tensor<T> attn = detail::dense_core_forward<T>(q, k_red, v_red, nullptr, nullptr);
  Tensor<T> out = finish_attention(tokens, attn, params, spec, H, W, cache);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k_red);
    cache->v = std::move(v_red);
    cache->k_local = std::move(k_local);
    cache->v_local = std::move(v_local);
  }
  return out;
}

namespace {

// Non-overlapping R x R patches of the local grid, flattened row-major as
// (ry, rx, channel); one row per reduced token.
template <class T>
Tensor<T> gather_sra_patches(const Tensor<T>& locals, std::size_t H, std::size_t W,
                             std::size_t R) {
  const std::size_t d = locals.dim(1);
  const std::size_t oh = H / R, ow = W / R;
  Tensor<T> patches({oh * ow, R * R * d});
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      T* prow = patches.data() + (oy * ow + ox) * R * R * d;
      for (std::size_t ry = 0; ry < R; ++ry)
        for (std::size_t rx = 0; rx < R; ++rx) {
          const T* cell = locals.data() + ((oy * R + ry) * W + (ox * R + rx)) * d;
          std::copy(cell, cell + d, prow + (ry * R + rx) * d);
        }
    }
  return patches;
}

template <class T>
void scatter_sra_patches(const Tensor<T>& dpatches, std::size_t H, std::size_t W, std::size_t R,
                         Tensor<T>& dlocals) {
  const std::size_t d = dlocals.dim(1);
  const std::size_t oh = H / R, ow = W / R;
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const T* prow = dpatches.data() + (oy * ow + ox) * R * R * d;
      for (std::size_t ry = 0; ry < R; ++ry)
        for (std::size_t rx = 0; rx < R; ++rx) {
          T* cell = dlocals.data() + ((oy * R + ry) * W + (ox * R + rx)) * d;
          const T* src = prow + (ry * R + rx) * d;
          for (std::size_t t = 0; t < d; ++t) cell[t] += src[t];
        }
    }
  return;
}

}  // namespace

template <class T>
Tensor<T> sra_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                      const AttentionSpec& spec, std::size_t H, std::size_t W,
                      MsaCache<T>* cache) {
  validate_spec(spec);
  require_tokens("sra_forward", tokens, spec, H, W);
  const std::size_t R = spec.sra_ratio;
  if (H % R != 0 || W % R != 0) {
    throw std::invalid_argument("sra_forward: reduction ratio " + std::to_string(R) +
                                " must divide the grid, got " + std::to_string(H) + "x" +
                                std::to_string(W));
  }
  const std::size_t n_g = spec.n_global, d = spec.dim;
  const std::size_t n_red = (H / R) * (W / R);
  Tensor<T> locals = row_range(tokens, n_g, tokens.dim(0));
  Tensor<T> patches = gather_sra_patches(locals, H, W, R);
  Tensor<T> conv_flat = params.sra_conv.reshaped({R * R * d, d});
  Tensor<T> pre_ln = matmul(patches, conv_flat);  // [n_red, d]
  // The stride-R reduction is followed by LayerNorm only when it actually
  // reduces; at R == 1 the conv acts alone so an identity kernel reproduces
  // full attention.
  Tensor<T> reduced =
      R > 1 ? layer_norm(pre_ln, params.sra_ln_gamma, params.sra_ln_beta) : pre_ln;
  Tensor<T> kv_tokens({n_g + n_red, d});
  for (std::size_t g = 0; g < n_g; ++g)
    for (std::size_t t = 0; t < d; ++t) kv_tokens(g, t) = tokens(g, t);
  std::copy(reduced.data(), reduced.data() + n_red * d, kv_tokens.data() + n_g * d);

  Tensor<T> q = detail::split_heads(detail::project(tokens, params.w_q, params.b_q), spec.heads);
  Tensor<T> k = detail::split_heads(detail::project(kv_tokens, params.w_k, params.b_k), spec.heads);
  Tensor<T> v = detail::split_heads(detail::project(kv_tokens, params.w_v, params.b_v), spec.heads);
  Tensor<T> attn = detail::dense_core_forward<T>(q, k, v, nullptr, nullptr);
  Tensor<T> out = finish_attention(tokens, attn, params, spec, H, W, cache);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->sra_patches = std::move(patches);
    cache->sra_pre_ln = std::move(pre_ln);
    cache->sra_kv_tokens = std::move(kv_tokens);
  }
  return out;
}

template <class T>
Tensor<T> performer_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                            const AttentionSpec& spec, std::size_t H, std::size_t W,
                            MsaCache<T>* cache, bool strict) {
  validate_spec(spec);
  require_tokens("performer_forward", tokens, spec, H, W);
  const std::size_t m = spec.performer_features, dh = spec.head_dim(), heads = spec.heads;
  if (params.performer_omega.rank() != 2 || params.performer_omega.dim(0) != m ||
      params.performer_omega.dim(1) != dh) {
    throw std::invalid_argument("performer_forward: feature matrix must be [" +
                                std::to_string(m) + " x " + std::to_string(dh) + "]");
  }
  const std::size_t n = tokens.dim(0);
  Tensor<T> q = detail::split_heads(detail::project(tokens, params.w_q, params.b_q), heads);
  Tensor<T> k = detail::split_heads(detail::project(tokens, params.w_k, params.b_k), heads);
  Tensor<T> v = detail::split_heads(detail::project(tokens, params.w_v, params.b_v), heads);

  const T prescale = static_cast<T>(std::pow(double(dh), -0.25));
  const T inv_sqrt_m = T(1) / std::sqrt(static_cast<T>(m));
  const T eps = T(1e-8);
  Tensor<T> phi_q({heads, n, m}), phi_k({heads, n, m});
  Tensor<T> kv_sum({heads, m, dh}), key_feature_sum({heads, m});
  Tensor<T> row_denom({heads, n});
  Tensor<T> attn({heads, n, dh});

  for (std::size_t h = 0; h < heads; ++h) {
    Tensor<T> qs = head_slice(q, h);
    Tensor<T> ks = head_slice(k, h);
    scale_inplace(qs, prescale);
    scale_inplace(ks, prescale);
    Tensor<T> vh = head_slice(v, h);

    Tensor<T> proj_q = matmul_nt(qs, params.performer_omega);  // [n, m]
    Tensor<T> proj_k = matmul_nt(ks, params.performer_omega);
    // exp(w.x - |x|^2/2) features, stabilized per query row and by the global
    // key maximum; both stabilizers cancel in the normalized output.
    for (std::size_t i = 0; i < n; ++i) {
      T sq = T(0);
      for (std::size_t t = 0; t < dh; ++t) sq += qs(i, t) * qs(i, t);
      sq *= T(0.5);
      T rowmax = proj_q(i, 0) - sq;
      for (std::size_t f = 1; f < m; ++f) rowmax = std::max(rowmax, proj_q(i, f) - sq);
      for (std::size_t f = 0; f < m; ++f)
        phi_q(h, i, f) = std::exp(proj_q(i, f) - sq - rowmax) * inv_sqrt_m;
    }
    T keymax = T(0);
    bool first = true;
    for (std::size_t i = 0; i < n; ++i) {
      T sq = T(0);
      for (std::size_t t = 0; t < dh; ++t) sq += ks(i, t) * ks(i, t);
      sq *= T(0.5);
      for (std::size_t f = 0; f < m; ++f) {
        T u = proj_k(i, f) - sq;
        proj_k(i, f) = u;
        if (first || u > keymax) keymax = u;
        first = false;
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < m; ++f)
        phi_k(h, i, f) = std::exp(proj_k(i, f) - keymax) * inv_sqrt_m;

    // kv_sum = phi_k^T V, key_feature_sum = phi_k^T 1.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < m; ++f) {
        const T pk = phi_k(h, i, f);
        key_feature_sum(h, f) += pk;
        const T* vrow = vh.data() + i * dh;
        T* krow = kv_sum.data() + (h * m + f) * dh;
        for (std::size_t t = 0; t < dh; ++t) krow[t] += pk * vrow[t];
      }
    for (std::size_t i = 0; i < n; ++i) {
      T den = T(0);
      const T* pq = phi_q.data() + (h * n + i) * m;
      for (std::size_t f = 0; f < m; ++f) den += pq[f] * key_feature_sum(h, f);
      if (strict && !(den > eps)) {
        throw std::runtime_error("performer_forward: query row " + std::to_string(i) +
                                 " has vanishing attention mass");
      }
      const T den_safe = den > eps ? den : eps;
      row_denom(h, i) = den_safe;
      T* orow = attn.data() + (h * n + i) * dh;
      for (std::size_t f = 0; f < m; ++f) {
        const T pf = pq[f];
        const T* krow = kv_sum.data() + (h * m + f) * dh;
        for (std::size_t t = 0; t < dh; ++t) orow[t] += pf * krow[t];
      }
      for (std::size_t t = 0; t < dh; ++t) orow[t] /= den_safe;
    }
  }
  Tensor<T> out = finish_attention(tokens, attn, params, spec, H, W, cache);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->phi_q = std::move(phi_q);
    cache->phi_k = std::move(phi_k);
    cache->kv_sum = std::move(kv_sum);
    cache->key_feature_sum = std::move(key_feature_sum);
    cache->row_denom = std::move(row_denom);
    cache->attn_heads = std::move(attn);
  }
  return out;
}

template <class T>
Tensor<T> msa_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                      const AttentionSpec& spec, std::size_t H, std::size_t W,
                      const RpbTable<T>* rpb, MsaCache<T>* cache) {
  validate_spec(spec);
  require_tokens("msa_forward", tokens, spec, H, W);
  Tensor<T> x_ln = layer_norm(tokens, params.ln_gamma, params.ln_beta);
  Tensor<T> mech;
  switch (spec.kind) {
    case AttnKind::Full: {
      AttnMask no_mask;
      mech = dense_masked_forward(x_ln, params, spec, H, W, rpb, std::move(no_mask), nullptr,
                                  cache);
      break;
    }
    case AttnKind::ViL:
      mech = vil_sliding_chunk_forward(x_ln, params, spec, H, W, rpb, cache);
      break;
    case AttnKind::Global:
      mech = global_attention_forward(x_ln, params, spec, H, W, rpb, cache);
      break;
    case AttnKind::Linformer:
      mech = linformer_forward(x_ln, params, spec, H, W, cache);
      break;
    case AttnKind::SRA:
      mech = sra_forward(x_ln, params, spec, H, W, cache);
      break;
    case AttnKind::Performer:
      mech = performer_forward(x_ln, params, spec, H, W, cache);
      break;
  }
  Tensor<T> out = add(tokens, mech);
  if (cache) {
    cache->block_wrapper = true;
    cache->x = tokens;
  }
  return out;
}

template <class T>
MsaGrads<T> msa_backward(const MsaParams<T>& params, const MsaCache<T>& cache,
                         const Tensor<T>& dout) {
  const AttentionSpec& spec = cache.spec;
  MsaGrads<T> g;
  switch (spec.kind) {
    case AttnKind::Full:
    case AttnKind::ViL:
    case AttnKind::Global: {
      if (spec.kind == AttnKind::ViL && !cache.chunks.empty()) {
        g = detail::vil_chunk_backward(params, cache, dout);
        break;
      }
      detail::ProjGradCtx<T> ctx = detail::begin_mech_backward(params, cache, dout);
      const Tensor<std::uint8_t>* mask =
          cache.mask.attend.empty() ? nullptr : &cache.mask.attend;
      const Tensor<T>* bias = cache.bias.empty() ? nullptr : &cache.bias;
      AttendGrads<T> core =
          detail::dense_core_backward(cache.q, cache.k, cache.v, mask, bias, ctx.dheads);
      Tensor<T> dq_flat = detail::merge_heads(core.dq);
      Tensor<T> dk_flat = detail::merge_heads(core.dk);
      Tensor<T> dv_flat = detail::merge_heads(core.dv);
      g = std::move(ctx.grads);
      g.dtokens = Tensor<T>(cache.x_ln.shape());
      detail::fold_projection(cache.x_ln, dq_flat, params.w_q, g.dparams.w_q, g.dparams.b_q, g.dtokens);
      detail::fold_projection(cache.x_ln, dk_flat, params.w_k, g.dparams.w_k, g.dparams.b_k, g.dtokens);
      detail::fold_projection(cache.x_ln, dv_flat, params.w_v, g.dparams.w_v, g.dparams.b_v, g.dtokens);
      break;
    }
    case AttnKind::Linformer: {
      detail::ProjGradCtx<T> ctx = detail::begin_mech_backward(params, cache, dout);
      AttendGrads<T> core =
          detail::dense_core_backward<T>(cache.q, cache.k, cache.v, nullptr, nullptr, ctx.dheads);
      const std::size_t heads = spec.heads, dh = spec.head_dim();
      const std::size_t n_g = spec.n_global, n_l = cache.H * cache.W;
      const std::size_t n = n_g + n_l, kdim = spec.linformer_k;
      g = std::move(ctx.grads);
      g.dtokens = Tensor<T>(cache.x_ln.shape());
      Tensor<T> dk_all({heads, n, dh}), dv_all({heads, n, dh});
      for (std::size_t h = 0; h < heads; ++h) {
        Tensor<T> dk_red = head_slice(core.dk, h);  // [n_g + K, dh]
        Tensor<T> dv_red = head_slice(core.dv, h);
        Tensor<T> dk_proj = row_range(dk_red, n_g, n_g + kdim);
        Tensor<T> dv_proj = row_range(dv_red, n_g, n_g + kdim);
        Tensor<T> kloc = head_slice(cache.k_local, h);
        Tensor<T> vloc = head_slice(cache.v_local, h);
        add_inplace(g.dparams.linformer_p, matmul_nt(dk_proj, kloc));
        add_inplace(g.dparams.linformer_p, matmul_nt(dv_proj, vloc));
        Tensor<T> dk_loc = matmul_tn(params.linformer_p, dk_proj);  // [n_l, dh]
        Tensor<T> dv_loc = matmul_tn(params.linformer_p, dv_proj);
        for (std::size_t gi = 0; gi < n_g; ++gi)
          for (std::size_t t = 0; t < dh; ++t) {
            dk_all(h, gi, t) = dk_red(gi, t);
            dv_all(h, gi, t) = dv_red(gi, t);
          }
        for (std::size_t i = 0; i < n_l; ++i)
          for (std::size_t t = 0; t < dh; ++t) {
            dk_all(h, n_g + i, t) = dk_loc(i, t);
            dv_all(h, n_g + i, t) = dv_loc(i, t);
          }
      }
      Tensor<T> dq_flat = detail::merge_heads(core.dq);
      Tensor<T> dk_flat = detail::merge_heads(dk_all);
      Tensor<T> dv_flat = detail::merge_heads(dv_all);
      detail::fold_projection(cache.x_ln, dq_flat, params.w_q, g.dparams.w_q, g.dparams.b_q, g.dtokens);
      detail::fold_projection(cache.x_ln, dk_flat, params.w_k, g.dparams.w_k, g.dparams.b_k, g.dtokens);
      detail::fold_projection(cache.x_ln, dv_flat, params.w_v, g.dparams.w_v, g.dparams.b_v, g.dtokens);
      break;
    }
    case AttnKind::SRA: {
      detail::ProjGradCtx<T> ctx = detail::begin_mech_backward(params, cache, dout);
      AttendGrads<T> core =
          detail::dense_core_backward<T>(cache.q, cache.k, cache.v, nullptr, nullptr, ctx.dheads);
      const std::size_t R = spec.sra_ratio, d = spec.dim, n_g = spec.n_global;
      const std::size_t n_red = cache.sra_pre_ln.dim(0);
      g = std::move(ctx.grads);
      g.dtokens = Tensor<T>(cache.x_ln.shape());
      Tensor<T> dq_flat = detail::merge_heads(core.dq);
      detail::fold_projection(cache.x_ln, dq_flat, params.w_q, g.dparams.w_q, g.dparams.b_q, g.dtokens);

      Tensor<T> dk_flat = detail::merge_heads(core.dk);  // [n_g + n_red, d]
      Tensor<T> dv_flat = detail::merge_heads(core.dv);
      Tensor<T> dkv_tokens(cache.sra_kv_tokens.shape());
      detail::fold_projection(cache.sra_kv_tokens, dk_flat, params.w_k, g.dparams.w_k, g.dparams.b_k,
                      dkv_tokens);
      detail::fold_projection(cache.sra_kv_tokens, dv_flat, params.w_v, g.dparams.w_v, g.dparams.b_v,
                      dkv_tokens);
      // Global rows feed straight back into the tokens.
      for (std::size_t gi = 0; gi < n_g; ++gi)
        for (std::size_t t = 0; t < d; ++t) g.dtokens(gi, t) += dkv_tokens(gi, t);
      Tensor<T> dreduced = row_range(dkv_tokens, n_g, n_g + n_red);
      Tensor<T> dpre_ln;
      if (R > 1) {
        LayerNormGrads<T> ln =
            layer_norm_backward(cache.sra_pre_ln, params.sra_ln_gamma, dreduced);
        dpre_ln = std::move(ln.dx);
        g.dparams.sra_ln_gamma = std::move(ln.dgamma);
        g.dparams.sra_ln_beta = std::move(ln.dbeta);
      } else {
        dpre_ln = std::move(dreduced);
      }
      Tensor<T> conv_flat = params.sra_conv.reshaped({R * R * d, d});
      Tensor<T> dconv_flat = matmul_tn(cache.sra_patches, dpre_ln);
      g.dparams.sra_conv = dconv_flat.reshaped({R, R, d, d});
      Tensor<T> dpatches = matmul_nt(dpre_ln, conv_flat);
      Tensor<T> dlocals({cache.H * cache.W, d});
      scatter_sra_patches(dpatches, cache.H, cache.W, R, dlocals);
      for (std::size_t i = 0; i < dlocals.dim(0); ++i)
        for (std::size_t t = 0; t < d; ++t) g.dtokens(n_g + i, t) += dlocals(i, t);
      break;
    }
    case AttnKind::Performer: {
      detail::ProjGradCtx<T> ctx = detail::begin_mech_backward(params, cache, dout);
      const std::size_t heads = spec.heads, dh = spec.head_dim(), m = spec.performer_features;
      const std::size_t n = cache.x_ln.dim(0);
      const T prescale = static_cast<T>(std::pow(double(dh), -0.25));
      g = std::move(ctx.grads);
      g.dtokens = Tensor<T>(cache.x_ln.shape());
      Tensor<T> dq_all({heads, n, dh}), dk_all({heads, n, dh}), dv_all({heads, n, dh});
      for (std::size_t h = 0; h < heads; ++h) {
        Tensor<T> qs = head_slice(cache.q, h);
        Tensor<T> ks = head_slice(cache.k, h);
        scale_inplace(qs, prescale);
        scale_inplace(ks, prescale);
        Tensor<T> vh = head_slice(cache.v, h);
        Tensor<T> phiq = head_slice(cache.phi_q, h);  // [n, m]
        Tensor<T> phik = head_slice(cache.phi_k, h);
        Tensor<T> dheads_h = head_slice(ctx.dheads, h);
        Tensor<T> outs_h = head_slice(cache.attn_heads, h);

        // out_i = num_i / den_i with num = phi_q kv_sum, den = phi_q . z.
        Tensor<T> dnum({n, dh});
        Tensor<T> dden({n});
        const T eps = T(1e-8);
        for (std::size_t i = 0; i < n; ++i) {
          const T den = cache.row_denom(h, i);
          T accum = T(0);
          for (std::size_t t = 0; t < dh; ++t) {
            dnum(i, t) = dheads_h(i, t) / den;
            accum += dheads_h(i, t) * outs_h(i, t);
          }
          // A clamped denominator is a constant; no gradient flows through it.
          dden(i) = den <= eps ? T(0) : -accum / den;
        }
        Tensor<T> kv_h({m, dh});
        for (std::size_t f = 0; f < m; ++f)
          for (std::size_t t = 0; t < dh; ++t) kv_h(f, t) = cache.kv_sum(h, f, t);
        Tensor<T> dphiq = matmul_nt(dnum, kv_h);  // [n, m]
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t f = 0; f < m; ++f)
            dphiq(i, f) += dden(i) * cache.key_feature_sum(h, f);
        Tensor<T> dkv = matmul_tn(phiq, dnum);  // [m, dh]
        Tensor<T> dz({m});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t f = 0; f < m; ++f) dz(f) += phiq(i, f) * dden(i);
        Tensor<T> dphik = matmul_nt(vh, dkv);  // [n, m]
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t f = 0; f < m; ++f) dphik(i, f) += dz(f);
        set_head_slice(dv_all, h, matmul(phik, dkv));

        // phi = exp(u)/sqrt(m) with u = proj - |x|^2/2 (stabilizers fixed).
        Tensor<T> du_q({n, m}), du_k({n, m});
        Tensor<T> dsq_q({n}), dsq_k({n});
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t f = 0; f < m; ++f) {
            const T aq = dphiq(i, f) * phiq(i, f);
            du_q(i, f) = aq;
            dsq_q(i) -= aq;
            const T ak = dphik(i, f) * phik(i, f);
            du_k(i, f) = ak;
            dsq_k(i) -= ak;
          }
        }
        Tensor<T> dqs = matmul(du_q, params.performer_omega);  // [n, dh]
        Tensor<T> dks = matmul(du_k, params.performer_omega);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t t = 0; t < dh; ++t) {
            dqs(i, t) += dsq_q(i) * qs(i, t);
            dks(i, t) += dsq_k(i) * ks(i, t);
          }
        add_inplace(g.dparams.performer_omega, matmul_tn(du_q, qs));
        add_inplace(g.dparams.performer_omega, matmul_tn(du_k, ks));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t t = 0; t < dh; ++t) {
            dq_all(h, i, t) = dqs(i, t) * prescale;
            dk_all(h, i, t) = dks(i, t) * prescale;
          }
      }
      Tensor<T> dq_flat = detail::merge_heads(dq_all);
      Tensor<T> dk_flat = detail::merge_heads(dk_all);
      Tensor<T> dv_flat = detail::merge_heads(dv_all);
      detail::fold_projection(cache.x_ln, dq_flat, params.w_q, g.dparams.w_q, g.dparams.b_q, g.dtokens);
      detail::fold_projection(cache.x_ln, dk_flat, params.w_k, g.dparams.w_k, g.dparams.b_k, g.dtokens);
      detail::fold_projection(cache.x_ln, dv_flat, params.w_v, g.dparams.w_v, g.dparams.b_v, g.dtokens);
      break;
    }
  }
  if (!cache.block_wrapper) return g;
  LayerNormGrads<T> ln = layer_norm_backward(cache.x, params.ln_gamma, g.dtokens);
  g.dparams.ln_gamma = std::move(ln.dgamma);
  g.dparams.ln_beta = std::move(ln.dbeta);
  g.dtokens = add(dout, ln.dx);
  return g;
}

#define VILONG_INSTANTIATE_ATTENTION(T)                                                         \
  template Tensor<T> attend_dense<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                     const Tensor<T>*, const AttnMask&);                        \
  template AttendGrads<T> attend_dense_backward<T>(const Tensor<T>&, const Tensor<T>&,         \
                                                   const Tensor<T>&, const Tensor<T>*,         \
                                                   const AttnMask&, const Tensor<T>&);          \
  template Tensor<T> draw_orthogonal_features<T>(std::size_t, std::size_t, Rng&);               \
  template MsaParams<T> make_msa_params<T>(const AttentionSpec&, std::size_t, Rng&);            \
  template MsaParams<T> redraw_features<T>(const MsaParams<T>&, const AttentionSpec&, Rng&,     \
                                           std::uint64_t, std::uint64_t, const RedrawPolicy&);  \
  template Tensor<T> vil_masked_dense_forward<T>(const Tensor<T>&, const MsaParams<T>&,        \
                                                 const AttentionSpec&, std::size_t,            \
                                                 std::size_t, const RpbTable<T>*,              \
                                                 MsaCache<T>*);                                \
  template Tensor<T> global_attention_forward<T>(const Tensor<T>&, const MsaParams<T>&,        \
                                                 const AttentionSpec&, std::size_t,            \
                                                 std::size_t, const RpbTable<T>*,              \
                                                 MsaCache<T>*);                                \
  template Tensor<T> linformer_forward<T>(const Tensor<T>&, const MsaParams<T>&,               \
                                          const AttentionSpec&, std::size_t, std::size_t,      \
                                          MsaCache<T>*);                                       \
  template Tensor<T> sra_forward<T>(const Tensor<T>&, const MsaParams<T>&,                     \
                                    const AttentionSpec&, std::size_t, std::size_t,            \
                                    MsaCache<T>*);                                             \
  template Tensor<T> performer_forward<T>(const Tensor<T>&, const MsaParams<T>&,               \
                                          const AttentionSpec&, std::size_t, std::size_t,      \
                                          MsaCache<T>*, bool);                                 \
  template Tensor<T> msa_forward<T>(const Tensor<T>&, const MsaParams<T>&,                     \
                                    const AttentionSpec&, std::size_t, std::size_t,            \
                                    const RpbTable<T>*, MsaCache<T>*);                         \
  template MsaGrads<T> msa_backward<T>(const MsaParams<T>&, const MsaCache<T>&,                \
                                       const Tensor<T>&);

VILONG_INSTANTIATE_ATTENTION(float)
VILONG_INSTANTIATE_ATTENTION(double)

#undef VILONG_INSTANTIATE_ATTENTION

}  // namespace vilong
