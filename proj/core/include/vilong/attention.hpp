#pragma once

// Attention mechanisms: full attention, 2-D local attention with global
// memory (masked-dense and sliding-chunk implementations), and the rival
// mechanisms (Global, Linformer, SRA, Performer). Forward plus analytic
// backward for each.

#include <cstdint>
#include <string>
#include <vector>

#include "vilong/ops.hpp"
#include "vilong/posenc.hpp"
#include "vilong/rng.hpp"
#include "vilong/tensor.hpp"

namespace vilong {

enum class AttnKind { Full, ViL, Global, Linformer, SRA, Performer };
enum class MaskingMode { ExactSlidingWindow, SlidingChunkNoPad, SlidingChunkCyclic };

std::string to_string(AttnKind kind);
std::string to_string(MaskingMode mode);
bool attn_kind_from_string(const std::string& name, AttnKind& out);
bool masking_mode_from_string(const std::string& name, MaskingMode& out);

struct AttentionSpec {
  AttnKind kind = AttnKind::Full;
  std::size_t heads = 1;
  std::size_t dim = 64;       // model dim; divisible by heads
  std::size_t n_global = 1;   // global (memory) tokens, CLS included
  // ViL
  std::size_t window = 15;    // odd 2-D window side length
  MaskingMode masking = MaskingMode::SlidingChunkNoPad;
  int shift_mode = 0;         // -1 own chunk, 0 all 8 neighbors, 1..8 own + that neighbor
  // Linformer
  std::size_t linformer_k = 256;
  // SRA
  std::size_t sra_ratio = 1;
  // Performer
  std::size_t performer_features = 256;

  std::size_t head_dim() const { return dim / heads; }
  // Chunk side length; the window must satisfy window == 2*chunk - 1.
  std::size_t chunk_size() const { return (window + 1) / 2; }
};

// Throws on structurally invalid specs (even window, head mismatch, shift
// mode out of range, shift restriction on the exact-window mode).
void validate_spec(const AttentionSpec& spec);

// Per-block attention parameters. Projections
// are shared by global and local tokens. ln_* is the pre-attention LayerNorm
// of the residual block. Mechanism extras stay default-constructed (empty)
// for mechanisms that do not use them.
template <class T>
struct MsaParams {
  Tensor<T> ln_gamma, ln_beta;              // [d]
  Tensor<T> w_q, w_k, w_v, w_o;             // [d, d]
  Tensor<T> b_q, b_k, b_v, b_o;             // [d]
  Tensor<T> linformer_p;                    // [K, n_l]; bound to one n_l
  Tensor<T> sra_conv;                       // [R, R, d, d]
  Tensor<T> sra_ln_gamma, sra_ln_beta;      // [d]
  Tensor<T> performer_omega;                // [m, d_h], orthogonal Gaussian rows
};

// Random initialization for tests, benchmarks and cmd_forward; n_l fixes the
// Linformer projection's resolution binding.
template <class T>
MsaParams<T> make_msa_params(const AttentionSpec& spec, std::size_t n_l, Rng& rng);

// Boolean attendance matrix over n_g globals followed by H*W row-major local
// tokens; 1 = query row attends key column. Global rows and columns are
// always fully attended, as is the diagonal.
struct AttnMask {
  std::size_t n_global = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor<std::uint8_t> attend;  // [N, N]

  std::size_t tokens() const { return n_global + height * width; }
  std::uint64_t popcount() const;
};

// Mask plus the displacement each attended local-local pair uses for
// relative-bias lookup. For the cyclic mode a wrapped pair's displacement is
// the canonical in-neighborhood one (smallest |dy|+|dx| over the chunk slots
// that reach the key, earliest slot on ties); everywhere else it is the plain
// key-minus-query offset.
struct MaskBundle {
  AttnMask mask;
  Tensor<std::int32_t> dy;  // [n_l, n_l], valid where mask.attend is set
  Tensor<std::int32_t> dx;
};

AttnMask build_vil_mask(std::size_t H, std::size_t W, std::size_t n_g, std::size_t window,
                        MaskingMode masking, int shift_mode);
MaskBundle build_vil_mask_bundle(std::size_t H, std::size_t W, std::size_t n_g,
                                 std::size_t window, MaskingMode masking, int shift_mode);

AttnMask build_full_mask(std::size_t H, std::size_t W, std::size_t n_g);
// Locals attend globals and themselves; globals attend everything.
AttnMask build_global_mask(std::size_t H, std::size_t W, std::size_t n_g);

// Training-time shift-mode schedule: uniform over {1..8} while
// step < switch_fraction * total_steps, mode 0 afterwards.
int sample_shift_mode(Rng& rng, std::uint64_t step, std::uint64_t total_steps,
                      double switch_fraction);

// Dense reference attention: per head softmax(Q K^T / sqrt(d_h) + bias) V.
// q,k,v are [heads, N, d_h]; bias, when given, is [heads, N, N]; the mask has
// N tokens. Streams over row blocks, so no [N, N] buffer is materialized.
template <class T>
Tensor<T> attend_dense(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                       const Tensor<T>* bias, const AttnMask& mask);

template <class T>
struct AttendGrads {
  Tensor<T> dq, dk, dv;
};

// Recomputes probabilities block by block from the forward inputs.
template <class T>
AttendGrads<T> attend_dense_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     const Tensor<T>* bias, const AttnMask& mask,
                                     const Tensor<T>& dout);

// One gathered attention block of the sliding-chunk path: the real query
// tokens of a chunk against the real tokens of its reachable chunks, globals
// appended last. When global tokens exist a leading block carries the global
// query rows against every token. Ids index the full token array (globals
// first, then row-major locals).
template <class T>
struct ChunkBlock {
  std::vector<std::size_t> q_tok;
  std::vector<std::size_t> k_tok;
  Tensor<std::uint8_t> mask;  // [nq, nk]; empty means all-attended
  Tensor<T> probs;            // [heads, nq, nk]
};

template <class T>
struct MsaCache {
  AttentionSpec spec;
  std::size_t H = 0, W = 0;
  bool block_wrapper = false;   // set when produced through msa_forward (LN + residual)
  Tensor<T> x;                  // block input [N, d] (block_wrapper only)
  Tensor<T> x_ln;               // the tokens the mechanism consumed
  Tensor<T> q;                  // [heads, N, d_h]
  Tensor<T> k, v;               // the attended key/value set [heads, M, d_h]
  Tensor<T> attn_concat;        // merged head outputs before W_o [N, d]
  Tensor<T> bias;               // dense bias actually applied, empty when none
  AttnMask mask;                // dense mechanisms with a mask
  std::vector<ChunkBlock<T>> chunks;  // sliding-chunk path
  // Linformer: per-head local keys/values before projection.
  Tensor<T> k_local, v_local;   // [heads, n_l, d_h]
  // SRA: gathered conv patches, conv output before its LayerNorm, and the
  // tokens the K/V projections consumed.
  Tensor<T> sra_patches;        // [n_red, R*R*d]
  Tensor<T> sra_pre_ln;         // [n_red, d]
  Tensor<T> sra_kv_tokens;      // [n_g + n_red, d]
  // Performer.
  Tensor<T> phi_q, phi_k;       // [heads, N, m]
  Tensor<T> kv_sum;             // [heads, m, d_h]
  Tensor<T> key_feature_sum;    // [heads, m]
  Tensor<T> row_denom;          // [heads, N]
  Tensor<T> attn_heads;         // [heads, N, d_h] output of the attention core
};

template <class T>
struct MsaGrads {
  Tensor<T> dtokens;
  MsaParams<T> dparams;  // same shapes as the forward params; zeros where unused
};

// The full pre-LN residual attention block:
//   out = tokens + W_o(attend(LN(tokens))) .
// rpb supplies the relative bias for Full/ViL/Global; mechanisms with
// reduced or feature-space keys have no pairwise offsets and ignore it.
template <class T>
Tensor<T> msa_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                      const AttentionSpec& spec, std::size_t H, std::size_t W,
                      const RpbTable<T>* rpb, MsaCache<T>* cache = nullptr);

template <class T>
MsaGrads<T> msa_backward(const MsaParams<T>& params, const MsaCache<T>& cache,
                         const Tensor<T>& dout);

// Projections + chunked local/global attention + output projection (no
// LayerNorm, no residual): the sliding-chunk implementation of the ViL
// mechanism. Grids not divisible by the chunk size are handled by skipping
// the phantom cells of the padded chunk grid.
template <class T>
Tensor<T> vil_sliding_chunk_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                                    const AttentionSpec& spec, std::size_t H, std::size_t W,
                                    const RpbTable<T>* rpb, MsaCache<T>* cache = nullptr);

// Same contract computed via build_vil_mask + attend_dense; the O(N^2)
// in-library counterpart used for benchmarking and cross-checks.
template <class T>
Tensor<T> vil_masked_dense_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                                   const AttentionSpec& spec, std::size_t H, std::size_t W,
                                   const RpbTable<T>* rpb, MsaCache<T>* cache = nullptr);

template <class T>
Tensor<T> global_attention_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                                   const AttentionSpec& spec, std::size_t H, std::size_t W,
                                   const RpbTable<T>* rpb, MsaCache<T>* cache = nullptr);

template <class T>
Tensor<T> linformer_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                            const AttentionSpec& spec, std::size_t H, std::size_t W,
                            MsaCache<T>* cache = nullptr);

template <class T>
Tensor<T> sra_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                      const AttentionSpec& spec, std::size_t H, std::size_t W,
                      MsaCache<T>* cache = nullptr);

template <class T>
Tensor<T> performer_forward(const Tensor<T>& tokens, const MsaParams<T>& params,
                            const AttentionSpec& spec, std::size_t H, std::size_t W,
                            MsaCache<T>* cache = nullptr, bool strict = false);

// Performer redraw policy: the classification schedule redraws whenever
// step % (1 + 5*epoch) == 0; the fixed-interval schedule every `interval`
// steps.
struct RedrawPolicy {
  enum class Kind { Classification, FixedInterval } kind = Kind::Classification;
  std::uint64_t interval = 1;
};

bool redraw_due(const RedrawPolicy& policy, std::uint64_t step, std::uint64_t epoch);

// Replaces params.performer_omega with a fresh orthogonal draw when the
// policy fires; otherwise returns params unchanged.
template <class T>
MsaParams<T> redraw_features(const MsaParams<T>& params, const AttentionSpec& spec, Rng& rng,
                             std::uint64_t step, std::uint64_t epoch,
                             const RedrawPolicy& policy = {});

// Orthogonal Gaussian feature matrix [m, d_h]: blocks of d_h orthonormal rows
// rescaled to chi(d_h)-distributed norms.
template <class T>
Tensor<T> draw_orthogonal_features(std::size_t m, std::size_t d_h, Rng& rng);

}  // namespace vilong
