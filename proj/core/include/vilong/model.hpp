#pragma once

// Multi-scale transformer stages: patch embedding, FFN blocks, stage
// composition, classification heads, the named configuration registry, and
// exact parameter counting.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vilong/attention.hpp"
#include "vilong/posenc.hpp"
#include "vilong/rng.hpp"
#include "vilong/tensor.hpp"

namespace vilong {

enum class PosMode { APE, RPB };
enum class HeadMode { CLS, AvgPool };

std::string to_string(PosMode mode);
std::string to_string(HeadMode mode);
bool pos_mode_from_string(const std::string& name, PosMode& out);
bool head_mode_from_string(const std::string& name, HeadMode& out);

// One stage: n alternating attention/FFN blocks over the grid produced by a
// p x p patch embedding of the previous feature map.
struct StageConfig {
  AttentionSpec attention;  // mechanism, heads, dim, globals, window, knobs
  std::size_t blocks = 1;   // n
  std::size_t patch = 2;    // p
};

struct ModelConfig {
  std::vector<StageConfig> stages;
  PosMode pos_mode = PosMode::RPB;
  HeadMode head_mode = HeadMode::AvgPool;
  std::size_t num_classes = 1000;
  std::size_t in_channels = 3;
};

// Structural validation: non-empty stage list, valid attention specs,
// positive patch sizes and block counts, and a final stage that still has a
// global token when the CLS head is selected.
void validate_config(const ModelConfig& config);

template <class T>
struct FfnParams {
  Tensor<T> ln_gamma, ln_beta;  // [d]
  Tensor<T> w1;                 // [d, 4d]
  Tensor<T> b1;                 // [4d]
  Tensor<T> w2;                 // [4d, d]
  Tensor<T> b2;                 // [d]
};

template <class T>
struct FfnCache {
  Tensor<T> x, x_ln;
  Tensor<T> pre_act;  // before GELU
  Tensor<T> act;
};

template <class T>
struct FfnGrads {
  Tensor<T> dtokens;
  FfnParams<T> dparams;
};

template <class T>
FfnParams<T> make_ffn_params(std::size_t d, Rng& rng);

// out = x + W2 gelu(W1 LN(x) + b1) + b2, hidden width 4d.
template <class T>
Tensor<T> ffn_forward(const Tensor<T>& tokens, const FfnParams<T>& params,
                      FfnCache<T>* cache = nullptr);

template <class T>
FfnGrads<T> ffn_backward(const FfnParams<T>& params, const FfnCache<T>& cache,
                         const Tensor<T>& dout);

template <class T>
struct PatchEmbedParams {
  Tensor<T> weight;             // [p*p*c, d]
  Tensor<T> bias;               // [d]
  Tensor<T> ln_gamma, ln_beta;  // [d]
};

template <class T>
struct PatchEmbedCache {
  Tensor<T> patches;  // [(H/p)*(W/p), p*p*c]
  Tensor<T> pre_ln;   // linear output before the LayerNorm
};

template <class T>
struct PatchEmbedGrads {
  Tensor<T> dinput;  // [H, W, c]
  PatchEmbedParams<T> dparams;
};

// Non-overlapping p x p patches of a [H, W, c] map, flattened row-major as
// (py, px, channel), linearly mapped to d and LayerNormed per token. Output
// is [(H/p)*(W/p), d] with tokens in row-major grid order.
template <class T>
Tensor<T> patch_embed(const Tensor<T>& input, std::size_t p, const PatchEmbedParams<T>& params,
                      PatchEmbedCache<T>* cache = nullptr);

template <class T>
PatchEmbedGrads<T> patch_embed_backward(const Tensor<T>& input, std::size_t p,
                                        const PatchEmbedParams<T>& params,
                                        const PatchEmbedCache<T>& cache, const Tensor<T>& dout);

template <class T>
struct StageParams {
  PatchEmbedParams<T> embed;
  Tensor<T> globals;  // [n_g, d], learned
  Ape2d<T> ape;       // APE mode only (dim() == 0 otherwise)
  RpbTable<T> rpb;    // RPB mode, mask-backed mechanisms only (heads == 0 otherwise)
  std::vector<MsaParams<T>> attn;  // one per block
  std::vector<FfnParams<T>> ffn;
};

template <class T>
struct Model {
  ModelConfig config;
  std::size_t resolution = 224;  // input side length the tables were built for
  std::vector<StageParams<T>> stages;
  Tensor<T> final_ln_gamma, final_ln_beta;  // [d_last]
  Tensor<T> classifier_w;                   // [d_last, classes], zero-initialized
  Tensor<T> classifier_b;                   // [classes]
};

// Random initialization. resolution fixes the APE table extents and the
// Linformer projection bindings, so it must match the forward inputs.
template <class T>
Model<T> make_model(const ModelConfig& config, std::size_t resolution, Rng& rng);

template <class T>
struct StageResult {
  Tensor<T> grid;     // [H/p, W/p, d] local tokens
  Tensor<T> globals;  // [n_g, d] global tokens after the stage
};

// Patch embedding, global-token prepend, positional terms, then the stage's
// alternating attention/FFN blocks.
template <class T>
StageResult<T> stage_forward(const Tensor<T>& feature_map, const StageConfig& cfg,
                             const StageParams<T>& params, PosMode pos_mode);

template <class T>
struct ModelOutput {
  Tensor<T> logits;    // [num_classes]
  Tensor<T> features;  // [d_last] pooled pre-classifier feature
};

// Stages applied in order; global tokens are dropped at stage boundaries and
// only the local grid feeds the next stage. Head: AvgPool classifies the
// LayerNormed mean of the final local tokens, CLS the LayerNormed first
// global token of the final stage.
template <class T>
ModelOutput<T> model_forward(const Tensor<T>& image, const Model<T>& model);

// Exact number of scalars a Model built from this config holds, as a pure
// function of the config; num_classes and pos_mode override the config's own
// fields. resolution fixes the APE/Linformer table extents.
std::uint64_t param_count(const ModelConfig& config, std::size_t num_classes, PosMode pos_mode,
                          std::size_t resolution = 224);
std::uint64_t param_count(const ModelConfig& config, std::size_t resolution = 224);

// Named configurations with the published (n, p, h, d) stage tuples.
// Unknown names raise an error listing every known name.
ModelConfig registry_lookup(const std::string& name);
std::vector<std::string> registry_names();

// Stable name -> tensor mapping over every parameter in the model, for
// serialization and enumeration. Empty (absent) tensors are included so
// callers can decide how to treat them.
template <class T>
std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(Model<T>& model);

}  // namespace vilong
