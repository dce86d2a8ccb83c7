#include "vilong/model.hpp"

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vilong/ops.hpp"

namespace vilong {

std::string to_string(PosMode mode) { return mode == PosMode::APE ? "ape" : "rpb"; }
std::string to_string(HeadMode mode) { return mode == HeadMode::CLS ? "cls" : "avgpool"; }

bool pos_mode_from_string(const std::string& name, PosMode& out) {
  if (name == "ape") out = PosMode::APE;
  else if (name == "rpb") out = PosMode::RPB;
  else return false;
  return true;
}

bool head_mode_from_string(const std::string& name, HeadMode& out) {
  if (name == "cls") out = HeadMode::CLS;
  else if (name == "avgpool") out = HeadMode::AvgPool;
  else return false;
  return true;
}

namespace {

// Mechanisms whose keys are tokens of the grid itself; only these consult a
// relative-bias table.
bool mask_backed(AttnKind kind) {
  return kind == AttnKind::Full || kind == AttnKind::ViL || kind == AttnKind::Global;
}

std::size_t rpb_max_disp(const AttentionSpec& spec, std::size_t grid) {
  return spec.kind == AttnKind::ViL ? 2 * spec.chunk_size() : grid;
}

}  // namespace

void validate_config(const ModelConfig& config) {
  if (config.stages.empty()) {
    throw std::invalid_argument("validate_config: a model needs at least one stage");
  }
  if (config.num_classes == 0) {
    throw std::invalid_argument("validate_config: num_classes must be positive");
  }
  if (config.in_channels == 0) {
    throw std::invalid_argument("validate_config: in_channels must be positive");
  }
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    const StageConfig& s = config.stages[i];
    if (s.blocks == 0 || s.patch == 0) {
      throw std::invalid_argument("validate_config: stage " + std::to_string(i) +
                                  " needs blocks >= 1 and patch >= 1");
    }
    validate_spec(s.attention);
  }
  if (config.head_mode == HeadMode::CLS && config.stages.back().attention.n_global == 0) {
    throw std::invalid_argument(
        "validate_config: the CLS head needs a global token in the final stage");
  }
}

template <class T>
FfnParams<T> make_ffn_params(std::size_t d, Rng& rng) {
  FfnParams<T> p;
  p.ln_gamma = Tensor<T>::full({d}, T(1));
  p.ln_beta = Tensor<T>({d});
  p.w1 = trunc_normal_init<T>({d, 4 * d}, 0.02, rng);
  p.b1 = Tensor<T>({4 * d});
  p.w2 = trunc_normal_init<T>({4 * d, d}, 0.02, rng);
  p.b2 = Tensor<T>({d});
  return p;
}

template <class T>
Tensor<T> ffn_forward(const Tensor<T>& tokens, const FfnParams<T>& params, FfnCache<T>* cache) {
  if (tokens.rank() != 2 || tokens.dim(1) != params.ln_gamma.dim(0)) {
    throw std::invalid_argument("ffn_forward: tokens " +
                                detail::shape_to_string(tokens.shape()) +
                                " do not match the parameter width " +
                                std::to_string(params.ln_gamma.dim(0)));
  }
  Tensor<T> x_ln = layer_norm(tokens, params.ln_gamma, params.ln_beta);
  Tensor<T> pre = add_row_bias(matmul(x_ln, params.w1), params.b1);
  Tensor<T> act = gelu(pre);
  Tensor<T> out = add(tokens, add_row_bias(matmul(act, params.w2), params.b2));
  if (cache) {
    cache->x = tokens;
    cache->x_ln = std::move(x_ln);
    cache->pre_act = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

template <class T>
FfnGrads<T> ffn_backward(const FfnParams<T>& params, const FfnCache<T>& cache,
                         const Tensor<T>& dout) {
  if (!dout.same_shape(cache.x)) {
    throw std::invalid_argument("ffn_backward: dout " + detail::shape_to_string(dout.shape()) +
                                " does not match the forward tokens " +
                                detail::shape_to_string(cache.x.shape()));
  }
  FfnGrads<T> g;
  g.dparams.w2 = matmul_tn(cache.act, dout);
  g.dparams.b2 = Tensor<T>({dout.dim(1)});
  for (std::size_t i = 0; i < dout.dim(0); ++i)
    for (std::size_t j = 0; j < dout.dim(1); ++j) g.dparams.b2[j] += dout(i, j);
  Tensor<T> dact = matmul_nt(dout, params.w2);
  Tensor<T> dpre = gelu_backward(cache.pre_act, dact);
  g.dparams.w1 = matmul_tn(cache.x_ln, dpre);
  g.dparams.b1 = Tensor<T>({dpre.dim(1)});
  for (std::size_t i = 0; i < dpre.dim(0); ++i)
    for (std::size_t j = 0; j < dpre.dim(1); ++j) g.dparams.b1[j] += dpre(i, j);
  Tensor<T> dx_ln = matmul_nt(dpre, params.w1);
  LayerNormGrads<T> ln = layer_norm_backward(cache.x, params.ln_gamma, dx_ln);
  g.dparams.ln_gamma = std::move(ln.dgamma);
  g.dparams.ln_beta = std::move(ln.dbeta);
  g.dtokens = add(dout, ln.dx);
  return g;
}

template <class T>
Tensor<T> patch_embed(const Tensor<T>& input, std::size_t p, const PatchEmbedParams<T>& params,
                      PatchEmbedCache<T>* cache) {
  if (input.rank() != 3) {
    throw std::invalid_argument("patch_embed: input must be [H, W, c], got " +
                                detail::shape_to_string(input.shape()));
  }
  const std::size_t H = input.dim(0), W = input.dim(1), c = input.dim(2);
  if (p == 0 || H % p != 0 || W % p != 0) {
    throw std::invalid_argument("patch_embed: patch size " + std::to_string(p) +
                                " must divide the " + std::to_string(H) + "x" +
                                std::to_string(W) + " input");
  }
  const std::size_t cols = p * p * c;
  if (params.weight.rank() != 2 || params.weight.dim(0) != cols) {
    throw std::invalid_argument("patch_embed: weight " +
                                detail::shape_to_string(params.weight.shape()) +
                                " does not match patch size " + std::to_string(p) + " with " +
                                std::to_string(c) + " channels");
  }
  const std::size_t oh = H / p, ow = W / p;
  Tensor<T> patches({oh * ow, cols});
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      T* row = patches.data() + (oy * ow + ox) * cols;
      for (std::size_t py = 0; py < p; ++py) {
        const T* src = input.data() + ((oy * p + py) * W + ox * p) * c;
        std::copy(src, src + p * c, row + py * p * c);
      }
    }
  Tensor<T> tokens = add_row_bias(matmul(patches, params.weight), params.bias);
  Tensor<T> out = layer_norm(tokens, params.ln_gamma, params.ln_beta);
  if (cache != nullptr) {
    cache->patches = patches;
    cache->pre_ln = std::move(tokens);
  }
  return out;
}

template <class T>
PatchEmbedGrads<T> patch_embed_backward(const Tensor<T>& input, std::size_t p,
                                        const PatchEmbedParams<T>& params,
                                        const PatchEmbedCache<T>& cache, const Tensor<T>& dout) {
  const std::size_t H = input.dim(0), W = input.dim(1), c = input.dim(2);
  const std::size_t cols = p * p * c;
  const std::size_t d = params.weight.dim(1);
  if (dout.rank() != 2 || dout.dim(0) != cache.pre_ln.dim(0) || dout.dim(1) != d) {
    throw std::invalid_argument("patch_embed_backward: dout " +
                                detail::shape_to_string(dout.shape()) +
                                " does not match the cached forward");
  }
  PatchEmbedGrads<T> grads;
  LayerNormGrads<T> ln = layer_norm_backward(cache.pre_ln, params.ln_gamma, dout);
  grads.dparams.ln_gamma = std::move(ln.dgamma);
  grads.dparams.ln_beta = std::move(ln.dbeta);
  grads.dparams.bias = Tensor<T>({d});
  for (std::size_t j = 0; j < d; ++j) {
    T acc = T(0);
    for (std::size_t t = 0; t < ln.dx.dim(0); ++t) acc += ln.dx[t * d + j];
    grads.dparams.bias[j] = acc;
  }
  grads.dparams.weight = matmul_tn(cache.patches, ln.dx);
  Tensor<T> dpatches = matmul_nt(ln.dx, params.weight);
  grads.dinput = Tensor<T>({H, W, c});
  const std::size_t oh = H / p, ow = W / p;
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const T* row = dpatches.data() + (oy * ow + ox) * cols;
      for (std::size_t py = 0; py < p; ++py) {
        T* dst = grads.dinput.data() + ((oy * p + py) * W + ox * p) * c;
        std::copy(row + py * p * c, row + (py + 1) * p * c, dst);
      }
    }
  return grads;
}

template <class T>
Model<T> make_model(const ModelConfig& config, std::size_t resolution, Rng& rng) {
  validate_config(config);
  Model<T> model;
  model.config = config;
  model.resolution = resolution;
  std::size_t grid = resolution;
  std::size_t c = config.in_channels;
  for (const StageConfig& s : config.stages) {
    if (grid % s.patch != 0) {
      throw std::invalid_argument("make_model: patch size " + std::to_string(s.patch) +
                                  " does not divide the stage input grid " +
                                  std::to_string(grid));
    }
    grid /= s.patch;
    const AttentionSpec& spec = s.attention;
    const std::size_t d = spec.dim;
    StageParams<T> sp;
    sp.embed.weight = trunc_normal_init<T>({s.patch * s.patch * c, d}, 0.02, rng);
    sp.embed.bias = Tensor<T>({d});
    sp.embed.ln_gamma = Tensor<T>::full({d}, T(1));
    sp.embed.ln_beta = Tensor<T>({d});
    sp.globals = spec.n_global > 0 ? trunc_normal_init<T>({spec.n_global, d}, 0.02, rng)
                                   : Tensor<T>();
    if (config.pos_mode == PosMode::APE) {
      sp.ape = make_ape2d<T>(grid, grid, spec.n_global, d, rng);
    } else if (mask_backed(spec.kind)) {
      sp.rpb = make_rpb_table<T>(spec.heads, rpb_max_disp(spec, grid), rng);
    }
    for (std::size_t b = 0; b < s.blocks; ++b) {
      sp.attn.push_back(make_msa_params<T>(spec, grid * grid, rng));
      sp.ffn.push_back(make_ffn_params<T>(d, rng));
    }
    model.stages.push_back(std::move(sp));
    c = d;
  }
  const std::size_t d_last = config.stages.back().attention.dim;
  model.final_ln_gamma = Tensor<T>::full({d_last}, T(1));
  model.final_ln_beta = Tensor<T>({d_last});
  model.classifier_w = Tensor<T>({d_last, config.num_classes});
  model.classifier_b = Tensor<T>({config.num_classes});
  return model;
}

template <class T>
StageResult<T> stage_forward(const Tensor<T>& feature_map, const StageConfig& cfg,
                             const StageParams<T>& params, PosMode pos_mode) {
  const AttentionSpec& spec = cfg.attention;
  Tensor<T> locals = patch_embed(feature_map, cfg.patch, params.embed);
  const std::size_t H = feature_map.dim(0) / cfg.patch, W = feature_map.dim(1) / cfg.patch;
  const std::size_t n_g = spec.n_global, d = spec.dim;
  Tensor<T> tokens({n_g + H * W, d});
  for (std::size_t g = 0; g < n_g; ++g)
    for (std::size_t j = 0; j < d; ++j) tokens(g, j) = params.globals(g, j);
  std::copy(locals.data(), locals.data() + locals.size(), tokens.data() + n_g * d);
  if (pos_mode == PosMode::APE) {
    tokens = ape_apply(tokens, params.ape, H, W);
  }
  const RpbTable<T>* rpb =
      pos_mode == PosMode::RPB && params.rpb.heads > 0 ? &params.rpb : nullptr;
  if (params.attn.size() != cfg.blocks || params.ffn.size() != cfg.blocks) {
    throw std::invalid_argument("stage_forward: parameter block count does not match the config");
  }
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    tokens = msa_forward(tokens, params.attn[b], spec, H, W, rpb);
    tokens = ffn_forward(tokens, params.ffn[b]);
  }
  StageResult<T> out;
  if (n_g > 0) {
    out.globals = Tensor<T>({n_g, d});
    std::copy(tokens.data(), tokens.data() + n_g * d, out.globals.data());
  }
  out.grid = Tensor<T>({H, W, d});
  std::copy(tokens.data() + n_g * d, tokens.data() + tokens.size(), out.grid.data());
  return out;
}

template <class T>
ModelOutput<T> model_forward(const Tensor<T>& image, const Model<T>& model) {
  const ModelConfig& config = model.config;
  if (image.rank() != 3 || image.dim(2) != config.in_channels) {
    throw std::invalid_argument("model_forward: image must be [H, W, " +
                                std::to_string(config.in_channels) + "], got " +
                                detail::shape_to_string(image.shape()));
  }
  Tensor<T> fm = image;
  Tensor<T> last_globals;
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    StageResult<T> r = stage_forward(fm, config.stages[i], model.stages[i], config.pos_mode);
    fm = std::move(r.grid);
    last_globals = std::move(r.globals);
  }
  const std::size_t d = fm.dim(2), n_l = fm.dim(0) * fm.dim(1);
  ModelOutput<T> out;
  if (config.head_mode == HeadMode::AvgPool) {
    Tensor<T> flat = fm.reshaped({n_l, d});
    Tensor<T> normed = layer_norm(flat, model.final_ln_gamma, model.final_ln_beta);
    out.features = Tensor<T>({d});
    for (std::size_t i = 0; i < n_l; ++i)
      for (std::size_t j = 0; j < d; ++j) out.features[j] += normed(i, j);
    const T inv = T(1) / static_cast<T>(n_l);
    for (std::size_t j = 0; j < d; ++j) out.features[j] *= inv;
  } else {
    if (last_globals.empty()) {
      throw std::invalid_argument("model_forward: the CLS head needs a global token in the "
                                  "final stage");
    }
    Tensor<T> cls({1, d});
    std::copy(last_globals.data(), last_globals.data() + d, cls.data());
    Tensor<T> normed = layer_norm(cls, model.final_ln_gamma, model.final_ln_beta);
    out.features = normed.reshaped({d});
  }
  Tensor<T> feat_row = out.features.reshaped({std::size_t{1}, d});
  Tensor<T> logits = add_row_bias(matmul(feat_row, model.classifier_w), model.classifier_b);
  out.logits = logits.reshaped({config.num_classes});
  return out;
}

std::uint64_t param_count(const ModelConfig& config, std::size_t num_classes, PosMode pos_mode,
                          std::size_t resolution) {
  validate_config(config);
  std::uint64_t total = 0;
  std::uint64_t grid = resolution;
  std::uint64_t c = config.in_channels;
  for (const StageConfig& s : config.stages) {
    if (grid % s.patch != 0) {
      throw std::invalid_argument("param_count: patch size " + std::to_string(s.patch) +
                                  " does not divide the stage input grid " +
                                  std::to_string(grid));
    }
    grid /= s.patch;
    const AttentionSpec& spec = s.attention;
    const std::uint64_t d = spec.dim, h = spec.heads, n_g = spec.n_global;
    const std::uint64_t p = s.patch;
    total += p * p * c * d + d;  // patch embedding
    total += 2 * d;              // its LayerNorm
    total += n_g * d;            // global tokens
    if (pos_mode == PosMode::APE) {
      total += 2 * grid * (d / 2) + n_g * d;
    } else if (mask_backed(spec.kind)) {
      const std::uint64_t side = 2 * rpb_max_disp(spec, grid) - 1;
      total += h * side * side + 3 * h;
    }
    std::uint64_t per_block = 12 * d * d + 13 * d;  // MSA (4d^2+6d) + FFN (8d^2+7d)
    if (spec.kind == AttnKind::Linformer) per_block += spec.linformer_k * grid * grid;
    if (spec.kind == AttnKind::SRA)
      per_block += std::uint64_t(spec.sra_ratio) * spec.sra_ratio * d * d + 2 * d;
    if (spec.kind == AttnKind::Performer) per_block += spec.performer_features * (d / h);
    total += s.blocks * per_block;
    c = d;
  }
  const std::uint64_t d_last = config.stages.back().attention.dim;
  total += 2 * d_last;                          // final LayerNorm
  total += d_last * num_classes + num_classes;  // classifier
  return total;
}

std::uint64_t param_count(const ModelConfig& config, std::size_t resolution) {
  return param_count(config, config.num_classes, config.pos_mode, resolution);
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(Model<T>& model) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (std::size_t i = 0; i < model.stages.size(); ++i) {
    StageParams<T>& sp = model.stages[i];
    const std::string prefix = "stage" + std::to_string(i) + ".";
    out.emplace_back(prefix + "embed.weight", &sp.embed.weight);
    out.emplace_back(prefix + "embed.bias", &sp.embed.bias);
    out.emplace_back(prefix + "embed.ln_gamma", &sp.embed.ln_gamma);
    out.emplace_back(prefix + "embed.ln_beta", &sp.embed.ln_beta);
    out.emplace_back(prefix + "globals", &sp.globals);
    out.emplace_back(prefix + "ape.y_table", &sp.ape.y_table);
    out.emplace_back(prefix + "ape.x_table", &sp.ape.x_table);
    out.emplace_back(prefix + "ape.global_table", &sp.ape.global_table);
    out.emplace_back(prefix + "rpb.table", &sp.rpb.table);
    out.emplace_back(prefix + "rpb.global_bias", &sp.rpb.global_bias);
    for (std::size_t b = 0; b < sp.attn.size(); ++b) {
      const std::string bp = prefix + "block" + std::to_string(b) + ".";
      MsaParams<T>& a = sp.attn[b];
      out.emplace_back(bp + "attn.ln_gamma", &a.ln_gamma);
      out.emplace_back(bp + "attn.ln_beta", &a.ln_beta);
      out.emplace_back(bp + "attn.w_q", &a.w_q);
      out.emplace_back(bp + "attn.w_k", &a.w_k);
      out.emplace_back(bp + "attn.w_v", &a.w_v);
      out.emplace_back(bp + "attn.w_o", &a.w_o);
      out.emplace_back(bp + "attn.b_q", &a.b_q);
      out.emplace_back(bp + "attn.b_k", &a.b_k);
      out.emplace_back(bp + "attn.b_v", &a.b_v);
      out.emplace_back(bp + "attn.b_o", &a.b_o);
      out.emplace_back(bp + "attn.linformer_p", &a.linformer_p);
      out.emplace_back(bp + "attn.sra_conv", &a.sra_conv);
      out.emplace_back(bp + "attn.sra_ln_gamma", &a.sra_ln_gamma);
      out.emplace_back(bp + "attn.sra_ln_beta", &a.sra_ln_beta);
      out.emplace_back(bp + "attn.performer_omega", &a.performer_omega);
      FfnParams<T>& f = sp.ffn[b];
      out.emplace_back(bp + "ffn.ln_gamma", &f.ln_gamma);
      out.emplace_back(bp + "ffn.ln_beta", &f.ln_beta);
      out.emplace_back(bp + "ffn.w1", &f.w1);
      out.emplace_back(bp + "ffn.b1", &f.b1);
      out.emplace_back(bp + "ffn.w2", &f.w2);
      out.emplace_back(bp + "ffn.b2", &f.b2);
    }
  }
  out.emplace_back("final_ln.gamma", &model.final_ln_gamma);
  out.emplace_back("final_ln.beta", &model.final_ln_beta);
  out.emplace_back("classifier.weight", &model.classifier_w);
  out.emplace_back("classifier.bias", &model.classifier_b);
  return out;
}

#define VILONG_INSTANTIATE_MODEL(T)                                                            \
  template FfnParams<T> make_ffn_params<T>(std::size_t, Rng&);                                 \
  template Tensor<T> ffn_forward<T>(const Tensor<T>&, const FfnParams<T>&, FfnCache<T>*);      \
  template FfnGrads<T> ffn_backward<T>(const FfnParams<T>&, const FfnCache<T>&,                \
                                       const Tensor<T>&);                                      \
  template Tensor<T> patch_embed<T>(const Tensor<T>&, std::size_t,                             \
                                    const PatchEmbedParams<T>&, PatchEmbedCache<T>*);          \
  template PatchEmbedGrads<T> patch_embed_backward<T>(const Tensor<T>&, std::size_t,           \
                                                      const PatchEmbedParams<T>&,              \
                                                      const PatchEmbedCache<T>&,               \
                                                      const Tensor<T>&);                       \
  template Model<T> make_model<T>(const ModelConfig&, std::size_t, Rng&);                      \
  template StageResult<T> stage_forward<T>(const Tensor<T>&, const StageConfig&,               \
                                           const StageParams<T>&, PosMode);                    \
  template ModelOutput<T> model_forward<T>(const Tensor<T>&, const Model<T>&);                 \
  template std::vector<std::pair<std::string, Tensor<T>*>> named_tensors<T>(Model<T>&);

VILONG_INSTANTIATE_MODEL(float)
VILONG_INSTANTIATE_MODEL(double)

#undef VILONG_INSTANTIATE_MODEL

}  // namespace vilong
