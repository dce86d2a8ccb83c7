#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_helpers.hpp"
#include "vilong/model.hpp"
#include "vilong/ops.hpp"
#include "vilong/oracle.hpp"
#include "vilong/rng.hpp"

using namespace vilong;
using vilong::testing::bitwise_equal;


namespace {

// Two tiny stages over a 16x16 single-channel input: a windowed stage into a
// full-attention stage, small enough for exhaustive unit checks.
ModelConfig tiny_config() {
  ModelConfig config;
  config.num_classes = 5;
  config.in_channels = 1;
  config.pos_mode = PosMode::RPB;
  config.head_mode = HeadMode::AvgPool;
  StageConfig s0;
  s0.blocks = 1;
  s0.patch = 4;
  s0.attention.kind = AttnKind::ViL;
  s0.attention.heads = 2;
  s0.attention.dim = 8;
  s0.attention.n_global = 1;
  s0.attention.window = 3;
  StageConfig s1;
  s1.blocks = 1;
  s1.patch = 2;
  s1.attention.kind = AttnKind::Full;
  s1.attention.heads = 2;
  s1.attention.dim = 12;
  s1.attention.n_global = 1;
  config.stages = {s0, s1};
  return config;
}

}  // namespace

TEST_CASE("ffn with a zero second linear is the identity") {
  Rng rng(61);
  FfnParams<double> params = make_ffn_params<double>(6, rng);
  params.w2 = Tensor<double>({24, 6});
  params.b2 = Tensor<double>({6});
  Tensor<double> tokens = uniform_init<double>({5, 6}, -1.0, 1.0, rng);
  CHECK(bitwise_equal(ffn_forward(tokens, params), tokens));
}

TEST_CASE("ffn preserves the token shape and widens by four internally") {
  Rng rng(62);
  FfnParams<double> params = make_ffn_params<double>(6, rng);
  CHECK(params.w1.dim(1) == 24);
  CHECK(params.w2.dim(0) == 24);
  Tensor<double> tokens = uniform_init<double>({7, 6}, -1.0, 1.0, rng);
  Tensor<double> out = ffn_forward(tokens, params);
  CHECK(out.dim(0) == 7);
  CHECK(out.dim(1) == 6);
}

TEST_CASE("ffn backward matches finite differences") {
  Rng rng(63);
  const std::size_t d = 4;
  FfnParams<double> params = make_ffn_params<double>(d, rng);
  params.w1 = trunc_normal_init<double>({d, 4 * d}, 0.3, rng);
  params.w2 = trunc_normal_init<double>({4 * d, d}, 0.3, rng);
  params.b1 = trunc_normal_init<double>({4 * d}, 0.1, rng);
  params.b2 = trunc_normal_init<double>({d}, 0.1, rng);
  Tensor<double> tokens = uniform_init<double>({3, d}, -1.0, 1.0, rng);
  Tensor<double> w = uniform_init<double>({3, d}, -1.0, 1.0, rng);

  FfnCache<double> cache;
  ffn_forward(tokens, params, &cache);
  FfnGrads<double> grads = ffn_backward(params, cache, w);

  auto weighted = [&](const Tensor<double>& out) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += w[i] * out[i];
    return acc;
  };
  auto check = [&](const Tensor<double>& x, const Tensor<double>& analytic,
                   const std::function<double(const Tensor<double>&)>& f) {
    Tensor<double> fd = oracle::finite_diff_grad(f, x);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      worst = std::max(worst, oracle::rel_err(analytic[i], fd[i]));
    CHECK(worst < 1e-6);
  };
  check(tokens, grads.dtokens,
        [&](const Tensor<double>& t) { return weighted(ffn_forward(t, params)); });
  check(params.w1, grads.dparams.w1, [&](const Tensor<double>& t) {
    FfnParams<double> p = params;
    p.w1 = t;
    return weighted(ffn_forward(tokens, p));
  });
  check(params.w2, grads.dparams.w2, [&](const Tensor<double>& t) {
    FfnParams<double> p = params;
    p.w2 = t;
    return weighted(ffn_forward(tokens, p));
  });
  check(params.ln_gamma, grads.dparams.ln_gamma, [&](const Tensor<double>& t) {
    FfnParams<double> p = params;
    p.ln_gamma = t;
    return weighted(ffn_forward(tokens, p));
  });
}

TEST_CASE("patch_embed produces the expected token counts") {
  Rng rng(64);
  PatchEmbedParams<double> params;
  params.weight = trunc_normal_init<double>({16 * 16 * 3, 8}, 0.02, rng);
  params.bias = Tensor<double>({8});
  params.ln_gamma = Tensor<double>::full({8}, 1.0);
  params.ln_beta = Tensor<double>({8});
  Tensor<double> image = uniform_init<double>({224, 224, 3}, 0.0, 1.0, rng);
  CHECK(patch_embed(image, 16, params).dim(0) == 196);

  PatchEmbedParams<double> p4;
  p4.weight = trunc_normal_init<double>({4 * 4 * 3, 4}, 0.02, rng);
  p4.bias = Tensor<double>({4});
  p4.ln_gamma = Tensor<double>::full({4}, 1.0);
  p4.ln_beta = Tensor<double>({4});
  CHECK(patch_embed(image, 4, p4).dim(0) == 56 * 56);
}

TEST_CASE("patch_embed with patch one and identity weight is a row LayerNorm") {
  Rng rng(65);
  const std::size_t d = 3;
  PatchEmbedParams<double> params;
  params.weight = Tensor<double>({d, d});
  for (std::size_t j = 0; j < d; ++j) params.weight(j, j) = 1.0;
  params.bias = Tensor<double>({d});
  params.ln_gamma = Tensor<double>::full({d}, 1.0);
  params.ln_beta = Tensor<double>({d});
  Tensor<double> input = uniform_init<double>({2, 2, d}, -1.0, 1.0, rng);
  Tensor<double> tokens = patch_embed(input, 1, params);
  Tensor<double> rows({4, d});
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = input[i];
  CHECK(bitwise_equal(tokens, layer_norm(rows, params.ln_gamma, params.ln_beta)));
}

TEST_CASE("patch_embed flattens patches as row, column, channel") {
  PatchEmbedParams<double> params;
  params.weight = Tensor<double>({4, 2});
  params.weight(0, 0) = 1.0;  // picks the patch's top-left cell
  params.weight(1, 1) = 1.0;  // picks the patch's top-right cell
  params.bias = Tensor<double>({2});
  params.ln_gamma = Tensor<double>::full({2}, 1.0);
  params.ln_beta = Tensor<double>({2});
  Tensor<double> input({4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) input[i] = double(i);
  PatchEmbedCache<double> cache;
  patch_embed(input, 2, params, &cache);
  CHECK(cache.pre_ln(0, 0) == 0.0);
  CHECK(cache.pre_ln(0, 1) == 1.0);
  CHECK(cache.pre_ln(1, 0) == 2.0);
  CHECK(cache.pre_ln(1, 1) == 3.0);
  CHECK(cache.pre_ln(2, 0) == 8.0);
  CHECK(cache.pre_ln(2, 1) == 9.0);
  CHECK(cache.patches(0, 0) == 0.0);
  CHECK(cache.patches(0, 1) == 1.0);
  CHECK(cache.patches(0, 2) == 4.0);
  CHECK(cache.patches(0, 3) == 5.0);
}

TEST_CASE("patch_embed rejects indivisible grids and mismatched weights") {
  PatchEmbedParams<double> params;
  params.weight = Tensor<double>({4, 2});
  params.bias = Tensor<double>({2});
  params.ln_gamma = Tensor<double>::full({2}, 1.0);
  params.ln_beta = Tensor<double>({2});
  Tensor<double> input({5, 4, 1});
  CHECK_THROWS_AS(patch_embed(input, 2, params), std::invalid_argument);
  Tensor<double> ok({4, 4, 2});
  CHECK_THROWS_AS(patch_embed(ok, 2, params), std::invalid_argument);
}

TEST_CASE("patch_embed backward matches finite differences") {
  Rng rng(66);
  const std::size_t d = 4, p = 2;
  PatchEmbedParams<double> params;
  params.weight = trunc_normal_init<double>({p * p * 2, d}, 0.3, rng);
  params.bias = trunc_normal_init<double>({d}, 0.1, rng);
  params.ln_gamma = trunc_normal_init<double>({d}, 0.2, rng);
  for (std::size_t j = 0; j < d; ++j) params.ln_gamma[j] += 1.0;
  params.ln_beta = trunc_normal_init<double>({d}, 0.2, rng);
  Tensor<double> input = uniform_init<double>({4, 4, 2}, -1.0, 1.0, rng);
  Tensor<double> w = uniform_init<double>({4, d}, -1.0, 1.0, rng);

  PatchEmbedCache<double> cache;
  patch_embed(input, p, params, &cache);
  PatchEmbedGrads<double> grads = patch_embed_backward(input, p, params, cache, w);

  auto weighted = [&](const Tensor<double>& out) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += w[i] * out[i];
    return acc;
  };
  auto worst_err = [&](const Tensor<double>& analytic, const Tensor<double>& fd) {
    double worst = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i)
      worst = std::max(worst, oracle::rel_err(analytic[i], fd[i]));
    return worst;
  };
  Tensor<double> fd_input = oracle::finite_diff_grad(
      [&](const Tensor<double>& t) { return weighted(patch_embed(t, p, params)); }, input);
  CHECK(worst_err(grads.dinput, fd_input) < 1e-6);
  Tensor<double> fd_weight = oracle::finite_diff_grad(
      [&](const Tensor<double>& t) {
        PatchEmbedParams<double> q = params;
        q.weight = t;
        return weighted(patch_embed(input, p, q));
      },
      params.weight);
  CHECK(worst_err(grads.dparams.weight, fd_weight) < 1e-6);
  Tensor<double> fd_bias = oracle::finite_diff_grad(
      [&](const Tensor<double>& t) {
        PatchEmbedParams<double> q = params;
        q.bias = t;
        return weighted(patch_embed(input, p, q));
      },
      params.bias);
  CHECK(worst_err(grads.dparams.bias, fd_bias) < 1e-6);
}

TEST_CASE("stage_forward reduces the grid by the patch size") {
  Rng rng(67);
  ModelConfig config = tiny_config();
  Model<float> model = make_model<float>(config, 16, rng);
  Tensor<float> image = uniform_init<float>({16, 16, 1}, 0.0, 1.0, rng);
  StageResult<float> s0 = stage_forward(image, config.stages[0], model.stages[0],
                                        config.pos_mode);
  CHECK(s0.grid.dim(0) == 4);
  CHECK(s0.grid.dim(1) == 4);
  CHECK(s0.grid.dim(2) == 8);
  CHECK(s0.globals.dim(0) == 1);
}

TEST_CASE("model_forward composes stages through local tokens only") {
  Rng rng(68);
  ModelConfig config = tiny_config();
  Model<float> model = make_model<float>(config, 16, rng);
  Tensor<float> image = uniform_init<float>({16, 16, 1}, 0.0, 1.0, rng);
  ModelOutput<float> out = model_forward(image, model);
  CHECK(out.logits.size() == 5);
  CHECK(out.features.size() == 12);

  // manual composition: stage boundaries carry the local grid and nothing else
  StageResult<float> s0 = stage_forward(image, config.stages[0], model.stages[0],
                                        config.pos_mode);
  s0.globals.fill(1234.0f);  // discarded between stages, must not matter
  StageResult<float> s1 = stage_forward(s0.grid, config.stages[1], model.stages[1],
                                        config.pos_mode);
  const std::size_t n_l = s1.grid.dim(0) * s1.grid.dim(1);
  Tensor<float> rows({n_l, 12});
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = s1.grid[i];
  Tensor<float> normed = layer_norm(rows, model.final_ln_gamma, model.final_ln_beta);
  Tensor<float> feature({std::size_t(12)});
  for (std::size_t j = 0; j < 12; ++j) {
    float acc = 0.0f;
    for (std::size_t t = 0; t < n_l; ++t) acc += normed(t, j);
    feature[j] = acc / float(n_l);
  }
  CHECK(max_abs_diff(out.features, feature) < 1e-6);
}

TEST_CASE("model_forward is deterministic and zero-logit at init") {
  Rng rng(69);
  ModelConfig config = tiny_config();
  Model<float> model = make_model<float>(config, 16, rng);
  Rng img_rng(7);
  Tensor<float> image = uniform_init<float>({16, 16, 1}, 0.0, 1.0, img_rng);
  ModelOutput<float> a = model_forward(image, model);
  ModelOutput<float> b = model_forward(image, model);
  CHECK(bitwise_equal(a.logits, b.logits));
  CHECK(bitwise_equal(a.features, b.features));
  for (std::size_t i = 0; i < a.logits.size(); ++i) CHECK(a.logits[i] == 0.0f);
}

TEST_CASE("zeroing residual-branch projections reduces a stage to its embedding") {
  Rng rng(70);
  ModelConfig config = tiny_config();
  config.stages.resize(1);
  Model<float> model = make_model<float>(config, 16, rng);
  for (auto& attn : model.stages[0].attn) {
    attn.w_o.fill(0.0f);
    attn.b_o.fill(0.0f);
  }
  for (auto& ffn : model.stages[0].ffn) {
    ffn.w2.fill(0.0f);
    ffn.b2.fill(0.0f);
  }
  Tensor<float> image = uniform_init<float>({16, 16, 1}, 0.0, 1.0, rng);
  StageResult<float> result = stage_forward(image, config.stages[0], model.stages[0],
                                            config.pos_mode);
  Tensor<float> embedded = patch_embed(image, 4, model.stages[0].embed);
  CHECK(result.grid.dim(0) * result.grid.dim(1) == embedded.dim(0));
  double worst = 0.0;
  for (std::size_t i = 0; i < embedded.size(); ++i)
    worst = std::max(worst, std::abs(double(result.grid[i]) - double(embedded[i])));
  CHECK(worst == 0.0);
}

TEST_CASE("registry serves the published stage shapes") {
  CHECK(registry_names().size() == 19);

  ModelConfig tiny = registry_lookup("ViL-Tiny");
  REQUIRE(tiny.stages.size() == 4);
  const std::size_t tiny_blocks[] = {1, 1, 9, 1};
  const std::size_t tiny_patch[] = {4, 2, 2, 2};
  const std::size_t tiny_heads[] = {1, 3, 3, 6};
  const std::size_t tiny_dim[] = {48, 96, 192, 384};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(tiny.stages[i].blocks == tiny_blocks[i]);
    CHECK(tiny.stages[i].patch == tiny_patch[i]);
    CHECK(tiny.stages[i].attention.heads == tiny_heads[i]);
    CHECK(tiny.stages[i].attention.dim == tiny_dim[i]);
    CHECK(tiny.stages[i].attention.kind == AttnKind::ViL);
    CHECK(tiny.stages[i].attention.window == 15);
    CHECK(tiny.stages[i].attention.n_global == 1);
  }
  CHECK(tiny.pos_mode == PosMode::RPB);
  CHECK(tiny.head_mode == HeadMode::AvgPool);

  ModelConfig base = registry_lookup("ViL-Base");
  REQUIRE(base.stages.size() == 4);
  CHECK(base.stages[1].blocks == 8);
  CHECK(base.stages[2].blocks == 24);
  CHECK(base.stages[3].attention.dim == 768);

  ModelConfig s3 = registry_lookup("Small-3stage");
  REQUIRE(s3.stages.size() == 3);
  CHECK(s3.stages[0].patch == 8);
  CHECK(s3.stages[0].attention.dim == 192);

  ModelConfig deit = registry_lookup("DeiT-Small/16");
  REQUIRE(deit.stages.size() == 1);
  CHECK(deit.stages[0].blocks == 12);
  CHECK(deit.stages[0].patch == 16);
  CHECK(deit.stages[0].attention.kind == AttnKind::Full);
  CHECK(deit.pos_mode == PosMode::APE);
  CHECK(deit.head_mode == HeadMode::CLS);
}

TEST_CASE("registry rejects unknown names and lists what it knows") {
  try {
    registry_lookup("ViL-Colossal");
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("ViL-Tiny") != std::string::npos);
  }
}

TEST_CASE("parameter totals land on the published model sizes") {
  auto within = [](std::uint64_t count, double target_millions, double tol) {
    const double m = double(count) / 1e6;
    return std::abs(m - target_millions) / target_millions <= tol;
  };
  CHECK(within(param_count(registry_lookup("ViL-Tiny")), 6.7, 0.02));
  CHECK(within(param_count(registry_lookup("ViL-Small")), 24.6, 0.02));
  CHECK(within(param_count(registry_lookup("DeiT-Small/16")), 22.1, 0.02));
}

TEST_CASE("config validation rejects a CLS head without a final global token") {
  ModelConfig config = tiny_config();
  config.head_mode = HeadMode::CLS;
  config.stages.back().attention.n_global = 0;
  CHECK_THROWS_AS(validate_config(config), std::invalid_argument);
}

TEST_CASE("cls and avgpool heads disagree in general") {
  Rng rng(71);
  ModelConfig config = tiny_config();
  config.head_mode = HeadMode::CLS;
  Model<float> model = make_model<float>(config, 16, rng);
  Tensor<float> image = uniform_init<float>({16, 16, 1}, 0.0, 1.0, rng);
  ModelOutput<float> cls = model_forward(image, model);
  model.config.head_mode = HeadMode::AvgPool;
  ModelOutput<float> avg = model_forward(image, model);
  CHECK(max_abs_diff(cls.features, avg.features) > 1e-6);
}
