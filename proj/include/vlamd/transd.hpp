#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vlamd/backbone.hpp"
#include "vlamd/nn.hpp"
#include "vlamd/tensor.hpp"

namespace vlamd {

struct TransDConfig {
  int64_t c_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int64_t ff_dim = 0;       // 0 selects 4 * c_model
  int64_t mlp_hidden = 0;   // 0 selects c_model
  int mlp_layers = 2;
  int64_t t_max = 26;
  int64_t n_classes = 0;
  int64_t n_embed = 0;
  // study flag: drop the token embedding from the decoder input so each
  // position is driven by its positional query alone
  bool queries_only = false;

  int64_t ff() const { return ff_dim > 0 ? ff_dim : 4 * c_model; }
  int64_t mlp_h() const { return mlp_hidden > 0 ? mlp_hidden : c_model; }
};

// Cross-attention keys/values depend only on the encoded image; projected
// once per image and shared across steps and hypotheses.
template <class Real>
struct TransDCtx {
  std::vector<std::pair<Tensor<Real>, Tensor<Real>>> enc_kv;  // per layer
};

// Incremental decoding state: per-layer key/value prefixes of the causal
// self-attention. Appending produces a new cache; existing caches are never
// mutated, so hypotheses can share them.
template <class Real>
struct TransDCache {
  std::shared_ptr<const TransDCtx<Real>> ctx;
  std::vector<std::pair<Tensor<Real>, Tensor<Real>>> self_kv;  // per layer, (len, d)
  int64_t len = 0;
};

// Transformer decoding head: learned positional queries plus the previous
// token's embedding, causal self-attention over the decoded prefix, and
// cross-attention into the visual features. Instantiated once per reading
// direction with independent weights.
template <class Real>
struct TransDBranch {
  TransDConfig cfg;
  Embedding<Real> emb;
  Tensor<Real> query_table;  // (t_max, d)
  std::vector<TransformerDecoderLayer<Real>> layers;
  AffineLayerNorm<Real> final_ln;
  MlpHead<Real> head;

  TransDBranch() = default;
  TransDBranch(const TransDConfig& c, std::mt19937_64& rng) : cfg(c) {
    if (cfg.n_classes <= 0 || cfg.n_embed <= 0)
      throw ConfigError("transd branch requires a vocabulary");
    emb = Embedding<Real>(cfg.n_embed, cfg.c_model, rng);
    query_table = Tensor<Real>::randn({cfg.t_max, cfg.c_model}, rng, static_cast<Real>(0.1), true);
    layers.reserve(static_cast<size_t>(cfg.n_layers));
    for (int i = 0; i < cfg.n_layers; ++i)
      layers.emplace_back(cfg.c_model, cfg.n_heads, cfg.ff(), rng);
    final_ln = AffineLayerNorm<Real>(cfg.c_model);
    head = MlpHead<Real>(cfg.c_model, cfg.mlp_h(), cfg.n_classes, cfg.mlp_layers, rng);
  }

  std::shared_ptr<const TransDCtx<Real>> make_ctx(const FeatureMap<Real>& fmap) const {
    auto ctx = std::make_shared<TransDCtx<Real>>();
    ctx->enc_kv.reserve(layers.size());
    for (const auto& layer : layers) ctx->enc_kv.push_back(layer.cross_attn.project_kv(fmap.f_seq));
    return ctx;
  }

  // decoder input at position t (1-based): embed(previous token) + query_t
  Tensor<Real> input_row(int prev_token, int64_t t) const {
    auto q = take_row(query_table, t - 1);
    if (cfg.queries_only) return q;
    return add(emb.row(prev_token), q);
  }

  // teacher-forced parallel decode; returns (targets.size(), n_classes)
  Tensor<Real> forced_decode_parallel(const std::vector<int>& targets, const FeatureMap<Real>& fmap,
                                      int bos_id) const {
    int64_t n = static_cast<int64_t>(targets.size());
    if (n > cfg.t_max)
      throw LengthError("target of " + std::to_string(n) + " tokens exceeds t_max " +
                        std::to_string(cfg.t_max));
    if (n == 0) throw LengthError("forced_decode_parallel: empty target");
    auto ctx = make_ctx(fmap);
    std::vector<Tensor<Real>> rows;
    rows.reserve(static_cast<size_t>(n));
    for (int64_t t = 1; t <= n; ++t)
      rows.push_back(input_row(t == 1 ? bos_id : targets[static_cast<size_t>(t - 2)], t));
    auto x = stack_rows(rows);
    auto mask = causal_mask<Real>(n);
    for (size_t i = 0; i < layers.size(); ++i) {
      const auto& layer = layers[i];
      auto h = layer.ln_self.apply_seq(x);
      x = add(x, layer.self_attn.forward(h, h, &mask));
      auto hx = layer.ln_cross.apply_seq(x);
      x = add(x, layer.cross_attn.attend(hx, ctx->enc_kv[i].first, ctx->enc_kv[i].second, nullptr));
      auto hf = layer.ln_ff.apply_seq(x);
      x = add(x, layer.ff.apply_seq(hf));
    }
    return softmax(head.apply_seq(final_ln.apply_seq(x)), 1);
  }

  TransDCache<Real> make_cache(const FeatureMap<Real>& fmap) const {
    TransDCache<Real> cache;
    cache.ctx = make_ctx(fmap);
    cache.self_kv.resize(layers.size());
    cache.len = 0;
    return cache;
  }

  // appends one position; returns the next-token distribution and the grown cache
  std::pair<Tensor<Real>, TransDCache<Real>> incremental_step(const TransDCache<Real>& cache,
                                                              int y_prev) const {
    int64_t t = cache.len + 1;
    if (t > cfg.t_max)
      throw LengthError("decode cache full at " + std::to_string(cache.len) + " of t_max " +
                        std::to_string(cfg.t_max) + " positions");
    TransDCache<Real> next = cache;
    next.len = t;
    auto x = reshape(input_row(y_prev, t), {1, cfg.c_model});
    for (size_t i = 0; i < layers.size(); ++i) {
      const auto& layer = layers[i];
      auto h = layer.ln_self.apply_seq(x);
      auto [k_new, v_new] = layer.self_attn.project_kv(h);
      Tensor<Real> k = cache.self_kv[i].first.defined()
                           ? concat<Real>({cache.self_kv[i].first, k_new}, 0)
                           : k_new;
      Tensor<Real> v = cache.self_kv[i].second.defined()
                           ? concat<Real>({cache.self_kv[i].second, v_new}, 0)
                           : v_new;
      next.self_kv[i] = {k, v};
      x = add(x, layer.self_attn.attend(h, k, v, nullptr));
      auto hx = layer.ln_cross.apply_seq(x);
      x = add(x, layer.cross_attn.attend(hx, cache.ctx->enc_kv[i].first, cache.ctx->enc_kv[i].second,
                                         nullptr));
      auto hf = layer.ln_ff.apply_seq(x);
      x = add(x, layer.ff.apply_seq(hf));
    }
    auto dist = softmax(head.apply_seq(final_ln.apply_seq(x)), 1);
    return {reshape(dist, {cfg.n_classes}), next};
  }

  void collect(const std::string& prefix, ParamList<Real>& out) {
    emb.collect(prefix + ".emb", out);
    out.push_back({prefix + ".query_table", query_table});
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i].collect(prefix + ".dec" + std::to_string(i), out);
    final_ln.collect(prefix + ".final_ln", out);
    head.collect(prefix + ".head", out);
  }
};

}  // namespace vlamd
