#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vlamd/backbone.hpp"
#include "vlamd/nn.hpp"
#include "vlamd/tensor.hpp"

namespace vlamd {

struct VladConfig {
  int64_t c_model = 64;
  int64_t hidden = 64;
  int64_t emb = 0;        // 0 selects c_model
  int64_t attn_dim = 64;
  int64_t fuse_dim = 0;   // 0 selects c_model
  int64_t mlp_hidden = 0; // 0 selects c_model
  int mlp_layers = 2;
  int64_t t_max = 26;     // position table rows; max content length is t_max - 1
  int64_t n_classes = 0;  // charset + EOS
  int64_t n_embed = 0;    // charset + EOS + BOS

  int64_t emb_dim() const { return emb > 0 ? emb : c_model; }
  int64_t fuse() const { return fuse_dim > 0 ? fuse_dim : c_model; }
  int64_t mlp_h() const { return mlp_hidden > 0 ? mlp_hidden : c_model; }
  int64_t z_dim() const { return hidden + emb_dim() + 2 * c_model; }
};

// Per-step decoder state. `coverage` accumulates the content-attention maps
// of all past steps, so its mass equals t-1.
template <class Real>
struct VladState {
  Tensor<Real> h;         // LSTM hidden
  Tensor<Real> c_mem;     // LSTM cell
  Tensor<Real> a_prev;    // visual context of the previous step (zero at t=1)
  Tensor<Real> coverage;  // (positions)
  int y_prev = -1;
  int64_t t = 1;
};

template <class Real>
struct VladStepOutput {
  Tensor<Real> dist;  // (n_classes), sums to 1
  VladState<Real> new_state;
  Tensor<Real> gate;   // diagnostic
  Tensor<Real> alpha;  // diagnostic: content attention of this step
};

// Attention keys depend only on the feature map, so they are projected once
// per image and shared across steps (and across beam hypotheses).
template <class Real>
struct VladCtx {
  Tensor<Real> content_keys;   // (N, attn_dim)
  Tensor<Real> position_keys;  // (N, attn_dim)
};

// LSTM decoding branch: content-queried coverage attention for the visual
// context, position-queried attention over the enhanced keys, and a
// channel-wise sigmoid gate fusing the linguistic and visual features before
// the output head. Instantiated once per reading direction with independent
// weights.
template <class Real>
struct VladBranch {
  VladConfig cfg;
  Embedding<Real> emb;
  Linear<Real> vaa_query;     // (attn, emb + hidden)
  Tensor<Real> vaa_key_w;     // (attn, c_model)
  Tensor<Real> vaa_cov_w;     // (attn, 1)
  Tensor<Real> vaa_v;         // (attn)
  LSTMCell<Real> lstm;        // input: [embed(y_prev); a_prev]
  Tensor<Real> pos_table;     // (t_max, c_model)
  Linear<Real> paa_query;     // (attn, c_model)
  Tensor<Real> paa_key_w;     // (attn, c_model)
  Tensor<Real> paa_v;         // (attn)
  Linear<Real> gate_fc;       // (z, z)
  Linear<Real> fuse_fc;       // (fuse, z)
  MlpHead<Real> head;

  VladBranch() = default;
  VladBranch(const VladConfig& c, std::mt19937_64& rng) : cfg(c) {
    if (cfg.n_classes <= 0 || cfg.n_embed <= 0)
      throw ConfigError("vlad branch requires a vocabulary");
    emb = Embedding<Real>(cfg.n_embed, cfg.emb_dim(), rng);
    vaa_query = Linear<Real>(cfg.attn_dim, cfg.emb_dim() + cfg.hidden, rng);
    vaa_key_w = init::linear_weight<Real>(cfg.attn_dim, cfg.c_model, rng);
    vaa_cov_w = init::linear_weight<Real>(cfg.attn_dim, 1, rng);
    vaa_v = Tensor<Real>::randn({cfg.attn_dim}, rng, static_cast<Real>(0.1), true);
    lstm = LSTMCell<Real>(cfg.emb_dim() + cfg.c_model, cfg.hidden, rng);
    pos_table = Tensor<Real>::randn({cfg.t_max, cfg.c_model}, rng, static_cast<Real>(0.1), true);
    paa_query = Linear<Real>(cfg.attn_dim, cfg.c_model, rng);
    paa_key_w = init::linear_weight<Real>(cfg.attn_dim, cfg.c_model, rng);
    paa_v = Tensor<Real>::randn({cfg.attn_dim}, rng, static_cast<Real>(0.1), true);
    gate_fc = Linear<Real>(cfg.z_dim(), cfg.z_dim(), rng);
    fuse_fc = Linear<Real>(cfg.fuse(), cfg.z_dim(), rng);
    head = MlpHead<Real>(cfg.fuse(), cfg.mlp_h(), cfg.n_classes, cfg.mlp_layers, rng);
  }

  VladCtx<Real> make_ctx(const FeatureMap<Real>& fmap) const {
    return {matmul(fmap.f_seq, transpose(vaa_key_w, 0, 1)),
            matmul(fmap.f_prime_seq, transpose(paa_key_w, 0, 1))};
  }

  VladState<Real> initial_state(const FeatureMap<Real>& fmap, int bos_id) const {
    VladState<Real> s;
    s.h = Tensor<Real>::zeros({cfg.hidden});
    s.c_mem = Tensor<Real>::zeros({cfg.hidden});
    s.a_prev = Tensor<Real>::zeros({cfg.c_model});
    s.coverage = Tensor<Real>::zeros({fmap.positions()});
    s.y_prev = bos_id;
    s.t = 1;
    return s;
  }

  // content attention: energies from [embed(y_prev); h_prev], the projected
  // feature keys, and the coverage accumulator
  std::pair<Tensor<Real>, Tensor<Real>> content_attend(const Tensor<Real>& emb_prev,
                                                       const Tensor<Real>& h_prev,
                                                       const Tensor<Real>& coverage,
                                                       const FeatureMap<Real>& fmap,
                                                       const VladCtx<Real>& ctx) const {
    auto q = vaa_query.apply(concat<Real>({emb_prev, h_prev}, 0));
    auto cov_term = matmul(reshape(coverage, {fmap.positions(), 1}), transpose(vaa_cov_w, 0, 1));
    auto energies = matvec(tanh(add_rowvec(add(ctx.content_keys, cov_term), q)), vaa_v);
    auto alpha = softmax(energies, 0);
    AttnProbe::record_rows(alpha);
    return {tmatvec(fmap.f_seq, alpha), alpha};
  }

  // position attention: query from the step's position embedding against the
  // enhanced keys; values are the original features. Independent of the
  // decoded prefix by construction.
  Tensor<Real> position_attend(int64_t t, const FeatureMap<Real>& fmap,
                               const VladCtx<Real>& ctx) const {
    if (t < 1 || t > cfg.t_max)
      throw LengthError("decode step " + std::to_string(t) + " outside position table of " +
                        std::to_string(cfg.t_max) + " rows");
    auto q = paa_query.apply(take_row(pos_table, t - 1));
    auto energies = matvec(tanh(add_rowvec(ctx.position_keys, q)), paa_v);
    auto alpha = softmax(energies, 0);
    AttnProbe::record_rows(alpha);
    return tmatvec(fmap.f_seq, alpha);
  }

  struct Recurrent {
    Tensor<Real> h, c_mem, r, a, alpha, coverage;
  };

  // one recurrence: attention uses h_{t-1}; the LSTM consumes the cached
  // context a_{t-1}, not the fresh a_t
  Recurrent recurrent_step(const VladState<Real>& state, const FeatureMap<Real>& fmap,
                           const VladCtx<Real>& ctx) const {
    if (state.t > cfg.t_max)
      throw LengthError("decode step " + std::to_string(state.t) + " exceeds t_max " +
                        std::to_string(cfg.t_max));
    auto emb_prev = emb.row(state.y_prev);
    auto [a_t, alpha] = content_attend(emb_prev, state.h, state.coverage, fmap, ctx);
    auto [h_t, c_t] = lstm.step(concat<Real>({emb_prev, state.a_prev}, 0), state.h, state.c_mem);
    auto r_t = concat<Real>({h_t, emb_prev}, 0);
    return {h_t, c_t, r_t, a_t, alpha, add(state.coverage, alpha)};
  }

  VladStepOutput<Real> decode_step(const VladState<Real>& state, const FeatureMap<Real>& fmap,
                                   const VladCtx<Real>& ctx) const {
    auto rec = recurrent_step(state, fmap, ctx);
    auto q_t = position_attend(state.t, fmap, ctx);
    auto z = concat<Real>({rec.r, rec.a, q_t}, 0);
    auto gate = sigmoid(gate_fc.apply(z));
    auto fused = fuse_fc.apply(mul(gate, z));
    VladStepOutput<Real> out;
    out.dist = softmax(head.apply(fused), 0);
    out.gate = gate;
    out.alpha = rec.alpha;
    out.new_state.h = rec.h;
    out.new_state.c_mem = rec.c_mem;
    out.new_state.a_prev = rec.a;
    out.new_state.coverage = rec.coverage;
    out.new_state.y_prev = -1;  // owner picks the next token
    out.new_state.t = state.t + 1;
    return out;
  }

  // teacher-forced decode; returns (targets.size(), n_classes) rows
  Tensor<Real> forced_decode(const std::vector<int>& targets, const FeatureMap<Real>& fmap,
                             int bos_id) const {
    if (static_cast<int64_t>(targets.size()) > cfg.t_max)
      throw LengthError("target of " + std::to_string(targets.size()) + " tokens exceeds t_max " +
                        std::to_string(cfg.t_max));
    if (targets.empty()) throw LengthError("forced_decode: empty target");
    auto ctx = make_ctx(fmap);
    auto state = initial_state(fmap, bos_id);
    std::vector<Tensor<Real>> rows;
    rows.reserve(targets.size());
    for (int target : targets) {
      auto out = decode_step(state, fmap, ctx);
      rows.push_back(out.dist);
      state = out.new_state;
      state.y_prev = target;
    }
    return stack_rows(rows);
  }

  void collect(const std::string& prefix, ParamList<Real>& out) {
    emb.collect(prefix + ".emb", out);
    vaa_query.collect(prefix + ".vaa.query", out);
    out.push_back({prefix + ".vaa.key_w", vaa_key_w});
    out.push_back({prefix + ".vaa.cov_w", vaa_cov_w});
    out.push_back({prefix + ".vaa.v", vaa_v});
    lstm.collect(prefix + ".lstm", out);
    out.push_back({prefix + ".paa.pos_table", pos_table});
    paa_query.collect(prefix + ".paa.query", out);
    out.push_back({prefix + ".paa.key_w", paa_key_w});
    out.push_back({prefix + ".paa.v", paa_v});
    gate_fc.collect(prefix + ".agf.gate", out);
    fuse_fc.collect(prefix + ".agf.fuse", out);
    head.collect(prefix + ".head", out);
  }
};

}  // namespace vlamd
