#pragma once

#include <string>
#include <vector>

#include "vlamd/nn.hpp"
#include "vlamd/tensor.hpp"

namespace vlamd {

struct BackboneConfig {
  int64_t c_model = 64;
  int n_enc_layers = 2;
  int n_heads = 4;
  int64_t ff_dim = 0;  // 0 selects 4 * c_model
  int64_t input_h = 32;
  int64_t input_w = 100;

  int64_t ff() const { return ff_dim > 0 ? ff_dim : 4 * c_model; }
  int64_t max_cells_h() const { return input_h / 4; }
  int64_t max_cells_w() const { return input_w / 4; }
};

// Encoded image: the visual feature as a channel-major map plus the
// position-enhanced key used by position-queried attention. The *_seq forms
// are the same graph values laid out as (positions, channels) rows, which is
// what the attention modules consume.
template <class Real>
struct FeatureMap {
  Tensor<Real> f;            // (C, H/4, W/4)
  Tensor<Real> f_prime;      // (C, H/4, W/4)
  Tensor<Real> f_seq;        // (N, C), N = H/4 * W/4
  Tensor<Real> f_prime_seq;  // (N, C)
  int64_t h_cells = 0;
  int64_t w_cells = 0;

  int64_t positions() const { return h_cells * w_cells; }
};

// Two stride-2 conv blocks (3 -> c/2 -> c, each conv + channel layer-norm +
// relu), flatten, learned per-cell position embedding, transformer encoder,
// reshape back to a map.
template <class Real>
struct TextBackbone {
  BackboneConfig cfg;
  Tensor<Real> conv1_w, conv1_b;
  Tensor<Real> conv2_w, conv2_b;
  Tensor<Real> enc_pos;  // (max_cells, C), added before the encoder stack
  Tensor<Real> key_pos;  // (max_cells, C), added before the key projection
  std::vector<TransformerEncoderLayer<Real>> layers;
  AffineLayerNorm<Real> final_ln;
  Linear<Real> key_proj;

  TextBackbone() = default;
  TextBackbone(const BackboneConfig& c, std::mt19937_64& rng) : cfg(c) {
    if (cfg.c_model % 2 != 0) throw ConfigError("c_model must be even, got " + std::to_string(cfg.c_model));
    int64_t mid = cfg.c_model / 2;
    Real s1 = static_cast<Real>(1.0 / std::sqrt(3.0 * 9.0));
    Real s2 = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(mid) * 9.0));
    conv1_w = Tensor<Real>::randn({mid, 3, 3, 3}, rng, s1, true);
    conv1_b = Tensor<Real>::zeros({mid}, true);
    conv2_w = Tensor<Real>::randn({cfg.c_model, mid, 3, 3}, rng, s2, true);
    conv2_b = Tensor<Real>::zeros({cfg.c_model}, true);
    int64_t cells = cfg.max_cells_h() * cfg.max_cells_w();
    enc_pos = Tensor<Real>::randn({cells, cfg.c_model}, rng, static_cast<Real>(0.1), true);
    key_pos = Tensor<Real>::randn({cells, cfg.c_model}, rng, static_cast<Real>(0.1), true);
    layers.reserve(static_cast<size_t>(cfg.n_enc_layers));
    for (int i = 0; i < cfg.n_enc_layers; ++i)
      layers.emplace_back(cfg.c_model, cfg.n_heads, cfg.ff(), rng);
    final_ln = AffineLayerNorm<Real>(cfg.c_model);
    key_proj = Linear<Real>(cfg.c_model, cfg.c_model, rng);
  }

  // row ids into the position tables for an h x w cell grid
  std::vector<int> position_ids(int64_t h_cells, int64_t w_cells) const {
    std::vector<int> ids;
    ids.reserve(static_cast<size_t>(h_cells * w_cells));
    for (int64_t r = 0; r < h_cells; ++r)
      for (int64_t c = 0; c < w_cells; ++c)
        ids.push_back(static_cast<int>(r * cfg.max_cells_w() + c));
    return ids;
  }

  // conv stack output flattened to (positions, channels)
  Tensor<Real> conv_features(const Tensor<Real>& image) const {
    if (image.rank() != 3 || image.size(0) != 3)
      throw ShapeError("backbone expects a 3xHxW image, got " + shape_str(image.shape()));
    int64_t h = image.size(1), w = image.size(2);
    if (h % 4 != 0 || w % 4 != 0)
      throw ShapeError("image extents must be divisible by 4, got " + std::to_string(h) + "x" + std::to_string(w));
    if (h / 4 > cfg.max_cells_h() || w / 4 > cfg.max_cells_w())
      throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) + " exceeds configured " +
                       std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w));
    auto c1 = relu(layer_norm(conv2d_stride2(image, conv1_w, conv1_b), 0));
    auto c2 = relu(layer_norm(conv2d_stride2(c1, conv2_w, conv2_b), 0));
    int64_t n = (h / 4) * (w / 4);
    return transpose(reshape(c2, {cfg.c_model, n}), 0, 1);
  }

  // encoder stack over an already position-embedded sequence
  Tensor<Real> encoder_forward(const Tensor<Real>& seq) const {
    auto x = seq;
    for (const auto& layer : layers) x = layer.forward(x);
    return final_ln.apply_seq(x);
  }

  FeatureMap<Real> encode(const Tensor<Real>& image) const {
    auto flat = conv_features(image);
    int64_t h_cells = image.size(1) / 4, w_cells = image.size(2) / 4;
    auto ids = position_ids(h_cells, w_cells);
    auto seq_in = add(flat, embedding_lookup(enc_pos, ids));
    auto f_seq = encoder_forward(seq_in);
    FeatureMap<Real> fm;
    fm.h_cells = h_cells;
    fm.w_cells = w_cells;
    fm.f_seq = f_seq;
    fm.f = reshape(transpose(f_seq, 0, 1), {cfg.c_model, h_cells, w_cells});
    fm.f_prime_seq = key_proj.apply_seq(add(f_seq, embedding_lookup(key_pos, ids)));
    fm.f_prime = reshape(transpose(fm.f_prime_seq, 0, 1), {cfg.c_model, h_cells, w_cells});
    return fm;
  }

  void collect(const std::string& prefix, ParamList<Real>& out) {
    out.push_back({prefix + ".conv1.w", conv1_w});
    out.push_back({prefix + ".conv1.b", conv1_b});
    out.push_back({prefix + ".conv2.w", conv2_w});
    out.push_back({prefix + ".conv2.b", conv2_b});
    out.push_back({prefix + ".enc_pos", enc_pos});
    out.push_back({prefix + ".key_pos", key_pos});
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i].collect(prefix + ".enc" + std::to_string(i), out);
    final_ln.collect(prefix + ".final_ln", out);
    key_proj.collect(prefix + ".key_proj", out);
  }
};

}  // namespace vlamd
