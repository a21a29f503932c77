#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "vlamd/tensor.hpp"

namespace vlamd {

template <class Real>
struct Parameter {
  std::string name;
  Tensor<Real> t;
};

template <class Real>
using ParamList = std::vector<Parameter<Real>>;

// Optional recorder for attention row sums. Tests point `sink()` at a vector
// and every attention softmax in the model reports its per-query mass there.
struct AttnProbe {
  static std::vector<double>*& sink() {
    static thread_local std::vector<double>* s = nullptr;
    return s;
  }
  template <class Real>
  static void record_rows(const Tensor<Real>& attn) {
    auto* s = sink();
    if (!s) return;
    if (attn.rank() == 1) {
      double acc = 0;
      for (Real v : attn.data()) acc += static_cast<double>(v);
      s->push_back(acc);
      return;
    }
    int64_t rows = attn.size(0), cols = attn.size(1);
    for (int64_t i = 0; i < rows; ++i) {
      double acc = 0;
      for (int64_t j = 0; j < cols; ++j) acc += static_cast<double>(attn.data()[static_cast<size_t>(i * cols + j)]);
      s->push_back(acc);
    }
  }
};

namespace init {

template <class Real>
Tensor<Real> linear_weight(int64_t out, int64_t in, std::mt19937_64& rng) {
  Real bound = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(in)));
  return Tensor<Real>::uniform({out, in}, rng, -bound, bound, true);
}

template <class Real>
Tensor<Real> embedding_table(int64_t rows, int64_t dim, std::mt19937_64& rng) {
  return Tensor<Real>::randn({rows, dim}, rng, static_cast<Real>(0.1), true);
}

}  // namespace init

template <class Real>
struct Linear {
  Tensor<Real> w;  // (out, in)
  Tensor<Real> b;  // (out)

  Linear() = default;
  Linear(int64_t out, int64_t in, std::mt19937_64& rng)
      : w(init::linear_weight<Real>(out, in, rng)), b(Tensor<Real>::zeros({out}, true)) {}

  Tensor<Real> apply(const Tensor<Real>& x) const { return add(matvec(w, x), b); }
  Tensor<Real> apply_seq(const Tensor<Real>& x) const {
    return add_rowvec(matmul(x, transpose(w, 0, 1)), b);
  }
  void collect(const std::string& prefix, ParamList<Real>& out) {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

template <class Real>
struct AffineLayerNorm {
  Tensor<Real> gamma, beta;

  AffineLayerNorm() = default;
  explicit AffineLayerNorm(int64_t dim)
      : gamma(Tensor<Real>::full({dim}, Real(1), true)), beta(Tensor<Real>::zeros({dim}, true)) {}

  Tensor<Real> apply(const Tensor<Real>& x) const {
    return add(mul(layer_norm(x, 0), gamma), beta);
  }
  Tensor<Real> apply_seq(const Tensor<Real>& x) const {
    return add_rowvec(mul_rowvec(layer_norm(x, 1), gamma), beta);
  }
  void collect(const std::string& prefix, ParamList<Real>& out) {
    out.push_back({prefix + ".g", gamma});
    out.push_back({prefix + ".b", beta});
  }
};

template <class Real>
struct Embedding {
  Tensor<Real> table;  // (rows, dim)

  Embedding() = default;
  Embedding(int64_t rows, int64_t dim, std::mt19937_64& rng)
      : table(init::embedding_table<Real>(rows, dim, rng)) {}

  Tensor<Real> row(int id) const { return reshape(embedding_lookup(table, {id}), {table.size(1)}); }
  Tensor<Real> rows(const std::vector<int>& ids) const { return embedding_lookup(table, ids); }
  void collect(const std::string& prefix, ParamList<Real>& out) {
    out.push_back({prefix + ".table", table});
  }
};

// gate order i, f, g, o
template <class Real>
struct LSTMCell {
  int64_t hidden = 0;
  Linear<Real> w_ih;  // (4h, in)
  Linear<Real> w_hh;  // (4h, h)

  LSTMCell() = default;
  LSTMCell(int64_t in, int64_t h, std::mt19937_64& rng)
      : hidden(h), w_ih(4 * h, in, rng), w_hh(4 * h, h, rng) {}

  std::pair<Tensor<Real>, Tensor<Real>> step(const Tensor<Real>& x, const Tensor<Real>& h,
                                             const Tensor<Real>& c) const {
    auto gates = add(w_ih.apply(x), w_hh.apply(h));
    auto i = sigmoid(slice(gates, 0, 0, hidden));
    auto f = sigmoid(slice(gates, 0, hidden, hidden));
    auto g = tanh(slice(gates, 0, 2 * hidden, hidden));
    auto o = sigmoid(slice(gates, 0, 3 * hidden, hidden));
    auto c_next = add(mul(f, c), mul(i, g));
    auto h_next = mul(o, tanh(c_next));
    return {h_next, c_next};
  }
  void collect(const std::string& prefix, ParamList<Real>& out) {
    w_ih.collect(prefix + ".ih", out);
    w_hh.collect(prefix + ".hh", out);
  }
};

// scaled dot-product attention with n_heads column-partitioned heads
template <class Real>
struct MultiHeadAttention {
  int n_heads = 1;
  Linear<Real> wq, wk, wv, wo;

  MultiHeadAttention() = default;
  MultiHeadAttention(int64_t dim, int heads, std::mt19937_64& rng)
      : n_heads(heads), wq(dim, dim, rng), wk(dim, dim, rng), wv(dim, dim, rng), wo(dim, dim, rng) {
    if (dim % heads != 0)
      throw ConfigError("attention dim " + std::to_string(dim) + " not divisible by " +
                        std::to_string(heads) + " heads");
  }

  std::pair<Tensor<Real>, Tensor<Real>> project_kv(const Tensor<Real>& kv_in) const {
    return {wk.apply_seq(kv_in), wv.apply_seq(kv_in)};
  }

  // q_in (Nq,d), k/v already projected (Nk,d); mask, when given, is additive (Nq,Nk)
  Tensor<Real> attend(const Tensor<Real>& q_in, const Tensor<Real>& k, const Tensor<Real>& v,
                      const Tensor<Real>* mask) const {
    int64_t d = q_in.size(1);
    int64_t hd = d / n_heads;
    Real inv_scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(hd)));
    auto q = wq.apply_seq(q_in);
    std::vector<Tensor<Real>> head_out;
    head_out.reserve(static_cast<size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
      auto qh = slice(q, 1, h * hd, hd);
      auto kh = slice(k, 1, h * hd, hd);
      auto vh = slice(v, 1, h * hd, hd);
      auto scores = scale(matmul(qh, transpose(kh, 0, 1)), inv_scale);
      if (mask) scores = add(scores, *mask);
      auto attn = softmax(scores, 1);
      AttnProbe::record_rows(attn);
      head_out.push_back(matmul(attn, vh));
    }
    return wo.apply_seq(concat(head_out, 1));
  }

  Tensor<Real> forward(const Tensor<Real>& q_in, const Tensor<Real>& kv_in,
                       const Tensor<Real>* mask) const {
    auto [k, v] = project_kv(kv_in);
    return attend(q_in, k, v, mask);
  }

  void collect(const std::string& prefix, ParamList<Real>& out) {
    wq.collect(prefix + ".q", out);
    wk.collect(prefix + ".k", out);
    wv.collect(prefix + ".v", out);
    wo.collect(prefix + ".o", out);
  }
};

template <class Real>
struct FeedForward {
  Linear<Real> w1, w2;

  FeedForward() = default;
  FeedForward(int64_t dim, int64_t hidden, std::mt19937_64& rng)
      : w1(hidden, dim, rng), w2(dim, hidden, rng) {}

  Tensor<Real> apply_seq(const Tensor<Real>& x) const {
    return w2.apply_seq(relu(w1.apply_seq(x)));
  }
  void collect(const std::string& prefix, ParamList<Real>& out) {
    w1.collect(prefix + ".w1", out);
    w2.collect(prefix + ".w2", out);
  }
};

// pre-norm residual block: x + attn(ln(x)), then x + ff(ln(x))
template <class Real>
struct TransformerEncoderLayer {
  AffineLayerNorm<Real> ln1, ln2;
  MultiHeadAttention<Real> attn;
  FeedForward<Real> ff;

  TransformerEncoderLayer() = default;
  TransformerEncoderLayer(int64_t dim, int heads, int64_t ff_dim, std::mt19937_64& rng)
      : ln1(dim), ln2(dim), attn(dim, heads, rng), ff(dim, ff_dim, rng) {}

  Tensor<Real> forward(const Tensor<Real>& x) const {
    auto h = ln1.apply_seq(x);
    auto y = add(x, attn.forward(h, h, nullptr));
    return add(y, ff.apply_seq(ln2.apply_seq(y)));
  }
  void collect(const std::string& prefix, ParamList<Real>& out) {
    ln1.collect(prefix + ".ln1", out);
    attn.collect(prefix + ".attn", out);
    ln2.collect(prefix + ".ln2", out);
    ff.collect(prefix + ".ff", out);
  }
};

template <class Real>
struct TransformerDecoderLayer {
  AffineLayerNorm<Real> ln_self, ln_cross, ln_ff;
  MultiHeadAttention<Real> self_attn, cross_attn;
  FeedForward<Real> ff;

  TransformerDecoderLayer() = default;
  TransformerDecoderLayer(int64_t dim, int heads, int64_t ff_dim, std::mt19937_64& rng)
      : ln_self(dim),
        ln_cross(dim),
        ln_ff(dim),
        self_attn(dim, heads, rng),
        cross_attn(dim, heads, rng),
        ff(dim, ff_dim, rng) {}

  void collect(const std::string& prefix, ParamList<Real>& out) {
    ln_self.collect(prefix + ".ln_self", out);
    self_attn.collect(prefix + ".self", out);
    ln_cross.collect(prefix + ".ln_cross", out);
    cross_attn.collect(prefix + ".cross", out);
    ln_ff.collect(prefix + ".ln_ff", out);
    ff.collect(prefix + ".ff", out);
  }
};

// classification head: single FC or FC-tanh-FC, per config
template <class Real>
struct MlpHead {
  int layers = 2;
  Linear<Real> w1;  // (hidden, in) or (out, in) when single layer
  Linear<Real> w2;  // (out, hidden)

  MlpHead() = default;
  MlpHead(int64_t in, int64_t hidden, int64_t out, int n_layers, std::mt19937_64& rng)
      : layers(n_layers) {
    if (layers == 1) {
      w1 = Linear<Real>(out, in, rng);
    } else {
      w1 = Linear<Real>(hidden, in, rng);
      w2 = Linear<Real>(out, hidden, rng);
    }
  }

  Tensor<Real> apply(const Tensor<Real>& x) const {
    if (layers == 1) return w1.apply(x);
    return w2.apply(tanh(w1.apply(x)));
  }
  Tensor<Real> apply_seq(const Tensor<Real>& x) const {
    if (layers == 1) return w1.apply_seq(x);
    return w2.apply_seq(tanh(w1.apply_seq(x)));
  }
  void collect(const std::string& prefix, ParamList<Real>& out) {
    w1.collect(prefix + ".fc1", out);
    if (layers > 1) w2.collect(prefix + ".fc2", out);
  }
};

// additive mask: 0 on and below the diagonal, large negative above
template <class Real>
Tensor<Real> causal_mask(int64_t len) {
  std::vector<Real> m(static_cast<size_t>(len * len), Real(0));
  for (int64_t i = 0; i < len; ++i)
    for (int64_t j = i + 1; j < len; ++j) m[static_cast<size_t>(i * len + j)] = Real(-1e9);
  return Tensor<Real>::from(std::move(m), {len, len}, false);
}

}  // namespace vlamd
