#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "vlamd/beam.hpp"
#include "vlamd/losses.hpp"
#include "vlamd/model.hpp"
#include "vlamd/rng.hpp"

namespace vlamd {

namespace selfcheck_detail {

inline bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

// Analytic gradient of every sampled coordinate vs central differences.
// graph_fn builds the loss under test; fd_fn is the function differenced
// numerically. They differ only for losses with frozen operands, where fd_fn
// must hold the frozen values fixed at the base point.
template <class F, class G>
bool grads_match2(F&& graph_fn, G&& fd_fn, std::vector<Tensor<double>> leaves, int max_coords = 6,
                  double tol = 1e-4, double h = 1e-5) {
  for (auto& t : leaves) t.zero_grad();
  Tensor<double> loss = graph_fn();
  loss.backward();
  for (auto& t : leaves) {
    size_t n = t.data().size();
    size_t step = 1;
    if (max_coords > 0 && n > static_cast<size_t>(max_coords)) step = n / static_cast<size_t>(max_coords);
    for (size_t i = 0; i < n; i += step) {
      double analytic = t.grad().empty() ? 0.0 : t.grad()[i];
      double numeric;
      {
        NoGradScope ng;
        auto& d = t.mutable_data();
        double orig = d[i];
        d[i] = orig + h;
        double fp = fd_fn().item();
        d[i] = orig - h;
        double fm = fd_fn().item();
        d[i] = orig;
        numeric = (fp - fm) / (2 * h);
      }
      if (!close(analytic, numeric, tol)) return false;
    }
  }
  return true;
}

template <class F>
bool grads_match(F&& loss_fn, std::vector<Tensor<double>> leaves, int max_coords = 6,
                 double tol = 1e-4, double h = 1e-5) {
  return grads_match2(loss_fn, loss_fn, std::move(leaves), max_coords, tol, h);
}

inline ModelConfig tiny_model_cfg() {
  ModelConfig cfg;
  cfg.backbone.c_model = 8;
  cfg.backbone.n_enc_layers = 1;
  cfg.backbone.n_heads = 2;
  cfg.backbone.input_h = 8;
  cfg.backbone.input_w = 16;
  cfg.vlad_hidden = 6;
  cfg.vlad_attn = 5;
  cfg.transd_layers = 1;
  cfg.transd_heads = 2;
  cfg.t_max = 5;
  cfg.charset = "abcd";
  return cfg;
}

inline std::vector<std::vector<int>> all_content_sequences(int n_chars, int max_len) {
  std::vector<std::vector<int>> out{{}};
  std::vector<std::vector<int>> frontier{{}};
  for (int l = 0; l < max_len; ++l) {
    std::vector<std::vector<int>> next;
    for (const auto& seq : frontier)
      for (int c = 0; c < n_chars; ++c) {
        auto ext = seq;
        ext.push_back(c);
        out.push_back(ext);
        next.push_back(std::move(ext));
      }
    frontier = std::move(next);
  }
  return out;
}

}  // namespace selfcheck_detail

// Numeric self-diagnostic: finite-difference gradient checks for every
// primitive and for the full four-head loss at tiny dimensions, plus an
// exhaustive-beam consistency check. Prints one line per check.
inline bool run_selfcheck(std::ostream& out) {
  using selfcheck_detail::grads_match;
  using selfcheck_detail::grads_match2;
  bool all_ok = true;
  auto record = [&](const std::string& name, bool ok) {
    out << (ok ? "[ok]   " : "[FAIL] ") << name << '\n';
    all_ok = all_ok && ok;
  };
  auto rng = make_rng(20240817);
  using T = Tensor<double>;
  auto rand_t = [&](Shape s) { return T::uniform(std::move(s), rng, -1.0, 1.0, true); };

  {
    auto a = rand_t({3, 4}), b = rand_t({4, 2});
    record("grad matmul", grads_match([&] { return mean(tanh(matmul(a, b))); }, {a, b}));
  }
  {
    auto a = rand_t({3, 4}), x = rand_t({4}), y = rand_t({3});
    record("grad matvec", grads_match([&] { return mean(tanh(matvec(a, x))); }, {a, x}));
    record("grad tmatvec", grads_match([&] { return mean(tanh(tmatvec(a, y))); }, {a, y}));
  }
  {
    auto x = rand_t({2, 5, 6}), w = rand_t({3, 2, 3, 3}), b = rand_t({3});
    record("grad conv2d_stride2",
           grads_match([&] { return mean(tanh(conv2d_stride2(x, w, b))); }, {x, w, b}));
  }
  {
    auto x = rand_t({2, 5});
    auto c = T::uniform({2, 5}, rng, -1.0, 1.0, false);
    record("grad softmax", grads_match([&] { return mean(mul(softmax(x, 1), c)); }, {x}, 6, 1e-5));
    record("grad layer_norm", grads_match([&] { return mean(mul(layer_norm(x, 1), c)); }, {x}));
  }
  {
    auto x = rand_t({6}), y = rand_t({6});
    record("grad elementwise", grads_match(
                                   [&] {
                                     auto a = mul(sigmoid(x), tanh(y));
                                     return sum(scale(add(a, relu(sub(x, y))), 0.3));
                                   },
                                   {x, y}));
  }
  {
    auto m = rand_t({3, 4}), v = rand_t({4});
    record("grad rowvec broadcast",
           grads_match([&] { return mean(tanh(mul_rowvec(add_rowvec(m, v), v))); }, {m, v}));
  }
  {
    auto x = rand_t({2, 3, 4});
    auto table = rand_t({5, 3});
    std::vector<int> ids{4, 0, 2};
    record("grad shape ops", grads_match(
                                 [&] {
                                   auto t = reshape(slice(transpose(x, 0, 2), 0, 1, 2), {2, 6});
                                   auto e = embedding_lookup(table, ids);
                                   return add(mean(tanh(t)), mean(tanh(concat<double>({e}, 0))));
                                 },
                                 {x, table}));
  }
  {
    auto lp = rand_t({3, 5}), lq = rand_t({3, 5});
    std::vector<int> targets{0, 3, 4};
    record("grad cross_entropy",
           grads_match([&] { return cross_entropy(softmax(lp, 1), targets); }, {lp}));
    record("grad kl_div",
           grads_match([&] { return kl_div(softmax(lp, 1), softmax(lq, 1)); }, {lp, lq}));
  }
  {
    auto rng2 = make_rng(5, 1);
    LSTMCell<double> cell(4, 3, rng2);
    auto x = rand_t({4}), h = rand_t({3}), c = rand_t({3});
    record("grad lstm cell", grads_match(
                                 [&] {
                                   auto [h2, c2] = cell.step(x, h, c);
                                   return add(mean(h2), mean(c2));
                                 },
                                 {x, h, c, cell.w_ih.w, cell.w_hh.w}));
  }
  {
    auto x = rand_t({4});
    x.zero_grad();
    auto loss = sum(mul(x, stop_gradient(x)));
    loss.backward();
    bool ok = x.grad().size() == 4;
    for (size_t i = 0; ok && i < 4; ++i) ok = x.grad()[i] == x.data()[i];
    auto y = rand_t({3});
    y.zero_grad();
    sum(stop_gradient(y)).backward();
    for (double g : y.grad()) ok = ok && g == 0.0;
    record("stop_gradient exactness", ok);
  }

  // End-to-end: full four-head objective on a tiny model. The distillation
  // targets are frozen by construction, so the numeric difference is taken
  // with the reversed references pinned at the base point.
  {
    VlamdModel<double> model(selfcheck_detail::tiny_model_cfg(), 3);
    auto image = T::uniform({3, 8, 16}, rng, 0.0, 1.0, false);
    auto pair = make_target_pair(model.vocab.encode("ba"), model.vocab.eos());
    double lambda = 0.4;
    auto graph_fn = [&] {
      auto heads = forward_heads(model, model.backbone.encode(image), pair);
      return total_loss(heads, pair, lambda).total;
    };
    Tensor<double> ref_v_l2r, ref_v_r2l, ref_t_l2r, ref_t_r2l;
    {
      NoGradScope ng;
      auto heads = forward_heads(model, model.backbone.encode(image), pair);
      ref_v_l2r = reverse_stop(heads.vlad_r2l);
      ref_v_r2l = reverse_stop(heads.vlad_l2r);
      ref_t_l2r = reverse_stop(heads.transd_r2l);
      ref_t_r2l = reverse_stop(heads.transd_l2r);
    }
    auto fd_fn = [&] {
      auto heads = forward_heads(model, model.backbone.encode(image), pair);
      auto kl = add(add(kl_div(heads.vlad_l2r, ref_v_l2r), kl_div(heads.vlad_r2l, ref_v_r2l)),
                    add(kl_div(heads.transd_l2r, ref_t_l2r), kl_div(heads.transd_r2l, ref_t_r2l)));
      return add(main_loss(heads, pair), scale(kl, lambda));
    };
    std::vector<Tensor<double>> leaves;
    for (auto& p : model.parameters()) leaves.push_back(p.t);
    record("grad end-to-end total loss", grads_match2(graph_fn, fd_fn, leaves, 2));
  }

  // attention normalization and distribution mass on a live decode
  {
    VlamdModel<double> model(selfcheck_detail::tiny_model_cfg(), 4);
    auto image = T::uniform({3, 8, 16}, rng, 0.0, 1.0, false);
    NoGradScope ng;
    std::vector<double> sums;
    AttnProbe::sink() = &sums;
    auto fmap = model.backbone.encode(image);
    auto dists = model.vlad_l2r.forced_decode({0, 1, model.vocab.eos()}, fmap, model.vocab.bos());
    model.transd_l2r.forced_decode_parallel({0, 1, model.vocab.eos()}, fmap, model.vocab.bos());
    AttnProbe::sink() = nullptr;
    bool ok = !sums.empty();
    for (double s : sums) ok = ok && std::abs(s - 1.0) < 1e-6;
    for (int64_t i = 0; i < dists.size(0); ++i) {
      double mass = 0;
      for (int64_t j = 0; j < dists.size(1); ++j) mass += dists.data()[static_cast<size_t>(i * dists.size(1) + j)];
      ok = ok && std::abs(mass - 1.0) < 1e-6;
    }
    record("attention and distribution normalization", ok);
  }

  // exhaustive beam equals brute-force rescoring argmax, both directions
  {
    bool ok = true;
    for (uint64_t seed : {11ull, 23ull}) {
      VlamdModel<double> model(selfcheck_detail::tiny_model_cfg(), seed);
      auto rng2 = make_rng(seed, 55);
      auto image = T::uniform({3, 8, 16}, rng2, 0.0, 1.0, false);
      NoGradScope ng;
      auto fmap = model.backbone.encode(image);
      DecodeConfig cfg;
      cfg.beam_width = 125;
      cfg.n_best = 125;
      cfg.max_len = 3;
      int eos = model.vocab.eos(), bos = model.vocab.bos();
      for (Direction dir : {Direction::l2r, Direction::r2l}) {
        auto nb = co_beam_search(fmap, model.vlad(dir), model.transd(dir), cfg, dir, eos, bos);
        std::vector<int> best;
        double best_score = -1e300;
        for (auto& content : selfcheck_detail::all_content_sequences(4, 3)) {
          auto seq = content;
          seq.push_back(eos);
          double s = force_score(seq, fmap, model.vlad(dir), model.transd(dir), cfg, eos, bos);
          if (better_candidate(s, content, best_score, best)) {
            best_score = s;
            best = content;
          }
        }
        auto top = nb.entries.at(0).tokens;
        top.pop_back();
        ok = ok && top == best && std::abs(nb.entries[0].logp_joint - best_score) < 1e-6;
      }
      auto redecoded = mutual_redecode(fmap, model, cfg);
      std::vector<int> best;
      double best_score = -1e300;
      for (auto& content : selfcheck_detail::all_content_sequences(4, 3)) {
        auto fwd = content;
        fwd.push_back(eos);
        std::vector<int> bwd(content.rbegin(), content.rend());
        bwd.push_back(eos);
        double s = force_score(fwd, fmap, model.vlad_l2r, model.transd_l2r, cfg, eos, bos) +
                   force_score(bwd, fmap, model.vlad_r2l, model.transd_r2l, cfg, eos, bos);
        if (better_candidate(s, content, best_score, best)) {
          best_score = s;
          best = content;
        }
      }
      ok = ok && redecoded.best == best;
    }
    record("exhaustive co-beam and re-decoding argmax", ok);
  }

  out << (all_ok ? "selfcheck passed\n" : "selfcheck FAILED\n");
  return all_ok;
}

}  // namespace vlamd
