#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "vlamd/model.hpp"
#include "vlamd/transd.hpp"
#include "vlamd/vlad.hpp"

namespace vlamd {

struct DecodeConfig {
  int beam_width = 8;
  int n_best = 5;
  double alpha = 0.5;  // joint mix: alpha * lstm branch + (1 - alpha) * transformer branch
  int64_t max_len = 0;  // max content tokens; 0 selects t_max - 1
  bool length_norm = false;

  void validate() const {
    if (beam_width <= 0) throw ConfigError("decode.beam_width must be > 0");
    if (n_best <= 0 || n_best > beam_width)
      throw ConfigError("decode.n_best must lie in [1, beam_width]");
    if (alpha < 0 || alpha > 1) throw ConfigError("decode.alpha must lie in [0,1]");
  }
};

template <class Real>
struct Hypothesis {
  std::vector<int> tokens;  // generated tokens; EOS terminates
  double logp_joint = 0;
  double logp_vlad = 0;
  double logp_transd = 0;
  VladState<Real> vlad_state;
  TransDCache<Real> transd_cache;
  bool finished = false;

  int64_t content_len() const {
    return static_cast<int64_t>(tokens.size()) - (finished ? 1 : 0);
  }
};

template <class Real>
struct NBestList {
  Direction direction = Direction::l2r;
  std::vector<Hypothesis<Real>> entries;  // sorted by logp_joint descending
};

// score-descending order with lexicographic token tie-break
inline bool better_candidate(double score_a, const std::vector<int>& tokens_a, double score_b,
                             const std::vector<int>& tokens_b) {
  if (score_a != score_b) return score_a > score_b;
  return tokens_a < tokens_b;
}

namespace detail {
template <class Real>
double safe_log(Real p) {
  return std::log(std::max(static_cast<double>(p), 1e-300));
}
}  // namespace detail

// Beam search where both branches advance in lock-step on the same prefix and
// every extension is scored by the mixed per-token log probability. A
// hypothesis that reaches max_len content tokens may only be closed with EOS,
// so every surviving path terminates.
template <class Real>
NBestList<Real> co_beam_search(const FeatureMap<Real>& fmap, const VladBranch<Real>& vlad,
                               const TransDBranch<Real>& transd, const DecodeConfig& cfg,
                               Direction direction, int eos_id, int bos_id) {
  cfg.validate();
  if (fmap.positions() <= 0) throw DataError("co_beam_search: empty feature map");
  if (vlad.cfg.n_classes != transd.cfg.n_classes)
    throw ConfigError("co_beam_search: branches disagree on vocabulary size");
  NoGradScope ng;
  int64_t v = vlad.cfg.n_classes;
  int64_t max_len = cfg.max_len > 0 ? std::min(cfg.max_len, vlad.cfg.t_max - 1) : vlad.cfg.t_max - 1;

  auto vlad_ctx = vlad.make_ctx(fmap);
  Hypothesis<Real> root;
  root.vlad_state = vlad.initial_state(fmap, bos_id);
  root.transd_cache = transd.make_cache(fmap);
  std::vector<Hypothesis<Real>> beam{root};

  auto any_active = [&] {
    for (const auto& h : beam)
      if (!h.finished) return true;
    return false;
  };

  while (any_active()) {
    std::vector<Hypothesis<Real>> candidates;
    candidates.reserve(beam.size() * static_cast<size_t>(v));
    for (auto& hyp : beam) {
      if (hyp.finished) {
        candidates.push_back(hyp);
        continue;
      }
      auto vlad_out = vlad.decode_step(hyp.vlad_state, fmap, vlad_ctx);
      int prev = hyp.tokens.empty() ? bos_id : hyp.tokens.back();
      auto [transd_dist, transd_next] = transd.incremental_step(hyp.transd_cache, prev);
      bool at_cap = hyp.content_len() >= max_len;
      for (int64_t k = 0; k < v; ++k) {
        if (at_cap && static_cast<int>(k) != eos_id) continue;
        Hypothesis<Real> ext;
        ext.tokens = hyp.tokens;
        ext.tokens.push_back(static_cast<int>(k));
        ext.logp_vlad = hyp.logp_vlad + detail::safe_log(vlad_out.dist.data()[static_cast<size_t>(k)]);
        ext.logp_transd =
            hyp.logp_transd + detail::safe_log(transd_dist.data()[static_cast<size_t>(k)]);
        ext.logp_joint = cfg.alpha * ext.logp_vlad + (1.0 - cfg.alpha) * ext.logp_transd;
        if (static_cast<int>(k) == eos_id) {
          ext.finished = true;  // states dropped, path is frozen
        } else {
          ext.vlad_state = vlad_out.new_state;
          ext.vlad_state.y_prev = static_cast<int>(k);
          ext.transd_cache = transd_next;
        }
        candidates.push_back(std::move(ext));
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
      return better_candidate(a.logp_joint, a.tokens, b.logp_joint, b.tokens);
    });
    if (static_cast<int>(candidates.size()) > cfg.beam_width)
      candidates.resize(static_cast<size_t>(cfg.beam_width));
    beam = std::move(candidates);
  }

  NBestList<Real> out;
  out.direction = direction;
  for (auto& h : beam) {
    if (static_cast<int>(out.entries.size()) >= cfg.n_best) break;
    out.entries.push_back(std::move(h));
  }
  return out;
}

// Teacher-forces an EOS-terminated sequence through both branches of one
// direction and returns the mixed sum of per-token log probabilities.
template <class Real>
double force_score(const std::vector<int>& tokens, const FeatureMap<Real>& fmap,
                   const VladBranch<Real>& vlad, const TransDBranch<Real>& transd,
                   const DecodeConfig& cfg, int eos_id, int bos_id) {
  if (tokens.empty() || tokens.back() != eos_id)
    throw LengthError("force_score: sequence must end with EOS");
  if (static_cast<int64_t>(tokens.size()) > vlad.cfg.t_max)
    throw LengthError("force_score: sequence of " + std::to_string(tokens.size()) +
                      " tokens exceeds t_max " + std::to_string(vlad.cfg.t_max));
  NoGradScope ng;
  double lp_vlad = 0;
  {
    auto ctx = vlad.make_ctx(fmap);
    auto state = vlad.initial_state(fmap, bos_id);
    for (int token : tokens) {
      auto out = vlad.decode_step(state, fmap, ctx);
      lp_vlad += detail::safe_log(out.dist.data()[static_cast<size_t>(token)]);
      state = out.new_state;
      state.y_prev = token;
    }
  }
  double lp_transd = 0;
  {
    auto dists = transd.forced_decode_parallel(tokens, fmap, bos_id);
    int64_t v = dists.size(1);
    for (size_t i = 0; i < tokens.size(); ++i)
      lp_transd += detail::safe_log(dists.data()[i * static_cast<size_t>(v) + static_cast<size_t>(tokens[i])]);
  }
  return cfg.alpha * lp_vlad + (1.0 - cfg.alpha) * lp_transd;
}

struct RedecodeEntry {
  std::vector<int> tokens;  // content tokens in forward orientation, no EOS
  Direction origin = Direction::l2r;
  double gen_score = 0;      // joint score from the beam that produced it
  double logp_l2r = 0;       // forced re-score through the forward direction
  double logp_r2l_rev = 0;   // forced re-score of the reversal through the backward direction
  double combined = 0;
};

struct RedecodeResult {
  std::vector<int> best;  // content tokens in forward orientation
  std::vector<RedecodeEntry> entries;  // every scored candidate, ranked
};

// Cross teacher-forced re-decoding: candidates from both beams are pooled in
// forward orientation, de-duplicated, and re-scored by the sum of both
// directions' forced sequence scores.
template <class Real>
RedecodeResult mutual_redecode(const FeatureMap<Real>& fmap, const VlamdModel<Real>& model,
                               const DecodeConfig& cfg) {
  cfg.validate();
  NoGradScope ng;
  int eos = model.vocab.eos();
  int bos = model.vocab.bos();
  auto nb_l2r = co_beam_search(fmap, model.vlad_l2r, model.transd_l2r, cfg, Direction::l2r, eos, bos);
  auto nb_r2l = co_beam_search(fmap, model.vlad_r2l, model.transd_r2l, cfg, Direction::r2l, eos, bos);

  struct Seed {
    Direction origin;
    double gen_score;
  };
  std::map<std::vector<int>, Seed> pool;
  auto offer = [&](std::vector<int> content, Direction origin, double score) {
    auto it = pool.find(content);
    if (it == pool.end())
      pool.emplace(std::move(content), Seed{origin, score});
    else if (score > it->second.gen_score)
      it->second = Seed{origin, score};
  };
  auto strip_eos = [&](const std::vector<int>& tokens) {
    std::vector<int> content = tokens;
    if (!content.empty() && content.back() == eos) content.pop_back();
    return content;
  };
  for (const auto& h : nb_l2r.entries) offer(strip_eos(h.tokens), Direction::l2r, h.logp_joint);
  for (const auto& h : nb_r2l.entries) {
    auto content = strip_eos(h.tokens);
    std::reverse(content.begin(), content.end());
    offer(std::move(content), Direction::r2l, h.logp_joint);
  }

  RedecodeResult result;
  for (const auto& [content, seed] : pool) {
    RedecodeEntry entry;
    entry.tokens = content;
    entry.origin = seed.origin;
    entry.gen_score = seed.gen_score;
    auto forward = content;
    forward.push_back(eos);
    std::vector<int> backward(content.rbegin(), content.rend());
    backward.push_back(eos);
    entry.logp_l2r = force_score(forward, fmap, model.vlad_l2r, model.transd_l2r, cfg, eos, bos);
    entry.logp_r2l_rev = force_score(backward, fmap, model.vlad_r2l, model.transd_r2l, cfg, eos, bos);
    entry.combined = entry.logp_l2r + entry.logp_r2l_rev;
    if (cfg.length_norm)
      entry.combined /= static_cast<double>(content.size() + 1);
    result.entries.push_back(std::move(entry));
  }
  std::sort(result.entries.begin(), result.entries.end(), [](const auto& a, const auto& b) {
    return better_candidate(a.combined, a.tokens, b.combined, b.tokens);
  });
  if (result.entries.empty()) throw DataError("mutual_redecode: no candidates produced");
  result.best = result.entries.front().tokens;
  return result;
}

// image in, transcript out
template <class Real>
std::string recognize(const Tensor<Real>& image, const VlamdModel<Real>& model,
                      const DecodeConfig& cfg) {
  NoGradScope ng;
  auto fmap = model.backbone.encode(image);
  auto result = mutual_redecode(fmap, model, cfg);
  return model.vocab.decode(result.best);
}

}  // namespace vlamd
