#pragma once

#include <cctype>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vlamd/backbone.hpp"
#include "vlamd/rng.hpp"
#include "vlamd/transd.hpp"
#include "vlamd/vlad.hpp"

namespace vlamd {

enum class Direction { l2r = 0, r2l = 1 };

inline const char* direction_name(Direction d) { return d == Direction::l2r ? "l2r" : "r2l"; }

// Character vocabulary. Output classes are the charset plus EOS; the
// embedding tables additionally hold a BOS row that is fed but never
// predicted.
struct Vocab {
  std::string charset;

  Vocab() = default;
  explicit Vocab(std::string chars) : charset(std::move(chars)) {
    std::unordered_set<char> seen;
    for (char c : charset) {
      if (!seen.insert(c).second)
        throw ConfigError(std::string("charset repeats character '") + c + "'");
      if (std::isspace(static_cast<unsigned char>(c)))
        throw ConfigError("charset must not contain whitespace");
    }
    if (charset.empty()) throw ConfigError("charset is empty");
  }

  int eos() const { return static_cast<int>(charset.size()); }
  int bos() const { return static_cast<int>(charset.size()) + 1; }
  int64_t n_classes() const { return static_cast<int64_t>(charset.size()) + 1; }
  int64_t n_embed() const { return static_cast<int64_t>(charset.size()) + 2; }

  std::vector<int> encode(const std::string& word) const {
    std::vector<int> ids;
    ids.reserve(word.size());
    for (char c : word) {
      auto pos = charset.find(c);
      if (pos == std::string::npos)
        throw VocabError(std::string("character '") + c + "' not in charset");
      ids.push_back(static_cast<int>(pos));
    }
    return ids;
  }

  // maps ids back to characters; EOS and anything after it are dropped
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id == eos()) break;
      if (id < 0 || id >= static_cast<int>(charset.size()))
        throw VocabError("token id " + std::to_string(id) + " outside charset");
      out.push_back(charset[static_cast<size_t>(id)]);
    }
    return out;
  }
};

// forward content ids plus the reversed twin, both EOS-terminated
struct TargetPair {
  std::vector<int> l2r;
  std::vector<int> r2l;
};

inline TargetPair make_target_pair(const std::vector<int>& content, int eos_id) {
  TargetPair p;
  p.l2r = content;
  p.l2r.push_back(eos_id);
  p.r2l.assign(content.rbegin(), content.rend());
  p.r2l.push_back(eos_id);
  return p;
}

struct ModelConfig {
  BackboneConfig backbone;
  int64_t vlad_hidden = 64;
  int64_t vlad_emb = 0;
  int64_t vlad_attn = 64;
  int64_t vlad_fuse = 0;
  int64_t vlad_mlp_hidden = 0;
  int vlad_mlp_layers = 2;
  int transd_layers = 2;
  int transd_heads = 4;
  int64_t transd_ff = 0;
  int64_t transd_mlp_hidden = 0;
  int transd_mlp_layers = 2;
  bool transd_queries_only = false;
  int64_t t_max = 26;
  std::string charset = "abcdefghijklmnopqrstuvwxyz0123456789";

  VladConfig vlad_config(const Vocab& vocab) const {
    VladConfig v;
    v.c_model = backbone.c_model;
    v.hidden = vlad_hidden;
    v.emb = vlad_emb;
    v.attn_dim = vlad_attn;
    v.fuse_dim = vlad_fuse;
    v.mlp_hidden = vlad_mlp_hidden;
    v.mlp_layers = vlad_mlp_layers;
    v.t_max = t_max;
    v.n_classes = vocab.n_classes();
    v.n_embed = vocab.n_embed();
    return v;
  }

  TransDConfig transd_config(const Vocab& vocab) const {
    TransDConfig t;
    t.c_model = backbone.c_model;
    t.n_layers = transd_layers;
    t.n_heads = transd_heads;
    t.ff_dim = transd_ff;
    t.mlp_hidden = transd_mlp_hidden;
    t.mlp_layers = transd_mlp_layers;
    t.t_max = t_max;
    t.n_classes = vocab.n_classes();
    t.n_embed = vocab.n_embed();
    t.queries_only = transd_queries_only;
    return t;
  }
};

// Shared backbone plus four decoding heads: one LSTM branch and one
// transformer branch per reading direction, all with independent weights.
template <class Real>
struct VlamdModel {
  ModelConfig cfg;
  Vocab vocab;
  TextBackbone<Real> backbone;
  VladBranch<Real> vlad_l2r, vlad_r2l;
  TransDBranch<Real> transd_l2r, transd_r2l;

  VlamdModel() = default;
  VlamdModel(const ModelConfig& c, uint64_t seed) : cfg(c), vocab(c.charset) {
    auto rng_bb = make_rng(seed, 101);
    auto rng_v0 = make_rng(seed, 102);
    auto rng_v1 = make_rng(seed, 103);
    auto rng_t0 = make_rng(seed, 104);
    auto rng_t1 = make_rng(seed, 105);
    backbone = TextBackbone<Real>(cfg.backbone, rng_bb);
    vlad_l2r = VladBranch<Real>(cfg.vlad_config(vocab), rng_v0);
    vlad_r2l = VladBranch<Real>(cfg.vlad_config(vocab), rng_v1);
    transd_l2r = TransDBranch<Real>(cfg.transd_config(vocab), rng_t0);
    transd_r2l = TransDBranch<Real>(cfg.transd_config(vocab), rng_t1);
  }

  const VladBranch<Real>& vlad(Direction d) const {
    return d == Direction::l2r ? vlad_l2r : vlad_r2l;
  }
  const TransDBranch<Real>& transd(Direction d) const {
    return d == Direction::l2r ? transd_l2r : transd_r2l;
  }

  ParamList<Real> parameters() {
    ParamList<Real> out;
    backbone.collect("backbone", out);
    vlad_l2r.collect("vlad.l2r", out);
    vlad_r2l.collect("vlad.r2l", out);
    transd_l2r.collect("transd.l2r", out);
    transd_r2l.collect("transd.r2l", out);
    std::unordered_set<std::string> names;
    for (const auto& p : out)
      if (!names.insert(p.name).second)
        throw ConfigError("duplicate parameter name " + p.name);
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.t.zero_grad();
  }
};

}  // namespace vlamd
