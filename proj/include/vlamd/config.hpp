#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vlamd/errors.hpp"

namespace vlamd {

// Flat key=value configuration with dotted keys. Every key has a registered
// default; file entries override defaults and unknown keys are rejected, so a
// config file fully documents an experiment.
class Config {
 public:
  Config() : values_(defaults()) {}

  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        // dataset generation
        {"data.out_dir", "dataset"},
        {"data.charset", "abcdefghijklmnopqrstuvwxyz0123456789"},
        {"data.seed", "1"},
        {"data.image_h", "32"},
        {"data.image_w", "100"},
        {"data.n_iv", "512"},
        {"data.n_oov", "128"},
        {"data.len_min", "1"},
        {"data.len_max", "6"},
        {"data.renders_per_word", "2"},
        {"data.eval_iv", "128"},
        {"data.noise_std", "0.02"},
        {"data.jitter_scale", "0.15"},
        {"data.jitter_shift", "1.0"},
        {"data.fg_min", "0.75"},
        {"data.fg_max", "1.0"},
        {"data.bg_min", "0.0"},
        {"data.bg_max", "0.25"},
        // backbone
        {"backbone.c_model", "64"},
        {"backbone.enc_layers", "2"},
        {"backbone.heads", "4"},
        {"backbone.ff_dim", "0"},
        // main decoding branch
        {"vlad.hidden", "64"},
        {"vlad.emb", "0"},
        {"vlad.attn_dim", "64"},
        {"vlad.fuse_dim", "0"},
        {"vlad.mlp_hidden", "0"},
        {"vlad.mlp_layers", "2"},
        // transformer decoding branch
        {"transd.layers", "2"},
        {"transd.heads", "4"},
        {"transd.ff_dim", "0"},
        {"transd.mlp_hidden", "0"},
        {"transd.mlp_layers", "2"},
        {"transd.queries_only", "false"},
        {"model.t_max", "26"},
        // training
        {"train.manifest", ""},
        {"train.eval_manifest", ""},
        {"train.out_dir", "run"},
        {"train.lambda", "0.4"},
        {"train.lr", "1e-4"},
        {"train.weight_decay", "1e-5"},
        {"train.batch_size", "128"},
        {"train.max_steps", "1000"},
        {"train.milestones", "0.6,0.8"},
        {"train.decay_factor", "0.1"},
        {"train.seed", "1"},
        {"train.ckpt_every", "0"},
        {"train.log_every", "25"},
        {"train.grad_clip", "0"},
        {"train.precision", "f32"},
        // decoding
        {"decode.beam_width", "8"},
        {"decode.n_best", "5"},
        {"decode.alpha", "0.5"},
        {"decode.max_len", "0"},
        {"decode.length_norm", "false"},
    };
    return d;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                          trimmed + "'");
      cfg.set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
    return cfg;
  }

  static Config from_snapshot(const std::map<std::string, std::string>& snapshot) {
    Config cfg;
    for (const auto& [k, v] : snapshot) cfg.set(k, v);
    return cfg;
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
  }

  const std::string& get_str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  int64_t get_int(const std::string& key) const {
    const std::string& s = get_str(key);
    try {
      size_t used = 0;
      int64_t v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects an integer, got '" + s + "'");
    }
  }

  double get_double(const std::string& key) const {
    const std::string& s = get_str(key);
    try {
      size_t used = 0;
      double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects a number, got '" + s + "'");
    }
  }

  bool get_bool(const std::string& key) const {
    const std::string& s = get_str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + s + "'");
  }

  std::vector<double> get_double_list(const std::string& key) const {
    const std::string& s = get_str(key);
    std::vector<double> out;
    if (trim(s).empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(std::stod(trim(item)));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects comma-separated numbers, got '" + s + "'");
      }
    }
    return out;
  }

  // full resolved state, suitable for checkpoint embedding
  const std::map<std::string, std::string>& snapshot() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace vlamd
