#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vlamd/errors.hpp"
#include "vlamd/image_io.hpp"
#include "vlamd/rng.hpp"

namespace vlamd {

// ---------------------------------------------------------------------------
// built-in 5x7 bitmap font (lowercase letters and digits)

namespace font {

struct Glyph {
  char c;
  const char* rows[7];  // '#' marks an inked pixel
};

inline const Glyph* table() {
  static const Glyph glyphs[] = {
      {'a', {".....", ".....", ".###.", "....#", ".####", "#...#", ".####"}},
      {'b', {"#....", "#....", "#.##.", "##..#", "#...#", "##..#", "#.##."}},
      {'c', {".....", ".....", ".####", "#....", "#....", "#....", ".####"}},
      {'d', {"....#", "....#", ".##.#", "#..##", "#...#", "#..##", ".##.#"}},
      {'e', {".....", ".....", ".###.", "#...#", "#####", "#....", ".####"}},
      {'f', {"..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."}},
      {'g', {".....", ".####", "#...#", "#...#", ".####", "....#", ".###."}},
      {'h', {"#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#"}},
      {'i', {"..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."}},
      {'j', {"...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."}},
      {'k', {"#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."}},
      {'l', {".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
      {'m', {".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"}},
      {'n', {".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"}},
      {'o', {".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."}},
      {'p', {".....", "####.", "#...#", "#...#", "####.", "#....", "#...."}},
      {'q', {".....", ".####", "#...#", "#...#", ".####", "....#", "....#"}},
      {'r', {".....", ".....", "#.##.", "##...", "#....", "#....", "#...."}},
      {'s', {".....", ".....", ".####", "#....", ".###.", "....#", "####."}},
      {'t', {".#...", ".#...", "####.", ".#...", ".#...", ".#..#", "..##."}},
      {'u', {".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"}},
      {'v', {".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
      {'w', {".....", ".....", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."}},
      {'x', {".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"}},
      {'y', {".....", "#...#", "#...#", ".####", "....#", "#...#", ".###."}},
      {'z', {".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"}},
      {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
      {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
      {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
      {'3', {".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."}},
      {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
      {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
      {'6', {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}},
      {'7', {"#####", "....#", "...#.", "..#..", "..#..", ".#...", ".#..."}},
      {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
      {'9', {".###.", "#...#", "#...#", ".####", "....#", "..#..", ".##.."}},
  };
  return glyphs;
}

inline constexpr int kGlyphCount = 36;
inline constexpr int kGlyphW = 5;
inline constexpr int kGlyphH = 7;

inline const Glyph* find(char c) {
  const Glyph* t = table();
  for (int i = 0; i < kGlyphCount; ++i)
    if (t[i].c == c) return &t[i];
  return nullptr;
}

}  // namespace font

// ---------------------------------------------------------------------------

struct RenderSpec {
  int64_t image_h = 32;
  int64_t image_w = 100;
  double jitter_scale = 0.15;   // per-char scale range [1-j, 1]
  double jitter_shift = 1.0;    // per-char shift range in pixels
  double noise_std = 0.02;
  double fg_min = 0.75, fg_max = 1.0;
  double bg_min = 0.0, bg_max = 0.25;
};

// Deterministic rasterizer: glyphs are scaled to the canvas, jittered per
// character, drawn at a per-image foreground level over a per-image
// background, then gaussian noise is added and values are clipped to [0,1].
inline Image render_word(const std::string& word, const RenderSpec& spec, std::mt19937_64& rng) {
  for (char c : word)
    if (!font::find(c)) throw VocabError(std::string("no glyph for character '") + c + "'");

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double bg = spec.bg_min + (spec.bg_max - spec.bg_min) * unit(rng);
  double fg = spec.fg_min + (spec.fg_max - spec.fg_min) * unit(rng);

  Image img;
  img.h = spec.image_h;
  img.w = spec.image_w;
  img.rgb.assign(static_cast<size_t>(img.h * img.w * 3), static_cast<float>(bg));

  if (!word.empty()) {
    int64_t n = static_cast<int64_t>(word.size());
    double s_h = static_cast<double>(spec.image_h - 2) / font::kGlyphH;
    double s_w = static_cast<double>(spec.image_w - 2) / (static_cast<double>(n) * (font::kGlyphW + 1));
    double base_scale = std::min({s_h, s_w, 4.0});
    if (base_scale < 1.0)
      throw LayoutError("word '" + word + "' does not fit a " + std::to_string(spec.image_w) + "x" +
                        std::to_string(spec.image_h) + " canvas");
    double advance = base_scale * (font::kGlyphW + 1);
    double x0 = (static_cast<double>(spec.image_w) - advance * static_cast<double>(n)) / 2.0;
    double y_mid = static_cast<double>(spec.image_h) / 2.0;
    for (int64_t i = 0; i < n; ++i) {
      const font::Glyph* g = font::find(word[static_cast<size_t>(i)]);
      double scale = base_scale * (1.0 - spec.jitter_scale * unit(rng));
      double dx = (2.0 * unit(rng) - 1.0) * spec.jitter_shift;
      double dy = (2.0 * unit(rng) - 1.0) * spec.jitter_shift;
      double gx = x0 + advance * static_cast<double>(i) + dx;
      double gy = y_mid - scale * font::kGlyphH / 2.0 + dy;
      for (int ry = 0; ry < font::kGlyphH; ++ry)
        for (int rx = 0; rx < font::kGlyphW; ++rx) {
          if (g->rows[ry][rx] != '#') continue;
          int64_t py0 = static_cast<int64_t>(std::lround(gy + ry * scale));
          int64_t py1 = static_cast<int64_t>(std::lround(gy + (ry + 1) * scale));
          int64_t px0 = static_cast<int64_t>(std::lround(gx + rx * scale));
          int64_t px1 = static_cast<int64_t>(std::lround(gx + (rx + 1) * scale));
          for (int64_t py = std::max<int64_t>(py0, 0); py < std::min(py1, img.h); ++py)
            for (int64_t px = std::max<int64_t>(px0, 0); px < std::min(px1, img.w); ++px)
              for (int c = 0; c < 3; ++c) img.at(py, px, c) = static_cast<float>(fg);
        }
    }
  }

  if (spec.noise_std > 0) {
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x) {
        float n = static_cast<float>(noise(rng));
        for (int c = 0; c < 3; ++c) img.at(y, x, c) += n;
      }
  }
  for (auto& v : img.rgb) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

// ---------------------------------------------------------------------------
// lexicons

// Two disjoint word lists over the charset. Every character appears in both
// lists, so the held-out difficulty is at the vocabulary level rather than
// missing glyphs.
inline std::pair<std::vector<std::string>, std::vector<std::string>> build_lexicons(
    const std::string& charset, int n_iv, int n_oov, int len_min, int len_max, uint64_t seed) {
  if (charset.empty()) throw ConfigError("build_lexicons: empty charset");
  if (len_min < 1 || len_max < len_min) throw ConfigError("build_lexicons: bad length range");
  if (n_iv < 0 || n_oov < 0) throw ConfigError("build_lexicons: negative counts");

  double capacity = 0;
  for (int l = len_min; l <= len_max; ++l)
    capacity += std::pow(static_cast<double>(charset.size()), l);
  if (static_cast<double>(n_iv) + static_cast<double>(n_oov) > capacity)
    throw CapacityError("requested " + std::to_string(n_iv + n_oov) + " unique words but only " +
                        std::to_string(static_cast<int64_t>(capacity)) + " exist in the range");

  auto rng = make_rng(seed, 7001);
  std::uniform_int_distribution<int> len_dist(len_min, len_max);
  std::uniform_int_distribution<size_t> char_dist(0, charset.size() - 1);
  std::unordered_set<std::string> used;

  auto random_word = [&] {
    int len = len_dist(rng);
    std::string w;
    for (int i = 0; i < len; ++i) w.push_back(charset[char_dist(rng)]);
    return w;
  };

  // words that jointly cover the whole charset, from a shuffled ordering
  auto coverage_words = [&] {
    std::string order = charset;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::string> words;
    size_t pos = 0;
    while (pos < order.size()) {
      int len = len_dist(rng);
      std::string w = order.substr(pos, static_cast<size_t>(len));
      pos += w.size();
      while (static_cast<int>(w.size()) < len_min) w.push_back(charset[char_dist(rng)]);
      words.push_back(std::move(w));
    }
    return words;
  };

  auto fill = [&](std::vector<std::string>& out, int target) {
    int64_t attempts = 0;
    while (static_cast<int>(out.size()) < target) {
      auto w = random_word();
      if (used.insert(w).second) out.push_back(std::move(w));
      if (++attempts > 1000000 + 1000LL * target)
        throw CapacityError("could not draw " + std::to_string(target) + " unique words");
    }
  };

  std::vector<std::string> iv, oov;
  if (n_iv > 0) {
    for (auto& w : coverage_words()) {
      if (static_cast<int>(iv.size()) >= n_iv) break;
      if (used.insert(w).second) iv.push_back(std::move(w));
    }
    fill(iv, n_iv);
  }
  if (n_oov > 0) {
    for (auto& w : coverage_words()) {
      if (static_cast<int>(oov.size()) >= n_oov) break;
      if (used.insert(w).second) oov.push_back(std::move(w));
    }
    fill(oov, n_oov);
  }
  std::shuffle(iv.begin(), iv.end(), rng);
  std::shuffle(oov.begin(), oov.end(), rng);
  return {std::move(iv), std::move(oov)};
}

// ---------------------------------------------------------------------------
// manifests

struct ManifestSample {
  std::string path;  // relative to the manifest file
  std::string transcript;
  std::string tag;  // "IV" or "OOV"
};

struct DatasetManifest {
  std::vector<ManifestSample> samples;
  std::string charset;
  uint64_t seed = 0;
  int64_t image_h = 0, image_w = 0;
};

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "# charset=" << m.charset << "\n";
  out << "# image_hw=" << m.image_h << "x" << m.image_w << "\n";
  out << "# seed=" << m.seed << "\n";
  for (const auto& s : m.samples) out << s.path << '\t' << s.transcript << '\t' << s.tag << '\n';
  if (!out) throw DataError("short write to " + path);
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(2, eq - 2);
      std::string value = line.substr(eq + 1);
      if (key == "charset") m.charset = value;
      else if (key == "seed") m.seed = std::stoull(value);
      else if (key == "image_hw") {
        auto x = value.find('x');
        if (x == std::string::npos) throw DataError(path + ":" + std::to_string(lineno) + ": bad image_hw");
        m.image_h = std::stoll(value.substr(0, x));
        m.image_w = std::stoll(value.substr(x + 1));
      }
      continue;
    }
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected path<TAB>transcript<TAB>tag");
    ManifestSample s;
    s.path = line.substr(0, t1);
    s.transcript = line.substr(t1 + 1, t2 - t1 - 1);
    s.tag = line.substr(t2 + 1);
    if (s.tag != "IV" && s.tag != "OOV")
      throw DataError(path + ":" + std::to_string(lineno) + ": tag must be IV or OOV, got " + s.tag);
    m.samples.push_back(std::move(s));
  }
  return m;
}

// ---------------------------------------------------------------------------
// dataset emission

struct DataGenConfig {
  std::string charset = "abcdefghijklmnopqrstuvwxyz0123456789";
  uint64_t seed = 1;
  int n_iv = 512;
  int n_oov = 128;
  int len_min = 1;
  int len_max = 6;
  int renders_per_word = 2;  // training renders per in-vocabulary word
  int eval_iv = 128;         // in-vocabulary words re-rendered into the eval split
  RenderSpec render;
};

struct DatasetPaths {
  std::string train_manifest;
  std::string eval_manifest;
};

// Writes images plus train/eval manifests. The train split holds only
// in-vocabulary words; the eval split mixes fresh renders of in-vocabulary
// words with the held-out words, tagged accordingly.
inline DatasetPaths emit_dataset(const DataGenConfig& cfg, const std::string& out_dir) {
  if (cfg.eval_iv > cfg.n_iv)
    throw ConfigError("data.eval_iv (" + std::to_string(cfg.eval_iv) + ") exceeds data.n_iv (" +
                      std::to_string(cfg.n_iv) + ")");
  if (cfg.renders_per_word < 1) throw ConfigError("data.renders_per_word must be >= 1");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images" / "train", ec);
  fs::create_directories(fs::path(out_dir) / "images" / "eval", ec);
  if (ec) throw DataError("cannot create dataset directories under " + out_dir + ": " + ec.message());

  auto [iv, oov] = build_lexicons(cfg.charset, cfg.n_iv, cfg.n_oov, cfg.len_min, cfg.len_max, cfg.seed);

  auto render_to = [&](const std::string& word, const std::string& rel, uint64_t stream) {
    auto rng = make_rng(cfg.seed, stream);
    auto img = render_word(word, cfg.render, rng);
    write_png((fs::path(out_dir) / rel).string(), img);
  };
  auto name_of = [](const char* split, int64_t idx) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "images/%s/%06lld.png", split, static_cast<long long>(idx));
    return std::string(buf);
  };

  DatasetManifest train;
  train.charset = cfg.charset;
  train.seed = cfg.seed;
  train.image_h = cfg.render.image_h;
  train.image_w = cfg.render.image_w;
  int64_t train_idx = 0;
  for (const auto& word : iv)
    for (int r = 0; r < cfg.renders_per_word; ++r) {
      auto rel = name_of("train", train_idx);
      render_to(word, rel, 0x100000000ull + static_cast<uint64_t>(train_idx));
      train.samples.push_back({rel, word, "IV"});
      ++train_idx;
    }

  DatasetManifest eval = train;
  eval.samples.clear();
  auto rng_pick = make_rng(cfg.seed, 7002);
  std::vector<std::string> eval_iv_words = iv;
  std::shuffle(eval_iv_words.begin(), eval_iv_words.end(), rng_pick);
  eval_iv_words.resize(static_cast<size_t>(cfg.eval_iv));
  int64_t eval_idx = 0;
  for (const auto& word : eval_iv_words) {
    auto rel = name_of("eval", eval_idx);
    render_to(word, rel, 0x200000000ull + static_cast<uint64_t>(eval_idx));
    eval.samples.push_back({rel, word, "IV"});
    ++eval_idx;
  }
  for (const auto& word : oov) {
    auto rel = name_of("eval", eval_idx);
    render_to(word, rel, 0x200000000ull + static_cast<uint64_t>(eval_idx));
    eval.samples.push_back({rel, word, "OOV"});
    ++eval_idx;
  }

  DatasetPaths paths;
  paths.train_manifest = (fs::path(out_dir) / "train.tsv").string();
  paths.eval_manifest = (fs::path(out_dir) / "eval.tsv").string();
  write_manifest(paths.train_manifest, train);
  write_manifest(paths.eval_manifest, eval);
  return paths;
}

}  // namespace vlamd
