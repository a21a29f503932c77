#include "vlamd/synth.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "vlamd/rng.hpp"

namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("vlamd_test_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Lexicons, NoHeldOutWordsWhenCountIsZero) {
  auto [iv, oov] = vlamd::build_lexicons("abc", 5, 0, 1, 3, 1);
  EXPECT_EQ(iv.size(), 5u);
  EXPECT_TRUE(oov.empty());
}

TEST(Lexicons, DisjointAcrossManySeeds) {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    auto [iv, oov] = vlamd::build_lexicons("abcdef", 20, 10, 1, 4, seed);
    std::set<std::string> iv_set(iv.begin(), iv.end());
    std::set<std::string> oov_set(oov.begin(), oov.end());
    EXPECT_EQ(iv_set.size(), 20u);
    EXPECT_EQ(oov_set.size(), 10u);
    for (const auto& w : oov_set) EXPECT_EQ(iv_set.count(w), 0u) << "seed " << seed;
  }
}

TEST(Lexicons, EveryCharacterCoveredInBothLists) {
  const std::string charset = "abcdefgh";
  for (uint64_t seed : {1u, 9u, 33u}) {
    auto [iv, oov] = vlamd::build_lexicons(charset, 12, 12, 1, 4, seed);
    auto chars_of = [](const std::vector<std::string>& words) {
      std::set<char> s;
      for (const auto& w : words) s.insert(w.begin(), w.end());
      return s;
    };
    auto iv_chars = chars_of(iv);
    auto oov_chars = chars_of(oov);
    for (char c : charset) {
      EXPECT_EQ(iv_chars.count(c), 1u) << "iv misses " << c << " seed " << seed;
      EXPECT_EQ(oov_chars.count(c), 1u) << "oov misses " << c << " seed " << seed;
    }
  }
}

TEST(Lexicons, InfeasibleCountsRejected) {
  EXPECT_THROW(vlamd::build_lexicons("ab", 3, 2, 1, 1, 1), vlamd::CapacityError);
  EXPECT_THROW(vlamd::build_lexicons("", 1, 0, 1, 1, 1), vlamd::ConfigError);
}

TEST(Render, SameSeedGivesBitIdenticalImages) {
  vlamd::RenderSpec spec;
  auto r1 = vlamd::make_rng(9, 3);
  auto r2 = vlamd::make_rng(9, 3);
  auto a = vlamd::render_word("hello", spec, r1);
  auto b = vlamd::render_word("hello", spec, r2);
  ASSERT_EQ(a.rgb.size(), b.rgb.size());
  EXPECT_EQ(0, std::memcmp(a.rgb.data(), b.rgb.data(), a.rgb.size() * sizeof(float)));
}

TEST(Render, NoiselessUnjitteredIsPureGlyphComposition) {
  vlamd::RenderSpec spec;
  spec.image_h = 16;
  spec.image_w = 48;
  spec.noise_std = 0;
  spec.jitter_scale = 0;
  spec.jitter_shift = 0;
  spec.fg_min = spec.fg_max = 1.0;
  spec.bg_min = spec.bg_max = 0.0;
  auto rng = vlamd::make_rng(1, 1);
  auto img = vlamd::render_word("ab", spec, rng);
  // exactly two levels
  for (float v : img.rgb) EXPECT_TRUE(v == 0.0f || v == 1.0f);
  // integer scale 2: every inked glyph cell becomes a 2x2 block
  int ink = 0;
  for (const char c : std::string("ab")) {
    const auto* g = vlamd::font::find(c);
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 5; ++x) ink += g->rows[y][x] == '#';
  }
  int lit = 0;
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) lit += img.at(y, x, 0) == 1.0f;
  EXPECT_EQ(lit, ink * 4);
}

TEST(Render, DefaultShapeRangeAndReplicatedChannels) {
  vlamd::RenderSpec spec;
  auto rng = vlamd::make_rng(2, 1);
  auto img = vlamd::render_word("abc123", spec, rng);
  EXPECT_EQ(img.h, 32);
  EXPECT_EQ(img.w, 100);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      float v = img.at(y, x, 0);
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
      EXPECT_EQ(v, img.at(y, x, 1));
      EXPECT_EQ(v, img.at(y, x, 2));
    }
}

TEST(Render, OverlongWordIsRejected) {
  vlamd::RenderSpec spec;
  auto rng = vlamd::make_rng(3, 1);
  EXPECT_THROW(vlamd::render_word("aaaaaaaaaaaaaaaaaaaa", spec, rng), vlamd::LayoutError);
}

TEST(Render, UnknownGlyphIsRejected) {
  vlamd::RenderSpec spec;
  auto rng = vlamd::make_rng(4, 1);
  EXPECT_THROW(vlamd::render_word("a!b", spec, rng), vlamd::VocabError);
}

TEST(Png, RoundTripPreservesQuantizedPixels) {
  vlamd::RenderSpec spec;
  auto rng = vlamd::make_rng(5, 1);
  auto img = vlamd::render_word("png", spec, rng);
  auto dir = temp_dir("png");
  auto path = dir + "/img.png";
  vlamd::write_png(path, img);
  auto back = vlamd::read_png(path);
  ASSERT_EQ(back.h, img.h);
  ASSERT_EQ(back.w, img.w);
  for (size_t i = 0; i < img.rgb.size(); ++i) {
    float expected = std::lround(std::clamp(img.rgb[i], 0.0f, 1.0f) * 255.0f) / 255.0f;
    EXPECT_NEAR(back.rgb[i], expected, 1e-6);
  }
  fs::remove_all(dir);
}

TEST(Png, EncodingIsByteDeterministic) {
  vlamd::RenderSpec spec;
  auto r1 = vlamd::make_rng(6, 1);
  auto img = vlamd::render_word("same", spec, r1);
  EXPECT_EQ(vlamd::encode_png(img), vlamd::encode_png(img));
}

TEST(Png, RejectsUnsupportedFeatures) {
  vlamd::Image img;
  img.h = img.w = 2;
  img.rgb.assign(12, 0.5f);
  auto bytes = vlamd::encode_png(img);
  bytes[8 + 4 + 4 + 12] = 1;  // flip the IHDR interlace byte
  EXPECT_THROW(vlamd::decode_png(bytes), vlamd::DataError);
  EXPECT_THROW(vlamd::decode_png({1, 2, 3}), vlamd::DataError);
}

TEST(Resize, BilinearEndpointsAndIdentity) {
  vlamd::Image img;
  img.h = 2;
  img.w = 2;
  img.rgb.assign(12, 0.0f);
  img.at(0, 0, 0) = img.at(0, 0, 1) = img.at(0, 0, 2) = 1.0f;
  auto same = vlamd::resize_bilinear(img, 2, 2);
  EXPECT_EQ(same.rgb, img.rgb);
  auto up = vlamd::resize_bilinear(img, 4, 4);
  EXPECT_FLOAT_EQ(up.at(0, 0, 0), 1.0f);
  EXPECT_FLOAT_EQ(up.at(3, 3, 0), 0.0f);
}

TEST(Manifest, RoundTrip) {
  vlamd::DatasetManifest m;
  m.charset = "abc";
  m.seed = 42;
  m.image_h = 32;
  m.image_w = 100;
  m.samples = {{"images/train/000000.png", "ab", "IV"}, {"images/eval/000001.png", "ccc", "OOV"}};
  auto dir = temp_dir("manifest");
  auto path = dir + "/m.tsv";
  vlamd::write_manifest(path, m);
  auto back = vlamd::read_manifest(path);
  EXPECT_EQ(back.charset, "abc");
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.image_h, 32);
  EXPECT_EQ(back.image_w, 100);
  ASSERT_EQ(back.samples.size(), 2u);
  EXPECT_EQ(back.samples[1].transcript, "ccc");
  EXPECT_EQ(back.samples[1].tag, "OOV");
  fs::remove_all(dir);
}

TEST(Dataset, EmissionIsByteReproducible) {
  vlamd::DataGenConfig cfg;
  cfg.charset = "abcde";
  cfg.n_iv = 6;
  cfg.n_oov = 3;
  cfg.eval_iv = 3;
  cfg.renders_per_word = 2;
  cfg.len_max = 3;
  cfg.render.image_h = 16;
  cfg.render.image_w = 48;
  auto d1 = temp_dir("ds1");
  auto d2 = temp_dir("ds2");
  auto p1 = vlamd::emit_dataset(cfg, d1);
  auto p2 = vlamd::emit_dataset(cfg, d2);
  EXPECT_EQ(slurp(p1.train_manifest), slurp(p2.train_manifest));
  EXPECT_EQ(slurp(p1.eval_manifest), slurp(p2.eval_manifest));
  for (const char* rel : {"images/train/000000.png", "images/train/000007.png", "images/eval/000004.png"})
    EXPECT_EQ(slurp(d1 + "/" + rel), slurp(d2 + "/" + rel)) << rel;
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Dataset, SplitsAreConsistentAndLeakFree) {
  vlamd::DataGenConfig cfg;
  cfg.charset = "abcdef";
  cfg.n_iv = 8;
  cfg.n_oov = 4;
  cfg.eval_iv = 4;
  cfg.renders_per_word = 2;
  cfg.len_max = 3;
  cfg.render.image_h = 16;
  cfg.render.image_w = 48;
  auto dir = temp_dir("ds3");
  auto paths = vlamd::emit_dataset(cfg, dir);
  auto train = vlamd::read_manifest(paths.train_manifest);
  auto eval = vlamd::read_manifest(paths.eval_manifest);
  EXPECT_EQ(train.samples.size(), 16u);
  EXPECT_EQ(eval.samples.size(), 8u);

  std::set<std::string> train_words;
  for (const auto& s : train.samples) {
    EXPECT_EQ(s.tag, "IV");
    train_words.insert(s.transcript);
  }
  int n_iv = 0, n_oov = 0;
  for (const auto& s : eval.samples) {
    if (s.tag == "IV") {
      ++n_iv;
      EXPECT_EQ(train_words.count(s.transcript), 1u);
    } else {
      ++n_oov;
      EXPECT_EQ(train_words.count(s.transcript), 0u) << s.transcript << " leaked into training";
    }
    // every referenced image exists and decodes
    auto img = vlamd::read_png(dir + "/" + s.path);
    EXPECT_EQ(img.h, 16);
    EXPECT_EQ(img.w, 48);
  }
  EXPECT_EQ(n_iv, 4);
  EXPECT_EQ(n_oov, 4);
  fs::remove_all(dir);
}

}  // namespace
