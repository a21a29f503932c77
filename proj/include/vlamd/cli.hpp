#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "vlamd/checkpoint.hpp"
#include "vlamd/config.hpp"
#include "vlamd/eval.hpp"
#include "vlamd/selfcheck.hpp"
#include "vlamd/synth.hpp"
#include "vlamd/trainer.hpp"

namespace vlamd::cli {

namespace fs = std::filesystem;

inline ModelConfig model_config_from(const Config& cfg) {
  ModelConfig mc;
  mc.backbone.c_model = cfg.get_int("backbone.c_model");
  mc.backbone.n_enc_layers = static_cast<int>(cfg.get_int("backbone.enc_layers"));
  mc.backbone.n_heads = static_cast<int>(cfg.get_int("backbone.heads"));
  mc.backbone.ff_dim = cfg.get_int("backbone.ff_dim");
  mc.backbone.input_h = cfg.get_int("data.image_h");
  mc.backbone.input_w = cfg.get_int("data.image_w");
  mc.vlad_hidden = cfg.get_int("vlad.hidden");
  mc.vlad_emb = cfg.get_int("vlad.emb");
  mc.vlad_attn = cfg.get_int("vlad.attn_dim");
  mc.vlad_fuse = cfg.get_int("vlad.fuse_dim");
  mc.vlad_mlp_hidden = cfg.get_int("vlad.mlp_hidden");
  mc.vlad_mlp_layers = static_cast<int>(cfg.get_int("vlad.mlp_layers"));
  mc.transd_layers = static_cast<int>(cfg.get_int("transd.layers"));
  mc.transd_heads = static_cast<int>(cfg.get_int("transd.heads"));
  mc.transd_ff = cfg.get_int("transd.ff_dim");
  mc.transd_mlp_hidden = cfg.get_int("transd.mlp_hidden");
  mc.transd_mlp_layers = static_cast<int>(cfg.get_int("transd.mlp_layers"));
  mc.transd_queries_only = cfg.get_bool("transd.queries_only");
  mc.t_max = cfg.get_int("model.t_max");
  mc.charset = cfg.get_str("data.charset");
  return mc;
}

inline TrainConfig train_config_from(const Config& cfg) {
  TrainConfig tc;
  tc.lambda = cfg.get_double("train.lambda");
  tc.lr = cfg.get_double("train.lr");
  tc.weight_decay = cfg.get_double("train.weight_decay");
  tc.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
  tc.max_steps = cfg.get_int("train.max_steps");
  tc.milestones = cfg.get_double_list("train.milestones");
  tc.decay_factor = cfg.get_double("train.decay_factor");
  tc.seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
  tc.grad_clip = cfg.get_double("train.grad_clip");
  tc.validate();
  return tc;
}

inline DataGenConfig datagen_config_from(const Config& cfg) {
  DataGenConfig dc;
  dc.charset = cfg.get_str("data.charset");
  dc.seed = static_cast<uint64_t>(cfg.get_int("data.seed"));
  dc.n_iv = static_cast<int>(cfg.get_int("data.n_iv"));
  dc.n_oov = static_cast<int>(cfg.get_int("data.n_oov"));
  dc.len_min = static_cast<int>(cfg.get_int("data.len_min"));
  dc.len_max = static_cast<int>(cfg.get_int("data.len_max"));
  dc.renders_per_word = static_cast<int>(cfg.get_int("data.renders_per_word"));
  dc.eval_iv = static_cast<int>(cfg.get_int("data.eval_iv"));
  dc.render.image_h = cfg.get_int("data.image_h");
  dc.render.image_w = cfg.get_int("data.image_w");
  dc.render.noise_std = cfg.get_double("data.noise_std");
  dc.render.jitter_scale = cfg.get_double("data.jitter_scale");
  dc.render.jitter_shift = cfg.get_double("data.jitter_shift");
  dc.render.fg_min = cfg.get_double("data.fg_min");
  dc.render.fg_max = cfg.get_double("data.fg_max");
  dc.render.bg_min = cfg.get_double("data.bg_min");
  dc.render.bg_max = cfg.get_double("data.bg_max");
  return dc;
}

inline DecodeConfig decode_config_from(const Config& cfg) {
  DecodeConfig dc;
  dc.beam_width = static_cast<int>(cfg.get_int("decode.beam_width"));
  dc.n_best = static_cast<int>(cfg.get_int("decode.n_best"));
  dc.alpha = cfg.get_double("decode.alpha");
  dc.max_len = cfg.get_int("decode.max_len");
  dc.length_norm = cfg.get_bool("decode.length_norm");
  dc.validate();
  return dc;
}

inline void run_gen_data(const std::string& config_path, std::ostream& out) {
  Config cfg = Config::load(config_path);
  auto dc = datagen_config_from(cfg);
  auto out_dir = cfg.get_str("data.out_dir");
  auto paths = emit_dataset(dc, out_dir);
  auto train = read_manifest(paths.train_manifest);
  auto eval = read_manifest(paths.eval_manifest);
  out << "wrote " << paths.train_manifest << " (" << train.samples.size() << " samples)\n";
  out << "wrote " << paths.eval_manifest << " (" << eval.samples.size() << " samples)\n";
}

template <class Real>
struct LoadedDataset {
  std::vector<TrainSample<Real>> samples;
  std::string charset;
};

template <class Real>
LoadedDataset<Real> load_training_data(const DatasetManifest& manifest, const std::string& root,
                                       const Vocab& vocab, int64_t input_h, int64_t input_w) {
  LoadedDataset<Real> out;
  out.charset = manifest.charset;
  out.samples.reserve(manifest.samples.size());
  for (const auto& s : manifest.samples) {
    auto img = read_png((fs::path(root) / s.path).string());
    if (img.h != input_h || img.w != input_w) img = resize_bilinear(img, input_h, input_w);
    TrainSample<Real> sample;
    sample.image = image_to_tensor<Real>(img);
    sample.pair = make_target_pair(vocab.encode(s.transcript), vocab.eos());
    out.samples.push_back(std::move(sample));
  }
  return out;
}

struct TrainOutcome {
  std::string final_checkpoint;
  int64_t steps = 0;
  double final_total = 0;
};

template <class Real>
TrainOutcome train_impl(const Config& cfg, const std::string& resume, std::ostream& out) {
  auto tc = train_config_from(cfg);
  const std::string manifest_path = cfg.get_str("train.manifest");
  if (manifest_path.empty()) throw ConfigError("train.manifest is required");
  auto manifest = read_manifest(manifest_path);
  if (manifest.samples.empty()) throw DataError(manifest_path + " lists no samples");

  auto mc = model_config_from(cfg);
  if (!manifest.charset.empty()) mc.charset = manifest.charset;
  VlamdModel<Real> model(mc, tc.seed);
  if (!resume.empty()) {
    load_checkpoint(resume, model);
    out << "resumed weights from " << resume << "\n";
  }

  const std::string root = fs::path(manifest_path).parent_path().string();
  auto data = load_training_data<Real>(manifest, root, model.vocab, mc.backbone.input_h,
                                       mc.backbone.input_w);

  const std::string out_dir = cfg.get_str("train.out_dir");
  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "train.log");
  MutualTrainer<Real> trainer(model, tc, &log);

  auto snapshot = cfg.snapshot();
  snapshot["data.charset"] = mc.charset;
  int64_t log_every = cfg.get_int("train.log_every");
  int64_t ckpt_every = cfg.get_int("train.ckpt_every");

  std::vector<size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  int64_t step = 0;
  int epoch = 0;
  LossReport last;
  while (step < tc.max_steps) {
    auto order_rng = make_rng(tc.seed, 9000 + static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), order_rng);
    for (size_t at = 0; at < order.size() && step < tc.max_steps;
         at += static_cast<size_t>(tc.batch_size)) {
      std::vector<TrainSample<Real>> batch;
      for (size_t i = at; i < std::min(order.size(), at + static_cast<size_t>(tc.batch_size)); ++i)
        batch.push_back(data.samples[order[i]]);
      last = trainer.train_step(batch);
      ++step;
      if (log_every > 0 && step % log_every == 0)
        out << "step " << step << " lr " << tc.lr_at(step) << " total " << last.total << "\n";
      if (ckpt_every > 0 && step % ckpt_every == 0) {
        auto path = (fs::path(out_dir) / ("ckpt_" + std::to_string(step) + ".vlamd")).string();
        save_checkpoint(path, model, step, snapshot);
      }
    }
    ++epoch;
  }

  TrainOutcome outcome;
  outcome.steps = step;
  outcome.final_total = last.total;
  outcome.final_checkpoint = (fs::path(out_dir) / "ckpt_final.vlamd").string();
  save_checkpoint(outcome.final_checkpoint, model, step, snapshot);
  out << "saved " << outcome.final_checkpoint << " after " << step << " steps, total loss "
      << last.total << "\n";

  const std::string eval_manifest = cfg.get_str("train.eval_manifest");
  if (!eval_manifest.empty()) {
    auto em = read_manifest(eval_manifest);
    auto dc = decode_config_from(cfg);
    auto report = evaluate(model, em, fs::path(eval_manifest).parent_path().string(), dc);
    out << "validation crw_total " << report.crw_total() << " (" << report.correct_total << "/"
        << report.n_total << ")\n";
    out << "validation crw_iv " << report.crw_iv() << " crw_oov " << report.crw_oov() << "\n";
  }
  return outcome;
}

inline TrainOutcome run_train(const std::string& config_path, const std::string& resume,
                              std::ostream& out) {
  Config cfg = Config::load(config_path);
  const std::string precision = cfg.get_str("train.precision");
  if (precision == "f32") return train_impl<float>(cfg, resume, out);
  if (precision == "f64") return train_impl<double>(cfg, resume, out);
  throw ConfigError("train.precision must be f32 or f64, got '" + precision + "'");
}

template <class Real>
EvalReport eval_impl(const CheckpointMeta& meta, const std::string& ckpt_path,
                     const std::string& manifest_path, const std::string& report_path,
                     std::ostream& out) {
  Config cfg = Config::from_snapshot(meta.config);
  VlamdModel<Real> model(model_config_from(cfg), 0);
  load_checkpoint(ckpt_path, model);
  auto manifest = read_manifest(manifest_path);
  auto dc = decode_config_from(cfg);
  auto report =
      evaluate(model, manifest, fs::path(manifest_path).parent_path().string(), dc);
  out << "crw_total " << report.crw_total() << " (" << report.correct_total << "/" << report.n_total
      << ")\n";
  out << "crw_iv " << report.crw_iv() << " (" << report.correct_iv << "/" << report.n_iv << ")\n";
  out << "crw_oov " << report.crw_oov() << " (" << report.correct_oov << "/" << report.n_oov
      << ")\n";
  if (!report_path.empty()) {
    write_eval_report(report_path, report);
    out << "wrote " << report_path << "\n";
  }
  return report;
}

inline EvalReport run_eval(const std::string& ckpt_path, const std::string& manifest_path,
                           const std::string& report_path, std::ostream& out) {
  auto meta = read_checkpoint_meta(ckpt_path);
  if (meta.dtype == "f32") return eval_impl<float>(meta, ckpt_path, manifest_path, report_path, out);
  return eval_impl<double>(meta, ckpt_path, manifest_path, report_path, out);
}

template <class Real>
std::string decode_impl(const CheckpointMeta& meta, const std::string& ckpt_path,
                        const std::string& image_path, int nbest, bool dump_candidates,
                        std::ostream& out) {
  Config cfg = Config::from_snapshot(meta.config);
  VlamdModel<Real> model(model_config_from(cfg), 0);
  load_checkpoint(ckpt_path, model);
  auto dc = decode_config_from(cfg);
  if (nbest > 0) {
    dc.n_best = nbest;
    dc.beam_width = std::max(dc.beam_width, nbest);
  }
  auto img = read_png(image_path);
  if (img.h != model.cfg.backbone.input_h || img.w != model.cfg.backbone.input_w)
    img = resize_bilinear(img, model.cfg.backbone.input_h, model.cfg.backbone.input_w);
  NoGradScope ng;
  auto fmap = model.backbone.encode(image_to_tensor<Real>(img));
  auto result = mutual_redecode(fmap, model, dc);
  auto transcript = model.vocab.decode(result.best);
  out << transcript << "\n";
  if (dump_candidates) {
    out << "rank\torigin\ttext\tlogp_l2r\tlogp_r2l_reversed\tcombined\n";
    int rank = 1;
    for (const auto& e : result.entries) {
      out << rank++ << '\t' << direction_name(e.origin) << '\t' << model.vocab.decode(e.tokens)
          << '\t' << std::setprecision(12) << e.logp_l2r << '\t' << e.logp_r2l_rev << '\t'
          << e.combined << '\n';
    }
  }
  return transcript;
}

inline std::string run_decode(const std::string& ckpt_path, const std::string& image_path,
                              int nbest, bool dump_candidates, std::ostream& out) {
  auto meta = read_checkpoint_meta(ckpt_path);
  if (meta.dtype == "f32")
    return decode_impl<float>(meta, ckpt_path, image_path, nbest, dump_candidates, out);
  return decode_impl<double>(meta, ckpt_path, image_path, nbest, dump_candidates, out);
}

}  // namespace vlamd::cli
