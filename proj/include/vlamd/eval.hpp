#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "vlamd/beam.hpp"
#include "vlamd/image_io.hpp"
#include "vlamd/model.hpp"
#include "vlamd/synth.hpp"

namespace vlamd {

struct EvalRecord {
  std::string path;
  std::string gt;
  std::string pred;
  std::string tag;
  bool correct = false;
};

// Word-accuracy report. Fractions are derived from the integer counts, so
// correct_total always splits exactly into the two buckets.
struct EvalReport {
  int64_t n_total = 0, n_iv = 0, n_oov = 0;
  int64_t correct_total = 0, correct_iv = 0, correct_oov = 0;
  std::vector<EvalRecord> records;  // ordered by sample index

  double crw_total() const { return n_total ? static_cast<double>(correct_total) / static_cast<double>(n_total) : 0; }
  double crw_iv() const { return n_iv ? static_cast<double>(correct_iv) / static_cast<double>(n_iv) : 0; }
  double crw_oov() const { return n_oov ? static_cast<double>(correct_oov) / static_cast<double>(n_oov) : 0; }
};

inline int eval_worker_count() {
  if (const char* env = std::getenv("VLAMD_WORKERS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(std::min(hw, 4u));
}

// Full recognition over a manifest: images are decoded in parallel against
// the shared read-only model; record order follows the manifest.
template <class Real>
EvalReport evaluate(const VlamdModel<Real>& model, const DatasetManifest& manifest,
                    const std::string& root_dir, const DecodeConfig& cfg,
                    int n_workers = eval_worker_count()) {
  namespace fs = std::filesystem;
  EvalReport report;
  report.records.resize(manifest.samples.size());
  std::atomic<size_t> cursor{0};
  std::atomic<bool> failed{false};
  std::string first_error;
  std::mutex error_mu;

  auto work = [&] {
    NoGradScope ng;
    while (true) {
      size_t i = cursor.fetch_add(1);
      if (i >= manifest.samples.size() || failed.load()) break;
      const auto& s = manifest.samples[i];
      try {
        auto img = read_png((fs::path(root_dir) / s.path).string());
        if (img.h != model.cfg.backbone.input_h || img.w != model.cfg.backbone.input_w)
          img = resize_bilinear(img, model.cfg.backbone.input_h, model.cfg.backbone.input_w);
        EvalRecord rec;
        rec.path = s.path;
        rec.gt = s.transcript;
        rec.tag = s.tag;
        rec.pred = recognize(image_to_tensor<Real>(img), model, cfg);
        rec.correct = rec.pred == rec.gt;  // exact, case-sensitive
        report.records[i] = std::move(rec);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!failed.exchange(true)) first_error = s.path + ": " + e.what();
      }
    }
  };

  int threads = std::max(1, n_workers);
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failed.load()) throw DataError("evaluation failed at " + first_error);

  for (const auto& rec : report.records) {
    ++report.n_total;
    bool iv = rec.tag == "IV";
    (iv ? report.n_iv : report.n_oov) += 1;
    if (rec.correct) {
      ++report.correct_total;
      (iv ? report.correct_iv : report.correct_oov) += 1;
    }
  }
  return report;
}

inline void write_eval_report(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "# n_total=" << report.n_total << " n_iv=" << report.n_iv << " n_oov=" << report.n_oov << '\n';
  out << "# crw_total=" << report.crw_total() << " crw_iv=" << report.crw_iv()
      << " crw_oov=" << report.crw_oov() << '\n';
  out << "path\tgt\tpred\tcorrect\ttag\n";
  for (const auto& r : report.records)
    out << r.path << '\t' << r.gt << '\t' << r.pred << '\t' << (r.correct ? 1 : 0) << '\t' << r.tag
        << '\n';
  if (!out) throw DataError("short write to " + path);
}

}  // namespace vlamd
