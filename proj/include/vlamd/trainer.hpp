#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "vlamd/losses.hpp"
#include "vlamd/model.hpp"
#include "vlamd/rng.hpp"

namespace vlamd {

struct TrainConfig {
  double lambda = 0.4;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  int batch_size = 128;
  int64_t max_steps = 1000;
  std::vector<double> milestones = {0.6, 0.8};  // fractions of max_steps
  double decay_factor = 0.1;
  uint64_t seed = 1;
  double grad_clip = 0;  // 0 disables

  void validate() const {
    if (lambda < 0) throw ConfigError("train.lambda must be >= 0");
    if (lr <= 0) throw ConfigError("train.lr must be > 0");
    if (batch_size <= 0) throw ConfigError("train.batch_size must be > 0");
    if (max_steps <= 0) throw ConfigError("train.max_steps must be > 0");
    for (double m : milestones)
      if (m < 0 || m > 1) throw ConfigError("train.milestones entries must lie in [0,1]");
  }

  // learning rate used at 1-based step s: decayed once per milestone passed
  double lr_at(int64_t s) const {
    double out = lr;
    for (double m : milestones) {
      auto boundary = static_cast<int64_t>(m * static_cast<double>(max_steps));
      if (s > boundary) out *= decay_factor;
    }
    return out;
  }
};

// Adam with decoupled weight decay; the decay acts on the value directly and
// never enters the moment estimates.
template <class Real>
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0;
  std::vector<std::vector<Real>> m, v;
  int64_t t = 0;

  void step(ParamList<Real>& params, double lr) {
    if (m.empty()) {
      m.resize(params.size());
      v.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m[i].assign(params[i].t.data().size(), Real(0));
        v[i].assign(params[i].t.data().size(), Real(0));
      }
    }
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& value = params[i].t.mutable_data();
      const auto& grad = params[i].t.grad();
      for (size_t j = 0; j < value.size(); ++j) {
        Real g = grad.empty() ? Real(0) : grad[j];
        m[i][j] = static_cast<Real>(beta1) * m[i][j] + static_cast<Real>(1.0 - beta1) * g;
        v[i][j] = static_cast<Real>(beta2) * v[i][j] + static_cast<Real>(1.0 - beta2) * g * g;
        Real mhat = m[i][j] / static_cast<Real>(bc1);
        Real vhat = v[i][j] / static_cast<Real>(bc2);
        value[j] -= static_cast<Real>(lr) *
                    (mhat / (std::sqrt(vhat) + static_cast<Real>(eps)) +
                     static_cast<Real>(weight_decay) * value[j]);
      }
    }
  }
};

template <class Real>
struct TrainSample {
  Tensor<Real> image;  // (3, H, W)
  TargetPair pair;
};

// Joint trainer for the four-head graph: one forward over all heads, one
// backward, one optimizer step per batch. Deterministic given seed and batch
// order.
template <class Real>
class MutualTrainer {
 public:
  MutualTrainer(VlamdModel<Real>& model, const TrainConfig& cfg, std::ostream* log = nullptr)
      : model_(model), cfg_(cfg), log_(log), params_(model.parameters()) {
    cfg_.validate();
    opt_.weight_decay = cfg_.weight_decay;
  }

  int64_t steps_done() const { return step_; }
  double current_lr() const { return cfg_.lr_at(step_ + 1); }
  const TrainConfig& config() const { return cfg_; }

  LossReport train_step(const std::vector<TrainSample<Real>>& batch) {
    if (batch.empty()) throw DataError("train_step: empty batch");
    for (auto& p : params_) p.t.zero_grad();
    Real inv = static_cast<Real>(1.0) / static_cast<Real>(batch.size());
    Tensor<Real> total;
    LossReport report;
    for (const auto& sample : batch) {
      auto fmap = model_.backbone.encode(sample.image);
      auto heads = forward_heads(model_, fmap, sample.pair);
      auto tl = total_loss(heads, sample.pair, cfg_.lambda);
      accumulate(report, tl.report, 1.0 / static_cast<double>(batch.size()));
      total = total.defined() ? add(total, tl.total) : tl.total;
    }
    total = scale(total, inv);
    check_finite(report);
    total.backward();
    if (cfg_.grad_clip > 0) clip_gradients(cfg_.grad_clip);
    double lr = cfg_.lr_at(step_ + 1);
    opt_.step(params_, lr);
    ++step_;
    if (log_) write_log_line(lr, report);
    return report;
  }

 private:
  static void accumulate(LossReport& into, const LossReport& part, double w) {
    into.ce_vlad_l2r += w * part.ce_vlad_l2r;
    into.ce_vlad_r2l += w * part.ce_vlad_r2l;
    into.ce_transd_l2r += w * part.ce_transd_l2r;
    into.ce_transd_r2l += w * part.ce_transd_r2l;
    into.kl_vlad += w * part.kl_vlad;
    into.kl_transd += w * part.kl_transd;
    into.total += w * part.total;
  }

  void check_finite(const LossReport& r) const {
    const std::pair<const char*, double> parts[] = {
        {"ce_vlad_l2r", r.ce_vlad_l2r},   {"ce_vlad_r2l", r.ce_vlad_r2l},
        {"ce_transd_l2r", r.ce_transd_l2r}, {"ce_transd_r2l", r.ce_transd_r2l},
        {"kl_vlad", r.kl_vlad},           {"kl_transd", r.kl_transd},
        {"total", r.total}};
    for (auto& [name, value] : parts)
      if (!std::isfinite(value))
        throw NumericError("non-finite loss in " + std::string(name) + " at step " +
                           std::to_string(step_ + 1));
  }

  void clip_gradients(double max_norm) {
    double norm_sq = 0;
    for (auto& p : params_)
      for (Real g : p.t.grad()) norm_sq += static_cast<double>(g) * static_cast<double>(g);
    double norm = std::sqrt(norm_sq);
    if (norm <= max_norm || norm == 0) return;
    Real factor = static_cast<Real>(max_norm / norm);
    for (auto& p : params_) {
      auto node = p.t.node();
      for (auto& g : node->grad) g *= factor;
    }
  }

  void write_log_line(double lr, const LossReport& r) {
    (*log_) << step_ << '\t' << lr << '\t' << r.ce_vlad_l2r << '\t' << r.ce_vlad_r2l << '\t'
            << r.ce_transd_l2r << '\t' << r.ce_transd_r2l << '\t' << r.kl_vlad << '\t'
            << r.kl_transd << '\t' << r.total << '\n';
    log_->flush();
  }

  VlamdModel<Real>& model_;
  TrainConfig cfg_;
  std::ostream* log_;
  ParamList<Real> params_;
  AdamW<Real> opt_;
  int64_t step_ = 0;
};

}  // namespace vlamd
