#pragma once

#include <vector>

#include "vlamd/model.hpp"
#include "vlamd/tensor.hpp"

namespace vlamd {

struct LossReport {
  double ce_vlad_l2r = 0;
  double ce_vlad_r2l = 0;
  double ce_transd_l2r = 0;
  double ce_transd_r2l = 0;
  double kl_vlad = 0;
  double kl_transd = 0;
  double total = 0;
};

// teacher-forced outputs of all four heads for one image
template <class Real>
struct HeadOutputs {
  Tensor<Real> vlad_l2r, vlad_r2l, transd_l2r, transd_r2l;
};

template <class Real>
HeadOutputs<Real> forward_heads(const VlamdModel<Real>& model, const FeatureMap<Real>& fmap,
                                const TargetPair& pair) {
  if (pair.l2r.size() != pair.r2l.size())
    throw AlignmentError("target pair lengths differ: " + std::to_string(pair.l2r.size()) + " vs " +
                         std::to_string(pair.r2l.size()));
  int bos = model.vocab.bos();
  HeadOutputs<Real> out;
  out.vlad_l2r = model.vlad_l2r.forced_decode(pair.l2r, fmap, bos);
  out.vlad_r2l = model.vlad_r2l.forced_decode(pair.r2l, fmap, bos);
  out.transd_l2r = model.transd_l2r.forced_decode_parallel(pair.l2r, fmap, bos);
  out.transd_r2l = model.transd_r2l.forced_decode_parallel(pair.r2l, fmap, bos);
  return out;
}

// sum of the four per-head cross entropies
template <class Real>
Tensor<Real> main_loss(const HeadOutputs<Real>& heads, const TargetPair& pair) {
  auto check = [&](const Tensor<Real>& y, const std::vector<int>& t, const char* name) {
    if (y.size(0) != static_cast<int64_t>(t.size()))
      throw AlignmentError(std::string(name) + ": " + std::to_string(y.size(0)) +
                           " prediction rows vs " + std::to_string(t.size()) + " targets");
  };
  check(heads.vlad_l2r, pair.l2r, "vlad_l2r");
  check(heads.vlad_r2l, pair.r2l, "vlad_r2l");
  check(heads.transd_l2r, pair.l2r, "transd_l2r");
  check(heads.transd_r2l, pair.r2l, "transd_r2l");
  auto ce = add(add(cross_entropy(heads.vlad_l2r, pair.l2r), cross_entropy(heads.vlad_r2l, pair.r2l)),
                add(cross_entropy(heads.transd_l2r, pair.l2r), cross_entropy(heads.transd_r2l, pair.r2l)));
  return ce;
}

// Reverse-and-freeze: the L content rows are flipped so position i of one
// direction lines up with position L+1-i of the other; the EOS row stays
// last. The result is a constant, so no gradient ever flows into it.
template <class Real>
Tensor<Real> reverse_stop(const Tensor<Real>& dists) {
  if (dists.rank() != 2)
    throw ShapeError("reverse_stop: expected (positions, classes), got " + shape_str(dists.shape()));
  int64_t rows = dists.size(0), cols = dists.size(1);
  std::vector<Real> v(dists.data().size());
  for (int64_t i = 0; i < rows - 1; ++i)
    std::copy_n(dists.data().begin() + (rows - 2 - i) * cols, cols, v.begin() + i * cols);
  std::copy_n(dists.data().begin() + (rows - 1) * cols, cols, v.begin() + (rows - 1) * cols);
  return Tensor<Real>::from(std::move(v), dists.shape(), false);
}

// symmetric cross-distillation: KL(a || rs(b)) + KL(b || rs(a))
template <class Real>
Tensor<Real> mutual_loss(const Tensor<Real>& y_l2r, const Tensor<Real>& y_r2l) {
  if (y_l2r.shape() != y_r2l.shape())
    throw AlignmentError("mutual_loss: head outputs differ in shape, " + shape_str(y_l2r.shape()) +
                         " vs " + shape_str(y_r2l.shape()));
  return add(kl_div(y_l2r, reverse_stop(y_r2l)), kl_div(y_r2l, reverse_stop(y_l2r)));
}

template <class Real>
struct TotalLoss {
  Tensor<Real> total;
  LossReport report;
};

// With lambda == 0 the distillation terms are evaluated for the report only
// and contribute nothing to the graph, so the optimizer sees exactly the
// four-CE objective.
template <class Real>
TotalLoss<Real> total_loss(const HeadOutputs<Real>& heads, const TargetPair& pair, double lambda) {
  if (lambda < 0) throw ConfigError("lambda must be >= 0, got " + std::to_string(lambda));
  TotalLoss<Real> out;
  auto ce_vl = cross_entropy(heads.vlad_l2r, pair.l2r);
  auto ce_vr = cross_entropy(heads.vlad_r2l, pair.r2l);
  auto ce_tl = cross_entropy(heads.transd_l2r, pair.l2r);
  auto ce_tr = cross_entropy(heads.transd_r2l, pair.r2l);
  out.report.ce_vlad_l2r = static_cast<double>(ce_vl.item());
  out.report.ce_vlad_r2l = static_cast<double>(ce_vr.item());
  out.report.ce_transd_l2r = static_cast<double>(ce_tl.item());
  out.report.ce_transd_r2l = static_cast<double>(ce_tr.item());
  auto main = add(add(ce_vl, ce_vr), add(ce_tl, ce_tr));
  if (lambda > 0) {
    auto kl_v = mutual_loss(heads.vlad_l2r, heads.vlad_r2l);
    auto kl_t = mutual_loss(heads.transd_l2r, heads.transd_r2l);
    out.report.kl_vlad = static_cast<double>(kl_v.item());
    out.report.kl_transd = static_cast<double>(kl_t.item());
    out.total = add(main, scale(add(kl_v, kl_t), static_cast<Real>(lambda)));
  } else {
    NoGradScope ng;
    out.report.kl_vlad = static_cast<double>(mutual_loss(heads.vlad_l2r, heads.vlad_r2l).item());
    out.report.kl_transd = static_cast<double>(mutual_loss(heads.transd_l2r, heads.transd_r2l).item());
    out.total = main;
  }
  out.report.total = static_cast<double>(out.total.item());
  return out;
}

}  // namespace vlamd
