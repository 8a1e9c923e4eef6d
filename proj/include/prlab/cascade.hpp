#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "prlab/geometry.hpp"
#include "prlab/proposals.hpp"
#include "prlab/synth.hpp"

namespace prlab {

struct StageConfig {
  double alpha = 0.5;   // foreground IoU threshold
  double lambda = 1.0;  // loss coefficient
};

struct StageHead {
  std::vector<int> classes;  // covered class ids; classifier row = 1 + position
  std::vector<std::vector<double>> w_cls;  // (1 + |classes|) rows, row 0 = background
  std::vector<double> b_cls;
  std::array<std::vector<double>, 4> w_reg;  // class-agnostic regressor
  std::array<double, 4> b_reg{};

  int dim() const { return w_reg[0].empty() ? 0 : static_cast<int>(w_reg[0].size()); }
  int rows() const { return static_cast<int>(w_cls.size()); }

  int row_of(int class_id) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == class_id) return static_cast<int>(i) + 1;
    return -1;
  }

  static StageHead zeros(int dim, std::vector<int> class_ids) {
    StageHead h;
    h.classes = std::move(class_ids);
    h.w_cls.assign(h.classes.size() + 1, std::vector<double>(dim, 0.0));
    h.b_cls.assign(h.classes.size() + 1, 0.0);
    for (auto& row : h.w_reg) row.assign(dim, 0.0);
    return h;
  }
};

/// Appends zero-initialized classifier rows for new classes; existing logits
/// are untouched, so behavior on old classes is preserved at the instant of
/// widening.
inline void widen_stage(StageHead& head, const std::vector<int>& new_classes) {
  for (int c : new_classes) {
    if (head.row_of(c) != -1)
      throw std::invalid_argument("class already covered by classifier");
    head.classes.push_back(c);
    head.w_cls.emplace_back(head.dim(), 0.0);
    head.b_cls.push_back(0.0);
  }
}

struct Stage {
  StageConfig cfg;
  StageHead head;
};

struct Cascade {
  std::vector<Stage> stages;

  void validate() const {
    if (stages.empty()) throw std::invalid_argument("cascade needs at least one stage");
    for (std::size_t t = 0; t < stages.size(); ++t) {
      const auto& c = stages[t].cfg;
      if (!(c.alpha >= 0.0 && c.alpha <= 1.0))
        throw std::invalid_argument("stage alpha must lie in [0,1]");
      if (!(c.lambda > 0.0)) throw std::invalid_argument("stage lambda must be positive");
      if (t > 0 && !(c.alpha > stages[t - 1].cfg.alpha))
        throw std::invalid_argument("stage alphas must strictly increase");
    }
  }
};

inline Cascade make_cascade(int dim, const std::vector<int>& class_ids,
                            const std::vector<StageConfig>& configs) {
  Cascade c;
  for (const auto& cfg : configs) c.stages.push_back({cfg, StageHead::zeros(dim, class_ids)});
  c.validate();
  return c;
}

struct StageLabels {
  std::vector<int> class_id;  // -1 background
  std::vector<int> gt_index;  // -1 background
  std::vector<BoxDelta> delta;  // meaningful for foreground entries

  std::size_t size() const { return class_id.size(); }
};

/// Labels each proposal foreground (class of its best-IoU ground truth, ties
/// to the lowest index) when that IoU clears alpha, else background.
inline StageLabels assign_stage_labels(const std::vector<Proposal>& proposals,
                                       const Scene& scene, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("alpha must lie in [0,1]");
  StageLabels out;
  out.class_id.assign(proposals.size(), -1);
  out.gt_index.assign(proposals.size(), -1);
  out.delta.assign(proposals.size(), BoxDelta{});
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double best = 0.0;
    int best_g = -1;
    for (std::size_t g = 0; g < scene.annotations.size(); ++g) {
      double v = iou(proposals[i].box, scene.annotations[g].box);
      if (v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0 && best >= alpha && best > 0.0) {
      out.class_id[i] = scene.annotations[best_g].class_id;
      out.gt_index[i] = best_g;
      out.delta[i] = encode_delta(proposals[i].box, scene.annotations[best_g].box);
    }
  }
  return out;
}

/// Samples a training batch from labeled proposals with a foreground quota:
/// up to batch_size * fg_fraction foregrounds, background fills the rest.
/// Returned indices are ascending so batch order tracks proposal order.
inline std::vector<int> sample_stage_rois(const StageLabels& labels, int batch_size,
                                          double fg_fraction, Rng& rng) {
  std::vector<int> fg, bg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels.class_id[i] >= 0)
      fg.push_back(static_cast<int>(i));
    else
      bg.push_back(static_cast<int>(i));
  }
  rng.shuffle(fg);
  rng.shuffle(bg);
  std::size_t want_fg = std::min(
      fg.size(), static_cast<std::size_t>(static_cast<double>(batch_size) * fg_fraction));
  std::size_t want_bg = std::min(bg.size(), static_cast<std::size_t>(batch_size) - want_fg);
  std::vector<int> out(fg.begin(), fg.begin() + want_fg);
  out.insert(out.end(), bg.begin(), bg.begin() + want_bg);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<double> stage_logits(const StageHead& head, const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != head.dim())
    throw std::invalid_argument("feature width does not match stage head");
  std::vector<double> z(head.rows());
  for (int r = 0; r < head.rows(); ++r) z[r] = detail::dot(head.w_cls[r], x) + head.b_cls[r];
  return z;
}

struct StageForward {
  std::vector<std::vector<double>> probs;  // softmax rows, column 0 = background
  std::vector<BoxDelta> deltas;
};

inline StageForward stage_forward(const StageHead& head,
                                  const std::vector<std::vector<double>>& features) {
  StageForward out;
  out.probs.reserve(features.size());
  out.deltas.reserve(features.size());
  for (const auto& x : features) {
    std::vector<double> z = stage_logits(head, x);
    double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
      v = std::exp(v - m);
      sum += v;
    }
    for (double& v : z) v /= sum;
    out.probs.push_back(std::move(z));
    BoxDelta d;
    d.dx = detail::dot(head.w_reg[0], x) + head.b_reg[0];
    d.dy = detail::dot(head.w_reg[1], x) + head.b_reg[1];
    d.dw = detail::dot(head.w_reg[2], x) + head.b_reg[2];
    d.dh = detail::dot(head.w_reg[3], x) + head.b_reg[3];
    out.deltas.push_back(d);
  }
  return out;
}

struct StageStepResult {
  StageHead head;
  double loss = 0.0;      // lambda-scaled total
  double cls_loss = 0.0;  // unscaled
  double reg_loss = 0.0;  // unscaled
};

/// One SGD step on softmax cross-entropy over classes plus background and
/// smooth-L1 regression on foreground proposals, scaled by the stage's
/// lambda through a single lr*lambda factor.
inline StageStepResult stage_step(const StageHead& head, const StageConfig& cfg,
                                  const std::vector<std::vector<double>>& features,
                                  const StageLabels& labels, double lr) {
  StageStepResult res;
  res.head = head;
  const std::size_t n = features.size();
  if (n == 0) return res;
  if (labels.size() != n) throw std::invalid_argument("stage batch arrays must align");

  const int dim = head.dim();
  const int rows = head.rows();
  std::vector<std::vector<double>> gw_cls(rows, std::vector<double>(dim, 0.0));
  std::vector<double> gb_cls(rows, 0.0);
  std::array<std::vector<double>, 4> gw_reg;
  for (auto& row : gw_reg) row.assign(dim, 0.0);
  std::array<double, 4> gb_reg{};

  std::size_t foreground = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels.class_id[i] >= 0) ++foreground;
  const double cls_norm = 1.0 / static_cast<double>(n);
  const double reg_norm = foreground > 0 ? 1.0 / static_cast<double>(foreground) : 0.0;

  double cls = 0.0, reg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = features[i];
    int y_row = 0;
    if (labels.class_id[i] >= 0) {
      y_row = head.row_of(labels.class_id[i]);
      if (y_row < 0) throw std::invalid_argument("class not covered by classifier");
    }
    std::vector<double> z = stage_logits(head, x);
    double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    cls += (m + std::log(sum) - z[y_row]) * cls_norm;
    for (int r = 0; r < rows; ++r) {
      double p = std::exp(z[r] - m) / sum;
      double dz = (p - (r == y_row ? 1.0 : 0.0)) * cls_norm;
      for (int j = 0; j < dim; ++j) gw_cls[r][j] += dz * x[j];
      gb_cls[r] += dz;
    }

    if (labels.class_id[i] >= 0) {
      const double target[4] = {labels.delta[i].dx, labels.delta[i].dy, labels.delta[i].dw,
                                labels.delta[i].dh};
      for (int d = 0; d < 4; ++d) {
        double e = detail::dot(head.w_reg[d], x) + head.b_reg[d] - target[d];
        reg += detail::smooth_l1(e) * reg_norm;
        double de = detail::smooth_l1_grad(e) * reg_norm;
        for (int j = 0; j < dim; ++j) gw_reg[d][j] += de * x[j];
        gb_reg[d] += de;
      }
    }
  }

  res.cls_loss = cls;
  res.reg_loss = reg;
  res.loss = cfg.lambda * (cls + reg);

  const double scale = lr * cfg.lambda;
  if (scale != 0.0) {
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < dim; ++j) res.head.w_cls[r][j] -= scale * gw_cls[r][j];
      res.head.b_cls[r] -= scale * gb_cls[r];
    }
    for (int d = 0; d < 4; ++d) {
      for (int j = 0; j < dim; ++j) res.head.w_reg[d][j] -= scale * gw_reg[d][j];
      res.head.b_reg[d] -= scale * gb_reg[d];
    }
  }
  return res;
}

/// Batch feature extractor: maps proposal boxes to one feature row each.
using BatchFeatureFn = std::function<std::vector<std::vector<double>>(const std::vector<BBox>&)>;

/// Stage-indexed extractor used by run_cascade so each stage re-extracts at
/// its own input boxes with an independent noise stream.
using StageFeatureFn =
    std::function<std::vector<std::vector<double>>(int stage, const std::vector<BBox>&)>;

namespace detail {

struct StageApply {
  std::vector<Proposal> refined;
  std::vector<std::vector<double>> probs;
};

inline StageApply apply_stage(const StageHead& head, const StageConfig& cfg,
                              const std::vector<Proposal>& proposals,
                              const std::vector<std::vector<double>>& features,
                              const Scene& scene) {
  if (features.size() != proposals.size())
    throw std::invalid_argument("need one feature row per proposal");
  StageApply out;
  StageForward fwd = stage_forward(head, features);
  out.probs = std::move(fwd.probs);
  out.refined.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    Proposal p = proposals[i];
    p.source_stage = proposals[i].source_stage + 1;
    p.objectness = 1.0 - out.probs[i][0];
    if (p.box.width() > 1e-3 && p.box.height() > 1e-3)
      p.box = clip(decode_delta(p.box, fwd.deltas[i]), scene.width, scene.height);
    annotate_proposal(p, scene, cfg.alpha);
    out.refined.push_back(std::move(p));
  }
  return out;
}

}  // namespace detail

/// One refinement pass: re-extract features at the current boxes, regress
/// and clip, score each box as 1 - background probability. Never drops or
/// reorders proposals.
inline std::vector<Proposal> refine(const StageHead& head, const StageConfig& cfg,
                                    const std::vector<Proposal>& proposals,
                                    const BatchFeatureFn& feature_fn, const Scene& scene) {
  std::vector<BBox> boxes;
  boxes.reserve(proposals.size());
  for (const auto& p : proposals) boxes.push_back(p.box);
  return detail::apply_stage(head, cfg, proposals, feature_fn(boxes), scene).refined;
}

struct CascadeDetection {
  int class_id = -1;
  BBox box;
  double score = 0.0;
};

struct CascadeResult {
  std::vector<std::vector<Proposal>> stage_inputs;  // input snapshot per stage
  std::vector<Proposal> final_proposals;
  std::vector<CascadeDetection> detections;
};

inline constexpr double kScoreFloor = 0.05;
inline constexpr double kDetectionNms = 0.5;

/// Runs every stage in sequence (stage t consumes stage t-1 output), keeps
/// the input snapshot of each stage for histogram analysis, and converts the
/// last stage's class probabilities into per-class detections above the
/// score floor, suppressed per class.
inline CascadeResult run_cascade(const Cascade& cascade, std::vector<Proposal> proposals,
                                 const StageFeatureFn& feature_fn, const Scene& scene) {
  cascade.validate();
  CascadeResult out;
  std::vector<std::vector<double>> last_probs;
  for (std::size_t t = 0; t < cascade.stages.size(); ++t) {
    out.stage_inputs.push_back(proposals);
    std::vector<BBox> boxes;
    boxes.reserve(proposals.size());
    for (const auto& p : proposals) boxes.push_back(p.box);
    auto applied = detail::apply_stage(cascade.stages[t].head, cascade.stages[t].cfg,
                                       proposals, feature_fn(static_cast<int>(t), boxes),
                                       scene);
    proposals = std::move(applied.refined);
    if (t + 1 == cascade.stages.size()) last_probs = std::move(applied.probs);
  }
  out.final_proposals = std::move(proposals);

  const StageHead& last = cascade.stages.back().head;
  std::vector<CascadeDetection> raw;
  for (std::size_t i = 0; i < out.final_proposals.size(); ++i) {
    for (std::size_t k = 0; k < last.classes.size(); ++k) {
      double score = last_probs[i][k + 1];
      if (score >= kScoreFloor)
        raw.push_back(CascadeDetection{last.classes[k], out.final_proposals[i].box, score});
    }
  }
  for (int c : last.classes) {
    std::vector<BBox> boxes;
    std::vector<double> scores;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i].class_id == c) {
        boxes.push_back(raw[i].box);
        scores.push_back(raw[i].score);
        idx.push_back(i);
      }
    }
    for (int keep : nms(boxes, scores, kDetectionNms))
      out.detections.push_back(raw[idx[keep]]);
  }
  std::sort(out.detections.begin(), out.detections.end(),
            [](const CascadeDetection& a, const CascadeDetection& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.class_id != b.class_id) return a.class_id < b.class_id;
              return a.box.x1 < b.box.x1;
            });
  return out;
}

struct StageHistogram {
  int bins = 0;
  std::vector<std::vector<long long>> counts;  // [stage][bin]
  std::vector<double> share_ge_075;            // per stage
};

/// Histograms max_gt_iou over the positive population (IoU >= 0.4) of each
/// snapshot, with the share of that population at IoU >= 0.75.
inline StageHistogram stage_iou_histogram(const std::vector<std::vector<Proposal>>& snapshots,
                                          int bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  StageHistogram h;
  h.bins = bins;
  for (const auto& snap : snapshots) {
    std::vector<long long> row(bins, 0);
    long long population = 0, high = 0;
    for (const auto& p : snap) {
      if (p.max_gt_iou < 0.4) continue;
      ++population;
      if (p.max_gt_iou >= 0.75) ++high;
      int b = std::min(bins - 1, static_cast<int>(p.max_gt_iou * bins));
      ++row[b];
    }
    h.counts.push_back(std::move(row));
    h.share_ge_075.push_back(population > 0 ? static_cast<double>(high) /
                                                  static_cast<double>(population)
                                            : 0.0);
  }
  return h;
}

inline std::string stage_histogram_csv(const StageHistogram& h) {
  std::string out = "stage,bin_lo,bin_hi,count,share_ge_075\n";
  char line[160];
  for (std::size_t s = 0; s < h.counts.size(); ++s) {
    for (int b = 0; b < h.bins; ++b) {
      std::snprintf(line, sizeof(line), "%zu,%.6g,%.6g,%lld,%.9g\n", s + 1,
                    static_cast<double>(b) / h.bins, static_cast<double>(b + 1) / h.bins,
                    h.counts[s][b], h.share_ge_075[s]);
      out += line;
    }
  }
  return out;
}

}  // namespace prlab
