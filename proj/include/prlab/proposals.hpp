#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "prlab/geometry.hpp"
#include "prlab/rng.hpp"
#include "prlab/synth.hpp"

namespace prlab {

struct AnchorGrid {
  double stride = 0.0;
  std::vector<double> scales;
  std::vector<double> ratios;
  std::vector<BBox> anchors;
};

/// Anchors centered at every stride step, one per (position, scale, ratio),
/// position-major then scale then ratio. Ratios preserve area: a scale-s,
/// ratio-r anchor is s*sqrt(r) wide and s/sqrt(r) tall.
inline AnchorGrid build_anchor_grid(double width, double height, double stride,
                                    std::vector<double> scales, std::vector<double> ratios) {
  if (!(stride > 0.0)) throw std::invalid_argument("stride must be positive");
  if (scales.empty() || ratios.empty())
    throw std::invalid_argument("scales and ratios must be non-empty");
  if (!(width > 0.0) || !(height > 0.0))
    throw std::invalid_argument("scene dimensions must be positive");
  AnchorGrid grid;
  grid.stride = stride;
  grid.scales = std::move(scales);
  grid.ratios = std::move(ratios);
  for (double cy = stride / 2.0; cy < height; cy += stride) {
    for (double cx = stride / 2.0; cx < width; cx += stride) {
      for (double s : grid.scales) {
        for (double r : grid.ratios) {
          if (!(s > 0.0) || !(r > 0.0))
            throw std::invalid_argument("scales and ratios must be positive");
          double w = s * std::sqrt(r);
          double h = s / std::sqrt(r);
          BBox a{cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0};
          grid.anchors.push_back(clip(a, width, height));
        }
      }
    }
  }
  return grid;
}

struct AnchorMatch {
  static constexpr int kNegative = -1;
  static constexpr int kIgnore = -2;
  std::vector<int> match;  // >= 0: matched annotation index
  std::vector<double> max_iou;
  std::vector<BoxDelta> delta;  // meaningful where match >= 0

  std::size_t size() const { return match.size(); }
};

/// Faster R-CNN anchor labeling: positive at IoU >= pos_thresh, negative
/// below neg_thresh, ignore between. Each ground-truth box additionally
/// forces its own best-IoU anchor positive (the anchor keeps its own argmax
/// assignment). Ties resolve to the lowest index.
inline AnchorMatch match_anchors(const AnchorGrid& grid, const Scene& scene,
                                 double pos_thresh, double neg_thresh) {
  if (!(0.0 <= neg_thresh && neg_thresh < pos_thresh && pos_thresh <= 1.0))
    throw std::invalid_argument("need 0 <= neg_thresh < pos_thresh <= 1");
  const std::size_t A = grid.anchors.size();
  const std::size_t G = scene.annotations.size();
  AnchorMatch out;
  out.match.assign(A, AnchorMatch::kNegative);
  out.max_iou.assign(A, 0.0);
  out.delta.assign(A, BoxDelta{});
  if (G == 0) return out;

  std::vector<int> argmax(A, -1);
  std::vector<double> gt_best(G, 0.0);
  std::vector<int> gt_best_anchor(G, -1);
  for (std::size_t a = 0; a < A; ++a) {
    for (std::size_t g = 0; g < G; ++g) {
      double v = iou(grid.anchors[a], scene.annotations[g].box);
      if (v > out.max_iou[a]) {
        out.max_iou[a] = v;
        argmax[a] = static_cast<int>(g);
      }
      if (v > gt_best[g]) {
        gt_best[g] = v;
        gt_best_anchor[g] = static_cast<int>(a);
      }
    }
  }
  for (std::size_t a = 0; a < A; ++a) {
    if (out.max_iou[a] >= pos_thresh)
      out.match[a] = argmax[a];
    else if (out.max_iou[a] < neg_thresh)
      out.match[a] = AnchorMatch::kNegative;
    else
      out.match[a] = AnchorMatch::kIgnore;
  }
  for (std::size_t g = 0; g < G; ++g) {
    if (gt_best[g] > 0.0) {
      int a = gt_best_anchor[g];
      if (out.match[a] < 0) out.match[a] = argmax[a];
    }
  }
  for (std::size_t a = 0; a < A; ++a)
    if (out.match[a] >= 0)
      out.delta[a] = encode_delta(grid.anchors[a], scene.annotations[out.match[a]].box);
  return out;
}

struct RpnHead {
  std::vector<double> w_obj;
  double b_obj = 0.0;
  std::array<std::vector<double>, 4> w_reg;
  std::array<double, 4> b_reg{};
  double alpha_rpn = 0.5;
  double pos_thresh = 0.5;
  double neg_thresh = 0.3;

  int dim() const { return static_cast<int>(w_obj.size()); }

  static RpnHead zeros(int dim) {
    RpnHead h;
    h.w_obj.assign(dim, 0.0);
    for (auto& row : h.w_reg) row.assign(dim, 0.0);
    return h;
  }
};

namespace detail {

inline double dot(const std::vector<double>& w, const std::vector<double>& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
  return s;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// log(1 + e^z) without overflow.
inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double smooth_l1(double e) {
  double a = std::abs(e);
  return a < 1.0 ? 0.5 * e * e : a - 0.5;
}

inline double smooth_l1_grad(double e) {
  return std::abs(e) < 1.0 ? e : (e > 0.0 ? 1.0 : -1.0);
}

}  // namespace detail

struct RpnForward {
  std::vector<double> objectness;
  std::vector<BoxDelta> deltas;
};

inline RpnForward rpn_forward(const RpnHead& head, const std::vector<std::vector<double>>& features) {
  RpnForward out;
  out.objectness.reserve(features.size());
  out.deltas.reserve(features.size());
  for (const auto& x : features) {
    if (static_cast<int>(x.size()) != head.dim())
      throw std::invalid_argument("feature width does not match rpn head");
    out.objectness.push_back(detail::sigmoid(detail::dot(head.w_obj, x) + head.b_obj));
    BoxDelta d;
    d.dx = detail::dot(head.w_reg[0], x) + head.b_reg[0];
    d.dy = detail::dot(head.w_reg[1], x) + head.b_reg[1];
    d.dw = detail::dot(head.w_reg[2], x) + head.b_reg[2];
    d.dh = detail::dot(head.w_reg[3], x) + head.b_reg[3];
    out.deltas.push_back(d);
  }
  return out;
}

struct RpnBatch {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;  // 1 positive, 0 negative
  std::vector<BoxDelta> targets;  // aligned with features; read for positives
};

struct RpnStepResult {
  RpnHead head;
  double loss = 0.0;      // gamma-scaled total
  double cls_loss = 0.0;  // unscaled
  double reg_loss = 0.0;  // unscaled
};

/// One SGD step on binary cross-entropy objectness plus smooth-L1 box
/// regression (positives only), the whole gradient scaled by gamma. The
/// update uses a single precomputed lr*gamma factor, so (lr, gamma) and
/// (lr*gamma, 1) produce bit-identical parameters, and gamma = 0 leaves the
/// head untouched. weight_decay adds an L2 pull on the weight matrices
/// (never the biases) inside the same factor; without it the objectness
/// logits saturate and later fine-tuning cannot move the head. The reported
/// loss stays the data term only.
inline RpnStepResult rpn_step(const RpnHead& head, const RpnBatch& batch, double lr,
                              double gamma, double weight_decay = 0.0) {
  RpnStepResult res;
  res.head = head;
  const std::size_t n = batch.features.size();
  if (n == 0) return res;
  if (batch.labels.size() != n || batch.targets.size() != n)
    throw std::invalid_argument("rpn batch arrays must align");

  const int dim = head.dim();
  std::vector<double> gw_obj(dim, 0.0);
  double gb_obj = 0.0;
  std::array<std::vector<double>, 4> gw_reg;
  for (auto& row : gw_reg) row.assign(dim, 0.0);
  std::array<double, 4> gb_reg{};

  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (batch.labels[i] == 1) ++positives;
  const double cls_norm = 1.0 / static_cast<double>(n);
  const double reg_norm = positives > 0 ? 1.0 / static_cast<double>(positives) : 0.0;

  double cls = 0.0, reg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = batch.features[i];
    if (static_cast<int>(x.size()) != dim)
      throw std::invalid_argument("feature width does not match rpn head");
    double z = detail::dot(head.w_obj, x) + head.b_obj;
    double y = batch.labels[i] == 1 ? 1.0 : 0.0;
    cls += (detail::softplus(z) - y * z) * cls_norm;
    double dz = (detail::sigmoid(z) - y) * cls_norm;
    for (int j = 0; j < dim; ++j) gw_obj[j] += dz * x[j];
    gb_obj += dz;

    if (batch.labels[i] == 1) {
      const double target[4] = {batch.targets[i].dx, batch.targets[i].dy,
                                batch.targets[i].dw, batch.targets[i].dh};
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
  res.loss = gamma * (cls + reg);

  const double scale = lr * gamma;
  if (scale != 0.0) {
    for (int j = 0; j < dim; ++j)
      res.head.w_obj[j] -= scale * (gw_obj[j] + weight_decay * head.w_obj[j]);
    res.head.b_obj -= scale * gb_obj;
    for (int d = 0; d < 4; ++d) {
      for (int j = 0; j < dim; ++j)
        res.head.w_reg[d][j] -= scale * (gw_reg[d][j] + weight_decay * head.w_reg[d][j]);
      res.head.b_reg[d] -= scale * gb_reg[d];
    }
  }
  return res;
}

/// Samples up to batch_size anchors at a strict 1:1 positive:negative ratio;
/// scarce positives shrink the batch rather than being padded out with
/// negatives, so sparse scenes cannot drown their positives. Returns anchor
/// indices, positives first.
inline std::vector<int> sample_rpn_batch(const AnchorMatch& m, int batch_size, Rng& rng) {
  std::vector<int> pos, neg;
  for (std::size_t a = 0; a < m.size(); ++a) {
    if (m.match[a] >= 0)
      pos.push_back(static_cast<int>(a));
    else if (m.match[a] == AnchorMatch::kNegative)
      neg.push_back(static_cast<int>(a));
  }
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::size_t want_pos = std::min(pos.size(), static_cast<std::size_t>(batch_size / 2));
  std::size_t want_neg = std::min(neg.size(), want_pos);
  std::vector<int> out(pos.begin(), pos.begin() + want_pos);
  out.insert(out.end(), neg.begin(), neg.begin() + want_neg);
  return out;
}

/// Greedy non-maximum suppression: repeatedly keep the highest-scored box
/// and drop every box whose IoU with it exceeds thresh. Score ties resolve
/// to the lower index. Returns kept indices in keep order.
inline std::vector<int> nms(const std::vector<BBox>& boxes, const std::vector<double>& scores,
                            double thresh) {
  if (boxes.size() != scores.size())
    throw std::invalid_argument("nms needs one score per box");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<char> suppressed(boxes.size(), 0);
  std::vector<int> keep;
  for (std::size_t i = 0; i < order.size(); ++i) {
    int a = order[i];
    if (suppressed[a]) continue;
    keep.push_back(a);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      int b = order[j];
      if (!suppressed[b] && iou(boxes[a], boxes[b]) > thresh) suppressed[b] = 1;
    }
  }
  return keep;
}

struct Proposal {
  BBox box;
  double objectness = 0.0;
  double max_gt_iou = 0.0;
  int matched_gt = -1;
  int source_stage = 0;
};

/// Fills max_gt_iou (and matched_gt when the best IoU clears alpha) against
/// the scene's annotations.
inline void annotate_proposal(Proposal& p, const Scene& scene, double alpha) {
  p.max_gt_iou = 0.0;
  p.matched_gt = -1;
  int best = -1;
  for (std::size_t g = 0; g < scene.annotations.size(); ++g) {
    double v = iou(p.box, scene.annotations[g].box);
    if (v > p.max_gt_iou) {
      p.max_gt_iou = v;
      best = static_cast<int>(g);
    }
  }
  if (best >= 0 && p.max_gt_iou >= alpha) p.matched_gt = best;
}

/// RPN inference: score and regress every anchor, clip, keep pre_nms_topk by
/// objectness, suppress, then keep post_nms_count boxes (twice that when
/// doubled, the fine-tuning RoI budget).
inline std::vector<Proposal> generate_proposals(const RpnHead& head, const AnchorGrid& grid,
                                                const std::vector<std::vector<double>>& features,
                                                const Scene& scene, double nms_thresh,
                                                int pre_nms_topk, int post_nms_count,
                                                bool doubled) {
  if (pre_nms_topk < 1 || post_nms_count < 1)
    throw std::invalid_argument("proposal counts must be at least 1");
  if (features.size() != grid.anchors.size())
    throw std::invalid_argument("need one feature row per anchor");
  RpnForward fwd = rpn_forward(head, features);

  std::vector<BBox> boxes;
  std::vector<double> scores;
  boxes.reserve(grid.anchors.size());
  scores.reserve(grid.anchors.size());
  for (std::size_t a = 0; a < grid.anchors.size(); ++a) {
    BBox b = clip(decode_delta(grid.anchors[a], fwd.deltas[a]), scene.width, scene.height);
    if (b.width() < 1e-3 || b.height() < 1e-3) continue;
    boxes.push_back(b);
    scores.push_back(fwd.objectness[a]);
  }

  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  if (static_cast<int>(order.size()) > pre_nms_topk) order.resize(pre_nms_topk);

  std::vector<BBox> top_boxes;
  std::vector<double> top_scores;
  for (int idx : order) {
    top_boxes.push_back(boxes[idx]);
    top_scores.push_back(scores[idx]);
  }
  std::vector<int> kept = nms(top_boxes, top_scores, nms_thresh);
  std::size_t budget = static_cast<std::size_t>(post_nms_count) * (doubled ? 2 : 1);
  if (kept.size() > budget) kept.resize(budget);

  std::vector<Proposal> out;
  out.reserve(kept.size());
  for (int idx : kept) {
    Proposal p;
    p.box = top_boxes[idx];
    p.objectness = top_scores[idx];
    p.source_stage = 0;
    annotate_proposal(p, scene, head.alpha_rpn);
    out.push_back(p);
  }
  return out;
}

}  // namespace prlab
