#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "prlab/geometry.hpp"
#include "prlab/proposals.hpp"
#include "prlab/synth.hpp"

namespace prlab {

struct Detection {
  std::string scene_id;
  int class_id = 0;
  BBox box;
  double score = 0.0;
};

/// Annotations excluded from both matching and AP denominators (VOC
/// difficult objects, COCO crowds).
inline bool eval_excluded(const Annotation& a) { return a.difficult || a.ignore; }

struct MatchResult {
  std::vector<char> tp;          // per detection
  std::vector<int> matched_gt;   // per detection, -1 when unmatched
  std::vector<char> gt_matched;  // per annotation
};

/// PASCAL greedy matching within one scene: detections in descending
/// confidence (ties to the lower input index) each claim the highest-IoU
/// unmatched same-class ground truth at or above the threshold.
inline MatchResult match_detections(const std::vector<Detection>& dets, const Scene& scene,
                                    double iou_thresh) {
  MatchResult r;
  r.tp.assign(dets.size(), 0);
  r.matched_gt.assign(dets.size(), -1);
  r.gt_matched.assign(scene.annotations.size(), 0);

  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });

  for (int i : order) {
    double best = 0.0;
    int best_g = -1;
    for (std::size_t g = 0; g < scene.annotations.size(); ++g) {
      const Annotation& ann = scene.annotations[g];
      if (eval_excluded(ann) || ann.class_id != dets[i].class_id || r.gt_matched[g])
        continue;
      double v = iou(dets[i].box, ann.box);
      if (v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0 && best >= iou_thresh && best > 0.0) {
      r.tp[i] = 1;
      r.matched_gt[i] = best_g;
      r.gt_matched[best_g] = 1;
    }
  }
  return r;
}

namespace detail {

inline std::map<std::string, std::size_t> scene_index(const std::vector<Scene>& scenes) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (!idx.emplace(scenes[i].id, i).second)
      throw std::invalid_argument("duplicate scene id: " + scenes[i].id);
  return idx;
}

}  // namespace detail

struct CorpusMatch {
  std::vector<char> tp;
  std::vector<int> matched_gt;
};

/// Matches every detection against its own scene. Detections referencing an
/// unknown scene id fail loudly.
inline CorpusMatch match_corpus(const std::vector<Detection>& dets,
                                const std::vector<Scene>& scenes, double iou_thresh) {
  auto index = detail::scene_index(scenes);
  std::map<std::size_t, std::vector<int>> by_scene;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    auto it = index.find(dets[i].scene_id);
    if (it == index.end())
      throw std::invalid_argument("detection references unknown scene id: " +
                                  dets[i].scene_id);
    by_scene[it->second].push_back(static_cast<int>(i));
  }
  CorpusMatch out;
  out.tp.assign(dets.size(), 0);
  out.matched_gt.assign(dets.size(), -1);
  for (const auto& [scene_i, det_idx] : by_scene) {
    std::vector<Detection> local;
    local.reserve(det_idx.size());
    for (int i : det_idx) local.push_back(dets[i]);
    MatchResult m = match_detections(local, scenes[scene_i], iou_thresh);
    for (std::size_t k = 0; k < det_idx.size(); ++k) {
      out.tp[det_idx[k]] = m.tp[k];
      out.matched_gt[det_idx[k]] = m.matched_gt[k];
    }
  }
  return out;
}

namespace detail {

inline std::size_t count_gt(const std::vector<Scene>& scenes, int class_id) {
  std::size_t n = 0;
  for (const auto& s : scenes)
    for (const auto& a : s.annotations)
      if (a.class_id == class_id && !eval_excluded(a)) ++n;
  return n;
}

inline double ap_from_flags(const std::vector<Detection>& dets, const CorpusMatch& cm,
                            int class_id, std::size_t num_gt, bool all_point) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].class_id == class_id) idx.push_back(static_cast<int>(i));
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });

  const std::size_t n = idx.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (cm.tp[idx[k]]) ++tp;
    recall[k] = static_cast<double>(tp) / static_cast<double>(num_gt);
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  std::vector<double> peak(n);  // max precision from position k onward
  double running = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    running = std::max(running, precision[k]);
    peak[k] = running;
  }

  if (all_point) {
    double ap = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (cm.tp[idx[k]]) ap += peak[k] / static_cast<double>(num_gt);
    return ap;
  }
  double sum = 0.0;
  for (int t = 0; t <= 10; ++t) {
    double r = static_cast<double>(t) / 10.0;
    double p = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (recall[k] >= r) {
        p = peak[k];
        break;
      }
    }
    sum += p;
  }
  return sum / 11.0;
}

}  // namespace detail

/// 11-point interpolated AP of one class over the corpus; absent when the
/// class has no countable ground truth.
inline std::optional<double> ap_11point(const std::vector<Detection>& dets,
                                        const std::vector<Scene>& scenes, int class_id,
                                        double iou_thresh, bool all_point = false) {
  std::size_t num_gt = detail::count_gt(scenes, class_id);
  if (num_gt == 0) return std::nullopt;
  CorpusMatch cm = match_corpus(dets, scenes, iou_thresh);
  return detail::ap_from_flags(dets, cm, class_id, num_gt, all_point);
}

struct ApTable {
  std::map<int, double> per_class;
  std::vector<int> absent;  // classes with detections or annotations but no countable gt
  double mean = 0.0;
};

inline ApTable average_precision_table(const std::vector<Detection>& dets,
                                       const std::vector<Scene>& scenes, double iou_thresh,
                                       bool all_point = false) {
  std::set<int> classes;
  for (const auto& s : scenes)
    for (const auto& a : s.annotations) classes.insert(a.class_id);
  for (const auto& d : dets) classes.insert(d.class_id);

  ApTable table;
  CorpusMatch cm = match_corpus(dets, scenes, iou_thresh);
  double sum = 0.0;
  for (int c : classes) {
    std::size_t num_gt = detail::count_gt(scenes, c);
    if (num_gt == 0) {
      table.absent.push_back(c);
      continue;
    }
    double ap = detail::ap_from_flags(dets, cm, c, num_gt, all_point);
    table.per_class[c] = ap;
    sum += ap;
  }
  if (!table.per_class.empty()) table.mean = sum / static_cast<double>(table.per_class.size());
  return table;
}

struct MapRange {
  std::vector<double> thresholds;
  std::vector<double> per_threshold;
  double mean = 0.0;
};

/// Class-averaged 11-point AP at IoU thresholds 0.50, 0.55, ..., 1.00, plus
/// their mean.
inline MapRange map_range(const std::vector<Detection>& dets, const std::vector<Scene>& scenes,
                          bool all_point = false) {
  MapRange out;
  double sum = 0.0;
  for (int i = 0; i <= 10; ++i) {
    double t = static_cast<double>(50 + 5 * i) / 100.0;
    double m = average_precision_table(dets, scenes, t, all_point).mean;
    out.thresholds.push_back(t);
    out.per_threshold.push_back(m);
    sum += m;
  }
  out.mean = sum / 11.0;
  return out;
}

/// Fraction of countable ground-truth boxes covered (class-agnostic IoU >=
/// thresh) by each scene's top-k proposals by objectness.
inline double recall_at_k(const std::vector<std::vector<Proposal>>& per_scene_proposals,
                          const std::vector<Scene>& scenes, double iou_thresh, int k) {
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  if (per_scene_proposals.size() != scenes.size())
    throw std::invalid_argument("need one proposal list per scene");
  std::size_t total = 0, covered = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& props = per_scene_proposals[s];
    std::vector<int> order(props.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (props[a].objectness != props[b].objectness)
        return props[a].objectness > props[b].objectness;
      return a < b;
    });
    if (static_cast<int>(order.size()) > k) order.resize(k);
    for (const auto& ann : scenes[s].annotations) {
      if (eval_excluded(ann)) continue;
      ++total;
      for (int i : order) {
        if (iou(props[i].box, ann.box) >= iou_thresh) {
          ++covered;
          break;
        }
      }
    }
  }
  if (total == 0) throw std::invalid_argument("no ground truth");
  return static_cast<double>(covered) / static_cast<double>(total);
}

struct ImbalanceReport {
  int bins = 0;  // uniform over [0.4, 1.0)
  std::vector<double> base_per_image;
  std::vector<double> novel_per_image;
  double base_share_mid = 0.0;   // share of positives in [0.4, 0.6)
  double novel_share_mid = 0.0;
  double base_high_low = 0.0;    // count [0.9, 1.0] over count [0.4, 0.5)
  double novel_high_low = 0.0;
  double novel_base_ratio_ge_05 = 0.0;  // per-image positives at IoU >= 0.5
};

namespace detail {

struct IouTally {
  std::vector<double> per_image;
  double share_mid = 0.0;
  double high_low = 0.0;
  double per_image_ge_05 = 0.0;
};

inline IouTally tally_ious(const std::vector<double>& ious, std::size_t n_scenes, int bins) {
  IouTally t;
  t.per_image.assign(bins, 0.0);
  std::size_t population = 0, mid = 0, low = 0, high = 0, ge_05 = 0;
  for (double v : ious) {
    if (v < 0.4) continue;
    ++population;
    if (v < 0.6) ++mid;
    if (v < 0.5) ++low;
    if (v >= 0.9) ++high;
    if (v >= 0.5) ++ge_05;
    int b = std::min(bins - 1, static_cast<int>((v - 0.4) / 0.6 * bins));
    t.per_image[b] += 1.0;
  }
  if (n_scenes > 0)
    for (double& c : t.per_image) c /= static_cast<double>(n_scenes);
  if (population > 0)
    t.share_mid = static_cast<double>(mid) / static_cast<double>(population);
  if (low > 0) t.high_low = static_cast<double>(high) / static_cast<double>(low);
  if (n_scenes > 0)
    t.per_image_ge_05 = static_cast<double>(ge_05) / static_cast<double>(n_scenes);
  return t;
}

}  // namespace detail

/// Compares the positive-proposal (IoU >= 0.4) populations of a base-class
/// run and a novel-class run, normalized per image.
inline ImbalanceReport imbalance_report(const std::vector<double>& base_ious,
                                        std::size_t base_scenes,
                                        const std::vector<double>& novel_ious,
                                        std::size_t novel_scenes, int bins = 6) {
  if (bins < 1) throw std::invalid_argument("imbalance report needs at least one bin");
  ImbalanceReport r;
  r.bins = bins;
  auto base = detail::tally_ious(base_ious, base_scenes, bins);
  auto novel = detail::tally_ious(novel_ious, novel_scenes, bins);
  r.base_per_image = std::move(base.per_image);
  r.novel_per_image = std::move(novel.per_image);
  r.base_share_mid = base.share_mid;
  r.novel_share_mid = novel.share_mid;
  r.base_high_low = base.high_low;
  r.novel_high_low = novel.high_low;
  if (base.per_image_ge_05 > 0.0)
    r.novel_base_ratio_ge_05 = novel.per_image_ge_05 / base.per_image_ge_05;
  return r;
}

inline std::string imbalance_csv(const ImbalanceReport& r) {
  std::string out = "split,bin_lo,bin_hi,avg_count_per_image,share_mid,high_low_ratio\n";
  char line[192];
  auto emit = [&](const char* split, const std::vector<double>& row, double share,
                  double ratio) {
    for (int b = 0; b < r.bins; ++b) {
      double lo = 0.4 + 0.6 * b / r.bins;
      double hi = 0.4 + 0.6 * (b + 1) / r.bins;
      std::snprintf(line, sizeof(line), "%s,%.6g,%.6g,%.9g,%.9g,%.9g\n", split, lo, hi,
                    row[b], share, ratio);
      out += line;
    }
  };
  emit("base", r.base_per_image, r.base_share_mid, r.base_high_low);
  emit("novel", r.novel_per_image, r.novel_share_mid, r.novel_high_low);
  return out;
}

struct TraceEntry {
  std::string scene_id;
  int class_id = 0;
  double score = 0.0;
  bool tp = false;
  int matched_gt = -1;
};

struct EvalReport {
  double iou_thresh = 0.5;
  std::map<int, double> per_class_ap;
  std::vector<int> absent_classes;
  double mean_ap = 0.0;
  bool has_range = false;
  std::vector<double> range_thresholds;
  std::vector<double> range_ap;
  double range_mean = 0.0;
  bool has_recall = false;
  int recall_k = 0;
  double recall = 0.0;
  std::vector<TraceEntry> trace;  // aligned with the input detections
};

struct EvalOptions {
  double iou_thresh = 0.5;
  bool with_range = true;
  bool all_point = false;
  int recall_k = 100;
  double recall_iou = 0.5;
};

inline EvalReport evaluate(const std::vector<Scene>& scenes, const std::vector<Detection>& dets,
                           const std::vector<std::vector<Proposal>>& per_scene_proposals,
                           const EvalOptions& opts) {
  EvalReport r;
  r.iou_thresh = opts.iou_thresh;
  ApTable table = average_precision_table(dets, scenes, opts.iou_thresh, opts.all_point);
  r.per_class_ap = std::move(table.per_class);
  r.absent_classes = std::move(table.absent);
  r.mean_ap = table.mean;

  CorpusMatch cm = match_corpus(dets, scenes, opts.iou_thresh);
  for (std::size_t i = 0; i < dets.size(); ++i)
    r.trace.push_back(TraceEntry{dets[i].scene_id, dets[i].class_id, dets[i].score,
                                 cm.tp[i] != 0, cm.matched_gt[i]});

  if (opts.with_range) {
    MapRange mr = map_range(dets, scenes, opts.all_point);
    r.has_range = true;
    r.range_thresholds = std::move(mr.thresholds);
    r.range_ap = std::move(mr.per_threshold);
    r.range_mean = mr.mean;
  }
  if (!per_scene_proposals.empty()) {
    r.has_recall = true;
    r.recall_k = opts.recall_k;
    r.recall = recall_at_k(per_scene_proposals, scenes, opts.recall_iou, opts.recall_k);
  }
  return r;
}

}  // namespace prlab
