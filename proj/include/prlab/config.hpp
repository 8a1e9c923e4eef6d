#pragma once

#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prlab/ingest.hpp"
#include "prlab/protocol.hpp"

namespace prlab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EvalSettings {
  double iou = 0.5;
  bool all_point = false;
  bool range = true;
  int recall_k = 100;
  double recall_iou = 0.5;
  int hist_bins = 20;

  void validate() const {
    if (!(iou > 0.0 && iou < 1.0)) throw std::invalid_argument("eval.iou must be in (0,1)");
    if (!(recall_iou > 0.0 && recall_iou < 1.0))
      throw std::invalid_argument("eval.recall_iou must be in (0,1)");
    if (recall_k < 1) throw std::invalid_argument("eval.recall_k must be at least 1");
    if (hist_bins < 1) throw std::invalid_argument("eval.hist_bins must be at least 1");
  }

  EvalOptions options() const {
    EvalOptions o;
    o.iou_thresh = iou;
    o.all_point = all_point;
    o.with_range = range;
    o.recall_k = recall_k;
    o.recall_iou = recall_iou;
    return o;
  }
};

struct DataSettings {
  int base_scenes = 60;
  int pool_scenes = 150;
  int eval_scenes = 30;

  void validate() const {
    if (base_scenes < 1 || pool_scenes < 1 || eval_scenes < 1)
      throw std::invalid_argument("data: scene counts must be at least 1");
  }
};

/// One experiment, fully declarative. The master seed lives in train.seed
/// and feeds every random stream; SynthConfig.seed is derived from it at run
/// time and is not part of the schema.
struct ExperimentConfig {
  SynthConfig synth;
  DetectorConfig detector;
  TrainConfig train;
  EvalSettings eval;
  DataSettings data;
  std::vector<int> shots{5};
  std::vector<double> gammas{0.0, 0.5};
  std::vector<bool> refinements{true, false};
  int num_seeds = 3;
  std::string out_dir = "out";

  void validate() const {
    synth.validate();
    detector.validate();
    train.validate();
    eval.validate();
    data.validate();
    if (shots.empty()) throw std::invalid_argument("shots must be non-empty");
    for (int k : shots)
      if (k < 1) throw std::invalid_argument("shots must be at least 1");
    if (gammas.empty()) throw std::invalid_argument("gammas must be non-empty");
    for (double g : gammas)
      if (g < 0.0) throw std::invalid_argument("gammas must be non-negative");
    if (refinements.empty()) throw std::invalid_argument("refinements must be non-empty");
    if (num_seeds < 1) throw std::invalid_argument("num_seeds must be at least 1");
    if (out_dir.empty()) throw std::invalid_argument("out must be non-empty");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::string& where,
                           std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(where + ": unknown field '" + key + "'");
  }
}

template <typename T>
void read_field(const nlohmann::json& obj, const std::string& where, const char* key,
                T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline const nlohmann::json* sub_object(const nlohmann::json& obj, const std::string& where,
                                        const char* key) {
  if (!obj.contains(key)) return nullptr;
  const nlohmann::json& s = obj.at(key);
  if (!s.is_object()) throw ConfigError(where + "." + key + ": must be an object");
  return &s;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(std::string_view bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: root must be a JSON object");

  ExperimentConfig cfg;
  detail::reject_unknown(j, "config",
                         {"seed", "out", "synth", "detector", "train", "eval", "data",
                          "shots", "gammas", "refinements", "num_seeds"});
  detail::read_field(j, "config", "seed", cfg.train.seed);
  detail::read_field(j, "config", "out", cfg.out_dir);
  detail::read_field(j, "config", "shots", cfg.shots);
  detail::read_field(j, "config", "gammas", cfg.gammas);
  detail::read_field(j, "config", "refinements", cfg.refinements);
  detail::read_field(j, "config", "num_seeds", cfg.num_seeds);

  if (const auto* s = detail::sub_object(j, "config", "synth")) {
    detail::reject_unknown(
        *s, "synth",
        {"num_base_classes", "num_novel_classes", "scene_width", "scene_height",
         "objects_per_scene_mean", "objects_per_scene_fixed", "min_object_size",
         "max_object_size", "max_gt_overlap", "feature_dim", "prototype_scale",
         "prototype_offset", "background_level", "noise_base", "noise_novel",
         "novel_shrink"});
    detail::read_field(*s, "synth", "num_base_classes", cfg.synth.num_base_classes);
    detail::read_field(*s, "synth", "num_novel_classes", cfg.synth.num_novel_classes);
    detail::read_field(*s, "synth", "scene_width", cfg.synth.scene_width);
    detail::read_field(*s, "synth", "scene_height", cfg.synth.scene_height);
    detail::read_field(*s, "synth", "objects_per_scene_mean",
                       cfg.synth.objects_per_scene_mean);
    detail::read_field(*s, "synth", "objects_per_scene_fixed",
                       cfg.synth.objects_per_scene_fixed);
    detail::read_field(*s, "synth", "min_object_size", cfg.synth.min_object_size);
    detail::read_field(*s, "synth", "max_object_size", cfg.synth.max_object_size);
    detail::read_field(*s, "synth", "max_gt_overlap", cfg.synth.max_gt_overlap);
    detail::read_field(*s, "synth", "feature_dim", cfg.synth.feature_dim);
    detail::read_field(*s, "synth", "prototype_scale", cfg.synth.prototype_scale);
    detail::read_field(*s, "synth", "prototype_offset", cfg.synth.prototype_offset);
    detail::read_field(*s, "synth", "background_level", cfg.synth.background_level);
    detail::read_field(*s, "synth", "noise_base", cfg.synth.noise_base);
    detail::read_field(*s, "synth", "noise_novel", cfg.synth.noise_novel);
    detail::read_field(*s, "synth", "novel_shrink", cfg.synth.novel_shrink);
  }

  if (const auto* d = detail::sub_object(j, "config", "detector")) {
    detail::reject_unknown(*d, "detector",
                           {"anchor_stride", "anchor_scales", "anchor_ratios",
                            "rpn_nms_thresh", "pre_nms_topk", "post_nms_count", "stages"});
    detail::read_field(*d, "detector", "anchor_stride", cfg.detector.anchor_stride);
    detail::read_field(*d, "detector", "anchor_scales", cfg.detector.anchor_scales);
    detail::read_field(*d, "detector", "anchor_ratios", cfg.detector.anchor_ratios);
    detail::read_field(*d, "detector", "rpn_nms_thresh", cfg.detector.rpn_nms_thresh);
    detail::read_field(*d, "detector", "pre_nms_topk", cfg.detector.pre_nms_topk);
    detail::read_field(*d, "detector", "post_nms_count", cfg.detector.post_nms_count);
    if (d->contains("stages")) {
      const auto& stages = d->at("stages");
      if (!stages.is_array()) throw ConfigError("detector.stages: must be an array");
      cfg.detector.stages.clear();
      for (std::size_t t = 0; t < stages.size(); ++t) {
        const std::string where = "detector.stages[" + std::to_string(t) + "]";
        if (!stages[t].is_object()) throw ConfigError(where + ": must be an object");
        detail::reject_unknown(stages[t], where, {"alpha", "lambda"});
        StageConfig sc;
        detail::read_field(stages[t], where, "alpha", sc.alpha);
        detail::read_field(stages[t], where, "lambda", sc.lambda);
        cfg.detector.stages.push_back(sc);
      }
    }
  }

  if (const auto* t = detail::sub_object(j, "config", "train")) {
    detail::reject_unknown(
        *t, "train",
        {"base_iterations", "finetune_iterations", "base_lr", "finetune_lr", "rpn_batch",
         "roi_batch", "roi_fg_fraction", "rpn_weight_decay", "gamma_rpn", "rpn_frozen",
         "heads_trainable", "doubled_rois_base", "doubled_rois_finetune"});
    detail::read_field(*t, "train", "base_iterations", cfg.train.base_iterations);
    detail::read_field(*t, "train", "finetune_iterations", cfg.train.finetune_iterations);
    detail::read_field(*t, "train", "base_lr", cfg.train.base_lr);
    detail::read_field(*t, "train", "finetune_lr", cfg.train.finetune_lr);
    detail::read_field(*t, "train", "rpn_batch", cfg.train.rpn_batch);
    detail::read_field(*t, "train", "roi_batch", cfg.train.roi_batch);
    detail::read_field(*t, "train", "roi_fg_fraction", cfg.train.roi_fg_fraction);
    detail::read_field(*t, "train", "rpn_weight_decay", cfg.train.rpn_weight_decay);
    detail::read_field(*t, "train", "gamma_rpn", cfg.train.gamma_rpn);
    detail::read_field(*t, "train", "rpn_frozen", cfg.train.rpn_frozen);
    detail::read_field(*t, "train", "heads_trainable", cfg.train.heads_trainable);
    detail::read_field(*t, "train", "doubled_rois_base", cfg.train.doubled_rois_base);
    detail::read_field(*t, "train", "doubled_rois_finetune",
                       cfg.train.doubled_rois_finetune);
  }

  if (const auto* e = detail::sub_object(j, "config", "eval")) {
    detail::reject_unknown(
        *e, "eval", {"iou", "all_point", "range", "recall_k", "recall_iou", "hist_bins"});
    detail::read_field(*e, "eval", "iou", cfg.eval.iou);
    detail::read_field(*e, "eval", "all_point", cfg.eval.all_point);
    detail::read_field(*e, "eval", "range", cfg.eval.range);
    detail::read_field(*e, "eval", "recall_k", cfg.eval.recall_k);
    detail::read_field(*e, "eval", "recall_iou", cfg.eval.recall_iou);
    detail::read_field(*e, "eval", "hist_bins", cfg.eval.hist_bins);
  }

  if (const auto* d = detail::sub_object(j, "config", "data")) {
    detail::reject_unknown(*d, "data", {"base_scenes", "pool_scenes", "eval_scenes"});
    detail::read_field(*d, "data", "base_scenes", cfg.data.base_scenes);
    detail::read_field(*d, "data", "pool_scenes", cfg.data.pool_scenes);
    detail::read_field(*d, "data", "eval_scenes", cfg.data.eval_scenes);
  }

  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

inline std::string resolved_config_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.train.seed;
  j["out"] = cfg.out_dir;
  j["shots"] = cfg.shots;
  j["gammas"] = cfg.gammas;
  j["refinements"] = cfg.refinements;
  j["num_seeds"] = cfg.num_seeds;
  j["synth"] = {{"num_base_classes", cfg.synth.num_base_classes},
                {"num_novel_classes", cfg.synth.num_novel_classes},
                {"scene_width", cfg.synth.scene_width},
                {"scene_height", cfg.synth.scene_height},
                {"objects_per_scene_mean", cfg.synth.objects_per_scene_mean},
                {"objects_per_scene_fixed", cfg.synth.objects_per_scene_fixed},
                {"min_object_size", cfg.synth.min_object_size},
                {"max_object_size", cfg.synth.max_object_size},
                {"max_gt_overlap", cfg.synth.max_gt_overlap},
                {"feature_dim", cfg.synth.feature_dim},
                {"prototype_scale", cfg.synth.prototype_scale},
                {"prototype_offset", cfg.synth.prototype_offset},
                {"background_level", cfg.synth.background_level},
                {"noise_base", cfg.synth.noise_base},
                {"noise_novel", cfg.synth.noise_novel},
                {"novel_shrink", cfg.synth.novel_shrink}};
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : cfg.detector.stages)
    stages.push_back({{"alpha", s.alpha}, {"lambda", s.lambda}});
  j["detector"] = {{"anchor_stride", cfg.detector.anchor_stride},
                   {"anchor_scales", cfg.detector.anchor_scales},
                   {"anchor_ratios", cfg.detector.anchor_ratios},
                   {"rpn_nms_thresh", cfg.detector.rpn_nms_thresh},
                   {"pre_nms_topk", cfg.detector.pre_nms_topk},
                   {"post_nms_count", cfg.detector.post_nms_count},
                   {"stages", std::move(stages)}};
  j["train"] = {{"base_iterations", cfg.train.base_iterations},
                {"finetune_iterations", cfg.train.finetune_iterations},
                {"base_lr", cfg.train.base_lr},
                {"finetune_lr", cfg.train.finetune_lr},
                {"rpn_batch", cfg.train.rpn_batch},
                {"roi_batch", cfg.train.roi_batch},
                {"roi_fg_fraction", cfg.train.roi_fg_fraction},
                {"rpn_weight_decay", cfg.train.rpn_weight_decay},
                {"gamma_rpn", cfg.train.gamma_rpn},
                {"rpn_frozen", cfg.train.rpn_frozen},
                {"heads_trainable", cfg.train.heads_trainable},
                {"doubled_rois_base", cfg.train.doubled_rois_base},
                {"doubled_rois_finetune", cfg.train.doubled_rois_finetune}};
  j["eval"] = {{"iou", cfg.eval.iou},
               {"all_point", cfg.eval.all_point},
               {"range", cfg.eval.range},
               {"recall_k", cfg.eval.recall_k},
               {"recall_iou", cfg.eval.recall_iou},
               {"hist_bins", cfg.eval.hist_bins}};
  j["data"] = {{"base_scenes", cfg.data.base_scenes},
               {"pool_scenes", cfg.data.pool_scenes},
               {"eval_scenes", cfg.data.eval_scenes}};
  return j.dump(2) + "\n";
}

inline nlohmann::json eval_report_json(const EvalReport& r, const ClassTable& classes) {
  nlohmann::json j;
  j["iou"] = r.iou_thresh;
  j["mean_ap"] = r.mean_ap;
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [c, ap] : r.per_class_ap) per[classes.name_of(c)] = ap;
  j["per_class_ap"] = std::move(per);
  nlohmann::json absent = nlohmann::json::array();
  for (int c : r.absent_classes) absent.push_back(classes.name_of(c));
  j["absent_classes"] = std::move(absent);
  if (r.has_range)
    j["range"] = {{"thresholds", r.range_thresholds},
                  {"ap", r.range_ap},
                  {"mean", r.range_mean}};
  if (r.has_recall) j["recall"] = {{"k", r.recall_k}, {"value", r.recall}};
  return j;
}

inline nlohmann::json detector_summary_json(const Detector& det, const ClassTable& classes) {
  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  nlohmann::json j;
  switch (det.phase) {
    case DetPhase::init: j["phase"] = "init"; break;
    case DetPhase::base: j["phase"] = "base"; break;
    case DetPhase::novel: j["phase"] = "novel"; break;
  }
  j["feature_width"] = det.feature_width();
  j["anchors"] = det.grid.anchors.size();
  j["rpn"] = {{"w_obj_norm", norm(det.rpn.w_obj)}, {"b_obj", det.rpn.b_obj}};
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& stage : det.cascade.stages) {
    nlohmann::json names = nlohmann::json::array();
    for (int c : stage.head.classes) names.push_back(classes.name_of(c));
    stages.push_back({{"alpha", stage.cfg.alpha},
                      {"lambda", stage.cfg.lambda},
                      {"classes", std::move(names)}});
  }
  j["stages"] = std::move(stages);
  return j;
}

inline std::string ablation_json(const AblationTable& table) {
  auto metrics = [](const CellMetrics& m) {
    return nlohmann::json{{"novel_ap50", m.novel_ap50},
                          {"base_ap50", m.base_ap50},
                          {"novel_ap_range", m.novel_ap_range},
                          {"recall100", m.recall100}};
  };
  nlohmann::json j;
  j["cells"] = nlohmann::json::array();
  for (const auto& c : table.cells)
    j["cells"].push_back({{"gamma", c.gamma},
                          {"refinement", c.refinement},
                          {"k", c.k},
                          {"seed", c.seed},
                          {"metrics", metrics(c.metrics)}});
  j["aggregates"] = nlohmann::json::array();
  for (const auto& a : table.aggregates)
    j["aggregates"].push_back({{"gamma", a.gamma},
                               {"refinement", a.refinement},
                               {"k", a.k},
                               {"n", a.n},
                               {"mean", metrics(a.mean)},
                               {"stddev", metrics(a.stddev)}});
  return j.dump(2) + "\n";
}

/// Joins per-run CSV blocks sharing one header into a single table with a
/// leading label column.
inline std::string merge_csv_blocks(
    const std::string& label_column,
    const std::vector<std::pair<std::string, std::string>>& blocks) {
  std::string out;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::istringstream in(blocks[b].second);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (header) {
        if (b == 0) out += label_column + "," + line + "\n";
        header = false;
        continue;
      }
      out += blocks[b].first + "," + line + "\n";
    }
  }
  return out;
}

}  // namespace prlab
