#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "prlab/cascade.hpp"
#include "prlab/eval.hpp"
#include "prlab/proposals.hpp"
#include "prlab/synth.hpp"
#include "prlab/threading.hpp"

namespace prlab {

enum class DetPhase { init, base, novel };

struct DetectorConfig {
  double anchor_stride = 16.0;
  std::vector<double> anchor_scales{16.0, 32.0, 48.0};
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  double rpn_nms_thresh = 0.7;
  int pre_nms_topk = 256;
  int post_nms_count = 100;
  std::vector<StageConfig> stages{{0.5, 1.0}, {0.6, 0.5}, {0.7, 0.25}};

  void validate() const {
    if (anchor_stride <= 0) throw std::invalid_argument("anchor stride must be positive");
    if (anchor_scales.empty() || anchor_ratios.empty())
      throw std::invalid_argument("need at least one anchor scale and ratio");
    if (rpn_nms_thresh <= 0 || rpn_nms_thresh >= 1)
      throw std::invalid_argument("rpn nms threshold must be in (0,1)");
    if (pre_nms_topk < 1 || post_nms_count < 1)
      throw std::invalid_argument("proposal counts must be at least 1");
    if (stages.empty()) throw std::invalid_argument("need at least one stage");
  }
};

struct TrainConfig {
  int base_iterations = 2000;
  int finetune_iterations = 800;
  double base_lr = 0.05;
  double finetune_lr = 0.02;
  int rpn_batch = 64;  // sampled 1:1 positive:negative
  int roi_batch = 48;  // per-scene stage batch, sampled with a foreground quota
  double roi_fg_fraction = 0.5;
  double rpn_weight_decay = 0.01;  // keeps objectness logits off the BCE plateau
  double gamma_rpn = 0.5;
  bool rpn_frozen = false;
  bool heads_trainable = true;
  bool doubled_rois_base = false;
  bool doubled_rois_finetune = true;
  std::uint64_t seed = 7;

  void validate() const {
    if (base_iterations < 0 || finetune_iterations < 0)
      throw std::invalid_argument("iteration counts must be non-negative");
    if (base_lr < 0 || finetune_lr < 0)
      throw std::invalid_argument("learning rates must be non-negative");
    if (rpn_batch < 2) throw std::invalid_argument("rpn batch must be at least 2");
    if (roi_batch < 4) throw std::invalid_argument("roi batch must be at least 4");
    if (!(roi_fg_fraction > 0.0 && roi_fg_fraction < 1.0))
      throw std::invalid_argument("roi_fg_fraction must lie in (0,1)");
    if (gamma_rpn < 0) throw std::invalid_argument("gamma_rpn must be non-negative");
  }
};

struct Detector {
  FeatureModel model;  // frozen ground-truth feature generator
  ClassSplit split;
  AnchorGrid grid;
  RpnHead rpn;
  Cascade cascade;
  DetPhase phase = DetPhase::init;

  int feature_width() const { return model.dim + 4; }
};

inline Detector make_detector(const SynthConfig& scfg, const DetectorConfig& dcfg) {
  dcfg.validate();
  Detector det;
  det.split = make_class_split(scfg);
  det.model = make_feature_model(scfg, det.split);
  det.grid = build_anchor_grid(scfg.scene_width, scfg.scene_height, dcfg.anchor_stride,
                               dcfg.anchor_scales, dcfg.anchor_ratios);
  det.rpn = RpnHead::zeros(det.model.dim + 4);
  det.cascade = make_cascade(det.model.dim + 4, det.split.base_classes, dcfg.stages);
  return det;
}

struct IterLoss {
  double gamma = 1.0;
  double rpn_cls = 0.0;  // unscaled components
  double rpn_reg = 0.0;
  std::vector<double> lambda;
  std::vector<double> stage_cls;
  std::vector<double> stage_reg;
  double total = 0.0;  // as accumulated by the trainer
};

/// Recomputes the composed objective from the logged unscaled components:
/// gamma * rpn + sum_t lambda_t * stage_t.
inline double recompute_total(const IterLoss& l) {
  double total = l.gamma * (l.rpn_cls + l.rpn_reg);
  for (std::size_t t = 0; t < l.lambda.size(); ++t)
    total += l.lambda[t] * (l.stage_cls[t] + l.stage_reg[t]);
  return total;
}

inline std::string loss_trace_csv(const std::vector<IterLoss>& trace) {
  std::string out = "iter,total,gamma,rpn_cls,rpn_reg";
  std::size_t stages = trace.empty() ? 0 : trace.front().lambda.size();
  for (std::size_t t = 0; t < stages; ++t) {
    out += ",stage" + std::to_string(t + 1) + "_cls";
    out += ",stage" + std::to_string(t + 1) + "_reg";
  }
  out += "\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const IterLoss& l = trace[i];
    out += std::to_string(i);
    auto col = [&](double v) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      out += buf;
    };
    col(l.total);
    col(l.gamma);
    col(l.rpn_cls);
    col(l.rpn_reg);
    for (std::size_t t = 0; t < l.lambda.size(); ++t) {
      col(l.stage_cls[t]);
      col(l.stage_reg[t]);
    }
    out += "\n";
  }
  return out;
}

struct TrainResult {
  Detector detector;
  std::vector<IterLoss> trace;
};

namespace detail {

inline constexpr std::uint64_t kTagBaseTrain = 0xB1;
inline constexpr std::uint64_t kTagFinetune = 0xB2;
inline constexpr std::uint64_t kTagEval = 0xB3;
inline constexpr std::uint64_t kTagAblation = 0xB4;
inline constexpr std::uint64_t kTagSimulate = 0xB5;

inline void append_rpn_batch(const Detector& det, const Scene& scene, int batch_size,
                             const Rng& slot, RpnBatch& out) {
  AnchorMatch m = match_anchors(det.grid, scene, det.rpn.pos_thresh, det.rpn.neg_thresh);
  Rng pick = slot.derive(0);
  std::vector<int> idx = sample_rpn_batch(m, batch_size, pick);
  std::vector<BBox> boxes;
  boxes.reserve(idx.size());
  for (int a : idx) boxes.push_back(det.grid.anchors[a]);
  auto feats = extract_features(det.model, scene, boxes, slot.derive(1));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.features.push_back(std::move(feats[k]));
    bool positive = m.match[idx[k]] >= 0;
    out.labels.push_back(positive ? 1 : 0);
    out.targets.push_back(positive ? m.delta[idx[k]] : BoxDelta{});
  }
}

/// One SGD iteration over one (base) or two (balanced fine-tune) scenes:
/// RPN batch step, then per stage label assignment, head step, and proposal
/// refinement through the updated head.
inline IterLoss train_iteration(Detector& det, const std::vector<const Scene*>& scenes,
                                double lr, double gamma, bool rpn_trainable,
                                bool heads_trainable, bool doubled, const TrainConfig& tcfg,
                                const DetectorConfig& dcfg, const Rng& it) {
  IterLoss loss;
  loss.gamma = gamma;

  RpnBatch batch;
  const int per_scene = tcfg.rpn_batch / static_cast<int>(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s)
    append_rpn_batch(det, *scenes[s], per_scene, it.derive(10, s), batch);
  RpnStepResult rpn_res =
      rpn_step(det.rpn, batch, rpn_trainable ? lr : 0.0, gamma, tcfg.rpn_weight_decay);
  det.rpn = rpn_res.head;
  loss.rpn_cls = rpn_res.cls_loss;
  loss.rpn_reg = rpn_res.reg_loss;
  loss.total = rpn_res.loss;

  std::vector<std::vector<Proposal>> props(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    auto anchor_feats =
        extract_features(det.model, *scenes[s], det.grid.anchors, it.derive(20, s));
    props[s] = generate_proposals(det.rpn, det.grid, anchor_feats, *scenes[s],
                                  dcfg.rpn_nms_thresh, dcfg.pre_nms_topk,
                                  dcfg.post_nms_count, doubled);
  }

  for (std::size_t t = 0; t < det.cascade.stages.size(); ++t) {
    Stage& stage = det.cascade.stages[t];
    StageLabels all;
    std::vector<std::vector<double>> all_feats;
    std::vector<std::vector<std::vector<double>>> scene_feats(scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      StageLabels lab = assign_stage_labels(props[s], *scenes[s], stage.cfg.alpha);
      std::vector<BBox> boxes;
      boxes.reserve(props[s].size());
      for (const auto& p : props[s]) boxes.push_back(p.box);
      scene_feats[s] = extract_features(det.model, *scenes[s], boxes, it.derive(30 + t, s));
      Rng pick = it.derive(40 + t, s);
      for (int i : sample_stage_rois(lab, tcfg.roi_batch, tcfg.roi_fg_fraction, pick)) {
        all.class_id.push_back(lab.class_id[i]);
        all.gt_index.push_back(lab.gt_index[i]);
        all.delta.push_back(lab.delta[i]);
        all_feats.push_back(scene_feats[s][i]);
      }
    }
    StageStepResult res =
        stage_step(stage.head, stage.cfg, all_feats, all, heads_trainable ? lr : 0.0);
    stage.head = res.head;
    loss.lambda.push_back(stage.cfg.lambda);
    loss.stage_cls.push_back(res.cls_loss);
    loss.stage_reg.push_back(res.reg_loss);
    loss.total += res.loss;

    if (t + 1 < det.cascade.stages.size())
      for (std::size_t s = 0; s < scenes.size(); ++s)
        props[s] = detail::apply_stage(stage.head, stage.cfg, props[s], scene_feats[s],
                                       *scenes[s])
                       .refined;
  }
  return loss;
}

}  // namespace detail

/// Base training: the full pipeline (RPN at gamma = 1 plus every stage head)
/// trained on base-class scenes.
inline TrainResult base_train(const Detector& init, const std::vector<Scene>& dataset,
                              const TrainConfig& cfg, const DetectorConfig& dcfg) {
  cfg.validate();
  dcfg.validate();
  if (init.phase != DetPhase::init)
    throw std::logic_error("base_train requires an init-phase detector");
  if (dataset.empty()) throw std::invalid_argument("base training needs at least one scene");
  for (const Scene& s : dataset)
    for (const Annotation& a : s.annotations)
      if (!init.split.is_base(a.class_id))
        throw std::invalid_argument("base training dataset contains novel-class annotations");

  TrainResult out{init, {}};
  Rng master(cfg.seed);
  for (int iter = 0; iter < cfg.base_iterations; ++iter) {
    Rng it = master.derive(detail::kTagBaseTrain, static_cast<std::uint64_t>(iter));
    Rng pick = it.derive(0);
    const Scene& scene = dataset[pick.uniform_index(dataset.size())];
    out.trace.push_back(detail::train_iteration(out.detector, {&scene}, cfg.base_lr, 1.0,
                                                true, true, cfg.doubled_rois_base, cfg, dcfg,
                                                it));
  }
  out.detector.phase = DetPhase::base;
  return out;
}

/// Novel fine-tuning: widens every stage classifier with zero-initialized
/// novel rows, then trains on batches drawn half from base-class shots and
/// half from novel-class shots, with the RPN loss scaled by gamma_rpn and
/// the proposal budget doubled when configured.
inline TrainResult novel_finetune(const Detector& base_det,
                                  const std::vector<Scene>& k_shot_set,
                                  const TrainConfig& cfg, const DetectorConfig& dcfg) {
  cfg.validate();
  dcfg.validate();
  if (base_det.phase != DetPhase::base)
    throw std::logic_error("novel_finetune requires a base-phase detector");

  std::vector<const Scene*> base_pool, novel_pool;
  for (const Scene& s : k_shot_set) {
    if (s.annotations.empty())
      throw std::invalid_argument("k-shot scene without annotations: " + s.id);
    if (base_det.split.is_novel(s.annotations.front().class_id))
      novel_pool.push_back(&s);
    else
      base_pool.push_back(&s);
  }
  if (base_pool.empty() || novel_pool.empty())
    throw std::invalid_argument("k-shot set must cover both base and novel classes");

  TrainResult out{base_det, {}};
  for (auto& stage : out.detector.cascade.stages)
    widen_stage(stage.head, base_det.split.novel_classes);
  out.detector.phase = DetPhase::novel;

  Rng master(cfg.seed);
  for (int iter = 0; iter < cfg.finetune_iterations; ++iter) {
    Rng it = master.derive(detail::kTagFinetune, static_cast<std::uint64_t>(iter));
    Rng pick = it.derive(0);
    const Scene* sb = base_pool[pick.uniform_index(base_pool.size())];
    const Scene* sn = novel_pool[pick.uniform_index(novel_pool.size())];
    out.trace.push_back(detail::train_iteration(
        out.detector, {sb, sn}, cfg.finetune_lr, cfg.gamma_rpn, !cfg.rpn_frozen,
        cfg.heads_trainable, cfg.doubled_rois_finetune, cfg, dcfg, it));
  }
  return out;
}

struct SceneDetections {
  std::vector<Proposal> proposals;  // RPN output at the evaluation budget
  CascadeResult cascade;
};

inline SceneDetections detect_scene(const Detector& det, const Scene& scene,
                                    const DetectorConfig& dcfg, const Rng& rng) {
  auto anchor_feats = extract_features(det.model, scene, det.grid.anchors, rng.derive(0));
  SceneDetections out;
  out.proposals =
      generate_proposals(det.rpn, det.grid, anchor_feats, scene, dcfg.rpn_nms_thresh,
                         dcfg.pre_nms_topk, dcfg.post_nms_count, false);
  StageFeatureFn fn = [&](int stage, const std::vector<BBox>& boxes) {
    return extract_features(det.model, scene, boxes, rng.derive(1 + stage));
  };
  out.cascade = run_cascade(det.cascade, out.proposals, fn, scene);
  return out;
}

struct DetectorEval {
  std::vector<Detection> detections;
  std::vector<std::vector<Proposal>> proposals;  // aligned with the scenes
  StageHistogram hist;  // rows: each stage input, then the final output
  EvalReport report;
};

inline DetectorEval evaluate_detector(const Detector& det, const std::vector<Scene>& scenes,
                                      const DetectorConfig& dcfg, const EvalOptions& opts,
                                      std::uint64_t seed, int hist_bins = 20) {
  dcfg.validate();
  std::vector<SceneDetections> per(scenes.size());
  Rng master(seed);
  parallel_for(scenes.size(), [&](std::size_t i) {
    per[i] = detect_scene(det, scenes[i], dcfg, master.derive(detail::kTagEval, i));
  });

  DetectorEval out;
  const std::size_t T = det.cascade.stages.size();
  std::vector<std::vector<Proposal>> pooled(T + 1);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (std::size_t t = 0; t < T; ++t)
      pooled[t].insert(pooled[t].end(), per[i].cascade.stage_inputs[t].begin(),
                       per[i].cascade.stage_inputs[t].end());
    pooled[T].insert(pooled[T].end(), per[i].cascade.final_proposals.begin(),
                     per[i].cascade.final_proposals.end());
    for (const auto& d : per[i].cascade.detections)
      out.detections.push_back(Detection{scenes[i].id, d.class_id, d.box, d.score});
    out.proposals.push_back(std::move(per[i].proposals));
  }
  out.hist = stage_iou_histogram(pooled, hist_bins);
  out.report = evaluate(scenes, out.detections, out.proposals, opts);
  return out;
}

/// Max-GT IoU of every RPN proposal over a scene set, for imbalance analysis.
inline std::vector<double> proposal_iou_population(const Detector& det,
                                                   const std::vector<Scene>& scenes,
                                                   const DetectorConfig& dcfg,
                                                   std::uint64_t seed) {
  std::vector<std::vector<double>> per(scenes.size());
  Rng master(seed);
  parallel_for(scenes.size(), [&](std::size_t i) {
    Rng rng = master.derive(detail::kTagEval, i);
    auto anchor_feats = extract_features(det.model, scenes[i], det.grid.anchors, rng.derive(0));
    auto props = generate_proposals(det.rpn, det.grid, anchor_feats, scenes[i],
                                    dcfg.rpn_nms_thresh, dcfg.pre_nms_topk,
                                    dcfg.post_nms_count, false);
    for (const auto& p : props) per[i].push_back(p.max_gt_iou);
  });
  std::vector<double> out;
  for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
  return out;
}

inline ImbalanceReport detector_imbalance(const Detector& det,
                                          const std::vector<Scene>& base_scenes,
                                          const std::vector<Scene>& novel_scenes,
                                          const DetectorConfig& dcfg, std::uint64_t seed,
                                          int bins = 6) {
  auto base = proposal_iou_population(det, base_scenes, dcfg, seed);
  auto novel = proposal_iou_population(det, novel_scenes, dcfg, seed + 1);
  return imbalance_report(base, base_scenes.size(), novel, novel_scenes.size(), bins);
}

struct CellMetrics {
  double novel_ap50 = 0.0;
  double base_ap50 = 0.0;
  double novel_ap_range = 0.0;
  double recall100 = 0.0;
};

/// Scores a detector on disjoint base-only and novel-only scene sets: class
/// AP50 per split, the multi-threshold AP and proposal recall on the novel
/// split.
inline CellMetrics eval_cell(const Detector& det, const std::vector<Scene>& base_eval,
                             const std::vector<Scene>& novel_eval,
                             const DetectorConfig& dcfg, std::uint64_t seed) {
  EvalOptions base_opts;
  base_opts.with_range = false;
  EvalOptions novel_opts;
  novel_opts.recall_k = 100;
  novel_opts.recall_iou = 0.75;  // proposal-quality regime; 0.5 saturates on synthetic scenes
  auto be = evaluate_detector(det, base_eval, dcfg, base_opts, seed);
  auto ne = evaluate_detector(det, novel_eval, dcfg, novel_opts, seed + 1);
  CellMetrics m;
  m.base_ap50 = be.report.mean_ap;
  m.novel_ap50 = ne.report.mean_ap;
  m.novel_ap_range = ne.report.range_mean;
  m.recall100 = ne.report.recall;
  return m;
}

struct AblationSetup {
  SynthConfig synth;
  DetectorConfig detector;
  TrainConfig train;
  int base_scenes = 60;
  int pool_scenes = 150;
  int eval_scenes = 30;  // per split
  std::vector<double> gammas{0.0, 0.5};
  std::vector<bool> refinements{true, false};  // false = single stage, alpha .5, lambda 1
  std::vector<int> shots{5};
  int num_seeds = 3;
};

struct AblationCell {
  double gamma = 0.0;
  bool refinement = true;
  int k = 0;
  std::uint64_t seed = 0;
  CellMetrics metrics;
};

struct AblationAggregate {
  double gamma = 0.0;
  bool refinement = true;
  int k = 0;
  int n = 0;
  CellMetrics mean;
  CellMetrics stddev;  // population
};

struct AblationTable {
  std::vector<AblationCell> cells;
  std::vector<AblationAggregate> aggregates;
};

namespace detail {

struct SeedBlock {
  std::vector<Scene> base_eval, novel_eval;
  std::map<int, std::vector<Scene>> kshots;
  std::map<bool, Detector> base_dets;  // per refinement setting
};

inline DetectorConfig single_stage(DetectorConfig dcfg) {
  dcfg.stages = {StageConfig{0.5, 1.0}};
  return dcfg;
}

}  // namespace detail

/// Full ablation grid. Each seed gets its own synthetic world; within a seed
/// the datasets, shot sets, and fine-tune RNG are shared across gamma cells
/// so paired runs differ only in gamma, and across the refinement axis only
/// through the cascade depth (a single-stage detector is trained separately:
/// "refinement off" is its own base model, not a truncated cascade).
inline AblationTable run_ablation(const AblationSetup& setup) {
  setup.train.validate();
  setup.detector.validate();
  if (setup.num_seeds < 1) throw std::invalid_argument("need at least one seed");
  if (setup.gammas.empty() || setup.refinements.empty() || setup.shots.empty())
    throw std::invalid_argument("ablation grid must be non-empty");

  const std::size_t n_seeds = static_cast<std::size_t>(setup.num_seeds);
  std::vector<std::vector<AblationCell>> per_seed(n_seeds);

  parallel_for(n_seeds, [&](std::size_t si) {
    Rng seed_rng = Rng(setup.train.seed).derive(detail::kTagAblation, si);
    auto role_seed = [&](std::uint64_t role) {
      Rng r = seed_rng.derive(role);
      return r.next_u64();
    };

    SynthConfig world = setup.synth;
    world.seed = role_seed(0);
    ClassSplit split = make_class_split(world);

    auto scenes_for = [&](std::uint64_t role, int n, Phase phase) {
      SynthConfig c = world;
      c.seed = role_seed(role);
      return generate_dataset(c, split, n, phase);
    };
    std::vector<Scene> base_data = scenes_for(1, setup.base_scenes, Phase::base);
    std::vector<Scene> pool = scenes_for(2, setup.pool_scenes, Phase::balanced);
    std::vector<Scene> base_eval = scenes_for(3, setup.eval_scenes, Phase::base);
    std::vector<Scene> novel_eval = scenes_for(4, setup.eval_scenes, Phase::novel);

    std::map<int, std::vector<Scene>> kshots;
    for (int k : setup.shots) kshots[k] = sample_k_shot(pool, split, k, role_seed(5));

    std::map<bool, Detector> base_dets;
    for (bool ref : setup.refinements) {
      if (base_dets.count(ref)) continue;
      DetectorConfig dcfg = ref ? setup.detector : detail::single_stage(setup.detector);
      TrainConfig tcfg = setup.train;
      tcfg.seed = role_seed(6);
      base_dets.emplace(ref, base_train(make_detector(world, dcfg), base_data, tcfg, dcfg).detector);
    }

    for (bool ref : setup.refinements) {
      DetectorConfig dcfg = ref ? setup.detector : detail::single_stage(setup.detector);
      for (int k : setup.shots) {
        for (double gamma : setup.gammas) {
          TrainConfig tcfg = setup.train;
          tcfg.gamma_rpn = gamma;
          // same fine-tune stream for every gamma: paired comparison
          tcfg.seed = role_seed(7 + static_cast<std::uint64_t>(k));
          Detector ft =
              novel_finetune(base_dets.at(ref), kshots.at(k), tcfg, dcfg).detector;
          AblationCell cell;
          cell.gamma = gamma;
          cell.refinement = ref;
          cell.k = k;
          cell.seed = si;
          cell.metrics = eval_cell(ft, base_eval, novel_eval, dcfg, role_seed(100 + k));
          per_seed[si].push_back(cell);
        }
      }
    }
  });

  AblationTable table;
  for (bool ref : setup.refinements)
    for (int k : setup.shots)
      for (double gamma : setup.gammas)
        for (std::size_t si = 0; si < n_seeds; ++si)
          for (const auto& cell : per_seed[si])
            if (cell.refinement == ref && cell.k == k && cell.gamma == gamma)
              table.cells.push_back(cell);

  for (bool ref : setup.refinements) {
    for (int k : setup.shots) {
      for (double gamma : setup.gammas) {
        std::vector<const CellMetrics*> group;
        for (const auto& c : table.cells)
          if (c.refinement == ref && c.k == k && c.gamma == gamma) group.push_back(&c.metrics);
        AblationAggregate agg;
        agg.gamma = gamma;
        agg.refinement = ref;
        agg.k = k;
        agg.n = static_cast<int>(group.size());
        auto stat = [&](double CellMetrics::* field, double& mean, double& sd) {
          double sum = 0.0;
          for (auto* m : group) sum += m->*field;
          mean = sum / static_cast<double>(group.size());
          double var = 0.0;
          for (auto* m : group) var += (m->*field - mean) * (m->*field - mean);
          sd = std::sqrt(var / static_cast<double>(group.size()));
        };
        stat(&CellMetrics::novel_ap50, agg.mean.novel_ap50, agg.stddev.novel_ap50);
        stat(&CellMetrics::base_ap50, agg.mean.base_ap50, agg.stddev.base_ap50);
        stat(&CellMetrics::novel_ap_range, agg.mean.novel_ap_range, agg.stddev.novel_ap_range);
        stat(&CellMetrics::recall100, agg.mean.recall100, agg.stddev.recall100);
        table.aggregates.push_back(agg);
      }
    }
  }
  return table;
}

inline std::string ablation_csv(const AblationTable& table) {
  std::string out =
      "kind,gamma,refinement,k,seed,novel_ap50,base_ap50,novel_ap_range,recall100,"
      "novel_ap50_std,base_ap50_std,novel_ap_range_std,recall100_std\n";
  char buf[320];
  for (const auto& c : table.cells) {
    std::snprintf(buf, sizeof(buf), "cell,%.9g,%d,%d,%llu,%.9g,%.9g,%.9g,%.9g,,,,\n",
                  c.gamma, c.refinement ? 1 : 0, c.k,
                  static_cast<unsigned long long>(c.seed), c.metrics.novel_ap50,
                  c.metrics.base_ap50, c.metrics.novel_ap_range, c.metrics.recall100);
    out += buf;
  }
  for (const auto& a : table.aggregates) {
    std::snprintf(buf, sizeof(buf),
                  "aggregate,%.9g,%d,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  a.gamma, a.refinement ? 1 : 0, a.k, a.n, a.mean.novel_ap50,
                  a.mean.base_ap50, a.mean.novel_ap_range, a.mean.recall100,
                  a.stddev.novel_ap50, a.stddev.base_ap50, a.stddev.novel_ap_range,
                  a.stddev.recall100);
    out += buf;
  }
  return out;
}

}  // namespace prlab
