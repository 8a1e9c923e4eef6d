#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "prlab/geometry.hpp"
#include "prlab/rng.hpp"
#include "prlab/threading.hpp"

namespace prlab {

struct Annotation {
  int class_id = 0;
  BBox box;
  bool difficult = false;
  bool ignore = false;
};

struct Scene {
  std::string id;
  double width = 0.0;
  double height = 0.0;
  std::vector<Annotation> annotations;
};

struct ClassSplit {
  std::vector<int> base_classes;
  std::vector<int> novel_classes;

  bool is_novel(int c) const {
    return std::find(novel_classes.begin(), novel_classes.end(), c) != novel_classes.end();
  }
  bool is_base(int c) const {
    return std::find(base_classes.begin(), base_classes.end(), c) != base_classes.end();
  }
  std::vector<int> all() const {
    std::vector<int> v = base_classes;
    v.insert(v.end(), novel_classes.begin(), novel_classes.end());
    return v;
  }
  int num_classes() const {
    return static_cast<int>(base_classes.size() + novel_classes.size());
  }

  void validate() const {
    auto dup_free = [](const std::vector<int>& v) {
      std::vector<int> s = v;
      std::sort(s.begin(), s.end());
      return std::adjacent_find(s.begin(), s.end()) == s.end();
    };
    if (!dup_free(base_classes) || !dup_free(novel_classes))
      throw std::invalid_argument("class split contains duplicate ids");
    for (int c : base_classes)
      if (is_novel(c)) throw std::invalid_argument("class split not disjoint");
  }
};

enum class Phase { base, novel, balanced };

struct FeatureModel {
  int dim = 0;
  std::vector<std::vector<double>> prototypes;
  std::vector<double> background;
  std::vector<bool> novel_class;
  double noise_base = 0.05;
  double noise_novel = 0.1;
  double novel_shrink = 0.6;

  void validate() const {
    if (dim <= 0) throw std::invalid_argument("feature dim must be positive");
    if (!(noise_base > 0.0) || noise_novel < noise_base)
      throw std::invalid_argument("noise levels must satisfy noise_novel >= noise_base > 0");
    if (!(novel_shrink > 0.0) || novel_shrink > 1.0)
      throw std::invalid_argument("novel_shrink must be in (0,1]");
    for (const auto& p : prototypes) {
      if (static_cast<int>(p.size()) != dim)
        throw std::invalid_argument("prototype length mismatch");
      for (double x : p)
        if (!std::isfinite(x)) throw std::invalid_argument("prototype not finite");
    }
  }
};

struct SynthConfig {
  int num_base_classes = 15;
  int num_novel_classes = 5;
  double scene_width = 128.0;
  double scene_height = 128.0;
  double objects_per_scene_mean = 3.0;
  int objects_per_scene_fixed = -1;  // >= 0 forces an exact per-scene count
  double min_object_size = 16.0;
  double max_object_size = 56.0;
  double max_gt_overlap = 0.3;
  int feature_dim = 16;
  double prototype_scale = 4.0;
  double prototype_offset = 0.3;
  double background_level = 0.25;  // |mu_bg| as a fraction of prototype_scale
  double noise_base = 0.05;
  double noise_novel = 0.1;
  double novel_shrink = 0.6;
  std::uint64_t seed = 42;

  void validate() const {
    if (num_base_classes < 1) throw std::invalid_argument("need at least one base class");
    if (num_novel_classes < 0) throw std::invalid_argument("novel class count must be >= 0");
    if (scene_width <= 0 || scene_height <= 0)
      throw std::invalid_argument("scene dimensions must be positive");
    if (!(min_object_size > 0 && min_object_size <= max_object_size))
      throw std::invalid_argument("need 0 < min_object_size <= max_object_size");
    if (max_object_size >= scene_width || max_object_size >= scene_height)
      throw std::invalid_argument("max_object_size must fit inside the scene");
    if (!(max_gt_overlap >= 0 && max_gt_overlap < 1))
      throw std::invalid_argument("max_gt_overlap must be in [0,1)");
    if (objects_per_scene_mean <= 0 && objects_per_scene_fixed < 0)
      throw std::invalid_argument("need a positive object count");
    if (feature_dim < 1) throw std::invalid_argument("feature_dim must be at least 1");
    if (prototype_scale <= 0) throw std::invalid_argument("prototype_scale must be positive");
    if (background_level < 0 || noise_base < 0 || noise_novel < 0)
      throw std::invalid_argument("noise and background levels must be non-negative");
    if (!(novel_shrink > 0 && novel_shrink <= 1))
      throw std::invalid_argument("novel_shrink must be in (0,1]");
  }
};

namespace detail {
inline constexpr std::uint64_t kTagPrototype = 0xA1;
inline constexpr std::uint64_t kTagScene = 0xA2;
inline constexpr std::uint64_t kTagKShot = 0xA3;
}  // namespace detail

inline ClassSplit make_class_split(const SynthConfig& cfg) {
  ClassSplit split;
  for (int c = 0; c < cfg.num_base_classes; ++c) split.base_classes.push_back(c);
  for (int c = 0; c < cfg.num_novel_classes; ++c)
    split.novel_classes.push_back(cfg.num_base_classes + c);
  return split;
}

/// Human-readable label for a synthetic class id ("base03", "novel01").
inline std::string class_label(const ClassSplit& split, int class_id) {
  auto format = [](const char* prefix, std::size_t i) {
    std::string n = std::to_string(i);
    if (n.size() < 2) n.insert(n.begin(), '0');
    return std::string(prefix) + n;
  };
  for (std::size_t i = 0; i < split.base_classes.size(); ++i)
    if (split.base_classes[i] == class_id) return format("base", i);
  for (std::size_t i = 0; i < split.novel_classes.size(); ++i)
    if (split.novel_classes[i] == class_id) return format("novel", i);
  return "c" + std::to_string(class_id);
}

inline FeatureModel make_feature_model(const SynthConfig& cfg, const ClassSplit& split) {
  FeatureModel m;
  m.dim = cfg.feature_dim;
  m.noise_base = cfg.noise_base;
  m.noise_novel = cfg.noise_novel;
  m.novel_shrink = cfg.novel_shrink;
  // The background sits along the prototypes' shared offset direction, so
  // objectness cannot separate objects from clutter on that direction alone.
  m.background.assign(m.dim,
                      cfg.prototype_scale * cfg.background_level / std::sqrt(double(m.dim)));
  int n_classes = cfg.num_base_classes + cfg.num_novel_classes;
  m.prototypes.resize(n_classes);
  m.novel_class.assign(n_classes, false);
  for (int c : split.novel_classes) m.novel_class[c] = true;
  // Prototypes share a positive offset so objects of every class project
  // positively onto a common direction; without it a single linear
  // objectness score could not cover all classes at once.
  Rng root(cfg.seed);
  for (int c = 0; c < n_classes; ++c) {
    Rng rng = root.derive(detail::kTagPrototype, static_cast<std::uint64_t>(c));
    std::vector<double> p(m.dim);
    double norm = 0.0;
    for (double& x : p) {
      x = rng.normal() + cfg.prototype_offset;
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : p) x = x / norm * cfg.prototype_scale;
    m.prototypes[c] = std::move(p);
  }
  m.validate();
  return m;
}

namespace detail {

inline Scene generate_scene(const SynthConfig& cfg, const std::vector<int>& classes,
                            Rng rng, std::size_t index) {
  Scene scene;
  scene.id = "scene_" + std::string(6 - std::min<std::size_t>(6, std::to_string(index).size()), '0') +
             std::to_string(index);
  scene.width = cfg.scene_width;
  scene.height = cfg.scene_height;
  int count = cfg.objects_per_scene_fixed >= 0
                  ? cfg.objects_per_scene_fixed
                  : rng.poisson(cfg.objects_per_scene_mean);
  double max_w = std::min(cfg.max_object_size, cfg.scene_width);
  double max_h = std::min(cfg.max_object_size, cfg.scene_height);
  for (int k = 0; k < count; ++k) {
    int class_id = classes[rng.uniform_index(classes.size())];
    for (int attempt = 0; attempt < 1000; ++attempt) {
      double w = rng.uniform(cfg.min_object_size, max_w);
      double h = rng.uniform(cfg.min_object_size, max_h);
      BBox box;
      box.x1 = rng.uniform(0.0, cfg.scene_width - w);
      box.y1 = rng.uniform(0.0, cfg.scene_height - h);
      box.x2 = box.x1 + w;
      box.y2 = box.y1 + h;
      bool clash = false;
      for (const auto& a : scene.annotations)
        if (iou(a.box, box) > cfg.max_gt_overlap) {
          clash = true;
          break;
        }
      if (!clash) {
        scene.annotations.push_back(Annotation{class_id, box});
        break;
      }
    }
  }
  return scene;
}

}  // namespace detail

inline std::vector<Scene> generate_dataset(const SynthConfig& cfg, const ClassSplit& split,
                                           std::size_t n_scenes, Phase phase) {
  cfg.validate();
  split.validate();
  std::vector<int> classes;
  switch (phase) {
    case Phase::base: classes = split.base_classes; break;
    case Phase::novel: classes = split.novel_classes; break;
    case Phase::balanced: classes = split.all(); break;
  }
  if (classes.empty()) throw std::invalid_argument("empty class list for requested phase");
  Rng root(cfg.seed);
  std::vector<Scene> scenes(n_scenes);
  parallel_for(n_scenes, [&](std::size_t i) {
    Rng rng = root.derive(detail::kTagScene, static_cast<std::uint64_t>(phase),
                          static_cast<std::uint64_t>(i));
    scenes[i] = detail::generate_scene(cfg, classes, rng, i);
  });
  return scenes;
}

/// Draws exactly K object instances per class; scenes are copied and
/// truncated so each returned scene carries instances of a single class.
inline std::vector<Scene> sample_k_shot(const std::vector<Scene>& scenes,
                                        const ClassSplit& split, int K,
                                        std::uint64_t seed) {
  if (K < 1) throw std::invalid_argument("K must be at least 1");
  std::vector<Scene> out;
  for (int c : split.all()) {
    Rng rng = Rng(seed).derive(detail::kTagKShot, static_cast<std::uint64_t>(c));
    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    int need = K;
    for (std::size_t idx : order) {
      if (need == 0) break;
      const Scene& src = scenes[idx];
      Scene copy;
      copy.id = src.id + "/" + class_label(split, c);
      copy.width = src.width;
      copy.height = src.height;
      for (const auto& a : src.annotations) {
        if (need == 0) break;
        if (a.class_id == c) {
          copy.annotations.push_back(a);
          --need;
        }
      }
      if (!copy.annotations.empty()) out.push_back(std::move(copy));
    }
    if (need > 0)
      throw std::invalid_argument("insufficient instances for class " +
                                  class_label(split, c) + ": need " + std::to_string(K) +
                                  ", have " + std::to_string(K - need));
  }
  return out;
}

/// Analytic stand-in for backbone + RoI extraction. Returns dim + 4 values:
/// a prototype mixture weighted by the box's best IoU against ground truth,
/// plus a noisy regression cue toward the matched box (exact zeros when the
/// box overlaps nothing).
inline std::vector<double> box_feature(const FeatureModel& m, const Scene& scene,
                                       const BBox& b, Rng& rng) {
  std::vector<double> f(static_cast<std::size_t>(m.dim) + 4, 0.0);
  int best = -1;
  double v = 0.0;
  for (std::size_t i = 0; i < scene.annotations.size(); ++i) {
    double o = iou(b, scene.annotations[i].box);
    if (o > v) {
      v = o;
      best = static_cast<int>(i);
    }
  }
  if (best < 0) {
    for (int j = 0; j < m.dim; ++j)
      f[j] = m.background[j] + m.noise_base * rng.normal();
    return f;
  }
  const Annotation& ann = scene.annotations[static_cast<std::size_t>(best)];
  bool novel = m.novel_class[static_cast<std::size_t>(ann.class_id)];
  double sigma = novel ? m.noise_novel : m.noise_base;
  double rho = novel ? m.novel_shrink : 1.0;
  const auto& proto = m.prototypes[static_cast<std::size_t>(ann.class_id)];
  for (int j = 0; j < m.dim; ++j)
    f[j] = v * rho * proto[j] + (1.0 - v) * m.background[j] + sigma * rng.normal();
  BoxDelta cue = encode_delta(b, ann.box);
  f[m.dim + 0] = cue.dx + sigma * rng.normal();
  f[m.dim + 1] = cue.dy + sigma * rng.normal();
  f[m.dim + 2] = cue.dw + sigma * rng.normal();
  f[m.dim + 3] = cue.dh + sigma * rng.normal();
  return f;
}

/// Extracts features for a batch of boxes, one derived stream per box, so
/// the result depends only on (model, scene, boxes, base stream).
inline std::vector<std::vector<double>> extract_features(const FeatureModel& m,
                                                         const Scene& scene,
                                                         const std::vector<BBox>& boxes,
                                                         const Rng& base) {
  std::vector<std::vector<double>> out(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    Rng rng = base.derive(i);
    out[i] = box_feature(m, scene, boxes[i], rng);
  }
  return out;
}

}  // namespace prlab
