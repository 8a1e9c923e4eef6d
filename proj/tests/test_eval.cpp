#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "prlab/eval.hpp"
#include "prlab/rng.hpp"

using namespace prlab;

namespace {

Detection det(std::string scene, int cls, BBox b, double score) {
  return Detection{std::move(scene), cls, b, score};
}

Scene scene_with(std::string id, std::vector<Annotation> anns) {
  Scene s;
  s.id = std::move(id);
  s.width = 200;
  s.height = 200;
  s.annotations = std::move(anns);
  return s;
}

// Reference matcher: literal restatement of the greedy rule, selection scan
// instead of sort, no shared code with the implementation.
std::vector<bool> oracle_match_scene(const std::vector<Detection>& dets, const Scene& scene,
                                     double thresh) {
  std::vector<bool> tp(dets.size(), false), taken(dets.size(), false);
  std::vector<bool> used(scene.annotations.size(), false);
  for (std::size_t round = 0; round < dets.size(); ++round) {
    int pick = -1;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (taken[i]) continue;
      if (pick < 0 || dets[i].score > dets[pick].score) pick = static_cast<int>(i);
    }
    taken[pick] = true;
    int best_g = -1;
    double best = 0.0;
    for (std::size_t g = 0; g < scene.annotations.size(); ++g) {
      const Annotation& a = scene.annotations[g];
      if (a.difficult || a.ignore || used[g] || a.class_id != dets[pick].class_id) continue;
      double v = iou(dets[pick].box, a.box);
      if (v >= thresh && v > 0.0 && v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      tp[pick] = true;
      used[best_g] = true;
    }
  }
  return tp;
}

// Reference AP: matches per scene, then evaluates each recall grid point by
// scanning every prefix of the confidence-ordered list.
double oracle_ap11(const std::vector<Detection>& dets, const std::vector<Scene>& scenes,
                   int cls, double thresh) {
  std::size_t num_gt = 0;
  for (const auto& s : scenes)
    for (const auto& a : s.annotations)
      if (a.class_id == cls && !a.difficult && !a.ignore) ++num_gt;
  REQUIRE(num_gt > 0);

  std::vector<bool> flags(dets.size(), false);
  for (const auto& s : scenes) {
    std::vector<Detection> local;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (dets[i].scene_id == s.id) {
        local.push_back(dets[i]);
        idx.push_back(i);
      }
    auto tp = oracle_match_scene(local, s, thresh);
    for (std::size_t k = 0; k < idx.size(); ++k) flags[idx[k]] = tp[k];
  }
  std::vector<std::pair<double, bool>> scored;  // (score, tp) in input order
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].class_id == cls) scored.emplace_back(dets[i].score, flags[i]);
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  double sum = 0.0;
  for (int t = 0; t <= 10; ++t) {
    double r = t / 10.0;
    double best_p = 0.0;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < scored.size(); ++k) {
      if (scored[k].second) ++tp;
      double recall = static_cast<double>(tp) / static_cast<double>(num_gt);
      double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
      if (recall >= r) best_p = std::max(best_p, precision);
    }
    sum += best_p;
  }
  return sum / 11.0;
}

BBox random_box(Rng& rng, double extent) {
  double w = rng.uniform(8.0, 80.0);
  double h = rng.uniform(8.0, 80.0);
  double x = rng.uniform(0.0, extent - w);
  double y = rng.uniform(0.0, extent - h);
  return BBox{x, y, x + w, y + h};
}

// Scores quantized to multiples of 1/32 so confidence ties are common and the
// input-order tie-break is actually exercised.
double quantized_score(Rng& rng) {
  return std::floor(rng.uniform() * 32.0) / 32.0;
}

}  // namespace

TEST_CASE("match_detections basics") {
  Scene s = scene_with("a", {Annotation{0, BBox{10, 10, 50, 50}},
                             Annotation{0, BBox{60, 60, 100, 100}}});

  SECTION("exact hit is a true positive") {
    std::vector<Detection> d{det("a", 0, BBox{10, 10, 50, 50}, 0.9)};
    auto m = match_detections(d, s, 0.5);
    CHECK(m.tp[0] == 1);
    CHECK(m.matched_gt[0] == 0);
    CHECK(m.gt_matched[0] == 1);
    CHECK(m.gt_matched[1] == 0);
  }

  SECTION("second detection on a matched gt is a false positive") {
    std::vector<Detection> d{det("a", 0, BBox{10, 10, 50, 50}, 0.6),
                             det("a", 0, BBox{11, 11, 51, 51}, 0.9)};
    auto m = match_detections(d, s, 0.5);
    CHECK(m.tp[1] == 1);  // higher confidence wins
    CHECK(m.tp[0] == 0);
  }

  SECTION("class mismatch never matches") {
    std::vector<Detection> d{det("a", 1, BBox{10, 10, 50, 50}, 0.9)};
    auto m = match_detections(d, s, 0.5);
    CHECK(m.tp[0] == 0);
    CHECK(m.matched_gt[0] == -1);
  }

  SECTION("confidence tie breaks to the lower input index") {
    std::vector<Detection> d{det("a", 0, BBox{10, 10, 50, 50}, 0.7),
                             det("a", 0, BBox{10, 10, 50, 50}, 0.7)};
    auto m = match_detections(d, s, 0.5);
    CHECK(m.tp[0] == 1);
    CHECK(m.tp[1] == 0);
  }

  SECTION("threshold is inclusive") {
    // iou((0,0,30,10),(0,0,10,10)) = 100/300 = 1/3 exactly
    Scene t = scene_with("t", {Annotation{0, BBox{0, 0, 10, 10}}});
    std::vector<Detection> d{det("t", 0, BBox{0, 0, 30, 10}, 0.9)};
    CHECK(match_detections(d, t, 1.0 / 3.0).tp[0] == 1);
    CHECK(match_detections(d, t, std::nextafter(1.0 / 3.0, 1.0)).tp[0] == 0);
  }

  SECTION("greedy picks the highest-iou gt, later detections fall back") {
    Scene t = scene_with("t", {Annotation{0, BBox{0, 0, 100, 100}},
                               Annotation{0, BBox{0, 0, 100, 80}}});
    std::vector<Detection> d{det("t", 0, BBox{0, 0, 100, 90}, 0.9),
                             det("t", 0, BBox{0, 0, 100, 95}, 0.8)};
    auto m = match_detections(d, t, 0.5);
    CHECK(m.matched_gt[0] == 0);  // iou 0.9 vs gt0, 8/9 vs gt1
    CHECK(m.matched_gt[1] == 1);  // gt0 taken, 0.8 vs gt1 still above thresh
    CHECK(m.tp[1] == 1);
  }
}

TEST_CASE("difficult and ignored gts are excluded from matching") {
  Scene s = scene_with("a", {Annotation{0, BBox{10, 10, 50, 50}, true, false},
                             Annotation{0, BBox{60, 60, 100, 100}}});
  std::vector<Detection> d{det("a", 0, BBox{10, 10, 50, 50}, 0.9)};
  auto m = match_detections(d, s, 0.5);
  CHECK(m.tp[0] == 0);
  CHECK(m.gt_matched[0] == 0);

  // and from denominators: the easy gt alone defines recall
  std::vector<Detection> d2{det("a", 0, BBox{60, 60, 100, 100}, 0.9)};
  auto ap = ap_11point(d2, {s}, 0, 0.5);
  REQUIRE(ap.has_value());
  CHECK(*ap == 1.0);
}

TEST_CASE("ap edge cases") {
  Scene s = scene_with("a", {Annotation{0, BBox{10, 10, 50, 50}}});

  SECTION("single perfect detection") {
    auto ap = ap_11point({det("a", 0, BBox{10, 10, 50, 50}, 0.9)}, {s}, 0, 0.5);
    REQUIRE(ap.has_value());
    CHECK(*ap == 1.0);
  }

  SECTION("no detections") {
    auto ap = ap_11point({}, {s}, 0, 0.5);
    REQUIRE(ap.has_value());
    CHECK(*ap == 0.0);
  }

  SECTION("class without gt is absent, not zero") {
    CHECK_FALSE(ap_11point({det("a", 1, BBox{0, 0, 5, 5}, 0.9)}, {s}, 1, 0.5).has_value());
    auto table = average_precision_table({det("a", 1, BBox{0, 0, 5, 5}, 0.9)}, {s}, 0.5);
    CHECK(table.per_class.count(1) == 0);
    CHECK(table.absent == std::vector<int>{1});
  }

  SECTION("unknown scene id fails loudly") {
    CHECK_THROWS_WITH(ap_11point({det("zz", 0, BBox{0, 0, 5, 5}, 0.9)}, {s}, 0, 0.5),
                      Catch::Matchers::ContainsSubstring("unknown scene id"));
  }
}

TEST_CASE("three-scene staircase fixture") {
  std::vector<Scene> scenes{
      scene_with("a", {Annotation{0, BBox{10, 10, 50, 50}},
                       Annotation{0, BBox{60, 60, 100, 100}}}),
      scene_with("b", {Annotation{0, BBox{20, 20, 80, 80}}}),
      scene_with("c", {}),
  };
  // deliberately unsorted input order
  std::vector<Detection> dets{
      det("b", 0, BBox{0, 0, 10, 10}, 0.50),     // fp
      det("a", 0, BBox{10, 10, 50, 50}, 0.95),   // tp
      det("c", 0, BBox{10, 10, 50, 50}, 0.80),   // fp, empty scene
      det("a", 0, BBox{60, 60, 100, 100}, 0.90), // tp
      det("b", 0, BBox{20, 20, 80, 80}, 0.60),   // tp
      det("a", 0, BBox{10, 10, 50, 50}, 0.70),   // fp, duplicate on matched gt
  };

  auto ap = ap_11point(dets, scenes, 0, 0.5);
  REQUIRE(ap.has_value());
  // pr staircase: p=1 through recall 2/3, then 0.6 at recall 1
  CHECK(*ap == Catch::Approx((7.0 + 4.0 * 0.6) / 11.0).margin(1e-12));
  CHECK(*ap == Catch::Approx(oracle_ap11(dets, scenes, 0, 0.5)).margin(1e-15));

  SECTION("exact boxes make the full range identical") {
    auto mr = map_range(dets, scenes);
    REQUIRE(mr.per_threshold.size() == 11);
    for (double v : mr.per_threshold) CHECK(v == Catch::Approx(*ap).margin(1e-12));
    CHECK(mr.mean == Catch::Approx(*ap).margin(1e-12));
  }

  SECTION("adding a low-confidence duplicate never increases ap") {
    auto worse = dets;
    worse.push_back(det("a", 0, BBox{10, 10, 50, 50}, 0.40));
    auto ap2 = ap_11point(worse, scenes, 0, 0.5);
    REQUIRE(ap2.has_value());
    CHECK(*ap2 <= *ap);
  }

  SECTION("ap is invariant under monotone score transforms") {
    auto scaled = dets;
    for (auto& d : scaled) d.score = 0.5 * d.score + 0.25;
    auto ap2 = ap_11point(scaled, scenes, 0, 0.5);
    REQUIRE(ap2.has_value());
    CHECK(*ap2 == *ap);
  }

  SECTION("all-point interpolation on the same staircase") {
    // integral: recall 0..2/3 at p=1 plus the last third at p=0.6
    auto ap_all = ap_11point(dets, scenes, 0, 0.5, true);
    REQUIRE(ap_all.has_value());
    CHECK(*ap_all == Catch::Approx(2.0 / 3.0 + 0.6 / 3.0).margin(1e-12));
  }
}

TEST_CASE("matching and ap agree with the brute-force reference") {
  Rng rng(20260814);
  double worst = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    int n_scenes = 1 + static_cast<int>(rng.uniform_index(3));
    std::vector<Scene> scenes;
    for (int s = 0; s < n_scenes; ++s) {
      std::vector<Annotation> anns;
      int n_gt = static_cast<int>(rng.uniform_index(4));
      for (int g = 0; g < n_gt; ++g) {
        Annotation a;
        a.class_id = static_cast<int>(rng.uniform_index(3));
        a.box = random_box(rng, 200.0);
        a.difficult = rng.uniform() < 0.15;
        anns.push_back(a);
      }
      scenes.push_back(scene_with("s" + std::to_string(s), anns));
    }
    std::vector<Detection> dets;
    int n_det = static_cast<int>(rng.uniform_index(21));
    for (int i = 0; i < n_det; ++i) {
      const Scene& s = scenes[rng.uniform_index(scenes.size())];
      Detection d;
      d.scene_id = s.id;
      d.class_id = static_cast<int>(rng.uniform_index(3));
      d.score = quantized_score(rng);
      if (!s.annotations.empty() && rng.uniform() < 0.7) {
        const BBox& g = s.annotations[rng.uniform_index(s.annotations.size())].box;
        double jx = rng.uniform(-10.0, 10.0), jy = rng.uniform(-10.0, 10.0);
        d.box = BBox{g.x1 + jx, g.y1 + jy, g.x2 + jx, g.y2 + jy};
      } else {
        d.box = random_box(rng, 200.0);
      }
      dets.push_back(d);
    }

    double thresh = (rng.uniform() < 0.5) ? 0.5 : 0.3;
    auto cm = match_corpus(dets, scenes, thresh);
    for (const auto& s : scenes) {
      std::vector<Detection> local;
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < dets.size(); ++i)
        if (dets[i].scene_id == s.id) {
          local.push_back(dets[i]);
          idx.push_back(i);
        }
      auto ref = oracle_match_scene(local, s, thresh);
      for (std::size_t k = 0; k < idx.size(); ++k)
        REQUIRE(static_cast<bool>(cm.tp[idx[k]]) == ref[k]);
    }
    for (int c = 0; c < 3; ++c) {
      auto ap = ap_11point(dets, scenes, c, thresh);
      std::size_t num_gt = 0;
      for (const auto& s : scenes)
        for (const auto& a : s.annotations)
          if (a.class_id == c && !a.difficult) ++num_gt;
      REQUIRE(ap.has_value() == (num_gt > 0));
      if (ap.has_value())
        worst = std::max(worst, std::abs(*ap - oracle_ap11(dets, scenes, c, thresh)));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("map_range threshold membership") {
  // iou((0,0,100,72),(0,0,100,100)) = 0.72: true positive only through 0.70
  std::vector<Scene> scenes{scene_with("a", {Annotation{0, BBox{0, 0, 100, 100}}})};
  std::vector<Detection> dets{det("a", 0, BBox{0, 0, 100, 72}, 0.9)};
  auto mr = map_range(dets, scenes);
  REQUIRE(mr.thresholds.size() == 11);
  for (int i = 0; i <= 10; ++i) {
    CHECK(mr.thresholds[i] == Catch::Approx(0.5 + 0.05 * i).margin(1e-12));
    CHECK(mr.per_threshold[i] == (mr.thresholds[i] <= 0.72 ? 1.0 : 0.0));
  }
  CHECK(mr.mean == Catch::Approx(5.0 / 11.0).margin(1e-12));
}

TEST_CASE("recall_at_k") {
  std::vector<Scene> scenes{
      scene_with("a", {Annotation{0, BBox{10, 10, 50, 50}},
                       Annotation{1, BBox{60, 60, 100, 100}}}),
      scene_with("b", {Annotation{0, BBox{20, 20, 80, 80}}}),
  };
  auto prop = [](BBox b, double obj) {
    Proposal p;
    p.box = b;
    p.objectness = obj;
    return p;
  };

  SECTION("verbatim gt boxes give full recall regardless of class") {
    std::vector<std::vector<Proposal>> props{
        {prop(BBox{10, 10, 50, 50}, 0.9), prop(BBox{60, 60, 100, 100}, 0.8)},
        {prop(BBox{20, 20, 80, 80}, 0.7)},
    };
    CHECK(recall_at_k(props, scenes, 0.5, 100) == 1.0);
  }

  SECTION("top-k cut drops low-objectness hits") {
    std::vector<std::vector<Proposal>> props{
        {prop(BBox{0, 0, 5, 5}, 0.9), prop(BBox{10, 10, 50, 50}, 0.8),
         prop(BBox{60, 60, 100, 100}, 0.7)},
        {prop(BBox{20, 20, 80, 80}, 0.6)},
    };
    CHECK(recall_at_k(props, scenes, 0.5, 100) == 1.0);
    CHECK(recall_at_k(props, scenes, 0.5, 2) == Catch::Approx(2.0 / 3.0));
    CHECK(recall_at_k(props, scenes, 0.5, 1) == Catch::Approx(1.0 / 3.0));
  }

  SECTION("recall is non-decreasing in k") {
    Rng rng(7);
    std::vector<std::vector<Proposal>> props(2);
    for (auto& list : props)
      for (int i = 0; i < 30; ++i)
        list.push_back(prop(random_box(rng, 200.0), rng.uniform()));
    double prev = 0.0;
    for (int k = 1; k <= 30; ++k) {
      double r = recall_at_k(props, scenes, 0.3, k);
      CHECK(r >= prev);
      prev = r;
    }
  }

  SECTION("zero gt in the corpus is an error") {
    std::vector<Scene> empty{scene_with("a", {})};
    std::vector<std::vector<Proposal>> props{{prop(BBox{0, 0, 5, 5}, 0.9)}};
    CHECK_THROWS_WITH(recall_at_k(props, empty, 0.5, 10),
                      Catch::Matchers::ContainsSubstring("no ground truth"));
  }

  SECTION("mismatched lengths are an error") {
    CHECK_THROWS_AS(recall_at_k({}, scenes, 0.5, 10), std::invalid_argument);
  }
}

TEST_CASE("imbalance_report hand tally") {
  std::vector<double> base{0.45, 0.55, 0.80, 0.95, 0.30};  // 0.30 below population cut
  std::vector<double> novel{0.42, 0.44, 0.58};
  auto r = imbalance_report(base, 2, novel, 3, 6);

  REQUIRE(r.base_per_image.size() == 6);
  CHECK(r.base_per_image[0] == 0.5);  // 0.45 over two scenes
  CHECK(r.base_per_image[1] == 0.5);
  CHECK(r.base_per_image[4] == 0.5);
  CHECK(r.base_per_image[5] == 0.5);
  CHECK(r.novel_per_image[0] == Catch::Approx(2.0 / 3.0));
  CHECK(r.novel_per_image[1] == Catch::Approx(1.0 / 3.0));

  CHECK(r.base_share_mid == 0.5);
  CHECK(r.novel_share_mid == 1.0);
  CHECK(r.base_high_low == 1.0);   // one in [0.9,1.0], one in [0.4,0.5)
  CHECK(r.novel_high_low == 0.0);
  // novel: 1 of 3 scenes at iou >= 0.5; base: 3 of 2 scenes
  CHECK(r.novel_base_ratio_ge_05 == Catch::Approx((1.0 / 3.0) / (3.0 / 2.0)));

  auto csv = imbalance_csv(r);
  CHECK(csv.find("split,bin_lo,bin_hi,avg_count_per_image,share_mid,high_low_ratio\n") == 0);
  CHECK(csv.find("base,0.4,0.5,0.5,0.5,1\n") != std::string::npos);
  CHECK(csv.find("novel,0.4,0.5,0.666666667,1,0\n") != std::string::npos);
}

TEST_CASE("imbalance_report identical populations") {
  std::vector<double> ious{0.45, 0.62, 0.71, 0.93, 1.0};
  auto r = imbalance_report(ious, 4, ious, 4, 6);
  CHECK(r.base_per_image == r.novel_per_image);
  CHECK(r.base_share_mid == r.novel_share_mid);
  CHECK(r.base_high_low == r.novel_high_low);
  CHECK(r.novel_base_ratio_ge_05 == 1.0);
  CHECK(r.base_per_image[5] == 0.5);  // 0.93 and the clamped 1.0
}

TEST_CASE("evaluate composes the report") {
  std::vector<Scene> scenes{
      scene_with("a", {Annotation{0, BBox{10, 10, 50, 50}}}),
      scene_with("b", {Annotation{0, BBox{20, 20, 80, 80}}}),
  };
  std::vector<Detection> dets{
      det("a", 0, BBox{10, 10, 50, 50}, 0.9),
      det("b", 0, BBox{0, 0, 10, 10}, 0.8),
      det("a", 1, BBox{10, 10, 50, 50}, 0.7),  // class without gt
  };
  std::vector<std::vector<Proposal>> props(2);
  for (int s = 0; s < 2; ++s) {
    Proposal p;
    p.box = scenes[s].annotations[0].box;
    p.objectness = 0.5;
    props[s].push_back(p);
  }

  EvalOptions opts;
  opts.recall_k = 10;
  auto r = evaluate(scenes, dets, props, opts);

  REQUIRE(r.per_class_ap.count(0) == 1);
  CHECK(r.absent_classes == std::vector<int>{1});
  CHECK(r.mean_ap == r.per_class_ap.at(0));
  REQUIRE(r.trace.size() == 3);
  CHECK(r.trace[0].tp);
  CHECK_FALSE(r.trace[1].tp);
  CHECK_FALSE(r.trace[2].tp);
  CHECK(r.trace[2].scene_id == "a");
  REQUIRE(r.has_range);
  CHECK(r.range_ap.size() == 11);
  REQUIRE(r.has_recall);
  CHECK(r.recall_k == 10);
  CHECK(r.recall == 1.0);

  SECTION("empty detections still evaluate") {
    auto r2 = evaluate(scenes, {}, props, opts);
    CHECK(r2.mean_ap == 0.0);
    CHECK(r2.trace.empty());
    CHECK(r2.recall == 1.0);
  }
}
