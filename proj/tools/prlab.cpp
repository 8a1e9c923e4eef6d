#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prlab/config.hpp"

namespace fs = std::filesystem;
using namespace prlab;

namespace {

ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return ExperimentConfig{};
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return parse_experiment_config(bytes);
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

struct SimWorld {
  ClassSplit split;
  ClassTable classes;
  std::vector<Scene> base_data, pool, base_eval, novel_eval;
  TrainResult base;
  std::function<std::uint64_t(std::uint64_t)> role;
};

/// Everything downstream of the master seed: the synthetic world, the four
/// scene sets, and the base-phase detector. Each consumer gets its own
/// derived role seed so no dataset shares a stream with another.
SimWorld build_world(const ExperimentConfig& cfg) {
  Rng block = Rng(cfg.train.seed).derive(detail::kTagSimulate);
  auto role = [block](std::uint64_t r) {
    Rng s = block.derive(r);
    return s.next_u64();
  };

  SynthConfig world = cfg.synth;
  world.seed = role(0);

  SimWorld w;
  w.split = make_class_split(world);
  w.classes = split_class_table(w.split);
  auto scenes_for = [&](std::uint64_t r, int n, Phase phase) {
    SynthConfig c = world;
    c.seed = role(r);
    return generate_dataset(c, w.split, static_cast<std::size_t>(n), phase);
  };
  w.base_data = scenes_for(1, cfg.data.base_scenes, Phase::base);
  w.pool = scenes_for(2, cfg.data.pool_scenes, Phase::balanced);
  w.base_eval = scenes_for(3, cfg.data.eval_scenes, Phase::base);
  w.novel_eval = scenes_for(4, cfg.data.eval_scenes, Phase::novel);

  TrainConfig tcfg = cfg.train;
  tcfg.seed = role(6);
  w.base = base_train(make_detector(world, cfg.detector), w.base_data, tcfg, cfg.detector);
  w.role = role;
  return w;
}

int cmd_simulate(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  SimWorld w = build_world(cfg);
  std::printf("base training: %d iterations on %d scenes, %zu anchors\n",
              cfg.train.base_iterations, cfg.data.base_scenes,
              w.base.detector.grid.anchors.size());

  write_file(out_path(cfg, "config.resolved.json"), resolved_config_json(cfg));
  write_file(out_path(cfg, "dataset_base.json"),
             write_dataset_json(w.base_eval, w.classes));
  write_file(out_path(cfg, "dataset_novel.json"),
             write_dataset_json(w.novel_eval, w.classes));

  std::vector<std::pair<std::string, std::string>> losses, hists, imbalances;
  losses.emplace_back("base", loss_trace_csv(w.base.trace));

  nlohmann::json report;
  report["seed"] = cfg.train.seed;
  report["shots"] = cfg.shots;
  report["runs"] = nlohmann::json::array();

  for (int k : cfg.shots) {
    const std::string tag = "k" + std::to_string(k);
    auto kshot = sample_k_shot(w.pool, w.split, k, w.role(5));
    TrainConfig ft = cfg.train;
    ft.seed = w.role(7 + static_cast<std::uint64_t>(k));
    TrainResult ftr = novel_finetune(w.base.detector, kshot, ft, cfg.detector);
    losses.emplace_back("finetune_" + tag, loss_trace_csv(ftr.trace));

    EvalOptions opts = cfg.eval.options();
    std::uint64_t es = w.role(100 + static_cast<std::uint64_t>(k));
    auto be = evaluate_detector(ftr.detector, w.base_eval, cfg.detector, opts, es,
                                cfg.eval.hist_bins);
    auto ne = evaluate_detector(ftr.detector, w.novel_eval, cfg.detector, opts, es + 1,
                                cfg.eval.hist_bins);
    ImbalanceReport imb =
        detector_imbalance(ftr.detector, w.base_eval, w.novel_eval, cfg.detector,
                           w.role(300 + static_cast<std::uint64_t>(k)));

    hists.emplace_back("base_" + tag, stage_histogram_csv(be.hist));
    hists.emplace_back("novel_" + tag, stage_histogram_csv(ne.hist));
    imbalances.emplace_back(tag, imbalance_csv(imb));
    write_file(out_path(cfg, "detections_base_" + tag + ".json"),
               write_detections_json(be.detections, w.classes));
    write_file(out_path(cfg, "detections_novel_" + tag + ".json"),
               write_detections_json(ne.detections, w.classes));

    report["runs"].push_back({{"k", k},
                              {"detector", detector_summary_json(ftr.detector, w.classes)},
                              {"base", eval_report_json(be.report, w.classes)},
                              {"novel", eval_report_json(ne.report, w.classes)}});
    std::printf("k=%d  base mAP%.0f=%.4f  novel mAP%.0f=%.4f  novel AP(range)=%.4f  "
                "novel recall@%d=%.4f\n",
                k, 100 * cfg.eval.iou, be.report.mean_ap, 100 * cfg.eval.iou,
                ne.report.mean_ap, ne.report.range_mean, cfg.eval.recall_k,
                ne.report.recall);
  }

  write_file(out_path(cfg, "losses.csv"), merge_csv_blocks("run", losses));
  write_file(out_path(cfg, "stage_hist.csv"), merge_csv_blocks("run", hists));
  write_file(out_path(cfg, "imbalance.csv"), merge_csv_blocks("run", imbalances));
  write_file(out_path(cfg, "eval.json"), report.dump(2) + "\n");
  std::printf("artifacts written to %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  AblationSetup setup;
  setup.synth = cfg.synth;
  setup.detector = cfg.detector;
  setup.train = cfg.train;
  setup.base_scenes = cfg.data.base_scenes;
  setup.pool_scenes = cfg.data.pool_scenes;
  setup.eval_scenes = cfg.data.eval_scenes;
  setup.gammas = cfg.gammas;
  setup.refinements = cfg.refinements;
  setup.shots = cfg.shots;
  setup.num_seeds = cfg.num_seeds;

  AblationTable table = run_ablation(setup);
  write_file(out_path(cfg, "config.resolved.json"), resolved_config_json(cfg));
  write_file(out_path(cfg, "ablation.csv"), ablation_csv(table));
  write_file(out_path(cfg, "ablation.json"), ablation_json(table));

  std::printf("%-6s %-10s %-4s %-3s %-22s %-22s %-12s %s\n", "gamma", "refinement", "k",
              "n", "novel_ap50", "base_ap50", "novel_ap", "recall100");
  for (const auto& a : table.aggregates)
    std::printf("%-6g %-10s %-4d %-3d %.4f +/- %-12.4f %.4f +/- %-12.4f %-12.4f %.4f\n",
                a.gamma, a.refinement ? "cascade" : "single", a.k, a.n,
                a.mean.novel_ap50, a.stddev.novel_ap50, a.mean.base_ap50,
                a.stddev.base_ap50, a.mean.novel_ap_range, a.mean.recall100);
  std::printf("artifacts written to %s\n", cfg.out_dir.c_str());
  return 0;
}

struct EvalArgs {
  std::string gt_path;
  std::string format;
  std::string dets_path;
  std::string out = "eval.json";
  double iou = 0.5;
  double recall_iou = 0.5;
  int recall_k = 100;
  bool range = false;
  bool all_point = false;
};

int cmd_eval(const EvalArgs& args) {
  AnnotationCorpus corpus;
  if (args.format == "voc-xml") {
    corpus = load_voc_dir(args.gt_path);
  } else if (args.format == "coco-json") {
    corpus = parse_coco_json(read_file(args.gt_path));
  } else {
    corpus = read_dataset_json(read_file(args.gt_path));
  }
  std::vector<Scene> scenes = scene_list(corpus);
  std::vector<Detection> dets = read_detections_json(read_file(args.dets_path),
                                                     corpus.classes);

  std::vector<std::vector<Proposal>> proposals;
  if (args.recall_k > 0) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < scenes.size(); ++i) index[scenes[i].id] = i;
    proposals.resize(scenes.size());
    for (const Detection& d : dets) {
      auto it = index.find(d.scene_id);
      if (it == index.end())
        throw std::invalid_argument("detection references unknown scene id: " + d.scene_id);
      Proposal p;
      p.box = d.box;
      p.objectness = d.score;
      proposals[it->second].push_back(p);
    }
  }

  EvalOptions opts;
  opts.iou_thresh = args.iou;
  opts.with_range = args.range;
  opts.all_point = args.all_point;
  opts.recall_k = args.recall_k;
  opts.recall_iou = args.recall_iou;
  EvalReport r = evaluate(scenes, dets, proposals, opts);

  std::printf("%-20s %s\n", "class", "ap");
  for (const auto& [c, ap] : r.per_class_ap)
    std::printf("%-20s %.6f\n", corpus.classes.name_of(c).c_str(), ap);
  for (int c : r.absent_classes)
    std::printf("%-20s no countable ground truth\n", corpus.classes.name_of(c).c_str());
  std::printf("mAP@%.2f over %zu classes: %.6f\n", r.iou_thresh, r.per_class_ap.size(),
              r.mean_ap);
  if (r.has_range)
    std::printf("AP averaged over IoU [0.50,1.00]: %.6f\n", r.range_mean);
  if (r.has_recall)
    std::printf("recall@%d at IoU %.2f: %.6f\n", r.recall_k, args.recall_iou, r.recall);

  write_file(args.out, eval_report_json(r, corpus.classes).dump(2) + "\n");
  return 0;
}

int cmd_histogram(const ExperimentConfig& cfg, int k, double gamma) {
  fs::create_directories(cfg.out_dir);
  SimWorld w = build_world(cfg);
  const std::string tag = "k" + std::to_string(k);

  auto kshot = sample_k_shot(w.pool, w.split, k, w.role(5));
  TrainConfig ft = cfg.train;
  ft.gamma_rpn = gamma;
  ft.seed = w.role(7 + static_cast<std::uint64_t>(k));
  Detector det = novel_finetune(w.base.detector, kshot, ft, cfg.detector).detector;

  EvalOptions opts = cfg.eval.options();
  std::uint64_t es = w.role(100 + static_cast<std::uint64_t>(k));
  auto be = evaluate_detector(det, w.base_eval, cfg.detector, opts, es, cfg.eval.hist_bins);
  auto ne = evaluate_detector(det, w.novel_eval, cfg.detector, opts, es + 1,
                              cfg.eval.hist_bins);
  ImbalanceReport imb = detector_imbalance(det, w.base_eval, w.novel_eval, cfg.detector,
                                           w.role(300 + static_cast<std::uint64_t>(k)));

  write_file(out_path(cfg, "config.resolved.json"), resolved_config_json(cfg));
  write_file(out_path(cfg, "stage_hist.csv"),
             merge_csv_blocks("run", {{"base_" + tag, stage_histogram_csv(be.hist)},
                                      {"novel_" + tag, stage_histogram_csv(ne.hist)}}));
  write_file(out_path(cfg, "imbalance.csv"),
             merge_csv_blocks("run", {{tag, imbalance_csv(imb)}}));

  std::printf("gamma_rpn=%g, K=%d\n", gamma, k);
  auto shares = [](const char* name, const StageHistogram& h) {
    std::printf("%s pass, share of positives at IoU >= 0.75:", name);
    for (std::size_t s = 0; s < h.share_ge_075.size(); ++s)
      std::printf("  %s=%.4f", s + 1 < h.counts.size() ? ("stage" + std::to_string(s + 1)).c_str() : "final",
                  h.share_ge_075[s]);
    std::printf("\n");
  };
  shares("base", be.hist);
  shares("novel", ne.hist);
  std::printf("proposal IoU in [0.4,0.6): base=%.4f novel=%.4f\n", imb.base_share_mid,
              imb.novel_share_mid);
  std::printf("[0.9,1.0]/[0.4,0.5) count ratio: base=%.4f novel=%.4f\n", imb.base_high_low,
              imb.novel_high_low);
  std::printf("artifacts written to %s\n", cfg.out_dir.c_str());
  return 0;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale few-shot detection laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::vector<int> shots;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config JSON");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "master seed");
  };
  auto apply_common = [&](CLI::App* cmd, ExperimentConfig& cfg) {
    if (cmd->count("--out")) cfg.out_dir = out_dir;
    if (cmd->count("--seed")) cfg.train.seed = seed;
    cfg.validate();
  };

  CLI::App* sim = app.add_subcommand("simulate", "train, fine-tune, and emit all artifacts");
  add_common(sim);
  sim->add_option("--k", shots, "shot counts, e.g. 1,2,3,5,10")->delimiter(',');

  CLI::App* abl = app.add_subcommand("ablate", "gamma x refinement x K ablation grid");
  add_common(abl);
  abl->add_option("--k", shots, "shot counts")->delimiter(',');
  std::vector<double> gammas;
  std::vector<int> refinements;
  int num_seeds = 0;
  abl->add_option("--gammas", gammas, "rpn loss scales, e.g. 0,0.5,1")->delimiter(',');
  abl->add_option("--refinements", refinements, "cascade on/off as 1,0")->delimiter(',');
  abl->add_option("--seeds", num_seeds, "number of paired seeds");

  CLI::App* evl = app.add_subcommand("eval", "score a detections file against ground truth");
  EvalArgs eargs;
  evl->add_option("--gt", eargs.gt_path, "ground truth path")->required();
  evl->add_option("--format", eargs.format, "ground truth format")
      ->required()
      ->check(CLI::IsMember({"voc-xml", "coco-json", "synthetic-json"}));
  evl->add_option("--dets", eargs.dets_path, "detections JSON")->required();
  evl->add_option("--out", eargs.out, "report JSON path");
  evl->add_option("--iou", eargs.iou, "matching IoU threshold");
  evl->add_flag("--range", eargs.range, "also average AP over IoU 0.5..1.0");
  evl->add_flag("--all-point", eargs.all_point, "all-point AP instead of 11-point");
  evl->add_option("--recall-k", eargs.recall_k, "proposal budget for recall (0 disables)");
  evl->add_option("--recall-iou", eargs.recall_iou, "IoU threshold for recall");

  CLI::App* hist = app.add_subcommand("histogram", "per-stage IoU and imbalance analysis");
  add_common(hist);
  int hist_k = 0;
  double hist_gamma = 0.0;
  hist->add_option("--k", hist_k, "shot count");
  hist->add_option("--gamma", hist_gamma, "rpn loss scale during fine-tuning");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (sim->parsed())
    return guarded([&] {
      ExperimentConfig cfg = load_config(config_path);
      if (sim->count("--k")) cfg.shots = shots;
      apply_common(sim, cfg);
      return cmd_simulate(cfg);
    });
  if (abl->parsed())
    return guarded([&] {
      ExperimentConfig cfg = load_config(config_path);
      if (abl->count("--k")) cfg.shots = shots;
      apply_common(abl, cfg);
      if (abl->count("--gammas")) cfg.gammas = gammas;
      if (abl->count("--refinements")) {
        cfg.refinements.clear();
        for (int r : refinements) cfg.refinements.push_back(r != 0);
      }
      if (abl->count("--seeds")) cfg.num_seeds = num_seeds;
      cfg.validate();
      return cmd_ablate(cfg);
    });
  if (evl->parsed()) return guarded([&] { return cmd_eval(eargs); });
  return guarded([&] {
    ExperimentConfig cfg = load_config(config_path);
    apply_common(hist, cfg);
    int k = hist->count("--k") ? hist_k : cfg.shots.front();
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    return cmd_histogram(cfg, k, hist_gamma);
  });
}
