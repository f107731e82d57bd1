// benthic: generate synthetic surveys, train and evaluate detectors and
// substrate classifiers, run the counting pipeline and hyperparameter sweeps.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "benthic/experiment.hpp"

using namespace benthic;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = "out";
  int repeat = 1;
  bool repeat_set = false;
  int workers = 0;
};

int default_workers(int requested) {
  if (requested > 0) return requested;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

nlohmann::json config_or_empty(const std::string& path) {
  return path.empty() ? nlohmann::json::object() : read_json_file(path);
}

/// Config file may hold a bare object or nest it under `key`.
nlohmann::json section(const nlohmann::json& j, const char* key) {
  return j.contains(key) ? j.at(key) : j;
}

fs::path ensure_out(const std::string& out) {
  fs::create_directories(out);
  return out;
}

void write_eval_outputs(const fs::path& out, const DetectionEval& e, const std::string& checkpoint_hash,
                        const std::string& config_hash_str, const std::string& split) {
  write_text_file(out / "per_class_ap.csv", per_class_ap_csv(e));
  EvalReport r;
  r.per_class_ap = e.per_class_ap;
  r.map50 = e.map50;
  std::string text = summary_text(r);
  text += "straddling gt boxes kept whole: " + std::to_string(e.straddling_gt) + "\n";
  text += "detections discarded (entirely above midline): " + std::to_string(e.discarded_detections) + "\n";
  write_text_file(out / "summary.txt", text);
  nlohmann::json ap = nlohmann::json::object();
  for (int s = 0; s < kNumSpecies; ++s)
    ap[std::string(kSpeciesNames[s])] = e.per_class_ap[s] ? nlohmann::json(*e.per_class_ap[s]) : nlohmann::json();
  write_json_file(out / "eval.json", {{"split", split},
                                      {"map50", e.map50},
                                      {"per_class_ap", ap},
                                      {"interpolation", "all-points"},
                                      {"checkpoint_hash", checkpoint_hash},
                                      {"config_hash", config_hash_str}});
  std::cout << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic benthic survey detection, tracking and counting"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON config file for the subcommand");
  app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; },
                                         "Base random seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option_function<int>("--repeat", [&](int r) { g.repeat = r, g.repeat_set = true; },
                               "Independent repeats (seeds seed..seed+repeat-1)")
      ->check(CLI::PositiveNumber);
  app.add_option("--workers", g.workers, "Worker threads (0: all cores)");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  bool all_frames = false;
  std::optional<double> withhold, duration;
  gen->add_flag("--all-frames", all_frames, "Write every frame as PNG, not only annotated ones");
  gen->add_option("--withhold", withhold, "Fraction of training objects left out of the keyframes");
  gen->add_option("--duration", duration, "Video length in seconds");

  // train-detector
  auto* train = app.add_subcommand("train-detector", "Train the detector");
  std::string data;
  std::optional<int> epochs;
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--epochs", epochs, "Override max_epochs");

  // train-substrate
  auto* train_sub = app.add_subcommand("train-substrate", "Train the frame substrate classifier");
  std::string mode = "single";
  train_sub->add_option("--data", data, "Dataset directory")->required();
  train_sub->add_option("--mode", mode, "single (one multi-label net) or combined (four binary nets)")
      ->check(CLI::IsMember({"single", "combined"}));

  // eval-det
  auto* eval_det = app.add_subcommand("eval-det", "Evaluate a detector checkpoint (mAP@0.5, bottom half)");
  std::string checkpoint, split = "test";
  bool use_gt = false;
  eval_det->add_option("--data", data, "Dataset directory")->required();
  eval_det->add_option("--checkpoint", checkpoint, "Detector checkpoint");
  eval_det->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  eval_det->add_flag("--gt-detections", use_gt, "Score ground-truth boxes instead of a model");

  // eval-substrate
  auto* eval_sub = app.add_subcommand("eval-substrate", "Evaluate a substrate classifier on 1 fps test frames");
  std::string model_path;
  eval_sub->add_option("--data", data, "Dataset directory")->required();
  eval_sub->add_option("--model", model_path, "Substrate checkpoint")->required();
  eval_sub->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Detect, track and count at full frame rate");
  std::optional<double> tau;
  std::optional<int> gamma;
  pipe->add_option("--data", data, "Dataset directory")->required();
  pipe->add_option("--checkpoint", checkpoint, "Detector checkpoint");
  pipe->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  pipe->add_option("--tau", tau, "Detection confidence filter")->check(CLI::Range(0.0, 1.0));
  pipe->add_option("--gamma", gamma, "Minimum detections per track")->check(CLI::NonNegativeNumber);
  pipe->add_flag("--gt-detections", use_gt, "Use ground-truth boxes (score 1) as detections");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Hyperparameter grid over lr, alpha, beta, rho, tau, gamma");
  std::string grid_path;
  sweep->add_option("--data", data, "Dataset directory")->required();
  sweep->add_option("--grid", grid_path, "Grid JSON file (defaults to --config)");

  // report
  auto* report = app.add_subcommand("report", "Relative mAP gains over the vanilla detector");
  std::string sweep_path, baseline;
  std::vector<std::string> variants;
  report->add_option("--sweep", sweep_path, "Sweep results CSV");
  report->add_option("--baseline", baseline, "eval.json of the vanilla detector");
  report->add_option("--variant", variants, "eval.json of compared detectors");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const auto cfg_json = config_or_empty(g.config);

    if (gen->parsed()) {
      auto profile = dataset_profile_from_json(cfg_json);
      profile.all_frames |= all_frames;
      if (withhold) profile.withhold = *withhold;
      if (duration) profile.scene.duration = *duration;
      profile.scene.validate();
      const auto metas = write_dataset(profile, g.seed, g.out);
      std::cout << "wrote " << metas.size() << " videos to " << g.out << "\n";
      return 0;
    }

    if (train->parsed()) {
      DetectorConfig base = detector_config_from_json(section(cfg_json, "detector"));
      if (epochs) base.max_epochs = *epochs;
      if (g.seed_set) base.seed = g.seed;
      const auto ds = load_dataset(data);
      const auto train_set = training_examples<float>(ds.split(Split::Train));
      const auto val_set = evaluation_set<float>(ds.split(Split::Val));
      const auto out = ensure_out(g.out);
      for (int k = 0; k < g.repeat; ++k) {
        DetectorConfig cfg = base;
        cfg.seed = base.seed + static_cast<std::uint64_t>(k);
        cfg.validate();
        const fs::path dir = g.repeat > 1 ? out / ("run_" + std::to_string(k)) : out;
        fs::create_directories(dir);
        std::ofstream log(dir / "train_log.txt");
        TrainHooks hooks;
        hooks.log = &log;
        auto res = train_detector<float>(cfg, train_set, val_set, hooks);
        save_checkpoint((dir / "detector.ckpt").string(), *res.model);
        std::string csv = "epoch,loss,l_d,l_p,l_c,val mAP\n";
        for (const auto& e : res.epochs)
          csv += std::to_string(e.epoch) + "," + std::to_string(e.loss) + "," + std::to_string(e.l_d) + "," +
                 std::to_string(e.l_p) + "," + std::to_string(e.l_c) + "," + std::to_string(e.val_map) + "\n";
        write_text_file(dir / "train_log.csv", csv);
        write_json_file(dir / "summary.json", {{"config_hash", config_hash(res.model->config())},
                                               {"checkpoint_hash", file_hash((dir / "detector.ckpt").string())},
                                               {"best_epoch", res.best_epoch},
                                               {"best_val_map", res.best_val_map},
                                               {"train_images", train_set.size()},
                                               {"config", to_json(res.model->config())}});
        std::cout << dir.string() << ": best epoch " << res.best_epoch << ", val mAP " << res.best_val_map << "\n";
      }
      return 0;
    }

    if (train_sub->parsed()) {
      SubstrateConfig cfg = substrate_config_from_json(section(cfg_json, "substrate"));
      if (g.seed_set) cfg.seed = g.seed;
      const auto ds = load_dataset(data);
      const auto tr = substrate_samples(ds.split(Split::Train), cfg.downsample);
      const auto va = substrate_samples(ds.split(Split::Val), cfg.downsample);
      const auto te = substrate_samples(ds.split(Split::Test), cfg.downsample);
      auto res = mode == "combined" ? train_combined(cfg, tr, va) : train_single(cfg, tr, va);
      const auto out = ensure_out(g.out);
      save_substrate_model((out / "substrate.ckpt").string(), *res.model);
      SubstrateRow row{mode, va.empty() ? 0.0 : evaluate_substrate(*res.model, va).map, 0.0, std::nullopt};
      if (!te.empty()) {
        row.test_wv = evaluate_substrate(*res.model, te);
        row.test_map = row.test_wv->map;
      }
      std::vector<SubstrateRow> rows{row};
      const auto csv = substrate_table_csv(rows);
      write_text_file(out / "substrate_table.csv", csv);
      std::cout << csv;
      return 0;
    }

    if (eval_det->parsed()) {
      const auto ds = load_dataset(data);
      const auto videos = ds.split(parse_split(split));
      const auto frames = all_eval_frames(videos);
      std::vector<Detection> dets;
      std::string ck_hash = "ground-truth", cfg_hash = "ground-truth";
      if (use_gt) {
        for (const auto& f : frames)
          for (const auto& b : f.boxes) dets.push_back({f.video_id, f.frame, b.species, b.box, 1.0});
      } else {
        if (checkpoint.empty()) throw DataError("eval-det needs --checkpoint or --gt-detections");
        auto model = load_checkpoint<float>(checkpoint, &cfg_hash);
        ck_hash = file_hash(checkpoint);
        dets = detect_all(*model, evaluation_set<float>(videos));
      }
      const auto e = map_bottom_half(dets, frames);
      write_eval_outputs(ensure_out(g.out), e, ck_hash, cfg_hash, split);
      return 0;
    }

    if (eval_sub->parsed()) {
      auto model = load_substrate_model(model_path);
      const auto ds = load_dataset(data);
      std::vector<std::pair<std::string, long>> index;
      const auto samples = substrate_samples(ds.split(parse_split(split)), model->config().downsample, &index);
      if (samples.empty()) throw DataError("no frames in split " + split);
      std::vector<SubstratePrediction> preds;
      std::vector<std::array<double, kNumSubstrates>> scores;
      std::vector<SubstrateSet> labels;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        preds.push_back({index[i].first, index[i].second, model->predict(samples[i].pixels)});
        scores.push_back(preds.back().scores);
        labels.push_back(samples[i].labels);
      }
      const auto e = substrate_ap(scores, labels);
      const auto out = ensure_out(g.out);
      write_jsonl((out / "substrate_predictions.jsonl").string(), preds);
      std::vector<SubstrateRow> rows{{model->combined() ? "combined" : "single", 0.0, e.map, e}};
      const auto csv = substrate_table_csv(rows);
      write_text_file(out / "substrate_table.csv", csv);
      std::cout << csv;
      return 0;
    }

    if (pipe->parsed()) {
      PipelineParams p = pipeline_params_from_json(section(cfg_json, "pipeline"));
      if (tau) p.tau = *tau;
      if (gamma) p.gamma = *gamma;
      p.validate();
      const auto ds = load_dataset(data);
      const auto videos = ds.split(parse_split(split));
      const auto out = ensure_out(g.out);
      std::vector<std::vector<Detection>> dets;
      for (const auto* v : videos) {
        if (use_gt) {
          dets.push_back(gt_detections(*v));
        } else {
          if (checkpoint.empty()) throw DataError("pipeline needs --checkpoint or --gt-detections");
          bool hit = false;
          dets.push_back(cached_detections(checkpoint, *v, out / "detections", default_workers(g.workers), &hit));
          std::cerr << v->id() << ": " << (hit ? "cached detections" : "inferred all frames") << "\n";
        }
      }
      auto r = count_videos(videos, dets, p);
      write_jsonl((out / "tracks.jsonl").string(), r.tracks);
      std::string counts = "species,predicted,ground truth\n";
      for (int s = 0; s < kNumSpecies; ++s)
        counts += std::string(kSpeciesNames[s]) + "," + std::to_string(r.predicted[s]) + "," +
                  std::to_string(r.truth[s]) + "\n";
      write_text_file(out / "counts.csv", counts);
      std::vector<CountingRow> rows{{static_cast<double>(p.gamma), p.tau, r.errors}};
      const auto csv = counting_table_csv(rows);
      write_text_file(out / "counting_errors.csv", csv);
      write_json_file(out / "pipeline.json", to_json(p));
      std::cout << counts << csv;
      for (auto s : r.errors.excluded) std::cout << "excluded (no ground truth): " << name(s) << "\n";
      return 0;
    }

    if (sweep->parsed()) {
      auto grid = sweep_grid_from_json(grid_path.empty() ? cfg_json : read_json_file(grid_path));
      if (g.repeat_set) grid.repeat = g.repeat;
      if (g.seed_set) grid.base.seed = g.seed;
      const auto ds = load_dataset(data);
      const auto out = ensure_out(g.out);
      SweepStats stats;
      const auto rows = run_sweep(grid, ds, out, default_workers(g.workers), &std::cerr, &stats);
      const auto csv = sweep_csv(rows);
      write_text_file(out / "sweep.csv", csv);
      std::cout << csv;
      std::cerr << "trained " << stats.trained << ", reused " << stats.reused << " checkpoints; inferred "
                << stats.inference_runs << " videos, " << stats.cache_hits << " from cache\n";
      return 0;
    }

    if (report->parsed()) {
      const auto out = ensure_out(g.out);
      std::string csv;
      if (!sweep_path.empty()) {
        csv = improvement_csv(parse_sweep_csv(sweep_path));
      } else {
        if (baseline.empty() || variants.empty()) throw DataError("report needs --sweep, or --baseline and --variant");
        const double b = read_json_file(baseline).at("map50").get<double>();
        if (!(b > 0)) throw DataError("baseline mAP must be positive");
        std::vector<double> v;
        for (const auto& path : variants) v.push_back(read_json_file(path).at("map50").get<double>());
        const auto gains = improvement_report(b, v);
        csv = "model,mAP,gain %\nbaseline," + detail::fmt(b) + ",0.0\n";
        for (std::size_t i = 0; i < v.size(); ++i)
          csv += variants[i] + "," + detail::fmt(v[i]) + "," + detail::fmt(100 * gains[i], 1) + "\n";
      }
      write_text_file(out / "improvements.csv", csv);
      std::cout << csv;
      return 0;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
