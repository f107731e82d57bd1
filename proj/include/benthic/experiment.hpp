#pragma once

// Experiment plumbing behind the command-line tool: the on-disk dataset
// layout, training and evaluation drivers, cached detection dumps, the
// counting pipeline over whole videos, and the hyperparameter sweep.
//
// Dataset layout:
//   <root>/dataset.json                  profile, seed, video list with splits
//   <root>/<video>/meta.json             generator config, seed, hashes
//   <root>/<video>/annotations.csv       substrate intervals + count labels
//   <root>/<video>/keyframes.jsonl       partial keyframe boxes
//   <root>/<video>/eval_frames.jsonl     fully annotated bottom-half frames
//   <root>/<video>/frames/NNNNNN.png     rendered frames (subset or all)
// Frames missing on disk are re-rendered from meta.json, which is exact
// because generation is deterministic.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "benthic/annotations.hpp"
#include "benthic/detector/dataset.hpp"
#include "benthic/detector/train.hpp"
#include "benthic/evaluate.hpp"
#include "benthic/image.hpp"
#include "benthic/records.hpp"
#include "benthic/substrate.hpp"
#include "benthic/synthgen.hpp"
#include "benthic/tracker/byte.hpp"

namespace benthic {

namespace fs = std::filesystem;

inline std::string_view name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(s) + "'");
}

inline nlohmann::json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

inline void write_json_file(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

inline void write_text_file(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << s;
}

inline std::string frame_filename(long f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06ld.png", f);
  return buf;
}

// ---- generation -------------------------------------------------------------

/// Desk-scale default: 256x256 frames, 2-minute videos, 3 train / 1 val /
/// 1 test sequences, half of the objects withheld from the keyframes.
struct DatasetProfile {
  SceneConfig scene = SceneConfig::defaults();
  int train_videos = 3, val_videos = 1, test_videos = 1;
  double withhold = 0.5;
  bool all_frames = false;  // otherwise only keyframes, eval frames and 1 fps samples
};

inline nlohmann::json to_json(const DatasetProfile& p) {
  return {{"scene", to_json(p.scene)},          {"train_videos", p.train_videos},
          {"val_videos", p.val_videos},         {"test_videos", p.test_videos},
          {"withhold", p.withhold},             {"all_frames", p.all_frames}};
}

inline DatasetProfile dataset_profile_from_json(const nlohmann::json& j) {
  DatasetProfile p;
  try {
    if (j.contains("scene")) p.scene = scene_config_from_json(j.at("scene"));
    p.train_videos = j.value("train_videos", p.train_videos);
    p.val_videos = j.value("val_videos", p.val_videos);
    p.test_videos = j.value("test_videos", p.test_videos);
    p.withhold = j.value("withhold", p.withhold);
    p.all_frames = j.value("all_frames", p.all_frames);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset profile: ") + e.what());
  }
  p.scene.validate();
  if (p.train_videos < 1 || p.val_videos < 0 || p.test_videos < 0)
    throw DataError("need at least one training video");
  return p;
}

struct VideoMeta {
  std::string video_id;
  Split split = Split::Train;
  std::uint64_t seed = 0;
  double withhold = 0;
  std::uint64_t withhold_seed = 0;
  long num_frames = 0;
  SceneConfig scene;
};

inline std::string scene_hash(const SceneConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

inline nlohmann::json to_json(const VideoMeta& m) {
  return {{"video", m.video_id},
          {"split", std::string(name(m.split))},
          {"seed", m.seed},
          {"withhold", m.withhold},
          {"withhold_seed", m.withhold_seed},
          {"num_frames", m.num_frames},
          {"fps", m.scene.fps},
          {"width", m.scene.width},
          {"height", m.scene.height},
          {"scene_hash", scene_hash(m.scene)},
          {"scene", to_json(m.scene)}};
}

inline VideoMeta video_meta_from_json(const nlohmann::json& j) {
  VideoMeta m;
  try {
    m.video_id = j.at("video").get<std::string>();
    m.split = parse_split(j.at("split").get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.withhold = j.at("withhold").get<double>();
    m.withhold_seed = j.at("withhold_seed").get<std::uint64_t>();
    m.num_frames = j.at("num_frames").get<long>();
    m.scene = scene_config_from_json(j.at("scene"));
    if (scene_hash(m.scene) != j.at("scene_hash").get<std::string>())
      throw DataError("video '" + m.video_id + "': scene hash mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("meta.json: ") + e.what());
  }
  return m;
}

/// Per-video seed derived from the dataset seed (splitmix64 step).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (k + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline void write_video(const fs::path& dir, const SyntheticSequence& seq, const VideoMeta& meta,
                        bool all_frames) {
  const auto part = emit_partial_training_set(seq, meta.withhold, meta.withhold_seed);
  fs::create_directories(dir / "frames");
  write_json_file(dir / "meta.json", to_json(meta));
  write_annotation_csv((dir / "annotations.csv").string(), seq.annotations());
  write_jsonl((dir / "keyframes.jsonl").string(), part.keyframes);
  write_jsonl((dir / "eval_frames.jsonl").string(), part.eval_frames);
  std::set<long> frames;
  if (all_frames) {
    for (long f = 0; f < seq.num_frames; ++f) frames.insert(f);
  } else {
    for (const auto& k : part.keyframes) frames.insert(k.frame);
    for (const auto& g : part.eval_frames) frames.insert(g.frame);
    for (long f : sample_test_wv(seq.num_frames, seq.config.fps)) frames.insert(f);
  }
  for (long f : frames) write_png((dir / "frames" / frame_filename(f)).string(), seq.render(f));
}

/// Generates every video of the profile under `root`.
inline std::vector<VideoMeta> write_dataset(const DatasetProfile& profile, std::uint64_t seed, const fs::path& root) {
  profile.scene.validate();
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw DataError("cannot create " + root.string() + ": " + ec.message());
  std::vector<VideoMeta> metas;
  auto add = [&](Split split, int count) {
    for (int i = 0; i < count; ++i) {
      VideoMeta m;
      m.video_id = std::string(name(split)) + "_" + std::to_string(i);
      m.split = split;
      m.seed = derive_seed(seed, metas.size());
      m.withhold = split == Split::Train ? profile.withhold : 0.0;
      m.withhold_seed = derive_seed(m.seed, 7);
      m.scene = profile.scene;
      m.num_frames = profile.scene.num_frames();
      metas.push_back(m);
    }
  };
  add(Split::Train, profile.train_videos);
  add(Split::Val, profile.val_videos);
  add(Split::Test, profile.test_videos);
  nlohmann::json videos = nlohmann::json::array();
  for (const auto& m : metas) {
    const auto seq = generate_sequence(m.scene, m.seed, m.video_id);
    write_video(root / m.video_id, seq, m, profile.all_frames);
    videos.push_back({{"video", m.video_id}, {"split", std::string(name(m.split))}});
  }
  write_json_file(root / "dataset.json", {{"seed", seed}, {"profile", to_json(profile)}, {"videos", videos}});
  return metas;
}

// ---- loading ------------------------------------------------------------------

class VideoData {
 public:
  explicit VideoData(fs::path dir) : dir_(std::move(dir)) {
    meta_ = video_meta_from_json(read_json_file(dir_ / "meta.json"));
    annotations_ = parse_annotation_csv((dir_ / "annotations.csv").string());
    keyframes_ = read_keyframes((dir_ / "keyframes.jsonl").string());
    eval_frames_ = read_frame_gt((dir_ / "eval_frames.jsonl").string());
  }

  const VideoMeta& meta() const { return meta_; }
  const std::string& id() const { return meta_.video_id; }
  const AnnotationSet& annotations() const { return annotations_; }
  const std::vector<KeyframeBox>& keyframes() const { return keyframes_; }
  const std::vector<FrameGroundTruth>& eval_frames() const { return eval_frames_; }
  double fps() const { return meta_.scene.fps; }
  long num_frames() const { return meta_.num_frames; }
  int height() const { return meta_.scene.height; }

  Image frame(long f) const {
    if (f < 0 || f >= meta_.num_frames) throw DataError(id() + ": frame " + std::to_string(f) + " out of range");
    const auto p = dir_ / "frames" / frame_filename(f);
    if (fs::exists(p)) return read_png(p.string());
    return sequence().render(f);
  }

  FrameSource source() const {
    return [this](long f) { return frame(f); };
  }

  /// The generating sequence, rebuilt from meta.json on first use.
  const SyntheticSequence& sequence() const {
    std::lock_guard lock(mu_);
    if (!seq_) {
      seq_ = std::make_unique<SyntheticSequence>(generate_sequence(meta_.scene, meta_.seed, meta_.video_id));
      if (seq_->num_frames != meta_.num_frames) throw DataError(id() + ": regenerated sequence differs from meta");
    }
    return *seq_;
  }

 private:
  fs::path dir_;
  VideoMeta meta_;
  AnnotationSet annotations_;
  std::vector<KeyframeBox> keyframes_;
  std::vector<FrameGroundTruth> eval_frames_;
  mutable std::mutex mu_;
  mutable std::unique_ptr<SyntheticSequence> seq_;
};

struct Dataset {
  fs::path root;
  std::vector<std::unique_ptr<VideoData>> videos;

  std::vector<const VideoData*> split(Split s) const {
    std::vector<const VideoData*> out;
    for (const auto& v : videos)
      if (v->meta().split == s) out.push_back(v.get());
    return out;
  }
};

inline Dataset load_dataset(const fs::path& root) {
  if (!fs::exists(root / "dataset.json")) throw DataError("no dataset at " + root.string());
  const auto j = read_json_file(root / "dataset.json");
  Dataset d;
  d.root = root;
  try {
    for (const auto& v : j.at("videos")) d.videos.push_back(std::make_unique<VideoData>(root / v.at("video").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset.json: " + std::string(e.what()));
  }
  return d;
}

template <typename T>
std::vector<Example<T>> training_examples(const std::vector<const VideoData*>& videos) {
  std::vector<Example<T>> out;
  for (const auto* v : videos) {
    auto ex = examples_from_keyframes<T>(v->keyframes(), v->annotations().intervals, v->fps(), v->source());
    for (auto& e : ex) out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
EvalSet<T> evaluation_set(const std::vector<const VideoData*>& videos) {
  EvalSet<T> out;
  for (const auto* v : videos) {
    auto s = eval_set_from_frames<T>(v->eval_frames(), v->source());
    for (auto& i : s.images) out.images.push_back(std::move(i));
    for (auto& f : s.frames) out.frames.push_back(std::move(f));
  }
  return out;
}

inline std::vector<FrameGroundTruth> all_eval_frames(const std::vector<const VideoData*>& videos) {
  std::vector<FrameGroundTruth> out;
  for (const auto* v : videos) out.insert(out.end(), v->eval_frames().begin(), v->eval_frames().end());
  return out;
}

/// One sample per second of video, labelled from the substrate intervals.
inline std::vector<SubstrateSample> substrate_samples(const std::vector<const VideoData*>& videos, int downsample,
                                                      std::vector<std::pair<std::string, long>>* index = nullptr) {
  std::vector<SubstrateSample> out;
  for (const auto* v : videos)
    for (long f : sample_test_wv(v->num_frames(), v->fps())) {
      out.push_back({substrate_input(v->frame(f), downsample),
                     frame_substrate_labels(v->annotations().intervals, static_cast<double>(f) / v->fps())});
      if (index) index->emplace_back(v->id(), f);
    }
  return out;
}

// ---- detection dumps ------------------------------------------------------------

inline fs::path detection_cache_path(const fs::path& cache_dir, const std::string& checkpoint_hash,
                                     const std::string& video) {
  return cache_dir / (checkpoint_hash + "_" + video + ".jsonl");
}

/// Detections on every frame of `video`, cached on disk under the
/// (checkpoint hash, video) key. Inference is split across `workers`
/// threads, each with its own copy of the model.
inline std::vector<Detection> cached_detections(const fs::path& checkpoint, const VideoData& video,
                                                const fs::path& cache_dir, int workers = 1, bool* hit = nullptr) {
  const std::string hash = file_hash(checkpoint.string());
  const auto path = detection_cache_path(cache_dir, hash, video.id());
  const auto meta_path = fs::path(path.string() + ".meta.json");
  if (fs::exists(path) && fs::exists(meta_path)) {
    const auto m = read_json_file(meta_path);
    if (m.value("checkpoint_hash", "") != hash || m.value("video", "") != video.id())
      throw DataError(path.string() + ": cache key mismatch");
    if (hit) *hit = true;
    return read_detections(path.string());
  }
  if (hit) *hit = false;
  fs::create_directories(cache_dir);
  workers = std::max(1, workers);
  std::vector<std::vector<Detection>> per_frame(video.num_frames());
  std::atomic<long> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto work = [&] {
    try {
      std::string config_hash_unused;
      auto model = load_checkpoint<float>(checkpoint.string(), &config_hash_unused);
      for (long f; (f = next++) < video.num_frames();)
        per_frame[f] = model->detect(to_input<float>(video.frame(f)), video.id(), f);
    } catch (...) {
      std::lock_guard lock(err_mu);
      if (!err) err = std::current_exception();
      next = video.num_frames();
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < workers; ++i) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
  std::vector<Detection> out;
  for (auto& v : per_frame) out.insert(out.end(), v.begin(), v.end());
  write_jsonl(path.string(), out);
  std::string cfg_hash;
  load_checkpoint<float>(checkpoint.string(), &cfg_hash);
  write_json_file(meta_path, {{"checkpoint_hash", hash}, {"config_hash", cfg_hash}, {"video", video.id()},
                              {"num_frames", video.num_frames()}});
  return out;
}

/// Ground-truth boxes of every frame as score-1 detections.
inline std::vector<Detection> gt_detections(const VideoData& video) {
  const auto& seq = video.sequence();
  std::vector<Detection> out;
  for (long f = 0; f < seq.num_frames; ++f)
    for (const auto& lb : seq.boxes_at(f)) out.push_back({video.id(), f, lb.species, lb.box, 1.0});
  return out;
}

// ---- counting ---------------------------------------------------------------------

struct CountingResult {
  std::array<long, kNumSpecies> predicted{};
  std::array<long, kNumSpecies> truth{};
  CountingErrors errors;
  std::vector<Track> tracks;
};

/// tau filter, tracking, gamma filter and bottom-contact counting over the
/// given videos; `detections[i]` belongs to `videos[i]`.
inline CountingResult count_videos(const std::vector<const VideoData*>& videos,
                                   const std::vector<std::vector<Detection>>& detections, const PipelineParams& p) {
  CountingResult r;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    auto tracks = run_pipeline(detections[i], p);
    const auto c = count_cabof(tracks, videos[i]->height());
    const auto t = cabof_totals(videos[i]->annotations().cabofs);
    for (int s = 0; s < kNumSpecies; ++s) r.predicted[s] += c[s], r.truth[s] += t[s];
    for (auto& tr : tracks) r.tracks.push_back(std::move(tr));
  }
  r.errors = relative_errors(r.predicted, r.truth);
  return r;
}

// ---- sweep --------------------------------------------------------------------------

struct SweepGrid {
  std::vector<double> lr, alpha, beta, rho, tau;
  std::vector<int> gamma;
  int repeat = 4;
  DetectorConfig base;
  PipelineParams pipeline;
};

inline SweepGrid sweep_grid_from_json(const nlohmann::json& j) {
  SweepGrid g;
  try {
    if (j.contains("detector")) g.base = detector_config_from_json(j.at("detector"));
    if (j.contains("pipeline")) g.pipeline = pipeline_params_from_json(j.at("pipeline"));
    auto list = [&](const char* key, double fallback) {
      return j.contains(key) ? j.at(key).get<std::vector<double>>() : std::vector<double>{fallback};
    };
    g.lr = list("lr", g.base.lr);
    g.alpha = list("alpha", g.base.alpha);
    g.beta = list("beta", g.base.beta);
    g.rho = list("rho", g.base.rho);
    g.tau = list("tau", g.pipeline.tau);
    g.gamma = j.contains("gamma") ? j.at("gamma").get<std::vector<int>>() : std::vector<int>{g.pipeline.gamma};
    g.repeat = j.value("repeat", g.repeat);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("sweep grid: ") + e.what());
  }
  if (g.repeat < 1) throw DataError("repeat must be >= 1");
  for (auto* v : {&g.lr, &g.alpha, &g.beta, &g.rho, &g.tau})
    if (v->empty()) throw DataError("sweep grid lists must be non-empty");
  if (g.gamma.empty()) throw DataError("sweep grid lists must be non-empty");
  return g;
}

struct MeanStd {
  double mean = 0, std = 0;
};

/// Sample standard deviation (n - 1); 0 for a single value.
inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

struct SweepRow {
  double lr = 0, alpha = 0, beta = 0, rho = 0, tau = 0;
  int gamma = 0;
  std::vector<std::uint64_t> seeds;
  MeanStd val_map, test_map, val_error, test_error;
};

struct SweepStats {
  int trained = 0;          // detector trainings run
  int reused = 0;           // checkpoints found on disk
  int inference_runs = 0;   // videos inferred at full frame rate
  int cache_hits = 0;       // videos served from detection dumps
};

/// One detector run of the grid and everything measured from it.
struct SweepJob {
  DetectorConfig cfg;
  double val_map = 0, test_map = 0;
  std::map<std::pair<double, int>, std::pair<double, double>> errors;  // (tau, gamma) -> (val, test)
};

/// Runs `jobs[i]` for all i on `workers` threads (each job sequential).
inline void run_pool(std::size_t jobs, int workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  auto loop = [&] {
    for (std::size_t i; (i = next++) < jobs;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!err) err = std::current_exception();
        next = jobs;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < std::max(1, workers); ++w) pool.emplace_back(loop);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

/// Trains (or reuses) one detector per (lr, alpha, beta, rho, repeat),
/// evaluates val/test mAP, and evaluates every (tau, gamma) on cached
/// full-frame-rate detections. Rows are ordered lr, alpha, beta, rho, tau,
/// gamma as listed in the grid.
inline std::vector<SweepRow> run_sweep(const SweepGrid& grid, const Dataset& data, const fs::path& out,
                                       int workers = 1, std::ostream* log = nullptr, SweepStats* stats = nullptr) {
  const auto train_v = data.split(Split::Train), val_v = data.split(Split::Val), test_v = data.split(Split::Test);
  const auto train = training_examples<float>(train_v);
  const auto val = evaluation_set<float>(val_v);
  const auto test = evaluation_set<float>(test_v);
  fs::create_directories(out / "runs");
  const fs::path cache = out / "detections";

  std::vector<SweepJob> jobs;
  for (double lr : grid.lr)
    for (double a : grid.alpha)
      for (double b : grid.beta)
        for (double r : grid.rho)
          for (int k = 0; k < grid.repeat; ++k) {
            SweepJob j;
            j.cfg = grid.base;
            j.cfg.lr = lr, j.cfg.alpha = a, j.cfg.beta = b, j.cfg.rho = r;
            j.cfg.seed = grid.base.seed + static_cast<std::uint64_t>(k);
            j.cfg.validate();
            jobs.push_back(j);
          }

  std::mutex mu;
  SweepStats local;
  run_pool(jobs.size(), workers, [&](std::size_t i) {
    auto& job = jobs[i];
    const fs::path dir = out / "runs" / config_hash(job.cfg);
    const fs::path ckpt = dir / "detector.ckpt";
    std::unique_ptr<Detector<float>> model;
    if (fs::exists(ckpt)) {
      model = load_checkpoint<float>(ckpt.string());
      std::lock_guard lock(mu);
      ++local.reused;
    } else {
      fs::create_directories(dir);
      auto res = train_detector<float>(job.cfg, train, val);
      model = std::move(res.model);
      save_checkpoint(ckpt.string(), *model);
      std::lock_guard lock(mu);
      ++local.trained;
    }
    job.val_map = val.images.empty() ? 0.0 : validation_map(*model, val);
    job.test_map = test.images.empty() ? 0.0 : validation_map(*model, test);
    std::vector<std::vector<Detection>> val_d, test_d;
    for (auto [vids, dst] : {std::pair{&val_v, &val_d}, std::pair{&test_v, &test_d}})
      for (const auto* v : *vids) {
        bool hit = false;
        dst->push_back(cached_detections(ckpt, *v, cache, 1, &hit));
        std::lock_guard lock(mu);
        ++(hit ? local.cache_hits : local.inference_runs);
      }
    for (double tau : grid.tau)
      for (int gamma : grid.gamma) {
        PipelineParams p = grid.pipeline;
        p.tau = tau, p.gamma = gamma;
        const double ve = val_v.empty() ? 0.0 : count_videos(val_v, val_d, p).errors.mean_abs;
        const double te = test_v.empty() ? 0.0 : count_videos(test_v, test_d, p).errors.mean_abs;
        job.errors[{tau, gamma}] = {ve, te};
      }
    if (log) {
      std::lock_guard lock(mu);
      *log << "run " << config_hash(job.cfg) << " lr " << job.cfg.lr << " alpha " << job.cfg.alpha << " beta "
           << job.cfg.beta << " rho " << job.cfg.rho << " seed " << job.cfg.seed << ": val mAP " << job.val_map
           << ", test mAP " << job.test_map << std::endl;
    }
  });
  if (stats) *stats = local;

  std::vector<SweepRow> rows;
  std::size_t base = 0;
  for (double lr : grid.lr)
    for (double a : grid.alpha)
      for (double b : grid.beta)
        for (double r : grid.rho) {
          for (double tau : grid.tau)
            for (int gamma : grid.gamma) {
              SweepRow row{lr, a, b, r, tau, gamma, {}, {}, {}, {}, {}};
              std::vector<double> vm, tm, ve, te;
              for (int k = 0; k < grid.repeat; ++k) {
                const auto& j = jobs[base + static_cast<std::size_t>(k)];
                row.seeds.push_back(j.cfg.seed);
                vm.push_back(j.val_map);
                tm.push_back(j.test_map);
                const auto [v, t] = j.errors.at({tau, gamma});
                ve.push_back(v);
                te.push_back(t);
              }
              row.val_map = mean_std(vm), row.test_map = mean_std(tm);
              row.val_error = mean_std(ve), row.test_error = mean_std(te);
              rows.push_back(row);
            }
          base += static_cast<std::size_t>(grid.repeat);
        }
  return rows;
}

/// Learning-rate / alpha / beta / rho / val mAP / test mAP first, as in the
/// hyperparameter-search tables, then the counting filters and errors.
inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "lr,alpha,beta,rho,val mAP,test mAP,val mAP std,test mAP std,tau,gamma,val error,test error,"
        "val error std,test error std,repeats,seeds\n";
  for (const auto& r : rows) {
    std::string seeds;
    for (std::size_t i = 0; i < r.seeds.size(); ++i) seeds += (i ? ";" : "") + std::to_string(r.seeds[i]);
    os << r.lr << ',' << r.alpha << ',' << r.beta << ',' << r.rho << ',' << r.val_map.mean << ','
       << r.test_map.mean << ',' << r.val_map.std << ',' << r.test_map.std << ',' << r.tau << ',' << r.gamma << ','
       << r.val_error.mean << ',' << r.test_error.mean << ',' << r.val_error.std << ',' << r.test_error.std << ','
       << r.seeds.size() << ',' << seeds << '\n';
  }
  return os.str();
}

inline std::vector<SweepRow> parse_sweep_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::string line;
  std::getline(in, line);
  std::vector<SweepRow> rows;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 16) throw DataError(path + ":" + std::to_string(lineno) + ": expected 16 fields");
    try {
      SweepRow r;
      r.lr = std::stod(f[0]), r.alpha = std::stod(f[1]), r.beta = std::stod(f[2]), r.rho = std::stod(f[3]);
      r.val_map.mean = std::stod(f[4]), r.test_map.mean = std::stod(f[5]);
      r.val_map.std = std::stod(f[6]), r.test_map.std = std::stod(f[7]);
      r.tau = std::stod(f[8]), r.gamma = std::stoi(f[9]);
      r.val_error.mean = std::stod(f[10]), r.test_error.mean = std::stod(f[11]);
      r.val_error.std = std::stod(f[12]), r.test_error.std = std::stod(f[13]);
      std::stringstream ss(f[15]);
      for (std::string s; std::getline(ss, s, ';');) r.seeds.push_back(std::stoull(s));
      rows.push_back(r);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

/// Relative test-mAP gain of every distinct detector setting over the
/// vanilla one (alpha = beta = rho = 0; the best one by val mAP if several).
inline std::string improvement_csv(const std::vector<SweepRow>& rows) {
  std::vector<const SweepRow*> models;
  for (const auto& r : rows) {
    bool seen = false;
    for (const auto* m : models)
      seen |= m->lr == r.lr && m->alpha == r.alpha && m->beta == r.beta && m->rho == r.rho;
    if (!seen) models.push_back(&r);
  }
  const SweepRow* base = nullptr;
  for (const auto* m : models)
    if (m->alpha == 0 && m->beta == 0 && m->rho == 0 && (!base || m->val_map.mean > base->val_map.mean)) base = m;
  if (!base) throw DataError("sweep has no vanilla (alpha = beta = rho = 0) row to compare against");
  if (!(base->test_map.mean > 0)) throw DataError("vanilla test mAP is zero; gains undefined");
  std::vector<double> variants;
  for (const auto* m : models) variants.push_back(m->test_map.mean);
  const auto gains = improvement_report(base->test_map.mean, variants);
  std::ostringstream os;
  os << "lr,alpha,beta,rho,val mAP,test mAP,gain %\n";
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto* m = models[i];
    os << m->lr << ',' << m->alpha << ',' << m->beta << ',' << m->rho << ',' << detail::fmt(m->val_map.mean) << ','
       << detail::fmt(m->test_map.mean) << ',' << detail::fmt(100 * gains[i], 1) << '\n';
  }
  return os.str();
}

}  // namespace benthic
