#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <fstream>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "benthic/detector/model.hpp"
#include "benthic/evaluate.hpp"
#include "benthic/nn/optim.hpp"

namespace benthic {

template <typename T>
struct EvalSet {
  std::vector<FeatureMap<T>> images;
  std::vector<FrameGroundTruth> frames;  // parallel to images
};

struct EpochLog {
  int epoch = 0;
  double loss = 0, l_d = 0, l_p = 0, l_c = 0;  // means over images
  double val_map = 0;
};

struct TrainHooks {
  std::function<void(int epoch, const LossBreakdown&)> on_image;
  std::ostream* log = nullptr;
};

template <typename T>
struct TrainResult {
  std::unique_ptr<Detector<T>> model;  // carries the best epoch's weights
  std::vector<EpochLog> epochs;
  int best_epoch = -1;
  double best_val_map = 0;
};

/// Positive weight per substrate: (#frames without it) / (#frames with it).
template <typename T>
std::vector<double> derive_context_pos_weight(const std::vector<Example<T>>& train) {
  std::vector<double> w(kNumSubstrates, 1.0);
  for (int s = 0; s < kNumSubstrates; ++s) {
    long pos = 0, neg = 0;
    for (const auto& ex : train) {
      if (!ex.substrates) continue;
      (ex.substrates->test(s) ? pos : neg) += 1;
    }
    if (pos > 0) w[s] = static_cast<double>(neg) / static_cast<double>(pos);
  }
  return w;
}

template <typename T>
std::vector<Detection> detect_all(Detector<T>& model, const EvalSet<T>& set) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    auto d = model.detect(set.images[i], set.frames[i].video_id, set.frames[i].frame);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

template <typename T>
double validation_map(Detector<T>& model, const EvalSet<T>& set) {
  if (set.images.empty()) return 0.0;
  const auto dets = detect_all(model, set);
  return map_bottom_half(dets, set.frames).map50;
}

template <typename T>
std::vector<nn::Mat<T>> snapshot(const ParamList<T>& ps) {
  std::vector<nn::Mat<T>> out;
  for (const auto* p : ps) out.push_back(p->value);
  return out;
}

template <typename T>
void restore(const ParamList<T>& ps, const std::vector<nn::Mat<T>>& values) {
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = values[i];
}

/// Trains for cfg.max_epochs epochs and keeps the weights of the epoch with
/// the best validation mAP@0.5 (first epoch wins ties). Deterministic for a
/// fixed config and data order.
template <typename T>
TrainResult<T> train_detector(DetectorConfig cfg, const std::vector<Example<T>>& train,
                              const EvalSet<T>& val, const TrainHooks& hooks = {}) {
  if (train.empty()) throw DataError("empty training set");
  if (cfg.alpha > 0 && cfg.context_pos_weight.empty()) cfg.context_pos_weight = derive_context_pos_weight(train);
  TrainResult<T> res;
  res.model = std::make_unique<Detector<T>>(cfg);
  auto& model = *res.model;
  const auto ps = model.params();
  std::unique_ptr<nn::Adam<T>> adam;
  std::unique_ptr<nn::Sgd<T>> sgd;
  if (cfg.optimizer == "adam")
    adam = std::make_unique<nn::Adam<T>>(ps, cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
  else
    sgd = std::make_unique<nn::Sgd<T>>(ps, cfg.lr, cfg.momentum, cfg.weight_decay);

  std::mt19937_64 rng(cfg.seed ^ 0xD1B54A32D192ED03ull);
  std::vector<std::size_t> order(train.size());
  std::vector<nn::Mat<T>> best;
  res.best_val_map = -1;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      nn::zero_grad(ps);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto lb = model.loss(train[order[k]], rng, nullptr, scale, true);
        if (!std::isfinite(lb.total))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
        if (hooks.on_image) hooks.on_image(epoch, lb);
        log.loss += lb.total, log.l_d += lb.l_d, log.l_p += lb.l_p, log.l_c += lb.l_c;
      }
      if (adam) adam->step();
      else sgd->step();
    }
    const double n = static_cast<double>(train.size());
    log.loss /= n, log.l_d /= n, log.l_p /= n, log.l_c /= n;
    log.val_map = validation_map(model, val);
    if (hooks.log)
      *hooks.log << "epoch " << epoch << " loss " << log.loss << " (d " << log.l_d << ", p " << log.l_p
                 << ", c " << log.l_c << ") val mAP " << log.val_map << std::endl;
    if (log.val_map > res.best_val_map) {
      res.best_val_map = log.val_map;
      res.best_epoch = epoch;
      best = snapshot(ps);
    }
    res.epochs.push_back(log);
  }
  restore(ps, best);
  return res;
}

// ---- checkpoints -------------------------------------------------------------
// Layout: magic line, config hash line, JSON config line, then raw weights.

inline constexpr const char* kCheckpointMagic = "benthic-detector-v1";

template <typename T>
void save_checkpoint(const std::string& path, Detector<T>& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << kCheckpointMagic << '\n' << config_hash(model.config()) << '\n' << to_json(model.config()).dump() << '\n';
  nn::write_params(out, model.params());
  if (!out) throw DataError("failed writing " + path);
}

template <typename T>
std::unique_ptr<Detector<T>> load_checkpoint(const std::string& path, std::string* hash_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path);
  std::string magic, hash, cfg_line;
  std::getline(in, magic);
  std::getline(in, hash);
  std::getline(in, cfg_line);
  if (magic != kCheckpointMagic) throw DataError(path + " is not a detector checkpoint");
  DetectorConfig cfg;
  try {
    cfg = detector_config_from_json(nlohmann::json::parse(cfg_line));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad config block: " + e.what());
  }
  if (config_hash(cfg) != hash) throw DataError(path + ": config hash mismatch");
  auto model = std::make_unique<Detector<T>>(cfg);
  nn::read_params(in, model->params());
  if (hash_out) *hash_out = hash;
  return model;
}

/// Hash of the checkpoint file contents (config and weights).
inline std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes));
}

}  // namespace benthic
