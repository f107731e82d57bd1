#pragma once

// Frame-level substrate classification: one multi-label network, or four
// independent binary networks whose sigmoid outputs are stacked.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "benthic/detector/config.hpp"
#include "benthic/detector/model.hpp"
#include "benthic/detector/train.hpp"
#include "benthic/evaluate.hpp"
#include "benthic/image.hpp"
#include "benthic/nn/layers.hpp"
#include "benthic/nn/optim.hpp"

namespace benthic {

struct SubstrateConfig {
  double lr = 2e-3;
  int batch_size = 8;
  int max_epochs = 10;
  std::uint64_t seed = 0;
  int downsample = 2;  // integer factor applied to frames before the network
  std::vector<int> channels{8, 16, 16};
  std::vector<int> strides{2, 2, 2};

  void validate() const {
    if (!(lr > 0) || batch_size <= 0 || max_epochs <= 0 || downsample <= 0)
      throw DataError("invalid substrate training parameters");
    if (channels.empty() || channels.size() != strides.size())
      throw DataError("substrate channels/strides must be non-empty and equal length");
  }
};

inline nlohmann::json to_json(const SubstrateConfig& c) {
  return {{"lr", c.lr},           {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
          {"seed", c.seed},       {"downsample", c.downsample}, {"channels", c.channels},
          {"strides", c.strides}};
}

inline SubstrateConfig substrate_config_from_json(const nlohmann::json& j, SubstrateConfig c = {}) {
  try {
    detail::read_field(j, "lr", c.lr);
    detail::read_field(j, "batch_size", c.batch_size);
    detail::read_field(j, "max_epochs", c.max_epochs);
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "downsample", c.downsample);
    detail::read_field(j, "channels", c.channels);
    detail::read_field(j, "strides", c.strides);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("substrate config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Small CNN: 3x3 conv stages with ReLU, global average pooling, linear head.
template <typename T>
class SubstrateNet {
 public:
  SubstrateNet(const SubstrateConfig& cfg, int outputs, std::uint64_t seed, const std::string& prefix)
      : head_(prefix + ".head", cfg.channels.back(), outputs) {
    int in = 3;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      convs_.emplace_back(prefix + ".conv" + std::to_string(i), in, cfg.channels[i], 3, cfg.strides[i]);
      in = cfg.channels[i];
    }
    relus_.resize(convs_.size());
    std::mt19937_64 rng(seed);
    for (auto& c : convs_) nn::init_normal(c.weight(), std::sqrt(2.0 / c.weight().value.cols()), rng);
    nn::init_normal(head_.weight(), 0.01, rng);
  }

  int outputs() const { return head_.out_features(); }

  ParamList<T> params() {
    ParamList<T> ps;
    for (auto& c : convs_) c.collect(ps);
    head_.collect(ps);
    return ps;
  }

  /// Logits [1, outputs].
  Mat<T> forward(const FeatureMap<T>& x) {
    FeatureMap<T> f = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      f = convs_[i].forward(f);
      relus_[i].forward_inplace(f.data);
    }
    shape_ = {f.channels, f.height, f.width};
    const Mat<T> pooled = f.data.rowwise().mean().transpose();
    return head_.forward(pooled);
  }

  void backward(const Mat<T>& dlogits) {
    const Mat<T> dpooled = head_.backward(dlogits);
    const auto hw = static_cast<Eigen::Index>(shape_[1]) * shape_[2];
    FeatureMap<T> df(shape_[0], shape_[1], shape_[2]);
    df.data = (dpooled.transpose() / static_cast<T>(hw)).replicate(1, hw);
    for (std::size_t i = convs_.size(); i-- > 0;) {
      relus_[i].backward_inplace(df.data);
      df = convs_[i].backward(df);
    }
  }

 private:
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::ReLU<T>> relus_;
  nn::Linear<T> head_;
  std::array<int, 3> shape_{};
};

struct SubstrateSample {
  FeatureMap<float> pixels;
  SubstrateSet labels;
};

inline FeatureMap<float> substrate_input(const Image& img, int downsample) {
  return to_input<float>(benthic::downsample(img, downsample));
}

/// Either one 4-output network ("single") or four 1-output networks
/// ("combined"), each trained only on its own substrate's bit.
class SubstrateModel {
 public:
  SubstrateModel(SubstrateConfig cfg, bool combined) : cfg_(std::move(cfg)), combined_(combined) {
    cfg_.validate();
    if (combined_)
      for (int s = 0; s < kNumSubstrates; ++s)
        nets_.push_back(std::make_unique<SubstrateNet<float>>(cfg_, 1, cfg_.seed * 31 + s + 1,
                                                              "net" + std::to_string(s)));
    else
      nets_.push_back(std::make_unique<SubstrateNet<float>>(cfg_, kNumSubstrates, cfg_.seed * 31, "net"));
  }

  bool combined() const { return combined_; }
  const SubstrateConfig& config() const { return cfg_; }
  std::size_t num_networks() const { return nets_.size(); }
  SubstrateNet<float>& network(std::size_t i) { return *nets_[i]; }

  /// Sigmoid scores in B, C, M, R order.
  std::array<double, kNumSubstrates> predict(const FeatureMap<float>& x) {
    std::array<double, kNumSubstrates> out{};
    if (combined_) {
      for (int s = 0; s < kNumSubstrates; ++s) out[s] = detail::sigmoid(nets_[s]->forward(x)(0, 0));
    } else {
      const auto z = nets_[0]->forward(x);
      for (int s = 0; s < kNumSubstrates; ++s) out[s] = detail::sigmoid(z(0, s));
    }
    return out;
  }

  ParamList<float> params() {
    ParamList<float> ps;
    for (auto& n : nets_) {
      auto p = n->params();
      ps.insert(ps.end(), p.begin(), p.end());
    }
    return ps;
  }

 private:
  SubstrateConfig cfg_;
  bool combined_;
  std::vector<std::unique_ptr<SubstrateNet<float>>> nets_;
};

inline SubstrateEval evaluate_substrate(SubstrateModel& model, const std::vector<SubstrateSample>& set) {
  std::vector<std::array<double, kNumSubstrates>> scores;
  std::vector<SubstrateSet> labels;
  for (const auto& s : set) {
    scores.push_back(model.predict(s.pixels));
    labels.push_back(s.labels);
  }
  return substrate_ap(scores, labels);
}

struct SubstrateTrainResult {
  std::unique_ptr<SubstrateModel> model;
  std::vector<double> val_map;  // per epoch; for combined, the stacked-score mAP
  int best_epoch = -1;
};

namespace detail {

/// Trains one network on label bits [first, first + net.outputs()) and
/// keeps the epoch with the best validation mAP over those bits.
inline std::vector<double> train_substrate_net(SubstrateNet<float>& net, const SubstrateConfig& cfg,
                                               int first_bit, const std::vector<SubstrateSample>& train,
                                               const std::vector<SubstrateSample>& val,
                                               std::uint64_t seed, int* best_epoch) {
  const int k = net.outputs();
  const auto ps = net.params();
  nn::Adam<float> opt(ps, cfg.lr);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(train.size());
  std::vector<double> trace;
  std::vector<Mat<float>> best;
  double best_map = -1;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      nn::zero_grad(ps);
      for (std::size_t j = start; j < end; ++j) {
        const auto& s = train[order[j]];
        const Mat<float> z = net.forward(s.pixels);
        Mat<float> dz(1, k);
        for (int c = 0; c < k; ++c) {
          const double y = s.labels.test(first_bit + c) ? 1.0 : 0.0;
          const double g = (sigmoid(z(0, c)) - y) / (k * static_cast<double>(end - start));
          if (!std::isfinite(g)) throw NumericError("non-finite substrate loss at epoch " + std::to_string(epoch));
          dz(0, c) = static_cast<float>(g);
        }
        net.backward(dz);
      }
      opt.step();
    }
    // Validation mAP over this network's own bits.
    double sum = 0;
    int present = 0;
    for (int c = 0; c < k; ++c) {
      std::vector<RankedHit> hits;
      long positives = 0;
      for (const auto& s : val) {
        const bool y = s.labels.test(first_bit + c);
        hits.push_back({sigmoid(net.forward(s.pixels)(0, c)), y});
        positives += y;
      }
      if (auto ap = average_precision_ranked(hits, positives)) sum += *ap, ++present;
    }
    const double m = present ? sum / present : 0.0;
    trace.push_back(m);
    if (m > best_map) {
      best_map = m;
      *best_epoch = epoch;
      best = snapshot(ps);
    }
  }
  restore(ps, best);
  return trace;
}

}  // namespace detail

inline SubstrateTrainResult train_single(const SubstrateConfig& cfg, const std::vector<SubstrateSample>& train,
                                         const std::vector<SubstrateSample>& val) {
  if (train.empty()) throw DataError("empty substrate training set");
  SubstrateTrainResult r;
  r.model = std::make_unique<SubstrateModel>(cfg, false);
  r.val_map = detail::train_substrate_net(r.model->network(0), cfg, 0, train, val.empty() ? train : val,
                                          cfg.seed, &r.best_epoch);
  return r;
}

/// Binary network s sees only bit s of each label vector.
inline SubstrateTrainResult train_combined(const SubstrateConfig& cfg, const std::vector<SubstrateSample>& train,
                                           const std::vector<SubstrateSample>& val) {
  if (train.empty()) throw DataError("empty substrate training set");
  SubstrateTrainResult r;
  r.model = std::make_unique<SubstrateModel>(cfg, true);
  for (int s = 0; s < kNumSubstrates; ++s) {
    std::vector<SubstrateSample> tr, va;
    for (const auto& x : train) {
      SubstrateSet only;
      only.set(0, x.labels.test(s));
      tr.push_back({x.pixels, only});
    }
    for (const auto& x : (val.empty() ? train : val)) {
      SubstrateSet only;
      only.set(0, x.labels.test(s));
      va.push_back({x.pixels, only});
    }
    int best = 0;
    detail::train_substrate_net(r.model->network(s), cfg, 0, tr, va, cfg.seed * 131 + s, &best);
    r.best_epoch = std::max(r.best_epoch, best);
  }
  r.val_map.push_back(evaluate_substrate(*r.model, val.empty() ? train : val).map);
  return r;
}

/// Frames sampled at `rate` per second: indices round(k * fps / rate) for
/// every k whose time k / rate lies inside the video (num_frames / fps).
inline std::vector<long> sample_test_wv(long num_frames, double fps, double rate = 1.0) {
  if (!(fps > 0) || !(rate > 0)) throw DataError("fps and rate must be positive");
  std::vector<long> out;
  const double duration = static_cast<double>(num_frames) / fps;
  for (long k = 0; static_cast<double>(k) / rate < duration - 1e-9; ++k) {
    const long f = std::lround(static_cast<double>(k) * fps / rate);
    if (f >= num_frames) break;
    out.push_back(f);
  }
  return out;
}

// ---- persistence ----------------------------------------------------------------

inline constexpr const char* kSubstrateMagic = "benthic-substrate-v1";

inline void save_substrate_model(const std::string& path, SubstrateModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  nlohmann::json j = to_json(m.config());
  j["combined"] = m.combined();
  const std::string cfg = j.dump();
  out << kSubstrateMagic << '\n' << hex64(fnv1a64(cfg)) << '\n' << cfg << '\n';
  nn::write_params(out, m.params());
}

inline std::unique_ptr<SubstrateModel> load_substrate_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::string magic, hash, cfg;
  std::getline(in, magic);
  std::getline(in, hash);
  std::getline(in, cfg);
  if (magic != kSubstrateMagic) throw DataError(path + " is not a substrate checkpoint");
  if (hex64(fnv1a64(cfg)) != hash) throw DataError(path + ": config hash mismatch");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  const bool combined = j.value("combined", false);
  j.erase("combined");
  auto m = std::make_unique<SubstrateModel>(substrate_config_from_json(j), combined);
  nn::read_params(in, m->params());
  return m;
}

struct SubstratePrediction {
  std::string video_id;
  long frame = 0;
  std::array<double, kNumSubstrates> scores{};
};

inline nlohmann::json to_json(const SubstratePrediction& p) {
  return {{"video", p.video_id}, {"frame", p.frame}, {"scores", p.scores}};
}

}  // namespace benthic
