#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "benthic/types.hpp"

namespace benthic {

struct DetectorConfig {
  // Context-driven extensions
  double alpha = 0;  // context loss weight
  double beta = 0;   // global feature scale; 0 disables fusion
  double rho = 0;    // fraction of sampled RPN negatives dropped

  // Optimisation
  double lr = 1e-3;
  std::string optimizer = "adam";  // "adam" or "sgd"
  double momentum = 0.9;
  double weight_decay = 0;
  int batch_size = 2;
  int max_epochs = 15;
  std::uint64_t seed = 0;

  // Input geometry
  int input_width = 256;
  int input_height = 256;

  // Backbone: one entry per stage
  std::vector<int> backbone_channels{8, 16, 32, 32};
  std::vector<int> backbone_strides{2, 2, 2, 1};
  std::vector<int> backbone_kernels{3, 3, 3, 1};

  // Region proposal network
  std::vector<double> anchor_sizes{16, 32};
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  int rpn_channels = 32;
  int rpn_sample_size = 256;
  double rpn_positive_fraction = 0.5;
  double rpn_fg_iou = 0.7;
  double rpn_bg_iou = 0.3;
  double rpn_nms = 0.7;
  int rpn_pre_nms_top_n_train = 600;
  int rpn_post_nms_top_n_train = 300;
  int rpn_pre_nms_top_n_test = 300;
  int rpn_post_nms_top_n_test = 100;

  // Box head
  int roi_pool_size = 4;
  int roi_sample_size = 128;
  double roi_positive_fraction = 0.25;
  double roi_fg_iou = 0.5;
  int box_feature_dim = 1024;
  int global_feature_dim = 0;  // 0: same as box_feature_dim

  // Inference
  double score_thresh = 0.05;
  double box_nms = 0.5;
  int detections_per_img = 100;

  /// Per-substrate positive weights for the context loss. Empty: derived
  /// from the training split as #negative / #positive frames.
  std::vector<double> context_pos_weight;

  int global_dim() const { return global_feature_dim > 0 ? global_feature_dim : box_feature_dim; }
  int feature_stride() const {
    int s = 1;
    for (int v : backbone_strides) s *= v;
    return s;
  }
  int num_anchors() const { return static_cast<int>(anchor_sizes.size() * anchor_ratios.size()); }
  void validate() const;
};

inline void DetectorConfig::validate() const {
  if (alpha < 0) throw DataError("alpha must be >= 0");
  if (beta < 0) throw DataError("beta must be >= 0");
  if (rho < 0 || rho > 1) throw DataError("rho must be in [0,1]");
  if (!(lr > 0)) throw DataError("lr must be positive");
  if (optimizer != "adam" && optimizer != "sgd") throw DataError("optimizer must be adam or sgd");
  if (batch_size <= 0 || max_epochs <= 0) throw DataError("batch_size and max_epochs must be positive");
  if (input_width <= 0 || input_height <= 0) throw DataError("input size must be positive");
  const auto n = backbone_channels.size();
  if (n == 0 || backbone_strides.size() != n || backbone_kernels.size() != n)
    throw DataError("backbone channel/stride/kernel lists must have equal non-zero length");
  for (std::size_t i = 0; i < n; ++i)
    if (backbone_channels[i] <= 0 || backbone_strides[i] <= 0 || backbone_kernels[i] <= 0 ||
        backbone_kernels[i] % 2 == 0)
      throw DataError("backbone dims must be positive with odd kernels");
  if (anchor_sizes.empty() || anchor_ratios.empty()) throw DataError("anchors must be non-empty");
  if (rpn_channels <= 0 || rpn_sample_size <= 0 || roi_sample_size <= 0 || roi_pool_size <= 0)
    throw DataError("dims must be positive");
  if (!(rpn_positive_fraction > 0 && rpn_positive_fraction < 1) ||
      !(roi_positive_fraction > 0 && roi_positive_fraction < 1))
    throw DataError("positive fractions must be in (0,1)");
  if (box_feature_dim <= 0 || global_feature_dim < 0) throw DataError("feature dims must be positive");
  if (!context_pos_weight.empty() && context_pos_weight.size() != kNumSubstrates)
    throw DataError("context_pos_weight needs one entry per substrate");
}

inline nlohmann::json to_json(const DetectorConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"rho", c.rho},
          {"lr", c.lr},
          {"optimizer", c.optimizer},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"seed", c.seed},
          {"input_width", c.input_width},
          {"input_height", c.input_height},
          {"backbone_channels", c.backbone_channels},
          {"backbone_strides", c.backbone_strides},
          {"backbone_kernels", c.backbone_kernels},
          {"anchor_sizes", c.anchor_sizes},
          {"anchor_ratios", c.anchor_ratios},
          {"rpn_channels", c.rpn_channels},
          {"rpn_sample_size", c.rpn_sample_size},
          {"rpn_positive_fraction", c.rpn_positive_fraction},
          {"rpn_fg_iou", c.rpn_fg_iou},
          {"rpn_bg_iou", c.rpn_bg_iou},
          {"rpn_nms", c.rpn_nms},
          {"rpn_pre_nms_top_n_train", c.rpn_pre_nms_top_n_train},
          {"rpn_post_nms_top_n_train", c.rpn_post_nms_top_n_train},
          {"rpn_pre_nms_top_n_test", c.rpn_pre_nms_top_n_test},
          {"rpn_post_nms_top_n_test", c.rpn_post_nms_top_n_test},
          {"roi_pool_size", c.roi_pool_size},
          {"roi_sample_size", c.roi_sample_size},
          {"roi_positive_fraction", c.roi_positive_fraction},
          {"roi_fg_iou", c.roi_fg_iou},
          {"box_feature_dim", c.box_feature_dim},
          {"global_feature_dim", c.global_feature_dim},
          {"score_thresh", c.score_thresh},
          {"box_nms", c.box_nms},
          {"detections_per_img", c.detections_per_img},
          {"context_pos_weight", c.context_pos_weight}};
}

namespace detail {
template <typename V>
void read_field(const nlohmann::json& j, const char* key, V& v) {
  if (j.contains(key)) v = j.at(key).get<V>();
}
}  // namespace detail

/// Overlays the keys present in j onto base; unknown keys are an error so
/// typos in config files do not pass silently.
inline DetectorConfig detector_config_from_json(const nlohmann::json& j,
                                                DetectorConfig base = {}) {
  static const nlohmann::json known = to_json(DetectorConfig{});
  if (!j.is_object()) throw DataError("detector config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw DataError("unknown detector config key '" + it.key() + "'");
  auto& c = base;
  try {
    using detail::read_field;
    read_field(j, "alpha", c.alpha);
    read_field(j, "beta", c.beta);
    read_field(j, "rho", c.rho);
    read_field(j, "lr", c.lr);
    read_field(j, "optimizer", c.optimizer);
    read_field(j, "momentum", c.momentum);
    read_field(j, "weight_decay", c.weight_decay);
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "max_epochs", c.max_epochs);
    read_field(j, "seed", c.seed);
    read_field(j, "input_width", c.input_width);
    read_field(j, "input_height", c.input_height);
    read_field(j, "backbone_channels", c.backbone_channels);
    read_field(j, "backbone_strides", c.backbone_strides);
    read_field(j, "backbone_kernels", c.backbone_kernels);
    read_field(j, "anchor_sizes", c.anchor_sizes);
    read_field(j, "anchor_ratios", c.anchor_ratios);
    read_field(j, "rpn_channels", c.rpn_channels);
    read_field(j, "rpn_sample_size", c.rpn_sample_size);
    read_field(j, "rpn_positive_fraction", c.rpn_positive_fraction);
    read_field(j, "rpn_fg_iou", c.rpn_fg_iou);
    read_field(j, "rpn_bg_iou", c.rpn_bg_iou);
    read_field(j, "rpn_nms", c.rpn_nms);
    read_field(j, "rpn_pre_nms_top_n_train", c.rpn_pre_nms_top_n_train);
    read_field(j, "rpn_post_nms_top_n_train", c.rpn_post_nms_top_n_train);
    read_field(j, "rpn_pre_nms_top_n_test", c.rpn_pre_nms_top_n_test);
    read_field(j, "rpn_post_nms_top_n_test", c.rpn_post_nms_top_n_test);
    read_field(j, "roi_pool_size", c.roi_pool_size);
    read_field(j, "roi_sample_size", c.roi_sample_size);
    read_field(j, "roi_positive_fraction", c.roi_positive_fraction);
    read_field(j, "roi_fg_iou", c.roi_fg_iou);
    read_field(j, "box_feature_dim", c.box_feature_dim);
    read_field(j, "global_feature_dim", c.global_feature_dim);
    read_field(j, "score_thresh", c.score_thresh);
    read_field(j, "box_nms", c.box_nms);
    read_field(j, "detections_per_img", c.detections_per_img);
    read_field(j, "context_pos_weight", c.context_pos_weight);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("detector config: ") + e.what());
  }
  c.validate();
  return c;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xF];
  return s;
}

/// Stable identifier of a configuration (keys serialise in sorted order).
inline std::string config_hash(const DetectorConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

}  // namespace benthic
