#pragma once

// Two-stage detector: convolutional backbone, region proposal network,
// RoI-pooled two-layer box head, plus the optional substrate context branch
// (loss weight alpha) and the optional beta-scaled global feature fused into
// every region's box feature.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "benthic/detector/boxes.hpp"
#include "benthic/detector/config.hpp"
#include "benthic/image.hpp"
#include "benthic/nn/layers.hpp"
#include "benthic/records.hpp"

namespace benthic {

using nn::FeatureMap;
using nn::Mat;
using nn::ParamList;

struct LossBreakdown {
  double l_d = 0;  // box head
  double l_p = 0;  // proposal network
  double l_c = 0;  // substrate context
  double total = 0;
  // Term counts behind l_p, for the dropping invariants.
  long rpn_positive = 0;
  long rpn_negative_sampled = 0;
  long rpn_negative_kept = 0;
  long rpn_negative_terms = 0;
  long roi_sampled = 0;
};

/// Everything sampled for one image's loss. Passing a plan back in makes the
/// loss a smooth function of the weights (no re-sampling, fixed proposals).
struct ImagePlan {
  std::vector<int> rpn_pos;  // anchor indices
  std::vector<int> rpn_neg;  // anchor indices kept after dropping
  long rpn_neg_sampled = 0;  // negatives sampled before dropping
  std::vector<std::array<double, 4>> rpn_targets;  // per rpn_pos
  std::vector<Box> rois;
  std::vector<int> roi_labels;  // 0 background, 1 + species index
  std::vector<std::array<double, 4>> roi_targets;
};

template <typename T>
struct Example {
  FeatureMap<T> pixels;
  std::vector<LabeledBox> boxes;
  std::optional<SubstrateSet> substrates;
};

template <typename T>
FeatureMap<T> to_input(const Image& img) {
  FeatureMap<T> f(3, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto* p = img.px(x, y);
      for (int c = 0; c < 3; ++c) f.at(c, y, x) = static_cast<T>((p[c] - 127.5) / 64.0);
    }
  return f;
}

namespace detail {
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double bce_logits(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }
inline double smooth_l1(double d, double beta) {
  const double a = std::abs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}
inline double smooth_l1_grad(double d, double beta) {
  if (std::abs(d) < beta) return d / beta;
  return d > 0 ? 1.0 : -1.0;
}
inline constexpr double kSmoothL1Beta = 1.0 / 9.0;
}  // namespace detail

template <typename T>
class Detector {
 public:
  static constexpr int kClasses = kNumSpecies + 1;  // background first

  explicit Detector(DetectorConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    int in = 3, h = cfg_.input_height, w = cfg_.input_width;
    for (std::size_t i = 0; i < cfg_.backbone_channels.size(); ++i) {
      backbone_.emplace_back("backbone." + std::to_string(i), in, cfg_.backbone_channels[i],
                             cfg_.backbone_kernels[i], cfg_.backbone_strides[i]);
      h = backbone_.back().out_size(h);
      w = backbone_.back().out_size(w);
      in = cfg_.backbone_channels[i];
    }
    backbone_relu_.resize(backbone_.size());
    feat_c_ = in, feat_h_ = h, feat_w_ = w;
    if (h <= 0 || w <= 0) throw DataError("input too small for the backbone");
    rpn_conv_ = std::make_unique<nn::Conv2d<T>>("rpn.conv", in, cfg_.rpn_channels, 3, 1);
    rpn_cls_ = std::make_unique<nn::Conv2d<T>>("rpn.cls", cfg_.rpn_channels, cfg_.num_anchors(), 1, 1);
    rpn_reg_ = std::make_unique<nn::Conv2d<T>>("rpn.reg", cfg_.rpn_channels, 4 * cfg_.num_anchors(), 1, 1);
    roi_align_ = std::make_unique<nn::RoIAlign<T>>(cfg_.roi_pool_size, 1.0 / cfg_.feature_stride(), 2);
    const int pooled = in * cfg_.roi_pool_size * cfg_.roi_pool_size;
    fc6_ = std::make_unique<nn::Linear<T>>("box.fc6", pooled, cfg_.box_feature_dim);
    fc7_ = std::make_unique<nn::Linear<T>>("box.fc7", cfg_.box_feature_dim, cfg_.box_feature_dim);
    const long flat = static_cast<long>(feat_c_) * feat_h_ * feat_w_;
    // Branches are only built when they can contribute, so the all-zero
    // configuration is exactly the plain two-stage detector.
    if (cfg_.beta > 0) gconv_ = std::make_unique<nn::Conv1dReduce<T>>("context.global", flat, cfg_.global_dim());
    if (cfg_.alpha > 0) ctx_ = std::make_unique<nn::Linear<T>>("context.cls", static_cast<int>(flat), kNumSubstrates);
    const int head_in = box_head_input_width();
    cls_ = std::make_unique<nn::Linear<T>>("box.cls", head_in, kClasses);
    reg_ = std::make_unique<nn::Linear<T>>("box.reg", head_in, 4 * kClasses);
    anchors_ = make_anchors(feat_h_, feat_w_, cfg_.feature_stride(), cfg_.anchor_sizes, cfg_.anchor_ratios);
    initialise();
  }

  const DetectorConfig& config() const { return cfg_; }
  int box_head_input_width() const { return cfg_.box_feature_dim + (cfg_.beta > 0 ? cfg_.global_dim() : 0); }
  bool has_context_branch() const { return ctx_ != nullptr; }
  bool has_global_branch() const { return gconv_ != nullptr; }
  std::array<int, 3> feature_shape() const { return {feat_c_, feat_h_, feat_w_}; }
  const std::vector<Box>& anchors() const { return anchors_; }

  ParamList<T> params() {
    ParamList<T> ps;
    for (auto& c : backbone_) c.collect(ps);
    rpn_conv_->collect(ps);
    rpn_cls_->collect(ps);
    rpn_reg_->collect(ps);
    fc6_->collect(ps);
    fc7_->collect(ps);
    if (gconv_) gconv_->collect(ps);
    if (ctx_) ctx_->collect(ps);
    cls_->collect(ps);
    reg_->collect(ps);
    return ps;
  }
  long num_params() { return nn::count_params(params()); }

  // ---- building blocks -------------------------------------------------------

  FeatureMap<T> backbone_forward(const FeatureMap<T>& x) {
    if (x.height != cfg_.input_height || x.width != cfg_.input_width || x.channels != 3)
      throw DataError("frame size " + std::to_string(x.width) + "x" + std::to_string(x.height) +
                      " does not match the model input " + std::to_string(cfg_.input_width) + "x" +
                      std::to_string(cfg_.input_height));
    FeatureMap<T> f = x;
    for (std::size_t i = 0; i < backbone_.size(); ++i) {
      f = backbone_[i].forward(f);
      backbone_relu_[i].forward_inplace(f.data);
    }
    return f;
  }

  FeatureMap<T> backbone_backward(FeatureMap<T> df) {
    for (std::size_t i = backbone_.size(); i-- > 0;) {
      backbone_relu_[i].backward_inplace(df.data);
      df = backbone_[i].backward(df);
    }
    return df;
  }

  static Mat<T> flatten(const FeatureMap<T>& f) {
    return Eigen::Map<const Mat<T>>(f.data.data(), 1, f.data.size());
  }

  /// One logit per substrate, [1, 4]. Requires the context branch.
  Mat<T> context_logits(const FeatureMap<T>& features) {
    if (!ctx_) throw DataError("context branch disabled (alpha == 0)");
    return ctx_->forward(flatten(features));
  }

  /// Learned strided reduction of the flattened features, [1, D_global].
  Mat<T> global_context_vector(const FeatureMap<T>& features) {
    if (!gconv_) throw DataError("global branch disabled (beta == 0)");
    return gconv_->forward(flatten(features));
  }

  /// concat(box, beta * g) per row when beta > 0, else box unchanged.
  static Mat<T> fuse_global(const Mat<T>& box, const Mat<T>& global, double beta) {
    if (beta == 0) return box;
    if (global.rows() != 1) throw DataError("global vector must come from a single image");
    Mat<T> out(box.rows(), box.cols() + global.cols());
    out.leftCols(box.cols()) = box;
    out.rightCols(global.cols()) = (static_cast<T>(beta) * global).replicate(box.rows(), 1);
    return out;
  }

  nn::Linear<T>& context_layer() { return *ctx_; }
  nn::Conv1dReduce<T>& global_layer() { return *gconv_; }

  // ---- training ----------------------------------------------------------------

  /// Loss for one image, optionally followed by a backward pass whose
  /// gradients are scaled by grad_scale and accumulated into params().
  template <typename Rng>
  LossBreakdown loss(const Example<T>& ex, Rng& rng, const ImagePlan* fixed = nullptr,
                     double grad_scale = 1.0, bool backward = true, ImagePlan* plan_out = nullptr) {
    if (cfg_.alpha > 0 && !ex.substrates)
      throw DataError("context loss needs substrate labels (alpha > 0)");
    const FeatureMap<T> feat = backbone_forward(ex.pixels);
    Mat<T> obj, del;
    rpn_forward(feat, obj, del);

    ImagePlan plan;
    if (fixed) {
      plan = *fixed;
    } else {
      plan = make_plan(ex, obj, del, rng);
    }

    LossBreakdown lb;
    const double s = grad_scale;
    // Proposal network
    Mat<T> dobj = Mat<T>::Zero(obj.rows(), obj.cols()), ddel = Mat<T>::Zero(del.rows(), del.cols());
    const long hw = obj.cols();
    const auto n_rpn = static_cast<double>(plan.rpn_pos.size() + plan.rpn_neg.size());
    if (n_rpn > 0) {
      double sum = 0;
      auto term = [&](int i, double y) {
        const long a = i / hw, p = i % hw;
        const double z = obj(a, p);
        sum += detail::bce_logits(z, y);
        dobj(a, p) += static_cast<T>(s * (detail::sigmoid(z) - y) / n_rpn);
      };
      for (std::size_t k = 0; k < plan.rpn_pos.size(); ++k) {
        const int i = plan.rpn_pos[k];
        term(i, 1.0);
        const long a = i / hw, p = i % hw;
        for (int c = 0; c < 4; ++c) {
          const double d = del(a * 4 + c, p) - plan.rpn_targets[k][c];
          sum += detail::smooth_l1(d, detail::kSmoothL1Beta);
          ddel(a * 4 + c, p) += static_cast<T>(s * detail::smooth_l1_grad(d, detail::kSmoothL1Beta) / n_rpn);
        }
      }
      for (int i : plan.rpn_neg) term(i, 0.0);
      lb.l_p = sum / n_rpn;
    }
    lb.rpn_positive = static_cast<long>(plan.rpn_pos.size());
    lb.rpn_negative_sampled = plan.rpn_neg_sampled;
    lb.rpn_negative_kept = static_cast<long>(plan.rpn_neg.size());
    lb.rpn_negative_terms = lb.rpn_negative_kept;

    // Box head
    Mat<T> cls_logits, box_reg, flat, g;
    head_forward(feat, plan.rois, cls_logits, box_reg, flat, g);
    const auto R = static_cast<double>(plan.rois.size());
    Mat<T> dcls = Mat<T>::Zero(cls_logits.rows(), cls_logits.cols());
    Mat<T> dreg = Mat<T>::Zero(box_reg.rows(), box_reg.cols());
    if (R > 0) {
      double sum = 0;
      for (Eigen::Index r = 0; r < cls_logits.rows(); ++r) {
        const int label = plan.roi_labels[r];
        const double m = cls_logits.row(r).maxCoeff();
        double z = 0;
        for (int c = 0; c < kClasses; ++c) z += std::exp(cls_logits(r, c) - m);
        const double lse = m + std::log(z);
        sum += lse - cls_logits(r, label);
        for (int c = 0; c < kClasses; ++c)
          dcls(r, c) = static_cast<T>(s * (std::exp(cls_logits(r, c) - lse) - (c == label ? 1.0 : 0.0)) / R);
        if (label > 0)
          for (int k = 0; k < 4; ++k) {
            const double d = box_reg(r, label * 4 + k) - plan.roi_targets[r][k];
            sum += detail::smooth_l1(d, detail::kSmoothL1Beta);
            dreg(r, label * 4 + k) = static_cast<T>(s * detail::smooth_l1_grad(d, detail::kSmoothL1Beta) / R);
          }
      }
      lb.l_d = sum / R;
    }
    lb.roi_sampled = static_cast<long>(plan.rois.size());

    // Substrate context
    Mat<T> dctx;
    if (ctx_) {
      const Mat<T> z = ctx_->forward(flat);
      dctx = Mat<T>::Zero(1, kNumSubstrates);
      double sum = 0;
      for (int c = 0; c < kNumSubstrates; ++c) {
        const double y = ex.substrates->test(c) ? 1.0 : 0.0;
        const double pw = cfg_.context_pos_weight.empty() ? 1.0 : cfg_.context_pos_weight[c];
        const double zc = z(0, c);
        sum += pw * y * detail::softplus(-zc) + (1 - y) * detail::softplus(zc);
        const double grad = pw * y * (detail::sigmoid(zc) - 1.0) + (1 - y) * detail::sigmoid(zc);
        dctx(0, c) = static_cast<T>(s * cfg_.alpha * grad / kNumSubstrates);
      }
      lb.l_c = sum / kNumSubstrates;
    }
    lb.total = lb.l_d + lb.l_p + cfg_.alpha * lb.l_c;

    if (backward) {
      FeatureMap<T> dfeat = rpn_backward(dobj, ddel);
      head_backward(dcls, dreg, dfeat);
      if (ctx_) {
        const Mat<T> dflat = ctx_->backward(dctx);
        dfeat.data += Eigen::Map<const Mat<T>>(dflat.data(), feat_c_, static_cast<Eigen::Index>(feat_h_) * feat_w_);
      }
      backbone_backward(std::move(dfeat));
    }
    if (plan_out) *plan_out = std::move(plan);
    return lb;
  }

  // ---- inference -------------------------------------------------------------------

  /// Softmax class probabilities [R, 11] for given regions.
  Mat<T> classify_rois(const FeatureMap<T>& pixels, const std::vector<Box>& rois) {
    const FeatureMap<T> feat = backbone_forward(pixels);
    Mat<T> cls_logits, box_reg, flat, g;
    head_forward(feat, rois, cls_logits, box_reg, flat, g);
    return softmax_rows(cls_logits);
  }

  std::vector<Detection> detect(const FeatureMap<T>& pixels, const std::string& video_id, long frame) {
    const FeatureMap<T> feat = backbone_forward(pixels);
    Mat<T> obj, del;
    rpn_forward(feat, obj, del);
    const auto rois = proposals(obj, del, cfg_.rpn_pre_nms_top_n_test, cfg_.rpn_post_nms_top_n_test);
    std::vector<Detection> out;
    if (rois.empty()) return out;
    Mat<T> cls_logits, box_reg, flat, g;
    head_forward(feat, rois, cls_logits, box_reg, flat, g);
    const Mat<T> prob = softmax_rows(cls_logits);
    const BoxCoder coder{{10, 10, 5, 5}};
    for (int c = 1; c < kClasses; ++c) {
      std::vector<Box> boxes;
      std::vector<double> scores;
      for (std::size_t r = 0; r < rois.size(); ++r) {
        const double sc = prob(static_cast<Eigen::Index>(r), c);
        if (sc <= cfg_.score_thresh) continue;
        const auto rr = static_cast<Eigen::Index>(r);
        Box b = coder.decode(rois[r], box_reg(rr, c * 4), box_reg(rr, c * 4 + 1), box_reg(rr, c * 4 + 2),
                             box_reg(rr, c * 4 + 3))
                    .clipped(cfg_.input_width, cfg_.input_height);
        if (!(b.width() >= 1e-2 && b.height() >= 1e-2)) continue;
        boxes.push_back(b);
        scores.push_back(sc);
      }
      for (int k : nms(boxes, scores, cfg_.box_nms))
        out.push_back({video_id, frame, species_at(c - 1), boxes[k], std::clamp(scores[k], 0.0, 1.0)});
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    if (static_cast<int>(out.size()) > cfg_.detections_per_img) out.resize(cfg_.detections_per_img);
    return out;
  }

  /// Region proposals for an image with the training-time limits (used to
  /// build plans outside of a loss call).
  std::vector<Box> propose(const FeatureMap<T>& pixels, bool training) {
    const FeatureMap<T> feat = backbone_forward(pixels);
    Mat<T> obj, del;
    rpn_forward(feat, obj, del);
    return training ? proposals(obj, del, cfg_.rpn_pre_nms_top_n_train, cfg_.rpn_post_nms_top_n_train)
                    : proposals(obj, del, cfg_.rpn_pre_nms_top_n_test, cfg_.rpn_post_nms_top_n_test);
  }

 private:
  void initialise() {
    std::mt19937_64 rng(cfg_.seed * 0x9E3779B97F4A7C15ull + 17);
    for (auto& c : backbone_) {
      const double fan_in = static_cast<double>(c.weight().value.cols());
      nn::init_normal(c.weight(), std::sqrt(2.0 / fan_in), rng);
    }
    for (auto* c : {rpn_conv_.get(), rpn_cls_.get(), rpn_reg_.get()}) nn::init_normal(c->weight(), 0.01, rng);
    for (auto* l : {fc6_.get(), fc7_.get()}) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l->in_features()));
      nn::init_uniform(l->weight(), bound, rng);
      nn::init_uniform(l->bias(), bound, rng);
    }
    nn::init_normal(cls_->weight(), 0.01, rng);
    nn::init_normal(reg_->weight(), 0.001, rng);
    if (gconv_) nn::init_uniform(gconv_->weight(), 1.0 / std::sqrt(static_cast<double>(gconv_->kernel())), rng);
    if (ctx_) nn::init_normal(ctx_->weight(), 0.01, rng);
  }

  static Mat<T> softmax_rows(const Mat<T>& z) {
    Mat<T> p(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const T m = z.row(r).maxCoeff();
      p.row(r) = (z.row(r).array() - m).exp();
      p.row(r) /= p.row(r).sum();
    }
    return p;
  }

  void rpn_forward(const FeatureMap<T>& feat, Mat<T>& obj, Mat<T>& del) {
    FeatureMap<T> t = rpn_conv_->forward(feat);
    rpn_relu_.forward_inplace(t.data);
    obj = rpn_cls_->forward(t).data;
    del = rpn_reg_->forward(t).data;
  }

  FeatureMap<T> rpn_backward(const Mat<T>& dobj, const Mat<T>& ddel) {
    FeatureMap<T> a(dobj.rows(), feat_h_, feat_w_), b(ddel.rows(), feat_h_, feat_w_);
    a.data = dobj;
    b.data = ddel;
    FeatureMap<T> dt = rpn_cls_->backward(a);
    dt.data += rpn_reg_->backward(b).data;
    rpn_relu_.backward_inplace(dt.data);
    return rpn_conv_->backward(dt);
  }

  void head_forward(const FeatureMap<T>& feat, const std::vector<Box>& rois, Mat<T>& cls_logits,
                    Mat<T>& box_reg, Mat<T>& flat, Mat<T>& g) {
    flat = flatten(feat);
    Mat<T> h = roi_align_->forward(feat, rois);
    h = fc6_->forward(h);
    relu6_.forward_inplace(h);
    h = fc7_->forward(h);
    relu7_.forward_inplace(h);
    if (gconv_) {
      g = gconv_->forward(flat);
      h = fuse_global(h, g, cfg_.beta);
    }
    cls_logits = cls_->forward(h);
    box_reg = reg_->forward(h);
  }

  void head_backward(const Mat<T>& dcls, const Mat<T>& dreg, FeatureMap<T>& dfeat) {
    Mat<T> dh = cls_->backward(dcls);
    dh += reg_->backward(dreg);
    if (gconv_) {
      const int d = cfg_.box_feature_dim;
      const Mat<T> dg = static_cast<T>(cfg_.beta) * dh.rightCols(dh.cols() - d).colwise().sum();
      const Mat<T> dflat = gconv_->backward(dg);
      dfeat.data += Eigen::Map<const Mat<T>>(dflat.data(), feat_c_, static_cast<Eigen::Index>(feat_h_) * feat_w_);
      dh = Mat<T>(dh.leftCols(d));
    }
    relu7_.backward_inplace(dh);
    dh = fc7_->backward(dh);
    relu6_.backward_inplace(dh);
    dh = fc6_->backward(dh);
    dfeat.data += roi_align_->backward(dh).data;
  }

  std::vector<Box> proposals(const Mat<T>& obj, const Mat<T>& del, int pre_n, int post_n) const {
    const long hw = obj.cols();
    std::vector<double> logits(anchors_.size());
    for (std::size_t i = 0; i < anchors_.size(); ++i) logits[i] = obj(static_cast<long>(i) / hw, static_cast<long>(i) % hw);
    const BoxCoder coder;
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i : top_k(logits, pre_n)) {
      const long a = i / hw, p = i % hw;
      Box b = coder.decode(anchors_[i], del(a * 4, p), del(a * 4 + 1, p), del(a * 4 + 2, p), del(a * 4 + 3, p))
                  .clipped(cfg_.input_width, cfg_.input_height);
      if (!(b.width() >= 1e-3 && b.height() >= 1e-3)) continue;
      boxes.push_back(b);
      scores.push_back(logits[i]);
    }
    auto keep = nms(boxes, scores, cfg_.rpn_nms);
    if (static_cast<int>(keep.size()) > post_n) keep.resize(post_n);
    std::vector<Box> out;
    for (int k : keep) out.push_back(boxes[k]);
    return out;
  }

  template <typename Rng>
  ImagePlan make_plan(const Example<T>& ex, const Mat<T>& obj, const Mat<T>& del, Rng& rng) const {
    ImagePlan plan;
    std::vector<Box> gts;
    for (const auto& b : ex.boxes) gts.push_back(b.box);

    // Anchor sampling, then dropping among the sampled negatives.
    const auto m = match_boxes(anchors_, gts, cfg_.rpn_fg_iou, cfg_.rpn_bg_iou, true);
    std::vector<int> pos, neg;
    for (std::size_t i = 0; i < anchors_.size(); ++i) {
      if (m.label[i] == 1) pos.push_back(static_cast<int>(i));
      else if (m.label[i] == 0) neg.push_back(static_cast<int>(i));
    }
    const auto n_pos = std::min(pos.size(), static_cast<std::size_t>(cfg_.rpn_sample_size * cfg_.rpn_positive_fraction));
    plan.rpn_pos = sample_indices(std::move(pos), n_pos, rng);
    const auto n_neg = std::min(neg.size(), static_cast<std::size_t>(cfg_.rpn_sample_size) - plan.rpn_pos.size());
    auto sampled_neg = sample_indices(std::move(neg), n_neg, rng);
    std::sort(sampled_neg.begin(), sampled_neg.end());
    plan.rpn_neg_sampled = static_cast<long>(sampled_neg.size());
    plan.rpn_neg = nrd_filter(sampled_neg, cfg_.rho, rng);
    std::sort(plan.rpn_pos.begin(), plan.rpn_pos.end());
    const BoxCoder rpn_coder;
    for (int i : plan.rpn_pos) plan.rpn_targets.push_back(rpn_coder.encode(anchors_[i], gts[m.matched[i]]));

    // Box head sampling over proposals plus the gt boxes themselves.
    auto cand = proposals(obj, del, cfg_.rpn_pre_nms_top_n_train, cfg_.rpn_post_nms_top_n_train);
    cand.insert(cand.end(), gts.begin(), gts.end());
    const auto rm = match_boxes(cand, gts, cfg_.roi_fg_iou, cfg_.roi_fg_iou, false);
    std::vector<int> fg, bg;
    for (std::size_t i = 0; i < cand.size(); ++i) (rm.label[i] == 1 ? fg : bg).push_back(static_cast<int>(i));
    const auto n_fg = std::min(fg.size(), static_cast<std::size_t>(cfg_.roi_sample_size * cfg_.roi_positive_fraction));
    auto fg_s = sample_indices(std::move(fg), n_fg, rng);
    const auto n_bg = std::min(bg.size(), static_cast<std::size_t>(cfg_.roi_sample_size) - fg_s.size());
    auto bg_s = sample_indices(std::move(bg), n_bg, rng);
    const BoxCoder roi_coder{{10, 10, 5, 5}};
    for (int i : fg_s) {
      plan.rois.push_back(cand[i]);
      plan.roi_labels.push_back(1 + index(ex.boxes[rm.matched[i]].species));
      plan.roi_targets.push_back(roi_coder.encode(cand[i], gts[rm.matched[i]]));
    }
    for (int i : bg_s) {
      plan.rois.push_back(cand[i]);
      plan.roi_labels.push_back(0);
      plan.roi_targets.push_back({0, 0, 0, 0});
    }
    return plan;
  }

  DetectorConfig cfg_;
  int feat_c_ = 0, feat_h_ = 0, feat_w_ = 0;
  std::vector<nn::Conv2d<T>> backbone_;
  std::vector<nn::ReLU<T>> backbone_relu_;
  std::unique_ptr<nn::Conv2d<T>> rpn_conv_, rpn_cls_, rpn_reg_;
  nn::ReLU<T> rpn_relu_, relu6_, relu7_;
  std::unique_ptr<nn::RoIAlign<T>> roi_align_;
  std::unique_ptr<nn::Linear<T>> fc6_, fc7_, cls_, reg_, ctx_;
  std::unique_ptr<nn::Conv1dReduce<T>> gconv_;
  std::vector<Box> anchors_;
};

}  // namespace benthic
