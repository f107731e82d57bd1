#pragma once

// Anchor generation, box delta coding, overlap matrices and NMS.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "benthic/types.hpp"

namespace benthic {

/// Anchors for every feature cell, ordered anchor-major: index a*H*W + y*W + x.
inline std::vector<Box> make_anchors(int feat_h, int feat_w, int stride,
                                     const std::vector<double>& sizes,
                                     const std::vector<double>& ratios) {
  std::vector<Box> out;
  out.reserve(sizes.size() * ratios.size() * feat_h * feat_w);
  for (double s : sizes)
    for (double r : ratios) {
      // r is height / width; area stays s^2
      const double w = s / std::sqrt(r), h = s * std::sqrt(r);
      for (int y = 0; y < feat_h; ++y)
        for (int x = 0; x < feat_w; ++x) {
          const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
          out.push_back({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
        }
    }
  return out;
}

/// Overlap that treats degenerate boxes as non-overlapping.
inline double overlap(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct BoxCoder {
  std::array<double, 4> weights{1, 1, 1, 1};
  double clamp = std::log(1000.0 / 16.0);

  std::array<double, 4> encode(const Box& ref, const Box& gt) const {
    const double rw = ref.width(), rh = ref.height();
    const double rx = ref.x1 + 0.5 * rw, ry = ref.y1 + 0.5 * rh;
    const double gw = gt.width(), gh = gt.height();
    const double gx = gt.x1 + 0.5 * gw, gy = gt.y1 + 0.5 * gh;
    return {weights[0] * (gx - rx) / rw, weights[1] * (gy - ry) / rh,
            weights[2] * std::log(gw / rw), weights[3] * std::log(gh / rh)};
  }

  Box decode(const Box& ref, double dx, double dy, double dw, double dh) const {
    const double rw = ref.width(), rh = ref.height();
    const double rx = ref.x1 + 0.5 * rw, ry = ref.y1 + 0.5 * rh;
    dx /= weights[0], dy /= weights[1];
    dw = std::min(dw / weights[2], clamp);
    dh = std::min(dh / weights[3], clamp);
    const double cx = dx * rw + rx, cy = dy * rh + ry;
    const double w = std::exp(dw) * rw, h = std::exp(dh) * rh;
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
};

/// Greedy NMS; returns kept indices in descending score order (ties by index).
inline std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                            double thresh) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> keep;
  std::vector<char> removed(boxes.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const int a = order[i];
    if (removed[a]) continue;
    keep.push_back(a);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const int b = order[j];
      if (!removed[b] && overlap(boxes[a], boxes[b]) > thresh) removed[b] = 1;
    }
  }
  return keep;
}

/// Indices of the k largest scores, descending, ties by index.
inline std::vector<int> top_k(const std::vector<double>& scores, int k) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(kk), idx.end(), [&](int a, int b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  });
  idx.resize(kk);
  return idx;
}

/// Anchor/proposal labels from overlap with ground truth: 1 foreground,
/// 0 background, -1 ignored. matched[i] is the best gt index.
struct MatchResult {
  std::vector<int> label;
  std::vector<int> matched;
};

inline MatchResult match_boxes(const std::vector<Box>& boxes, const std::vector<Box>& gts,
                               double fg_iou, double bg_iou, bool allow_low_quality) {
  MatchResult m;
  m.label.assign(boxes.size(), 0);
  m.matched.assign(boxes.size(), -1);
  if (gts.empty()) return m;
  std::vector<double> best(boxes.size(), -1.0);
  std::vector<double> gt_best(gts.size(), 0.0);
  for (std::size_t i = 0; i < boxes.size(); ++i)
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = overlap(boxes[i], gts[g]);
      if (v > best[i]) best[i] = v, m.matched[i] = static_cast<int>(g);
      gt_best[g] = std::max(gt_best[g], v);
    }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (best[i] >= fg_iou)
      m.label[i] = 1;
    else if (best[i] < bg_iou)
      m.label[i] = 0;
    else
      m.label[i] = -1;
  }
  if (allow_low_quality) {
    // Each gt also claims the boxes that overlap it best, however weakly.
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_best[g] <= 0) continue;
      for (std::size_t i = 0; i < boxes.size(); ++i)
        if (overlap(boxes[i], gts[g]) == gt_best[g]) m.label[i] = 1;
    }
  }
  return m;
}

/// Uniform subset of exactly floor((1 - rho) * N) negatives, without
/// replacement, in their original relative order.
template <typename U, typename Rng>
std::vector<U> nrd_filter(const std::vector<U>& negatives, double rho, Rng& rng) {
  if (rho < 0 || rho > 1) throw DataError("rho must be in [0,1]");
  const auto n = negatives.size();
  // The epsilon keeps e.g. (1 - 0.9) * 100 from flooring to 9.
  const auto keep = static_cast<std::size_t>(std::floor((1.0 - rho) * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, n - 1);
    std::swap(idx[i], idx[d(rng)]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<U> out;
  out.reserve(keep);
  for (auto i : idx) out.push_back(negatives[i]);
  return out;
}

/// Uniformly samples up to n indices from pool (partial Fisher-Yates).
template <typename Rng>
std::vector<int> sample_indices(std::vector<int> pool, std::size_t n, Rng& rng) {
  n = std::min(n, pool.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, pool.size() - 1);
    std::swap(pool[i], pool[d(rng)]);
  }
  pool.resize(n);
  return pool;
}

}  // namespace benthic
