#pragma once

// Detection, classification and counting metrics, and report tables.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "benthic/records.hpp"
#include "benthic/types.hpp"

namespace benthic {

/// Intersection over union. Zero-area boxes are rejected.
inline double iou(const Box& a, const Box& b) {
  if (!(a.area() > 0) || !(b.area() > 0)) throw DataError("iou of a degenerate box");
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

/// One ranked prediction: its score and whether it is a true positive.
struct RankedHit {
  double score = 0;
  bool true_positive = false;
};

/// Area under the precision/recall curve with all-points interpolation:
/// precision is replaced by its running maximum from the right and summed
/// over every recall step. Hits are ranked by descending score; equal scores
/// keep their input order.
inline std::optional<double> average_precision_ranked(std::vector<RankedHit> hits,
                                                      long num_positives) {
  if (num_positives <= 0) return std::nullopt;
  std::stable_sort(hits.begin(), hits.end(),
                   [](const RankedHit& a, const RankedHit& b) { return a.score > b.score; });
  std::vector<double> recall, precision;
  recall.reserve(hits.size());
  precision.reserve(hits.size());
  long tp = 0, fp = 0;
  for (const auto& h : hits) {
    h.true_positive ? ++tp : ++fp;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_positives));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  for (std::size_t i = precision.size(); i-- > 1;)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// Detections and ground truth of one class in one image.
struct ImageInstances {
  std::vector<Box> detections;
  std::vector<double> scores;
  std::vector<Box> ground_truth;
};

/// Greedy matching in descending score order across all images: each
/// detection takes the highest-IoU ground truth in its image that is still
/// unmatched, provided IoU >= iou_thresh. Absent when there is no ground truth.
inline std::optional<double> average_precision(std::span<const ImageInstances> images,
                                               double iou_thresh = 0.5) {
  struct Ref {
    std::size_t image, det;
    double score;
  };
  std::vector<Ref> order;
  long num_gt = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    num_gt += static_cast<long>(images[i].ground_truth.size());
    for (std::size_t d = 0; d < images[i].detections.size(); ++d)
      order.push_back({i, d, images[i].scores[d]});
  }
  if (num_gt == 0) return std::nullopt;
  std::stable_sort(order.begin(), order.end(),
                   [](const Ref& a, const Ref& b) { return a.score > b.score; });
  std::vector<std::vector<bool>> taken(images.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    taken[i].assign(images[i].ground_truth.size(), false);
  std::vector<RankedHit> hits;
  hits.reserve(order.size());
  for (const auto& r : order) {
    const auto& img = images[r.image];
    double best = -1;
    long best_g = -1;
    for (std::size_t g = 0; g < img.ground_truth.size(); ++g) {
      if (taken[r.image][g]) continue;
      const double o = iou(img.detections[r.det], img.ground_truth[g]);
      if (o >= iou_thresh && o > best) {
        best = o;
        best_g = static_cast<long>(g);
      }
    }
    if (best_g >= 0) taken[r.image][best_g] = true;
    hits.push_back({r.score, best_g >= 0});
  }
  return average_precision_ranked(std::move(hits), num_gt);
}

/// Single-image convenience overload.
inline std::optional<double> average_precision(const std::vector<Box>& detections,
                                               const std::vector<double>& scores,
                                               const std::vector<Box>& gts,
                                               double iou_thresh = 0.5) {
  ImageInstances img{detections, scores, gts};
  return average_precision(std::span<const ImageInstances>(&img, 1), iou_thresh);
}

struct DetectionEval {
  std::array<std::optional<double>, kNumSpecies> per_class_ap{};
  double map50 = 0;
  int classes_present = 0;
  long straddling_gt = 0;        // gt boxes crossing the midline, kept whole
  long discarded_detections = 0;  // detections entirely above the midline
};

/// A detection is discarded when it lies entirely above the horizontal
/// midline (y2 < height/2).
inline bool entirely_above_midline(const Box& b, int height) {
  return b.y2 < 0.5 * static_cast<double>(height);
}

/// mAP@iou over fully annotated frames; detections entirely in the top half
/// are dropped before matching. Classes without ground truth are excluded
/// from the mean.
inline DetectionEval map_bottom_half(std::span<const Detection> detections,
                                     std::span<const FrameGroundTruth> frames,
                                     double iou_thresh = 0.5) {
  DetectionEval out;
  std::map<std::pair<std::string, long>, std::size_t> frame_slot;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!frames[i].fully_annotated_bottom_half)
      throw DataError("frame " + frames[i].video_id + ":" + std::to_string(frames[i].frame) +
                      " is not flagged fully_annotated_bottom_half");
    if (frames[i].height <= 0) throw DataError("frame height unknown");
    frame_slot[{frames[i].video_id, frames[i].frame}] = i;
  }
  std::array<std::vector<ImageInstances>, kNumSpecies> per_class;
  for (auto& v : per_class) v.resize(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const double mid = 0.5 * frames[i].height;
    for (const auto& b : frames[i].boxes) {
      per_class[index(b.species)][i].ground_truth.push_back(b.box);
      if (b.box.y1 < mid && b.box.y2 >= mid) ++out.straddling_gt;
    }
  }
  for (const auto& d : detections) {
    auto it = frame_slot.find({d.video_id, d.frame});
    if (it == frame_slot.end()) continue;  // not an evaluation frame
    if (entirely_above_midline(d.box, frames[it->second].height)) {
      ++out.discarded_detections;
      continue;
    }
    auto& slot = per_class[index(d.species)][it->second];
    slot.detections.push_back(d.box);
    slot.scores.push_back(d.score);
  }
  double sum = 0;
  for (int c = 0; c < kNumSpecies; ++c) {
    out.per_class_ap[c] = average_precision(per_class[c], iou_thresh);
    if (out.per_class_ap[c]) {
      sum += *out.per_class_ap[c];
      ++out.classes_present;
    }
  }
  out.map50 = out.classes_present ? sum / out.classes_present : 0.0;
  return out;
}

// ---- substrate classification AP --------------------------------------------

struct SubstrateEval {
  std::array<std::optional<double>, kNumSubstrates> per_class_ap{};
  double map = 0;
};

/// Threshold-free AP per substrate over frame-level scores.
inline SubstrateEval substrate_ap(std::span<const std::array<double, kNumSubstrates>> scores,
                                  std::span<const SubstrateSet> labels) {
  if (scores.size() != labels.size()) throw DataError("score/label count mismatch");
  SubstrateEval out;
  int present = 0;
  double sum = 0;
  for (int s = 0; s < kNumSubstrates; ++s) {
    std::vector<RankedHit> hits;
    long pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      hits.push_back({scores[i][s], labels[i].test(s)});
      pos += labels[i].test(s);
    }
    out.per_class_ap[s] = average_precision_ranked(std::move(hits), pos);
    if (out.per_class_ap[s]) {
      sum += *out.per_class_ap[s];
      ++present;
    }
  }
  out.map = present ? sum / present : 0.0;
  return out;
}

// ---- counting ----------------------------------------------------------------

struct CountingErrors {
  std::array<std::optional<double>, kNumSpecies> per_species{};  // signed (pred-gt)/gt
  std::vector<Species> excluded;                                 // gt == 0
  double mean_abs = 0;
};

inline CountingErrors relative_errors(const std::array<long, kNumSpecies>& predicted,
                                      const std::array<long, kNumSpecies>& ground_truth) {
  CountingErrors out;
  double sum = 0;
  int n = 0;
  for (int s = 0; s < kNumSpecies; ++s) {
    if (ground_truth[s] == 0) {
      out.excluded.push_back(species_at(s));
      continue;
    }
    const double e = static_cast<double>(predicted[s] - ground_truth[s]) /
                     static_cast<double>(ground_truth[s]);
    out.per_species[s] = e;
    sum += std::abs(e);
    ++n;
  }
  out.mean_abs = n ? sum / n : 0.0;
  return out;
}

/// Mean of absolute values of already-computed signed errors.
inline double mean_absolute(std::span<const double> signed_errors) {
  if (signed_errors.empty()) return 0.0;
  double s = 0;
  for (double e : signed_errors) s += std::abs(e);
  return s / static_cast<double>(signed_errors.size());
}

/// Relative gain of each variant over the baseline, (variant - baseline) / baseline.
inline std::vector<double> improvement_report(double baseline, std::span<const double> variants) {
  if (!(baseline > 0)) throw DataError("improvement_report needs a positive baseline");
  std::vector<double> out;
  out.reserve(variants.size());
  for (double v : variants) out.push_back((v - baseline) / baseline);
  return out;
}

// ---- report tables -----------------------------------------------------------

struct EvalReport {
  std::array<std::optional<double>, kNumSpecies> per_class_ap{};
  double map50 = 0;
  std::array<std::optional<double>, kNumSubstrates> substrate_ap{};
  std::array<std::optional<double>, kNumSpecies> counting{};
  double mean_abs_error = 0;
};

namespace detail {
inline std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}
inline std::string fmt(const std::optional<double>& v, int prec = 3) {
  return v ? fmt(*v, prec) : std::string("-");
}
}  // namespace detail

/// Per-class AP table: one header row of species abbreviations, one value row.
inline std::string per_class_ap_csv(const DetectionEval& e) {
  std::string head = "interpolation", row = "all-points";
  for (int s = 0; s < kNumSpecies; ++s) {
    head += "," + std::string(kSpeciesNames[s]);
    row += "," + detail::fmt(e.per_class_ap[s]);
  }
  return head + ",mAP@0.5\n" + row + "," + detail::fmt(e.map50) + "\n";
}

struct CountingRow {
  double gamma = 0, tau = 0;
  CountingErrors errors;
};

/// Counting-error table: gamma, tau, ten signed per-species errors, mean |error|.
inline std::string counting_table_csv(std::span<const CountingRow> rows) {
  std::string out = "gamma,tau";
  for (auto n : kSpeciesNames) out += "," + std::string(n);
  out += ",mean\n";
  for (const auto& r : rows) {
    std::ostringstream os;
    os << r.gamma << "," << r.tau;
    for (int s = 0; s < kNumSpecies; ++s) os << "," << detail::fmt(r.errors.per_species[s]);
    os << "," << detail::fmt(r.errors.mean_abs) << "\n";
    out += os.str();
  }
  return out;
}

struct SubstrateRow {
  std::string method;
  double val_map = 0, test_map = 0;
  std::optional<SubstrateEval> test_wv;
};

/// Substrate classifier table: val mAP, test mAP, test_wv per-class APs, test_wv mAP.
inline std::string substrate_table_csv(std::span<const SubstrateRow> rows) {
  std::string out = "method,val mAP,test mAP,B,C,M,R,test_wv mAP\n";
  for (const auto& r : rows) {
    out += r.method + "," + detail::fmt(r.val_map) + "," + detail::fmt(r.test_map);
    for (int s = 0; s < kNumSubstrates; ++s)
      out += "," + (r.test_wv ? detail::fmt(r.test_wv->per_class_ap[s]) : std::string("-"));
    out += "," + (r.test_wv ? detail::fmt(r.test_wv->map) : std::string("-")) + "\n";
  }
  return out;
}

inline std::string summary_text(const EvalReport& r) {
  std::ostringstream os;
  os << "mAP@0.5 (all-points interpolation): " << detail::fmt(r.map50) << "\n";
  for (int s = 0; s < kNumSpecies; ++s)
    os << "  AP " << kSpeciesNames[s] << ": " << detail::fmt(r.per_class_ap[s]) << "\n";
  bool any_sub = std::any_of(r.substrate_ap.begin(), r.substrate_ap.end(),
                             [](const auto& v) { return v.has_value(); });
  if (any_sub)
    for (int s = 0; s < kNumSubstrates; ++s)
      os << "  substrate AP " << kSubstrateNames[s] << ": " << detail::fmt(r.substrate_ap[s])
         << "\n";
  os << "mean |relative counting error|: " << detail::fmt(r.mean_abs_error) << "\n";
  return os.str();
}

}  // namespace benthic
