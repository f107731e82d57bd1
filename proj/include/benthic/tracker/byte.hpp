#pragma once

// BYTE-style association per species, plus the confidence / track-length
// filters and bottom-contact counting used by the counting pipeline.

#include <algorithm>
#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "benthic/records.hpp"
#include "benthic/tracker/assignment.hpp"
#include "benthic/tracker/kalman.hpp"
#include "benthic/types.hpp"

namespace benthic {

struct PipelineParams {
  double tau = 0.0;            // only detections scoring above this are kept
  int gamma = 0;               // tracks with fewer detections are dropped
  double high_thresh = 0.6;    // high / low score split
  double first_iou = 0.2;      // gate for high detections vs tracked + lost
  double second_iou = 0.5;     // gate for low detections vs remaining tracked
  double tentative_iou = 0.3;  // gate for unconfirmed tracks
  int max_lost = 30;
  KalmanParams kalman{};

  void validate() const {
    if (!(tau >= 0 && tau <= 1)) throw DataError("tau must lie in [0,1]");
    if (gamma < 0) throw DataError("gamma must be >= 0");
    if (!(high_thresh >= 0 && high_thresh <= 1)) throw DataError("high_thresh must lie in [0,1]");
    if (max_lost < 0) throw DataError("max_lost must be >= 0");
  }
};

enum class TrackStatus { Tentative, Active, Lost, Removed };

struct TrackHit {
  long frame = 0;
  Box box;
  double score = 0;
};

struct Track {
  int track_id = 0;
  std::string video_id;
  Species species{};
  KalmanState state;
  std::vector<TrackHit> history;
  TrackStatus status = TrackStatus::Tentative;
  bool activated = false;  // ever confirmed
  bool counted = false;

  long last_frame() const { return history.empty() ? -1 : history.back().frame; }
};

/// Tracker state for one (video, species) stream.
struct TrackerState {
  std::string video_id;
  Species species{};
  std::vector<Track> tracks;  // live tracks (removed ones move to `finished`)
  std::vector<Track> finished;
  int next_id = 1;
  long steps = 0;
  long last_step = 0;
};

namespace detail {

inline double safe_iou(const Box& a, const Box& b) {
  if (a.width() <= 0 || a.height() <= 0 || b.width() <= 0 || b.height() <= 0) return 0.0;
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

/// Score descending, then box coordinates, so the processing order does not
/// depend on input order.
inline bool detection_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
  if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
  if (a.box.x2 != b.box.x2) return a.box.x2 < b.box.x2;
  return a.box.y2 < b.box.y2;
}

inline std::vector<std::pair<int, int>> associate(const std::vector<Track*>& tracks,
                                                  const std::vector<const Detection*>& dets, double gate) {
  if (tracks.empty() || dets.empty()) return {};
  std::vector<std::vector<double>> w(tracks.size(), std::vector<double>(dets.size()));
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const Box pred = from_xyah(tracks[i]->state.mean);
    for (std::size_t j = 0; j < dets.size(); ++j) w[i][j] = safe_iou(pred, dets[j]->box);
  }
  return gated_max_assignment(w, gate);
}

inline void absorb(Track& t, const Detection& d, long frame, const KalmanParams& kp) {
  t.state = kalman_update(t.state, d.box, kp);
  t.history.push_back({frame, d.box, d.score});
}

}  // namespace detail

/// Advances one stream by one frame. `dets` must all belong to the stream's
/// species and are assumed already confidence-filtered.
inline void byte_step(TrackerState& st, long frame, std::span<const Detection> dets, const PipelineParams& p) {
  for (const auto& d : dets)
    if (d.species != st.species) throw DataError("byte_step: detections from mixed species");
  if (st.steps > 0 && frame <= st.last_step) throw DataError("byte_step: frames must be strictly increasing");
  st.last_step = frame;
  ++st.steps;

  std::vector<Detection> sorted(dets.begin(), dets.end());
  std::stable_sort(sorted.begin(), sorted.end(), detail::detection_before);
  std::vector<const Detection*> high, low;
  for (const auto& d : sorted) (d.score >= p.high_thresh ? high : low).push_back(&d);

  for (auto& t : st.tracks) {
    if (t.status != TrackStatus::Active) t.state.mean(7) = 0.0;
    t.state = kalman_predict(t.state, p.kalman);
  }

  // Tracks are kept in creation order, so index order is track_id order.
  std::vector<Track*> pool, tentative;
  for (auto& t : st.tracks) {
    if (t.status == TrackStatus::Tentative) tentative.push_back(&t);
    else pool.push_back(&t);
  }

  // Stage 1: high detections against tracked and lost tracks.
  std::vector<char> high_used(high.size(), 0), pool_used(pool.size(), 0);
  for (auto [i, j] : detail::associate(pool, high, p.first_iou)) {
    detail::absorb(*pool[i], *high[j], frame, p.kalman);
    pool[i]->status = TrackStatus::Active;
    pool_used[i] = high_used[j] = 1;
  }

  // Stage 2: low detections against still-unmatched tracked tracks.
  std::vector<Track*> rest;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (!pool_used[i] && pool[i]->status == TrackStatus::Active) rest.push_back(pool[i]);
  std::vector<char> rest_used(rest.size(), 0);
  for (auto [i, j] : detail::associate(rest, low, p.second_iou)) {
    detail::absorb(*rest[i], *low[j], frame, p.kalman);
    rest_used[i] = 1;
  }
  for (std::size_t i = 0; i < rest.size(); ++i)
    if (!rest_used[i]) rest[i]->status = TrackStatus::Lost;

  // Stage 3: unconfirmed tracks against leftover high detections.
  std::vector<const Detection*> left;
  for (std::size_t j = 0; j < high.size(); ++j)
    if (!high_used[j]) left.push_back(high[j]);
  std::vector<char> left_used(left.size(), 0), tent_used(tentative.size(), 0);
  for (auto [i, j] : detail::associate(tentative, left, p.tentative_iou)) {
    detail::absorb(*tentative[i], *left[j], frame, p.kalman);
    tentative[i]->status = TrackStatus::Active;
    tentative[i]->activated = true;
    tent_used[i] = left_used[j] = 1;
  }
  for (std::size_t i = 0; i < tentative.size(); ++i)
    if (!tent_used[i]) tentative[i]->status = TrackStatus::Removed;

  for (auto& t : st.tracks)
    if (t.status == TrackStatus::Lost && frame - t.last_frame() > p.max_lost) t.status = TrackStatus::Removed;

  std::vector<Track> births;
  for (std::size_t j = 0; j < left.size(); ++j) {
    if (left_used[j]) continue;
    Track t;
    t.track_id = st.next_id++;
    t.video_id = st.video_id;
    t.species = st.species;
    t.state = kalman_initiate(to_xyah(left[j]->box), p.kalman);
    t.history.push_back({frame, left[j]->box, left[j]->score});
    // Detections on the very first frame of a stream are confirmed at once.
    if (st.steps == 1) {
      t.status = TrackStatus::Active;
      t.activated = true;
    }
    births.push_back(std::move(t));
  }

  std::vector<Track> live;
  for (auto& t : st.tracks) (t.status == TrackStatus::Removed ? st.finished : live).push_back(std::move(t));
  for (auto& t : births) live.push_back(std::move(t));
  st.tracks = std::move(live);
}

/// Every confirmed track of the stream, ordered by id.
inline std::vector<Track> finish_stream(TrackerState& st) {
  std::vector<Track> out;
  for (auto* v : {&st.finished, &st.tracks})
    for (auto& t : *v)
      if (t.activated) out.push_back(t);
  std::sort(out.begin(), out.end(), [](const Track& a, const Track& b) { return a.track_id < b.track_id; });
  return out;
}

/// tau filter, per-(video, species) tracking over every frame index between
/// the video's first and last detection, then gamma filter. Output is ordered
/// by video, species, track id.
inline std::vector<Track> run_pipeline(std::span<const Detection> stream, const PipelineParams& p) {
  p.validate();
  std::map<std::string, std::vector<const Detection*>> by_video;
  std::map<std::string, long> last;
  for (const auto& d : stream) {
    auto it = last.find(d.video_id);
    if (it != last.end() && d.frame < it->second)
      throw DataError("detection stream for video '" + d.video_id + "' is not sorted by frame");
    last[d.video_id] = d.frame;
    if (d.score > p.tau) by_video[d.video_id].push_back(&d);
  }
  std::vector<Track> out;
  for (const auto& [video, dets] : by_video) {
    if (dets.empty()) continue;
    const long first = dets.front()->frame, end = dets.back()->frame;
    for (int s = 0; s < kNumSpecies; ++s) {
      TrackerState st;
      st.video_id = video;
      st.species = species_at(s);
      std::size_t k = 0;
      std::vector<Detection> frame_dets;
      for (long f = first; f <= end; ++f) {
        frame_dets.clear();
        for (; k < dets.size() && dets[k]->frame == f; ++k)
          if (dets[k]->species == st.species) frame_dets.push_back(*dets[k]);
        byte_step(st, f, frame_dets, p);
      }
      for (auto& t : finish_stream(st))
        if (static_cast<long>(t.history.size()) >= p.gamma) out.push_back(std::move(t));
    }
  }
  return out;
}

inline bool touches_bottom(const Track& t, double frame_height) {
  return std::any_of(t.history.begin(), t.history.end(),
                     [&](const TrackHit& h) { return h.box.y2 >= frame_height - 1; });
}

/// Marks and counts tracks whose detections ever reach the bottom row.
inline std::array<long, kNumSpecies> count_cabof(std::vector<Track>& tracks, double frame_height) {
  std::array<long, kNumSpecies> counts{};
  for (auto& t : tracks) {
    if (t.counted || !touches_bottom(t, frame_height)) continue;
    t.counted = true;
    ++counts[index(t.species)];
  }
  return counts;
}

inline nlohmann::json to_json(const Track& t) {
  nlohmann::json frames = nlohmann::json::array(), boxes = nlohmann::json::array();
  for (const auto& h : t.history) {
    frames.push_back(h.frame);
    boxes.push_back({h.box.x1, h.box.y1, h.box.x2, h.box.y2});
  }
  return {{"video", t.video_id}, {"species", name(t.species)}, {"track_id", t.track_id},
          {"frames", frames},    {"boxes", boxes},             {"counted", t.counted}};
}

inline nlohmann::json to_json(const PipelineParams& p) {
  return {{"tau", p.tau},
          {"gamma", p.gamma},
          {"high_thresh", p.high_thresh},
          {"first_iou", p.first_iou},
          {"second_iou", p.second_iou},
          {"tentative_iou", p.tentative_iou},
          {"max_lost", p.max_lost},
          {"std_weight_position", p.kalman.std_weight_position},
          {"std_weight_velocity", p.kalman.std_weight_velocity},
          {"std_aspect", p.kalman.std_aspect},
          {"std_aspect_velocity", p.kalman.std_aspect_velocity},
          {"std_aspect_measurement", p.kalman.std_aspect_measurement}};
}

inline PipelineParams pipeline_params_from_json(const nlohmann::json& j, PipelineParams p = {}) {
  for (const auto& [k, v] : j.items()) {
    if (k == "tau") p.tau = v.get<double>();
    else if (k == "gamma") p.gamma = v.get<int>();
    else if (k == "high_thresh") p.high_thresh = v.get<double>();
    else if (k == "first_iou") p.first_iou = v.get<double>();
    else if (k == "second_iou") p.second_iou = v.get<double>();
    else if (k == "tentative_iou") p.tentative_iou = v.get<double>();
    else if (k == "max_lost") p.max_lost = v.get<int>();
    else if (k == "std_weight_position") p.kalman.std_weight_position = v.get<double>();
    else if (k == "std_weight_velocity") p.kalman.std_weight_velocity = v.get<double>();
    else if (k == "std_aspect") p.kalman.std_aspect = v.get<double>();
    else if (k == "std_aspect_velocity") p.kalman.std_aspect_velocity = v.get<double>();
    else if (k == "std_aspect_measurement") p.kalman.std_aspect_measurement = v.get<double>();
    else throw DataError("unknown pipeline key '" + k + "'");
  }
  p.validate();
  return p;
}

}  // namespace benthic
