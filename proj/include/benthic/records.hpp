#pragma once

#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "benthic/types.hpp"

namespace benthic {

struct SubstrateInterval {
  Substrate substrate{};
  double begin = 0;  // seconds, inclusive
  double end = 0;    // seconds, inclusive
  friend bool operator==(const SubstrateInterval&, const SubstrateInterval&) = default;
};

struct CabofLabel {
  Species species{};
  double at = 0;  // seconds
  int count = 1;
  friend bool operator==(const CabofLabel&, const CabofLabel&) = default;
};

/// A count row for a species outside the ten detection classes.
struct OtherCount {
  std::string name;
  double at = 0;
  int count = 1;
  friend bool operator==(const OtherCount&, const OtherCount&) = default;
};

struct KeyframeBox {
  std::string video_id;
  long frame = 0;
  std::string target_id;
  Species species{};
  Box box;
  friend bool operator==(const KeyframeBox&, const KeyframeBox&) = default;
};

struct LabeledBox {
  Species species{};
  Box box;
  friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

struct FrameGroundTruth {
  std::string video_id;
  long frame = 0;
  int width = 0;
  int height = 0;
  std::vector<LabeledBox> boxes;
  bool fully_annotated_bottom_half = false;
  friend bool operator==(const FrameGroundTruth&, const FrameGroundTruth&) = default;
};

struct Detection {
  std::string video_id;
  long frame = 0;
  Species species{};
  Box box;
  double score = 0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

// ---- JSON conversions ------------------------------------------------------

namespace detail {
inline Species species_from_json(const nlohmann::json& j) {
  auto s = parse_species(j.get<std::string>());
  if (!s) throw DataError("unknown species '" + j.get<std::string>() + "'");
  return *s;
}
inline std::string id_from_json(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw DataError("identifier must be a string or integer");
}
inline Box box_from_json(const nlohmann::json& j) {
  return {j.at("x1").get<double>(), j.at("y1").get<double>(), j.at("x2").get<double>(),
          j.at("y2").get<double>()};
}
inline void box_to_json(nlohmann::json& j, const Box& b) {
  j["x1"] = b.x1;
  j["y1"] = b.y1;
  j["x2"] = b.x2;
  j["y2"] = b.y2;
}
}  // namespace detail

inline nlohmann::json to_json(const KeyframeBox& k) {
  nlohmann::json j{{"video", k.video_id},
                   {"frame", k.frame},
                   {"target", k.target_id},
                   {"species", std::string(name(k.species))}};
  detail::box_to_json(j, k.box);
  return j;
}

inline KeyframeBox keyframe_from_json(const nlohmann::json& j) {
  KeyframeBox k;
  k.video_id = detail::id_from_json(j.at("video"));
  k.frame = j.at("frame").get<long>();
  k.target_id = detail::id_from_json(j.at("target"));
  k.species = detail::species_from_json(j.at("species"));
  k.box = detail::box_from_json(j);
  if (!k.box.valid()) throw DataError("keyframe box must satisfy x1<x2, y1<y2");
  return k;
}

inline nlohmann::json to_json(const FrameGroundTruth& f) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : f.boxes) {
    nlohmann::json jb{{"species", std::string(name(b.species))}};
    detail::box_to_json(jb, b.box);
    boxes.push_back(std::move(jb));
  }
  return {{"video", f.video_id},
          {"frame", f.frame},
          {"width", f.width},
          {"height", f.height},
          {"fully_annotated_bottom_half", f.fully_annotated_bottom_half},
          {"boxes", std::move(boxes)}};
}

inline FrameGroundTruth frame_gt_from_json(const nlohmann::json& j) {
  FrameGroundTruth f;
  f.video_id = detail::id_from_json(j.at("video"));
  f.frame = j.at("frame").get<long>();
  f.width = j.value("width", 0);
  f.height = j.value("height", 0);
  f.fully_annotated_bottom_half = j.value("fully_annotated_bottom_half", false);
  for (const auto& jb : j.at("boxes"))
    f.boxes.push_back({detail::species_from_json(jb.at("species")), detail::box_from_json(jb)});
  return f;
}

inline nlohmann::json to_json(const Detection& d) {
  nlohmann::json j{{"video", d.video_id},
                   {"frame", d.frame},
                   {"species", std::string(name(d.species))}};
  detail::box_to_json(j, d.box);
  j["score"] = d.score;
  return j;
}

inline Detection detection_from_json(const nlohmann::json& j) {
  Detection d;
  d.video_id = detail::id_from_json(j.at("video"));
  d.frame = j.at("frame").get<long>();
  d.species = detail::species_from_json(j.at("species"));
  d.box = detail::box_from_json(j);
  d.score = j.at("score").get<double>();
  if (!d.box.valid()) throw DataError("detection box must be finite with x1<x2, y1<y2");
  if (!(d.score >= 0.0 && d.score <= 1.0)) throw DataError("detection score outside [0,1]");
  return d;
}

// ---- JSON-lines I/O --------------------------------------------------------

template <typename T>
void write_jsonl(const std::string& path, const std::vector<T>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

template <typename Parse>
auto read_jsonl(const std::string& path, Parse parse) {
  using T = decltype(parse(nlohmann::json{}));
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<T> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<KeyframeBox> read_keyframes(const std::string& path) {
  return read_jsonl(path, keyframe_from_json);
}
inline std::vector<FrameGroundTruth> read_frame_gt(const std::string& path) {
  return read_jsonl(path, frame_gt_from_json);
}
inline std::vector<Detection> read_detections(const std::string& path) {
  return read_jsonl(path, detection_from_json);
}

}  // namespace benthic
