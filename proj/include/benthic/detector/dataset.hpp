#pragma once

// Turns annotated videos into detector examples and evaluation sets.

#include <functional>
#include <map>
#include <span>
#include <vector>

#include "benthic/annotations.hpp"
#include "benthic/detector/model.hpp"
#include "benthic/detector/train.hpp"

namespace benthic {

using FrameSource = std::function<Image(long frame)>;

/// One example per keyframed frame, carrying that frame's keyframe boxes
/// and its substrate labels.
template <typename T>
std::vector<Example<T>> examples_from_keyframes(std::span<const KeyframeBox> keyframes,
                                                std::span<const SubstrateInterval> intervals,
                                                double fps, const FrameSource& frames) {
  std::map<long, std::vector<LabeledBox>> by_frame;
  for (const auto& k : keyframes) by_frame[k.frame].push_back({k.species, k.box});
  std::vector<Example<T>> out;
  for (auto& [f, boxes] : by_frame) {
    Example<T> ex;
    ex.pixels = to_input<T>(frames(f));
    ex.boxes = std::move(boxes);
    ex.substrates = frame_substrate_labels(intervals, static_cast<double>(f) / fps);
    out.push_back(std::move(ex));
  }
  return out;
}

template <typename T>
EvalSet<T> eval_set_from_frames(std::span<const FrameGroundTruth> gt, const FrameSource& frames) {
  EvalSet<T> out;
  for (const auto& g : gt) {
    out.images.push_back(to_input<T>(frames(g.frame)));
    out.frames.push_back(g);
  }
  return out;
}

}  // namespace benthic
