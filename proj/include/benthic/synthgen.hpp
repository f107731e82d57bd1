#pragma once

// Seeded generator of synthetic benthic survey sequences: scrolling substrate
// textures, downward-drifting organisms, and the matching substrate intervals,
// CABOF labels, keyframes and evaluation frames.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "benthic/annotations.hpp"
#include "benthic/evaluate.hpp"
#include "benthic/image.hpp"
#include "benthic/records.hpp"
#include "benthic/types.hpp"

namespace benthic {

enum class Shape : std::uint8_t { Ellipse, Rect, Diamond, Cross, Ring, Triangle, Star };

struct Appearance {
  Shape shape = Shape::Ellipse;
  std::array<std::uint8_t, 3> color{200, 200, 200};
  int stripe_period = 0;  // 0: solid fill
  std::uint32_t texture_seed = 0;
};

/// Per-substrate texture: value noise at a given scale and contrast over a base color.
struct TextureParams {
  std::array<std::uint8_t, 3> color{};
  double scale_x = 8, scale_y = 8;  // noise cell size in pixels
  double contrast = 0.5;
};

struct SceneConfig {
  int width = 256;
  int height = 256;
  double fps = 30;
  double duration = 120;                // seconds
  double substrate_segment_length = 20;  // mean seconds per regime
  double substrate_overlap_prob = 0.3;
  std::array<double, kNumSubstrates> substrate_frequency{1, 1, 1, 1};  // relative pick weights
  /// Target fraction of each species' individuals whose bottom-contact frame
  /// shows each substrate. Spawn intensities are tilted per substrate so the
  /// realised timeline reproduces these fractions (when attainable).
  std::array<std::array<double, kNumSpecies>, kNumSubstrates> species_substrate_prior{};
  std::array<double, kNumSpecies> species_rate{};  // mean spawns per second
  double object_speed = 2.0;  // pixels per frame, downward
  std::array<std::pair<double, double>, kNumSpecies> size_range{};
  std::array<Appearance, kNumSpecies> appearance{};
  std::array<TextureParams, kNumSubstrates> textures{};
  std::vector<std::pair<Species, Species>> ambiguity_pairs;
  double max_tilt = 8;  // cap on a substrate set's spawn intensity relative to the mean
  int halo = 0;  // neutral margin around each organism, pixels
  int keyframe_interval = 15;
  int eval_interval = 30;

  static SceneConfig defaults();
  void validate() const;
  long num_frames() const { return static_cast<long>(std::floor(duration * fps + 1e-9)) + 1; }
};

inline SceneConfig SceneConfig::defaults() {
  SceneConfig c;
  // Intensities taken from the species-by-substrate co-occurrence fractions
  // of the surveyed footage.
  c.species_substrate_prior = {{
      {0.302, 0.059, 0.362, 0.206, 0.198, 0.219, 0.168, 0.224, 0.176, 0.340},
      {0.773, 0.370, 0.797, 0.575, 0.712, 0.581, 0.454, 0.754, 0.601, 0.887},
      {0.288, 0.813, 0.185, 0.951, 0.471, 0.689, 0.372, 0.467, 0.896, 0.127},
      {0.670, 0.424, 0.464, 0.297, 0.716, 0.745, 0.998, 0.585, 0.324, 0.380},
  }};
  c.species_rate.fill(0.1);
  for (auto& r : c.size_range) r = {16.0, 36.0};
  c.appearance = {{
      {Shape::Star, {235, 140, 40}, 0, 11},
      {Shape::Ellipse, {245, 120, 175}, 0, 12},
      {Shape::Diamond, {175, 175, 190}, 4, 13},
      {Shape::Cross, {165, 60, 205}, 0, 14},
      {Shape::Triangle, {215, 40, 40}, 0, 15},
      {Shape::Rect, {205, 125, 60}, 5, 16},
      {Shape::Ring, {240, 230, 160}, 0, 17},
      {Shape::Ellipse, {240, 240, 240}, 3, 18},
      {Shape::Diamond, {250, 250, 250}, 0, 19},
      {Shape::Triangle, {235, 215, 40}, 0, 20},
  }};
  c.textures = {{
      {{120, 112, 100}, 22, 22, 0.85},  // boulder: large blocks
      {{150, 130, 95}, 6, 6, 0.75},     // cobble: small stones
      {{95, 80, 55}, 40, 40, 0.15},     // mud: smooth, low contrast
      {{65, 75, 95}, 3, 16, 0.55},      // rock: streaked
  }};
  return c;
}

inline void SceneConfig::validate() const {
  if (width <= 0 || height <= 0) throw DataError("frame size must be positive");
  if (!(fps > 0)) throw DataError("fps must be positive");
  if (!(duration > 0)) throw DataError("duration must be positive");
  if (!(object_speed > 0)) throw DataError("object_speed must be positive");
  if (!(substrate_segment_length > 0)) throw DataError("substrate_segment_length must be positive");
  if (substrate_overlap_prob < 0 || substrate_overlap_prob > 1)
    throw DataError("substrate_overlap_prob must be in [0,1]");
  double freq = 0;
  for (double f : substrate_frequency) {
    if (!(f >= 0)) throw DataError("substrate_frequency entries must be >= 0");
    freq += f;
  }
  if (!(freq > 0)) throw DataError("substrate_frequency must have a positive entry");
  for (const auto& row : species_substrate_prior)
    for (double v : row)
      if (!(v >= 0 && v <= 1)) throw DataError("species_substrate_prior entries must be in [0,1]");
  for (double r : species_rate)
    if (!(r >= 0)) throw DataError("species_rate must be >= 0");
  for (const auto& r : size_range)
    if (!(r.first > 0 && r.first <= r.second)) throw DataError("invalid size range");
  if (keyframe_interval <= 0 || eval_interval <= 0) throw DataError("intervals must be positive");
  if (halo < 0) throw DataError("halo must be >= 0");
  if (!(max_tilt >= 1)) throw DataError("max_tilt must be >= 1");
}

/// One synthetic organism. Its box moves down by object_speed per frame;
/// at spawn_frame the bottom edge sits on the top border.
struct GtObject {
  int id = 0;
  Species species{};
  double x = 0;  // left edge
  double w = 0, h = 0;
  long spawn_frame = 0;

  double bottom_at(long frame, double speed) const {
    return static_cast<double>(frame - spawn_frame) * speed;
  }
};

struct GtTrack {
  int object_id = 0;
  Species species{};
  std::vector<std::pair<long, Box>> boxes;  // (frame, clipped box)
};

struct SyntheticSequence {
  std::string video_id;
  SceneConfig config;
  std::uint64_t seed = 0;
  std::vector<SubstrateInterval> intervals;
  std::vector<CabofLabel> cabofs;
  std::vector<GtObject> objects;
  long num_frames = 0;
  /// Relative spawn intensity per species for each of the 16 substrate sets,
  /// normalised to mean 1 over the frames of the sequence.
  std::array<std::array<double, 16>, kNumSpecies> set_weights{};

  double time_of(long frame) const { return static_cast<double>(frame) / config.fps; }
  SubstrateSet labels_at(long frame) const {
    return frame_substrate_labels(intervals, time_of(frame));
  }

  /// Clipped box of an object at a frame, absent when not visible.
  std::optional<Box> box_at(const GtObject& o, long frame) const {
    const double y2 = o.bottom_at(frame, config.object_speed);
    const double y1 = y2 - o.h;
    const double H = config.height;
    if (y2 <= 0.5 || y1 >= H - 0.5) return std::nullopt;
    Box b = Box{o.x, y1, o.x + o.w, y2}.clipped(config.width, H);
    if (b.height() < 1.0) return std::nullopt;
    return b;
  }

  /// First frame whose box reaches the bottom edge (y2 >= height - 1).
  long contact_frame(const GtObject& o) const {
    const double need = config.height - 1.0;
    return o.spawn_frame + static_cast<long>(std::ceil(need / config.object_speed - 1e-9));
  }

  std::vector<LabeledBox> boxes_at(long frame, std::vector<int>* ids = nullptr) const;
  std::vector<GtTrack> gt_tracks() const;
  Image render(long frame) const;
  AnnotationSet annotations() const { return {intervals, cabofs, {}}; }
  VideoAnnotations video_annotations() const { return {video_id, config.fps, annotations()}; }
};

// ---- noise and drawing -------------------------------------------------------

namespace detail {

inline std::uint32_t hash3(std::int64_t x, std::int64_t y, std::uint32_t seed) {
  std::uint64_t h = static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ull ^
                    (static_cast<std::uint64_t>(y) + 0x632BE59BD9B4E019ull) * 0xC2B2AE3D27D4EB4Full ^
                    (static_cast<std::uint64_t>(seed) << 32);
  h ^= h >> 33;
  h *= 0xFF51AFD7ED558CCDull;
  h ^= h >> 33;
  h *= 0xC4CEB9FE1A85EC53ull;
  h ^= h >> 33;
  return static_cast<std::uint32_t>(h);
}

inline double lattice(std::int64_t x, std::int64_t y, std::uint32_t seed) {
  return static_cast<double>(hash3(x, y, seed) & 0xFFFFFF) / static_cast<double>(0xFFFFFF);
}

/// Smooth value noise in [0,1].
inline double value_noise(double x, double y, std::uint32_t seed) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  double tx = x - fx, ty = y - fy;
  tx = tx * tx * (3 - 2 * tx);
  ty = ty * ty * (3 - 2 * ty);
  const double a = lattice(ix, iy, seed), b = lattice(ix + 1, iy, seed);
  const double c = lattice(ix, iy + 1, seed), d = lattice(ix + 1, iy + 1, seed);
  return (a + (b - a) * tx) + ((c + (d - c) * tx) - (a + (b - a) * tx)) * ty;
}

inline bool inside_shape(Shape s, double u, double v) {
  // (u, v) in [-1, 1]^2 relative to the box
  switch (s) {
    case Shape::Ellipse:
      return u * u + v * v <= 1.0;
    case Shape::Rect:
      return true;
    case Shape::Diamond:
      return std::abs(u) + std::abs(v) <= 1.0;
    case Shape::Cross:
      return std::abs(u) <= 0.35 || std::abs(v) <= 0.35;
    case Shape::Ring: {
      const double r = u * u + v * v;
      return r <= 1.0 && r >= 0.3;
    }
    case Shape::Triangle:
      return v >= -1.0 && std::abs(u) <= (v + 1.0) * 0.5;
    case Shape::Star: {
      const double r = std::sqrt(u * u + v * v);
      const double a = std::atan2(v, u);
      return r <= 0.45 + 0.55 * std::abs(std::cos(2.5 * a));
    }
  }
  return false;
}

inline std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace detail

inline std::vector<LabeledBox> SyntheticSequence::boxes_at(long frame, std::vector<int>* ids) const {
  std::vector<LabeledBox> out;
  for (const auto& o : objects) {
    if (auto b = box_at(o, frame)) {
      out.push_back({o.species, *b});
      if (ids) ids->push_back(o.id);
    }
  }
  return out;
}

inline std::vector<GtTrack> SyntheticSequence::gt_tracks() const {
  std::vector<GtTrack> out;
  for (const auto& o : objects) {
    GtTrack t{o.id, o.species, {}};
    const long first = std::max(0L, o.spawn_frame);
    const long last = std::min(num_frames - 1,
                               o.spawn_frame + static_cast<long>(std::ceil(
                                                   (config.height + o.h) / config.object_speed)) +
                                   1);
    for (long f = first; f <= last; ++f)
      if (auto b = box_at(o, f)) t.boxes.emplace_back(f, *b);
    if (!t.boxes.empty()) out.push_back(std::move(t));
  }
  return out;
}

inline Image SyntheticSequence::render(long frame) const {
  const auto& c = config;
  Image img(c.width, c.height);
  const auto labels = labels_at(frame);
  std::vector<int> active;
  for (int s = 0; s < kNumSubstrates; ++s)
    if (labels.test(s)) active.push_back(s);
  const double scroll = static_cast<double>(frame) * c.object_speed;
  const auto seed32 = static_cast<std::uint32_t>(seed * 2654435761u);
  for (int y = 0; y < c.height; ++y) {
    const double wy = static_cast<double>(y) - scroll;
    for (int x = 0; x < c.width; ++x) {
      auto* p = img.px(x, y);
      if (active.empty()) {
        p[0] = p[1] = p[2] = 20;
        continue;
      }
      // Co-occurring substrates share the frame as vertical bands.
      const int s = active[static_cast<std::size_t>(x) * active.size() / c.width];
      const auto& t = c.textures[s];
      const std::uint32_t ts = seed32 + 7919u * static_cast<std::uint32_t>(s + 1);
      double n = 0.7 * detail::value_noise(x / t.scale_x, wy / t.scale_y, ts) +
                 0.3 * detail::value_noise(2.0 * x / t.scale_x, 2.0 * wy / t.scale_y, ts + 1);
      const double k = 1.0 + t.contrast * (2.0 * n - 1.0);
      for (int ch = 0; ch < 3; ++ch) p[ch] = detail::clamp_u8(t.color[ch] * k);
    }
  }
  // Appearance overrides for pairs rendered identically.
  auto appearance_of = [&](Species sp) -> const Appearance& {
    for (const auto& [a, b] : c.ambiguity_pairs)
      if (sp == b) return c.appearance[index(a)];
    return c.appearance[index(sp)];
  };
  for (const auto& o : objects) {
    const double y2 = o.bottom_at(frame, c.object_speed), y1 = y2 - o.h;
    if (y2 + c.halo <= 0 || y1 - c.halo >= c.height) continue;
    if (c.halo > 0) {
      const int hx1 = std::max(0, static_cast<int>(std::floor(o.x - c.halo)));
      const int hx2 = std::min(c.width, static_cast<int>(std::ceil(o.x + o.w + c.halo)));
      const int hy1 = std::max(0, static_cast<int>(std::floor(y1 - c.halo)));
      const int hy2 = std::min(c.height, static_cast<int>(std::ceil(y2 + c.halo)));
      for (int y = hy1; y < hy2; ++y)
        for (int x = hx1; x < hx2; ++x) {
          auto* p = img.px(x, y);
          p[0] = p[1] = p[2] = 100;
        }
    }
    const auto& ap = appearance_of(o.species);
    const int bx1 = std::max(0, static_cast<int>(std::floor(o.x)));
    const int bx2 = std::min(c.width, static_cast<int>(std::ceil(o.x + o.w)));
    const int by1 = std::max(0, static_cast<int>(std::floor(y1)));
    const int by2 = std::min(c.height, static_cast<int>(std::ceil(y2)));
    for (int y = by1; y < by2; ++y)
      for (int x = bx1; x < bx2; ++x) {
        const double u = ((x + 0.5) - o.x) / o.w * 2.0 - 1.0;
        const double v = ((y + 0.5) - y1) / o.h * 2.0 - 1.0;
        if (!detail::inside_shape(ap.shape, u, v)) continue;
        double shade = 1.0;
        if (ap.stripe_period > 0 &&
            static_cast<int>(std::floor(((y + 0.5) - y1) / ap.stripe_period)) % 2 == 1)
          shade = 0.7;
        auto* p = img.px(x, y);
        for (int ch = 0; ch < 3; ++ch) p[ch] = detail::clamp_u8(ap.color[ch] * shade);
      }
  }
  return img;
}

// ---- generation ----------------------------------------------------------------

namespace detail {

/// Per-second substrate sets built from regimes, then turned into maximal
/// same-substrate runs. A run over seconds k..m becomes the inclusive
/// interval [k, m+1] clipped to the duration.
inline std::vector<SubstrateInterval> generate_intervals(const SceneConfig& c,
                                                         std::mt19937_64& rng) {
  const long seconds = static_cast<long>(std::ceil(c.duration - 1e-9));
  std::vector<SubstrateSet> per_second(static_cast<std::size_t>(seconds));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> seg(1.0 / c.substrate_segment_length);
  // Weighted choice among substrates not in `exclude`; -1 when none is left.
  auto pick = [&](SubstrateSet exclude) {
    std::array<double, kNumSubstrates> w{};
    double total = 0;
    for (int s = 0; s < kNumSubstrates; ++s) {
      w[s] = exclude.test(s) ? 0.0 : c.substrate_frequency[s];
      total += w[s];
    }
    if (total <= 0) return -1;
    double u = unif(rng) * total;
    for (int s = 0; s < kNumSubstrates; ++s) {
      if (w[s] <= 0) continue;
      if (u < w[s]) return s;
      u -= w[s];
    }
    for (int s = kNumSubstrates; s-- > 0;)
      if (w[s] > 0) return s;
    return -1;
  };
  int prev = -1;
  long t = 0;
  while (t < seconds) {
    const long len = std::max(1L, std::lround(seg(rng)));
    SubstrateSet not_prev;
    if (prev >= 0) not_prev.set(prev);
    int primary = pick(not_prev);
    if (primary < 0) primary = prev;  // a single allowed substrate repeats
    const long end = std::min(seconds, t + len);
    for (long k = t; k < end; ++k) per_second[k].set(primary);
    // Up to two further substrates share a random sub-span of the regime.
    SubstrateSet used;
    used.set(primary);
    while (used.count() < 3 && unif(rng) < c.substrate_overlap_prob) {
      const int secondary = pick(used);
      if (secondary < 0) break;
      used.set(secondary);
      std::uniform_int_distribution<long> start_d(t, end - 1);
      const long s0 = start_d(rng);
      std::uniform_int_distribution<long> len_d(1, end - s0);
      const long s1 = s0 + len_d(rng);
      for (long k = s0; k < s1; ++k) per_second[k].set(secondary);
    }
    prev = primary;
    t = end;
  }
  std::vector<SubstrateInterval> out;
  for (int s = 0; s < kNumSubstrates; ++s) {
    long k = 0;
    while (k < seconds) {
      if (!per_second[k].test(s)) {
        ++k;
        continue;
      }
      long m = k;
      while (m + 1 < seconds && per_second[m + 1].test(s)) ++m;
      out.push_back({substrate_at(s), static_cast<double>(k),
                     std::min(static_cast<double>(m + 1), c.duration)});
      k = m + 1;
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.substrate < b.substrate;
  });
  return out;
}

/// Exponential tilt of the frame-time distribution over substrate sets so
/// that, for one species, P(substrate s present at contact) equals target[s].
/// Targets of exactly 0 or 1 become hard exclusions or requirements.
inline std::array<double, 16> fit_set_weights(const std::array<double, 16>& set_frames,
                                              const std::array<double, kNumSubstrates>& target) {
  std::array<double, 16> w{};
  for (int S = 0; S < 16; ++S) {
    bool ok = set_frames[S] > 0;
    for (int s = 0; s < kNumSubstrates && ok; ++s) {
      const bool has = (S >> s) & 1;
      if (target[s] <= 0 && has) ok = false;
      if (target[s] >= 1 && !has) ok = false;
    }
    w[S] = ok ? 1.0 : 0.0;
  }
  std::array<double, kNumSubstrates> theta;
  theta.fill(1.0);
  for (int it = 0; it < 2000; ++it) {
    double worst = 0;
    for (int s = 0; s < kNumSubstrates; ++s) {
      if (target[s] <= 0 || target[s] >= 1) continue;
      double tot = 0, with = 0;
      for (int S = 0; S < 16; ++S) {
        if (w[S] == 0) continue;
        double q = set_frames[S];
        for (int k = 0; k < kNumSubstrates; ++k)
          if ((S >> k) & 1) q *= theta[k];
        tot += q;
        if ((S >> s) & 1) with += q;
      }
      if (tot <= 0) return w;
      const double m = with / tot;
      if (m <= 0 || m >= 1) continue;  // no set can move this marginal
      worst = std::max(worst, std::abs(m - target[s]));
      const double step = (target[s] / (1 - target[s])) * ((1 - m) / m);
      theta[s] = std::clamp(theta[s] * step, 1e-12, 1e12);
    }
    if (worst < 1e-12) break;
  }
  for (int S = 0; S < 16; ++S) {
    if (w[S] == 0) continue;
    for (int k = 0; k < kNumSubstrates; ++k)
      if ((S >> k) & 1) w[S] *= theta[k];
  }
  return w;
}

}  // namespace detail

/// Substrate set (bit s = substrate s) of every frame, equal to
/// labels_at(f) but computed by sweeping intervals instead of per-frame lookup.
inline std::vector<std::uint8_t> frame_substrate_sets(const SyntheticSequence& seq) {
  std::vector<std::uint8_t> sets(static_cast<std::size_t>(seq.num_frames), 0);
  const double fps = seq.config.fps;
  for (const auto& iv : seq.intervals) {
    const long lo = std::max(0L, static_cast<long>(std::floor(iv.begin * fps)) - 1);
    const long hi = std::min(seq.num_frames - 1, static_cast<long>(std::ceil(iv.end * fps)) + 1);
    for (long g = lo; g <= hi; ++g) {
      const double t = seq.time_of(g);
      if (iv.begin <= t && t <= iv.end) sets[g] |= static_cast<std::uint8_t>(1u << index(iv.substrate));
    }
  }
  return sets;
}

inline SyntheticSequence generate_sequence(const SceneConfig& config, std::uint64_t seed,
                                           std::string video_id = "") {
  config.validate();
  SyntheticSequence seq;
  seq.config = config;
  seq.seed = seed;
  seq.video_id = video_id.empty() ? "synth_" + std::to_string(seed) : std::move(video_id);
  seq.num_frames = config.num_frames();
  std::mt19937_64 rng(seed);
  seq.intervals = detail::generate_intervals(config, rng);

  const double H = config.height;
  const long travel = static_cast<long>(std::ceil((H - 1.0) / config.object_speed - 1e-9));
  double max_h = 0;
  for (const auto& r : config.size_range) max_h = std::max(max_h, r.second * 1.2);
  const long pre_roll = static_cast<long>(std::ceil((H + max_h) / config.object_speed));

  const auto set_of = frame_substrate_sets(seq);
  std::array<double, 16> set_frames{};
  for (auto S : set_of) set_frames[S] += 1;
  for (int sp = 0; sp < kNumSpecies; ++sp) {
    std::array<double, kNumSubstrates> target{};
    for (int s = 0; s < kNumSubstrates; ++s) target[s] = config.species_substrate_prior[s][sp];
    auto w = detail::fit_set_weights(set_frames, target);
    // Unattainable targets drive the tilt to extremes; capping keeps rare
    // substrate sets from being flooded with spawns.
    for (int round = 0; round < 20; ++round) {
      double mean = 0;
      for (int S = 0; S < 16; ++S) mean += w[S] * set_frames[S];
      mean /= static_cast<double>(seq.num_frames);
      if (!(mean > 0)) break;
      bool capped = false;
      for (auto& v : w) {
        v /= mean;
        if (v > config.max_tilt) {
          v = config.max_tilt;
          capped = true;
        }
      }
      if (!capped) break;
    }
    seq.set_weights[sp] = w;
  }

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int next_id = 0;
  for (long f = -pre_roll; f < seq.num_frames; ++f) {
    // Species intensities follow the substrates active at the object's
    // future bottom-contact frame.
    const long contact = std::clamp(f + travel, 0L, seq.num_frames - 1);
    const int S = set_of[contact];
    for (int sp = 0; sp < kNumSpecies; ++sp) {
      const double lambda = config.species_rate[sp] * seq.set_weights[sp][S] / config.fps;
      if (lambda <= 0) continue;
      std::poisson_distribution<int> pois(lambda);
      const int n = pois(rng);
      for (int k = 0; k < n; ++k) {
        const auto [lo, hi] = config.size_range[sp];
        const double size = lo + (hi - lo) * unif(rng);
        const double aspect = std::exp((unif(rng) - 0.5) * 0.6);
        GtObject o;
        o.species = species_at(sp);
        o.w = std::min(size * std::sqrt(aspect), config.width - 1.0);
        o.h = size / std::sqrt(aspect);
        o.spawn_frame = f;
        // All objects share one speed, so spawn-time separation persists.
        const double margin = 2.0 * config.halo + 2.0;
        bool placed = false;
        for (int attempt = 0; attempt < 6 && !placed; ++attempt) {
          o.x = unif(rng) * (config.width - o.w);
          placed = true;
          const double oy1 = -o.h - static_cast<double>(f) * config.object_speed;
          for (auto it = seq.objects.rbegin(); it != seq.objects.rend(); ++it) {
            const double py1 = -it->h - static_cast<double>(it->spawn_frame) * config.object_speed;
            if (py1 - oy1 > H + 2 * max_h) break;
            const bool xo = o.x < it->x + it->w + margin && it->x < o.x + o.w + margin;
            const bool yo = oy1 < py1 + it->h + margin && py1 < oy1 + o.h + margin;
            if (xo && yo) {
              placed = false;
              break;
            }
          }
        }
        if (!placed) continue;
        o.id = next_id++;
        seq.objects.push_back(o);
      }
    }
  }
  // Pre-roll objects that already reached the bottom before frame 0 would be
  // bottom-touching individuals without a count label, so they are dropped.
  std::erase_if(seq.objects, [&](const GtObject& o) { return seq.contact_frame(o) < 0; });
  for (std::size_t i = 0; i < seq.objects.size(); ++i) seq.objects[i].id = static_cast<int>(i);
  for (const auto& o : seq.objects) {
    const long c = seq.contact_frame(o);
    if (c >= 0 && c < seq.num_frames) seq.cabofs.push_back({o.species, seq.time_of(c), 1});
  }
  std::stable_sort(seq.cabofs.begin(), seq.cabofs.end(),
                   [](const auto& a, const auto& b) { return a.at < b.at; });
  return seq;
}

/// Co-occurrence fractions implied by the fitted spawn intensities over the
/// sequence's realised substrate timeline.
inline std::array<std::array<std::optional<double>, kNumSpecies>, kNumSubstrates>
expected_cooccurrence(const SyntheticSequence& seq) {
  std::array<std::array<double, kNumSpecies>, kNumSubstrates> num{};
  std::array<double, kNumSpecies> den{};
  for (const auto S : frame_substrate_sets(seq)) {
    for (int sp = 0; sp < kNumSpecies; ++sp) {
      const double w = seq.set_weights[sp][S] * seq.config.species_rate[sp];
      den[sp] += w;
      for (int s = 0; s < kNumSubstrates; ++s)
        if ((S >> s) & 1) num[s][sp] += w;
    }
  }
  std::array<std::array<std::optional<double>, kNumSpecies>, kNumSubstrates> out{};
  for (int s = 0; s < kNumSubstrates; ++s)
    for (int sp = 0; sp < kNumSpecies; ++sp)
      if (den[sp] > 0) out[s][sp] = num[s][sp] / den[sp];
  return out;
}

// ---- partial annotation ----------------------------------------------------------

struct PartialTrainingSet {
  std::vector<KeyframeBox> keyframes;
  std::vector<FrameGroundTruth> eval_frames;
  std::vector<int> withheld_ids;  // sorted
  std::vector<int> visible_ids;   // every object visible in some frame, sorted
};

/// Withholds floor(fraction * N) of the N visible objects from every
/// keyframe. Keyframes fall on multiples of keyframe_interval; evaluation
/// frames on multiples of eval_interval and list every box that is not
/// entirely above the midline, withheld or not.
inline PartialTrainingSet emit_partial_training_set(const SyntheticSequence& seq,
                                                    double withhold_fraction,
                                                    std::uint64_t seed) {
  if (!(withhold_fraction >= 0 && withhold_fraction < 1))
    throw DataError("withhold_fraction must be in [0,1)");
  PartialTrainingSet out;
  const auto tracks = seq.gt_tracks();
  for (const auto& t : tracks) out.visible_ids.push_back(t.object_id);
  std::sort(out.visible_ids.begin(), out.visible_ids.end());

  const auto n_withheld = static_cast<std::size_t>(
      std::floor(withhold_fraction * static_cast<double>(out.visible_ids.size()) + 1e-9));
  std::vector<int> shuffled = out.visible_ids;
  std::mt19937_64 rng(seed ^ 0x5bd1e995u);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  out.withheld_ids.assign(shuffled.begin(), shuffled.begin() + static_cast<long>(n_withheld));
  std::sort(out.withheld_ids.begin(), out.withheld_ids.end());
  auto withheld = [&](int id) {
    return std::binary_search(out.withheld_ids.begin(), out.withheld_ids.end(), id);
  };

  for (const auto& t : tracks) {
    if (withheld(t.object_id)) continue;
    for (const auto& [f, b] : t.boxes)
      if (f % seq.config.keyframe_interval == 0)
        out.keyframes.push_back({seq.video_id, f, std::to_string(t.object_id), t.species, b});
  }
  std::stable_sort(out.keyframes.begin(), out.keyframes.end(),
                   [](const auto& a, const auto& b) { return a.frame < b.frame; });

  for (long f = 0; f < seq.num_frames; f += seq.config.eval_interval) {
    FrameGroundTruth g{seq.video_id, f, seq.config.width, seq.config.height, {}, true};
    for (const auto& lb : seq.boxes_at(f))
      if (!entirely_above_midline(lb.box, seq.config.height)) g.boxes.push_back(lb);
    out.eval_frames.push_back(std::move(g));
  }
  return out;
}

// ---- config I/O --------------------------------------------------------------------

inline nlohmann::json to_json(const SceneConfig& c) {
  nlohmann::json j;
  j["width"] = c.width;
  j["height"] = c.height;
  j["fps"] = c.fps;
  j["duration"] = c.duration;
  j["substrate_segment_length"] = c.substrate_segment_length;
  j["substrate_overlap_prob"] = c.substrate_overlap_prob;
  j["substrate_frequency"] = c.substrate_frequency;
  j["species_substrate_prior"] = c.species_substrate_prior;
  j["species_rate"] = c.species_rate;
  j["object_speed"] = c.object_speed;
  nlohmann::json sizes = nlohmann::json::array();
  for (const auto& [lo, hi] : c.size_range) sizes.push_back({lo, hi});
  j["size_range"] = sizes;
  nlohmann::json app = nlohmann::json::array();
  for (const auto& a : c.appearance)
    app.push_back({{"shape", static_cast<int>(a.shape)},
                   {"color", a.color},
                   {"stripe_period", a.stripe_period},
                   {"texture_seed", a.texture_seed}});
  j["appearance"] = app;
  nlohmann::json tex = nlohmann::json::array();
  for (const auto& t : c.textures)
    tex.push_back({{"color", t.color},
                   {"scale_x", t.scale_x},
                   {"scale_y", t.scale_y},
                   {"contrast", t.contrast}});
  j["textures"] = tex;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [a, b] : c.ambiguity_pairs)
    pairs.push_back({std::string(name(a)), std::string(name(b))});
  j["ambiguity_pairs"] = pairs;
  j["max_tilt"] = c.max_tilt;
  j["halo"] = c.halo;
  j["keyframe_interval"] = c.keyframe_interval;
  j["eval_interval"] = c.eval_interval;
  return j;
}

/// Missing keys keep their default values.
inline SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig c = SceneConfig::defaults();
  try {
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.fps = j.value("fps", c.fps);
    c.duration = j.value("duration", c.duration);
    c.substrate_segment_length = j.value("substrate_segment_length", c.substrate_segment_length);
    c.substrate_overlap_prob = j.value("substrate_overlap_prob", c.substrate_overlap_prob);
    if (j.contains("substrate_frequency"))
      c.substrate_frequency = j.at("substrate_frequency").get<decltype(c.substrate_frequency)>();
    if (j.contains("species_substrate_prior"))
      c.species_substrate_prior = j.at("species_substrate_prior").get<decltype(c.species_substrate_prior)>();
    if (j.contains("species_rate"))
      c.species_rate = j.at("species_rate").get<decltype(c.species_rate)>();
    c.object_speed = j.value("object_speed", c.object_speed);
    if (j.contains("size_range")) {
      const auto& s = j.at("size_range");
      if (s.size() != kNumSpecies) throw DataError("size_range needs one entry per species");
      for (int i = 0; i < kNumSpecies; ++i) c.size_range[i] = {s[i][0].get<double>(), s[i][1].get<double>()};
    }
    if (j.contains("appearance")) {
      const auto& a = j.at("appearance");
      if (a.size() != kNumSpecies) throw DataError("appearance needs one entry per species");
      for (int i = 0; i < kNumSpecies; ++i) {
        c.appearance[i].shape = static_cast<Shape>(a[i].value("shape", 0));
        c.appearance[i].color = a[i].at("color").get<std::array<std::uint8_t, 3>>();
        c.appearance[i].stripe_period = a[i].value("stripe_period", 0);
        c.appearance[i].texture_seed = a[i].value("texture_seed", 0u);
      }
    }
    if (j.contains("textures")) {
      const auto& t = j.at("textures");
      if (t.size() != kNumSubstrates) throw DataError("textures needs one entry per substrate");
      for (int i = 0; i < kNumSubstrates; ++i) {
        c.textures[i].color = t[i].at("color").get<std::array<std::uint8_t, 3>>();
        c.textures[i].scale_x = t[i].value("scale_x", c.textures[i].scale_x);
        c.textures[i].scale_y = t[i].value("scale_y", c.textures[i].scale_y);
        c.textures[i].contrast = t[i].value("contrast", c.textures[i].contrast);
      }
    }
    if (j.contains("ambiguity_pairs")) {
      c.ambiguity_pairs.clear();
      for (const auto& p : j.at("ambiguity_pairs")) {
        auto a = parse_species(p[0].get<std::string>());
        auto b = parse_species(p[1].get<std::string>());
        if (!a || !b) throw DataError("unknown species in ambiguity_pairs");
        c.ambiguity_pairs.emplace_back(*a, *b);
      }
    }
    c.max_tilt = j.value("max_tilt", c.max_tilt);
    c.halo = j.value("halo", c.halo);
    c.keyframe_interval = j.value("keyframe_interval", c.keyframe_interval);
    c.eval_interval = j.value("eval_interval", c.eval_interval);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("scene config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace benthic
