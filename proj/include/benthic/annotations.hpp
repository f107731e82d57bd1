#pragma once

// Annotation records: substrate intervals, CABOF counts, keyframe boxes, and
// the statistics derived from them.

#include <array>
#include <cmath>
#include <cstdio>
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

/// Names of non-interest species accepted in count rows. Rows carrying these
/// land in the "other" bucket and never reach the detector.
inline constexpr std::array<std::string_view, 49> kOtherSpeciesNames = {
    "UI lobed sponge", "UI hairy boot sponge", "UI branched sponge", "UI vase sponge",
    "UI boot sponge", "Cookie star", "UI anemone 4", "UI sea star", "UI tubeworm",
    "Henricia complex", "UI large yellow sponge", "UI thin red star", "UI orange gorgonian",
    "Mushroom soft coral", "Black coral", "Benthic siphonophore", "Bubblegum coral",
    "Deep sea cucumber", "Fish eating star", "Spiny red star", "Spot prawn", "UI anemone",
    "Thorny sea star", "UI anemone 2", "California king crab", "UI trumpet sponge",
    "Pom-pom anemone", "UI prawn", "Crested sea star", "White sea pen", "Red sea star",
    "UI sea pen", "Solaster sun star complex", "UI octopus", "UI nipple sponge", "UI gorgonian",
    "Spiny/thorny star complex", "Gray moon sponge", "Brown box crab", "Decorator crab",
    "UI sand dwelling anemone", "UI nudibranch", "Orange puffball sponge", "Red octopus",
    "Red gorgonian", "Rose star", "Cushion star", "UI urchin", "UI anemone 1"};

struct AnnotationSet {
  std::vector<SubstrateInterval> intervals;
  std::vector<CabofLabel> cabofs;
  std::vector<OtherCount> others;
};

struct VideoAnnotations {
  std::string video_id;
  double fps = 30.0;
  AnnotationSet annotations;
};

enum class Split { Train, Val, Test };

// ---- timestamps ------------------------------------------------------------

/// Parses H:MM:SS with an optional fractional seconds part.
inline std::optional<double> parse_timestamp(std::string_view s) {
  int parts[2] = {0, 0};
  std::size_t pos = 0;
  for (int& p : parts) {
    auto colon = s.find(':', pos);
    if (colon == std::string_view::npos || colon == pos) return std::nullopt;
    for (std::size_t i = pos; i < colon; ++i) {
      if (s[i] < '0' || s[i] > '9') return std::nullopt;
      p = p * 10 + (s[i] - '0');
    }
    pos = colon + 1;
  }
  std::string rest(s.substr(pos));
  if (rest.empty() || rest.size() < 2 || rest[0] < '0' || rest[0] > '9') return std::nullopt;
  char* endp = nullptr;
  double secs = std::strtod(rest.c_str(), &endp);
  if (endp != rest.c_str() + rest.size() || secs < 0 || secs >= 60) return std::nullopt;
  if (parts[1] >= 60) return std::nullopt;
  return parts[0] * 3600.0 + parts[1] * 60.0 + secs;
}

/// Formats as H:MM:SS at microsecond resolution; a fractional part is
/// appended only when the value is not a whole second.
inline std::string format_timestamp(double seconds) {
  const long long micros = std::llround(seconds * 1e6);
  const long long whole = micros / 1000000;
  const long long frac = micros % 1000000;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%lld:%02lld:%02lld", whole / 3600, (whole / 60) % 60,
                whole % 60);
  std::string out = buf;
  if (frac != 0) {
    std::snprintf(buf, sizeof buf, ".%06lld", frac);
    std::string f = buf;
    while (f.back() == '0') f.pop_back();
    out += f;
  }
  return out;
}

// ---- CSV -------------------------------------------------------------------

namespace detail {
inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n\"");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n\"");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline bool is_other_species(std::string_view name) {
  for (auto n : kOtherSpeciesNames)
    if (iequals(n, name)) return true;
  return false;
}
}  // namespace detail

/// Rejects same-substrate intervals that overlap (authoring error).
inline void validate_intervals(const std::vector<SubstrateInterval>& intervals) {
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    const auto& a = intervals[i];
    if (!(a.begin >= 0 && a.begin <= a.end))
      throw DataError("substrate interval requires 0 <= begin <= end");
    for (std::size_t j = i + 1; j < intervals.size(); ++j) {
      const auto& b = intervals[j];
      if (a.substrate == b.substrate && a.begin <= b.end && b.begin <= a.end)
        throw DataError("overlapping " + std::string(name(a.substrate)) + " intervals");
    }
  }
}

inline AnnotationSet parse_annotation_csv_stream(std::istream& in) {
  AnnotationSet out;
  std::string line;
  long row = 0;
  std::array<int, 4> col{-1, -1, -1, -1};  // annotation, begin, end, count
  bool have_header = false;
  auto fail = [&](const std::string& msg) {
    throw DataError("row " + std::to_string(row) + ": " + msg);
  };
  // Each substrate interval remembers its row for overlap diagnostics.
  std::vector<long> interval_rows;

  while (std::getline(in, line)) {
    ++row;
    if (row == 1 && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF)
      line = line.substr(3);  // UTF-8 BOM
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv(line);
    if (!have_header) {
      static constexpr std::array<std::string_view, 4> names = {"annotation", "begin", "end",
                                                                "count"};
      for (std::size_t c = 0; c < cells.size(); ++c)
        for (int k = 0; k < 4; ++k)
          if (detail::iequals(cells[c], names[k])) col[k] = static_cast<int>(c);
      for (int k = 0; k < 4; ++k)
        if (col[k] < 0) fail("missing header column '" + std::string(names[k]) + "'");
      have_header = true;
      continue;
    }
    auto cell = [&](int k) -> std::string {
      return col[k] < static_cast<int>(cells.size()) ? cells[col[k]] : std::string{};
    };
    const std::string ann = cell(0), sbegin = cell(1), send = cell(2), scount = cell(3);
    if (ann.empty()) fail("empty annotation name");
    auto begin = parse_timestamp(sbegin);
    if (!begin) fail("malformed Begin '" + sbegin + "'");

    if (auto sub = parse_substrate(ann)) {
      auto end = parse_timestamp(send);
      if (!end) fail("substrate row requires End");
      if (*end < *begin) fail("End < Begin");
      if (!scount.empty()) fail("substrate row must not carry Count");
      SubstrateInterval iv{*sub, *begin, *end};
      for (std::size_t i = 0; i < out.intervals.size(); ++i) {
        const auto& o = out.intervals[i];
        if (o.substrate == iv.substrate && o.begin <= iv.end && iv.begin <= o.end)
          fail("overlaps " + std::string(name(iv.substrate)) + " interval from row " +
               std::to_string(interval_rows[i]));
      }
      out.intervals.push_back(iv);
      interval_rows.push_back(row);
      continue;
    }

    auto sp = parse_species(ann);
    bool other = !sp && detail::is_other_species(ann);
    if (!sp && !other) fail("unknown annotation name '" + ann + "'");
    if (!send.empty()) fail("species row must not carry End");
    if (scount.empty()) fail("missing Count on species row");
    char* endp = nullptr;
    long count = std::strtol(scount.c_str(), &endp, 10);
    if (endp != scount.c_str() + scount.size() || count < 1) fail("Count must be a positive integer");
    if (sp)
      out.cabofs.push_back({*sp, *begin, static_cast<int>(count)});
    else
      out.others.push_back({ann, *begin, static_cast<int>(count)});
  }
  return out;
}

inline AnnotationSet parse_annotation_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  try {
    return parse_annotation_csv_stream(in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

/// Rows ordered by Begin, substrate rows first on ties.
inline std::string serialize_annotation_csv(const AnnotationSet& set) {
  struct Row {
    double begin;
    int kind;
    std::string text;
  };
  std::vector<Row> rows;
  for (const auto& iv : set.intervals)
    rows.push_back({iv.begin, 0,
                    std::string(name(iv.substrate)) + "," + format_timestamp(iv.begin) + "," +
                        format_timestamp(iv.end) + ","});
  for (const auto& c : set.cabofs)
    rows.push_back({c.at, 1,
                    std::string(name(c.species)) + "," + format_timestamp(c.at) + ",," +
                        std::to_string(c.count)});
  for (const auto& o : set.others)
    rows.push_back(
        {o.at, 2, "\"" + o.name + "\"," + format_timestamp(o.at) + ",," + std::to_string(o.count)});
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.kind < b.kind;
  });
  std::string out = "annotation,begin,end,count\n";
  for (const auto& r : rows) out += r.text + "\n";
  return out;
}

inline void write_annotation_csv(const std::string& path, const AnnotationSet& set) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << serialize_annotation_csv(set);
}

// ---- per-frame labels ------------------------------------------------------

inline SubstrateSet frame_substrate_labels(std::span<const SubstrateInterval> intervals,
                                           double t) {
  SubstrateSet out;
  for (const auto& iv : intervals)
    if (iv.begin <= t && t <= iv.end) out.set(index(iv.substrate));
  return out;
}

/// Linear interpolation of one target's box between two keyframes.
inline Box interpolate_keyframes(const KeyframeBox& a, const KeyframeBox& b, long frame) {
  if (a.target_id != b.target_id || a.video_id != b.video_id)
    throw DataError("keyframes belong to different targets");
  if (a.frame > b.frame) throw DataError("keyframes out of order");
  if (frame < a.frame || frame > b.frame) throw DataError("frame outside keyframe range");
  if (frame == a.frame) return a.box;
  if (frame == b.frame) return b.box;
  const double f = static_cast<double>(frame - a.frame) / static_cast<double>(b.frame - a.frame);
  auto lerp = [f](double p, double q) { return p + f * (q - p); };
  return {lerp(a.box.x1, b.box.x1), lerp(a.box.y1, b.box.y1), lerp(a.box.x2, b.box.x2),
          lerp(a.box.y2, b.box.y2)};
}

/// Expands keyframes into per-frame boxes for every frame between consecutive
/// keyframes of the same target.
inline std::vector<KeyframeBox> densify_keyframes(std::vector<KeyframeBox> keyframes) {
  std::stable_sort(keyframes.begin(), keyframes.end(), [](const auto& a, const auto& b) {
    if (a.video_id != b.video_id) return a.video_id < b.video_id;
    if (a.target_id != b.target_id) return a.target_id < b.target_id;
    return a.frame < b.frame;
  });
  std::vector<KeyframeBox> out;
  for (std::size_t i = 0; i < keyframes.size(); ++i) {
    out.push_back(keyframes[i]);
    if (i + 1 < keyframes.size() && keyframes[i + 1].video_id == keyframes[i].video_id &&
        keyframes[i + 1].target_id == keyframes[i].target_id) {
      for (long f = keyframes[i].frame + 1; f < keyframes[i + 1].frame; ++f) {
        KeyframeBox k = keyframes[i];
        k.frame = f;
        k.box = interpolate_keyframes(keyframes[i], keyframes[i + 1], f);
        out.push_back(std::move(k));
      }
    }
  }
  return out;
}

// ---- statistics ------------------------------------------------------------

/// Count-weighted individuals per (substrate, species), kept as exact integers.
struct CooccurrenceTable {
  std::array<std::array<long, kNumSpecies>, kNumSubstrates> individuals{};
  std::array<long, kNumSpecies> totals{};

  /// Absent when the species has no individuals.
  std::optional<double> fraction(Substrate s, Species sp) const {
    if (totals[index(sp)] == 0) return std::nullopt;
    return static_cast<double>(individuals[index(s)][index(sp)]) /
           static_cast<double>(totals[index(sp)]);
  }
};

inline CooccurrenceTable cooccurrence_table(std::span<const VideoAnnotations> videos) {
  CooccurrenceTable t;
  for (const auto& v : videos) {
    for (const auto& c : v.annotations.cabofs) {
      auto labels = frame_substrate_labels(v.annotations.intervals, c.at);
      t.totals[index(c.species)] += c.count;
      for (int s = 0; s < kNumSubstrates; ++s)
        if (labels.test(s)) t.individuals[s][index(c.species)] += c.count;
    }
  }
  return t;
}

inline std::array<long, kNumSpecies> cabof_totals(std::span<const VideoAnnotations> videos,
                                                  const std::map<std::string, Split>& splits,
                                                  Split split) {
  std::array<long, kNumSpecies> out{};
  for (const auto& v : videos) {
    auto it = splits.find(v.video_id);
    if (it == splits.end() || it->second != split) continue;
    for (const auto& c : v.annotations.cabofs) out[index(c.species)] += c.count;
  }
  return out;
}

/// Totals over every video given, regardless of split.
inline std::array<long, kNumSpecies> cabof_totals(std::span<const CabofLabel> cabofs) {
  std::array<long, kNumSpecies> out{};
  for (const auto& c : cabofs) out[index(c.species)] += c.count;
  return out;
}

}  // namespace benthic
