#pragma once

#include <algorithm>
#include <array>
#include <bitset>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace benthic {

/// Thrown for malformed inputs (annotation files, configs, datasets).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when training or filtering hits a non-finite value or a singular system.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Substrate : std::uint8_t { Boulder = 0, Cobble, Mud, Rock };
inline constexpr int kNumSubstrates = 4;

// Ordering follows the species figure: BS, FPU, GG, LLS, RSG, SL, LS, WSSC, WSpSC, YG.
enum class Species : std::uint8_t { BS = 0, FPU, GG, LLS, RSG, SL, LS, WSSC, WSpSC, YG };
inline constexpr int kNumSpecies = 10;

/// Multi-hot substrate label in B, C, M, R bit order.
using SubstrateSet = std::bitset<kNumSubstrates>;

inline constexpr std::array<std::string_view, kNumSubstrates> kSubstrateNames = {
    "Boulder", "Cobble", "Mud", "Rock"};
inline constexpr std::array<std::string_view, kNumSubstrates> kSubstrateShort = {"B", "C", "M",
                                                                                 "R"};
inline constexpr std::array<std::string_view, kNumSpecies> kSpeciesNames = {
    "BS", "FPU", "GG", "LLS", "RSG", "SL", "LS", "WSSC", "WSpSC", "YG"};
inline constexpr std::array<std::string_view, kNumSpecies> kSpeciesLongNames = {
    "Basket star",
    "Fragile pink urchin",
    "Gray gorgonian",
    "Long legged sunflower star",
    "Red swiftia gorgonian",
    "Squat lobster",
    "Laced sponge",
    "White slipper sea cucumber",
    "White spine sea cucumber",
    "Yellow gorgonian"};

inline constexpr int index(Substrate s) { return static_cast<int>(s); }
inline constexpr int index(Species s) { return static_cast<int>(s); }
inline constexpr Substrate substrate_at(int i) { return static_cast<Substrate>(i); }
inline constexpr Species species_at(int i) { return static_cast<Species>(i); }

inline std::string_view name(Substrate s) { return kSubstrateNames[index(s)]; }
inline std::string_view name(Species s) { return kSpeciesNames[index(s)]; }

namespace detail {
inline bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto lower = [](char c) { return (c >= 'A' && c <= 'Z') ? char(c - 'A' + 'a') : c; };
    if (lower(a[i]) != lower(b[i])) return false;
  }
  return true;
}
}  // namespace detail

inline std::optional<Substrate> parse_substrate(std::string_view s) {
  for (int i = 0; i < kNumSubstrates; ++i)
    if (detail::iequals(s, kSubstrateNames[i]) || detail::iequals(s, kSubstrateShort[i]))
      return substrate_at(i);
  return std::nullopt;
}

/// Accepts the abbreviation (case-sensitive, WSSC and WSpSC differ only by case) or the common name.
inline std::optional<Species> parse_species(std::string_view s) {
  for (int i = 0; i < kNumSpecies; ++i)
    if (s == kSpeciesNames[i]) return species_at(i);
  for (int i = 0; i < kNumSpecies; ++i)
    if (detail::iequals(s, kSpeciesNames[i]) || detail::iequals(s, kSpeciesLongNames[i]))
      return species_at(i);
  return std::nullopt;
}

/// Axis-aligned box in pixel coordinates, (x1, y1) top-left, (x2, y2) bottom-right.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x1 < x2 && y1 < y2;
  }
  Box clipped(double w, double h) const {
    return {std::clamp(x1, 0.0, w), std::clamp(y1, 0.0, h), std::clamp(x2, 0.0, w),
            std::clamp(y2, 0.0, h)};
  }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Frame index for a timestamp: round(t * fps).
inline long frame_index(double seconds, double fps) { return std::lround(seconds * fps); }

}  // namespace benthic
