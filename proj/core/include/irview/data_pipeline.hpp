#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "irview/image.hpp"

namespace irview {

enum class Regime : std::uint8_t { day = 0, night = 1 };

inline int regime_flag(Regime r) { return static_cast<int>(r); }
Regime regime_from_flag(int flag);

/// Identifies one view in a corpus. Unique per manifest.
struct SampleKey {
  int class_id = 0;
  double azimuth_deg = 0.0;
  Regime regime = Regime::day;
  double range_m = 0.0;

  auto operator<=>(const SampleKey&) const = default;
};

std::string to_string(const SampleKey& key);

struct ViewSample {
  SampleKey key;
  Raster image;
};

/// [sin t, cos t, sin d, cos d, regime] with t the target azimuth and d = (target - input) mod 360.
struct PoseVector {
  static constexpr int kSize = 5;
  std::array<double, kSize> v{};

  bool operator==(const PoseVector&) const = default;
};

PoseVector encode_pose(double input_azimuth_deg, double target_azimuth_deg, Regime target_regime);

/// Smallest angle between two azimuths, in [0, 180].
double angular_distance(double a_deg, double b_deg);

/// Training unit. Indices refer to the corpus the pairs were generated from.
struct ViewPair {
  std::size_t input = 0;
  std::size_t target = 0;
  PoseVector pose;
};

struct PairingOptions {
  double max_delta_deg = 360.0;
  bool cross_regime = false;
};

/// Every ordered pair of distinct views of one class whose angular distance is within
/// max_delta_deg, sorted by (class, input azimuth, target azimuth, input regime, target regime, ranges).
std::vector<ViewPair> generate_pairs(std::span<const SampleKey> views, const PairingOptions& options);

struct TrainTestSplit {
  std::vector<ViewPair> train;
  std::vector<ViewPair> test;
};

/// Splits by target view; no target appears on both sides. Whole target groups are moved
/// to the test side in seeded order until it holds round(test_fraction * pairs) pairs.
TrainTestSplit split_train_test(std::span<const ViewPair> pairs, double test_fraction, std::uint64_t seed);

std::vector<SampleKey> keys_of(std::span<const ViewSample> samples);

}  // namespace irview
