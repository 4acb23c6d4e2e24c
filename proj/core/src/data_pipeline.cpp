#include "irview/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <tuple>

#include "irview/errors.hpp"

namespace irview {

namespace {

void require_azimuth(double deg, const char* what) {
  if (!std::isfinite(deg) || deg < 0.0 || deg >= 360.0)
    throw DomainError(std::string(what) + ": azimuth " + std::to_string(deg) + " outside [0,360)");
}

// sin/cos of an angle in [0,360) degrees, exact at multiples of 90.
std::pair<double, double> sincos_deg(double deg) {
  const int quadrant = static_cast<int>(deg / 90.0);
  const double rem = deg - 90.0 * quadrant;
  const double rad = rem * std::numbers::pi / 180.0;
  const double s = rem == 0.0 ? 0.0 : std::sin(rad);
  const double c = rem == 0.0 ? 1.0 : std::cos(rad);
  switch (quadrant % 4) {
    case 0: return {s, c};
    case 1: return {c, -s};
    case 2: return {-s, -c};
    default: return {-c, s};
  }
}

}  // namespace

Regime regime_from_flag(int flag) {
  if (flag != 0 && flag != 1) throw DomainError("day_night flag must be 0 or 1, got " + std::to_string(flag));
  return static_cast<Regime>(flag);
}

std::string to_string(const SampleKey& key) {
  std::ostringstream os;
  os << "(class=" << key.class_id << ", azimuth=" << key.azimuth_deg << ", day_night=" << regime_flag(key.regime)
     << ", range=" << key.range_m << ")";
  return os.str();
}

PoseVector encode_pose(double input_azimuth_deg, double target_azimuth_deg, Regime target_regime) {
  require_azimuth(input_azimuth_deg, "encode_pose");
  require_azimuth(target_azimuth_deg, "encode_pose");
  double delta = std::fmod(target_azimuth_deg - input_azimuth_deg + 360.0, 360.0);
  if (delta >= 360.0) delta -= 360.0;
  const auto [st, ct] = sincos_deg(target_azimuth_deg);
  const auto [sd, cd] = sincos_deg(delta);
  return PoseVector{{st, ct, sd, cd, static_cast<double>(regime_flag(target_regime))}};
}

double angular_distance(double a_deg, double b_deg) {
  const double d = std::fmod(std::abs(a_deg - b_deg), 360.0);
  return std::min(d, 360.0 - d);
}

std::vector<ViewPair> generate_pairs(std::span<const SampleKey> views, const PairingOptions& options) {
  if (!(options.max_delta_deg >= 0.0)) throw DomainError("generate_pairs: max_delta_deg must be >= 0");
  constexpr double kSlack = 1e-9;

  std::vector<std::size_t> order(views.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return views[a].class_id < views[b].class_id; });

  std::vector<ViewPair> pairs;
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    while (hi < order.size() && views[order[hi]].class_id == views[order[lo]].class_id) ++hi;
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t j = lo; j < hi; ++j) {
        if (i == j) continue;
        const SampleKey& a = views[order[i]];
        const SampleKey& b = views[order[j]];
        if (!options.cross_regime && a.regime != b.regime) continue;
        if (angular_distance(a.azimuth_deg, b.azimuth_deg) > options.max_delta_deg + kSlack) continue;
        pairs.push_back({order[i], order[j], encode_pose(a.azimuth_deg, b.azimuth_deg, b.regime)});
      }
    }
    lo = hi;
  }

  auto sort_key = [&](const ViewPair& p) {
    const SampleKey& a = views[p.input];
    const SampleKey& b = views[p.target];
    return std::make_tuple(a.class_id, a.azimuth_deg, b.azimuth_deg, a.regime, b.regime, a.range_m, b.range_m,
                           p.input, p.target);
  };
  std::sort(pairs.begin(), pairs.end(),
            [&](const ViewPair& x, const ViewPair& y) { return sort_key(x) < sort_key(y); });
  return pairs;
}

TrainTestSplit split_train_test(std::span<const ViewPair> pairs, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw DomainError("split_train_test: test_fraction must lie in (0,1)");
  TrainTestSplit split;
  if (pairs.empty()) return split;

  std::vector<std::size_t> targets;
  targets.reserve(pairs.size());
  for (const auto& p : pairs) targets.push_back(p.target);
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

  std::mt19937_64 rng(seed);
  for (std::size_t i = targets.size(); i > 1; --i) std::swap(targets[i - 1], targets[rng() % i]);

  std::vector<std::size_t> group_size_of(targets.empty() ? 0 : *std::max_element(targets.begin(), targets.end()) + 1);
  for (const auto& p : pairs) ++group_size_of[p.target];

  const auto wanted = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(pairs.size())));
  std::vector<bool> in_test(group_size_of.size(), false);
  std::size_t taken = 0;
  for (std::size_t t : targets) {
    if (taken >= wanted) break;
    in_test[t] = true;
    taken += group_size_of[t];
  }
  for (const auto& p : pairs) (in_test[p.target] ? split.test : split.train).push_back(p);
  return split;
}

std::vector<SampleKey> keys_of(std::span<const ViewSample> samples) {
  std::vector<SampleKey> keys;
  keys.reserve(samples.size());
  for (const auto& s : samples) keys.push_back(s.key);
  return keys;
}

}  // namespace irview
