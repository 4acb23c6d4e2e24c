#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "irview/data_pipeline.hpp"
#include "irview/image.hpp"
#include "irview/manifest.hpp"

namespace irview {

/// Procedural stand-in for an infrared vehicle corpus: per-class rigid objects made of boxes and
/// ellipsoids, rotated about the vertical axis, with attached heat spots and background clutter.
struct SynthConfig {
  int n_classes = 8;
  int views_per_circle = 72;
  int regimes = 2;  // 1 = day only, 2 = day and night
  std::uint64_t seed = 1;
  double range_m = 1000.0;

  // Appearance parameters, recorded in the manifest header.
  double day_background = 0.45;
  double night_background = 0.16;
  double day_clutter = 0.08;
  double night_clutter = 0.04;
  double day_noise = 0.02;
  double night_noise = 0.015;
  double day_object_gain = 0.8;
  double night_object_gain = 1.05;

  void validate() const;
  double angular_step() const { return 360.0 / views_per_circle; }
};

/// Renders one view. Deterministic in (config, class, azimuth index, regime).
GrayImage8 render_view(const SynthConfig& config, int class_id, int azimuth_index, Regime regime);

/// Renders every view in memory (no files).
std::vector<ViewSample> synth_corpus(const SynthConfig& config);

/// Writes images/<class>_<regime>_<azimuth>.png and manifest.csv under out_dir.
DatasetManifest synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace irview
