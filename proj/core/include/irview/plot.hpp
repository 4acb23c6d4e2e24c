#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "irview/data_pipeline.hpp"

namespace irview {

struct PlotLabel {
  int class_id = 0;
  Regime regime = Regime::day;
  auto operator<=>(const PlotLabel&) const = default;
};

struct PlotStyle {
  int width = 720;
  int height = 600;
  int legend_width = 120;
  int marker_radius = 3;
};

struct LegendEntry {
  PlotLabel label;
  std::array<std::uint8_t, 3> color{};
  std::size_t count = 0;
};

/// Scatter plot to RGB PNG: colour by class, filled disc for day, hollow square for night.
/// Also writes `<out>.legend.txt` with one line per distinct label. Returns the legend.
std::vector<LegendEntry> render_projection(std::span<const std::array<double, 2>> points,
                                           std::span<const PlotLabel> labels, const std::filesystem::path& out,
                                           const PlotStyle& style = {});

std::filesystem::path legend_path(const std::filesystem::path& plot);

/// Parses a legend sidecar back into entries.
std::vector<LegendEntry> read_legend(const std::filesystem::path& legend);

std::array<std::uint8_t, 3> class_color(int class_id);

}  // namespace irview
