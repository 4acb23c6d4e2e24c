#include "irview/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "irview/errors.hpp"
#include "irview/png_io.hpp"

namespace irview {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 10> kPalette{{{31, 119, 180},
                                                                 {255, 127, 14},
                                                                 {44, 160, 44},
                                                                 {214, 39, 40},
                                                                 {148, 103, 189},
                                                                 {140, 86, 75},
                                                                 {227, 119, 194},
                                                                 {127, 127, 127},
                                                                 {188, 189, 34},
                                                                 {23, 190, 207}}};

struct Canvas {
  int width, height;
  std::vector<std::uint8_t> rgb;

  Canvas(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 255) {}

  void set(int x, int y, const std::array<std::uint8_t, 3>& c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const std::size_t o = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[o] = c[0];
    rgb[o + 1] = c[1];
    rgb[o + 2] = c[2];
  }

  void marker(int cx, int cy, int r, Regime regime, const std::array<std::uint8_t, 3>& c) {
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        if (regime == Regime::day) {
          if (dx * dx + dy * dy <= r * r) set(cx + dx, cy + dy, c);
        } else if (std::abs(dx) == r || std::abs(dy) == r) {
          set(cx + dx, cy + dy, c);
        }
      }
  }

  void rect_outline(int x0, int y0, int x1, int y1, const std::array<std::uint8_t, 3>& c) {
    for (int x = x0; x <= x1; ++x) {
      set(x, y0, c);
      set(x, y1, c);
    }
    for (int y = y0; y <= y1; ++y) {
      set(x0, y, c);
      set(x1, y, c);
    }
  }
};

}  // namespace

std::array<std::uint8_t, 3> class_color(int class_id) {
  const auto base = kPalette[static_cast<std::size_t>(std::abs(class_id)) % kPalette.size()];
  const int cycle = std::abs(class_id) / static_cast<int>(kPalette.size());
  if (cycle == 0) return base;
  // Later cycles are darkened so colours stay distinct.
  const double f = std::pow(0.65, cycle);
  return {static_cast<std::uint8_t>(base[0] * f), static_cast<std::uint8_t>(base[1] * f),
          static_cast<std::uint8_t>(base[2] * f)};
}

std::filesystem::path legend_path(const std::filesystem::path& plot) {
  return std::filesystem::path(plot.string() + ".legend.txt");
}

std::vector<LegendEntry> render_projection(std::span<const std::array<double, 2>> points,
                                           std::span<const PlotLabel> labels, const std::filesystem::path& out,
                                           const PlotStyle& style) {
  if (points.size() != labels.size())
    throw ShapeError("render_projection: " + std::to_string(points.size()) + " points but " +
                     std::to_string(labels.size()) + " labels");
  if (style.width <= style.legend_width + 40 || style.height < 40) throw DomainError("render_projection: canvas too small");

  std::map<PlotLabel, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  std::vector<LegendEntry> legend;
  for (const auto& [label, count] : counts) legend.push_back({label, class_color(label.class_id), count});

  Canvas canvas(style.width, style.height);
  const int margin = 20;
  const int plot_x0 = margin, plot_y0 = margin;
  const int plot_x1 = style.width - style.legend_width - margin, plot_y1 = style.height - margin;
  canvas.rect_outline(plot_x0 - 1, plot_y0 - 1, plot_x1 + 1, plot_y1 + 1, {0, 0, 0});

  if (!points.empty()) {
    double xmin = points[0][0], xmax = xmin, ymin = points[0][1], ymax = ymin;
    for (const auto& p : points) {
      xmin = std::min(xmin, p[0]);
      xmax = std::max(xmax, p[0]);
      ymin = std::min(ymin, p[1]);
      ymax = std::max(ymax, p[1]);
    }
    const double xr = xmax > xmin ? xmax - xmin : 1.0, yr = ymax > ymin ? ymax - ymin : 1.0;
    const int inner = style.marker_radius + 2;
    const double sx = (plot_x1 - plot_x0 - 2 * inner) / xr, sy = (plot_y1 - plot_y0 - 2 * inner) / yr;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const int px = plot_x0 + inner + static_cast<int>(std::lround((points[i][0] - xmin) * sx));
      const int py = plot_y1 - inner - static_cast<int>(std::lround((points[i][1] - ymin) * sy));
      canvas.marker(px, py, style.marker_radius, labels[i].regime, class_color(labels[i].class_id));
    }
  }

  const int lx = plot_x1 + margin;
  for (std::size_t k = 0; k < legend.size(); ++k) {
    const int ly = plot_y0 + 6 + static_cast<int>(k) * 14;
    if (ly + 6 > style.height) break;
    canvas.marker(lx + 6, ly, 4, legend[k].label.regime, legend[k].color);
    for (int x = lx + 14; x < lx + 40; ++x) canvas.set(x, ly, legend[k].color);
  }

  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  write_rgb_png(out, style.width, style.height, canvas.rgb);

  std::ofstream legend_file(legend_path(out));
  if (!legend_file) throw IoError("render_projection: cannot write " + legend_path(out).string());
  legend_file << "class_id,day_night,marker,color,count\n";
  for (const auto& e : legend) {
    char hex[8];
    std::snprintf(hex, sizeof hex, "#%02x%02x%02x", e.color[0], e.color[1], e.color[2]);
    legend_file << e.label.class_id << ',' << regime_flag(e.label.regime) << ','
                << (e.label.regime == Regime::day ? "disc" : "square") << ',' << hex << ',' << e.count << '\n';
  }
  if (!legend_file) throw IoError("render_projection: write failed for " + legend_path(out).string());
  return legend;
}

std::vector<LegendEntry> read_legend(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open legend " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<LegendEntry> entries;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cls, flag, marker, color, count;
    std::getline(ss, cls, ',');
    std::getline(ss, flag, ',');
    std::getline(ss, marker, ',');
    std::getline(ss, color, ',');
    std::getline(ss, count, ',');
    LegendEntry e;
    e.label = {std::stoi(cls), regime_from_flag(std::stoi(flag))};
    unsigned r = 0, g = 0, b = 0;
    if (std::sscanf(color.c_str(), "#%02x%02x%02x", &r, &g, &b) != 3) throw IoError("bad legend colour: " + color);
    e.color = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)};
    e.count = std::stoul(count);
    entries.push_back(e);
  }
  return entries;
}

}  // namespace irview
