#include "irview/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

#include "irview/errors.hpp"
#include "irview/png_io.hpp"

namespace irview {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

// Uniform in [lo, hi) from the top 53 bits; independent of the standard library's distributions.
double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double normal(std::mt19937_64& rng) {
  double u1 = uniform(rng, 0.0, 1.0);
  const double u2 = uniform(rng, 0.0, 1.0);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

struct Part {
  bool ellipsoid = false;
  double cx = 0, cy = 0, cz = 0;  // object frame: x forward, y lateral, z up
  double hx = 1, hy = 1, hz = 1;  // half extents
  double intensity = 0.8;
  double face_angle = 0.0;  // radians; direction of the brightest face
};

struct HeatSpot {
  double x = 0, y = 0, z = 0;
  double sigma = 2.0;
  double amplitude = 0.2;
};

struct ClassShape {
  std::vector<Part> parts;
  std::vector<HeatSpot> spots;
};

constexpr double kGroundRow = 46.0;
constexpr double kCenterCol = 31.5;

ClassShape make_class_shape(std::uint64_t seed, int class_id) {
  std::mt19937_64 rng(mix(seed, 0x5EED0000ULL + static_cast<std::uint64_t>(class_id)));
  ClassShape shape;

  Part body;
  body.ellipsoid = uniform(rng, 0, 1) < 0.3;
  body.hx = uniform(rng, 12.0, 18.0);
  body.hy = uniform(rng, 5.0, 9.0);
  body.hz = uniform(rng, 3.5, 5.5);
  body.cx = uniform(rng, -2.0, 2.0);
  body.cz = body.hz;
  body.intensity = uniform(rng, 0.6, 0.95);
  body.face_angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  shape.parts.push_back(body);

  const int extras = 2 + static_cast<int>(rng() % 4);  // 3..6 parts in total
  double top = body.cz + body.hz;
  for (int i = 0; i < extras; ++i) {
    Part p;
    p.ellipsoid = uniform(rng, 0, 1) < 0.5;
    const bool barrel = i > 0 && uniform(rng, 0, 1) < 0.3;
    if (barrel) {
      const Part& base = shape.parts.back();
      p.hx = uniform(rng, 5.0, 9.0);
      p.hy = 1.0;
      p.hz = 1.0;
      const double dir = uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0;
      p.cx = base.cx + dir * (base.hx + p.hx - 1.0);
      p.cy = base.cy;
      p.cz = base.cz;
    } else {
      p.hx = uniform(rng, 3.0, 8.0);
      p.hy = uniform(rng, 2.5, 6.0);
      p.hz = uniform(rng, 2.0, 4.5);
      const double span = std::max(0.0, body.hx - 0.5 * p.hx);
      p.cx = body.cx + uniform(rng, -span, span);
      p.cy = uniform(rng, -2.0, 2.0);
      const bool stack = i > 0 && uniform(rng, 0, 1) < 0.3;
      const double floor = stack ? top : body.cz + body.hz;
      p.cz = floor + p.hz * 0.9;
      top = std::max(top, p.cz + p.hz);
    }
    p.intensity = uniform(rng, 0.6, 0.95);
    p.face_angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    shape.parts.push_back(p);
  }

  const int spots = 2 + static_cast<int>(rng() % 3);  // 2..4
  for (int i = 0; i < spots; ++i) {
    HeatSpot s;
    s.x = body.cx + uniform(rng, -body.hx, body.hx);
    s.y = uniform(rng, 0, 1) < 0.5 ? -body.hy : body.hy;
    s.z = uniform(rng, 0.5, 2.0 * body.hz);
    s.sigma = uniform(rng, 1.2, 2.8);
    s.amplitude = uniform(rng, 0.12, 0.3);
    shape.spots.push_back(s);
  }
  return shape;
}

struct ProjectedPart {
  const Part* part;
  double u_center, half_width, depth, shade;
};

}  // namespace

void SynthConfig::validate() const {
  if (n_classes < 2) throw DomainError("synth: need at least 2 classes");
  if (views_per_circle < 1 || 360 % views_per_circle != 0)
    throw DomainError("synth: views_per_circle must divide 360");
  if (regimes != 1 && regimes != 2) throw DomainError("synth: regimes must be 1 or 2");
}

GrayImage8 render_view(const SynthConfig& config, int class_id, int azimuth_index, Regime regime) {
  const ClassShape shape = make_class_shape(config.seed, class_id);
  const double theta = azimuth_index * config.angular_step() * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const bool night = regime == Regime::night;

  std::vector<ProjectedPart> projected;
  for (const Part& p : shape.parts) {
    const double hw = p.ellipsoid ? std::sqrt(p.hx * p.hx * c * c + p.hy * p.hy * s * s)
                                  : p.hx * std::abs(c) + p.hy * std::abs(s);
    const double shade = p.intensity * (0.8 + 0.2 * std::cos(theta - p.face_angle));
    projected.push_back({&p, p.cx * c - p.cy * s, hw, p.cx * s + p.cy * c, shade});
  }
  // Painter's order: far parts first.
  std::stable_sort(projected.begin(), projected.end(),
                   [](const ProjectedPart& a, const ProjectedPart& b) { return a.depth > b.depth; });

  std::mt19937_64 rng(mix(mix(config.seed, static_cast<std::uint64_t>(class_id)),
                          (static_cast<std::uint64_t>(azimuth_index) << 8) | static_cast<std::uint64_t>(regime)));

  const double background = night ? config.night_background : config.day_background;
  const double clutter_amp = night ? config.night_clutter : config.day_clutter;
  const double noise = night ? config.night_noise : config.day_noise;
  const double gain = night ? config.night_object_gain : config.day_object_gain;
  const double spot_gain = night ? 1.4 : 1.0;

  struct Bump {
    double row, col, sigma, amp;
  };
  std::vector<Bump> bumps;
  const int n_bumps = 3 + static_cast<int>(rng() % 4);
  for (int i = 0; i < n_bumps; ++i) {
    bumps.push_back({uniform(rng, 0, kImageSize), uniform(rng, 0, kImageSize), uniform(rng, 5.0, 12.0),
                     uniform(rng, -clutter_amp, clutter_amp)});
  }

  GrayImage8 img{kImageSize, kImageSize, std::vector<std::uint8_t>(kImagePixels)};
  constexpr int kSub = 2;
  for (int row = 0; row < kImageSize; ++row) {
    for (int col = 0; col < kImageSize; ++col) {
      double bg = background;
      for (const Bump& b : bumps) {
        const double dr = row - b.row, dc = col - b.col;
        bg += b.amp * std::exp(-(dr * dr + dc * dc) / (2.0 * b.sigma * b.sigma));
      }

      double coverage = 0.0;
      double object = 0.0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double u = col + (sx + 0.5) / kSub - 0.5 - kCenterCol;
          const double v = kGroundRow - (row + (sy + 0.5) / kSub - 0.5);
          const ProjectedPart* hit = nullptr;
          for (const auto& pp : projected) {
            const Part& p = *pp.part;
            const double du = (u - pp.u_center) / pp.half_width;
            const double dv = (v - p.cz) / p.hz;
            const bool inside = p.ellipsoid ? du * du + dv * dv <= 1.0 : std::abs(du) <= 1.0 && std::abs(dv) <= 1.0;
            if (inside) hit = &pp;  // nearer parts overwrite
          }
          if (hit) {
            coverage += 1.0;
            object += hit->shade;
          }
        }
      }
      coverage /= kSub * kSub;
      double value = bg;
      if (coverage > 0.0) {
        object /= coverage * kSub * kSub;
        double heat = 0.0;
        const double u = col - kCenterCol;
        const double v = kGroundRow - row;
        for (const HeatSpot& spot : shape.spots) {
          const double su = spot.x * c - spot.y * s;
          const double depth = spot.x * s + spot.y * c;
          const double visibility = std::clamp(0.5 - depth / 6.0, 0.0, 1.0);
          const double du = u - su, dv = v - spot.z;
          heat += spot.amplitude * visibility * std::exp(-(du * du + dv * dv) / (2.0 * spot.sigma * spot.sigma));
        }
        value = (1.0 - coverage) * bg + coverage * (gain * object + spot_gain * heat);
      }
      value += noise * normal(rng);
      const double level = std::round(std::clamp(value, 0.0, 1.0) * 255.0);
      img.pixels[static_cast<std::size_t>(row * kImageSize + col)] = static_cast<std::uint8_t>(level);
    }
  }
  return img;
}

std::vector<ViewSample> synth_corpus(const SynthConfig& config) {
  config.validate();
  std::vector<ViewSample> samples;
  samples.reserve(static_cast<std::size_t>(config.n_classes * config.views_per_circle * config.regimes));
  for (int cls = 0; cls < config.n_classes; ++cls) {
    for (int r = 0; r < config.regimes; ++r) {
      for (int a = 0; a < config.views_per_circle; ++a) {
        const Regime regime = regime_from_flag(r);
        SampleKey key{cls, a * config.angular_step(), regime, config.range_m};
        samples.push_back({key, normalize_image(render_view(config, cls, a, regime))});
      }
    }
  }
  return samples;
}

DatasetManifest synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  const auto image_dir = out_dir / "images";
  std::error_code ec;
  std::filesystem::create_directories(image_dir, ec);
  if (ec) throw IoError("synth_generate: cannot create " + image_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  manifest.angular_step_deg = config.angular_step();
  auto note = [&](const char* key, auto value) {
    std::ostringstream os;
    os << value;
    manifest.comments.emplace_back(std::string("synth.") + key, os.str());
  };
  note("seed", config.seed);
  note("classes", config.n_classes);
  note("views_per_circle", config.views_per_circle);
  note("regimes", config.regimes);
  note("day_background", config.day_background);
  note("night_background", config.night_background);
  note("day_clutter", config.day_clutter);
  note("night_clutter", config.night_clutter);
  note("day_noise", config.day_noise);
  note("night_noise", config.night_noise);
  note("day_object_gain", config.day_object_gain);
  note("night_object_gain", config.night_object_gain);

  for (int cls = 0; cls < config.n_classes; ++cls) {
    for (int r = 0; r < config.regimes; ++r) {
      const Regime regime = regime_from_flag(r);
      for (int a = 0; a < config.views_per_circle; ++a) {
        char name[64];
        std::snprintf(name, sizeof(name), "c%02d_%s_%03d.png", cls, r ? "night" : "day", a);
        const std::string rel = std::string("images/") + name;
        write_gray_png(out_dir / rel, render_view(config, cls, a, regime));
        manifest.records.push_back({rel, SampleKey{cls, a * config.angular_step(), regime, config.range_m}});
      }
    }
  }
  save_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

}  // namespace irview
