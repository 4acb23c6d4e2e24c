#include "irview/manifest.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "irview/errors.hpp"
#include "irview/png_io.hpp"

namespace irview {

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& context) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ManifestError(context + ": not a number: '" + s + "'");
  }
  if (used != s.size()) throw ManifestError(context + ": trailing characters in '" + s + "'");
  return v;
}

int parse_int(const std::string& s, const std::string& context) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    throw ManifestError(context + ": not an integer: '" + s + "'");
  }
  if (used != s.size()) throw ManifestError(context + ": trailing characters in '" + s + "'");
  return v;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

std::filesystem::path DatasetManifest::resolve(const ManifestRecord& record) const {
  std::filesystem::path p(record.path);
  return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_manifest: cannot open " + path.string());
  DatasetManifest manifest;
  manifest.base_dir = path.parent_path();

  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != kManifestHeader)
    throw ManifestError("load_manifest: " + path.string() + ": first line must be '" + kManifestHeader + "'");

  bool have_step = false;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (line.front() == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      std::string value = line.substr(eq + 1);
      if (key == "step") {
        manifest.angular_step_deg = parse_double(value, where);
        have_step = true;
      } else {
        manifest.comments.emplace_back(std::move(key), std::move(value));
      }
      continue;
    }
    const auto fields = split_fields(line, ',');
    if (fields.size() != 5) throw ManifestError(where + ": expected 5 fields, got " + std::to_string(fields.size()));
    ManifestRecord rec;
    rec.path = fields[0];
    rec.key.class_id = parse_int(fields[1], where);
    rec.key.azimuth_deg = parse_double(fields[2], where);
    try {
      rec.key.regime = regime_from_flag(parse_int(fields[3], where));
    } catch (const DomainError& e) {
      throw ManifestError(where + ": " + e.what());
    }
    rec.key.range_m = parse_double(fields[4], where);
    manifest.records.push_back(std::move(rec));
  }
  if (!have_step) throw ManifestError("load_manifest: " + path.string() + ": missing #step=<deg> line");
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_manifest: cannot write " + path.string());
  out << kManifestHeader << '\n';
  out << "#step=" << std::setprecision(17) << manifest.angular_step_deg << '\n';
  for (const auto& [k, v] : manifest.comments) out << '#' << k << '=' << v << '\n';
  for (const auto& r : manifest.records) {
    out << r.path << ',' << r.key.class_id << ',' << std::setprecision(17) << r.key.azimuth_deg << ','
        << regime_flag(r.key.regime) << ',' << r.key.range_m << '\n';
  }
  if (!out) throw IoError("save_manifest: write failed for " + path.string());
}

void validate_manifest(const DatasetManifest& manifest, bool check_files) {
  if (!(manifest.angular_step_deg > 0.0) || manifest.angular_step_deg > 360.0)
    throw ManifestError("manifest: angular step must lie in (0,360]");
  std::set<SampleKey> seen;
  for (const auto& r : manifest.records) {
    const auto& k = r.key;
    if (!(k.azimuth_deg >= 0.0 && k.azimuth_deg < 360.0))
      throw ManifestError("manifest: azimuth outside [0,360) for " + to_string(k));
    const double steps = k.azimuth_deg / manifest.angular_step_deg;
    if (std::abs(steps - std::round(steps)) > 1e-6)
      throw ManifestError("manifest: azimuth not a multiple of the angular step for " + to_string(k));
    if (!seen.insert(k).second) throw ManifestError("manifest: duplicate record " + to_string(k));
    if (check_files) {
      const auto file = manifest.resolve(r);
      if (!std::filesystem::exists(file)) throw ManifestError("manifest: missing file " + file.string());
      const GrayImage8 img = read_gray_png(file);
      if (img.width != kImageSize || img.height != kImageSize)
        throw ManifestError("manifest: " + file.string() + " is " + std::to_string(img.width) + "x" +
                            std::to_string(img.height) + ", expected 64x64");
    }
  }
}

std::vector<ViewSample> load_corpus(const DatasetManifest& manifest) {
  validate_manifest(manifest, false);
  std::vector<ViewSample> samples;
  samples.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    const auto file = manifest.resolve(r);
    if (!std::filesystem::exists(file)) throw ManifestError("manifest: missing file " + file.string());
    GrayImage8 img = read_gray_png(file);
    try {
      samples.push_back({r.key, normalize_image(img)});
    } catch (const ShapeError& e) {
      throw ManifestError("manifest: " + file.string() + ": " + e.what());
    }
  }
  return samples;
}

std::vector<SampleKey> keys_of(const DatasetManifest& manifest) {
  std::vector<SampleKey> keys;
  keys.reserve(manifest.records.size());
  for (const auto& r : manifest.records) keys.push_back(r.key);
  return keys;
}

std::vector<ViewPair> generate_pairs(const DatasetManifest& manifest, const PairingOptions& options) {
  validate_manifest(manifest, false);
  const double steps = options.max_delta_deg / manifest.angular_step_deg;
  if (options.max_delta_deg < 360.0 && std::abs(steps - std::round(steps)) > 1e-9)
    throw DomainError("generate_pairs: max_delta_deg must be a multiple of the angular step");
  const auto keys = keys_of(manifest);
  return generate_pairs(std::span<const SampleKey>(keys), options);
}

}  // namespace irview
