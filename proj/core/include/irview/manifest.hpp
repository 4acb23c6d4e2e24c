#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "irview/data_pipeline.hpp"

namespace irview {

struct ManifestRecord {
  std::string path;  // relative to the manifest's directory unless absolute
  SampleKey key;
};

/// On disk: header line `path,class_id,azimuth_deg,day_night,range_m`, a `#step=<deg>` line,
/// optional `#key=value` comment lines, then one record per line.
struct DatasetManifest {
  std::vector<ManifestRecord> records;
  double angular_step_deg = 5.0;
  std::vector<std::pair<std::string, std::string>> comments;  // extra #key=value lines, in order
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ManifestRecord& record) const;
};

inline constexpr const char* kManifestHeader = "path,class_id,azimuth_deg,day_night,range_m";

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Checks key uniqueness, azimuth range and step alignment; with check_files also decodes
/// every referenced image and checks its size. Throws ManifestError.
void validate_manifest(const DatasetManifest& manifest, bool check_files);

/// Loads and normalizes every referenced image, in record order.
std::vector<ViewSample> load_corpus(const DatasetManifest& manifest);

std::vector<SampleKey> keys_of(const DatasetManifest& manifest);

/// generate_pairs over the manifest's records; max_delta_deg must be a multiple of the angular step.
std::vector<ViewPair> generate_pairs(const DatasetManifest& manifest, const PairingOptions& options);

}  // namespace irview
