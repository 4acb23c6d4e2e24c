#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "irview/data_pipeline.hpp"
#include "irview/losses.hpp"
#include "irview/model.hpp"
#include "irview/silhouette.hpp"
#include "irview/training.hpp"

namespace irview {

struct PairError {
  SampleKey input;
  SampleKey target;
  LossBreakdown loss;
  double mean_abs_pixel = 0.0;  // mean |y1 - y2| over pixels, on the [-1,1] scale
};

struct ClassError {
  int class_id = 0;
  std::size_t pairs = 0;
  LossBreakdown mean;
  double mean_abs_pixel = 0.0;
};

struct EvalMetadata {
  std::string label;          // e.g. the loss mode
  std::uint64_t seed = 0;
  std::string checkpoint_id;  // weights hash of the evaluated model
};

struct EvalReport {
  EvalMetadata metadata;
  std::vector<PairError> pairs;
  std::vector<ClassError> per_class;
  LossBreakdown average;       // mean of per-pair values
  double mean_abs_pixel = 0.0;

  std::string to_text() const;
  /// Line-delimited `key,...` records; no timestamps, so reruns are byte-identical.
  std::string to_records() const;
};

/// Hex weights hash, used as the checkpoint id in reports.
std::string checkpoint_id(Predictor<float>& model);

/// Mean L_o (and L_e, L_t) over test pairs, evaluated in fixed chunks. Throws DomainError on an empty set.
EvalReport average_test_error(const Predictor<float>& model, std::span<const ViewSample> corpus,
                              std::span<const ViewPair> test_pairs, const EmbeddingTable& targets,
                              const EvalMetadata& metadata);

struct PoseRequest {
  double azimuth_deg = 0.0;
  Regime regime = Regime::day;
};

/// Novel views of one class from its seed images. Each request uses the seed nearest in azimuth
/// (same regime preferred). Outputs are clipped to [-1,1]. Throws DomainError when seeds are empty or
/// span several classes, and when the mean per-image variance falls below min_variance.
std::vector<ViewSample> generate_class_corpus(const Predictor<float>& model, std::span<const ViewSample> seeds,
                                              std::span<const PoseRequest> requests, double min_variance = 1e-6);

/// Every step_deg azimuth in the given regimes.
std::vector<PoseRequest> pose_circle(double step_deg, std::span<const Regime> regimes);

enum class EmbeddingStage { pre_fusion, post_fusion };
std::string to_string(EmbeddingStage stage);
EmbeddingStage parse_stage(const std::string& text);

struct EmbeddingRecord {
  int class_id = 0;
  Regime regime = Regime::day;
  EmbeddingStage stage = EmbeddingStage::pre_fusion;
  std::vector<float> values;
  bool operator==(const EmbeddingRecord&) const = default;
};

/// Per sample: one pre_fusion record, then one post_fusion record per pose offset (target azimuth =
/// sample azimuth + offset, same regime).
std::vector<EmbeddingRecord> export_embeddings(const Predictor<float>& model, std::span<const ViewSample> samples,
                                               std::span<const double> pose_offsets_deg);

/// Header `class_id,day_night,stage,v0..vN-1`; values written as shortest round-trip floats.
void save_embedding_records(const std::vector<EmbeddingRecord>& records, const std::filesystem::path& path);
std::vector<EmbeddingRecord> load_embedding_records(const std::filesystem::path& path);

enum class LabelKey { class_id, class_x_day_night };
LabelKey parse_label_key(const std::string& text);

struct LabeledPoints {
  PointSet points;
  std::vector<int> labels;
  std::vector<const EmbeddingRecord*> records;
};

LabeledPoints select_stage(const std::vector<EmbeddingRecord>& records, EmbeddingStage stage, LabelKey key);

double embedding_silhouette(const std::vector<EmbeddingRecord>& records, EmbeddingStage stage, LabelKey key);

}  // namespace irview
