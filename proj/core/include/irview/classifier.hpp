#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "irview/config.hpp"
#include "irview/data_pipeline.hpp"
#include "irview/layers.hpp"
#include "irview/optimizer.hpp"

namespace irview {

struct ClassifierConfig {
  std::vector<int> filters{16, 32, 32, 64};  // one stride-2 conv block each: 64 -> 4
  int kernel = 3;
  int epochs = 12;
  int batch_size = 32;
  double learning_rate = 1e-3;

  void validate() const;
  KeyValueConfig to_key_values() const;
  static ClassifierConfig from_key_values(const KeyValueConfig& kv);
};

/// Rows are true classes, columns predictions. Classes are indexed through class_ids.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<int> class_ids);

  void add(int true_class_id, int predicted_class_id);
  long long at(int true_index, int predicted_index) const;
  int size() const { return static_cast<int>(class_ids_.size()); }
  const std::vector<int>& class_ids() const { return class_ids_; }
  int index_of(int class_id) const;

  long long row_sum(int true_index) const;
  long long total() const;
  long long trace() const;
  double accuracy() const;
  double recall(int class_id) const;

  std::string to_text() const;
  /// `confusion,<tag>,<true>,<pred>,<count>` lines.
  std::string to_records(const std::string& tag) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::vector<int> class_ids_;
  std::vector<long long> counts_;
};

/// Small convolutional classifier: stride-2 conv blocks with leaky-relu and a softmax head.
class Classifier {
 public:
  Classifier(std::vector<int> class_ids, const ClassifierConfig& config, std::uint64_t seed);

  /// (B, n_classes) unnormalized scores.
  Tensor<float> logits(const Tensor<float>& images) const;
  std::vector<int> predict(std::span<const ViewSample> samples) const;

  /// One Adam step on softmax cross-entropy; returns the mean loss of the batch.
  double train_batch(std::span<const ViewSample* const> batch, Adam<float>& optimizer, double lr);

  ParameterList<float> parameters();
  const std::vector<int>& class_ids() const { return class_ids_; }

 private:
  std::vector<int> class_ids_;
  std::vector<Conv2d<float>> convs_;
  Dense<float> head_;
};

struct ClassifierRun {
  ConfusionMatrix confusion;
  std::vector<double> epoch_loss;
};

/// Trains a freshly seeded classifier on train and scores it on test. Class ids come from train.
ClassifierRun train_and_evaluate(std::span<const ViewSample> train, std::span<const ViewSample> test,
                                 const ClassifierConfig& config, std::uint64_t seed);

struct LowShotResult {
  int substituted_class = 0;
  double accuracy_substituted = 0.0;
  double accuracy_all_real = 0.0;
  ConfusionMatrix substituted;
  ConfusionMatrix all_real;
  std::size_t generated_count = 0;

  std::string to_text() const;
  std::string to_records() const;
};

/// Trains two identically seeded classifiers: one on real_train, one on real_train with every image of
/// substituted_class replaced by generated. Both are tested on real_test. Throws DomainError when generated
/// contains any other class, is empty, or the class is missing from the real splits.
LowShotResult low_shot_eval(std::span<const ViewSample> real_train, std::span<const ViewSample> real_test,
                            int substituted_class, std::span<const ViewSample> generated,
                            const ClassifierConfig& config, std::uint64_t seed);

struct SampleSplit {
  std::vector<ViewSample> train;
  std::vector<ViewSample> test;
};

/// Per class: shuffle, then send round(fraction * n_class) samples to test.
SampleSplit stratified_split(std::span<const ViewSample> samples, double test_fraction, std::uint64_t seed);

}  // namespace irview
