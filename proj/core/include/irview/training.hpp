#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irview/config.hpp"
#include "irview/data_pipeline.hpp"
#include "irview/losses.hpp"
#include "irview/model.hpp"
#include "irview/optimizer.hpp"

namespace irview {

enum class LossMode { mse_only, embedding_plus_mse };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& text);

struct TrainConfig {
  int batch_size = 64;
  int epochs = 80;
  double lr_initial = 1e-3;
  double lr_final = 1e-4;
  int lr_switch_epoch = 70;  // 0-based epoch from which lr_final applies
  AdamConfig adam;
  std::uint64_t seed = 1;
  LossMode loss_mode = LossMode::embedding_plus_mse;
  double embedding_weight = 1.0;
  double output_weight = 1.0;
  int checkpoint_every = 0;   // epochs; 0 = only at the end
  long long max_steps = 0;    // 0 = no cap
  double stop_below = 0.0;    // stop once a step's L_t drops below this; 0 = never

  void validate() const;
  double learning_rate(int epoch) const { return epoch < lr_switch_epoch ? lr_initial : lr_final; }

  KeyValueConfig to_key_values() const;
  static TrainConfig from_key_values(const KeyValueConfig& kv);
};

struct StepRecord {
  int epoch = 0;
  long long step = 0;
  LossBreakdown loss;
  double lr = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train;           // mean over the epoch's steps
  std::optional<double> validation_total;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainingRun {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  bool stopped_early = false;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called every checkpoint_every epochs and once at the end, with the number of completed epochs
  /// and the live parameters.
  std::function<void(int, const ParameterList<float>&)> on_checkpoint;
};

/// Block-1 target embeddings keyed by view.
using EmbeddingTable = std::map<SampleKey, std::vector<float>>;

struct VanillaTraining {
  VanillaAutoencoder<float> model;
  TrainingRun run;
};

struct PredictorTraining {
  Predictor<float> model;
  TrainingRun run;
};

/// Trains block 1 to reconstruct its input. validation may be empty.
VanillaTraining train_vanilla(std::span<const ViewSample> samples, std::span<const ViewSample> validation,
                              const ModelConfig& model_config, const TrainConfig& config,
                              const TrainHooks& hooks = {});

/// e2 = encode(image) for every sample. Throws ManifestError on a duplicate key.
EmbeddingTable extract_embeddings(const VanillaAutoencoder<float>& model, std::span<const ViewSample> samples);

/// Trains block 2 on (input view, pose) -> target view against the target's block-1 embedding.
/// Throws LookupError naming the key if a target has no embedding.
PredictorTraining train_predictor(std::span<const ViewSample> corpus, std::span<const ViewPair> train_pairs,
                                  std::span<const ViewPair> validation_pairs, const EmbeddingTable& targets,
                                  const ModelConfig& model_config, const TrainConfig& config,
                                  const TrainHooks& hooks = {});

/// Per-batch loss of the predictor on the given pairs (no parameter updates).
LossBreakdown predictor_loss(const Predictor<float>& model, std::span<const ViewSample> corpus,
                             std::span<const ViewPair> pairs, const EmbeddingTable& targets);

const std::vector<float>& lookup_embedding(const EmbeddingTable& table, const SampleKey& key);

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable load_embeddings(const std::filesystem::path& path);

/// `epoch,step,L_e,L_o,L_t,lr` lines.
std::string format_step_record(const StepRecord& record);
std::string format_training_summary(const TrainingRun& run);

}  // namespace irview
