#include "irview/training.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "irview/errors.hpp"

namespace irview {

namespace {

std::uint64_t shuffle_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
}

void check_finite(const LossBreakdown& loss, const StepRecord& where) {
  if (!std::isfinite(loss.embedding) || !std::isfinite(loss.output) || !std::isfinite(loss.total)) {
    std::ostringstream os;
    os << "training diverged at epoch " << where.epoch << " step " << where.step << " (L_e=" << loss.embedding
       << ", L_o=" << loss.output << ", lr=" << where.lr << ")";
    throw TrainingError(os.str());
  }
}

Tensor<float> embeddings_to_batch(std::span<const std::vector<float>* const> rows) {
  const int dim = rows.empty() ? 0 : static_cast<int>(rows.front()->size());
  Tensor<float> out({static_cast<int>(rows.size()), dim});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i]->begin(), rows[i]->end(), out.data() + i * dim);
  return out;
}

std::string fmt(double v) { return format_double(v); }

// Runs the shared epoch/step loop. step_fn(indices, epoch, step, lr) performs one update and returns its loss.
template <typename StepFn, typename ValidateFn>
TrainingRun run_loop(std::size_t n_items, const TrainConfig& config, const TrainHooks& hooks,
                     const ParameterList<float>& params, StepFn step_fn, ValidateFn validate_fn) {
  TrainingRun run;
  std::mt19937_64 rng(shuffle_seed(config.seed));
  std::vector<std::size_t> order(n_items);
  long long step = 0;
  bool stop = false;
  for (int epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = config.learning_rate(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    LossBreakdown sum;
    long long steps_in_epoch = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(config.batch_size));
      StepRecord rec{epoch, step, {}, lr};
      rec.loss = step_fn(std::span<const std::size_t>(order.data() + lo, hi - lo), lr);
      check_finite(rec.loss, rec);
      run.steps.push_back(rec);
      if (hooks.on_step) hooks.on_step(rec);
      sum.embedding += rec.loss.embedding;
      sum.output += rec.loss.output;
      sum.total += rec.loss.total;
      ++steps_in_epoch;
      ++step;
      if ((config.max_steps > 0 && step >= config.max_steps) ||
          (config.stop_below > 0.0 && rec.loss.total < config.stop_below)) {
        stop = true;
        run.stopped_early = true;
        break;
      }
    }
    EpochRecord er;
    er.epoch = epoch;
    if (steps_in_epoch > 0) {
      const auto n = static_cast<double>(steps_in_epoch);
      er.train = {sum.embedding / n, sum.output / n, sum.total / n};
    }
    er.validation_total = validate_fn();
    er.lr = lr;
    er.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    run.epochs.push_back(er);
    if (hooks.on_epoch) hooks.on_epoch(er);
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 && !stop &&
        epoch + 1 < config.epochs)
      hooks.on_checkpoint(epoch + 1, params);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(static_cast<int>(run.epochs.size()), params);
  return run;
}

}  // namespace

std::string to_string(LossMode mode) { return mode == LossMode::mse_only ? "mse_only" : "embedding_plus_mse"; }

LossMode parse_loss_mode(const std::string& text) {
  if (text == "mse_only") return LossMode::mse_only;
  if (text == "embedding_plus_mse") return LossMode::embedding_plus_mse;
  throw DomainError("unknown loss mode '" + text + "' (expected mse_only or embedding_plus_mse)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw DomainError("train: batch_size must be positive");
  if (epochs < 1) throw DomainError("train: epochs must be positive");
  if (!(lr_initial > 0.0) || !(lr_final > 0.0) || lr_final > lr_initial)
    throw DomainError("train: need 0 < lr_final <= lr_initial");
  if (lr_switch_epoch <= 0 || lr_switch_epoch > epochs) throw DomainError("train: need 0 < lr_switch_epoch <= epochs");
  if (embedding_weight < 0.0 || output_weight < 0.0) throw DomainError("train: loss weights must be >= 0");
  if (checkpoint_every < 0 || max_steps < 0 || stop_below < 0.0) throw DomainError("train: negative schedule value");
}

KeyValueConfig TrainConfig::to_key_values() const {
  KeyValueConfig kv;
  kv.set("batch_size", batch_size);
  kv.set("epochs", epochs);
  kv.set("lr_initial", lr_initial);
  kv.set("lr_final", lr_final);
  kv.set("lr_switch_epoch", lr_switch_epoch);
  kv.set("adam_beta1", adam.beta1);
  kv.set("adam_beta2", adam.beta2);
  kv.set("adam_epsilon", adam.epsilon);
  kv.set("seed", static_cast<long long>(seed));
  kv.set("loss_mode", to_string(loss_mode));
  kv.set("embedding_weight", embedding_weight);
  kv.set("output_weight", output_weight);
  kv.set("checkpoint_every", checkpoint_every);
  kv.set("max_steps", max_steps);
  kv.set("stop_below", stop_below);
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValueConfig& kv) {
  TrainConfig c;
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.lr_initial = kv.get_double("lr_initial", c.lr_initial);
  c.lr_final = kv.get_double("lr_final", c.lr_final);
  c.lr_switch_epoch = static_cast<int>(kv.get_int("lr_switch_epoch", std::min(c.lr_switch_epoch, c.epochs)));
  c.adam.beta1 = kv.get_double("adam_beta1", c.adam.beta1);
  c.adam.beta2 = kv.get_double("adam_beta2", c.adam.beta2);
  c.adam.epsilon = kv.get_double("adam_epsilon", c.adam.epsilon);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.loss_mode = parse_loss_mode(kv.get_string("loss_mode", to_string(c.loss_mode)));
  c.embedding_weight = kv.get_double("embedding_weight", c.embedding_weight);
  c.output_weight = kv.get_double("output_weight", c.output_weight);
  c.checkpoint_every = static_cast<int>(kv.get_int("checkpoint_every", c.checkpoint_every));
  c.max_steps = kv.get_int("max_steps", c.max_steps);
  c.stop_below = kv.get_double("stop_below", c.stop_below);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------------------------

VanillaTraining train_vanilla(std::span<const ViewSample> samples, std::span<const ViewSample> validation,
                              const ModelConfig& model_config, const TrainConfig& config, const TrainHooks& hooks) {
  if (samples.empty()) throw DomainError("train_vanilla: empty dataset");
  config.validate();
  VanillaTraining result{VanillaAutoencoder<float>(model_config, config.seed), {}};
  auto& model = result.model;
  const ParameterList<float> params = model.parameters();
  Adam<float> adam(params, config.adam);

  auto gather = [&](std::span<const ViewSample> pool, std::span<const std::size_t> idx) {
    std::vector<const Raster*> rasters;
    for (std::size_t i : idx) rasters.push_back(&pool[i].image);
    return images_to_batch<float>(std::span<const Raster* const>(rasters));
  };

  auto step_fn = [&](std::span<const std::size_t> idx, double lr) {
    const Tensor<float> images = gather(samples, idx);
    VanillaAutoencoder<float>::Cache cache;
    const auto out = model.forward(images, &cache);
    LossBreakdown loss;
    loss.output = output_loss(out.reconstruction, images);
    loss.total = loss.embedding + loss.output;
    zero_grads(params);
    model.backward(cache, mse_gradient(out.reconstruction, images, config.output_weight));
    adam.step(lr);
    return loss;
  };

  auto validate_fn = [&]() -> std::optional<double> {
    if (validation.empty()) return std::nullopt;
    double sum = 0.0;
    for (std::size_t lo = 0; lo < validation.size(); lo += 64) {
      const std::size_t hi = std::min(validation.size(), lo + 64);
      std::vector<std::size_t> idx(hi - lo);
      std::iota(idx.begin(), idx.end(), lo);
      const Tensor<float> images = gather(validation, idx);
      const auto out = model.forward(images);
      sum += output_loss(out.reconstruction, images) * static_cast<double>(hi - lo);
    }
    return sum / static_cast<double>(validation.size());
  };

  result.run = run_loop(samples.size(), config, hooks, params, step_fn, validate_fn);
  return result;
}

EmbeddingTable extract_embeddings(const VanillaAutoencoder<float>& model, std::span<const ViewSample> samples) {
  EmbeddingTable table;
  constexpr std::size_t kChunk = 64;
  for (std::size_t lo = 0; lo < samples.size(); lo += kChunk) {
    const std::size_t hi = std::min(samples.size(), lo + kChunk);
    std::vector<const Raster*> rasters;
    for (std::size_t i = lo; i < hi; ++i) rasters.push_back(&samples[i].image);
    const Tensor<float> emb = model.encode(images_to_batch<float>(std::span<const Raster* const>(rasters)));
    const auto dim = static_cast<std::size_t>(emb.dim(1));
    for (std::size_t i = lo; i < hi; ++i) {
      const float* row = emb.data() + (i - lo) * dim;
      if (!table.emplace(samples[i].key, std::vector<float>(row, row + dim)).second)
        throw ManifestError("extract_embeddings: duplicate sample key " + to_string(samples[i].key));
    }
  }
  return table;
}

const std::vector<float>& lookup_embedding(const EmbeddingTable& table, const SampleKey& key) {
  auto it = table.find(key);
  if (it == table.end()) throw LookupError("no target embedding for " + to_string(key));
  return it->second;
}

namespace {

struct PairBatch {
  Tensor<float> inputs, poses, targets, embeddings;
};

PairBatch gather_pairs(std::span<const ViewSample> corpus, std::span<const ViewPair> pairs,
                       std::span<const std::size_t> idx, const EmbeddingTable& targets) {
  std::vector<const Raster*> in, out;
  std::vector<PoseVector> poses;
  std::vector<const std::vector<float>*> emb;
  for (std::size_t i : idx) {
    const ViewPair& p = pairs[i];
    in.push_back(&corpus[p.input].image);
    out.push_back(&corpus[p.target].image);
    poses.push_back(p.pose);
    emb.push_back(&lookup_embedding(targets, corpus[p.target].key));
  }
  return {images_to_batch<float>(std::span<const Raster* const>(in)), poses_to_batch<float>(poses),
          images_to_batch<float>(std::span<const Raster* const>(out)),
          embeddings_to_batch(std::span<const std::vector<float>* const>(emb))};
}

void check_pairs(std::span<const ViewSample> corpus, std::span<const ViewPair> pairs, const EmbeddingTable& targets,
                 int embedding_dim) {
  for (const auto& p : pairs) {
    if (p.input >= corpus.size() || p.target >= corpus.size())
      throw LookupError("pair refers to a view outside the corpus");
    const auto& e = lookup_embedding(targets, corpus[p.target].key);
    if (static_cast<int>(e.size()) != embedding_dim)
      throw ShapeError("target embedding for " + to_string(corpus[p.target].key) + " has length " +
                       std::to_string(e.size()) + ", model expects " + std::to_string(embedding_dim));
  }
}

}  // namespace

PredictorTraining train_predictor(std::span<const ViewSample> corpus, std::span<const ViewPair> train_pairs,
                                  std::span<const ViewPair> validation_pairs, const EmbeddingTable& targets,
                                  const ModelConfig& model_config, const TrainConfig& config,
                                  const TrainHooks& hooks) {
  if (train_pairs.empty()) throw DomainError("train_predictor: no training pairs");
  config.validate();
  model_config.validate();
  check_pairs(corpus, train_pairs, targets, model_config.embedding_dim());
  check_pairs(corpus, validation_pairs, targets, model_config.embedding_dim());

  PredictorTraining result{Predictor<float>(model_config, config.seed), {}};
  auto& model = result.model;
  const ParameterList<float> params = model.parameters();
  Adam<float> adam(params, config.adam);
  const bool guide = config.loss_mode == LossMode::embedding_plus_mse;

  auto step_fn = [&](std::span<const std::size_t> idx, double lr) {
    const PairBatch batch = gather_pairs(corpus, train_pairs, idx, targets);
    Predictor<float>::Cache cache;
    const auto out = model.forward(batch.inputs, batch.poses, &cache);
    const LossBreakdown loss = total_loss(out.post_fusion, batch.embeddings, out.prediction, batch.targets);
    zero_grads(params);
    const Tensor<float> d_post =
        guide ? mse_gradient(out.post_fusion, batch.embeddings, config.embedding_weight) : Tensor<float>();
    model.backward(cache, d_post, mse_gradient(out.prediction, batch.targets, config.output_weight));
    adam.step(lr);
    return loss;
  };

  auto validate_fn = [&]() -> std::optional<double> {
    if (validation_pairs.empty()) return std::nullopt;
    return predictor_loss(model, corpus, validation_pairs, targets).total;
  };

  result.run = run_loop(train_pairs.size(), config, hooks, params, step_fn, validate_fn);
  return result;
}

LossBreakdown predictor_loss(const Predictor<float>& model, std::span<const ViewSample> corpus,
                             std::span<const ViewPair> pairs, const EmbeddingTable& targets) {
  if (pairs.empty()) throw DomainError("predictor_loss: no pairs");
  LossBreakdown sum;
  for (std::size_t lo = 0; lo < pairs.size(); lo += 64) {
    const std::size_t hi = std::min(pairs.size(), lo + 64);
    std::vector<std::size_t> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const PairBatch batch = gather_pairs(corpus, pairs, idx, targets);
    const auto out = model.forward(batch.inputs, batch.poses);
    const LossBreakdown l = total_loss(out.post_fusion, batch.embeddings, out.prediction, batch.targets);
    const auto w = static_cast<double>(hi - lo);
    sum.embedding += l.embedding * w;
    sum.output += l.output * w;
  }
  const auto n = static_cast<double>(pairs.size());
  sum.embedding /= n;
  sum.output /= n;
  sum.total = sum.embedding + sum.output;
  return sum;
}

// ---------------------------------------------------------------------------------------------

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_embeddings: cannot write " + path.string());
  const std::size_t dim = table.empty() ? 0 : table.begin()->second.size();
  out << "class_id,azimuth_deg,day_night,range_m";
  for (std::size_t i = 0; i < dim; ++i) out << ",v" << i;
  out << '\n';
  char buf[32];
  for (const auto& [key, vec] : table) {
    out << key.class_id << ',' << fmt(key.azimuth_deg) << ',' << regime_flag(key.regime) << ',' << fmt(key.range_m);
    for (float v : vec) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf));
    }
    out << '\n';
  }
  if (!out) throw IoError("save_embeddings: write failed for " + path.string());
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_embeddings: cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  EmbeddingTable table;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    auto next = [&](auto& value) {
      auto [ptr, ec] = std::from_chars(p, end, value);
      if (ec != std::errc()) throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
      p = ptr;
      if (p < end && *p == ',') ++p;
    };
    SampleKey key;
    int flag = 0;
    next(key.class_id);
    next(key.azimuth_deg);
    next(flag);
    key.regime = regime_from_flag(flag);
    next(key.range_m);
    std::vector<float> vec;
    while (p < end) {
      float v = 0;
      next(v);
      vec.push_back(v);
    }
    if (!table.emplace(key, std::move(vec)).second)
      throw ManifestError("load_embeddings: duplicate key " + to_string(key));
  }
  return table;
}

std::string format_step_record(const StepRecord& r) {
  return std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + fmt(r.loss.embedding) + "," +
         fmt(r.loss.output) + "," + fmt(r.loss.total) + "," + fmt(r.lr);
}

std::string format_training_summary(const TrainingRun& run) {
  std::ostringstream os;
  os << "summary,epochs=" << run.epochs.size() << ",steps=" << run.steps.size();
  if (!run.steps.empty()) {
    const auto& last = run.steps.back();
    os << ",final_L_e=" << fmt(last.loss.embedding) << ",final_L_o=" << fmt(last.loss.output)
       << ",final_L_t=" << fmt(last.loss.total);
  }
  if (!run.epochs.empty() && run.epochs.back().validation_total)
    os << ",final_val_L_t=" << fmt(*run.epochs.back().validation_total);
  os << ",stopped_early=" << (run.stopped_early ? 1 : 0);
  return os.str();
}

}  // namespace irview
