#include "cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "irview/checkpoint.hpp"
#include "irview/classifier.hpp"
#include "irview/errors.hpp"
#include "irview/evaluation.hpp"
#include "irview/manifest.hpp"
#include "irview/plot.hpp"
#include "irview/png_io.hpp"
#include "irview/synth.hpp"
#include "irview/training.hpp"
#include "irview/tsne.hpp"

namespace irview::cli {

namespace {

namespace fs = std::filesystem;

constexpr const char* kLockName = ".irview.lock";

/// Exclusive marker file in the output directory; removed on destruction.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / kLockName) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw IoError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<long long> seed;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "key=value config file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.overrides, "override, key=value (repeatable)");
  sub->add_option("--seed", c.seed, "random seed");
  sub->add_option("--out", c.out, "output directory")->required();
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size())
      throw DomainError(what + ": '" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

std::vector<Regime> parse_regimes(const std::string& text) {
  std::vector<Regime> out;
  for (double v : parse_double_list(text, "regimes")) out.push_back(regime_from_flag(static_cast<int>(v)));
  return out;
}

KeyValueConfig defaults_for(const std::string& command) {
  KeyValueConfig kv;
  kv.set("seed", 1);
  if (command == "synth-data") {
    const SynthConfig sc;
    kv.set("synth.classes", sc.n_classes);
    kv.set("synth.views", sc.views_per_circle);
    kv.set("synth.regimes", sc.regimes);
    kv.set("synth.range_m", sc.range_m);
  }
  if (command == "train-vanilla" || command == "train-predictor") {
    kv.merge(ModelConfig{}.to_key_values(), "model");
    kv.merge(TrainConfig{}.to_key_values(), "train");
  }
  if (command == "train-predictor") {
    kv.set("pairs.max_delta_deg", 360.0);
    kv.set("pairs.cross_regime", 0);
    kv.set("split.test_fraction", 0.2);
    kv.set("train.validate", 1);
  }
  if (command == "generate") {
    kv.set("generate.seed_azimuths", std::string("0"));
    kv.set("generate.seed_regime", 0);
    kv.set("generate.regimes", std::string("0,1"));
    kv.set("generate.min_variance", 1e-6);
  }
  if (command == "low-shot") {
    kv.merge(ClassifierConfig{}.to_key_values(), "classifier");
    kv.set("low_shot.test_fraction", 0.25);
    kv.set("low_shot.match_count", 1);
  }
  if (command == "embed-export") kv.set("export.offsets", std::string("0,90"));
  if (command == "project") {
    const TsneConfig tc;
    kv.set("tsne.perplexity", tc.perplexity);
    kv.set("tsne.iterations", tc.iterations);
    kv.set("tsne.stage", std::string("both"));
  }
  return kv;
}

// Every key some subcommand reads: the union of all defaults plus keys that only come from flags.
const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k{"command", "code_version", "out", "generate.class", "generate.step_deg", "low_shot.class",
                            "input.manifest", "input.checkpoint", "input.embeddings", "input.generated", "input.pairs"};
    for (const char* cmd : {"synth-data", "train-vanilla", "extract-embeddings", "train-predictor", "generate",
                            "evaluate", "low-shot", "embed-export", "project"})
    {
      const KeyValueConfig d = defaults_for(cmd);
      for (const auto& [key, value] : d.entries()) k.insert(key);
    }
    return k;
  }();
  return keys;
}

void check_keys(const KeyValueConfig& kv) {
  for (const auto& [key, value] : kv.entries())
    if (!known_keys().count(key)) throw DomainError("unknown configuration key '" + key + "'");
}

KeyValueConfig resolve(const std::string& command, const Common& c, const KeyValueConfig& flags) {
  KeyValueConfig kv = defaults_for(command);
  if (!c.config_path.empty()) kv.merge(KeyValueConfig::load(c.config_path));
  for (const auto& o : c.overrides) kv.apply_override(o);
  kv.merge(flags);
  if (c.seed) kv.set("seed", *c.seed);
  if (kv.contains("train.batch_size")) kv.set("train.seed", kv.get_int("seed", 1));
  kv.set("command", command);
  kv.set("out", fs::absolute(c.out).lexically_normal().string());
  kv.set("code_version", code_version());
  check_keys(kv);
  return kv;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string required_path(const KeyValueConfig& kv, const std::string& key, const std::string& flag) {
  const std::string v = kv.get_string(key, "");
  if (v.empty()) throw DomainError("missing " + flag);
  return v;
}

Predictor<float> load_predictor(const Checkpoint& ck) {
  if (ck.kind != "predictor") throw DomainError("checkpoint holds a '" + ck.kind + "' network, expected a predictor");
  Predictor<float> model(ModelConfig::from_key_values(ck.metadata.subset("model")),
                         static_cast<std::uint64_t>(ck.metadata.get_int("seed", 1)));
  restore(model.parameters(), ck.tensors);
  return model;
}

VanillaAutoencoder<float> load_vanilla(const Checkpoint& ck) {
  if (ck.kind != "vanilla") throw DomainError("checkpoint holds a '" + ck.kind + "' network, expected vanilla");
  VanillaAutoencoder<float> model(ModelConfig::from_key_values(ck.metadata.subset("model")),
                                  static_cast<std::uint64_t>(ck.metadata.get_int("seed", 1)));
  restore(model.parameters(), ck.tensors);
  return model;
}

DatasetManifest checked_manifest(const std::string& path) {
  DatasetManifest m = load_manifest(path);
  validate_manifest(m, false);
  return m;
}

/// Streams the step log and writes checkpoints as training progresses.
class TrainLogger {
 public:
  TrainLogger(const fs::path& out, std::ostream& err, std::string kind, KeyValueConfig metadata)
      : out_(out), err_(err), kind_(std::move(kind)), metadata_(std::move(metadata)), log_(out / "train_log.csv") {
    if (!log_) throw IoError("cannot write " + (out / "train_log.csv").string());
    log_ << "epoch,step,L_e,L_o,L_t,lr\n";
  }

  TrainHooks hooks(int epochs) {
    TrainHooks h;
    h.on_step = [this](const StepRecord& r) { log_ << format_step_record(r) << '\n'; };
    h.on_epoch = [this, epochs](const EpochRecord& e) {
      err_ << "epoch " << (e.epoch + 1) << "/" << epochs << "  L_e=" << e.train.embedding << "  L_o=" << e.train.output
           << "  L_t=" << e.train.total;
      if (e.validation_total) err_ << "  val_L_t=" << *e.validation_total;
      err_ << "  lr=" << e.lr << "  (" << std::fixed << std::setprecision(1) << e.wall_seconds << "s)"
           << std::defaultfloat << std::setprecision(6) << '\n';
      epochs_ << e.epoch << ',' << format_double(e.train.embedding) << ',' << format_double(e.train.output) << ','
              << format_double(e.train.total) << ','
              << (e.validation_total ? format_double(*e.validation_total) : std::string()) << ','
              << format_double(e.lr) << '\n';
    };
    h.on_checkpoint = [this, epochs](int done, const ParameterList<float>& params) {
      Checkpoint ck{kind_, metadata_, snapshot(params)};
      ck.metadata.set("epochs_completed", done);
      save_checkpoint(ck, out_ / (kind_ + ".ckpt"));
      if (done < epochs) save_checkpoint(ck, out_ / (kind_ + "_epoch" + std::to_string(done) + ".ckpt"));
    };
    return h;
  }

  void finish(const TrainingRun& run) {
    log_ << format_training_summary(run) << '\n';
    if (!log_) throw IoError("write failed for train_log.csv");
    write_text(out_ / "epochs.csv", "epoch,L_e,L_o,L_t,val_L_t,lr\n" + epochs_.str());
  }

 private:
  fs::path out_;
  std::ostream& err_;
  std::string kind_;
  KeyValueConfig metadata_;
  std::ofstream log_;
  std::ostringstream epochs_;
};

// ---------------------------------------------------------------------------------------------
// Subcommands

void cmd_synth(const KeyValueConfig& kv, const fs::path& out, std::ostream& log) {
  SynthConfig sc;
  sc.n_classes = static_cast<int>(kv.get_int("synth.classes", sc.n_classes));
  sc.views_per_circle = static_cast<int>(kv.get_int("synth.views", sc.views_per_circle));
  sc.regimes = static_cast<int>(kv.get_int("synth.regimes", sc.regimes));
  sc.range_m = kv.get_double("synth.range_m", sc.range_m);
  sc.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  const DatasetManifest m = synth_generate(sc, out);
  log << "wrote " << m.records.size() << " images and " << (out / "manifest.csv").string() << '\n';
}

void cmd_train_vanilla(const KeyValueConfig& kv, const fs::path& out, std::ostream& log, std::ostream& err) {
  const DatasetManifest manifest = checked_manifest(required_path(kv, "input.manifest", "--manifest"));
  const std::vector<ViewSample> corpus = load_corpus(manifest);
  const ModelConfig mc = ModelConfig::from_key_values(kv.subset("model"));
  const TrainConfig tc = TrainConfig::from_key_values(kv.subset("train"));

  KeyValueConfig meta;
  meta.merge(mc.to_key_values(), "model");
  meta.merge(tc.to_key_values(), "train");
  meta.set("seed", static_cast<long long>(tc.seed));
  meta.set("code_version", code_version());
  meta.set("input.manifest", kv.get_string("input.manifest", ""));

  TrainLogger logger(out, err, "vanilla", meta);
  const auto result = train_vanilla(corpus, {}, mc, tc, logger.hooks(tc.epochs));
  logger.finish(result.run);
  log << format_training_summary(result.run) << '\n';
}

void cmd_extract(const KeyValueConfig& kv, const fs::path& out, std::ostream& log) {
  const DatasetManifest manifest = checked_manifest(required_path(kv, "input.manifest", "--manifest"));
  auto model = load_vanilla(load_checkpoint(required_path(kv, "input.checkpoint", "--checkpoint")));
  const std::uint64_t before = weights_hash(model.parameters());
  const EmbeddingTable table = extract_embeddings(model, load_corpus(manifest));
  if (weights_hash(model.parameters()) != before) throw TrainingError("weights changed during extraction");
  save_embeddings(table, out / "embeddings.csv");
  log << "wrote " << table.size() << " embeddings to " << (out / "embeddings.csv").string() << '\n';
}

struct PredictorData {
  DatasetManifest manifest;
  std::vector<ViewSample> corpus;
  EmbeddingTable targets;
  TrainTestSplit split;
};

PredictorData predictor_data(const KeyValueConfig& kv) {
  PredictorData d;
  d.manifest = checked_manifest(required_path(kv, "input.manifest", "--manifest"));
  d.corpus = load_corpus(d.manifest);
  d.targets = load_embeddings(required_path(kv, "input.embeddings", "--embeddings"));
  PairingOptions po;
  po.max_delta_deg = kv.get_double("pairs.max_delta_deg", po.max_delta_deg);
  po.cross_regime = kv.get_bool("pairs.cross_regime", po.cross_regime);
  const std::vector<ViewPair> pairs = generate_pairs(d.manifest, po);
  if (pairs.empty()) throw DomainError("no view pairs under the pairing options");
  d.split = split_train_test(pairs, kv.get_double("split.test_fraction", 0.2),
                             static_cast<std::uint64_t>(kv.get_int("seed", 1)));
  return d;
}

void cmd_train_predictor(const KeyValueConfig& kv, const fs::path& out, std::ostream& log, std::ostream& err) {
  const PredictorData d = predictor_data(kv);
  const ModelConfig mc = ModelConfig::from_key_values(kv.subset("model"));
  const TrainConfig tc = TrainConfig::from_key_values(kv.subset("train"));

  KeyValueConfig meta;
  meta.merge(mc.to_key_values(), "model");
  meta.merge(tc.to_key_values(), "train");
  meta.merge(kv.subset("pairs"), "pairs");
  meta.merge(kv.subset("split"), "split");
  meta.merge(kv.subset("input"), "input");
  meta.set("seed", static_cast<long long>(tc.seed));
  meta.set("code_version", code_version());

  err << d.split.train.size() << " training pairs, " << d.split.test.size() << " test pairs\n";
  const bool validate = kv.get_bool("train.validate", true);
  TrainLogger logger(out, err, "predictor", meta);
  const auto result = train_predictor(d.corpus, d.split.train,
                                      validate ? std::span<const ViewPair>(d.split.test) : std::span<const ViewPair>(),
                                      d.targets, mc, tc, logger.hooks(tc.epochs));
  logger.finish(result.run);
  log << format_training_summary(result.run) << '\n';
}

void cmd_evaluate(const KeyValueConfig& kv_in, const fs::path& out, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(required_path(kv_in, "input.checkpoint", "--checkpoint"));
  auto model = load_predictor(ck);
  // Data, pairing and split settings default to those the checkpoint was trained with.
  KeyValueConfig kv;
  kv.merge(ck.metadata.subset("pairs"), "pairs");
  kv.merge(ck.metadata.subset("split"), "split");
  kv.merge(ck.metadata.subset("input"), "input");
  kv.set("seed", ck.metadata.get_int("seed", 1));
  for (const auto& [k, v] : kv_in.entries())
    if (k.rfind("input.", 0) == 0 || k.rfind("pairs.", 0) == 0 || k.rfind("split.", 0) == 0) kv.set(k, v);

  const PredictorData d = predictor_data(kv);
  const std::string which = kv_in.get_string("input.pairs", "test");
  std::vector<ViewPair> pairs;
  if (which == "test") pairs = d.split.test;
  else if (which == "train") pairs = d.split.train;
  else if (which == "all") {
    pairs = d.split.train;
    pairs.insert(pairs.end(), d.split.test.begin(), d.split.test.end());
  } else throw DomainError("--pairs must be test, train or all");

  EvalMetadata meta{ck.metadata.get_string("train.loss_mode", "unknown"),
                    static_cast<std::uint64_t>(ck.metadata.get_int("seed", 1)), checkpoint_id(model)};
  const EvalReport report = average_test_error(model, d.corpus, pairs, d.targets, meta);
  write_text(out / "report.txt", report.to_text());
  write_text(out / "report.csv", report.to_records());
  log << report.to_text();
}

void cmd_generate(const KeyValueConfig& kv, const fs::path& out, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(required_path(kv, "input.checkpoint", "--checkpoint"));
  auto model = load_predictor(ck);
  std::string manifest_path = kv.get_string("input.manifest", ck.metadata.get_string("input.manifest", ""));
  if (manifest_path.empty()) throw DomainError("missing --manifest");
  const DatasetManifest manifest = checked_manifest(manifest_path);
  if (!kv.contains("generate.class")) throw DomainError("missing --class");
  const int class_id = static_cast<int>(kv.get_int("generate.class", 0));
  const Regime seed_regime = regime_from_flag(static_cast<int>(kv.get_int("generate.seed_regime", 0)));
  const std::vector<double> seed_azimuths = parse_double_list(kv.get_string("generate.seed_azimuths", "0"), "seed azimuths");

  std::vector<ViewSample> seeds;
  const std::vector<ViewSample> corpus = load_corpus(manifest);
  for (const auto& s : corpus)
    if (s.key.class_id == class_id && s.key.regime == seed_regime)
      for (double az : seed_azimuths)
        if (angular_distance(az, s.key.azimuth_deg) < 1e-9) seeds.push_back(s);
  if (seeds.size() != seed_azimuths.size())
    throw LookupError("some seed azimuths have no image of class " + std::to_string(class_id) + " in that regime");

  const double step = kv.get_double("generate.step_deg", manifest.angular_step_deg);
  const std::vector<Regime> regimes = parse_regimes(kv.get_string("generate.regimes", "0,1"));
  const std::vector<PoseRequest> requests = pose_circle(step, regimes);
  const std::vector<ViewSample> generated =
      generate_class_corpus(model, seeds, requests, kv.get_double("generate.min_variance", 1e-6));

  fs::create_directories(out / "images");
  DatasetManifest gm;
  gm.angular_step_deg = step;
  gm.base_dir = out;
  gm.comments.push_back({"generated_from", checkpoint_id(model)});
  gm.comments.push_back({"generated_class", std::to_string(class_id)});
  for (const auto& s : generated) {
    char name[64];
    std::snprintf(name, sizeof name, "images/gen_c%02d_%s_%07.3f.png", s.key.class_id,
                  s.key.regime == Regime::day ? "day" : "night", s.key.azimuth_deg);
    write_gray_png(out / name, denormalize_image(s.image));
    gm.records.push_back({name, s.key});
  }
  save_manifest(gm, out / "manifest.csv");

  // A strip of the first seed followed by twelve evenly spaced views per regime.
  const int cols = 13;
  const int rows = static_cast<int>(regimes.size());
  std::vector<std::uint8_t> strip(static_cast<std::size_t>(cols * kImageSize * rows * kImageSize * 3), 255);
  const auto blit = [&](const Raster& r, int row, int col) {
    const GrayImage8 g = denormalize_image(r);
    for (int y = 0; y < kImageSize; ++y)
      for (int x = 0; x < kImageSize; ++x) {
        const std::size_t o =
            (static_cast<std::size_t>(row * kImageSize + y) * (cols * kImageSize) + col * kImageSize + x) * 3;
        strip[o] = strip[o + 1] = strip[o + 2] = g.pixels[static_cast<std::size_t>(y * kImageSize + x)];
      }
  };
  const std::size_t per_regime = requests.size() / regimes.size();
  for (int r = 0; r < rows; ++r) {
    blit(seeds.front().image, r, 0);
    for (int c = 1; c < cols; ++c) {
      const std::size_t k = static_cast<std::size_t>(r) * per_regime +
                            static_cast<std::size_t>(c - 1) * per_regime / static_cast<std::size_t>(cols - 1);
      if (k < generated.size()) blit(generated[k].image, r, c);
    }
  }
  write_rgb_png(out / "strip.png", cols * kImageSize, rows * kImageSize, strip);
  log << "generated " << generated.size() << " views of class " << class_id << " from " << seeds.size()
      << " seed image(s)\n";
}

void cmd_low_shot(const KeyValueConfig& kv, const fs::path& out, std::ostream& log) {
  const DatasetManifest real = checked_manifest(required_path(kv, "input.manifest", "--manifest"));
  const DatasetManifest gen = checked_manifest(required_path(kv, "input.generated", "--generated"));
  if (!kv.contains("low_shot.class")) throw DomainError("missing --class");
  const int class_id = static_cast<int>(kv.get_int("low_shot.class", 0));
  const auto seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  const ClassifierConfig cc = ClassifierConfig::from_key_values(kv.subset("classifier"));

  const std::vector<ViewSample> corpus = load_corpus(real);
  const SampleSplit split = stratified_split(corpus, kv.get_double("low_shot.test_fraction", 0.25), seed);
  std::vector<ViewSample> generated = load_corpus(gen);
  if (kv.get_bool("low_shot.match_count", true)) {
    const auto n_real = static_cast<std::size_t>(std::count_if(
        split.train.begin(), split.train.end(), [&](const ViewSample& s) { return s.key.class_id == class_id; }));
    if (generated.size() > n_real) {
      std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
      std::vector<std::size_t> order(generated.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
      order.resize(n_real);
      std::sort(order.begin(), order.end());
      std::vector<ViewSample> kept;
      for (auto i : order) kept.push_back(generated[i]);
      generated = std::move(kept);
    }
  }
  const LowShotResult result = low_shot_eval(split.train, split.test, class_id, generated, cc, seed);
  write_text(out / "lowshot.txt", result.to_text());
  write_text(out / "lowshot.csv", result.to_records());
  log << result.to_text();
}

void cmd_embed_export(const KeyValueConfig& kv, const fs::path& out, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(required_path(kv, "input.checkpoint", "--checkpoint"));
  const auto model = load_predictor(ck);
  std::string manifest_path = kv.get_string("input.manifest", ck.metadata.get_string("input.manifest", ""));
  if (manifest_path.empty()) throw DomainError("missing --manifest");
  const std::vector<ViewSample> corpus = load_corpus(checked_manifest(manifest_path));
  const std::vector<double> offsets = parse_double_list(kv.get_string("export.offsets", "0,90"), "offsets");
  const auto records = export_embeddings(model, corpus, offsets);
  save_embedding_records(records, out / "embeddings_export.csv");

  std::ostringstream os;
  os << "stage,labels,silhouette\n";
  for (EmbeddingStage stage : {EmbeddingStage::pre_fusion, EmbeddingStage::post_fusion})
    for (LabelKey key : {LabelKey::class_id, LabelKey::class_x_day_night}) {
      os << to_string(stage) << ',' << (key == LabelKey::class_id ? "class_id" : "class_x_day_night") << ',';
      try {
        os << format_double(embedding_silhouette(records, stage, key)) << '\n';
      } catch (const DomainError& e) {
        os << "undefined (" << e.what() << ")\n";
      }
    }
  write_text(out / "silhouette.csv", os.str());
  log << "exported " << records.size() << " embedding records\n" << os.str();
}

void cmd_project(const KeyValueConfig& kv, const fs::path& out, std::ostream& log) {
  const auto records = load_embedding_records(required_path(kv, "input.embeddings", "--embeddings"));
  TsneConfig tc;
  tc.perplexity = kv.get_double("tsne.perplexity", tc.perplexity);
  tc.iterations = static_cast<int>(kv.get_int("tsne.iterations", tc.iterations));
  tc.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  const std::string stage_text = kv.get_string("tsne.stage", "both");
  std::vector<EmbeddingStage> stages;
  if (stage_text == "both") stages = {EmbeddingStage::pre_fusion, EmbeddingStage::post_fusion};
  else stages = {parse_stage(stage_text)};

  for (EmbeddingStage stage : stages) {
    const LabeledPoints sel = select_stage(records, stage, LabelKey::class_x_day_night);
    const TsneResult result = tsne_project(sel.points, tc);
    const std::string base = "tsne_" + to_string(stage);
    std::ostringstream pts;
    pts << "x,y,class_id,day_night\n";
    std::vector<PlotLabel> labels;
    for (std::size_t i = 0; i < result.points.size(); ++i) {
      const auto* r = sel.records[i];
      pts << format_double(result.points[i][0]) << ',' << format_double(result.points[i][1]) << ',' << r->class_id
          << ',' << regime_flag(r->regime) << '\n';
      labels.push_back({r->class_id, r->regime});
    }
    write_text(out / (base + ".csv"), pts.str());
    std::ostringstream kl;
    kl << "iteration,kl\n";
    for (std::size_t i = 0; i < result.kl_history.size(); ++i)
      kl << i << ',' << format_double(result.kl_history[i]) << '\n';
    kl << result.kl_history.size() << ',' << format_double(result.final_kl) << '\n';
    write_text(out / (base + "_kl.csv"), kl.str());
    render_projection(result.points, labels, out / (base + ".png"));
    log << to_string(stage) << ": " << result.points.size() << " points, final KL " << result.final_kl << '\n';
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"irview: pose-conditioned novel view synthesis for infrared imagery", "irview"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  struct Sub {
    CLI::App* app;
    Common common;
    KeyValueConfig flags;
  };
  std::map<std::string, Sub> subs;
  std::function<void(const KeyValueConfig&, const fs::path&)> body;
  std::string chosen;

  // Flag storage shared by several subcommands.
  std::optional<int> classes, views, regimes, cls;
  std::optional<double> range_m, max_delta, test_fraction, perplexity, step_deg;
  std::optional<long long> iterations;
  std::string manifest, checkpoint, embeddings, generated, loss, stage, seed_azimuths, offsets, pairs_which;
  bool cross_regime = false;

  const auto add = [&](const std::string& name, const std::string& description) -> Sub& {
    Sub& s = subs[name];
    s.app = app.add_subcommand(name, description);
    add_common(s.app, s.common);
    return s;
  };

  {
    auto& s = add("synth-data", "render the procedural infrared corpus and its manifest");
    s.app->add_option("--classes", classes, "number of object classes");
    s.app->add_option("--views", views, "azimuth views per circle");
    s.app->add_option("--regimes", regimes, "1 = day only, 2 = day and night");
    s.app->add_option("--range", range_m, "nominal range in metres");
  }
  {
    auto& s = add("train-vanilla", "train block 1, the unconditioned autoencoder");
    s.app->add_option("--manifest", manifest, "dataset manifest")->required();
  }
  {
    auto& s = add("extract-embeddings", "encode every view with a trained block 1");
    s.app->add_option("--manifest", manifest, "dataset manifest")->required();
    s.app->add_option("--checkpoint", checkpoint, "vanilla checkpoint")->required();
  }
  {
    auto& s = add("train-predictor", "train block 2, the pose-conditioned predictor");
    s.app->add_option("--manifest", manifest, "dataset manifest")->required();
    s.app->add_option("--embeddings", embeddings, "block-1 embeddings.csv")->required();
    s.app->add_option("--loss", loss, "mse_only or embedding_plus_mse")
        ->check(CLI::IsMember({"mse_only", "embedding_plus_mse"}));
    s.app->add_option("--max-delta-deg", max_delta, "largest azimuth offset between paired views");
    s.app->add_flag("--cross-regime", cross_regime, "also pair day with night views");
    s.app->add_option("--test-fraction", test_fraction, "share of pairs held out");
  }
  {
    auto& s = add("generate", "synthesize novel views of one class from seed images");
    s.app->add_option("--checkpoint", checkpoint, "predictor checkpoint")->required();
    s.app->add_option("--manifest", manifest, "dataset manifest (default: the one used in training)");
    s.app->add_option("--class", cls, "class id to generate")->required();
    s.app->add_option("--seed-azimuths", seed_azimuths, "comma-separated azimuths of the seed images");
    s.app->add_option("--step-deg", step_deg, "azimuth step of the generated views");
  }
  {
    auto& s = add("evaluate", "average test error of a predictor checkpoint");
    s.app->add_option("--checkpoint", checkpoint, "predictor checkpoint")->required();
    s.app->add_option("--manifest", manifest, "dataset manifest (default: the one used in training)");
    s.app->add_option("--embeddings", embeddings, "block-1 embeddings (default: the ones used in training)");
    s.app->add_option("--pairs", pairs_which, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));
  }
  {
    auto& s = add("low-shot", "classifier accuracy with one class replaced by generated views");
    s.app->add_option("--manifest", manifest, "real dataset manifest")->required();
    s.app->add_option("--generated", generated, "manifest of generated views")->required();
    s.app->add_option("--class", cls, "substituted class id")->required();
    s.app->add_option("--test-fraction", test_fraction, "share of real images per class held out");
  }
  {
    auto& s = add("embed-export", "export pre- and post-fusion embeddings with silhouette scores");
    s.app->add_option("--checkpoint", checkpoint, "predictor checkpoint")->required();
    s.app->add_option("--manifest", manifest, "dataset manifest (default: the one used in training)");
    s.app->add_option("--offsets", offsets, "comma-separated pose offsets in degrees for post-fusion");
  }
  {
    auto& s = add("project", "t-SNE projection and scatter plot of exported embeddings");
    s.app->add_option("--embeddings", embeddings, "embeddings_export.csv")->required();
    s.app->add_option("--perplexity", perplexity, "t-SNE perplexity");
    s.app->add_option("--iterations", iterations, "t-SNE iterations");
    s.app->add_option("--stage", stage, "pre_fusion, post_fusion or both")
        ->check(CLI::IsMember({"pre_fusion", "post_fusion", "both"}));
  }
  CLI::App* describe_cmd = app.add_subcommand("describe", "print the layers and metadata of a checkpoint");
  describe_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  if (argc <= 1) {
    err << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "irview: " << e.what() << "\n\n";
    const auto parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return 2;
  }

  try {
    if (describe_cmd->parsed()) {
      const Checkpoint ck = load_checkpoint(checkpoint);
      out << "kind: " << ck.kind << '\n' << ck.metadata.to_string() << '\n' << describe(ck);
      return 0;
    }
    for (auto& [name, s] : subs) {
      if (!s.app->parsed()) continue;
      KeyValueConfig& f = s.flags;
      if (classes) f.set("synth.classes", *classes);
      if (views) f.set("synth.views", *views);
      if (regimes) f.set("synth.regimes", *regimes);
      if (range_m) f.set("synth.range_m", *range_m);
      if (!manifest.empty()) f.set("input.manifest", fs::absolute(manifest).lexically_normal().string());
      if (!checkpoint.empty()) f.set("input.checkpoint", fs::absolute(checkpoint).lexically_normal().string());
      if (!embeddings.empty()) f.set("input.embeddings", fs::absolute(embeddings).lexically_normal().string());
      if (!generated.empty()) f.set("input.generated", fs::absolute(generated).lexically_normal().string());
      if (!pairs_which.empty()) f.set("input.pairs", pairs_which);
      if (!loss.empty()) f.set("train.loss_mode", loss);
      if (max_delta) f.set("pairs.max_delta_deg", *max_delta);
      if (cross_regime) f.set("pairs.cross_regime", 1);
      if (test_fraction) f.set(name == "low-shot" ? "low_shot.test_fraction" : "split.test_fraction", *test_fraction);
      if (cls) f.set(name == "low-shot" ? "low_shot.class" : "generate.class", *cls);
      if (!seed_azimuths.empty()) f.set("generate.seed_azimuths", seed_azimuths);
      if (step_deg) f.set("generate.step_deg", *step_deg);
      if (!offsets.empty()) f.set("export.offsets", offsets);
      if (perplexity) f.set("tsne.perplexity", *perplexity);
      if (iterations) f.set("tsne.iterations", *iterations);
      if (!stage.empty()) f.set("tsne.stage", stage);

      const KeyValueConfig kv = resolve(name, s.common, f);
      const fs::path out_dir = s.common.out;
      fs::create_directories(out_dir);
      OutputLock lock(out_dir);
      write_text(out_dir / ("runspec." + name + ".txt"), kv.to_string());
      if (name == "synth-data") cmd_synth(kv, out_dir, out);
      else if (name == "train-vanilla") cmd_train_vanilla(kv, out_dir, out, err);
      else if (name == "extract-embeddings") cmd_extract(kv, out_dir, out);
      else if (name == "train-predictor") cmd_train_predictor(kv, out_dir, out, err);
      else if (name == "generate") cmd_generate(kv, out_dir, out);
      else if (name == "evaluate") cmd_evaluate(kv, out_dir, out);
      else if (name == "low-shot") cmd_low_shot(kv, out_dir, out);
      else if (name == "embed-export") cmd_embed_export(kv, out_dir, out);
      else if (name == "project") cmd_project(kv, out_dir, out);
      return 0;
    }
  } catch (const std::exception& e) {
    err << "irview: error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"irview"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace irview::cli
