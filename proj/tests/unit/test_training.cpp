#include <algorithm>
#include <fstream>
#include <set>

#include "doctest.h"
#include "irview/errors.hpp"
#include "irview/checkpoint.hpp"
#include "irview/config.hpp"
#include "irview/losses.hpp"
#include "irview/synth.hpp"
#include "irview/training.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace irview;

namespace {

struct Fixture {
  std::vector<ViewSample> corpus;
  std::vector<ViewPair> pairs;

  Fixture() {
    SynthConfig sc;
    sc.n_classes = 2;
    sc.views_per_circle = 8;
    sc.regimes = 1;
    corpus = synth_corpus(sc);
    pairs = generate_pairs(keys_of(corpus), {45.0, false});
  }
};

TrainConfig short_config(int epochs = 2, int batch = 4) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch;
  tc.lr_switch_epoch = std::max(1, epochs / 2);
  tc.seed = 5;
  return tc;
}

}  // namespace

TEST_CASE("mse and the loss terms") {
  const std::vector<float> zero{0.0f, 0.0f}, two{2.0f, 2.0f};
  CHECK(mse(zero, two) == 4.0);
  CHECK(mse(two, two) == 0.0);
  CHECK_THROWS_AS(mse(zero, std::vector<float>{1.0f}), ShapeError);

  Tensor<float> e1({1, 1024}), e2({1, 1024}, 1.0f);
  CHECK(embedding_loss(e1, e1) == 0.0);
  CHECK(embedding_loss(e1, e2) == 1.0);
  Tensor<float> y1({1, 1, 64, 64}), y2({1, 1, 64, 64}, 0.5f);
  CHECK(output_loss(y1, y2) == 0.25);
  CHECK_THROWS_AS(output_loss(y1, Tensor<float>({1, 1, 32, 32})), ShapeError);

  const LossBreakdown all_equal = total_loss(e1, e1, y1, y1);
  CHECK(all_equal == LossBreakdown{0.0, 0.0, 0.0});
  const LossBreakdown l = total_loss(e1, e2, y1, y2);
  CHECK(l.embedding == 1.0);
  CHECK(l.output == 0.25);
  CHECK(l.total == 1.25);
}

TEST_CASE("mse matches the long-double oracle on random vectors") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(1024), b(1024);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = u(rng), b[i] = u(rng);
    const auto ref = static_cast<double>(oracle::mse(a, b));
    REQUIRE(std::abs(mse(a, b) - ref) <= 1e-12 * ref);
  }
}

TEST_CASE("mse gradient is 2 (pred - target) / n, scaled") {
  Tensor<double> p({1, 4}, std::vector<double>{1, 2, 3, 4}), t({1, 4}, std::vector<double>{0, 0, 0, 0});
  const auto g = mse_gradient(p, t, 2.0);
  for (int i = 0; i < 4; ++i) CHECK(g[static_cast<std::size_t>(i)] == doctest::Approx(2.0 * 2.0 * (i + 1) / 4.0));
}

TEST_CASE("train config defaults and validation") {
  const TrainConfig tc;
  CHECK(tc.epochs == 80);
  CHECK(tc.batch_size == 64);
  CHECK(tc.learning_rate(69) == 1e-3);
  CHECK(tc.learning_rate(70) == 1e-4);
  CHECK(tc.adam.beta1 == 0.9);
  CHECK(tc.adam.beta2 == 0.999);
  CHECK(tc.adam.epsilon == 1e-8);
  TrainConfig bad = tc;
  bad.lr_switch_epoch = 81;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = tc;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  const TrainConfig round = TrainConfig::from_key_values(tc.to_key_values());
  CHECK(round.epochs == tc.epochs);
  CHECK(round.lr_final == tc.lr_final);
  CHECK(round.loss_mode == tc.loss_mode);
  CHECK(parse_loss_mode("mse_only") == LossMode::mse_only);
  CHECK(to_string(LossMode::embedding_plus_mse) == "embedding_plus_mse");
  CHECK_THROWS_AS(parse_loss_mode("l1"), DomainError);
}

TEST_CASE("vanilla training logs, schedules and reproduces") {
  Fixture f;
  const ModelConfig mc;
  const TrainConfig tc = short_config(4, 8);
  const auto a = train_vanilla(f.corpus, {}, mc, tc);
  const auto b = train_vanilla(f.corpus, {}, mc, tc);
  REQUIRE(a.run.epochs.size() == 4);
  CHECK(a.run.steps.size() == 8);
  for (std::size_t i = 0; i < a.run.epochs.size(); ++i) CHECK(a.run.epochs[i].epoch == static_cast<int>(i));
  std::vector<double> lrs;
  for (const auto& s : a.run.steps) {
    if (lrs.empty() || lrs.back() != s.lr) lrs.push_back(s.lr);
    REQUIRE(s.loss.total == s.loss.embedding + s.loss.output);
  }
  CHECK(lrs == std::vector<double>{1e-3, 1e-4});
  REQUIRE(a.run.steps.size() == b.run.steps.size());
  for (std::size_t i = 0; i < a.run.steps.size(); ++i) REQUIRE(a.run.steps[i].loss == b.run.steps[i].loss);
  VanillaAutoencoder<float> am = a.model, bm = b.model;
  CHECK(weights_hash(am.parameters()) == weights_hash(bm.parameters()));
}

TEST_CASE("training rejects empty inputs and missing embeddings") {
  Fixture f;
  const ModelConfig mc;
  CHECK_THROWS_AS(train_vanilla(std::vector<ViewSample>{}, {}, mc, short_config()), DomainError);
  VanillaAutoencoder<float> v(mc, 1);
  EmbeddingTable targets = extract_embeddings(v, f.corpus);
  CHECK_THROWS_AS(train_predictor(f.corpus, std::vector<ViewPair>{}, {}, targets, mc, short_config()), DomainError);
  const SampleKey missing = f.corpus[f.pairs.front().target].key;
  targets.erase(missing);
  try {
    train_predictor(f.corpus, f.pairs, {}, targets, mc, short_config());
    FAIL("expected LookupError");
  } catch (const LookupError& e) {
    CHECK(std::string(e.what()).find(to_string(missing)) != std::string::npos);
  }
}

TEST_CASE("extract_embeddings is read-only and complete") {
  Fixture f;
  VanillaAutoencoder<float> v(ModelConfig{}, 3);
  const auto before = weights_hash(v.parameters());
  const auto table = extract_embeddings(v, f.corpus);
  CHECK(weights_hash(v.parameters()) == before);
  CHECK(table.size() == f.corpus.size());
  for (const auto& [key, e] : table) REQUIRE(e.size() == 1024);
  std::vector<ViewSample> dup{f.corpus[0], f.corpus[0]};
  CHECK_THROWS_AS(extract_embeddings(v, dup), ManifestError);
}

TEST_CASE("mse_only and guided training take the same first step when L_e is at its minimum") {
  Fixture f;
  const ModelConfig mc;
  const std::vector<ViewPair> one{f.pairs.front()};
  Predictor<float> probe(mc, 9);
  const Raster* in = &f.corpus[one[0].input].image;
  const auto out = probe.forward(images_to_batch<float>(std::span<const Raster* const>(&in, 1)),
                                 poses_to_batch<float>(std::span<const PoseVector>(&one[0].pose, 1)));
  EmbeddingTable targets;
  targets[f.corpus[one[0].target].key] = std::vector<float>(out.post_fusion.values().begin(), out.post_fusion.values().end());
  TrainConfig tc = short_config(1, 1);
  tc.seed = 9;
  tc.loss_mode = LossMode::mse_only;
  auto plain = train_predictor(f.corpus, one, {}, targets, mc, tc);
  tc.loss_mode = LossMode::embedding_plus_mse;
  auto guided = train_predictor(f.corpus, one, {}, targets, mc, tc);
  CHECK(plain.run.steps.front().loss.embedding == 0.0);
  CHECK(weights_hash(plain.model.parameters()) == weights_hash(guided.model.parameters()));
}

TEST_CASE("predictor training reproduces and respects the step cap") {
  Fixture f;
  const ModelConfig mc;
  VanillaAutoencoder<float> v(mc, 1);
  const auto targets = extract_embeddings(v, f.corpus);
  TrainConfig tc = short_config(3, 8);
  tc.max_steps = 5;
  const auto a = train_predictor(f.corpus, f.pairs, f.pairs, targets, mc, tc);
  const auto b = train_predictor(f.corpus, f.pairs, f.pairs, targets, mc, tc);
  CHECK(a.run.steps.size() == 5);
  REQUIRE(a.run.steps.size() == b.run.steps.size());
  for (std::size_t i = 0; i < a.run.steps.size(); ++i) REQUIRE(a.run.steps[i].loss == b.run.steps[i].loss);
  REQUIRE(!a.run.epochs.empty());
  CHECK(a.run.epochs.front().validation_total.has_value());
}

TEST_CASE("checkpoint hook sees every interval and the end") {
  Fixture f;
  TrainConfig tc = short_config(4, 16);
  tc.checkpoint_every = 2;
  std::vector<int> seen;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](int epochs, const ParameterList<float>& params) {
    seen.push_back(epochs);
    CHECK(!params.empty());
  };
  train_vanilla(f.corpus, {}, ModelConfig{}, tc, hooks);
  CHECK(seen.front() == 2);
  CHECK(seen.back() == 4);
}

TEST_CASE("overfitting one image drives reconstruction error below 1e-3") {
  Fixture f;
  const std::vector<ViewSample> one{f.corpus[3]};
  TrainConfig tc = short_config(1000, 1);
  tc.lr_switch_epoch = 1000;
  tc.stop_below = 5e-4;
  auto t = train_vanilla(one, {}, ModelConfig{}, tc);
  const auto batch = images_to_batch<float>(std::span<const Raster>(&one[0].image, 1));
  CHECK(output_loss(t.model.forward(batch).reconstruction, batch) < 1e-3);
  CHECK(t.run.steps.size() < 1000);
}

TEST_CASE("embedding tables round trip through text") {
  Fixture f;
  VanillaAutoencoder<float> v(ModelConfig{}, 2);
  const auto table = extract_embeddings(v, f.corpus);
  test::TempDir dir;
  save_embeddings(table, dir.path() / "e.csv");
  CHECK(load_embeddings(dir.path() / "e.csv") == table);
}

TEST_CASE("checkpoints round trip bit-exactly") {
  test::TempDir dir;
  const ModelConfig mc;
  Predictor<float> model(mc, 4);
  KeyValueConfig meta = mc.to_key_values();
  meta.set("seed", 4);
  const Checkpoint ck{"predictor", meta, snapshot(model.parameters())};
  save_checkpoint(ck, dir.path() / "p.ckpt");
  const Checkpoint loaded = load_checkpoint(dir.path() / "p.ckpt");
  CHECK(loaded == ck);
  Predictor<float> other(mc, 99);
  CHECK(weights_hash(other.parameters()) != weights_hash(model.parameters()));
  restore(other.parameters(), loaded.tensors);
  CHECK(weights_hash(other.parameters()) == weights_hash(model.parameters()));
  CHECK(describe(loaded).find("2348865") != std::string::npos);

  Fixture f;
  VanillaAutoencoder<float> v(mc, 6);
  save_checkpoint({"vanilla", {}, snapshot(v.parameters())}, dir.path() / "v.ckpt");
  VanillaAutoencoder<float> reloaded(mc, 0);
  restore(reloaded.parameters(), load_checkpoint(dir.path() / "v.ckpt").tensors);
  CHECK(extract_embeddings(reloaded, f.corpus) == extract_embeddings(v, f.corpus));

  auto tensors = ck.tensors;
  tensors.pop_back();
  CHECK_THROWS_AS(restore(other.parameters(), tensors), LookupError);
  tensors = ck.tensors;
  tensors.front().value.reshape({static_cast<int>(tensors.front().value.size())});
  CHECK_THROWS_AS(restore(other.parameters(), tensors), ShapeError);
  std::ofstream(dir.path() / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "junk.ckpt"), IoError);
}

TEST_CASE("key-value config parsing, overrides and formatting") {
  const KeyValueConfig kv = KeyValueConfig::parse("# comment\nmodel.pose_fc_dim=64\n\ntrain.lr=0.001\nflag=true\nlist=1,2,3\n");
  CHECK(kv.get_int("model.pose_fc_dim", 0) == 64);
  CHECK(kv.get_double("train.lr", 0.0) == 0.001);
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.get_int_list("list", {}) == std::vector<int>{1, 2, 3});
  CHECK(kv.get_string("missing", "x") == "x");
  CHECK(kv.subset("model").get_int("pose_fc_dim", 0) == 64);
  KeyValueConfig o = kv;
  o.apply_override("train.lr=0.5");
  CHECK(o.get_double("train.lr", 0.0) == 0.5);
  CHECK_THROWS_AS(o.apply_override("novalue"), DomainError);
  CHECK_THROWS(kv.get_int("train.lr", 0));
  CHECK(KeyValueConfig::parse(kv.to_string()).entries() == kv.entries());
  for (double v : {0.1, 1e-4, 2348865.0, -3.25, 1.0 / 3.0}) CHECK(std::stod(format_double(v)) == v);
}
