#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "irview/errors.hpp"
#include "irview/classifier.hpp"
#include "irview/evaluation.hpp"
#include "irview/plot.hpp"
#include "irview/silhouette.hpp"
#include "irview/synth.hpp"
#include "irview/training.hpp"
#include "irview/tsne.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace irview;

namespace {

std::vector<ViewSample> small_corpus(int classes = 3, int views = 8, int regimes = 2) {
  SynthConfig sc;
  sc.n_classes = classes;
  sc.views_per_circle = views;
  sc.regimes = regimes;
  return synth_corpus(sc);
}

PointSet blobs(int per_blob, int dim, double gap, std::uint64_t seed, std::vector<int>& labels) {
  return {oracle::gaussian_blobs(per_blob, dim, gap, 1.0, seed, labels), dim};
}

}  // namespace

TEST_CASE("silhouette matches the brute-force oracle") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 20 + 28 * trial, dim = 1 + trial, k = 2 + trial % 4;
    PointSet ps{{}, dim};
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      labels.push_back((i * 7) % k);
      for (int d = 0; d < dim; ++d) ps.values.push_back(u(rng) + labels.back());
    }
    REQUIRE(std::abs(silhouette(ps, labels) - static_cast<double>(oracle::silhouette(ps.values, dim, labels))) <= 1e-10);
  }
}

TEST_CASE("silhouette examples and degenerate inputs") {
  std::vector<int> labels;
  const PointSet far = blobs(30, 8, 200.0, 1, labels);
  CHECK(silhouette(far, labels) > 0.9);
  const PointSet same{std::vector<double>(12, 1.0), 3};
  CHECK_THROWS_AS(silhouette(same, std::vector<int>{0, 0, 1, 1}), DomainError);
  const PointSet four{{0, 1, 2, 3}, 1};
  CHECK_THROWS_AS(silhouette(four, std::vector<int>{0, 0, 0, 0}), DomainError);
  CHECK_THROWS_AS(silhouette(four, std::vector<int>{0, 0, 0, 1}), DomainError);
  CHECK_THROWS_AS(silhouette(four, std::vector<int>{0, 1}), ShapeError);
}

TEST_CASE("t-SNE affinities are normalized and hit the perplexity") {
  std::vector<int> labels;
  const PointSet data = blobs(40, 16, 10.0, 3, labels);
  const Affinities a = joint_probabilities(data, 20.0);
  long double sum = 0.0L;
  for (double p : a.p) sum += p;
  CHECK(std::abs(static_cast<double>(sum) - 1.0) < 1e-12);
  for (std::size_t i = 0; i < a.n; ++i) {
    REQUIRE(a.p[i * a.n + i] == 0.0);
    for (std::size_t j = 0; j < i; ++j) REQUIRE(a.p[i * a.n + j] == a.p[j * a.n + i]);
  }
  for (double perp : a.perplexities) REQUIRE(perp == doctest::Approx(20.0).epsilon(1e-6));
  CHECK_THROWS_AS(joint_probabilities(data, 4.0), DomainError);
  CHECK_THROWS_AS(joint_probabilities(data, 80.0 / 3.0), DomainError);
}

TEST_CASE("t-SNE separates two blobs, reproduces and keeps KL falling at the end") {
  std::vector<int> labels;
  const PointSet data = blobs(60, 64, 30.0, 5, labels);
  TsneConfig cfg;
  cfg.perplexity = 15;
  cfg.iterations = 500;
  cfg.seed = 3;
  const TsneResult r = tsne_project(data, cfg);
  CHECK(r.points.size() == data.size());
  CHECK(r.kl_history.size() == 500);
  std::vector<std::array<double, 2>> a, b;
  for (std::size_t i = 0; i < r.points.size(); ++i) (labels[i] ? b : a).push_back(r.points[i]);
  CHECK(oracle::linearly_separable(a, b));
  for (std::size_t i = 401; i < r.kl_history.size(); ++i) REQUIRE(r.kl_history[i] <= r.kl_history[i - 1]);
  CHECK(r.final_kl <= r.kl_history.back());
  CHECK(r.final_kl == doctest::Approx(tsne_kl(r.affinities, r.points)).epsilon(1e-12));
  const TsneResult again = tsne_project(data, cfg);
  CHECK(again.points == r.points);
  cfg.seed = 4;
  CHECK(tsne_project(data, cfg).points != r.points);
}

TEST_CASE("t-SNE rejects oversized inputs") {
  PointSet big{std::vector<double>(5001 * 2, 0.0), 2};
  CHECK_THROWS_AS(tsne_project(big, TsneConfig{}), DomainError);
}

TEST_CASE("projection plots write a file and a legend per distinct label") {
  test::TempDir dir;
  const auto empty = render_projection({}, {}, dir.path() / "empty.png");
  CHECK(empty.empty());
  CHECK(std::filesystem::file_size(dir.path() / "empty.png") > 0);

  std::vector<std::array<double, 2>> pts;
  std::vector<PlotLabel> labels;
  for (int i = 0; i < 30; ++i) {
    pts.push_back({std::cos(i * 0.3) * i, std::sin(i * 0.3) * i});
    labels.push_back({i % 3, i % 2 ? Regime::night : Regime::day});
  }
  const auto legend = render_projection(pts, labels, dir.path() / "p.png");
  CHECK(legend.size() == 6);
  CHECK(std::filesystem::file_size(dir.path() / "p.png") > 0);
  const auto read = read_legend(legend_path(dir.path() / "p.png"));
  CHECK(read.size() == 6);
  long long total = 0;
  for (const auto& e : read) total += e.count;
  CHECK(total == 30);
  CHECK(class_color(0) != class_color(1));
  CHECK_THROWS_AS(render_projection(pts, std::span<const PlotLabel>(labels).first(3), dir.path() / "bad.png"), ShapeError);
}

TEST_CASE("average test error equals recomputation and groups by class") {
  const auto corpus = small_corpus();
  const auto pairs = generate_pairs(keys_of(corpus), {90.0, false});
  const ModelConfig mc;
  Predictor<float> model(mc, 2);
  VanillaAutoencoder<float> v(mc, 2);
  const auto targets = extract_embeddings(v, corpus);
  const EvalReport r = average_test_error(model, corpus, pairs, targets, {"x", 2, checkpoint_id(model)});
  REQUIRE(r.pairs.size() == pairs.size());
  long double lo = 0.0L, lt = 0.0L;
  for (const auto& p : r.pairs) {
    lo += p.loss.output;
    lt += p.loss.total;
    REQUIRE(p.loss.total == p.loss.embedding + p.loss.output);
  }
  CHECK(std::abs(r.average.output - static_cast<double>(lo / r.pairs.size())) <= 1e-12 * r.average.output);
  CHECK(std::abs(r.average.total - static_cast<double>(lt / r.pairs.size())) <= 1e-12 * r.average.total);
  CHECK(r.per_class.size() == 3);
  std::size_t n = 0;
  for (const auto& c : r.per_class) n += c.pairs;
  CHECK(n == pairs.size());
  CHECK(r.to_records() == average_test_error(model, corpus, pairs, targets, {"x", 2, checkpoint_id(model)}).to_records());
  CHECK(r.to_text().find("\n     all") != std::string::npos);
  CHECK_THROWS_AS(average_test_error(model, corpus, std::vector<ViewPair>{}, targets, {}), DomainError);
}

TEST_CASE("generate_class_corpus labels outputs and refuses a dead model") {
  const auto corpus = small_corpus(2, 8, 1);
  const ModelConfig mc;
  Predictor<float> model(mc, 3);
  const std::vector<ViewSample> seed{corpus[1]};
  const std::vector<Regime> day{Regime::day};
  const auto circle = pose_circle(5.0, day);
  REQUIRE(circle.size() == 72);
  const auto out = generate_class_corpus(model, seed, circle);
  REQUIRE(out.size() == 72);
  std::set<SampleKey> keys;
  for (std::size_t i = 0; i < out.size(); ++i) {
    REQUIRE(out[i].key.class_id == seed[0].key.class_id);
    REQUIRE(out[i].key.azimuth_deg == circle[i].azimuth_deg);
    keys.insert(out[i].key);
    for (float px : out[i].image.values()) REQUIRE((px >= -1.0f && px <= 1.0f));
  }
  CHECK(keys.size() == 72);
  CHECK(out[0].image != out[18].image);

  for (auto* p : model.parameters()) p->value.fill(0.0f);
  CHECK_THROWS_AS(generate_class_corpus(model, seed, circle), DomainError);
  Predictor<float> live(mc, 3);
  CHECK_THROWS_AS(generate_class_corpus(live, std::vector<ViewSample>{}, circle), DomainError);
  CHECK_THROWS_AS(generate_class_corpus(live, std::vector<ViewSample>{corpus[0], corpus[9]}, circle), DomainError);
}

TEST_CASE("embedding export, persistence and stage selection") {
  const auto corpus = small_corpus();
  Predictor<float> model(ModelConfig{}, 5);
  const std::vector<double> offsets{0.0};
  const auto records = export_embeddings(model, corpus, offsets);
  CHECK(records.size() == 2 * corpus.size());
  std::set<std::string> stages;
  for (const auto& r : records) {
    stages.insert(to_string(r.stage));
    REQUIRE(r.values.size() == 1024);
  }
  CHECK(stages == std::set<std::string>{"pre_fusion", "post_fusion"});
  const std::vector<double> two{0.0, 90.0};
  CHECK(export_embeddings(model, corpus, two).size() == 3 * corpus.size());

  test::TempDir dir;
  save_embedding_records(records, dir.path() / "e.csv");
  CHECK(load_embedding_records(dir.path() / "e.csv") == records);
  std::ifstream in(dir.path() / "e.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("class_id,day_night,stage,v0,v1,", 0) == 0);
  CHECK(header.substr(header.size() - 6) == ",v1023");

  const auto pre = select_stage(records, EmbeddingStage::pre_fusion, LabelKey::class_x_day_night);
  CHECK(pre.points.size() == corpus.size());
  CHECK(std::set<int>(pre.labels.begin(), pre.labels.end()).size() == 6);
  const auto cls = select_stage(records, EmbeddingStage::post_fusion, LabelKey::class_id);
  CHECK(std::set<int>(cls.labels.begin(), cls.labels.end()).size() == 3);
  const double s = embedding_silhouette(records, EmbeddingStage::post_fusion, LabelKey::class_id);
  CHECK((s >= -1.0 && s <= 1.0));
  CHECK(parse_stage("post_fusion") == EmbeddingStage::post_fusion);
  CHECK(parse_label_key("class_x_day_night") == LabelKey::class_x_day_night);
  CHECK_THROWS_AS(parse_stage("middle"), DomainError);
}

TEST_CASE("confusion matrix bookkeeping") {
  ConfusionMatrix m({0, 2, 5});
  m.add(0, 0);
  m.add(0, 2);
  m.add(2, 2);
  m.add(5, 5);
  m.add(5, 0);
  CHECK(m.total() == 5);
  CHECK(m.trace() == 3);
  CHECK(m.accuracy() == doctest::Approx(0.6));
  CHECK(m.recall(0) == 0.5);
  CHECK(m.row_sum(m.index_of(5)) == 2);
  CHECK(m.at(m.index_of(0), m.index_of(2)) == 1);
  CHECK_THROWS(m.add(3, 0));
  CHECK_THROWS_AS(ConfusionMatrix({1, 2}).accuracy(), DomainError);
  CHECK(m.to_records("t").find("confusion,t,5,0,1") != std::string::npos);
}

TEST_CASE("stratified split keeps every class on both sides") {
  const auto corpus = small_corpus(3, 8, 2);
  const auto s = stratified_split(corpus, 0.25, 1);
  CHECK(s.train.size() + s.test.size() == corpus.size());
  for (int c = 0; c < 3; ++c) {
    const auto count = [c](const std::vector<ViewSample>& v) {
      return std::count_if(v.begin(), v.end(), [c](const ViewSample& x) { return x.key.class_id == c; });
    };
    CHECK(count(s.test) == 4);
    CHECK(count(s.train) == 12);
  }
  CHECK_THROWS_AS(stratified_split(corpus, 1.5, 1), DomainError);
}

TEST_CASE("low-shot evaluation is a no-op when the substitute is the real data") {
  const auto corpus = small_corpus(3, 8, 2);
  const auto s = stratified_split(corpus, 0.25, 2);
  ClassifierConfig cc;
  cc.epochs = 2;
  std::vector<ViewSample> substitute;
  for (const auto& x : s.train)
    if (x.key.class_id == 1) substitute.push_back(x);
  std::reverse(substitute.begin(), substitute.end());
  const LowShotResult r = low_shot_eval(s.train, s.test, 1, substitute, cc, 7);
  CHECK(r.accuracy_substituted == r.accuracy_all_real);
  CHECK(r.substituted == r.all_real);
  for (int i = 0; i < r.all_real.size(); ++i) CHECK(r.all_real.row_sum(i) == 4);
  CHECK(r.generated_count == substitute.size());

  CHECK_THROWS_AS(low_shot_eval(s.train, s.test, 1, std::vector<ViewSample>{}, cc, 7), DomainError);
  CHECK_THROWS_AS(low_shot_eval(s.train, s.test, 1, std::vector<ViewSample>{s.train.front()}, cc, 7), DomainError);
  CHECK_THROWS_AS(low_shot_eval(s.train, s.test, 9, substitute, cc, 7), DomainError);
}

TEST_CASE("classifier learns a separable synthetic task") {
  const auto corpus = small_corpus(3, 24, 1);
  const auto s = stratified_split(corpus, 0.25, 3);
  ClassifierConfig cc;
  cc.epochs = 8;
  const ClassifierRun run = train_and_evaluate(s.train, s.test, cc, 1);
  CHECK(run.epoch_loss.size() == 8);
  CHECK(run.epoch_loss.back() < run.epoch_loss.front());
  CHECK(run.confusion.accuracy() > 1.0 / 3.0);
  const ClassifierRun again = train_and_evaluate(s.train, s.test, cc, 1);
  CHECK(again.confusion == run.confusion);
  CHECK(again.epoch_loss == run.epoch_loss);
}
