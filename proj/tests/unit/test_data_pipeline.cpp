#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "irview/errors.hpp"
#include "irview/data_pipeline.hpp"
#include "irview/image.hpp"
#include "irview/manifest.hpp"
#include "irview/png_io.hpp"
#include "irview/synth.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace irview;

namespace {

GrayImage8 flat_image(std::uint8_t v) { return {kImageSize, kImageSize, std::vector<std::uint8_t>(kImagePixels, v)}; }

double rad(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

TEST_CASE("normalize_image maps the byte range onto [-1, 1]") {
  const Raster black = normalize_image(flat_image(0)), white = normalize_image(flat_image(255));
  for (float v : black.values()) REQUIRE(v == -1.0f);
  for (float v : white.values()) REQUIRE(v == 1.0f);
  CHECK(normalize_image(flat_image(128)).values()[0] == doctest::Approx(128.0 / 127.5 - 1.0).epsilon(1e-7));
  CHECK(normalize_image(flat_image(128)).values()[0] == doctest::Approx(0.00392157).epsilon(1e-5));
}

TEST_CASE("normalize_image rejects a wrong raster size") {
  CHECK_THROWS_AS(normalize_image(GrayImage8{32, 32, std::vector<std::uint8_t>(32 * 32, 0)}), ShapeError);
  CHECK_THROWS_AS(normalize_image(GrayImage8{64, 64, std::vector<std::uint8_t>(10, 0)}), ShapeError);
}

TEST_CASE("denormalize inverts normalize on every byte level") {
  GrayImage8 img = flat_image(0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i % 256);
  CHECK(denormalize_image(normalize_image(img)) == img);
}

TEST_CASE("encode_pose examples") {
  const auto near = [](const PoseVector& p, std::array<double, 5> want) {
    for (int i = 0; i < 5; ++i) REQUIRE(p.v[i] == doctest::Approx(want[i]).epsilon(1e-12));
  };
  const PoseVector zero = encode_pose(0, 0, Regime::day);
  CHECK(zero.v[0] == 0.0);
  CHECK(zero.v[1] == 1.0);
  CHECK(zero.v[2] == 0.0);
  CHECK(zero.v[3] == 1.0);
  CHECK(zero.v[4] == 0.0);

  // Target 180, offset 90.
  const PoseVector q = encode_pose(90, 180, Regime::night);
  CHECK(std::abs(q.v[0]) < 1e-15);
  CHECK(q.v[1] == -1.0);
  CHECK(q.v[2] == 1.0);
  CHECK(std::abs(q.v[3]) < 1e-15);
  CHECK(q.v[4] == 1.0);

  const PoseVector half = encode_pose(0, 180, Regime::night);
  CHECK(half.v[3] == -1.0);
  CHECK(std::abs(half.v[2]) < 1e-15);

  near(encode_pose(350, 5, Regime::day), {std::sin(rad(5)), std::cos(rad(5)), std::sin(rad(15)), std::cos(rad(15)), 0.0});
}

TEST_CASE("encode_pose rejects azimuths outside [0, 360)") {
  CHECK_THROWS_AS(encode_pose(-1, 0, Regime::day), DomainError);
  CHECK_THROWS_AS(encode_pose(0, 360, Regime::day), DomainError);
  CHECK_THROWS_AS(encode_pose(std::nan(""), 0, Regime::day), DomainError);
}

TEST_CASE("encode_pose offset entries are invariant to full turns of the input azimuth") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = static_cast<double>(rng() % 72) * 5.0, b = static_cast<double>(rng() % 72) * 5.0;
    const int k = static_cast<int>(rng() % 5) - 2;
    const double shifted = std::fmod(a + 360.0 * k + 720.0, 360.0);
    const PoseVector p = encode_pose(a, b, Regime::night), s = encode_pose(shifted, b, Regime::night);
    REQUIRE(p.v[2] == doctest::Approx(s.v[2]).epsilon(1e-12));
    REQUIRE(p.v[3] == doctest::Approx(s.v[3]).epsilon(1e-12));
  }
}

TEST_CASE("angular_distance takes the short way round") {
  CHECK(angular_distance(350, 10) == doctest::Approx(20));
  CHECK(angular_distance(0, 180) == doctest::Approx(180));
  CHECK(angular_distance(90, 90) == 0.0);
}

namespace {

std::vector<SampleKey> circle(int classes, int views, double step, int regimes) {
  std::vector<SampleKey> keys;
  for (int c = 0; c < classes; ++c)
    for (int r = 0; r < regimes; ++r)
      for (int v = 0; v < views; ++v) keys.push_back({c, v * step, regime_from_flag(r), 1000.0});
  return keys;
}

}  // namespace

TEST_CASE("generate_pairs counting examples") {
  CHECK(generate_pairs(circle(3, 1, 5.0, 1), {360.0, false}).empty());
  CHECK(generate_pairs(circle(1, 4, 5.0, 1), {360.0, false}).size() == 12);
  CHECK(generate_pairs(std::vector<SampleKey>{}, {360.0, false}).empty());
  CHECK(generate_pairs(circle(1, 4, 5.0, 1), {4.0, false}).empty());
  // 72 views per class and regime at 5 degree spacing.
  CHECK(circle(1, 72, 5.0, 2).size() == 144);
}

TEST_CASE("generate_pairs matches the brute-force count and pair invariants") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int views = 4 + static_cast<int>(rng() % 30);
    const double step = 360.0 / views;
    std::vector<SampleKey> keys;
    std::vector<oracle::Key> okeys;
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 2; ++r)
        for (int v = 0; v < views; ++v)
          if (rng() % 4) {
            keys.push_back({c, v * step, regime_from_flag(r), 1000.0});
            okeys.push_back({c, v * step, r});
          }
    const double delta = step * static_cast<double>(1 + rng() % 6);
    const bool cross = rng() & 1;
    const auto pairs = generate_pairs(keys, {delta, cross});
    REQUIRE(pairs.size() == oracle::pair_count(okeys, delta, cross));
    for (const auto& p : pairs) {
      const SampleKey &a = keys[p.input], &b = keys[p.target];
      REQUIRE(p.input != p.target);
      REQUIRE(a.class_id == b.class_id);
      REQUIRE(angular_distance(a.azimuth_deg, b.azimuth_deg) <= delta + 1e-9);
      if (!cross) REQUIRE(a.regime == b.regime);
      REQUIRE(p.pose == encode_pose(a.azimuth_deg, b.azimuth_deg, b.regime));
    }
    const auto again = generate_pairs(keys, {delta, cross});
    for (std::size_t i = 0; i < pairs.size(); ++i) REQUIRE((pairs[i].input == again[i].input && pairs[i].target == again[i].target));
  }
}

TEST_CASE("split_train_test reproduces the 30k/10k split") {
  // 20 target groups of 100 views at 3.6 degrees; a 36 degree window gives 20 pairs per target.
  const auto keys = circle(20, 100, 3.6, 1);
  const auto pairs = generate_pairs(keys, {36.0, false});
  REQUIRE(pairs.size() == 40000);
  const auto split = split_train_test(pairs, 0.25, 1);
  CHECK(split.train.size() == 30000);
  CHECK(split.test.size() == 10000);

  std::set<std::size_t> train_targets, test_targets;
  for (const auto& p : split.train) train_targets.insert(p.target);
  for (const auto& p : split.test) test_targets.insert(p.target);
  for (std::size_t t : test_targets) REQUIRE(train_targets.count(t) == 0);

  const auto again = split_train_test(pairs, 0.25, 1);
  REQUIRE(again.test.size() == split.test.size());
  for (std::size_t i = 0; i < split.test.size(); ++i) REQUIRE(again.test[i].target == split.test[i].target);
  const auto other = split_train_test(pairs, 0.25, 2);
  bool differs = false;
  for (std::size_t i = 0; i < split.test.size() && !differs; ++i) differs = other.test[i].target != split.test[i].target;
  CHECK(differs);
}

TEST_CASE("split_train_test edge cases") {
  const auto empty = split_train_test(std::vector<ViewPair>{}, 0.25, 1);
  CHECK(empty.train.empty());
  CHECK(empty.test.empty());
  const auto pairs = generate_pairs(circle(1, 4, 5.0, 1), {360.0, false});
  CHECK_THROWS_AS(split_train_test(pairs, 0.0, 1), DomainError);
  CHECK_THROWS_AS(split_train_test(pairs, 1.0, 1), DomainError);
}

TEST_CASE("synth corpus counts, determinism and view asymmetry") {
  SynthConfig sc;  // 8 classes, 72 views, 2 regimes
  const auto corpus = synth_corpus(sc);
  CHECK(corpus.size() == 1152);
  std::set<SampleKey> keys;
  for (const auto& s : corpus) keys.insert(s.key);
  CHECK(keys.size() == corpus.size());
  for (int c = 0; c < sc.n_classes; ++c)
    for (Regime r : {Regime::day, Regime::night}) REQUIRE(render_view(sc, c, 0, r) != render_view(sc, c, 36, r));
  CHECK(render_view(sc, 3, 10, Regime::night) == render_view(sc, 3, 10, Regime::night));
  CHECK(render_view(sc, 3, 10, Regime::day) != render_view(sc, 3, 10, Regime::night));
  SynthConfig other = sc;
  other.seed = 2;
  CHECK(render_view(other, 3, 10, Regime::day) != render_view(sc, 3, 10, Regime::day));
}

TEST_CASE("synth config validation") {
  SynthConfig sc;
  sc.n_classes = 1;
  CHECK_THROWS_AS(sc.validate(), DomainError);
  sc.n_classes = 2;
  sc.views_per_circle = 7;
  CHECK_THROWS_AS(sc.validate(), DomainError);
}

TEST_CASE("synth_generate writes a manifest that validates and round-trips") {
  test::TempDir dir;
  SynthConfig sc;
  sc.n_classes = 2;
  sc.views_per_circle = 8;
  const DatasetManifest written = synth_generate(sc, dir.path());
  CHECK(written.records.size() == 32);
  const DatasetManifest loaded = load_manifest(dir.path() / "manifest.csv");
  CHECK(loaded.records.size() == 32);
  CHECK(loaded.angular_step_deg == 45.0);
  CHECK_NOTHROW(validate_manifest(loaded, true));
  const auto corpus = load_corpus(loaded);
  const auto memory = synth_corpus(sc);
  REQUIRE(corpus.size() == memory.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    REQUIRE(corpus[i].key == memory[i].key);
    REQUIRE(corpus[i].image == memory[i].image);
  }
  CHECK(generate_pairs(loaded, {90.0, false}).size() == generate_pairs(keys_of(corpus), {90.0, false}).size());
  CHECK_THROWS(generate_pairs(loaded, {50.0, false}));
}

TEST_CASE("manifest validation rejects duplicates and misaligned azimuths") {
  DatasetManifest m;
  m.angular_step_deg = 5.0;
  m.records.push_back({"a.png", {0, 10.0, Regime::day, 1000.0}});
  m.records.push_back({"b.png", {0, 10.0, Regime::day, 1000.0}});
  CHECK_THROWS_AS(validate_manifest(m, false), ManifestError);
  m.records.back().key.azimuth_deg = 12.0;
  CHECK_THROWS_AS(validate_manifest(m, false), ManifestError);
  m.records.back().key.azimuth_deg = 15.0;
  CHECK_NOTHROW(validate_manifest(m, false));
  CHECK_THROWS_AS(validate_manifest(m, true), ManifestError);
}

TEST_CASE("png round trip") {
  test::TempDir dir;
  GrayImage8 img = flat_image(0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>((i * 7) % 256);
  write_gray_png(dir.path() / "x.png", img);
  CHECK(read_gray_png(dir.path() / "x.png") == img);
  CHECK_THROWS_AS(read_gray_png(dir.path() / "missing.png"), IoError);
}
