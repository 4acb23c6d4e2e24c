#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "irview/errors.hpp"
#include "irview/losses.hpp"
#include "irview/model.hpp"
#include "irview/optimizer.hpp"
#include "oracles.hpp"

using namespace irview;

namespace {

template <typename T>
void zero_all(const ParameterList<T>& params) {
  for (auto* p : params) p->value.fill(T{0});
}

Tensor<float> random_images(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<float> t({n, 1, 64, 64});
  init_uniform(t, 1.0, rng);
  return t;
}

Tensor<float> some_poses(int n) {
  std::vector<PoseVector> poses;
  for (int i = 0; i < n; ++i) poses.push_back(encode_pose(5.0 * i, std::fmod(5.0 * (3 * i + 7), 360.0), i % 2 ? Regime::night : Regime::day));
  return poses_to_batch<float>(poses);
}

std::vector<double> to_vector(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("default architecture dimensions and parameter count") {
  const ModelConfig mc;
  CHECK(mc.latent_size() == 4);
  CHECK(mc.embedding_dim() == 1024);
  CHECK(mc.fused_width() == 1088);
  CHECK(mc.deconv_filters() == std::vector<int>{64, 64, 32, 32});
  Predictor<float> a(mc, 1), b(mc, 2);
  CHECK(parameter_count(a.parameters()) == 2348865);
  CHECK(parameter_count(b.parameters()) == parameter_count(a.parameters()));
  VanillaAutoencoder<float> v(mc, 1);
  CHECK(parameter_count(v.parameters()) == 2348865 - 1088 * 1024 - 1024 - 1024 * 1024 - 1024 - 5 * 64 - 64);
}

TEST_CASE("model config validation") {
  ModelConfig mc;
  mc.input_size = 32;
  CHECK_THROWS_AS(mc.validate(), DomainError);
  mc = {};
  mc.fusion_fc_dims = {1024, 512};
  CHECK_THROWS_AS(mc.validate(), DomainError);
  mc = {};
  mc.conv_kernels = {5, 3, 3, 4};
  CHECK_THROWS_AS(mc.validate(), DomainError);
  mc = {};
  CHECK(ModelConfig::from_key_values(mc.to_key_values()) == mc);
}

TEST_CASE("shape chain and output range") {
  const ModelConfig mc;
  Predictor<float> model(mc, 4);
  Predictor<float>::Cache cache;
  const auto out = model.forward(random_images(3, 1), some_poses(3), &cache);
  CHECK(out.pre_fusion.shape() == Shape{3, 1024});
  CHECK(out.post_fusion.shape() == Shape{3, 1024});
  CHECK(out.prediction.shape() == Shape{3, 1, 64, 64});
  CHECK(cache.fusion.concat.shape() == Shape{3, 1088});
  std::vector<int> down, up;
  for (const auto& a : cache.encoder.activations) down.push_back(a.dim(2));
  for (std::size_t i = 0; i + 1 < cache.decoder.activations.size(); ++i) up.push_back(cache.decoder.activations[i].dim(2));
  CHECK(down == std::vector<int>{64, 32, 16, 8, 4});
  CHECK(up.front() == 4);
  CHECK(std::vector<int>(up.begin(), up.begin() + 5) == std::vector<int>{4, 8, 16, 32, 64});
  for (float v : out.prediction.values()) REQUIRE((v > -1.0f && v < 1.0f));
  CHECK(model.pose_branch(some_poses(3)).shape() == Shape{3, 64});
}

TEST_CASE("shape errors") {
  const ModelConfig mc;
  Predictor<float> model(mc, 1);
  CHECK_THROWS_AS(model.encode(Tensor<float>({1, 1, 32, 32})), ShapeError);
  CHECK_THROWS_AS(model.decode(Tensor<float>({1, 1000})), ShapeError);
  CHECK_THROWS_AS(model.fuse(Tensor<float>({1, 1024}), Tensor<float>({1, 63})), ShapeError);
  CHECK_THROWS_AS(model.forward(random_images(2, 1), some_poses(3)), ShapeError);
}

TEST_CASE("forward passes are pure") {
  const ModelConfig mc;
  Predictor<float> model(mc, 9);
  const auto x = random_images(2, 5);
  const auto p = some_poses(2);
  const auto a = model.forward(x, p), b = model.forward(x, p);
  CHECK(a.pre_fusion == b.pre_fusion);
  CHECK(a.post_fusion == b.post_fusion);
  CHECK(a.prediction == b.prediction);
  Predictor<float> same(mc, 9);
  CHECK(same.forward(x, p).prediction == a.prediction);
  VanillaAutoencoder<float> v(mc, 9);
  CHECK(v.forward(x).reconstruction == v.forward(x).reconstruction);
  CHECK(v.forward(x).embedding == v.encode(x));
}

TEST_CASE("zero weights propagate zeros") {
  const ModelConfig mc;
  Predictor<float> model(mc, 1);
  zero_all(model.parameters());
  const auto out = model.forward(random_images(2, 3), some_poses(2));
  const Tensor<float> pose = model.pose_branch(some_poses(2));
  const Tensor<float> decoded = model.decode(Tensor<float>({1, 1024}));
  VanillaAutoencoder<float> vanilla(mc, 1);
  zero_all(vanilla.parameters());
  const Tensor<float> embedding = vanilla.encode(random_images(1, 4));
  for (const auto* t : {&out.pre_fusion, &out.post_fusion, &out.prediction, &pose, &decoded, &embedding})
    for (float v : t->values()) REQUIRE(v == 0.0f);
}

TEST_CASE("identity-like pose weights pass positive pose entries through") {
  const ModelConfig mc;
  Predictor<double> model(mc, 1);
  auto params = model.parameters();
  Parameter<double>* w = nullptr;
  for (auto* p : params) {
    if (p->name.rfind("pose.", 0) == 0) p->value.fill(0.0);
    if (p->name == "pose.fc.weight") w = p;
  }
  REQUIRE(w != nullptr);
  REQUIRE(w->value.shape() == Shape{64, 5});
  for (int i = 0; i < 5; ++i) w->value[static_cast<std::size_t>(i * 5 + i)] = 1.0;
  const PoseVector pose = encode_pose(10, 40, Regime::night);  // every entry positive
  const auto out = model.pose_branch(poses_to_batch<double>(std::span<const PoseVector>(&pose, 1)));
  for (int i = 0; i < 5; ++i) CHECK(out[static_cast<std::size_t>(i)] == pose.v[static_cast<std::size_t>(i)]);
  for (int i = 5; i < 64; ++i) CHECK(out[static_cast<std::size_t>(i)] == 0.0);
}

TEST_CASE("fusion is invariant to a joint permutation of pose features and weight columns") {
  const ModelConfig mc;
  Predictor<double> model(mc, 2);
  std::mt19937_64 rng(8);
  Tensor<double> e({2, 1024}), p({2, 64});
  init_uniform(e, 1.0, rng);
  init_uniform(p, 1.0, rng);
  const Tensor<double> before = model.fuse(e, p);

  std::vector<int> perm(64);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor<double> pp = p;
  for (int b = 0; b < 2; ++b)
    for (int j = 0; j < 64; ++j) pp[static_cast<std::size_t>(b * 64 + j)] = p[static_cast<std::size_t>(b * 64 + perm[j])];
  Tensor<double>& w = model.fusion().layer(0).weight().value;
  REQUIRE(w.shape() == Shape{1024, 1088});
  const Tensor<double> original = w;
  for (int o = 0; o < 1024; ++o)
    for (int j = 0; j < 64; ++j)
      w[static_cast<std::size_t>(o * 1088 + 1024 + j)] = original[static_cast<std::size_t>(o * 1088 + 1024 + perm[j])];
  const Tensor<double> after = model.fuse(e, pp);
  CHECK(oracle::relative_error(before.values(), after.values()) < 1e-13);
  CHECK(Fusion<double>::concat(e, p).shape() == Shape{2, 1088});
}

TEST_CASE("conv2d matches the direct oracle on both code paths") {
  std::mt19937_64 rng(1);
  for (auto [cin, cout, k, s] : {std::array{3, 4, 3, 2}, std::array{2, 3, 5, 2}, std::array{3, 1, 3, 1},
                                  std::array{2, 6, 3, 1}, std::array{1, 2, 5, 1}}) {
    Conv2d<double> conv("c", cin, cout, k, s);
    init_uniform(conv.weight().value, 1.0, rng);
    init_uniform(conv.bias().value, 1.0, rng);
    Tensor<double> x({2, cin, 9, 8});
    init_uniform(x, 1.0, rng);
    const auto y = conv.forward(x);
    const auto ref = oracle::conv2d(to_vector(x), 2, cin, 9, 8, to_vector(conv.weight().value),
                                    to_vector(conv.bias().value), cout, k, s);
    CHECK(y.shape() == Shape{2, cout, conv.output_size(9), conv.output_size(8)});
    CHECK(oracle::relative_error(y.values(), ref) < 1e-14);
  }
}

TEST_CASE("transposed conv matches the scatter oracle and doubles the side") {
  std::mt19937_64 rng(2);
  for (auto [cin, cout, k] : {std::array{3, 2, 3}, std::array{2, 3, 5}, std::array{64, 64, 3}}) {
    ConvTranspose2d<double> deconv("d", cin, cout, k, 2);
    init_uniform(deconv.weight().value, 1.0, rng);
    init_uniform(deconv.bias().value, 1.0, rng);
    Tensor<double> x({2, cin, 4, 4});
    init_uniform(x, 1.0, rng);
    const auto y = deconv.forward(x);
    CHECK(y.shape() == Shape{2, cout, 8, 8});
    const auto ref = oracle::conv_transpose2d(to_vector(x), 2, cin, 4, 4, to_vector(deconv.weight().value),
                                              to_vector(deconv.bias().value), cout, k, 2);
    CHECK(oracle::relative_error(y.values(), ref) < 1e-14);
  }
}

TEST_CASE("transposed conv is the adjoint of the strided conv") {
  std::mt19937_64 rng(3);
  Conv2d<double> conv("c", 3, 2, 3, 2);
  ConvTranspose2d<double> deconv("d", 2, 3, 3, 2);
  init_uniform(conv.weight().value, 1.0, rng);
  REQUIRE(deconv.weight().value.shape() == Shape{2, 3, 3, 3});
  // conv weight (out=2, in=3); the adjoint reads it as (in=2, out=3).
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < 3; ++i)
      for (int t = 0; t < 9; ++t)
        deconv.weight().value[static_cast<std::size_t>((o * 3 + i) * 9 + t)] = conv.weight().value[static_cast<std::size_t>((o * 3 + i) * 9 + t)];
  Tensor<double> x({1, 3, 8, 8}), y({1, 2, 4, 4});
  init_uniform(x, 1.0, rng);
  init_uniform(y, 1.0, rng);
  const double lhs = gradcheck::dot(conv.forward(x), y);
  const double rhs = gradcheck::dot(x, deconv.forward(y));
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
}

TEST_CASE("dense and activations match direct evaluation") {
  std::mt19937_64 rng(4);
  Dense<double> fc("f", 7, 3);
  init_uniform(fc.weight().value, 1.0, rng);
  init_uniform(fc.bias().value, 1.0, rng);
  Tensor<double> x({2, 7});
  init_uniform(x, 1.0, rng);
  const auto y = fc.forward(x);
  for (int b = 0; b < 2; ++b)
    for (int o = 0; o < 3; ++o) {
      double s = fc.bias().value[static_cast<std::size_t>(o)];
      for (int i = 0; i < 7; ++i) s += fc.weight().value[static_cast<std::size_t>(o * 7 + i)] * x[static_cast<std::size_t>(b * 7 + i)];
      CHECK(y[static_cast<std::size_t>(b * 3 + o)] == doctest::Approx(s).epsilon(1e-14));
    }
  Tensor<double> a({4}, std::vector<double>{-2.0, -0.5, 0.0, 3.0});
  leaky_relu_inplace(a, 0.2);
  CHECK(a[0] == doctest::Approx(-0.4));
  CHECK(a[1] == doctest::Approx(-0.1));
  CHECK(a[2] == 0.0);
  CHECK(a[3] == 3.0);
  Tensor<double> t({2}, std::vector<double>{0.0, 0.5});
  tanh_inplace(t);
  CHECK(t[0] == 0.0);
  CHECK(t[1] == doctest::Approx(std::tanh(0.5)));
}

TEST_CASE("layer gradients match central differences") {
  for (const auto& r : gradcheck::layer_checks(21)) {
    INFO(r.name);
    CHECK(r.rel_error < 1e-4);
  }
}

TEST_CASE("predictor gradients match central differences in both loss modes") {
  for (double w : {1.0, 0.0})
    for (const auto& r : gradcheck::predictor_check(w, 5)) {
      INFO(r.name << " weight " << w);
      CHECK(r.rel_error < 1e-4);
    }
}

TEST_CASE("mse_only and guided gradients coincide when the fused latent equals its target") {
  Predictor<double> model(gradcheck::tiny_config(), 3);
  std::mt19937_64 rng(6);
  const auto images = gradcheck::random_tensor({2, 1, 64, 64}, rng);
  std::vector<PoseVector> poses{encode_pose(0, 30, Regime::day), encode_pose(45, 300, Regime::night)};
  const auto pose_batch = poses_to_batch<double>(poses);
  const auto target_image = gradcheck::random_tensor({2, 1, 64, 64}, rng);
  const Tensor<double> e2 = model.forward(images, pose_batch).post_fusion;

  const auto params = model.parameters();
  const auto gradients = [&](bool guided) {
    zero_grads(params);
    Predictor<double>::Cache cache;
    const auto o = model.forward(images, pose_batch, &cache);
    model.backward(cache, guided ? mse_gradient(o.post_fusion, e2) : Tensor<double>(), mse_gradient(o.prediction, target_image));
    std::vector<std::vector<double>> g;
    for (auto* p : params) g.emplace_back(p->grad.values().begin(), p->grad.values().end());
    return g;
  };
  CHECK(gradients(true) == gradients(false));

  // Finite differences of both objectives agree at this point too.
  const auto objective = [&](double w) {
    return [&, w] {
      const auto o = model.forward(images, pose_batch);
      return w * embedding_loss(o.post_fusion, e2) + output_loss(o.prediction, target_image);
    };
  };
  auto* fc = params[params.size() / 2];
  const auto guided = oracle::numeric_gradient(fc->value.values(), objective(1.0));
  const auto plain = oracle::numeric_gradient(fc->value.values(), objective(0.0));
  CHECK(oracle::relative_error(guided, plain) < 1e-6);
}

TEST_CASE("adam first step moves each weight by the learning rate against its gradient sign") {
  Parameter<float> p("p", {3});
  p.value.fill(1.0f);
  p.grad[0] = 2.0f;
  p.grad[1] = -0.5f;
  p.grad[2] = 0.0f;
  Adam<float> adam({&p});
  adam.step(1e-3);
  CHECK(p.value[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(1.0 + 1e-3).epsilon(1e-6));
  CHECK(p.value[2] == 1.0f);
  CHECK(adam.steps() == 1);
}

TEST_CASE("batch helpers round trip images") {
  std::vector<float> values(kImagePixels);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(i % 200) / 100.0f - 1.0f;
  const std::vector<Raster> rasters{Raster(values), Raster()};
  const auto batch = images_to_batch<float>(std::span<const Raster>(rasters));
  CHECK(batch.shape() == Shape{2, 1, 64, 64});
  CHECK(batch_image(batch, 0) == rasters[0]);
  CHECK(batch_image(batch, 1) == rasters[1]);
}
