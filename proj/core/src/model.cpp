#include "irview/model.hpp"

#include <cmath>
#include <random>

#include "irview/errors.hpp"

namespace irview {

namespace {

// Kaiming-uniform for a leaky-relu with the given slope; biases start at zero.
template <typename Layer>
void init_layer(Layer& layer, double slope, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * layer.fan_in()));
  init_uniform(layer.weight().value, bound, rng);
  layer.bias().value.fill(0);
}

std::string layer_name(const char* prefix, std::size_t i) { return std::string(prefix) + std::to_string(i + 1); }

// (B, C, H, W) -> (B, H*W*C) with channel fastest.
template <typename T>
Tensor<T> flatten_hwc(const Tensor<T>& x) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out({b, h * w * c});
  for (int n = 0; n < b; ++n)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h * w; ++i)
        out[(static_cast<std::size_t>(n) * h * w + i) * c + ch] = x[(static_cast<std::size_t>(n) * c + ch) * h * w + i];
  return out;
}

template <typename T>
Tensor<T> unflatten_hwc(const Tensor<T>& x, int c, int h, int w) {
  const int b = x.dim(0);
  require_shape(x, {b, h * w * c}, "unflatten");
  Tensor<T> out({b, c, h, w});
  for (int n = 0; n < b; ++n)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h * w; ++i)
        out[(static_cast<std::size_t>(n) * c + ch) * h * w + i] = x[(static_cast<std::size_t>(n) * h * w + i) * c + ch];
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// ModelConfig

int ModelConfig::latent_size() const {
  int size = input_size;
  for (std::size_t i = 0; i < conv_filters.size(); ++i) size /= conv_stride;
  return size;
}

std::vector<int> ModelConfig::deconv_filters() const { return {conv_filters.rbegin(), conv_filters.rend()}; }

void ModelConfig::validate() const {
  if (input_size != kImageSize) throw DomainError("model: input size must be 64, got " + std::to_string(input_size));
  if (conv_filters.empty() || conv_filters.size() != conv_kernels.size())
    throw DomainError("model: conv_filters and conv_kernels must be non-empty and equally long");
  if (deconv_kernels.size() != conv_filters.size())
    throw DomainError("model: deconv_kernels must have one entry per conv layer");
  if (conv_stride < 1) throw DomainError("model: conv_stride must be positive");
  int size = input_size;
  for (std::size_t i = 0; i < conv_filters.size(); ++i) {
    if (conv_filters[i] < 1 || conv_kernels[i] < 1 || conv_kernels[i] % 2 == 0)
      throw DomainError("model: filters must be positive and kernels odd");
    if (size % conv_stride != 0) throw DomainError("model: input size not divisible through the conv stack");
    size /= conv_stride;
  }
  for (int k : deconv_kernels)
    if (k < 1 || k % 2 == 0) throw DomainError("model: deconv kernels must be odd");
  if (projection_kernel < 1 || projection_kernel % 2 == 0) throw DomainError("model: projection kernel must be odd");
  if (pose_fc_dim < 1) throw DomainError("model: pose_fc_dim must be positive");
  if (fusion_fc_dims.empty() || fusion_fc_dims.back() != embedding_dim())
    throw DomainError("model: last fusion width must equal the embedding dim (" + std::to_string(embedding_dim()) +
                      ")");
  if (!(leaky_slope > 0.0)) throw DomainError("model: leaky_slope must be > 0");
}

KeyValueConfig ModelConfig::to_key_values() const {
  KeyValueConfig kv;
  kv.set("conv_filters", conv_filters);
  kv.set("conv_kernels", conv_kernels);
  kv.set("conv_stride", conv_stride);
  kv.set("deconv_kernels", deconv_kernels);
  kv.set("pose_fc_dim", pose_fc_dim);
  kv.set("fusion_fc_dims", fusion_fc_dims);
  kv.set("projection_kernel", projection_kernel);
  kv.set("leaky_slope", leaky_slope);
  kv.set("input_size", input_size);
  return kv;
}

ModelConfig ModelConfig::from_key_values(const KeyValueConfig& kv) {
  ModelConfig c;
  c.conv_filters = kv.get_int_list("conv_filters", c.conv_filters);
  c.conv_kernels = kv.get_int_list("conv_kernels", c.conv_kernels);
  c.conv_stride = static_cast<int>(kv.get_int("conv_stride", c.conv_stride));
  c.deconv_kernels = kv.get_int_list("deconv_kernels", c.deconv_kernels);
  c.pose_fc_dim = static_cast<int>(kv.get_int("pose_fc_dim", c.pose_fc_dim));
  c.fusion_fc_dims = kv.get_int_list("fusion_fc_dims", c.fusion_fc_dims);
  c.projection_kernel = static_cast<int>(kv.get_int("projection_kernel", c.projection_kernel));
  c.leaky_slope = kv.get_double("leaky_slope", c.leaky_slope);
  c.input_size = static_cast<int>(kv.get_int("input_size", c.input_size));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------------------------
// Encoder

template <typename T>
Encoder<T>::Encoder(const ModelConfig& config) : slope_(static_cast<T>(config.leaky_slope)) {
  int in = 1;
  for (std::size_t i = 0; i < config.conv_filters.size(); ++i) {
    convs_.emplace_back(layer_name("encoder.conv", i), in, config.conv_filters[i], config.conv_kernels[i],
                        config.conv_stride);
    in = config.conv_filters[i];
  }
}

template <typename T>
Tensor<T> Encoder<T>::forward(const Tensor<T>& images, Cache* cache) const {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != kImageSize || images.dim(3) != kImageSize)
    throw ShapeError("encode: expected (batch,1,64,64), got " + shape_string(images.shape()));
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(images);
  }
  Tensor<T> h = images;
  for (const auto& conv : convs_) {
    h = conv.forward(h);
    leaky_relu_inplace(h, slope_);
    if (cache) cache->activations.push_back(h);
  }
  return flatten_hwc(h);
}

template <typename T>
Tensor<T> Encoder<T>::backward(const Cache& cache, const Tensor<T>& d_embedding, bool need_input_grad) {
  const Tensor<T>& top = cache.activations.back();
  Tensor<T> d = unflatten_hwc(d_embedding, top.dim(1), top.dim(2), top.dim(3));
  for (std::size_t i = convs_.size(); i-- > 0;) {
    leaky_relu_backward(cache.activations[i + 1], d, slope_);
    d = convs_[i].backward(cache.activations[i], d, i > 0 || need_input_grad);
  }
  return d;
}

template <typename T>
void Encoder<T>::collect(ParameterList<T>& out) {
  for (auto& c : convs_) c.collect(out);
}

template <typename T>
std::vector<int> Encoder<T>::stage_sizes(int input_size) const {
  std::vector<int> sizes{input_size};
  for (const auto& c : convs_) sizes.push_back(c.output_size(sizes.back()));
  return sizes;
}

// ---------------------------------------------------------------------------------------------
// PoseBranch

template <typename T>
PoseBranch<T>::PoseBranch(const ModelConfig& config)
    : fc_("pose.fc", PoseVector::kSize, config.pose_fc_dim), slope_(static_cast<T>(config.leaky_slope)) {}

template <typename T>
Tensor<T> PoseBranch<T>::forward(const Tensor<T>& poses, Cache* cache) const {
  Tensor<T> y = fc_.forward(poses);
  leaky_relu_inplace(y, slope_);
  if (cache) {
    cache->input = poses;
    cache->output = y;
  }
  return y;
}

template <typename T>
void PoseBranch<T>::backward(const Cache& cache, const Tensor<T>& d_out) {
  Tensor<T> d = d_out;
  leaky_relu_backward(cache.output, d, slope_);
  fc_.backward(cache.input, d, false);
}

template <typename T>
void PoseBranch<T>::collect(ParameterList<T>& out) {
  fc_.collect(out);
}

// ---------------------------------------------------------------------------------------------
// Fusion

template <typename T>
Fusion<T>::Fusion(const ModelConfig& config)
    : embedding_dim_(config.embedding_dim()),
      pose_dim_(config.pose_fc_dim),
      slope_(static_cast<T>(config.leaky_slope)) {
  int in = config.fused_width();
  for (std::size_t i = 0; i < config.fusion_fc_dims.size(); ++i) {
    fcs_.emplace_back(layer_name("fusion.fc", i), in, config.fusion_fc_dims[i]);
    in = config.fusion_fc_dims[i];
  }
}

template <typename T>
Tensor<T> Fusion<T>::concat(const Tensor<T>& embedding, const Tensor<T>& pose_features) {
  if (embedding.rank() != 2 || pose_features.rank() != 2 || embedding.dim(0) != pose_features.dim(0))
    throw ShapeError("fuse: expected (batch,E) and (batch,P), got " + shape_string(embedding.shape()) + " and " +
                     shape_string(pose_features.shape()));
  const int b = embedding.dim(0), e = embedding.dim(1), p = pose_features.dim(1);
  Tensor<T> out({b, e + p});
  for (int n = 0; n < b; ++n) {
    std::copy_n(embedding.data() + static_cast<std::size_t>(n) * e, e, out.data() + static_cast<std::size_t>(n) * (e + p));
    std::copy_n(pose_features.data() + static_cast<std::size_t>(n) * p, p,
                out.data() + static_cast<std::size_t>(n) * (e + p) + e);
  }
  return out;
}

template <typename T>
Tensor<T> Fusion<T>::forward(const Tensor<T>& embedding, const Tensor<T>& pose_features, Cache* cache) const {
  if (embedding.rank() != 2 || embedding.dim(1) != embedding_dim_)
    throw ShapeError("fuse: embedding must be (batch," + std::to_string(embedding_dim_) + "), got " +
                     shape_string(embedding.shape()));
  if (pose_features.rank() != 2 || pose_features.dim(1) != pose_dim_)
    throw ShapeError("fuse: pose features must be (batch," + std::to_string(pose_dim_) + "), got " +
                     shape_string(pose_features.shape()));
  Tensor<T> h = concat(embedding, pose_features);
  if (cache) {
    cache->concat = h;
    cache->outputs.clear();
  }
  for (const auto& fc : fcs_) {
    h = fc.forward(h);
    leaky_relu_inplace(h, slope_);
    if (cache) cache->outputs.push_back(h);
  }
  return h;
}

template <typename T>
typename Fusion<T>::Grads Fusion<T>::backward(const Cache& cache, const Tensor<T>& d_out) {
  Tensor<T> d = d_out;
  for (std::size_t i = fcs_.size(); i-- > 0;) {
    leaky_relu_backward(cache.outputs[i], d, slope_);
    d = fcs_[i].backward(i == 0 ? cache.concat : cache.outputs[i - 1], d);
  }
  const int b = d.dim(0);
  Grads g{Tensor<T>({b, embedding_dim_}), Tensor<T>({b, pose_dim_})};
  const int w = embedding_dim_ + pose_dim_;
  for (int n = 0; n < b; ++n) {
    std::copy_n(d.data() + static_cast<std::size_t>(n) * w, embedding_dim_,
                g.d_embedding.data() + static_cast<std::size_t>(n) * embedding_dim_);
    std::copy_n(d.data() + static_cast<std::size_t>(n) * w + embedding_dim_, pose_dim_,
                g.d_pose.data() + static_cast<std::size_t>(n) * pose_dim_);
  }
  return g;
}

template <typename T>
void Fusion<T>::collect(ParameterList<T>& out) {
  for (auto& fc : fcs_) fc.collect(out);
}

// ---------------------------------------------------------------------------------------------
// Decoder

template <typename T>
Decoder<T>::Decoder(const ModelConfig& config)
    : latent_size_(config.latent_size()),
      latent_channels_(config.latent_channels()),
      slope_(static_cast<T>(config.leaky_slope)) {
  const auto filters = config.deconv_filters();
  int in = latent_channels_;
  for (std::size_t i = 0; i < filters.size(); ++i) {
    deconvs_.emplace_back(layer_name("decoder.deconv", i), in, filters[i], config.deconv_kernels[i],
                          config.conv_stride);
    in = filters[i];
  }
  projection_ = Conv2d<T>("decoder.projection", in, 1, config.projection_kernel, 1);
}

template <typename T>
Tensor<T> Decoder<T>::forward(const Tensor<T>& latent, Cache* cache) const {
  const int dim = latent_size_ * latent_size_ * latent_channels_;
  if (latent.rank() != 2 || latent.dim(1) != dim)
    throw ShapeError("decode: expected (batch," + std::to_string(dim) + "), got " + shape_string(latent.shape()));
  Tensor<T> h = unflatten_hwc(latent, latent_channels_, latent_size_, latent_size_);
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(h);
  }
  for (const auto& d : deconvs_) {
    h = d.forward(h);
    leaky_relu_inplace(h, slope_);
    if (cache) cache->activations.push_back(h);
  }
  h = projection_.forward(h);
  tanh_inplace(h);
  if (cache) cache->activations.push_back(h);
  return h;
}

template <typename T>
Tensor<T> Decoder<T>::backward(const Cache& cache, const Tensor<T>& d_output) {
  const auto& acts = cache.activations;
  Tensor<T> d = d_output;
  tanh_backward(acts.back(), d);
  d = projection_.backward(acts[acts.size() - 2], d);
  for (std::size_t i = deconvs_.size(); i-- > 0;) {
    leaky_relu_backward(acts[i + 1], d, slope_);
    d = deconvs_[i].backward(acts[i], d);
  }
  return flatten_hwc(d);
}

template <typename T>
void Decoder<T>::collect(ParameterList<T>& out) {
  for (auto& d : deconvs_) d.collect(out);
  projection_.collect(out);
}

template <typename T>
std::vector<int> Decoder<T>::stage_sizes() const {
  std::vector<int> sizes{latent_size_};
  for (const auto& d : deconvs_) sizes.push_back(d.output_size(sizes.back()));
  return sizes;
}

// ---------------------------------------------------------------------------------------------
// Initialization

template <typename T>
void Encoder<T>::initialize(std::mt19937_64& rng) {
  for (auto& c : convs_) init_layer(c, static_cast<double>(slope_), rng);
}

template <typename T>
void PoseBranch<T>::initialize(std::mt19937_64& rng) {
  init_layer(fc_, static_cast<double>(slope_), rng);
}

template <typename T>
void Fusion<T>::initialize(std::mt19937_64& rng) {
  for (auto& fc : fcs_) init_layer(fc, static_cast<double>(slope_), rng);
}

template <typename T>
void Decoder<T>::initialize(std::mt19937_64& rng) {
  for (auto& d : deconvs_) init_layer(d, static_cast<double>(slope_), rng);
  init_layer(projection_, 1.0, rng);  // feeds tanh
}

// ---------------------------------------------------------------------------------------------
// Networks

template <typename T>
VanillaAutoencoder<T>::VanillaAutoencoder(const ModelConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  config_.validate();
  encoder_ = Encoder<T>(config_);
  decoder_ = Decoder<T>(config_);
  std::mt19937_64 rng(seed);
  encoder_.initialize(rng);
  decoder_.initialize(rng);
}

template <typename T>
typename VanillaAutoencoder<T>::Output VanillaAutoencoder<T>::forward(const Tensor<T>& images, Cache* cache) const {
  Output out;
  out.embedding = encoder_.forward(images, cache ? &cache->encoder : nullptr);
  out.reconstruction = decoder_.forward(out.embedding, cache ? &cache->decoder : nullptr);
  return out;
}

template <typename T>
void VanillaAutoencoder<T>::backward(const Cache& cache, const Tensor<T>& d_reconstruction) {
  const Tensor<T> d_embedding = decoder_.backward(cache.decoder, d_reconstruction);
  encoder_.backward(cache.encoder, d_embedding);
}

template <typename T>
ParameterList<T> VanillaAutoencoder<T>::parameters() {
  ParameterList<T> out;
  encoder_.collect(out);
  decoder_.collect(out);
  return out;
}

template <typename T>
Predictor<T>::Predictor(const ModelConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  encoder_ = Encoder<T>(config_);
  pose_ = PoseBranch<T>(config_);
  fusion_ = Fusion<T>(config_);
  decoder_ = Decoder<T>(config_);
  std::mt19937_64 rng(seed);
  encoder_.initialize(rng);
  pose_.initialize(rng);
  fusion_.initialize(rng);
  decoder_.initialize(rng);
}

template <typename T>
typename Predictor<T>::Output Predictor<T>::forward(const Tensor<T>& images, const Tensor<T>& poses,
                                                    Cache* cache) const {
  if (poses.rank() != 2 || poses.dim(1) != PoseVector::kSize || poses.dim(0) != images.dim(0))
    throw ShapeError("predictor: poses must be (batch,5), got " + shape_string(poses.shape()));
  Output out;
  out.pre_fusion = encoder_.forward(images, cache ? &cache->encoder : nullptr);
  const Tensor<T> pose_features = pose_.forward(poses, cache ? &cache->pose : nullptr);
  out.post_fusion = fusion_.forward(out.pre_fusion, pose_features, cache ? &cache->fusion : nullptr);
  out.prediction = decoder_.forward(out.post_fusion, cache ? &cache->decoder : nullptr);
  return out;
}

template <typename T>
void Predictor<T>::backward(const Cache& cache, const Tensor<T>& d_post_fusion, const Tensor<T>& d_prediction) {
  Tensor<T> d_latent = decoder_.backward(cache.decoder, d_prediction);
  if (!d_post_fusion.empty()) {
    if (d_post_fusion.shape() != d_latent.shape()) throw ShapeError("predictor backward: d_post_fusion shape");
    auto dst = d_latent.values();
    auto src = d_post_fusion.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  const auto grads = fusion_.backward(cache.fusion, d_latent);
  pose_.backward(cache.pose, grads.d_pose);
  encoder_.backward(cache.encoder, grads.d_embedding);
}

template <typename T>
ParameterList<T> Predictor<T>::parameters() {
  ParameterList<T> out;
  encoder_.collect(out);
  pose_.collect(out);
  fusion_.collect(out);
  decoder_.collect(out);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Helpers

template <typename T>
void zero_grads(const ParameterList<T>& params) {
  for (auto* p : params) p->grad.fill(T{0});
}

template <typename T>
std::size_t parameter_count(const ParameterList<T>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

template <typename T>
Tensor<T> images_to_batch(std::span<const Raster* const> rasters) {
  Tensor<T> batch({static_cast<int>(rasters.size()), 1, kImageSize, kImageSize});
  for (std::size_t b = 0; b < rasters.size(); ++b) {
    auto src = rasters[b]->values();
    std::transform(src.begin(), src.end(), batch.data() + b * kImagePixels, [](float v) { return static_cast<T>(v); });
  }
  return batch;
}

template <typename T>
Tensor<T> images_to_batch(std::span<const Raster> rasters) {
  std::vector<const Raster*> ptrs;
  for (const auto& r : rasters) ptrs.push_back(&r);
  return images_to_batch<T>(std::span<const Raster* const>(ptrs));
}

template <typename T>
Tensor<T> poses_to_batch(std::span<const PoseVector> poses) {
  Tensor<T> batch({static_cast<int>(poses.size()), PoseVector::kSize});
  for (std::size_t b = 0; b < poses.size(); ++b)
    for (int i = 0; i < PoseVector::kSize; ++i)
      batch[b * PoseVector::kSize + static_cast<std::size_t>(i)] = static_cast<T>(poses[b].v[static_cast<std::size_t>(i)]);
  return batch;
}

template <typename T>
Raster batch_image(const Tensor<T>& batch, int b) {
  if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(2) != kImageSize || batch.dim(3) != kImageSize)
    throw ShapeError("batch_image: expected (batch,1,64,64), got " + shape_string(batch.shape()));
  std::vector<float> values(kImagePixels);
  const T* src = batch.data() + static_cast<std::size_t>(b) * kImagePixels;
  std::transform(src, src + kImagePixels, values.begin(), [](T v) { return static_cast<float>(v); });
  return Raster(std::move(values));
}

#define IRVIEW_INSTANTIATE(T)                                                          \
  template class Encoder<T>;                                                           \
  template class PoseBranch<T>;                                                        \
  template class Fusion<T>;                                                            \
  template class Decoder<T>;                                                           \
  template class VanillaAutoencoder<T>;                                                \
  template class Predictor<T>;                                                         \
  template void zero_grads<T>(const ParameterList<T>&);                                \
  template std::size_t parameter_count<T>(const ParameterList<T>&);                    \
  template Tensor<T> images_to_batch<T>(std::span<const Raster* const>);               \
  template Tensor<T> images_to_batch<T>(std::span<const Raster>);                      \
  template Tensor<T> poses_to_batch<T>(std::span<const PoseVector>);                   \
  template Raster batch_image<T>(const Tensor<T>&, int);

IRVIEW_INSTANTIATE(float)
IRVIEW_INSTANTIATE(double)

#undef IRVIEW_INSTANTIATE

}  // namespace irview
