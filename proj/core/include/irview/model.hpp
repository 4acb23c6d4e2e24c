#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "irview/config.hpp"
#include "irview/data_pipeline.hpp"
#include "irview/image.hpp"
#include "irview/layers.hpp"
#include "irview/tensor.hpp"

namespace irview {

/// Architecture of both autoencoder blocks. Defaults: four stride-2
/// convolutions (32,32,64,64 filters; 5,3,3,3 kernels) down to a 4x4x64 = 1024 embedding, a 5->64
/// pose layer, a 1088->1024->1024 fusion stack and a mirrored transposed-convolution decoder.
struct ModelConfig {
  std::vector<int> conv_filters{32, 32, 64, 64};
  std::vector<int> conv_kernels{5, 3, 3, 3};
  int conv_stride = 2;
  std::vector<int> deconv_kernels{3, 3, 3, 5};
  int pose_fc_dim = 64;
  std::vector<int> fusion_fc_dims{1024, 1024};
  int projection_kernel = 3;
  double leaky_slope = 0.2;
  int input_size = kImageSize;

  int latent_size() const;  // spatial side of the encoder output (4)
  int latent_channels() const { return conv_filters.back(); }
  int embedding_dim() const { return latent_size() * latent_size() * latent_channels(); }
  int fused_width() const { return embedding_dim() + pose_fc_dim; }
  /// Mirror of conv_filters: transposed-conv output channels (64,64,32,32 by default).
  std::vector<int> deconv_filters() const;

  /// Throws DomainError on an inconsistent architecture or any input size other than 64.
  void validate() const;

  KeyValueConfig to_key_values() const;
  static ModelConfig from_key_values(const KeyValueConfig& kv);

  bool operator==(const ModelConfig&) const = default;
};

/// Stride-2 convolution stack with leaky-relu after every layer. Output is flattened in
/// (row, column, channel) order.
template <typename T>
class Encoder {
 public:
  struct Cache {
    std::vector<Tensor<T>> activations;  // [0] = input, [i+1] = output of stage i
  };

  Encoder() = default;
  explicit Encoder(const ModelConfig& config);

  Tensor<T> forward(const Tensor<T>& images, Cache* cache = nullptr) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& d_embedding, bool need_input_grad = false);
  void collect(ParameterList<T>& out);
  void initialize(std::mt19937_64& rng);
  std::vector<int> stage_sizes(int input_size) const;

 private:
  std::vector<Conv2d<T>> convs_;
  T slope_{};
};

/// Dense 5 -> pose_fc_dim with leaky-relu.
template <typename T>
class PoseBranch {
 public:
  struct Cache {
    Tensor<T> input, output;
  };

  PoseBranch() = default;
  explicit PoseBranch(const ModelConfig& config);

  Tensor<T> forward(const Tensor<T>& poses, Cache* cache = nullptr) const;
  void backward(const Cache& cache, const Tensor<T>& d_out);
  void collect(ParameterList<T>& out);
  void initialize(std::mt19937_64& rng);

 private:
  Dense<T> fc_;
  T slope_{};
};

/// Concatenates [embedding, pose features] and applies the fusion dense stack, leaky-relu after each.
template <typename T>
class Fusion {
 public:
  struct Cache {
    Tensor<T> concat;
    std::vector<Tensor<T>> outputs;
  };
  struct Grads {
    Tensor<T> d_embedding, d_pose;
  };

  Fusion() = default;
  explicit Fusion(const ModelConfig& config);

  static Tensor<T> concat(const Tensor<T>& embedding, const Tensor<T>& pose_features);
  Tensor<T> forward(const Tensor<T>& embedding, const Tensor<T>& pose_features, Cache* cache = nullptr) const;
  Grads backward(const Cache& cache, const Tensor<T>& d_out);
  void collect(ParameterList<T>& out);
  void initialize(std::mt19937_64& rng);
  Dense<T>& layer(std::size_t i) { return fcs_.at(i); }

 private:
  std::vector<Dense<T>> fcs_;
  int embedding_dim_ = 0, pose_dim_ = 0;
  T slope_{};
};

/// Transposed-conv stack mirroring the encoder, a stride-1 single-channel projection and tanh.
template <typename T>
class Decoder {
 public:
  struct Cache {
    std::vector<Tensor<T>> activations;  // [0] = reshaped latent, then each stage output, last = tanh output
  };

  Decoder() = default;
  explicit Decoder(const ModelConfig& config);

  Tensor<T> forward(const Tensor<T>& latent, Cache* cache = nullptr) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& d_output);
  void collect(ParameterList<T>& out);
  void initialize(std::mt19937_64& rng);
  std::vector<int> stage_sizes() const;

 private:
  std::vector<ConvTranspose2d<T>> deconvs_;
  Conv2d<T> projection_;
  int latent_size_ = 0, latent_channels_ = 0;
  T slope_{};
};

/// Block 1: encode then decode, no pose input.
template <typename T = float>
class VanillaAutoencoder {
 public:
  struct Output {
    Tensor<T> embedding;       // (B, embedding_dim)
    Tensor<T> reconstruction;  // (B, 1, 64, 64)
  };
  struct Cache {
    typename Encoder<T>::Cache encoder;
    typename Decoder<T>::Cache decoder;
  };

  VanillaAutoencoder(const ModelConfig& config, std::uint64_t seed);

  Output forward(const Tensor<T>& images, Cache* cache = nullptr) const;
  Tensor<T> encode(const Tensor<T>& images) const { return encoder_.forward(images); }
  void backward(const Cache& cache, const Tensor<T>& d_reconstruction);

  ParameterList<T> parameters();
  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
};

/// Block 2: encode the input view, fuse with the processed pose vector, decode the target view.
template <typename T = float>
class Predictor {
 public:
  struct Output {
    Tensor<T> pre_fusion;   // encoder output
    Tensor<T> post_fusion;  // fused latent fed to the decoder
    Tensor<T> prediction;   // (B, 1, 64, 64)
  };
  struct Cache {
    typename Encoder<T>::Cache encoder;
    typename PoseBranch<T>::Cache pose;
    typename Fusion<T>::Cache fusion;
    typename Decoder<T>::Cache decoder;
  };

  Predictor(const ModelConfig& config, std::uint64_t seed);

  Output forward(const Tensor<T>& images, const Tensor<T>& poses, Cache* cache = nullptr) const;
  Tensor<T> encode(const Tensor<T>& images) const { return encoder_.forward(images); }
  Tensor<T> pose_branch(const Tensor<T>& poses) const { return pose_.forward(poses); }
  Tensor<T> fuse(const Tensor<T>& embedding, const Tensor<T>& pose_features) const {
    return fusion_.forward(embedding, pose_features);
  }
  Tensor<T> decode(const Tensor<T>& latent) const { return decoder_.forward(latent); }

  /// d_post_fusion may be empty (no gradient arriving at the fused latent besides the decoder's).
  void backward(const Cache& cache, const Tensor<T>& d_post_fusion, const Tensor<T>& d_prediction);

  ParameterList<T> parameters();
  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  Fusion<T>& fusion() { return fusion_; }
  PoseBranch<T>& pose() { return pose_; }

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  Encoder<T> encoder_;
  PoseBranch<T> pose_;
  Fusion<T> fusion_;
  Decoder<T> decoder_;
};

template <typename T>
void zero_grads(const ParameterList<T>& params);

template <typename T>
std::size_t parameter_count(const ParameterList<T>& params);

/// Stacks rasters into a (B, 1, 64, 64) batch.
template <typename T = float>
Tensor<T> images_to_batch(std::span<const Raster* const> rasters);
template <typename T = float>
Tensor<T> images_to_batch(std::span<const Raster> rasters);
template <typename T = float>
Tensor<T> poses_to_batch(std::span<const PoseVector> poses);
/// Extracts sample b of a (B, 1, 64, 64) batch.
template <typename T>
Raster batch_image(const Tensor<T>& batch, int b);

}  // namespace irview
