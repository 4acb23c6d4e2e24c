#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "irview/tensor.hpp"

namespace irview {

/// One learnable tensor and its gradient accumulator. Names are dotted paths ("encoder.conv1.weight").
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

template <typename T>
using ParameterList = std::vector<Parameter<T>*>;

/// Fills with U(-bound, bound) using the top 53 bits of each draw.
template <typename T>
void init_uniform(Tensor<T>& t, double bound, std::mt19937_64& rng);

/// 2-D convolution over NCHW batches, padding (kernel-1)/2 on every side.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride);

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int padding() const { return pad_; }
  int output_size(int input_size) const { return (input_size + 2 * pad_ - kernel_) / stride_ + 1; }
  int fan_in() const { return in_channels_ * kernel_ * kernel_; }

  Tensor<T> forward(const Tensor<T>& x) const;
  /// Accumulates weight/bias gradients for dy and returns dx (empty when need_input_grad is false).
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_input_grad = true);

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  const Parameter<T>& weight() const { return weight_; }
  const Parameter<T>& bias() const { return bias_; }
  void collect(ParameterList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  int in_channels_ = 0, out_channels_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  Parameter<T> weight_;  // (out, in, k, k)
  Parameter<T> bias_;    // (out)
};

/// Transposed convolution: the adjoint of a Conv2d(out -> in, kernel, stride). Maps H to H*stride.
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride);

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int output_size(int input_size) const { return input_size * stride_; }
  int fan_in() const { return in_channels_ * kernel_ * kernel_ / (stride_ * stride_); }

  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_input_grad = true);

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  void collect(ParameterList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  int in_channels_ = 0, out_channels_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  Parameter<T> weight_;  // (in, out, k, k)
  Parameter<T> bias_;    // (out)
};

/// Fully connected layer over (batch, features).
template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, int in_features, int out_features);

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  int fan_in() const { return in_; }

  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_input_grad = true);

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  void collect(ParameterList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  int in_ = 0, out_ = 0;
  Parameter<T> weight_;  // (out, in)
  Parameter<T> bias_;    // (out)
};

template <typename T>
void leaky_relu_inplace(Tensor<T>& x, T slope);
/// y is the activation output; dy is scaled in place.
template <typename T>
void leaky_relu_backward(const Tensor<T>& y, Tensor<T>& dy, T slope);

template <typename T>
void tanh_inplace(Tensor<T>& x);
template <typename T>
void tanh_backward(const Tensor<T>& y, Tensor<T>& dy);

}  // namespace irview
