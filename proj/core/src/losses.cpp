#include "irview/losses.hpp"

#include "irview/errors.hpp"

namespace irview {

namespace {

template <typename T>
double mse_impl(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size())
    throw ShapeError("mse: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (a.empty()) throw ShapeError("mse: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

}  // namespace

double mse(std::span<const float> a, std::span<const float> b) { return mse_impl(a, b); }
double mse(std::span<const double> a, std::span<const double> b) { return mse_impl(a, b); }

template <typename T>
Tensor<T> mse_gradient(const Tensor<T>& pred, const Tensor<T>& target, double weight) {
  require_shape(target, pred.shape(), "mse_gradient");
  Tensor<T> g(pred.shape());
  const double scale = 2.0 * weight / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    g[i] = static_cast<T>(scale * (static_cast<double>(pred[i]) - static_cast<double>(target[i])));
  return g;
}

template Tensor<float> mse_gradient<float>(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> mse_gradient<double>(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace irview
