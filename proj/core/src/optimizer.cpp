#include "irview/optimizer.hpp"

#include <cmath>

namespace irview {

template <typename T>
Adam<T>::Adam(ParameterList<T> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto* p : params_) {
    m_.emplace_back(p->value.size(), T{0});
    v_.emplace_back(p->value.size(), T{0});
  }
}

template <typename T>
void Adam<T>::step(double learning_rate) {
  ++t_;
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, static_cast<double>(t_)));
  const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, static_cast<double>(t_)));
  const T lr = static_cast<T>(learning_rate);
  const T eps = static_cast<T>(config_.epsilon);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto value = params_[k]->value.values();
    auto grad = params_[k]->grad.values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T g = grad[i];
      m[i] = b1 * m[i] + (T{1} - b1) * g;
      v[i] = b2 * v[i] + (T{1} - b2) * g * g;
      value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace irview
