#pragma once

#include <vector>

#include "irview/layers.hpp"

namespace irview {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Reads each parameter's accumulated gradient; does not clear it.
template <typename T>
class Adam {
 public:
  Adam(ParameterList<T> params, AdamConfig config = {});

  void step(double learning_rate);
  long long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  ParameterList<T> params_;
  AdamConfig config_;
  std::vector<std::vector<T>> m_, v_;
  long long t_ = 0;
};

}  // namespace irview
