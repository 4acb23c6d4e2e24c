#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "irview/silhouette.hpp"

namespace irview {

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  std::uint64_t seed = 1;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  double learning_rate = 200.0;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch = 250;
  double min_gain = 0.01;
  double entropy_tolerance = 1e-10;
  int max_bisection_steps = 500;
  /// After exaggeration, a step that raises KL is undone: momentum and gains restart and the
  /// step scale halves. The scale recovers by step_recovery per accepted step, up to 1.
  bool descent_safeguard = true;
  double step_recovery = 1.05;
};

/// Symmetrized input affinities for exact t-SNE.
struct Affinities {
  std::vector<double> p;                // n*n, row-major, p_ij = (p_j|i + p_i|j) / 2n
  std::vector<double> perplexities;     // achieved per-point perplexity after bisection
  std::vector<double> betas;            // precision 1/(2 sigma_i^2)
  std::size_t n = 0;
};

struct TsneResult {
  std::vector<std::array<double, 2>> points;
  std::vector<double> kl_history;       // KL(P||Q) of the embedding at the start of each iteration
  double final_kl = 0.0;                // KL of the returned points
  int rejected_steps = 0;               // steps undone by the descent safeguard
  Affinities affinities;
};

/// Per-point Gaussian bandwidths found by bisection on entropy, then symmetrized and normalized.
/// Throws DomainError unless 5 <= perplexity < n/3.
Affinities joint_probabilities(const PointSet& data, double perplexity, const TsneConfig& config = {});

/// Exact O(n^2) t-SNE to 2-D with momentum, gains and early exaggeration. n must not exceed 5000.
TsneResult tsne_project(const PointSet& data, const TsneConfig& config);

/// KL(P||Q) for a 2-D embedding.
double tsne_kl(const Affinities& affinities, const std::vector<std::array<double, 2>>& points);

}  // namespace irview
