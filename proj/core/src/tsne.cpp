#include "irview/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "irview/errors.hpp"

namespace irview {

namespace {

constexpr double kTiny = 1e-300;

std::vector<double> squared_distances(const PointSet& data) {
  const std::size_t n = data.size();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pi = data.point(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto pj = data.point(j);
      double s = 0.0;
      for (std::size_t t = 0; t < pi.size(); ++t) {
        const double diff = pi[t] - pj[t];
        s += diff * diff;
      }
      d[i * n + j] = d[j * n + i] = s;
    }
  }
  return d;
}

// Conditional distribution of row i at precision beta; returns its entropy (nats).
double row_distribution(const double* dist, std::size_t n, std::size_t i, double beta, double dmin, double* out) {
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = j == i ? 0.0 : std::exp(-beta * (dist[j] - dmin));
    sum += out[j];
  }
  double weighted = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] /= sum;
    weighted += (dist[j] - dmin) * out[j];
  }
  return std::log(sum) + beta * weighted;
}

double normal(std::mt19937_64& rng) {
  double u1 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  if (u1 < kTiny) u1 = kTiny;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace

Affinities joint_probabilities(const PointSet& data, double perplexity, const TsneConfig& config) {
  const std::size_t n = data.size();
  if (!(perplexity >= 5.0) || !(perplexity < static_cast<double>(n) / 3.0))
    throw DomainError("tsne: perplexity " + std::to_string(perplexity) + " infeasible for " + std::to_string(n) +
                      " points (need 5 <= perplexity < n/3)");
  const std::vector<double> dist = squared_distances(data);
  const double target = std::log(perplexity);

  Affinities aff;
  aff.n = n;
  aff.perplexities.resize(n);
  aff.betas.resize(n);
  std::vector<double> cond(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = dist.data() + i * n;
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, row[j]);
    double* out = cond.data() + i * n;

    double beta = 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double entropy = row_distribution(row, n, i, beta, dmin, out);
    for (int step = 0; step < config.max_bisection_steps && std::abs(entropy - target) > config.entropy_tolerance;
         ++step) {
      if (entropy > target) {  // too flat: sharpen
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
      entropy = row_distribution(row, n, i, beta, dmin, out);
    }
    aff.betas[i] = beta;
    aff.perplexities[i] = std::exp(entropy);
  }

  aff.p.assign(n * n, 0.0);
  const double norm = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) aff.p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / norm;
  return aff;
}

double tsne_kl(const Affinities& aff, const std::vector<std::array<double, 2>>& y) {
  const std::size_t n = aff.n;
  double qsum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
      qsum += 1.0 / (1.0 + dx * dx + dy * dy);
    }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double p = aff.p[i * n + j];
      if (i == j || p <= 0.0) continue;
      const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
      const double q = 1.0 / (1.0 + dx * dx + dy * dy) / qsum;
      kl += p * std::log(p / std::max(q, kTiny));
    }
  return kl;
}

TsneResult tsne_project(const PointSet& data, const TsneConfig& config) {
  const std::size_t n = data.size();
  if (n > 5000) throw DomainError("tsne: exact method limited to 5000 points");
  TsneResult result;
  result.affinities = joint_probabilities(data, config.perplexity, config);
  const auto& p = result.affinities.p;

  std::mt19937_64 rng(config.seed);
  std::vector<std::array<double, 2>> y(n), update(n, {0.0, 0.0}), gains(n, {1.0, 1.0}), grad(n);
  for (auto& pt : y) pt = {1e-4 * normal(rng), 1e-4 * normal(rng)};

  std::vector<double> num(n * n, 0.0);
  result.kl_history.reserve(static_cast<std::size_t>(config.iterations));
  // Last accepted iterate, for the descent safeguard.
  std::vector<std::array<double, 2>> kept_y, kept_grad;
  double kept_kl = 0.0, scale = 1.0;
  for (int iter = 0; iter < config.iterations; ++iter) {
    const double exaggeration = iter < config.exaggeration_iterations ? config.early_exaggeration : 1.0;
    const double momentum = iter < config.momentum_switch ? config.initial_momentum : config.final_momentum;

    double qsum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * n + j] = num[j * n + i] = v;
        qsum += 2.0 * v;
      }

    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double pij = p[i * n + j];
        const double q = num[i * n + j] / qsum;
        if (pij > 0.0) kl += pij * std::log(pij / std::max(q, kTiny));
        const double mult = (exaggeration * pij - q) * num[i * n + j];
        gx += mult * (y[i][0] - y[j][0]);
        gy += mult * (y[i][1] - y[j][1]);
      }
      grad[i] = {4.0 * gx, 4.0 * gy};
    }

    const bool guarded = config.descent_safeguard && iter > config.exaggeration_iterations;
    if (guarded && kl > kept_kl) {
      y = kept_y;
      grad = kept_grad;
      kl = kept_kl;
      for (auto& u : update) u = {0.0, 0.0};
      for (auto& g : gains) g = {1.0, 1.0};
      scale *= 0.5;
      ++result.rejected_steps;
    } else {
      if (guarded) scale = std::min(1.0, scale * config.step_recovery);
      if (config.descent_safeguard && iter >= config.exaggeration_iterations) {
        kept_y = y;
        kept_grad = grad;
        kept_kl = kl;
      }
    }
    result.kl_history.push_back(kl);

    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 2; ++d) {
        double& g = gains[i][static_cast<std::size_t>(d)];
        const double gr = grad[i][static_cast<std::size_t>(d)];
        double& u = update[i][static_cast<std::size_t>(d)];
        g = (gr > 0.0) != (u > 0.0) ? g + 0.2 : g * 0.8;
        g = std::max(g, config.min_gain);
        u = momentum * u - scale * config.learning_rate * g * gr;
        y[i][static_cast<std::size_t>(d)] += u;
      }
    }
    double mx = 0.0, my = 0.0;
    for (const auto& pt : y) {
      mx += pt[0];
      my += pt[1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (auto& pt : y) {
      pt[0] -= mx;
      pt[1] -= my;
    }
  }
  result.final_kl = tsne_kl(result.affinities, y);
  if (config.descent_safeguard && !kept_y.empty() && result.final_kl > kept_kl) {
    y = std::move(kept_y);
    result.final_kl = kept_kl;
    ++result.rejected_steps;
  }
  result.points = std::move(y);
  return result;
}

}  // namespace irview
