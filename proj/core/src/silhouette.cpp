#include "irview/silhouette.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "irview/errors.hpp"

namespace irview {

double silhouette(const PointSet& points, std::span<const int> labels) {
  const std::size_t n = points.size();
  if (labels.size() != n) throw ShapeError("silhouette: label count does not match point count");

  std::map<int, int> index_of;
  for (int l : labels) index_of.emplace(l, 0);
  if (index_of.size() < 2) throw DomainError("silhouette: need at least two distinct labels");
  int next = 0;
  for (auto& [label, idx] : index_of) idx = next++;
  std::vector<int> cluster(n);
  std::vector<std::size_t> counts(index_of.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    cluster[i] = index_of[labels[i]];
    ++counts[static_cast<std::size_t>(cluster[i])];
  }
  for (std::size_t c : counts)
    if (c < 2) throw DomainError("silhouette: every label needs at least two points");

  const std::size_t k = counts.size();
  std::vector<double> sums(n * k, 0.0);  // sums[i*k + c] = total distance from i to cluster c
  for (std::size_t i = 0; i < n; ++i) {
    const auto pi = points.point(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto pj = points.point(j);
      double d2 = 0.0;
      for (std::size_t t = 0; t < pi.size(); ++t) {
        const double d = pi[t] - pj[t];
        d2 += d * d;
      }
      const double d = std::sqrt(d2);
      sums[i * k + static_cast<std::size_t>(cluster[j])] += d;
      sums[j * k + static_cast<std::size_t>(cluster[i])] += d;
    }
  }

  double total = 0.0;
  bool any_spread = false;
  for (std::size_t i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(cluster[i]);
    const double a = sums[i * k + own] / static_cast<double>(counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != own) b = std::min(b, sums[i * k + c] / static_cast<double>(counts[c]));
    const double denom = std::max(a, b);
    if (denom > 0.0) {
      any_spread = true;
      total += (b - a) / denom;
    }
  }
  if (!any_spread) throw DomainError("silhouette: all points coincide; the coefficient is undefined");
  return total / static_cast<double>(n);
}

}  // namespace irview
