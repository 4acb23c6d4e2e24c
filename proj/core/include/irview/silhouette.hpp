#pragma once

#include <span>
#include <vector>

namespace irview {

/// Row-major point set: n points of dimension dim.
struct PointSet {
  std::vector<double> values;
  int dim = 0;

  std::size_t size() const { return dim ? values.size() / static_cast<std::size_t>(dim) : 0; }
  std::span<const double> point(std::size_t i) const {
    return std::span<const double>(values).subspan(i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim));
  }
};

/// Mean silhouette coefficient with Euclidean distance. Needs at least two labels with at least
/// two points each; throws DomainError otherwise or when every point coincides (undefined score).
double silhouette(const PointSet& points, std::span<const int> labels);

}  // namespace irview
