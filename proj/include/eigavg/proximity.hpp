#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "eigavg/geometry.hpp"

namespace eigavg {

/// Uniform-grid hash over the first three components of lifted phase points.
/// Exact distances are always evaluated in the full R^6 lift.
class ProximityIndex {
 public:
  explicit ProximityIndex(double cell);

  void insert(const PhaseVector& v, int label);
  std::size_t size() const { return points_.size(); }
  const PhaseVector& point(std::size_t i) const { return points_[i]; }
  int label(std::size_t i) const { return labels_[i]; }

  /// Calls f(index, distance) for every stored point within `radius` of v.
  template <typename F>
  void for_each_within(const PhaseVector& v, double radius, F&& f) const {
    const int reach = static_cast<int>(std::ceil(radius / cell_));
    const std::int64_t c0 = coord(v(0)), c1 = coord(v(1)), c2 = coord(v(2));
    for (int a = -reach; a <= reach; ++a)
      for (int b = -reach; b <= reach; ++b)
        for (int c = -reach; c <= reach; ++c) {
          auto it = cells_.find(key(c0 + a, c1 + b, c2 + c));
          if (it == cells_.end()) continue;
          for (int idx : it->second) {
            const double d = (points_[idx] - v).norm();
            if (d < radius) f(idx, d);
          }
        }
  }

  /// Nearest stored point within radius, as (index, distance).
  std::optional<std::pair<int, double>> nearest_within(const PhaseVector& v, double radius) const;

 private:
  std::int64_t coord(double x) const { return static_cast<std::int64_t>(std::floor(x / cell_)); }
  static std::uint64_t key(std::int64_t a, std::int64_t b, std::int64_t c);

  double cell_;
  std::vector<PhaseVector> points_;
  std::vector<int> labels_;
  std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

}  // namespace eigavg
