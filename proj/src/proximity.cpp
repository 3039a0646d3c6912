#include "eigavg/proximity.hpp"

namespace eigavg {

ProximityIndex::ProximityIndex(double cell) : cell_(cell) {
  if (!(cell > 0.0)) throw DomainError("proximity cell size must be positive");
}

std::uint64_t ProximityIndex::key(std::int64_t a, std::int64_t b, std::int64_t c) {
  auto mix = [](std::uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    return x;
  };
  return mix(static_cast<std::uint64_t>(a) * 0x9E3779B185EBCA87ULL ^
             mix(static_cast<std::uint64_t>(b) * 0xC2B2AE3D27D4EB4FULL ^
                 mix(static_cast<std::uint64_t>(c))));
}

void ProximityIndex::insert(const PhaseVector& v, int label) {
  const int idx = static_cast<int>(points_.size());
  points_.push_back(v);
  labels_.push_back(label);
  cells_[key(coord(v(0)), coord(v(1)), coord(v(2)))].push_back(idx);
}

std::optional<std::pair<int, double>> ProximityIndex::nearest_within(const PhaseVector& v,
                                                                     double radius) const {
  std::optional<std::pair<int, double>> best;
  for_each_within(v, radius, [&](int idx, double d) {
    if (!best || d < best->second) best = std::make_pair(idx, d);
  });
  return best;
}

}  // namespace eigavg
