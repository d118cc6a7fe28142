#pragma once

#include <cstdint>
#include <vector>

#include "drag/errors.hpp"

namespace drag {

struct KMeansResult {
  std::vector<std::size_t> assignment;  // point -> cluster in [0, k)
  std::vector<std::vector<double>> centroids;
  double wcss = 0.0;                  // within-cluster sum of squared distances
  std::size_t iterations = 0;         // Lloyd iterations of the winning restart
  std::vector<double> wcss_history;   // per-iteration WCSS of the winning restart
};

// Lloyd's algorithm with k-means++ seeding, deterministic under `seed`. Runs
// `restarts` independently seeded attempts and keeps the lowest-WCSS result (first
// found wins ties). Converges when assignments are stable or after 300 iterations;
// an emptied cluster is repaired by stealing the point currently farthest from its
// own centroid. WCSS is checked to be non-increasing across iterations within each
// restart. Throws ContractError when k is 0 or exceeds the point count.
KMeansResult kmeans_cluster(const std::vector<std::vector<double>>& points, std::size_t k,
                            std::uint64_t seed, std::size_t restarts = 8);

}  // namespace drag
