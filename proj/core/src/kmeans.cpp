#include "drag/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "drag/rng.hpp"

namespace drag {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

std::vector<std::vector<double>> plusplus_seed(const std::vector<std::vector<double>>& points,
                                               std::size_t k, Rng& rng) {
  std::vector<std::vector<double>> centroids;
  centroids.push_back(points[rng.index(points.size())]);
  std::vector<double> dist(points.size());
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = sq_dist(points[i], centroids[0]);
      for (std::size_t c = 1; c < centroids.size(); ++c) {
        best = std::min(best, sq_dist(points[i], centroids[c]));
      }
      dist[i] = best;
      total += best;
    }
    std::size_t pick;
    if (total <= 0.0) {
      pick = rng.index(points.size());  // all remaining points coincide with centroids
    } else {
      const double target = rng.next_double() * total;
      double acc = 0.0;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += dist[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

KMeansResult lloyd(const std::vector<std::vector<double>>& points, std::size_t k, Rng& rng) {
  constexpr std::size_t kMaxIterations = 300;
  KMeansResult result;
  result.centroids = plusplus_seed(points, k, rng);
  result.assignment.assign(points.size(), 0);

  auto assign_all = [&](std::vector<std::size_t>& out) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      std::size_t best_c = 0;
      double best = sq_dist(points[i], result.centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = sq_dist(points[i], result.centroids[c]);
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      out[i] = best_c;
    }
  };

  auto wcss_of = [&]() {
    double acc = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      acc += sq_dist(points[i], result.centroids[result.assignment[i]]);
    }
    return acc;
  };

  const std::size_t dim = points[0].size();
  std::vector<std::size_t> next(points.size());
  for (std::size_t iter = 0; iter < kMaxIterations; ++iter) {
    assign_all(next);

    // Repair empty clusters by stealing the point farthest from its own centroid.
    std::vector<std::size_t> counts(k, 0);
    for (auto c : next) counts[c]++;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      double worst = -1.0;
      std::size_t worst_i = 0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (counts[next[i]] <= 1) continue;  // do not empty another cluster
        const double d = sq_dist(points[i], result.centroids[next[i]]);
        if (d > worst) {
          worst = d;
          worst_i = i;
        }
      }
      counts[next[worst_i]]--;
      next[worst_i] = c;
      counts[c] = 1;
    }

    const bool stable = iter > 0 && next == result.assignment;
    result.assignment = next;

    for (std::size_t c = 0; c < k; ++c) {
      std::fill(result.centroids[c].begin(), result.centroids[c].end(), 0.0);
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
      auto& ctr = result.centroids[result.assignment[i]];
      for (std::size_t d = 0; d < dim; ++d) ctr[d] += points[i][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t d = 0; d < dim; ++d) {
        result.centroids[c][d] /= static_cast<double>(counts[c]);
      }
    }

    const double wcss = wcss_of();
    if (!result.wcss_history.empty() &&
        wcss > result.wcss_history.back() * (1.0 + 1e-12) + 1e-9) {
      throw ContractError("kmeans: WCSS increased across a Lloyd iteration");
    }
    result.wcss_history.push_back(wcss);
    result.iterations = iter + 1;
    if (stable) break;
  }
  result.wcss = result.wcss_history.back();
  return result;
}

}  // namespace

KMeansResult kmeans_cluster(const std::vector<std::vector<double>>& points, std::size_t k,
                            std::uint64_t seed, std::size_t restarts) {
  if (k == 0) throw ContractError("kmeans: cluster count must be positive");
  if (points.empty() || k > points.size()) {
    throw ContractError("kmeans: cluster count " + std::to_string(k) + " exceeds point count " +
                        std::to_string(points.size()));
  }
  if (restarts == 0) restarts = 1;
  Rng root(seed);
  KMeansResult best;
  bool have = false;
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng = root.child(r);
    KMeansResult candidate = lloyd(points, k, rng);
    if (!have || candidate.wcss < best.wcss) {
      best = std::move(candidate);
      have = true;
    }
  }
  return best;
}

}  // namespace drag
