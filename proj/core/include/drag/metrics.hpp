#pragma once

#include <cstddef>

namespace drag {

// Confusion counts with the private class (label 1) as positive.
struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& other) {
    tp += other.tp;
    fp += other.fp;
    tn += other.tn;
    fn += other.fn;
    return *this;
  }
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  double accuracy = 0.0;
  ClassMetrics private_cls;
  ClassMetrics public_cls;
  ConfusionCounts counts;
};

// Precision/recall with zero denominators defined as 0; F1 = 2PR/(P+R) or 0.
MetricsReport metrics_from_confusion(const ConfusionCounts& counts);

}  // namespace drag
