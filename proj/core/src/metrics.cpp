#include "drag/metrics.hpp"

namespace drag {

namespace {

double ratio(std::size_t num, std::size_t denom) {
  return denom == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(denom);
}

ClassMetrics class_metrics(std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassMetrics m;
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  const double pr = m.precision + m.recall;
  m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall / pr : 0.0;
  return m;
}

}  // namespace

MetricsReport metrics_from_confusion(const ConfusionCounts& counts) {
  MetricsReport report;
  report.counts = counts;
  report.accuracy = ratio(counts.tp + counts.tn, counts.total());
  report.private_cls = class_metrics(counts.tp, counts.fp, counts.fn);
  // Public as positive: true positives are the correctly kept public images.
  report.public_cls = class_metrics(counts.tn, counts.fn, counts.fp);
  return report;
}

}  // namespace drag
