#include "gedi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gedi/errors.hpp"

namespace gedi {

Metric nrmse(const ColVector& truth, const ColVector& pred, const ColVector& eval_mask,
             double range) {
  double sq = 0.0, n = 0.0;
  for (Index i = 0; i < truth.size(); ++i)
    if (eval_mask(i) != 0.0) {
      sq += (truth(i) - pred(i)) * (truth(i) - pred(i));
      n += 1.0;
    }
  if (n == 0.0) return {};
  const double norm = range > 0.0 ? range : 1.0;
  return {std::sqrt(sq / n) / norm, true};
}

Metric accuracy_error(const ColVector& truth, const ColVector& pred, const ColVector& eval_mask) {
  double wrong = 0.0, n = 0.0;
  for (Index i = 0; i < truth.size(); ++i)
    if (eval_mask(i) != 0.0) {
      wrong += std::llround(truth(i)) != std::llround(pred(i)) ? 1.0 : 0.0;
      n += 1.0;
    }
  if (n == 0.0) return {};
  return {wrong / n, true};
}

Metric displacement_error(const ColVector& truth, const ColVector& pred,
                          const ColVector& eval_mask, int cardinality) {
  if (cardinality < 2) throw SchemaError("displacement_error needs at least 2 categories");
  double total = 0.0, n = 0.0;
  for (Index i = 0; i < truth.size(); ++i)
    if (eval_mask(i) != 0.0) {
      total += std::abs(static_cast<double>(std::llround(truth(i)) - std::llround(pred(i))));
      n += 1.0;
    }
  if (n == 0.0) return {};
  return {total / (n * (cardinality - 1)), true};
}

Metric auprc(const ColVector& scores, const ColVector& labels) {
  const Index n = scores.size();
  const double positives = (labels.array() > 0.5).cast<double>().sum();
  if (positives == 0.0) return {};
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return scores(a) > scores(b); });
  double tp = 0.0, seen = 0.0, prev_recall = 0.0, area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores(order[j]) == scores(order[i])) {
      tp += labels(order[j]) > 0.5 ? 1.0 : 0.0;
      seen += 1.0;
      ++j;
    }
    const double recall = tp / positives;
    area += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return {area, true};
}

ImputationErrors imputation_errors(const TabularDataset& ds, const Matrix& completed_raw,
                                   const Matrix& eval_mask) {
  ImputationErrors out;
  double total = 0.0, defined = 0.0;
  for (Index j = 0; j < ds.features(); ++j) {
    const ColumnSpec& col = ds.schema.columns[j];
    ColVector m = (eval_mask.col(j).array() != 0.0 && ds.mask.col(j).array() != 0.0).cast<double>();
    const ColVector truth = ds.raw.col(j);
    const ColVector pred = completed_raw.col(j);
    Metric e;
    switch (col.kind) {
      case FeatureKind::kContinuous:
      case FeatureKind::kCount: {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (Index i = 0; i < ds.rows(); ++i)
          if (ds.mask(i, j) != 0.0) {
            lo = std::min(lo, truth(i));
            hi = std::max(hi, truth(i));
          }
        e = nrmse(truth, pred, m, hi > lo ? hi - lo : 1.0);
        break;
      }
      case FeatureKind::kCategorical:
        e = accuracy_error(truth, pred, m);
        break;
      case FeatureKind::kOrdinal:
        e = displacement_error(truth, pred, m, col.cardinality());
        break;
    }
    if (e.defined) {
      total += e.value;
      defined += 1.0;
    }
    out.per_feature.push_back({col.name, col.kind, e});
  }
  if (defined > 0.0) out.mean = {total / defined, true};
  return out;
}

}  // namespace gedi
