#pragma once

#include <string>
#include <vector>

#include "gedi/data.hpp"

namespace gedi {

/// A metric value, or "undefined" when nothing was evaluated.
struct Metric {
  double value = 0.0;
  bool defined = false;
};

/// RMSE over entries with eval_mask != 0, divided by `range` (1 if range <= 0).
Metric nrmse(const ColVector& truth, const ColVector& pred, const ColVector& eval_mask,
             double range);

/// 1 - fraction of evaluated entries whose predicted category equals the truth.
Metric accuracy_error(const ColVector& truth, const ColVector& pred, const ColVector& eval_mask);

/// Mean |rank(truth) - rank(pred)| / (c - 1).  Throws SchemaError if c < 2.
Metric displacement_error(const ColVector& truth, const ColVector& pred,
                          const ColVector& eval_mask, int cardinality);

/// Step-interpolated area under the precision-recall curve, tied scores
/// grouped at one threshold.  Undefined without positives.
Metric auprc(const ColVector& scores, const ColVector& labels);

struct FeatureError {
  std::string name;
  FeatureKind kind;
  Metric error;
};

struct ImputationErrors {
  std::vector<FeatureError> per_feature;
  /// Mean over features with a defined error.
  Metric mean;
};

/// Per-type errors of `completed_raw` against the dataset's raw ground truth
/// on entries with eval_mask != 0 (restricted to truly observed cells).
/// NRMSE ranges come from each feature's observed ground truth.
ImputationErrors imputation_errors(const TabularDataset& ds, const Matrix& completed_raw,
                                   const Matrix& eval_mask);

}  // namespace gedi
