#pragma once

#include <span>
#include <vector>

#include "gedi/layout.hpp"
#include "gedi/params.hpp"

namespace gedi {

/// Adds "head.merge.*" (merge_input x hidden), the per-feature output map
/// "head.out.*" (hidden x head_total) and the label head "label.*".
void init_imputation_head(ParamSet& params, const FeatureLayout& layout, Index merge_input,
                          Index hidden, Rng& rng);

/// H = ReLU(concat(parts) W + b).
Tensor merge_representations(const BoundParams& p, std::span<const Tensor> parts);

struct FeaturePredictions {
  Tensor scores;   // B x head_total: numeric predictions and class logits
  Tensor imputed;  // same layout with class blocks softmaxed
};

FeaturePredictions predict_features(const BoundParams& p, const Tensor& hidden,
                                    const FeatureLayout& layout);

struct ImputationLoss {
  Tensor per_feature;      // 1 x k
  std::vector<bool> empty; // feature had no evaluated entries (its loss is 0)
  std::vector<double> counts;
};

/// Mean squared error (numeric) or softmax cross-entropy (class) per feature,
/// averaged over entries with eval_mask != 0.
ImputationLoss imputation_loss(const FeaturePredictions& pred, const Matrix& x,
                               const Matrix& eval_mask, const FeatureLayout& layout);

/// Completed head-space matrix for the label head: visible entries from the
/// data (value or one-hot), hidden entries from the predictions.
Tensor assemble_label_input(const FeaturePredictions& pred, const Matrix& x,
                            const Matrix& input_mask, const FeatureLayout& layout);

Tensor label_logits(const BoundParams& p, const Tensor& label_input);

/// sigmoid(label_logits).
Tensor predict_label(const BoundParams& p, const Tensor& label_input);

/// Mean binary cross-entropy over `rows`.  Throws DataError if rows is empty.
Tensor target_loss(const Tensor& logits, const ColVector& labels, std::span<const Index> rows);

/// Completed matrix in raw units.  Entries with visible != 0 are copied from
/// `raw`; hidden numeric entries are de-standardized (count entries rounded and
/// clamped to the observed range); hidden class entries take the argmax.
Matrix finalize_output(const Matrix& imputed, const Matrix& raw, const Matrix& visible,
                       const Schema& schema);

}  // namespace gedi
