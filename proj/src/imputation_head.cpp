#include "gedi/imputation_head.hpp"

#include <algorithm>
#include <cmath>

#include "gedi/errors.hpp"

namespace gedi {

void init_imputation_head(ParamSet& params, const FeatureLayout& layout, Index merge_input,
                          Index hidden, Rng& rng) {
  params.add("head.merge.w", glorot(merge_input, hidden, rng));
  params.add("head.merge.b", Matrix::Zero(1, hidden));
  params.add("head.out.w", glorot(hidden, layout.head_total, rng));
  params.add("head.out.b", Matrix::Zero(1, layout.head_total));
  params.add("label.w", glorot(layout.head_total, 1, rng));
  params.add("label.b", Matrix::Zero(1, 1));
}

Tensor merge_representations(const BoundParams& p, std::span<const Tensor> parts) {
  Tensor in = parts.size() == 1 ? parts.front() : concat_cols(parts);
  return relu(linear(in, p["head.merge.w"], p["head.merge.b"]));
}

FeaturePredictions predict_features(const BoundParams& p, const Tensor& hidden,
                                    const FeatureLayout& layout) {
  FeaturePredictions out;
  out.scores = linear(hidden, p["head.out.w"], p["head.out.b"]);
  std::vector<Tensor> blocks;
  blocks.reserve(static_cast<std::size_t>(layout.features()));
  for (Index j = 0; j < layout.features(); ++j) {
    Tensor s = slice_cols(out.scores, layout.head_offset[j], layout.head_width[j]);
    blocks.push_back(layout.numeric(j)
                         ? s
                         : masked_softmax(s, Matrix::Ones(s.rows(), layout.head_width[j])));
  }
  out.imputed = concat_cols(blocks);
  return out;
}

ImputationLoss imputation_loss(const FeaturePredictions& pred, const Matrix& x,
                               const Matrix& eval_mask, const FeatureLayout& layout) {
  Tape& tape = *pred.scores.tape();
  const Index b = x.rows();
  if (eval_mask.rows() != b || eval_mask.cols() != layout.features() || pred.scores.rows() != b)
    throw DimensionError("imputation_loss: batch shapes disagree");
  ImputationLoss out;
  std::vector<Tensor> losses;
  for (Index j = 0; j < layout.features(); ++j) {
    ColVector w = (eval_mask.col(j).array() != 0.0).cast<double>();
    const double count = w.sum();
    out.counts.push_back(count);
    out.empty.push_back(count == 0.0);
    if (count == 0.0) {
      losses.push_back(tape.scalar(0.0));
      continue;
    }
    w /= count;
    Tensor s = slice_cols(pred.scores, layout.head_offset[j], layout.head_width[j]);
    if (layout.numeric(j)) {
      Matrix target = (eval_mask.col(j).array() != 0.0).select(x.col(j), 0.0);
      Tensor diff = sub(s, tape.constant(target));
      losses.push_back(sum(mul(mul(diff, diff), tape.constant(w))));
    } else {
      std::vector<Index> targets(static_cast<std::size_t>(b), 0);
      for (Index i = 0; i < b; ++i)
        if (w(i) != 0.0) targets[i] = static_cast<Index>(std::llround(x(i, j)));
      losses.push_back(softmax_cross_entropy(s, targets, w));
    }
  }
  out.per_feature = concat_cols(losses);
  return out;
}

Tensor assemble_label_input(const FeaturePredictions& pred, const Matrix& x,
                            const Matrix& input_mask, const FeatureLayout& layout) {
  Tape& tape = *pred.imputed.tape();
  Matrix hidden = 1.0 - head_space_mask(layout, input_mask).array();
  return add(tape.constant(observed_encoding(layout, x, input_mask)),
             mul(pred.imputed, tape.constant(std::move(hidden))));
}

Tensor label_logits(const BoundParams& p, const Tensor& label_input) {
  return linear(label_input, p["label.w"], p["label.b"]);
}

Tensor predict_label(const BoundParams& p, const Tensor& label_input) {
  return sigmoid(label_logits(p, label_input));
}

Tensor target_loss(const Tensor& logits, const ColVector& labels, std::span<const Index> rows) {
  if (rows.empty()) throw DataError("target_loss: no labeled rows");
  ColVector w = ColVector::Zero(logits.rows());
  for (Index r : rows) w(r) += 1.0 / static_cast<double>(rows.size());
  return sigmoid_bce(logits, labels, w);
}

Matrix finalize_output(const Matrix& imputed, const Matrix& raw, const Matrix& visible,
                       const Schema& schema) {
  const FeatureLayout layout = FeatureLayout::from_schema(schema);
  Matrix out = raw;
  for (Index i = 0; i < raw.rows(); ++i)
    for (Index j = 0; j < layout.features(); ++j) {
      if (visible(i, j) != 0.0) continue;
      const ColumnSpec& col = schema.columns[j];
      const auto block = imputed.row(i).segment(layout.head_offset[j], layout.head_width[j]);
      if (layout.numeric(j)) {
        double v = decode_value(col, block(0));
        if (col.kind == FeatureKind::kCount)
          v = std::clamp(std::round(v), std::round(col.observed_min), std::round(col.observed_max));
        out(i, j) = v;
      } else {
        Index best = 0;
        block.maxCoeff(&best);
        out(i, j) = static_cast<double>(best);
      }
    }
  return out;
}

}  // namespace gedi
