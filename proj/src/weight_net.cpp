#include "gedi/weight_net.hpp"

#include <cmath>

#include "gedi/errors.hpp"

namespace gedi {

ParamSet init_weight_net(const FeatureLayout& layout, Rng& rng) {
  ParamSet p;
  p.add("wnet.embed", glorot(layout.features() + 1, kTaskEmbedding, rng));
  p.add("wnet.w", Matrix::Zero(kTaskEmbedding + 1 + kTaskKinds, 1));
  p.add("wnet.b", Matrix::Zero(1, 1));
  return p;
}

Matrix task_descriptors(const FeatureLayout& layout, double target_loss,
                        const RowVector& feature_losses) {
  const Index k = layout.features();
  if (feature_losses.size() != k) throw DimensionError("task_descriptors: loss count");
  Matrix d = Matrix::Zero(k + 1, 1 + kTaskKinds);
  d(0, 0) = target_loss;
  d(0, 1) = 1.0;
  for (Index j = 0; j < k; ++j) {
    d(j + 1, 0) = feature_losses(j);
    d(j + 1, layout.numeric(j) ? 2 : 3) = 1.0;
  }
  return d;
}

Tensor task_weights(const BoundParams& w, const Matrix& descriptors) {
  Tape& tape = w.tape();
  const Tensor parts[] = {w["wnet.embed"], tape.constant(descriptors)};
  Tensor logits = linear(concat_cols(parts), w["wnet.w"], w["wnet.b"]);
  return div(softplus(logits), tape.scalar(std::log1p(1.0)));
}

Tensor joint_loss(const Tensor& target, const Tensor& feature_losses, const Tensor& weights) {
  const Tensor parts[] = {target, transpose(feature_losses)};
  return sum(mul(weights, concat_rows(parts)));
}

}  // namespace gedi
