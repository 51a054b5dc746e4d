#pragma once

// Per-task loss weights g(xi_i; w) > 0 for task 0 (label) and tasks 1..k
// (feature imputation).
//
//   xi_i = [embedding_i (8) | current loss_i | kind one-hot (3)]
//   g    = softplus(xi_i . a + b) / log(2)
//
// a and b start at zero, so every weight is exactly 1 before training.

#include "gedi/layout.hpp"
#include "gedi/params.hpp"

namespace gedi {

inline constexpr Index kTaskEmbedding = 8;
inline constexpr Index kTaskKinds = 3;  // label, numeric feature, class feature

/// "wnet.embed" ((k+1) x 8), "wnet.w" (12 x 1), "wnet.b" (1 x 1).
ParamSet init_weight_net(const FeatureLayout& layout, Rng& rng);

/// (k+1) x 4 constant part of the descriptors: detached loss and kind one-hot.
Matrix task_descriptors(const FeatureLayout& layout, double target_loss,
                        const RowVector& feature_losses);

/// (k+1) x 1 task weights.
Tensor task_weights(const BoundParams& w, const Matrix& descriptors);

/// g_0 L_ta + sum_i g_i L_im,i.  `target` is 1x1, `feature_losses` 1xk,
/// `weights` (k+1)x1.
Tensor joint_loss(const Tensor& target, const Tensor& feature_losses, const Tensor& weights);

}  // namespace gedi
