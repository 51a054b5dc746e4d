#pragma once

// Heterogeneous feature encoder: per-feature embeddings followed by a stack of
// masked self-attention blocks (no positional encoding) and masked mean
// pooling, producing one width-d vector per observation.

#include "gedi/layout.hpp"
#include "gedi/params.hpp"

namespace gedi {

struct EncoderConfig {
  int width = 32;
  int heads = 4;
  int layers = 2;
  int ff_width = 64;
};

/// Adds "enc.*" parameters: one embedding table per class feature, one
/// projection shared by all numeric features, and `layers` attention blocks.
void init_feature_encoder(ParamSet& params, const FeatureLayout& layout,
                          const EncoderConfig& config, Rng& rng);

/// (B*k) x d embeddings, observation-major (row b*k + j is feature j of row b).
/// Numeric feature j maps [value, one-hot(slot j)] through the shared
/// projection; class feature j looks up row x(b, j) of its table.
Tensor embed_features(const BoundParams& p, const FeatureLayout& layout, const Matrix& x);

/// One post-norm block: LN(MHA(R) + R) then LN(FF(.) + .), keys masked by `mask`.
Tensor transformer_layer(const BoundParams& p, int layer, const Tensor& r, const Matrix& mask,
                         const EncoderConfig& config);

/// Z (B x d).  Cells with mask == 0 are zero-filled before embedding, so they
/// cannot influence the result.
Tensor encode_observations(const BoundParams& p, const FeatureLayout& layout,
                           const EncoderConfig& config, const Matrix& x, const Matrix& mask);

}  // namespace gedi
