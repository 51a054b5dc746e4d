#pragma once

// Full imputation model: feature encoder -> graph encoder -> merge -> heads.
//
// Variants used for ablation:
//   gedi    H from [G, Z]
//   gedi-f  H from Z only (no graph encoder)
//   gedi-g  no transformer; the graph encoder runs on the zero-filled observed
//           encoding (standardized values, one-hot classes) and H comes from G

#include <optional>
#include <string>

#include "gedi/feature_encoder.hpp"
#include "gedi/graph_encoder.hpp"
#include "gedi/imputation_head.hpp"

namespace gedi {

enum class Variant { kGedi, kFeatureOnly, kGraphOnly };

const char* to_string(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  EncoderConfig encoder;
  GraphConfig graph;
  int hidden = 32;
  Variant variant = Variant::kGedi;
};

ParamSet init_model(const FeatureLayout& layout, const ModelConfig& config, Rng& rng);

struct ModelOutput {
  Tensor z;                               // absent for gedi-g
  Tensor g;                               // absent for gedi-f
  std::optional<SimilarityGraph> graph;
  Tensor hidden;
  FeaturePredictions pred;
  Tensor label_input;
  Tensor logits;
};

ModelOutput forward(const BoundParams& p, const FeatureLayout& layout, const ModelConfig& config,
                    const Matrix& x, const Matrix& input_mask);

/// True for parameters of the label head.
inline bool is_label_param(const std::string& name) { return name.rfind("label.", 0) == 0; }

}  // namespace gedi
