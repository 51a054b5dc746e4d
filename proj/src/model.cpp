#include "gedi/model.hpp"

#include "gedi/errors.hpp"

namespace gedi {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kGedi:
      return "gedi";
    case Variant::kFeatureOnly:
      return "gedi-f";
    case Variant::kGraphOnly:
      return "gedi-g";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "gedi") return Variant::kGedi;
  if (name == "gedi-f") return Variant::kFeatureOnly;
  if (name == "gedi-g") return Variant::kGraphOnly;
  throw ConfigError("unknown variant '" + name + "' (expected gedi, gedi-f or gedi-g)");
}

ParamSet init_model(const FeatureLayout& layout, const ModelConfig& config, Rng& rng) {
  ParamSet p;
  const Index d = config.encoder.width;
  Index merge_input = 0;
  if (config.variant != Variant::kGraphOnly) {
    init_feature_encoder(p, layout, config.encoder, rng);
    merge_input += d;
  }
  if (config.variant != Variant::kFeatureOnly) {
    const Index in = config.variant == Variant::kGraphOnly ? layout.head_total : d;
    init_graph_encoder(p, in, d, config.graph, rng);
    merge_input += d;
  }
  init_imputation_head(p, layout, merge_input, config.hidden, rng);
  return p;
}

ModelOutput forward(const BoundParams& p, const FeatureLayout& layout, const ModelConfig& config,
                    const Matrix& x, const Matrix& input_mask) {
  ModelOutput out;
  std::vector<Tensor> parts;
  if (config.variant == Variant::kGraphOnly) {
    Tensor nodes = p.tape().constant(observed_encoding(layout, zero_fill(x, input_mask), input_mask));
    GraphEncoding ge = graph_encode(p, nodes, config.graph);
    out.g = ge.output;
    out.graph = std::move(ge.graph);
    parts.push_back(out.g);
  } else {
    out.z = encode_observations(p, layout, config.encoder, x, input_mask);
    if (config.variant == Variant::kGedi) {
      GraphEncoding ge = graph_encode(p, out.z, config.graph);
      out.g = ge.output;
      out.graph = std::move(ge.graph);
      parts.push_back(out.g);
    }
    parts.push_back(out.z);
  }
  out.hidden = merge_representations(p, parts);
  out.pred = predict_features(p, out.hidden, layout);
  out.label_input = assemble_label_input(out.pred, x, input_mask, layout);
  out.logits = label_logits(p, out.label_input);
  return out;
}

}  // namespace gedi
