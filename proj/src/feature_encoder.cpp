#include "gedi/feature_encoder.hpp"

#include <cmath>
#include <string>

#include "gedi/errors.hpp"

namespace gedi {

namespace {

std::string layer_key(int layer, const char* leaf) {
  return "enc.layer" + std::to_string(layer) + "." + leaf;
}

Tensor affine(const BoundParams& p, const Tensor& x, const std::string& w, const std::string& b) {
  return linear(x, p[w], p[b]);
}

}  // namespace

void init_feature_encoder(ParamSet& params, const FeatureLayout& layout,
                          const EncoderConfig& config, Rng& rng) {
  if (config.heads <= 0 || config.width % config.heads != 0)
    throw ConfigError("encoder width must be divisible by the head count");
  const Index d = config.width;
  for (Index j = 0; j < layout.features(); ++j)
    if (!layout.numeric(j))
      params.add("enc.cat" + std::to_string(j) + ".table", glorot(layout.cardinality[j], d, rng));
  if (layout.numeric_count > 0) {
    params.add("enc.numeric.weight", glorot(1 + layout.numeric_count, d, rng));
    params.add("enc.numeric.bias", Matrix::Zero(1, d));
  }
  for (int l = 0; l < config.layers; ++l) {
    for (const char* name : {"wq", "wk", "wv", "wo"}) {
      params.add(layer_key(l, name), glorot(d, d, rng));
      params.add(layer_key(l, (std::string("b") + (name + 1)).c_str()), Matrix::Zero(1, d));
    }
    params.add(layer_key(l, "ln1.gain"), Matrix::Ones(1, d));
    params.add(layer_key(l, "ln1.bias"), Matrix::Zero(1, d));
    params.add(layer_key(l, "ff1.w"), glorot(d, config.ff_width, rng));
    params.add(layer_key(l, "ff1.b"), Matrix::Zero(1, config.ff_width));
    params.add(layer_key(l, "ff2.w"), glorot(config.ff_width, d, rng));
    params.add(layer_key(l, "ff2.b"), Matrix::Zero(1, d));
    params.add(layer_key(l, "ln2.gain"), Matrix::Ones(1, d));
    params.add(layer_key(l, "ln2.bias"), Matrix::Zero(1, d));
  }
}

Tensor embed_features(const BoundParams& p, const FeatureLayout& layout, const Matrix& x) {
  Tape& tape = p.tape();
  const Index b = x.rows();
  const Index k = layout.features();
  if (x.cols() != k) throw DimensionError("embed_features: row width does not match schema");

  // Blocks stacked feature-major: all numeric features first, then each class
  // feature; `where` records the stacked row of (feature, observation 0).
  std::vector<Tensor> blocks;
  std::vector<Index> where(static_cast<std::size_t>(k));
  Index stacked = 0;
  if (layout.numeric_count > 0) {
    const Index n = layout.numeric_count;
    Matrix in = Matrix::Zero(n * b, 1 + n);
    for (Index j = 0; j < k; ++j) {
      const int slot = layout.numeric_slot[j];
      if (slot < 0) continue;
      where[j] = slot * b;
      for (Index i = 0; i < b; ++i) {
        in(slot * b + i, 0) = x(i, j);
        in(slot * b + i, 1 + slot) = 1.0;
      }
    }
    blocks.push_back(
        linear(tape.constant(std::move(in)), p["enc.numeric.weight"], p["enc.numeric.bias"]));
    stacked = n * b;
  }
  for (Index j = 0; j < k; ++j) {
    if (layout.numeric(j)) continue;
    std::vector<Index> idx(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i) {
      const auto c = static_cast<Index>(std::llround(x(i, j)));
      if (c < 0 || c >= layout.cardinality[j])
        throw SchemaError("category index " + std::to_string(c) + " out of range for feature " +
                          std::to_string(j));
      idx[i] = c;
    }
    blocks.push_back(gather_rows(p["enc.cat" + std::to_string(j) + ".table"], idx));
    where[j] = stacked;
    stacked += b;
  }
  Tensor all = blocks.size() == 1 ? blocks.front() : concat_rows(blocks);
  std::vector<Index> order(static_cast<std::size_t>(b * k));
  for (Index i = 0; i < b; ++i)
    for (Index j = 0; j < k; ++j) order[i * k + j] = where[j] + i;
  return gather_rows(all, order);
}

Tensor transformer_layer(const BoundParams& p, int layer, const Tensor& r, const Matrix& mask,
                         const EncoderConfig& config) {
  auto key = [layer](const char* leaf) { return layer_key(layer, leaf); };
  Tensor q = affine(p, r, key("wq"), key("bq"));
  Tensor k = affine(p, r, key("wk"), key("bk"));
  Tensor v = affine(p, r, key("wv"), key("bv"));
  Tensor attn = masked_attention(q, k, v, mask, config.heads);
  Tensor r1 = layer_norm(add(affine(p, attn, key("wo"), key("bo")), r), p[key("ln1.gain")],
                         p[key("ln1.bias")]);
  Tensor ff = affine(p, relu(affine(p, r1, key("ff1.w"), key("ff1.b"))), key("ff2.w"),
                     key("ff2.b"));
  return layer_norm(add(ff, r1), p[key("ln2.gain")], p[key("ln2.bias")]);
}

Tensor encode_observations(const BoundParams& p, const FeatureLayout& layout,
                           const EncoderConfig& config, const Matrix& x, const Matrix& mask) {
  if (x.rows() == 0) throw DimensionError("encode_observations: empty batch");
  if (mask.rows() != x.rows() || mask.cols() != x.cols())
    throw DimensionError("encode_observations: mask shape differs from batch");
  Tensor r = embed_features(p, layout, zero_fill(x, mask));
  for (int l = 0; l < config.layers; ++l) r = transformer_layer(p, l, r, mask, config);
  return masked_mean_pool(r, mask);
}

}  // namespace gedi
