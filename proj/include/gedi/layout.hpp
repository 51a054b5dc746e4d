#pragma once

#include <vector>

#include "gedi/data.hpp"

namespace gedi {

/// Column bookkeeping shared by the encoder and the output heads.
///
/// Head space: every feature owns a contiguous block of output columns, width
/// 1 for numeric features and its cardinality for class features.  The same
/// block layout is used for predictions, observed encodings and the label
/// head's input.
struct FeatureLayout {
  std::vector<FeatureKind> kinds;
  std::vector<int> cardinality;      // 0 for numeric features
  std::vector<int> numeric_slot;     // position among numeric features, -1 otherwise
  std::vector<int> class_slot;       // position among class features, -1 otherwise
  std::vector<Index> head_offset;
  std::vector<Index> head_width;
  int numeric_count = 0;
  int class_count = 0;
  Index head_total = 0;

  static FeatureLayout from_schema(const Schema& schema);
  Index features() const { return static_cast<Index>(kinds.size()); }
  bool numeric(Index j) const { return is_numeric(kinds[j]); }
};

/// B x head_total encoding of the entries visible under `mask`: standardized
/// value for numeric features, one-hot for class features, zeros elsewhere.
Matrix observed_encoding(const FeatureLayout& layout, const Matrix& x, const Matrix& mask);

/// `mask` broadcast over each feature's head block.
Matrix head_space_mask(const FeatureLayout& layout, const Matrix& mask);

/// Continuous features zero-filled and class indices reset to 0 where mask == 0.
Matrix zero_fill(const Matrix& x, const Matrix& mask);

}  // namespace gedi
