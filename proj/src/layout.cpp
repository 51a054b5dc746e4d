#include "gedi/layout.hpp"

#include <cmath>

#include "gedi/errors.hpp"

namespace gedi {

FeatureLayout FeatureLayout::from_schema(const Schema& schema) {
  FeatureLayout l;
  for (const ColumnSpec& c : schema.columns) {
    l.kinds.push_back(c.kind);
    l.head_offset.push_back(l.head_total);
    if (is_numeric(c.kind)) {
      l.cardinality.push_back(0);
      l.numeric_slot.push_back(l.numeric_count++);
      l.class_slot.push_back(-1);
      l.head_width.push_back(1);
      l.head_total += 1;
    } else {
      if (c.cardinality() < 2) throw SchemaError("column '" + c.name + "' has < 2 categories");
      l.cardinality.push_back(c.cardinality());
      l.numeric_slot.push_back(-1);
      l.class_slot.push_back(l.class_count++);
      l.head_width.push_back(c.cardinality());
      l.head_total += c.cardinality();
    }
  }
  return l;
}

Matrix observed_encoding(const FeatureLayout& layout, const Matrix& x, const Matrix& mask) {
  Matrix out = Matrix::Zero(x.rows(), layout.head_total);
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < layout.features(); ++j) {
      if (mask(i, j) == 0.0) continue;
      if (layout.numeric(j)) {
        out(i, layout.head_offset[j]) = x(i, j);
      } else {
        const auto c = static_cast<Index>(std::llround(x(i, j)));
        if (c < 0 || c >= layout.cardinality[j])
          throw SchemaError("category index " + std::to_string(c) + " out of range in column " +
                            std::to_string(j));
        out(i, layout.head_offset[j] + c) = 1.0;
      }
    }
  return out;
}

Matrix head_space_mask(const FeatureLayout& layout, const Matrix& mask) {
  Matrix out(mask.rows(), layout.head_total);
  for (Index j = 0; j < layout.features(); ++j)
    for (Index c = 0; c < layout.head_width[j]; ++c)
      out.col(layout.head_offset[j] + c) = mask.col(j);
  return out;
}

Matrix zero_fill(const Matrix& x, const Matrix& mask) {
  return (mask.array() != 0.0).select(x, 0.0);
}

}  // namespace gedi
