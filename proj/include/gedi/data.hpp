#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gedi/tensor.hpp"

namespace gedi {

enum class FeatureKind { kContinuous, kCategorical, kOrdinal, kCount };

const char* to_string(FeatureKind kind);
FeatureKind parse_feature_kind(const std::string& name);

/// Numeric kinds are standardized and regressed; the others are classified.
inline bool is_numeric(FeatureKind k) {
  return k == FeatureKind::kContinuous || k == FeatureKind::kCount;
}

struct ColumnSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kContinuous;
  /// Ordered labels; required for categorical and ordinal columns.
  std::vector<std::string> categories;

  // Normalization statistics over observed entries (numeric kinds only).
  double mean = 0.0;
  double std = 1.0;
  bool constant = false;
  double observed_min = 0.0;
  double observed_max = 0.0;

  int cardinality() const { return static_cast<int>(categories.size()); }
};

struct Schema {
  std::vector<ColumnSpec> columns;
  std::optional<std::string> target;
  /// Labels of the target column mapped to 0 and 1 ("0"/"1" when empty).
  std::vector<std::string> target_labels;

  Index size() const { return static_cast<Index>(columns.size()); }
};

/// Reads { "columns": [ {"name", "kind", "categories"?} ... ], "target": {"name"} }.
Schema load_schema(const std::filesystem::path& path);
Schema parse_schema(const std::string& json_text);

/// Raw CSV cells; std::nullopt marks an empty (missing) cell.
struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::optional<std::string>>> rows;
};

RawTable read_csv(const std::filesystem::path& path);
RawTable parse_csv(const std::string& text);
std::string format_csv(const RawTable& table);
void write_csv(const std::filesystem::path& path, const RawTable& table);

struct TabularDataset {
  Schema schema;
  /// N x k encoded features: numeric columns standardized, class columns as
  /// category indices, 0 wherever mask == 0.
  Matrix x;
  /// N x k values in raw units (class columns as indices); 0 where missing.
  Matrix raw;
  /// N x k, 1 = observed.
  Matrix mask;
  std::optional<ColVector> labels;
  /// 1 = train, 0 = test.
  std::optional<ColVector> train_indicator;

  Index rows() const { return x.rows(); }
  Index features() const { return x.cols(); }
};

/// Fits normalization statistics on the observed cells and encodes the table.
TabularDataset encode_table(const RawTable& table, Schema schema);
TabularDataset load_csv(const std::filesystem::path& path, const Schema& schema);

/// Encoded value -> raw units.
double decode_value(const ColumnSpec& col, double encoded);
/// Raw units -> encoded value.
double encode_value(const ColumnSpec& col, double raw);
/// Shortest round-trip text for a raw-unit value (category label for classes).
std::string format_value(const ColumnSpec& col, double raw);

/// Rebuilds a raw table: observed cells (mask == 1) are copied verbatim from
/// `original`, the rest rendered from `completed_raw`.
RawTable render_completed(const RawTable& original, const Schema& schema,
                          const Matrix& completed_raw, const Matrix& observed);

struct MaskSet {
  Matrix test;
  Matrix valid;
  double rate_test = 0.0;
  double rate_valid = 0.0;
};

/// Each entry independently 0 with probability `rate`, drawn from the named
/// substream of `seed`.
Matrix generate_mcar_mask(Index rows, Index cols, double rate, std::uint64_t seed,
                          std::string_view stream = "mcar");

/// Entrywise product.
Matrix compose_masks(const Matrix& a, const Matrix& b);

struct Split {
  ColVector train_indicator;          // V: 1 = train (incl. validation), 0 = test
  std::vector<Index> train;           // training rows excluding validation
  std::vector<Index> validation;
  std::vector<Index> test;
};

Split split_train_test(Index n, double train_fraction, double valid_fraction_of_train,
                       std::uint64_t seed);

/// Planted-dependency fixture with 8 columns (x1..x4 continuous, c1 c2
/// categorical, o1 ordinal, n1 count) and a binary target "y".
///   c1 == (x1 > 0) exactly; y is a noisy threshold of x3 alone.
struct SyntheticTable {
  RawTable table;
  Schema schema;
};
SyntheticTable generate_synthetic_table(Index n, std::uint64_t seed);
TabularDataset generate_synthetic(Index n, std::uint64_t seed);

inline constexpr const char* kSyntheticRuleSource = "x1";
inline constexpr const char* kSyntheticRuleTarget = "c1";
inline constexpr const char* kSyntheticLabelFeature = "x3";

Index column_index(const Schema& schema, const std::string& name);

}  // namespace gedi
