#include "gedi/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "gedi/errors.hpp"
#include "gedi/rng.hpp"

namespace gedi {

using nlohmann::json;

const char* to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kContinuous:
      return "continuous";
    case FeatureKind::kCategorical:
      return "categorical";
    case FeatureKind::kOrdinal:
      return "ordinal";
    case FeatureKind::kCount:
      return "count";
  }
  return "?";
}

FeatureKind parse_feature_kind(const std::string& name) {
  if (name == "continuous") return FeatureKind::kContinuous;
  if (name == "categorical") return FeatureKind::kCategorical;
  if (name == "ordinal") return FeatureKind::kOrdinal;
  if (name == "count") return FeatureKind::kCount;
  throw SchemaError("unknown feature kind '" + name + "'");
}

// --- schema --------------------------------------------------------------------

Schema parse_schema(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("schema is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("columns") || !doc["columns"].is_array())
    throw SchemaError("schema must be an object with a \"columns\" array");
  Schema schema;
  try {
    for (const json& c : doc["columns"]) {
      ColumnSpec col;
      col.name = c.at("name").get<std::string>();
      col.kind = parse_feature_kind(c.at("kind").get<std::string>());
      if (c.contains("categories")) col.categories = c["categories"].get<std::vector<std::string>>();
      if (!is_numeric(col.kind) && col.cardinality() < 2)
        throw SchemaError("column '" + col.name + "' needs at least 2 categories");
      for (const ColumnSpec& prev : schema.columns)
        if (prev.name == col.name) throw SchemaError("duplicate column '" + col.name + "'");
      schema.columns.push_back(std::move(col));
    }
    if (doc.contains("target") && !doc["target"].is_null()) {
      const json& t = doc["target"];
      schema.target = t.at("name").get<std::string>();
      if (t.contains("labels")) {
        schema.target_labels = t["labels"].get<std::vector<std::string>>();
        if (schema.target_labels.size() != 2)
          throw SchemaError("target labels must list exactly two values");
      }
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed schema: ") + e.what());
  }
  if (schema.columns.empty()) throw SchemaError("schema declares no columns");
  return schema;
}

Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_schema(ss.str());
}

Index column_index(const Schema& schema, const std::string& name) {
  for (Index j = 0; j < schema.size(); ++j)
    if (schema.columns[j].name == name) return j;
  throw SchemaError("no column named '" + name + "'");
}

// --- CSV -------------------------------------------------------------------------

RawTable parse_csv(const std::string& text) {
  std::vector<std::vector<std::optional<std::string>>> records;
  std::vector<std::optional<std::string>> record;
  std::string field;
  bool quoted = false;      // inside quotes
  bool was_quoted = false;  // current field used quotes ("" is an empty string, not missing)
  bool any = false;         // current record has content
  auto end_field = [&] {
    if (field.empty() && !was_quoted)
      record.emplace_back(std::nullopt);
    else
      record.emplace_back(field);
    field.clear();
    was_quoted = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
      was_quoted = true;
      any = true;
    } else if (ch == ',') {
      end_field();
      any = true;
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty() || !record.empty()) end_record();
    } else {
      field += ch;
      any = true;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field");
  if (any || !field.empty() || !record.empty()) end_record();
  if (records.empty()) throw ParseError("empty CSV");

  RawTable table;
  for (auto& h : records.front()) {
    if (!h) throw ParseError("empty header name");
    table.header.push_back(*h);
  }
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size())
      throw ParseError("row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                       " fields, header has " + std::to_string(table.header.size()));
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

RawTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

namespace {

std::string quote_if_needed(const std::string& s) {
  if (s.empty() || s.find_first_of(",\"\r\n") != std::string::npos) {
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  }
  return s;
}

}  // namespace

std::string format_csv(const RawTable& table) {
  std::string out;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (j) out += ',';
    out += quote_if_needed(table.header[j]);
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ',';
      if (row[j]) out += quote_if_needed(*row[j]);
    }
    out += '\n';
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const RawTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << format_csv(table);
}

// --- encoding --------------------------------------------------------------------

namespace {

double parse_number(const std::string& s, const std::string& column, std::size_t row) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (e[-1] == ' ' || e[-1] == '\t')) --e;
  if (b < e && *b == '+') ++b;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || !std::isfinite(v))
    throw ParseError("column '" + column + "' row " + std::to_string(row) +
                     ": cannot parse number '" + s + "'");
  return v;
}

}  // namespace

TabularDataset encode_table(const RawTable& table, Schema schema) {
  const Index n = static_cast<Index>(table.rows.size());
  const Index k = schema.size();
  std::vector<int> source(k, -1);
  int target_source = -1;
  for (std::size_t h = 0; h < table.header.size(); ++h) {
    const std::string& name = table.header[h];
    if (schema.target && name == *schema.target) {
      target_source = static_cast<int>(h);
      continue;
    }
    bool found = false;
    for (Index j = 0; j < k; ++j)
      if (schema.columns[j].name == name) {
        if (source[j] >= 0) throw SchemaError("duplicate header column '" + name + "'");
        source[j] = static_cast<int>(h);
        found = true;
      }
    if (!found) throw SchemaError("header column '" + name + "' is not in the schema");
  }
  for (Index j = 0; j < k; ++j)
    if (source[j] < 0)
      throw SchemaError("schema column '" + schema.columns[j].name + "' missing from header");
  if (schema.target && target_source < 0)
    throw SchemaError("target column '" + *schema.target + "' missing from header");

  TabularDataset ds;
  ds.raw = Matrix::Zero(n, k);
  ds.mask = Matrix::Zero(n, k);
  ds.x = Matrix::Zero(n, k);
  for (Index j = 0; j < k; ++j) {
    ColumnSpec& col = schema.columns[j];
    std::unordered_map<std::string, int> lookup;
    for (int c = 0; c < col.cardinality(); ++c) lookup.emplace(col.categories[c], c);
    for (Index i = 0; i < n; ++i) {
      const auto& cell = table.rows[i][source[j]];
      if (!cell) continue;
      double v;
      if (is_numeric(col.kind)) {
        v = parse_number(*cell, col.name, static_cast<std::size_t>(i) + 1);
      } else {
        auto it = lookup.find(*cell);
        if (it == lookup.end())
          throw SchemaError("column '" + col.name + "' row " + std::to_string(i + 1) +
                            ": unknown category '" + *cell + "'");
        v = it->second;
      }
      ds.raw(i, j) = v;
      ds.mask(i, j) = 1.0;
    }
    if (is_numeric(col.kind)) {
      double count = 0.0, total = 0.0;
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (Index i = 0; i < n; ++i)
        if (ds.mask(i, j) != 0.0) {
          count += 1.0;
          total += ds.raw(i, j);
          lo = std::min(lo, ds.raw(i, j));
          hi = std::max(hi, ds.raw(i, j));
        }
      col.mean = count > 0 ? total / count : 0.0;
      double ss = 0.0;
      for (Index i = 0; i < n; ++i)
        if (ds.mask(i, j) != 0.0) ss += (ds.raw(i, j) - col.mean) * (ds.raw(i, j) - col.mean);
      const double sd = count > 0 ? std::sqrt(ss / count) : 0.0;
      col.constant = !(sd > 0.0);
      col.std = col.constant ? 1.0 : sd;
      col.observed_min = count > 0 ? lo : 0.0;
      col.observed_max = count > 0 ? hi : 0.0;
    }
    for (Index i = 0; i < n; ++i)
      if (ds.mask(i, j) != 0.0) ds.x(i, j) = encode_value(col, ds.raw(i, j));
  }
  if (schema.target) {
    ColVector y(n);
    for (Index i = 0; i < n; ++i) {
      const auto& cell = table.rows[i][target_source];
      if (!cell)
        throw DataError("target '" + *schema.target + "' missing at row " + std::to_string(i + 1));
      if (!schema.target_labels.empty()) {
        if (*cell == schema.target_labels[0])
          y(i) = 0.0;
        else if (*cell == schema.target_labels[1])
          y(i) = 1.0;
        else
          throw SchemaError("target row " + std::to_string(i + 1) + ": unknown label '" + *cell +
                            "'");
      } else {
        const double v = parse_number(*cell, *schema.target, static_cast<std::size_t>(i) + 1);
        if (v != 0.0 && v != 1.0)
          throw DataError("target row " + std::to_string(i + 1) + " is not binary");
        y(i) = v;
      }
    }
    ds.labels = std::move(y);
  }
  ds.schema = std::move(schema);
  return ds;
}

TabularDataset load_csv(const std::filesystem::path& path, const Schema& schema) {
  return encode_table(read_csv(path), schema);
}

double encode_value(const ColumnSpec& col, double raw) {
  return is_numeric(col.kind) ? (raw - col.mean) / col.std : raw;
}

double decode_value(const ColumnSpec& col, double encoded) {
  return is_numeric(col.kind) ? encoded * col.std + col.mean : encoded;
}

std::string format_value(const ColumnSpec& col, double raw) {
  if (!is_numeric(col.kind)) {
    const auto idx = static_cast<std::size_t>(std::llround(raw));
    if (idx >= col.categories.size()) throw SchemaError("category index out of range");
    return col.categories[idx];
  }
  if (col.kind == FeatureKind::kCount) return std::to_string(std::llround(raw));
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), raw);
  return std::string(buf, ptr);
}

RawTable render_completed(const RawTable& original, const Schema& schema,
                          const Matrix& completed_raw, const Matrix& observed) {
  RawTable out = original;
  for (std::size_t h = 0; h < original.header.size(); ++h) {
    Index j = -1;
    for (Index c = 0; c < schema.size(); ++c)
      if (schema.columns[c].name == original.header[h]) j = c;
    if (j < 0) continue;
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
      if (observed(static_cast<Index>(i), j) != 0.0) continue;
      out.rows[i][h] = format_value(schema.columns[j], completed_raw(static_cast<Index>(i), j));
    }
  }
  return out;
}

// --- masks and splits --------------------------------------------------------------

Matrix generate_mcar_mask(Index rows, Index cols, double rate, std::uint64_t seed,
                          std::string_view stream) {
  if (!(rate >= 0.0 && rate <= 1.0))
    throw ArgumentError("missing rate must lie in [0, 1], got " + std::to_string(rate));
  Rng rng = substream(seed, stream);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng) < rate ? 0.0 : 1.0;
  return m;
}

Matrix compose_masks(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("compose_masks: shapes differ");
  return a.cwiseProduct(b);
}

Split split_train_test(Index n, double train_fraction, double valid_fraction_of_train,
                       std::uint64_t seed) {
  if (n < 5) throw ArgumentError("split_train_test needs at least 5 rows");
  if (!(train_fraction > 0.0 && train_fraction < 1.0) ||
      !(valid_fraction_of_train > 0.0 && valid_fraction_of_train < 1.0))
    throw ArgumentError("split fractions must lie in (0, 1)");
  Index n_train = std::llround(static_cast<double>(n) * train_fraction);
  n_train = std::clamp<Index>(n_train, 2, n - 1);
  Index n_valid = std::llround(static_cast<double>(n_train) * valid_fraction_of_train);
  n_valid = std::clamp<Index>(n_valid, 1, n_train - 1);

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = substream(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);

  Split s;
  s.train_indicator = ColVector::Zero(n);
  for (Index i = 0; i < n_train; ++i) {
    s.train_indicator(order[i]) = 1.0;
    (i < n_valid ? s.validation : s.train).push_back(order[i]);
  }
  for (Index i = n_train; i < n; ++i) s.test.push_back(order[i]);
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// --- synthetic fixture -----------------------------------------------------------------

SyntheticTable generate_synthetic_table(Index n, std::uint64_t seed) {
  if (n < 100) throw ArgumentError("generate_synthetic needs n >= 100");
  Schema schema;
  auto add = [&](std::string name, FeatureKind kind, std::vector<std::string> cats = {}) {
    ColumnSpec c;
    c.name = std::move(name);
    c.kind = kind;
    c.categories = std::move(cats);
    schema.columns.push_back(std::move(c));
  };
  add("x1", FeatureKind::kContinuous);
  add("x2", FeatureKind::kContinuous);
  add("x3", FeatureKind::kContinuous);
  add("x4", FeatureKind::kContinuous);
  add("c1", FeatureKind::kCategorical, {"neg", "pos"});
  add("c2", FeatureKind::kCategorical, {"a", "b", "c"});
  add("o1", FeatureKind::kOrdinal, {"low", "mid", "high", "top"});
  add("n1", FeatureKind::kCount);
  schema.target = "y";

  Rng rng = substream(seed, "synthetic");
  std::normal_distribution<double> normal(0.0, 1.0);
  RawTable table;
  for (const auto& c : schema.columns) table.header.push_back(c.name);
  table.header.push_back("y");
  auto num = [](double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
  };
  for (Index i = 0; i < n; ++i) {
    const double u = normal(rng);
    const double v = normal(rng);
    const double x1 = u + 0.1 * normal(rng);
    const double x2 = 0.6 * u + 0.8 * v + 0.1 * normal(rng);
    const double x3 = v + 0.1 * normal(rng);
    const double x4 = 0.8 * v - 0.6 * u + 0.1 * normal(rng);
    const int c2 = v < -0.43 ? 0 : (v > 0.43 ? 2 : 1);
    const double s = u + v;
    const int o1 = s < -0.95 ? 0 : (s < 0.0 ? 1 : (s < 0.95 ? 2 : 3));
    const long long n1 = std::max(0LL, std::llround(3.0 + 1.5 * u + 0.3 * normal(rng)));
    const double y = (x3 + 0.3 * normal(rng)) > 0.0 ? 1.0 : 0.0;
    std::vector<std::optional<std::string>> row{num(x1),
                                                num(x2),
                                                num(x3),
                                                num(x4),
                                                std::string(x1 > 0.0 ? "pos" : "neg"),
                                                schema.columns[5].categories[c2],
                                                schema.columns[6].categories[o1],
                                                std::to_string(n1),
                                                std::string(y > 0.5 ? "1" : "0")};
    table.rows.push_back(std::move(row));
  }
  return {std::move(table), std::move(schema)};
}

TabularDataset generate_synthetic(Index n, std::uint64_t seed) {
  SyntheticTable t = generate_synthetic_table(n, seed);
  return encode_table(t.table, t.schema);
}

}  // namespace gedi
