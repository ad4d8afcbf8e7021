#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "xcbr/error.hpp"
#include "xcbr/io.hpp"
#include "xcbr/rng.hpp"

namespace xcbr {

enum class FeatureKind { Numeric, Binary, Categorical };

inline std::string to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::Numeric: return "numeric";
    case FeatureKind::Binary: return "binary";
    case FeatureKind::Categorical: return "categorical";
  }
  return "numeric";
}

inline FeatureKind feature_kind_from_string(std::string_view s) {
  if (s == "numeric") return FeatureKind::Numeric;
  if (s == "binary") return FeatureKind::Binary;
  if (s == "categorical") return FeatureKind::Categorical;
  throw ValidationError("unknown feature kind: " + std::string(s));
}

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;
  std::optional<std::pair<double, double>> declared_range;  // numeric only
};

struct FeatureSchema {
  std::vector<FeatureSpec> features;
  std::string target_name;

  std::size_t size() const { return features.size(); }

  void validate() const {
    if (target_name.empty()) throw ValidationError("schema: empty target name");
    std::set<std::string> seen;
    for (const auto& f : features) {
      if (f.name.empty()) throw ValidationError("schema: empty feature name");
      if (!seen.insert(f.name).second)
        throw ValidationError("schema: duplicate feature name '" + f.name + "'");
      if (f.declared_range) {
        if (f.kind != FeatureKind::Numeric)
          throw ValidationError("schema: range declared on non-numeric feature '" + f.name + "'");
        if (!(f.declared_range->first < f.declared_range->second))
          throw ValidationError("schema: feature '" + f.name + "' needs min < max");
      }
      if (seen.count(target_name))
        throw ValidationError("schema: target name collides with feature '" + target_name + "'");
    }
  }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t j = 0; j < features.size(); ++j)
      if (features[j].name == name) return j;
    throw ValidationError("schema: unknown feature '" + std::string(name) + "'");
  }

  nlohmann::json to_json() const {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : features) {
      nlohmann::json jf{{"name", f.name}, {"kind", to_string(f.kind)}};
      if (f.declared_range)
        jf["range"] = {f.declared_range->first, f.declared_range->second};
      feats.push_back(std::move(jf));
    }
    return nlohmann::json{{"target", target_name}, {"features", std::move(feats)}};
  }

  static FeatureSchema from_json(const nlohmann::json& j) {
    FeatureSchema s;
    if (!j.contains("target") || !j.contains("features"))
      throw ValidationError("schema json: needs 'target' and 'features'");
    s.target_name = j.at("target").get<std::string>();
    for (const auto& jf : j.at("features")) {
      FeatureSpec f;
      f.name = jf.at("name").get<std::string>();
      f.kind = feature_kind_from_string(jf.at("kind").get<std::string>());
      if (jf.contains("range") && !jf.at("range").is_null()) {
        const auto& r = jf.at("range");
        f.declared_range = std::make_pair(r.at(0).get<double>(), r.at(1).get<double>());
      }
      s.features.push_back(std::move(f));
    }
    s.validate();
    return s;
  }
};

// Numeric and binary cells hold a double; categorical cells hold the label.
using FeatureValue = std::variant<double, std::string>;

inline double numeric_value(const FeatureValue& v) { return std::get<double>(v); }
inline const std::string& label_value(const FeatureValue& v) { return std::get<std::string>(v); }

using Row = std::vector<FeatureValue>;

struct Dataset {
  FeatureSchema schema;
  std::vector<Row> rows;
  std::vector<double> targets;

  std::size_t n_rows() const { return rows.size(); }
  std::size_t n_features() const { return schema.size(); }

  void validate() const {
    schema.validate();
    if (rows.empty()) throw ValidationError("dataset: needs at least one row");
    if (rows.size() != targets.size())
      throw ValidationError("dataset: row/target count mismatch");
    for (const auto& r : rows)
      if (r.size() != schema.size())
        throw ValidationError("dataset: row width does not match schema");
  }
};

struct NumericRange {
  double min = 0.0;
  double max = 0.0;
  bool constant = false;  // max == min on the training data
};

// Per-feature training statistics needed to normalize and compare values.
// Category order is first appearance in the training data.
struct FeatureRanges {
  std::vector<NumericRange> numeric;                    // valid where kind == Numeric
  std::vector<std::vector<std::string>> categories;     // valid where kind == Categorical

  std::optional<std::size_t> category_index(std::size_t feature, const std::string& label) const {
    const auto& cats = categories[feature];
    for (std::size_t i = 0; i < cats.size(); ++i)
      if (cats[i] == label) return i;
    return std::nullopt;
  }

  nlohmann::json to_json() const {
    nlohmann::json jn = nlohmann::json::array();
    for (const auto& r : numeric)
      jn.push_back({{"min", r.min}, {"max", r.max}, {"constant", r.constant}});
    return nlohmann::json{{"numeric", std::move(jn)}, {"categories", categories}};
  }

  static FeatureRanges from_json(const nlohmann::json& j) {
    FeatureRanges r;
    for (const auto& e : j.at("numeric"))
      r.numeric.push_back({e.at("min").get<double>(), e.at("max").get<double>(),
                           e.at("constant").get<bool>()});
    r.categories = j.at("categories").get<std::vector<std::vector<std::string>>>();
    return r;
  }
};

inline FeatureRanges compute_ranges(const Dataset& train) {
  train.validate();
  const std::size_t m = train.n_features();
  FeatureRanges out;
  out.numeric.assign(m, NumericRange{});
  out.categories.assign(m, {});
  for (std::size_t j = 0; j < m; ++j) {
    const auto kind = train.schema.features[j].kind;
    if (kind == FeatureKind::Numeric) {
      double lo = numeric_value(train.rows[0][j]);
      double hi = lo;
      for (const auto& r : train.rows) {
        const double v = numeric_value(r[j]);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      out.numeric[j] = {lo, hi, lo == hi};
    } else if (kind == FeatureKind::Categorical) {
      auto& cats = out.categories[j];
      for (const auto& r : train.rows) {
        const auto& label = label_value(r[j]);
        if (std::find(cats.begin(), cats.end(), label) == cats.end()) cats.push_back(label);
      }
    }
  }
  return out;
}

struct EncodedInstance {
  std::vector<double> values;        // each in [0,1]
  std::vector<bool> unseen_category; // label absent from training data
  bool any_unseen = false;
};

// Normalizes one raw row against training ranges. Numeric maps to
// (v-min)/(max-min) clamped to [0,1] (constant features to 0), binary passes
// through, categorical maps to ordinal index / (|categories|-1). Unseen labels
// encode as 1.0 and are flagged so retrieval can treat them as maximally far.
inline EncodedInstance encode_instance(const Row& row, const FeatureSchema& schema,
                                       const FeatureRanges& ranges) {
  const std::size_t m = schema.size();
  if (row.size() != m) throw ValidationError("encode: row width does not match schema");
  EncodedInstance out;
  out.values.resize(m);
  out.unseen_category.assign(m, false);
  for (std::size_t j = 0; j < m; ++j) {
    switch (schema.features[j].kind) {
      case FeatureKind::Numeric: {
        const auto& r = ranges.numeric[j];
        if (r.constant) {
          out.values[j] = 0.0;
        } else {
          const double t = (numeric_value(row[j]) - r.min) / (r.max - r.min);
          out.values[j] = std::clamp(t, 0.0, 1.0);
        }
        break;
      }
      case FeatureKind::Binary:
        out.values[j] = numeric_value(row[j]);
        break;
      case FeatureKind::Categorical: {
        const auto idx = ranges.category_index(j, label_value(row[j]));
        const std::size_t k = ranges.categories[j].size();
        if (!idx) {
          out.values[j] = 1.0;
          out.unseen_category[j] = true;
          out.any_unseen = true;
        } else if (k <= 1) {
          out.values[j] = 0.0;
        } else {
          out.values[j] = static_cast<double>(*idx) / static_cast<double>(k - 1);
        }
        break;
      }
    }
  }
  return out;
}

inline std::vector<std::vector<double>> encode_rows(const Dataset& data,
                                                    const FeatureRanges& ranges) {
  std::vector<std::vector<double>> out;
  out.reserve(data.n_rows());
  for (const auto& r : data.rows)
    out.push_back(encode_instance(r, data.schema, ranges).values);
  return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion. Comma separated, '.' decimal mark, header row required.
// Missing values and unparsable cells are rejected with their file location
// (1-based line numbers; line 1 is the header).

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  for (auto& cell : cells) {
    const auto b = cell.find_first_not_of(" \t");
    if (b == std::string::npos) {
      cell.clear();
      continue;
    }
    const auto e = cell.find_last_not_of(" \t");
    cell = cell.substr(b, e - b + 1);
  }
  return cells;
}

}  // namespace detail

inline Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema) {
  schema.validate();
  const std::string text = read_text_file(path);
  std::vector<std::string> lines;
  {
    std::string cur;
    for (char c : text) {
      if (c == '\n') {
        lines.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) lines.push_back(cur);
  }
  while (!lines.empty() && detail::split_csv_line(lines.back()).size() == 1 &&
         detail::split_csv_line(lines.back())[0].empty())
    lines.pop_back();
  if (lines.empty()) throw ValidationError(path.string() + ": empty file");

  const auto header = detail::split_csv_line(lines[0]);
  const std::size_t m = schema.size();
  std::vector<std::size_t> col_of_feature(m);
  std::size_t col_of_target = 0;
  {
    std::map<std::string, std::size_t> by_name;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c].empty())
        throw ValidationError(path.string() + ": empty header cell at column " +
                              std::to_string(c + 1));
      if (!by_name.emplace(header[c], c).second)
        throw ValidationError(path.string() + ": duplicate column '" + header[c] + "'");
    }
    for (std::size_t j = 0; j < m; ++j) {
      const auto it = by_name.find(schema.features[j].name);
      if (it == by_name.end())
        throw ValidationError(path.string() + ": missing column '" + schema.features[j].name + "'");
      col_of_feature[j] = it->second;
      by_name.erase(it);
    }
    const auto it = by_name.find(schema.target_name);
    if (it == by_name.end())
      throw ValidationError(path.string() + ": missing column '" + schema.target_name + "'");
    col_of_target = it->second;
    by_name.erase(it);
    if (!by_name.empty())
      throw ValidationError(path.string() + ": unknown column '" + by_name.begin()->first + "'");
  }
  if (lines.size() < 2) throw ValidationError(path.string() + ": no data rows");

  Dataset out;
  out.schema = schema;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t file_row = li + 1;  // 1-based, header included
    const auto cells = detail::split_csv_line(lines[li]);
    if (cells.size() != header.size())
      throw ValidationError(path.string() + ": row " + std::to_string(file_row) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
    auto cell_at = [&](std::size_t col, const std::string& col_name) -> const std::string& {
      const auto& cell = cells[col];
      if (cell.empty())
        throw ValidationError(path.string() + ": missing value at row " +
                              std::to_string(file_row) + ", column '" + col_name + "'");
      return cell;
    };
    Row row(m);
    for (std::size_t j = 0; j < m; ++j) {
      const auto& name = schema.features[j].name;
      const std::string& cell = cell_at(col_of_feature[j], name);
      switch (schema.features[j].kind) {
        case FeatureKind::Numeric: {
          double v;
          if (!parse_double(cell, v) || !std::isfinite(v))
            throw ValidationError(path.string() + ": non-numeric value '" + cell + "' at row " +
                                  std::to_string(file_row) + ", column '" + name + "'");
          row[j] = v;
          break;
        }
        case FeatureKind::Binary: {
          if (cell == "0")
            row[j] = 0.0;
          else if (cell == "1")
            row[j] = 1.0;
          else
            throw ValidationError(path.string() + ": binary value must be 0 or 1, got '" + cell +
                                  "' at row " + std::to_string(file_row) + ", column '" + name + "'");
          break;
        }
        case FeatureKind::Categorical:
          row[j] = cell;
          break;
      }
    }
    double y;
    const std::string& ycell = cell_at(col_of_target, schema.target_name);
    if (!parse_double(ycell, y) || !std::isfinite(y))
      throw ValidationError(path.string() + ": non-numeric target '" + ycell + "' at row " +
                            std::to_string(file_row) + ", column '" + schema.target_name + "'");
    out.rows.push_back(std::move(row));
    out.targets.push_back(y);
  }
  out.validate();
  return out;
}

inline std::string to_csv(const Dataset& data) {
  std::string out;
  for (const auto& f : data.schema.features) {
    out += f.name;
    out += ',';
  }
  out += data.schema.target_name;
  out += '\n';
  for (std::size_t i = 0; i < data.n_rows(); ++i) {
    for (std::size_t j = 0; j < data.n_features(); ++j) {
      const auto& v = data.rows[i][j];
      if (std::holds_alternative<double>(v))
        out += format_double(numeric_value(v));
      else
        out += label_value(v);
      out += ',';
    }
    out += format_double(data.targets[i]);
    out += '\n';
  }
  return out;
}

inline void save_csv(const std::filesystem::path& path, const Dataset& data) {
  write_text_file(path, to_csv(data));
}

// ---------------------------------------------------------------------------
// Splitting.

struct SplitSpec {
  std::optional<double> train_fraction;  // exclusive with explicit lists
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

namespace detail {

inline Dataset take_rows(const Dataset& data, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.schema = data.schema;
  out.rows.reserve(idx.size());
  out.targets.reserve(idx.size());
  for (auto i : idx) {
    out.rows.push_back(data.rows[i]);
    out.targets.push_back(data.targets[i]);
  }
  return out;
}

}  // namespace detail

// Deterministic given the seed. With a fraction, rows are shuffled once and
// the first floor(fraction*n) become training rows; both sides keep original
// row order. Explicit index lists must be disjoint and in range.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& data, const SplitSpec& spec,
                                                 std::uint64_t seed) {
  data.validate();
  const std::size_t n = data.n_rows();
  std::vector<std::size_t> train_idx, test_idx;
  if (spec.train_fraction) {
    const double f = *spec.train_fraction;
    if (!(f > 0.0 && f < 1.0))
      throw ValidationError("split: train_fraction must be in (0,1), got " + format_double(f));
    if (!spec.train_indices.empty() || !spec.test_indices.empty())
      throw ValidationError("split: give a fraction or index lists, not both");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    const auto train_count = static_cast<std::size_t>(std::floor(f * static_cast<double>(n)));
    if (train_count == 0 || train_count >= n)
      throw ValidationError("split: fraction " + format_double(f) + " leaves an empty side at n=" +
                            std::to_string(n));
    train_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_count));
    test_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(train_count), order.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
  } else {
    train_idx = spec.train_indices;
    test_idx = spec.test_indices;
    if (train_idx.empty() || test_idx.empty())
      throw ValidationError("split: empty side of split");
    std::set<std::size_t> seen;
    for (auto i : train_idx) {
      if (i >= n) throw ValidationError("split: train index out of range");
      if (!seen.insert(i).second) throw ValidationError("split: duplicate index " + std::to_string(i));
    }
    for (auto i : test_idx) {
      if (i >= n) throw ValidationError("split: test index out of range");
      if (!seen.insert(i).second)
        throw ValidationError("split: index " + std::to_string(i) + " present on both sides");
    }
  }
  return {detail::take_rows(data, train_idx), detail::take_rows(data, test_idx)};
}

// ---------------------------------------------------------------------------
// Synthetic data. Stand-in for a proprietary flight-delay feed: one dominant
// previous-leg-delay signal plus minor numeric/binary/categorical effects with
// a known additive ground truth.

struct SyntheticFeature {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;
  double min = 0.0, max = 1.0;              // numeric
  double p_one = 0.5;                        // binary
  std::vector<std::string> categories;       // categorical
  double coefficient = 0.0;                  // minutes contributed at unit effect
};

struct GeneratorConfig {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  double noise_sigma = 3.0;
  double base_offset = 5.0;
  std::map<std::string, double> coefficient_overrides;
  std::vector<SyntheticFeature> features;  // empty -> built-in flight-delay set

  static GeneratorConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

inline std::vector<SyntheticFeature> default_synthetic_features() {
  return {
      {"prev_leg_delay", FeatureKind::Numeric, 0.0, 180.0, 0, {}, 60.0},
      {"taxi_out_minutes", FeatureKind::Numeric, 5.0, 40.0, 0, {}, 18.0},
      {"turnaround_minutes", FeatureKind::Numeric, 20.0, 120.0, 0, {}, 15.0},
      {"wind_speed_kt", FeatureKind::Numeric, 0.0, 30.0, 0, {}, 12.0},
      {"is_peak_hour", FeatureKind::Binary, 0, 0, 0.3, {}, 10.0},
      {"visibility_km", FeatureKind::Numeric, 0.2, 10.0, 0, {}, 8.0},
      {"airline", FeatureKind::Categorical, 0, 0, 0, {"AA", "BB", "CC", "DD", "EE"}, 6.0},
      {"is_weekend", FeatureKind::Binary, 0, 0, 0.28, {}, 4.0},
      {"departure_region", FeatureKind::Categorical, 0, 0, 0, {"north", "south", "east", "west"}, 3.0},
      {"gate_changes", FeatureKind::Numeric, 0.0, 5.0, 0, {}, 2.0},
  };
}

inline GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig cfg;
  if (j.contains("n")) cfg.n = j.at("n").get<std::size_t>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("noise_sigma")) cfg.noise_sigma = j.at("noise_sigma").get<double>();
  if (j.contains("base_offset")) cfg.base_offset = j.at("base_offset").get<double>();
  if (j.contains("coefficient_overrides") && !j.at("coefficient_overrides").is_null())
    cfg.coefficient_overrides =
        j.at("coefficient_overrides").get<std::map<std::string, double>>();
  if (j.contains("features") && !j.at("features").is_null()) {
    for (const auto& jf : j.at("features")) {
      SyntheticFeature f;
      f.name = jf.at("name").get<std::string>();
      f.kind = feature_kind_from_string(jf.at("kind").get<std::string>());
      f.coefficient = jf.at("coefficient").get<double>();
      if (f.kind == FeatureKind::Numeric) {
        f.min = jf.at("min").get<double>();
        f.max = jf.at("max").get<double>();
      } else if (f.kind == FeatureKind::Binary) {
        f.p_one = jf.value("p_one", 0.5);
      } else {
        f.categories = jf.at("categories").get<std::vector<std::string>>();
      }
      cfg.features.push_back(std::move(f));
    }
  }
  return cfg;
}

inline nlohmann::json GeneratorConfig::to_json() const {
  nlohmann::json j{{"n", n},
                   {"seed", seed},
                   {"noise_sigma", noise_sigma},
                   {"base_offset", base_offset}};
  if (!coefficient_overrides.empty()) j["coefficient_overrides"] = coefficient_overrides;
  if (!features.empty()) {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : features) {
      nlohmann::json jf{{"name", f.name}, {"kind", to_string(f.kind)}, {"coefficient", f.coefficient}};
      if (f.kind == FeatureKind::Numeric) {
        jf["min"] = f.min;
        jf["max"] = f.max;
      } else if (f.kind == FeatureKind::Binary) {
        jf["p_one"] = f.p_one;
      } else {
        jf["categories"] = f.categories;
      }
      feats.push_back(std::move(jf));
    }
    j["features"] = std::move(feats);
  }
  return j;
}

struct GeneratorTruth {
  std::vector<std::string> feature_names;
  std::vector<double> coefficients;      // minutes at unit effect, schema order
  std::vector<std::size_t> ranking;      // feature indices by |coefficient| desc, ties by index
  double base_offset = 0.0;
  double noise_sigma = 0.0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"feature_names", feature_names},
                          {"coefficients", coefficients},
                          {"ranking", ranking},
                          {"base_offset", base_offset},
                          {"noise_sigma", noise_sigma}};
  }
};

struct SyntheticData {
  Dataset data;
  GeneratorTruth truth;
};

// Target = base + sum_j coef_j * effect_j + N(0, noise_sigma), where effect is
// the feature's unit-interval position: numeric (v-min)/(max-min), binary the
// bit, categorical index/(|categories|-1).
inline SyntheticData generate_synthetic(const GeneratorConfig& cfg) {
  if (cfg.n == 0) throw ValidationError("generator: n must be >= 1");
  auto feats = cfg.features.empty() ? default_synthetic_features() : cfg.features;
  if (feats.empty()) throw ValidationError("generator: empty feature list");
  for (auto& f : feats) {
    const auto it = cfg.coefficient_overrides.find(f.name);
    if (it != cfg.coefficient_overrides.end()) f.coefficient = it->second;
    if (f.kind == FeatureKind::Numeric && !(f.min < f.max))
      throw ValidationError("generator: feature '" + f.name + "' needs min < max");
    if (f.kind == FeatureKind::Categorical && f.categories.empty())
      throw ValidationError("generator: feature '" + f.name + "' needs categories");
  }
  for (const auto& [name, _] : cfg.coefficient_overrides) {
    if (std::find_if(feats.begin(), feats.end(),
                     [&](const SyntheticFeature& f) { return f.name == name; }) == feats.end())
      throw ValidationError("generator: coefficient override for unknown feature '" + name + "'");
  }

  const std::size_t m = feats.size();
  SyntheticData out;
  out.data.schema.target_name = "delay_minutes";
  for (const auto& f : feats) {
    FeatureSpec spec{f.name, f.kind, std::nullopt};
    if (f.kind == FeatureKind::Numeric) spec.declared_range = std::make_pair(f.min, f.max);
    out.data.schema.features.push_back(std::move(spec));
  }
  out.data.schema.validate();

  Rng rng(cfg.seed);
  out.data.rows.reserve(cfg.n);
  out.data.targets.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    Row row(m);
    double y = cfg.base_offset;
    for (std::size_t j = 0; j < m; ++j) {
      const auto& f = feats[j];
      double effect = 0.0;
      switch (f.kind) {
        case FeatureKind::Numeric: {
          const double u = rng.uniform();
          row[j] = f.min + u * (f.max - f.min);
          effect = u;
          break;
        }
        case FeatureKind::Binary: {
          const double b = rng.bernoulli(f.p_one) ? 1.0 : 0.0;
          row[j] = b;
          effect = b;
          break;
        }
        case FeatureKind::Categorical: {
          const std::size_t k = f.categories.size();
          const auto idx = static_cast<std::size_t>(rng.below(k));
          row[j] = f.categories[idx];
          effect = k > 1 ? static_cast<double>(idx) / static_cast<double>(k - 1) : 0.0;
          break;
        }
      }
      y += f.coefficient * effect;
    }
    if (cfg.noise_sigma > 0.0) y += rng.normal(0.0, cfg.noise_sigma);
    out.data.rows.push_back(std::move(row));
    out.data.targets.push_back(y);
  }

  out.truth.base_offset = cfg.base_offset;
  out.truth.noise_sigma = cfg.noise_sigma;
  for (const auto& f : feats) {
    out.truth.feature_names.push_back(f.name);
    out.truth.coefficients.push_back(f.coefficient);
  }
  out.truth.ranking.resize(m);
  for (std::size_t j = 0; j < m; ++j) out.truth.ranking[j] = j;
  std::stable_sort(out.truth.ranking.begin(), out.truth.ranking.end(),
                   [&](std::size_t a, std::size_t b) {
                     return std::abs(out.truth.coefficients[a]) >
                            std::abs(out.truth.coefficients[b]);
                   });
  return out;
}

// Per-feature training statistics for perturbation-based explainers.
struct TrainStats {
  std::vector<double> mean;                                   // numeric
  std::vector<double> stddev;                                 // numeric, population form
  std::vector<double> p_one;                                  // binary
  std::vector<std::vector<std::pair<std::string, double>>> marginals;  // categorical, first-appearance order
};

inline TrainStats compute_train_stats(const Dataset& train, const FeatureRanges& ranges) {
  train.validate();
  const std::size_t m = train.n_features();
  const auto n = static_cast<double>(train.n_rows());
  TrainStats s;
  s.mean.assign(m, 0.0);
  s.stddev.assign(m, 0.0);
  s.p_one.assign(m, 0.0);
  s.marginals.assign(m, {});
  for (std::size_t j = 0; j < m; ++j) {
    switch (train.schema.features[j].kind) {
      case FeatureKind::Numeric: {
        double sum = 0.0;
        for (const auto& r : train.rows) sum += numeric_value(r[j]);
        const double mu = sum / n;
        double ss = 0.0;
        for (const auto& r : train.rows) {
          const double d = numeric_value(r[j]) - mu;
          ss += d * d;
        }
        s.mean[j] = mu;
        s.stddev[j] = std::sqrt(ss / n);
        break;
      }
      case FeatureKind::Binary: {
        double ones = 0.0;
        for (const auto& r : train.rows) ones += numeric_value(r[j]);
        s.p_one[j] = ones / n;
        break;
      }
      case FeatureKind::Categorical: {
        for (const auto& label : ranges.categories[j]) {
          double cnt = 0.0;
          for (const auto& r : train.rows)
            if (label_value(r[j]) == label) cnt += 1.0;
          s.marginals[j].emplace_back(label, cnt / n);
        }
        break;
      }
    }
  }
  return s;
}

}  // namespace xcbr
