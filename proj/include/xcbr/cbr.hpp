#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xcbr/dataset.hpp"
#include "xcbr/error.hpp"

namespace xcbr::cbr {

// Per-feature distance in [0,1]. Symbolic kinds: 0 when equal, 1 otherwise.
// Numeric: range-normalized absolute difference, clamped; a constant training
// range degenerates to the symbolic rule.
inline double local_distance(FeatureKind kind, const FeatureValue& a, const FeatureValue& b,
                             const NumericRange& range) {
  switch (kind) {
    case FeatureKind::Numeric: {
      const double va = numeric_value(a);
      const double vb = numeric_value(b);
      if (range.constant) return va == vb ? 0.0 : 1.0;
      return std::clamp(std::abs(va - vb) / (range.max - range.min), 0.0, 1.0);
    }
    case FeatureKind::Binary:
      return numeric_value(a) == numeric_value(b) ? 0.0 : 1.0;
    case FeatureKind::Categorical:
      return label_value(a) == label_value(b) ? 0.0 : 1.0;
  }
  return 1.0;
}

struct Retrieval {
  std::vector<std::size_t> indices;  // distinct, by ascending distance
  std::vector<double> distances;     // non-decreasing
  std::vector<double> targets;
  std::size_t k = 0;
};

struct CaseBase {
  FeatureSchema schema;
  FeatureRanges ranges;
  std::vector<double> weights;  // normalized, sum 1
  std::vector<Row> cases;
  std::vector<double> targets;
  std::size_t default_k = 3;

  std::size_t size() const { return cases.size(); }

  void validate() const {
    schema.validate();
    if (cases.size() != targets.size()) throw ValidationError("case base: case/target mismatch");
    if (weights.size() != schema.size()) throw ValidationError("case base: weight width mismatch");
    double sum = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw ValidationError("case base: negative weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw ValidationError("case base: weights must sum to 1, got " + format_double(sum));
  }
};

inline CaseBase build_case_base(const Dataset& train, std::span<const double> weights,
                                std::size_t default_k = 3) {
  train.validate();
  if (weights.size() != train.n_features())
    throw ValidationError("case base: weight vector width mismatch");
  CaseBase cb;
  cb.schema = train.schema;
  cb.ranges = compute_ranges(train);
  cb.weights.assign(weights.begin(), weights.end());
  cb.cases = train.rows;
  cb.targets = train.targets;
  cb.default_k = default_k;
  cb.validate();
  return cb;
}

// Weighted Euclidean over local distances: sqrt(sum_j w_j * d_j^2), in [0,1]
// for normalized weights.
inline double case_distance(const Row& a, const Row& b, const FeatureSchema& schema,
                            std::span<const double> weights, const FeatureRanges& ranges) {
  double acc = 0.0;
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (weights[j] == 0.0) continue;
    const double d = local_distance(schema.features[j].kind, a[j], b[j], ranges.numeric[j]);
    acc += weights[j] * d * d;
  }
  return std::sqrt(acc);
}

inline Retrieval retrieve(const CaseBase& cb, const Row& query, std::size_t k,
                          std::optional<std::size_t> exclude = std::nullopt) {
  if (query.size() != cb.schema.size())
    throw ValidationError("retrieve: query width does not match schema");
  const std::size_t n = cb.size();
  const std::size_t eligible = n - (exclude && *exclude < n ? 1 : 0);
  if (k < 1) throw ValidationError("retrieve: k must be >= 1");
  if (k > eligible)
    throw ValidationError("retrieve: k=" + std::to_string(k) + " exceeds " +
                          std::to_string(eligible) + " eligible cases");

  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(eligible);
  for (std::size_t i = 0; i < n; ++i) {
    if (exclude && *exclude == i) continue;
    scored.emplace_back(case_distance(query, cb.cases[i], cb.schema, cb.weights, cb.ranges), i);
  }
  // ties break toward the lowest case index
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end());

  Retrieval out;
  out.k = k;
  for (std::size_t r = 0; r < k; ++r) {
    out.indices.push_back(scored[r].second);
    out.distances.push_back(scored[r].first);
    out.targets.push_back(cb.targets[scored[r].second]);
  }
  return out;
}

// Mean of the k least-distant neighbor targets.
inline double predict(const CaseBase& cb, const Row& query, std::size_t k = 3,
                      std::optional<std::size_t> exclude = std::nullopt) {
  const auto r = retrieve(cb, query, k, exclude);
  return std::accumulate(r.targets.begin(), r.targets.end(), 0.0) /
         static_cast<double>(r.targets.size());
}

// Leave-one-out: each stored case predicted from all the others.
inline std::vector<double> loo_predictions(const CaseBase& cb, std::size_t k = 3) {
  if (cb.size() < k + 1)
    throw ValidationError("loo: need at least k+1 cases, have " + std::to_string(cb.size()));
  std::vector<double> out(cb.size());
  for (std::size_t i = 0; i < cb.size(); ++i) out[i] = predict(cb, cb.cases[i], k, i);
  return out;
}

// Applies raw weight edits by feature name, then renormalizes. The source
// case base is untouched.
inline CaseBase override_weights(const CaseBase& cb, const std::map<std::string, double>& edits) {
  CaseBase out = cb;
  for (const auto& [name, w] : edits) {
    if (w < 0.0)
      throw ValidationError("override_weights: negative weight for '" + name + "'");
    out.weights[cb.schema.index_of(name)] = w;
  }
  const double total = std::accumulate(out.weights.begin(), out.weights.end(), 0.0);
  if (total <= 0.0) throw ValidationError("override_weights: all weights zero");
  for (auto& w : out.weights) w /= total;
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Persistence.

inline constexpr int kCaseBaseFormatVersion = 1;

inline nlohmann::json value_to_json(const FeatureValue& v) {
  if (std::holds_alternative<double>(v)) return numeric_value(v);
  return label_value(v);
}

inline FeatureValue value_from_json(const nlohmann::json& j, FeatureKind kind) {
  if (kind == FeatureKind::Categorical) return j.get<std::string>();
  return j.get<double>();
}

inline nlohmann::json to_json(const CaseBase& cb, const std::string& config_digest = "") {
  nlohmann::json cases = nlohmann::json::array();
  for (std::size_t i = 0; i < cb.size(); ++i) {
    nlohmann::json values = nlohmann::json::array();
    for (const auto& v : cb.cases[i]) values.push_back(value_to_json(v));
    cases.push_back({{"values", std::move(values)}, {"target", cb.targets[i]}});
  }
  nlohmann::json j{{"format_version", kCaseBaseFormatVersion},
                   {"kind", "case_base"},
                   {"schema", cb.schema.to_json()},
                   {"ranges", cb.ranges.to_json()},
                   {"weights", cb.weights},
                   {"default_k", cb.default_k},
                   {"cases", std::move(cases)}};
  if (!config_digest.empty()) j["config_digest"] = config_digest;
  return j;
}

inline CaseBase from_json(const nlohmann::json& j) {
  if (!j.contains("format_version") || j.at("format_version").get<int>() != kCaseBaseFormatVersion)
    throw ValidationError("case base: unsupported format version");
  if (j.value("kind", "") != "case_base")
    throw ValidationError("case base: wrong artifact kind");
  CaseBase cb;
  cb.schema = FeatureSchema::from_json(j.at("schema"));
  cb.ranges = FeatureRanges::from_json(j.at("ranges"));
  cb.weights = j.at("weights").get<std::vector<double>>();
  cb.default_k = j.at("default_k").get<std::size_t>();
  for (const auto& jc : j.at("cases")) {
    Row row;
    const auto& values = jc.at("values");
    for (std::size_t k = 0; k < values.size(); ++k)
      row.push_back(value_from_json(values[k], cb.schema.features[k].kind));
    cb.cases.push_back(std::move(row));
    cb.targets.push_back(jc.at("target").get<double>());
  }
  cb.validate();
  return cb;
}

}  // namespace xcbr::cbr
