#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xcbr/dataset.hpp"
#include "xcbr/error.hpp"
#include "xcbr/rng.hpp"

namespace xcbr::gbdt {

struct Hyperparams {
  double learning_rate = 0.1;
  int max_depth = 7;
  double min_child_weight = 1.0;  // minimum hessian sum per child (= instance count here)
  double subsample = 0.5;
  double colsample_bytree = 0.5;
  int n_estimators = 500;
  double reg_lambda = 1.0;
  double min_split_gain = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0 && learning_rate <= 1.0))
      throw ValidationError("gbdt: learning_rate must be in (0,1]");
    if (max_depth < 1) throw ValidationError("gbdt: max_depth must be >= 1");
    if (!(subsample > 0.0 && subsample <= 1.0))
      throw ValidationError("gbdt: subsample must be in (0,1]");
    if (!(colsample_bytree > 0.0 && colsample_bytree <= 1.0))
      throw ValidationError("gbdt: colsample_bytree must be in (0,1]");
    if (n_estimators < 0) throw ValidationError("gbdt: n_estimators must be >= 0");
    if (reg_lambda < 0.0) throw ValidationError("gbdt: reg_lambda must be >= 0");
    if (min_child_weight < 0.0) throw ValidationError("gbdt: min_child_weight must be >= 0");
    if (min_split_gain < 0.0) throw ValidationError("gbdt: min_split_gain must be >= 0");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"learning_rate", learning_rate},
                          {"max_depth", max_depth},
                          {"min_child_weight", min_child_weight},
                          {"subsample", subsample},
                          {"colsample_bytree", colsample_bytree},
                          {"n_estimators", n_estimators},
                          {"reg_lambda", reg_lambda},
                          {"min_split_gain", min_split_gain},
                          {"seed", seed}};
  }

  static Hyperparams from_json(const nlohmann::json& j) {
    Hyperparams p;
    if (j.contains("learning_rate")) p.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("max_depth")) p.max_depth = j.at("max_depth").get<int>();
    if (j.contains("min_child_weight")) p.min_child_weight = j.at("min_child_weight").get<double>();
    if (j.contains("subsample")) p.subsample = j.at("subsample").get<double>();
    if (j.contains("colsample_bytree")) p.colsample_bytree = j.at("colsample_bytree").get<double>();
    if (j.contains("n_estimators")) p.n_estimators = j.at("n_estimators").get<int>();
    if (j.contains("reg_lambda")) p.reg_lambda = j.at("reg_lambda").get<double>();
    if (j.contains("min_split_gain")) p.min_split_gain = j.at("min_split_gain").get<double>();
    if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
    p.validate();
    return p;
  }
};

// Second-order gain of a candidate split under L2 leaf regularization.
inline double split_gain(double g_left, double h_left, double g_right, double h_right,
                         double reg_lambda) {
  const double g_total = g_left + g_right;
  const double h_total = h_left + h_right;
  return 0.5 * (g_left * g_left / (h_left + reg_lambda) +
                g_right * g_right / (h_right + reg_lambda) -
                g_total * g_total / (h_total + reg_lambda));
}

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double leaf_value = 0.0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // node 0 is the root

  double value_for(std::span<const double> x) const {
    int id = 0;
    while (!nodes[static_cast<std::size_t>(id)].is_leaf()) {
      const auto& nd = nodes[static_cast<std::size_t>(id)];
      id = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(id)].leaf_value;
  }

  bool operator==(const Tree&) const = default;
};

struct Model {
  Hyperparams params;
  double base_score = 0.0;
  std::size_t n_features = 0;
  std::vector<std::string> feature_names;
  std::vector<Tree> trees;
  std::vector<double> importance_raw;         // total split gain per feature
  std::vector<double> importance_normalized;  // sums to 1
  bool importance_uniform_fallback = false;   // no splits anywhere -> uniform 1/m
  // Encoder snapshot so a persisted model can score raw rows on its own.
  FeatureSchema schema;
  FeatureRanges ranges;

  double predict(std::span<const double> x_encoded) const {
    if (x_encoded.size() != n_features)
      throw ValidationError("gbdt predict: expected " + std::to_string(n_features) +
                            " features, got " + std::to_string(x_encoded.size()));
    double out = base_score;
    for (const auto& t : trees) out += t.value_for(x_encoded);
    return out;
  }
};

inline std::pair<std::vector<double>, bool> normalize_importance(
    const std::vector<double>& raw) {
  const std::size_t m = raw.size();
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  if (total <= 0.0) {
    return {std::vector<double>(m, 1.0 / static_cast<double>(m)), true};
  }
  std::vector<double> out(m);
  for (std::size_t j = 0; j < m; ++j) out[j] = raw[j] / total;
  return {out, false};
}

inline const std::vector<double>& feature_importance(const Model& model) {
  return model.importance_normalized;
}

struct FitDiagnostics {
  std::vector<double> train_loss;  // mean squared error after each round
};

// Squared-error boosting: gradient = prediction - target, hessian = 1.
// Exact greedy split search over per-node sorted unique values with midpoint
// thresholds; rows/features subsampled per tree from the given seed. Equal
// gains resolve to the lowest feature index, then the lowest threshold.
inline Model fit(const Dataset& train, const Hyperparams& params,
                 FitDiagnostics* diagnostics = nullptr) {
  params.validate();
  train.validate();
  const std::size_t n = train.n_rows();
  const std::size_t m = train.n_features();

  Model model;
  model.params = params;
  model.n_features = m;
  model.schema = train.schema;
  for (const auto& f : train.schema.features) model.feature_names.push_back(f.name);
  model.ranges = compute_ranges(train);

  // Column-major encoded matrix and one global argsort per feature.
  std::vector<std::vector<double>> columns(m, std::vector<double>(n));
  {
    for (std::size_t i = 0; i < n; ++i) {
      const auto enc = encode_instance(train.rows[i], train.schema, model.ranges);
      for (std::size_t j = 0; j < m; ++j) columns[j][i] = enc.values[j];
    }
  }
  std::vector<std::vector<std::uint32_t>> sorted_idx(m);
  for (std::size_t j = 0; j < m; ++j) {
    auto& order = sorted_idx[j];
    order.resize(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
    const auto& col = columns[j];
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (col[a] != col[b]) return col[a] < col[b];
      return a < b;
    });
  }

  model.base_score =
      std::accumulate(train.targets.begin(), train.targets.end(), 0.0) / static_cast<double>(n);
  std::vector<double> preds(n, model.base_score);
  std::vector<double> grad(n, 0.0);
  model.importance_raw.assign(m, 0.0);

  Rng rng(params.seed);
  constexpr int kNoNode = -1;
  std::vector<int> node_of_row(n);

  struct BuildNode {
    double g_sum = 0.0;
    double h_sum = 0.0;
    int depth = 0;
    // best candidate split for the current level
    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    TreeNode out;  // finalized node
  };

  for (int round = 0; round < params.n_estimators; ++round) {
    // Row subsample.
    std::fill(node_of_row.begin(), node_of_row.end(), kNoNode);
    double root_g = 0.0, root_h = 0.0;
    if (params.subsample < 1.0) {
      auto count = static_cast<std::size_t>(
          std::floor(params.subsample * static_cast<double>(n)));
      count = std::max<std::size_t>(1, count);
      for (auto i : rng.sample_without_replacement(n, count)) node_of_row[i] = 0;
    } else {
      std::fill(node_of_row.begin(), node_of_row.end(), 0);
    }
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] = preds[i] - train.targets[i];
      if (node_of_row[i] == 0) {
        root_g += grad[i];
        root_h += 1.0;
      }
    }

    // Column subsample, ascending so the feature-index tie rule falls out of
    // the scan order.
    std::vector<std::size_t> feats;
    if (params.colsample_bytree < 1.0) {
      auto count = static_cast<std::size_t>(
          std::floor(params.colsample_bytree * static_cast<double>(m)));
      count = std::max<std::size_t>(1, count);
      feats = rng.sample_without_replacement(m, count);
      std::sort(feats.begin(), feats.end());
    } else {
      feats.resize(m);
      std::iota(feats.begin(), feats.end(), std::size_t{0});
    }

    std::vector<BuildNode> nodes(1);
    nodes[0].g_sum = root_g;
    nodes[0].h_sum = root_h;
    nodes[0].depth = 0;

    std::size_t level_begin = 0;
    std::size_t level_end = 1;
    while (level_begin < level_end) {
      const std::size_t width = level_end - level_begin;
      const bool can_split = nodes[level_begin].depth < params.max_depth;
      if (can_split) {
        std::vector<double> gl(width), hl(width), last_val(width);
        std::vector<char> has_prev(width);
        for (auto j : feats) {
          std::fill(gl.begin(), gl.end(), 0.0);
          std::fill(hl.begin(), hl.end(), 0.0);
          std::fill(has_prev.begin(), has_prev.end(), 0);
          const auto& col = columns[j];
          for (auto idx : sorted_idx[j]) {
            const int nd = node_of_row[idx];
            if (nd < static_cast<int>(level_begin) || nd >= static_cast<int>(level_end)) continue;
            const auto slot = static_cast<std::size_t>(nd) - level_begin;
            const double v = col[idx];
            if (has_prev[slot] && v != last_val[slot]) {
              auto& bn = nodes[static_cast<std::size_t>(nd)];
              const double gr = bn.g_sum - gl[slot];
              const double hr = bn.h_sum - hl[slot];
              if (hl[slot] >= params.min_child_weight && hr >= params.min_child_weight) {
                const double gain = split_gain(gl[slot], hl[slot], gr, hr, params.reg_lambda);
                if (gain > params.min_split_gain && gain > bn.best_gain) {
                  bn.best_gain = gain;
                  bn.best_feature = static_cast<int>(j);
                  bn.best_threshold = 0.5 * (last_val[slot] + v);
                }
              }
            }
            gl[slot] += grad[idx];
            hl[slot] += 1.0;
            last_val[slot] = v;
            has_prev[slot] = 1;
          }
        }
      }

      // Apply splits, appending the next level.
      for (std::size_t id = level_begin; id < level_end; ++id) {
        auto& bn = nodes[id];
        if (!can_split || bn.best_feature < 0) {
          bn.out.feature = -1;
          bn.out.leaf_value =
              -params.learning_rate * bn.g_sum / (bn.h_sum + params.reg_lambda);
          continue;
        }
        bn.out.feature = bn.best_feature;
        bn.out.threshold = bn.best_threshold;
        bn.out.left = static_cast<int>(nodes.size());
        bn.out.right = static_cast<int>(nodes.size() + 1);
        model.importance_raw[static_cast<std::size_t>(bn.best_feature)] += bn.best_gain;
        BuildNode child;
        child.depth = bn.depth + 1;
        nodes.push_back(child);
        nodes.push_back(child);
      }
      // Reassign rows of split nodes to their children and accumulate stats.
      for (std::size_t i = 0; i < n; ++i) {
        const int nd = node_of_row[i];
        if (nd < static_cast<int>(level_begin) || nd >= static_cast<int>(level_end)) continue;
        const auto& bn = nodes[static_cast<std::size_t>(nd)];
        if (bn.out.is_leaf()) continue;
        const int child = columns[static_cast<std::size_t>(bn.out.feature)][i] <= bn.out.threshold
                              ? bn.out.left
                              : bn.out.right;
        node_of_row[i] = child;
        nodes[static_cast<std::size_t>(child)].g_sum += grad[i];
        nodes[static_cast<std::size_t>(child)].h_sum += 1.0;
      }
      level_begin = level_end;
      level_end = nodes.size();
    }

    // Store in pre-order so the nested persistence round-trips node for node.
    Tree tree;
    tree.nodes.reserve(nodes.size());
    auto append_preorder = [&](auto&& self, int id) -> int {
      const int new_id = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back(nodes[static_cast<std::size_t>(id)].out);
      if (!tree.nodes[static_cast<std::size_t>(new_id)].is_leaf()) {
        const int left = self(self, nodes[static_cast<std::size_t>(id)].out.left);
        const int right = self(self, nodes[static_cast<std::size_t>(id)].out.right);
        tree.nodes[static_cast<std::size_t>(new_id)].left = left;
        tree.nodes[static_cast<std::size_t>(new_id)].right = right;
      }
      return new_id;
    };
    append_preorder(append_preorder, 0);
    model.trees.push_back(std::move(tree));

    // Boosting update over the full training set.
    const auto& t = model.trees.back();
    double sq = 0.0;
    std::vector<double> row(m);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) row[j] = columns[j][i];
      preds[i] += t.value_for(row);
      const double e = preds[i] - train.targets[i];
      sq += e * e;
    }
    if (diagnostics) diagnostics->train_loss.push_back(sq / static_cast<double>(n));
  }

  auto [norm, fallback] = normalize_importance(model.importance_raw);
  model.importance_normalized = std::move(norm);
  model.importance_uniform_fallback = fallback;
  return model;
}

// ---------------------------------------------------------------------------
// Persistence: versioned JSON with trees as nested nodes.

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json node_to_json(const Tree& t, int id) {
  const auto& nd = t.nodes[static_cast<std::size_t>(id)];
  if (nd.is_leaf()) return nlohmann::json{{"leaf", nd.leaf_value}};
  return nlohmann::json{{"feature", nd.feature},
                        {"threshold", nd.threshold},
                        {"left", node_to_json(t, nd.left)},
                        {"right", node_to_json(t, nd.right)}};
}

inline int node_from_json(const nlohmann::json& j, Tree& t) {
  const int id = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  if (j.contains("leaf")) {
    t.nodes[static_cast<std::size_t>(id)].leaf_value = j.at("leaf").get<double>();
    return id;
  }
  TreeNode nd;
  nd.feature = j.at("feature").get<int>();
  nd.threshold = j.at("threshold").get<double>();
  t.nodes[static_cast<std::size_t>(id)] = nd;
  const int left = node_from_json(j.at("left"), t);
  const int right = node_from_json(j.at("right"), t);
  t.nodes[static_cast<std::size_t>(id)].left = left;
  t.nodes[static_cast<std::size_t>(id)].right = right;
  return id;
}

}  // namespace detail

inline nlohmann::json to_json(const Model& model, const std::string& config_digest = "") {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : model.trees) trees.push_back(detail::node_to_json(t, 0));
  nlohmann::json j{{"format_version", kModelFormatVersion},
                   {"kind", "gbdt_model"},
                   {"hyperparams", model.params.to_json()},
                   {"base_score", model.base_score},
                   {"n_features", model.n_features},
                   {"feature_names", model.feature_names},
                   {"trees", std::move(trees)},
                   {"importance_raw", model.importance_raw},
                   {"importance_normalized", model.importance_normalized},
                   {"importance_uniform_fallback", model.importance_uniform_fallback},
                   {"encoder",
                    {{"schema", model.schema.to_json()}, {"ranges", model.ranges.to_json()}}}};
  if (!config_digest.empty()) j["config_digest"] = config_digest;
  return j;
}

inline Model from_json(const nlohmann::json& j) {
  if (!j.contains("format_version") || j.at("format_version").get<int>() != kModelFormatVersion)
    throw ValidationError("gbdt model: unsupported format version");
  if (j.value("kind", "") != "gbdt_model")
    throw ValidationError("gbdt model: wrong artifact kind");
  Model model;
  model.params = Hyperparams::from_json(j.at("hyperparams"));
  model.base_score = j.at("base_score").get<double>();
  model.n_features = j.at("n_features").get<std::size_t>();
  model.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  for (const auto& jt : j.at("trees")) {
    Tree t;
    detail::node_from_json(jt, t);
    model.trees.push_back(std::move(t));
  }
  model.importance_raw = j.at("importance_raw").get<std::vector<double>>();
  model.importance_normalized = j.at("importance_normalized").get<std::vector<double>>();
  model.importance_uniform_fallback = j.at("importance_uniform_fallback").get<bool>();
  model.schema = FeatureSchema::from_json(j.at("encoder").at("schema"));
  model.ranges = FeatureRanges::from_json(j.at("encoder").at("ranges"));
  for (const auto& t : model.trees)
    for (const auto& nd : t.nodes)
      if (!nd.is_leaf() && nd.feature >= static_cast<int>(model.n_features))
        throw ValidationError("gbdt model: split feature index out of range");
  return model;
}

}  // namespace xcbr::gbdt
