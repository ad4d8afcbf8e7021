#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xcbr/dataset.hpp"
#include "xcbr/error.hpp"
#include "xcbr/linalg.hpp"
#include "xcbr/rng.hpp"

namespace xcbr::explain {

using PredictFn = std::function<double(std::span<const double>)>;

enum class Method { KernelShap, Lime, AdditiveCbr, ExactShapley };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::KernelShap: return "kernelshap";
    case Method::Lime: return "lime";
    case Method::AdditiveCbr: return "additive_cbr";
    case Method::ExactShapley: return "exact_shapley";
  }
  return "kernelshap";
}

inline Method method_from_string(std::string_view s) {
  if (s == "kernelshap") return Method::KernelShap;
  if (s == "lime") return Method::Lime;
  if (s == "additive_cbr") return Method::AdditiveCbr;
  if (s == "exact_shapley") return Method::ExactShapley;
  throw ValidationError("unknown explanation method: " + std::string(s));
}

// An intercept plus per-feature contributions, in the prediction's own unit,
// reconstructing the explained model output.
struct AdditiveExplanation {
  Method method = Method::KernelShap;
  double phi0 = 0.0;
  std::vector<double> phi;
  double explained_prediction = 0.0;
  bool degenerate = false;  // singular regression / collapsed perturbations
};

inline double additive_predict(const AdditiveExplanation& e) {
  double s = e.phi0;
  for (double p : e.phi) s += p;
  return s;
}

struct ShapConfig {
  std::vector<std::vector<double>> background;   // encoded training rows
  std::optional<std::size_t> budget;             // nullopt: enumerate all 2^m-2 coalitions
  std::uint64_t seed = 0;
};

struct LimeConfig {
  std::size_t num_samples = 1000;
  std::optional<double> kernel_width;  // default 0.75 * sqrt(m)
  double ridge_penalty = 1e-3;
  std::uint64_t seed = 0;
};

// Shapley kernel weight for a coalition of size s out of m features. The
// empty and grand coalitions are handled by the intercept and the efficiency
// constraint, not by weights.
inline double shapley_kernel_weight(std::size_t m, std::size_t s) {
  if (s == 0 || s >= m)
    throw ValidationError("shapley kernel weight undefined for coalition size " +
                          std::to_string(s) + " of " + std::to_string(m));
  double binom = 1.0;
  for (std::size_t i = 1; i <= s; ++i)
    binom *= static_cast<double>(m - s + i) / static_cast<double>(i);
  return static_cast<double>(m - 1) /
         (binom * static_cast<double>(s) * static_cast<double>(m - s));
}

namespace detail {

inline double binomial(std::size_t m, std::size_t s) {
  double b = 1.0;
  for (std::size_t i = 1; i <= s; ++i)
    b *= static_cast<double>(m - s + i) / static_cast<double>(i);
  return b;
}

// Mean model output over the background with coalition features taken from x.
inline double coalition_value(const PredictFn& model, std::span<const double> x,
                              const std::vector<std::vector<double>>& background,
                              std::uint64_t mask, std::vector<double>& scratch) {
  const std::size_t m = x.size();
  double sum = 0.0;
  for (const auto& b : background) {
    for (std::size_t j = 0; j < m; ++j)
      scratch[j] = (mask >> j) & 1ULL ? x[j] : b[j];
    sum += model(scratch);
  }
  return sum / static_cast<double>(background.size());
}

// Enumerates all size-s subsets of [0,m) as bitmasks, ascending.
template <typename Fn>
inline void for_each_subset_of_size(std::size_t m, std::size_t s, Fn&& fn) {
  if (s == 0 || s > m) return;
  std::uint64_t mask = (1ULL << s) - 1ULL;
  const std::uint64_t limit = 1ULL << m;
  while (mask < limit) {
    fn(mask);
    // Gosper's hack: next mask with the same popcount.
    const std::uint64_t c = mask & (~mask + 1);
    const std::uint64_t r = mask + c;
    mask = (((r ^ mask) >> 2) / c) | r;
  }
}

struct WeightedCoalitions {
  std::vector<std::uint64_t> masks;
  std::vector<double> weights;
};

// Paired coalition sampling: size levels are fully enumerated from both ends
// while the budget allows; any leftover budget is spent on seeded random
// subsets (always together with their complements) whose occurrence counts are
// rescaled to the kernel mass the unenumerated levels carry.
inline WeightedCoalitions sample_coalitions(std::size_t m, std::size_t budget,
                                            std::uint64_t seed) {
  WeightedCoalitions out;
  std::size_t remaining = budget;
  const std::size_t half = m / 2;
  std::vector<std::size_t> pending_sizes;
  double pending_mass = 0.0;

  for (std::size_t s = 1; s <= half; ++s) {
    const bool paired = s != m - s;
    double count_d = binomial(m, s) * (paired ? 2.0 : 1.0);
    const double mass =
        shapley_kernel_weight(m, s) * binomial(m, s) * (paired ? 2.0 : 1.0);
    if (count_d <= static_cast<double>(remaining)) {
      for_each_subset_of_size(m, s, [&](std::uint64_t mask) {
        out.masks.push_back(mask);
        out.weights.push_back(shapley_kernel_weight(m, s));
        if (paired) {
          const std::uint64_t comp = (~mask) & ((1ULL << m) - 1ULL);
          out.masks.push_back(comp);
          out.weights.push_back(shapley_kernel_weight(m, m - s));
        }
      });
      remaining -= static_cast<std::size_t>(count_d);
    } else {
      pending_sizes.push_back(s);
      pending_mass += mass;
    }
  }
  if (pending_sizes.empty() || remaining == 0) return out;

  // Sample sizes proportionally to their kernel mass.
  std::vector<double> cumulative;
  double acc = 0.0;
  for (auto s : pending_sizes) {
    const bool paired = s != m - s;
    acc += shapley_kernel_weight(m, s) * binomial(m, s) * (paired ? 2.0 : 1.0);
    cumulative.push_back(acc);
  }
  Rng rng(seed);
  std::map<std::uint64_t, double> counts;
  std::size_t drawn = 0;
  std::vector<std::size_t> feature_pool(m);
  while (drawn < remaining) {
    const double u = rng.uniform() * acc;
    std::size_t pick = 0;
    while (pick + 1 < cumulative.size() && u > cumulative[pick]) ++pick;
    const std::size_t s = pending_sizes[pick];
    for (std::size_t i = 0; i < m; ++i) feature_pool[i] = i;
    std::uint64_t mask = 0;
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(m - i));
      std::swap(feature_pool[i], feature_pool[j]);
      mask |= 1ULL << feature_pool[i];
    }
    counts[mask] += 1.0;
    ++drawn;
    if (drawn < remaining) {
      counts[(~mask) & ((1ULL << m) - 1ULL)] += 1.0;
      ++drawn;
    }
  }
  double total_counts = 0.0;
  for (const auto& [mask, c] : counts) total_counts += c;
  for (const auto& [mask, c] : counts) {
    out.masks.push_back(mask);
    out.weights.push_back(pending_mass * c / total_counts);
  }
  return out;
}

// Weighted least squares on coalition indicators with the efficiency
// constraint substituted in: the last feature's contribution is eliminated as
// phi_last = (f(x) - phi0) - sum(others), which makes local accuracy exact by
// construction.
inline AdditiveExplanation solve_constrained(
    std::size_t m, double phi0, double fx, const std::vector<std::uint64_t>& masks,
    const std::vector<double>& weights, const std::vector<double>& values) {
  AdditiveExplanation e;
  e.method = Method::KernelShap;
  e.phi0 = phi0;
  e.explained_prediction = fx;
  e.phi.assign(m, 0.0);
  if (m == 1) {
    e.phi[0] = fx - phi0;
    return e;
  }
  const std::size_t dim = m - 1;
  std::vector<double> a(dim * dim, 0.0);
  std::vector<double> b(dim, 0.0);
  std::vector<double> row(dim);
  for (std::size_t c = 0; c < masks.size(); ++c) {
    const std::uint64_t mask = masks[c];
    const double w = weights[c];
    const double z_last = static_cast<double>((mask >> (m - 1)) & 1ULL);
    const double y = values[c] - phi0 - z_last * (fx - phi0);
    for (std::size_t j = 0; j < dim; ++j)
      row[j] = static_cast<double>((mask >> j) & 1ULL) - z_last;
    for (std::size_t i = 0; i < dim; ++i) {
      if (row[i] == 0.0) continue;
      b[i] += w * y * row[i];
      for (std::size_t j = 0; j < dim; ++j)
        if (row[j] != 0.0) a[i * dim + j] += w * row[i] * row[j];
    }
  }
  std::vector<double> sol;
  const bool clean = linalg::solve_symmetric(std::move(a), std::move(b), dim, sol);
  e.degenerate = !clean;
  double sum = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    e.phi[j] = sol[j];
    sum += sol[j];
  }
  e.phi[m - 1] = (fx - phi0) - sum;
  return e;
}

}  // namespace detail

inline constexpr std::size_t kFullEnumerationLimit = 20;

// Shapley-kernel weighted regression over feature coalitions. FULL budget
// enumerates all 2^m-2 proper coalitions; a finite budget (>= 2m+2) uses
// paired sampling. Coalition values average the model over the background
// with coalition features pinned to x.
inline AdditiveExplanation kernelshap_explain(const PredictFn& model,
                                              std::span<const double> x,
                                              const ShapConfig& cfg) {
  const std::size_t m = x.size();
  if (m == 0) throw ValidationError("kernelshap: zero features");
  if (cfg.background.empty()) throw ValidationError("kernelshap: empty background set");
  for (const auto& b : cfg.background)
    if (b.size() != m) throw ValidationError("kernelshap: background width mismatch");
  if (cfg.budget && *cfg.budget < 2 * m + 2)
    throw ValidationError("kernelshap: budget must be at least 2m+2");
  if (!cfg.budget && m > kFullEnumerationLimit)
    throw ValidationError("kernelshap: full enumeration capped at m <= " +
                          std::to_string(kFullEnumerationLimit) + "; set a budget");
  if (m > 62) throw ValidationError("kernelshap: coalition masks support at most 62 features");

  std::vector<double> scratch(m);
  double phi0 = 0.0;
  for (const auto& b : cfg.background) phi0 += model(b);
  phi0 /= static_cast<double>(cfg.background.size());
  const double fx = model(x);

  if (m == 1)
    return detail::solve_constrained(m, phi0, fx, {}, {}, {});

  detail::WeightedCoalitions coalitions;
  const std::uint64_t full = (1ULL << m) - 1ULL;
  const double total = std::pow(2.0, static_cast<double>(m)) - 2.0;
  if (!cfg.budget || static_cast<double>(*cfg.budget) >= total) {
    std::vector<double> weight_by_size(m, 0.0);
    for (std::size_t s = 1; s < m; ++s) weight_by_size[s] = shapley_kernel_weight(m, s);
    coalitions.masks.reserve(static_cast<std::size_t>(total));
    coalitions.weights.reserve(static_cast<std::size_t>(total));
    for (std::uint64_t mask = 1; mask < full; ++mask) {
      coalitions.masks.push_back(mask);
      coalitions.weights.push_back(weight_by_size[static_cast<std::size_t>(std::popcount(mask))]);
    }
  } else {
    coalitions = detail::sample_coalitions(m, *cfg.budget, cfg.seed);
  }

  std::vector<double> values(coalitions.masks.size());
  for (std::size_t c = 0; c < coalitions.masks.size(); ++c)
    values[c] = detail::coalition_value(model, x, cfg.background, coalitions.masks[c], scratch);

  auto e = detail::solve_constrained(m, phi0, fx, coalitions.masks, coalitions.weights, values);
  e.method = Method::KernelShap;
  return e;
}

inline constexpr std::size_t kExactShapleyLimit = 20;

// Classical permutation-average Shapley values over the full coalition
// lattice; the oracle the kernel estimator is checked against.
inline AdditiveExplanation exact_shapley(const PredictFn& model, std::span<const double> x,
                                         const std::vector<std::vector<double>>& background) {
  const std::size_t m = x.size();
  if (m == 0) throw ValidationError("exact_shapley: zero features");
  if (m > kExactShapleyLimit)
    throw ValidationError("exact_shapley: capped at m <= " + std::to_string(kExactShapleyLimit));
  if (background.empty()) throw ValidationError("exact_shapley: empty background set");
  for (const auto& b : background)
    if (b.size() != m) throw ValidationError("exact_shapley: background width mismatch");

  const std::size_t n_masks = std::size_t{1} << m;
  std::vector<double> value(n_masks);
  std::vector<double> scratch(m);
  for (std::uint64_t mask = 0; mask < n_masks; ++mask)
    value[mask] = detail::coalition_value(model, x, background, mask, scratch);

  // weight(|S|) = |S|! (m-|S|-1)! / m! = 1 / (C(m,|S|) * (m-|S|))
  std::vector<double> weight(m);
  for (std::size_t s = 0; s < m; ++s)
    weight[s] = 1.0 / (detail::binomial(m, s) * static_cast<double>(m - s));

  AdditiveExplanation e;
  e.method = Method::ExactShapley;
  e.phi0 = value[0];
  e.explained_prediction = model(x);
  e.phi.assign(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const std::uint64_t bit = 1ULL << j;
    double phi = 0.0;
    for (std::uint64_t mask = 0; mask < n_masks; ++mask) {
      if (mask & bit) continue;
      phi += weight[static_cast<std::size_t>(std::popcount(mask))] *
             (value[mask | bit] - value[mask]);
    }
    e.phi[j] = phi;
  }
  return e;
}

// Local linear surrogate. Perturbations are drawn in raw feature space
// (numeric: normal around the instance with the training std; binary and
// categorical: training marginals), encoded, weighted by
// exp(-D^2 / kernel_width^2) with D the unweighted Euclidean distance in
// encoded space, and fit by ridge-regularized weighted least squares.
// phi_j = coefficient_j * encoded(x_j), so the contributions sum toward the
// surrogate's own prediction at x.
inline AdditiveExplanation lime_explain(const PredictFn& model, const Row& x,
                                        const FeatureSchema& schema, const FeatureRanges& ranges,
                                        const TrainStats& stats, const LimeConfig& cfg) {
  const std::size_t m = schema.size();
  if (x.size() != m) throw ValidationError("lime: instance width does not match schema");
  if (cfg.num_samples < m + 2)
    throw ValidationError("lime: num_samples must be at least m+2");
  if (cfg.kernel_width && !(*cfg.kernel_width > 0.0))
    throw ValidationError("lime: kernel_width must be positive");
  if (cfg.ridge_penalty < 0.0) throw ValidationError("lime: ridge_penalty must be >= 0");

  const auto x_enc = encode_instance(x, schema, ranges);
  const double fx = model(x_enc.values);
  const double width = cfg.kernel_width.value_or(0.75 * std::sqrt(static_cast<double>(m)));

  Rng rng(cfg.seed);
  const std::size_t ns = cfg.num_samples;
  std::vector<double> design(ns * m);
  std::vector<double> targets(ns);
  std::vector<double> sample_weight(ns);
  Row perturbed(m);
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      switch (schema.features[j].kind) {
        case FeatureKind::Numeric:
          perturbed[j] = rng.normal(numeric_value(x[j]), stats.stddev[j]);
          break;
        case FeatureKind::Binary:
          perturbed[j] = rng.bernoulli(stats.p_one[j]) ? 1.0 : 0.0;
          break;
        case FeatureKind::Categorical: {
          const auto& marginal = stats.marginals[j];
          const double u = rng.uniform();
          double acc = 0.0;
          std::size_t pick = marginal.size() - 1;
          for (std::size_t c = 0; c < marginal.size(); ++c) {
            acc += marginal[c].second;
            if (u < acc) {
              pick = c;
              break;
            }
          }
          perturbed[j] = marginal[pick].first;
          break;
        }
      }
    }
    const auto enc = encode_instance(perturbed, schema, ranges);
    double d2 = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      design[i * m + j] = enc.values[j];
      const double d = enc.values[j] - x_enc.values[j];
      d2 += d * d;
    }
    targets[i] = model(enc.values);
    sample_weight[i] = std::exp(-d2 / (width * width));
  }

  AdditiveExplanation e;
  e.method = Method::Lime;
  e.explained_prediction = fx;
  e.phi.assign(m, 0.0);

  bool all_identical = true;
  for (std::size_t i = 1; i < ns && all_identical; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (design[i * m + j] != design[j]) {
        all_identical = false;
        break;
      }
  if (all_identical) {
    e.degenerate = true;
    double wsum = 0.0, ysum = 0.0;
    for (std::size_t i = 0; i < ns; ++i) {
      wsum += sample_weight[i];
      ysum += sample_weight[i] * targets[i];
    }
    e.phi0 = wsum > 0.0 ? ysum / wsum : 0.0;
    return e;
  }

  // Ridge on [1 | E], intercept unpenalized.
  const std::size_t dim = m + 1;
  std::vector<double> a(dim * dim, 0.0);
  std::vector<double> b(dim, 0.0);
  std::vector<double> arow(dim);
  for (std::size_t i = 0; i < ns; ++i) {
    arow[0] = 1.0;
    for (std::size_t j = 0; j < m; ++j) arow[j + 1] = design[i * m + j];
    const double w = sample_weight[i];
    for (std::size_t r = 0; r < dim; ++r) {
      b[r] += w * targets[i] * arow[r];
      for (std::size_t c = 0; c < dim; ++c) a[r * dim + c] += w * arow[r] * arow[c];
    }
  }
  for (std::size_t j = 1; j < dim; ++j) a[j * dim + j] += cfg.ridge_penalty;
  std::vector<double> sol;
  const bool clean = linalg::solve_symmetric(std::move(a), std::move(b), dim, sol);
  e.degenerate = !clean;
  e.phi0 = sol[0];
  for (std::size_t j = 0; j < m; ++j) e.phi[j] = sol[j + 1] * x_enc.values[j];
  return e;
}

inline constexpr double kMultiplierEpsilon = 1e-9;

// Rescales a case-based prediction into per-feature contributions through the
// multiplier prediction / sum_j(x_j * w_j); contributions then sum back to the
// prediction in its own unit.
inline AdditiveExplanation additive_cbr(double prediction, std::span<const double> x_encoded,
                                        std::span<const double> weights,
                                        const std::string& instance_label = "") {
  if (x_encoded.size() != weights.size())
    throw ValidationError("additive_cbr: feature/weight width mismatch");
  double denom = 0.0;
  for (std::size_t j = 0; j < x_encoded.size(); ++j) denom += x_encoded[j] * weights[j];
  if (std::abs(denom) < kMultiplierEpsilon)
    throw UndefinedMultiplierError(denom, instance_label);
  const double gamma = prediction / denom;
  AdditiveExplanation e;
  e.method = Method::AdditiveCbr;
  e.phi0 = 0.0;
  e.explained_prediction = prediction;
  e.phi.resize(x_encoded.size());
  for (std::size_t j = 0; j < x_encoded.size(); ++j)
    e.phi[j] = gamma * x_encoded[j] * weights[j];
  return e;
}

// ---------------------------------------------------------------------------
// Serialization (JSON lines in the pipeline artifacts).

inline nlohmann::json to_json(const AdditiveExplanation& e,
                              const std::vector<std::string>& feature_names,
                              const std::string& config_digest = "",
                              std::optional<std::uint64_t> seed = std::nullopt) {
  nlohmann::json j{{"method", to_string(e.method)},
                   {"phi0", e.phi0},
                   {"phi", e.phi},
                   {"features", feature_names},
                   {"explained_prediction", e.explained_prediction},
                   {"degenerate", e.degenerate}};
  if (!config_digest.empty()) j["config_digest"] = config_digest;
  if (seed) j["seed"] = *seed;
  return j;
}

inline AdditiveExplanation explanation_from_json(const nlohmann::json& j) {
  AdditiveExplanation e;
  e.method = method_from_string(j.at("method").get<std::string>());
  e.phi0 = j.at("phi0").get<double>();
  e.phi = j.at("phi").get<std::vector<double>>();
  e.explained_prediction = j.at("explained_prediction").get<double>();
  e.degenerate = j.value("degenerate", false);
  return e;
}

}  // namespace xcbr::explain
