#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xcbr/error.hpp"
#include "xcbr/explain.hpp"
#include "xcbr/io.hpp"

namespace xcbr::eval {

struct ErrorSummary {
  double mae = 0.0;
  double sigma = 0.0;  // population standard deviation of the absolute errors
  std::size_t n = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"mae", mae}, {"sigma", sigma}, {"n", n}};
  }
};

inline std::vector<double> absolute_errors(std::span<const double> actual,
                                           std::span<const double> predicted) {
  if (actual.size() != predicted.size())
    throw ValidationError("mae: vector length mismatch");
  if (actual.empty()) throw ValidationError("mae: empty vectors");
  std::vector<double> errs(actual.size());
  for (std::size_t i = 0; i < actual.size(); ++i) errs[i] = std::abs(actual[i] - predicted[i]);
  return errs;
}

inline ErrorSummary summarize_errors(std::span<const double> abs_errors) {
  if (abs_errors.empty()) throw ValidationError("summarize: empty error vector");
  const auto n = static_cast<double>(abs_errors.size());
  const double mean = std::accumulate(abs_errors.begin(), abs_errors.end(), 0.0) / n;
  double ss = 0.0;
  for (double e : abs_errors) ss += (e - mean) * (e - mean);
  return {mean, std::sqrt(ss / n), abs_errors.size()};
}

inline ErrorSummary mae(std::span<const double> actual, std::span<const double> predicted) {
  return summarize_errors(absolute_errors(actual, predicted));
}

// Indices of the ceil(fraction*n) smallest absolute errors, ties to the lowest
// index; returned ascending. The epsilon guards fraction*n values that land a
// hair above an integer (e.g. 2.0/3.0 * 3).
inline std::vector<std::size_t> select_most_accurate(std::span<const double> abs_errors,
                                                     double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ValidationError("select_most_accurate: fraction must be in (0,1]");
  const std::size_t n = abs_errors.size();
  const auto k = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (abs_errors[a] != abs_errors[b]) return abs_errors[a] < abs_errors[b];
    return a < b;
  });
  std::vector<std::size_t> out(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.begin(), out.end());
  return out;
}

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

// Half-open bins [k*w, (k+1)*w), contiguous from zero through the largest
// occupied bin.
inline std::vector<HistogramBin> error_histogram(std::span<const double> abs_errors,
                                                 double bin_width = 10.0) {
  if (!(bin_width > 0.0)) throw ValidationError("histogram: bin_width must be positive");
  if (abs_errors.empty()) return {};
  std::size_t max_bin = 0;
  std::vector<std::size_t> idx(abs_errors.size());
  for (std::size_t i = 0; i < abs_errors.size(); ++i) {
    idx[i] = static_cast<std::size_t>(std::floor(abs_errors[i] / bin_width));
    max_bin = std::max(max_bin, idx[i]);
  }
  std::vector<HistogramBin> bins(max_bin + 1);
  for (std::size_t b = 0; b <= max_bin; ++b) {
    bins[b].lo = static_cast<double>(b) * bin_width;
    bins[b].hi = static_cast<double>(b + 1) * bin_width;
  }
  for (auto b : idx) ++bins[b].count;
  return bins;
}

struct ThresholdCount {
  double threshold = 0.0;
  std::size_t within = 0;  // error <= threshold
  std::size_t above = 0;   // error > threshold
};

inline std::vector<ThresholdCount> threshold_counts(std::span<const double> abs_errors,
                                                    std::span<const double> thresholds) {
  std::vector<ThresholdCount> out;
  for (double t : thresholds) {
    if (!(t > 0.0)) throw ValidationError("threshold_counts: thresholds must be positive");
    ThresholdCount tc;
    tc.threshold = t;
    for (double e : abs_errors) {
      if (e <= t)
        ++tc.within;
      else
        ++tc.above;
    }
    out.push_back(tc);
  }
  return out;
}

// Normalized discounted cumulative gain with log2(rank+1) discounting and raw
// relevance gains. Candidate order ranks by descending score, ties to the
// lowest feature index.
inline double ndcg(std::span<const double> relevance, std::span<const double> scores) {
  const std::size_t m = relevance.size();
  if (m == 0 || scores.size() != m)
    throw ValidationError("ndcg: relevance/score length mismatch");
  bool any_positive = false;
  for (double r : relevance) {
    if (r < 0.0) throw ValidationError("ndcg: relevance must be nonnegative");
    if (r > 0.0) any_positive = true;
  }
  if (!any_positive) throw ValidationError("ndcg: all-zero relevance");

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<double> ideal(relevance.begin(), relevance.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());

  double dcg = 0.0, idcg = 0.0;
  for (std::size_t rank = 1; rank <= m; ++rank) {
    const double discount = std::log2(static_cast<double>(rank + 1));
    dcg += relevance[order[rank - 1]] / discount;
    idcg += ideal[rank - 1] / discount;
  }
  return dcg / idcg;
}

// Ranks a candidate's attribution magnitudes against baseline magnitudes
// (global weights, or |phi| of a baseline explanation); phi0 plays no part.
inline double attribution_ndcg(std::span<const double> baseline_magnitudes,
                               const explain::AdditiveExplanation& candidate) {
  if (baseline_magnitudes.size() != candidate.phi.size())
    throw ValidationError("attribution_ndcg: feature count mismatch");
  std::vector<double> rel(baseline_magnitudes.size());
  for (std::size_t j = 0; j < rel.size(); ++j) rel[j] = std::abs(baseline_magnitudes[j]);
  std::vector<double> scores(candidate.phi.size());
  for (std::size_t j = 0; j < scores.size(); ++j) scores[j] = std::abs(candidate.phi[j]);
  return ndcg(rel, scores);
}

inline double attribution_ndcg(const explain::AdditiveExplanation& baseline,
                               const explain::AdditiveExplanation& candidate) {
  return attribution_ndcg(baseline.phi, candidate);
}

// MAE of |model prediction - explanation reconstruction| per subset.
inline std::vector<ErrorSummary> local_accuracy_report(
    std::span<const double> model_preds, std::span<const double> explanation_preds,
    const std::vector<std::vector<std::size_t>>& subsets) {
  if (model_preds.size() != explanation_preds.size())
    throw ValidationError("local_accuracy_report: prediction vectors misaligned");
  std::vector<ErrorSummary> out;
  for (const auto& subset : subsets) {
    std::vector<double> errs;
    errs.reserve(subset.size());
    for (auto i : subset) {
      if (i >= model_preds.size())
        throw ValidationError("local_accuracy_report: subset index out of range");
      errs.push_back(std::abs(model_preds[i] - explanation_preds[i]));
    }
    out.push_back(summarize_errors(errs));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report assembly.

struct ReportInputs {
  // Test-set targets and data-model predictions, aligned.
  std::vector<double> y_test;
  std::vector<double> gbdt_preds;
  std::vector<double> cbr_preds;
  // Explanations for a (possibly capped) prefix-or-subset of test instances.
  std::vector<std::size_t> explained_indices;  // into the test vectors
  std::vector<explain::AdditiveExplanation> shap;
  std::vector<explain::AdditiveExplanation> lime;
  std::vector<std::optional<explain::AdditiveExplanation>> additive_cbr;  // nullopt: excluded
  std::vector<double> global_weights;
  // Shaping.
  std::vector<double> subset_fractions{0.64, 0.43};
  double histogram_bin_width = 10.0;
  std::vector<double> thresholds{2.0, 5.0};
  std::string config_digest;
};

struct SubsetFrame {
  std::string label;
  double fraction = 1.0;
  std::size_t n = 0;
};

struct MethodScores {
  std::vector<ErrorSummary> local_accuracy;          // per subset
  std::vector<double> ndcg_vs_global;                // per subset, mean per-instance
  std::vector<double> ndcg_vs_additive;              // per subset
  std::vector<std::size_t> ndcg_counts_global;       // instances scored
  std::vector<std::size_t> ndcg_counts_additive;
};

struct EvalReport {
  std::size_t n_test = 0;
  std::vector<SubsetFrame> data_subsets;                 // per-model selection
  std::vector<ErrorSummary> cbr_summary;                 // per subset
  std::vector<ErrorSummary> gbdt_summary;
  std::vector<HistogramBin> cbr_histogram;
  std::vector<HistogramBin> gbdt_histogram;
  std::vector<ThresholdCount> cbr_thresholds;
  std::vector<ThresholdCount> gbdt_thresholds;

  bool explanations_present = false;
  std::size_t n_explained = 0;
  std::vector<SubsetFrame> explanation_subsets;
  MethodScores shap_scores;
  MethodScores lime_scores;
  std::size_t excluded_gamma_undefined = 0;
  std::size_t excluded_zero_relevance = 0;
  std::string config_digest;

  nlohmann::json to_json() const;
  std::string to_markdown() const;
  std::string histogram_csv() const;
  std::string threshold_csv() const;
};

inline EvalReport build_report(const ReportInputs& in) {
  const std::size_t n = in.y_test.size();
  if (n == 0) throw ValidationError("build_report: empty test set");
  if (in.gbdt_preds.size() != n || in.cbr_preds.size() != n)
    throw ValidationError("build_report: prediction vectors misaligned with targets");

  EvalReport rep;
  rep.n_test = n;
  rep.config_digest = in.config_digest;

  const auto cbr_errs = absolute_errors(in.y_test, in.cbr_preds);
  const auto gbdt_errs = absolute_errors(in.y_test, in.gbdt_preds);

  // Data-model table: each model's subsets come from its own error ordering.
  rep.data_subsets.push_back({"all", 1.0, n});
  std::vector<std::vector<std::size_t>> cbr_subsets{{}}, gbdt_subsets{{}};
  cbr_subsets[0].resize(n);
  std::iota(cbr_subsets[0].begin(), cbr_subsets[0].end(), std::size_t{0});
  gbdt_subsets[0] = cbr_subsets[0];
  for (double f : in.subset_fractions) {
    auto c = select_most_accurate(cbr_errs, f);
    auto g = select_most_accurate(gbdt_errs, f);
    rep.data_subsets.push_back({"top" + format_double(f), f, c.size()});
    cbr_subsets.push_back(std::move(c));
    gbdt_subsets.push_back(std::move(g));
  }
  auto summarize_subsets = [](const std::vector<double>& errs,
                              const std::vector<std::vector<std::size_t>>& subsets) {
    std::vector<ErrorSummary> out;
    for (const auto& subset : subsets) {
      std::vector<double> sel;
      sel.reserve(subset.size());
      for (auto i : subset) sel.push_back(errs[i]);
      out.push_back(summarize_errors(sel));
    }
    return out;
  };
  rep.cbr_summary = summarize_subsets(cbr_errs, cbr_subsets);
  rep.gbdt_summary = summarize_subsets(gbdt_errs, gbdt_subsets);
  rep.cbr_histogram = error_histogram(cbr_errs, in.histogram_bin_width);
  rep.gbdt_histogram = error_histogram(gbdt_errs, in.histogram_bin_width);
  rep.cbr_thresholds = threshold_counts(cbr_errs, in.thresholds);
  rep.gbdt_thresholds = threshold_counts(gbdt_errs, in.thresholds);

  const std::size_t ne = in.explained_indices.size();
  if (ne == 0) return rep;
  if (in.shap.size() != ne || in.lime.size() != ne || in.additive_cbr.size() != ne)
    throw ValidationError("build_report: explanation vectors misaligned");
  if (in.global_weights.empty())
    throw ValidationError("build_report: missing global weights for attribution scoring");

  rep.explanations_present = true;
  rep.n_explained = ne;

  // Explanation subsets are selected by the explained data model's (GBDT's)
  // errors, restricted to the explained instances.
  std::vector<double> gbdt_err_explained(ne);
  std::vector<double> gbdt_pred_explained(ne);
  for (std::size_t i = 0; i < ne; ++i) {
    const auto t = in.explained_indices[i];
    if (t >= n) throw ValidationError("build_report: explained index out of range");
    gbdt_err_explained[i] = gbdt_errs[t];
    gbdt_pred_explained[i] = in.gbdt_preds[t];
  }
  std::vector<std::vector<std::size_t>> expl_subsets{{}};
  expl_subsets[0].resize(ne);
  std::iota(expl_subsets[0].begin(), expl_subsets[0].end(), std::size_t{0});
  rep.explanation_subsets.push_back({"all", 1.0, ne});
  for (double f : in.subset_fractions) {
    auto s = select_most_accurate(gbdt_err_explained, f);
    rep.explanation_subsets.push_back({"top" + format_double(f), f, s.size()});
    expl_subsets.push_back(std::move(s));
  }

  for (const auto& oe : in.additive_cbr)
    if (!oe) ++rep.excluded_gamma_undefined;

  auto score_method = [&](const std::vector<explain::AdditiveExplanation>& exps) {
    MethodScores ms;
    std::vector<double> reconstructed(ne);
    for (std::size_t i = 0; i < ne; ++i) reconstructed[i] = additive_predict(exps[i]);
    ms.local_accuracy = local_accuracy_report(gbdt_pred_explained, reconstructed, expl_subsets);

    // Per-instance nDCG, averaged per subset; instances without a usable
    // baseline are counted, never silently dropped.
    std::vector<double> ndcg_global(ne, -1.0), ndcg_additive(ne, -1.0);
    for (std::size_t i = 0; i < ne; ++i) {
      try {
        ndcg_global[i] = attribution_ndcg(in.global_weights, exps[i]);
      } catch (const ValidationError&) {
        ndcg_global[i] = -1.0;
      }
      if (in.additive_cbr[i]) {
        try {
          ndcg_additive[i] = attribution_ndcg(*in.additive_cbr[i], exps[i]);
        } catch (const ValidationError&) {
          ndcg_additive[i] = -1.0;
        }
      }
    }
    for (const auto& subset : expl_subsets) {
      double sg = 0.0, sa = 0.0;
      std::size_t cg = 0, ca = 0;
      for (auto i : subset) {
        if (ndcg_global[i] >= 0.0) {
          sg += ndcg_global[i];
          ++cg;
        }
        if (ndcg_additive[i] >= 0.0) {
          sa += ndcg_additive[i];
          ++ca;
        }
      }
      ms.ndcg_vs_global.push_back(cg ? sg / static_cast<double>(cg) : 0.0);
      ms.ndcg_vs_additive.push_back(ca ? sa / static_cast<double>(ca) : 0.0);
      ms.ndcg_counts_global.push_back(cg);
      ms.ndcg_counts_additive.push_back(ca);
    }
    return ms;
  };
  rep.shap_scores = score_method(in.shap);
  rep.lime_scores = score_method(in.lime);

  // Zero-relevance baselines (an all-zero Additive CBR attribution) surface in
  // the additive counts; tally them once.
  for (std::size_t i = 0; i < ne; ++i) {
    if (!in.additive_cbr[i]) continue;
    bool any = false;
    for (double p : (*in.additive_cbr[i]).phi)
      if (p != 0.0) any = true;
    if (!any) ++rep.excluded_zero_relevance;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Rendering.

namespace detail {

inline nlohmann::json summaries_json(const std::vector<SubsetFrame>& frames,
                                     const std::vector<ErrorSummary>& sums) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    auto j = sums[i].to_json();
    j["subset"] = frames[i].label;
    arr.push_back(std::move(j));
  }
  return arr;
}

inline nlohmann::json histogram_json(const std::vector<HistogramBin>& bins) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& b : bins)
    arr.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
  return arr;
}

inline nlohmann::json thresholds_json(const std::vector<ThresholdCount>& tcs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : tcs)
    arr.push_back({{"threshold", t.threshold}, {"within", t.within}, {"above", t.above}});
  return arr;
}

inline nlohmann::json method_json(const std::vector<SubsetFrame>& frames, const MethodScores& ms) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    arr.push_back({{"subset", frames[i].label},
                   {"local_accuracy", ms.local_accuracy[i].to_json()},
                   {"ndcg_vs_global_cbr", ms.ndcg_vs_global[i]},
                   {"ndcg_vs_additive_cbr", ms.ndcg_vs_additive[i]},
                   {"scored_vs_global", ms.ndcg_counts_global[i]},
                   {"scored_vs_additive", ms.ndcg_counts_additive[i]}});
  }
  return arr;
}

}  // namespace detail

inline nlohmann::json EvalReport::to_json() const {
  nlohmann::json subsets = nlohmann::json::array();
  for (const auto& f : data_subsets)
    subsets.push_back({{"label", f.label}, {"fraction", f.fraction}, {"n", f.n}});
  nlohmann::json j{
      {"format_version", 1},
      {"kind", "eval_report"},
      {"n_test", n_test},
      {"subsets", std::move(subsets)},
      {"data_models",
       {{"cbr", detail::summaries_json(data_subsets, cbr_summary)},
        {"gbdt", detail::summaries_json(data_subsets, gbdt_summary)}}},
      {"error_histograms",
       {{"cbr", detail::histogram_json(cbr_histogram)},
        {"gbdt", detail::histogram_json(gbdt_histogram)}}},
      {"threshold_counts",
       {{"cbr", detail::thresholds_json(cbr_thresholds)},
        {"gbdt", detail::thresholds_json(gbdt_thresholds)}}}};
  if (!config_digest.empty()) j["config_digest"] = config_digest;
  if (!explanations_present) {
    j["explanations"] = nullptr;
    return j;
  }
  nlohmann::json esubsets = nlohmann::json::array();
  for (const auto& f : explanation_subsets)
    esubsets.push_back({{"label", f.label}, {"fraction", f.fraction}, {"n", f.n}});
  j["explanations"] = {
      {"n_explained", n_explained},
      {"subsets", std::move(esubsets)},
      {"kernelshap", detail::method_json(explanation_subsets, shap_scores)},
      {"lime", detail::method_json(explanation_subsets, lime_scores)},
      {"exclusions",
       {{"gamma_undefined", excluded_gamma_undefined},
        {"zero_relevance", excluded_zero_relevance}}}};
  return j;
}

inline std::string EvalReport::to_markdown() const {
  std::string md;
  auto fmt = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
  };
  md += "# Evaluation report\n\n";
  md += "## Data models: MAE and sigma per subset\n\n";
  md += "| Instances |";
  for (const auto& f : data_subsets) md += " CBR " + f.label + " |";
  for (const auto& f : data_subsets) md += " GBDT " + f.label + " |";
  md += "\n|---|";
  for (std::size_t i = 0; i < 2 * data_subsets.size(); ++i) md += "---|";
  md += "\n| MAE |";
  for (const auto& s : cbr_summary) md += " " + fmt(s.mae) + " |";
  for (const auto& s : gbdt_summary) md += " " + fmt(s.mae) + " |";
  md += "\n| sigma |";
  for (const auto& s : cbr_summary) md += " " + fmt(s.sigma) + " |";
  for (const auto& s : gbdt_summary) md += " " + fmt(s.sigma) + " |";
  md += "\n\n";

  md += "## Error thresholds (within / above)\n\n";
  md += "| Model |";
  for (const auto& t : cbr_thresholds) md += " <= " + fmt(t.threshold) + " min |";
  md += "\n|---|";
  for (std::size_t i = 0; i < cbr_thresholds.size(); ++i) md += "---|";
  md += "\n| CBR |";
  for (const auto& t : cbr_thresholds)
    md += " " + std::to_string(t.within) + " / " + std::to_string(t.above) + " |";
  md += "\n| GBDT |";
  for (const auto& t : gbdt_thresholds)
    md += " " + std::to_string(t.within) + " / " + std::to_string(t.above) + " |";
  md += "\n\n";

  if (!explanations_present) {
    md += "_Explanation sections absent (explanations disabled for this run)._\n";
    return md;
  }

  md += "## Explanation local accuracy (vs GBDT predictions)\n\n";
  md += "| Metric |";
  for (const auto& f : explanation_subsets) md += " SHAP " + f.label + " |";
  for (const auto& f : explanation_subsets) md += " LIME " + f.label + " |";
  md += "\n|---|";
  for (std::size_t i = 0; i < 2 * explanation_subsets.size(); ++i) md += "---|";
  md += "\n| MAE |";
  for (const auto& s : shap_scores.local_accuracy) md += " " + fmt(s.mae) + " |";
  for (const auto& s : lime_scores.local_accuracy) md += " " + fmt(s.mae) + " |";
  md += "\n| sigma |";
  for (const auto& s : shap_scores.local_accuracy) md += " " + fmt(s.sigma) + " |";
  for (const auto& s : lime_scores.local_accuracy) md += " " + fmt(s.sigma) + " |";
  md += "\n\n";

  md += "## Attribution nDCG vs Global CBR\n\n| Method |";
  for (const auto& f : explanation_subsets) md += " " + f.label + " |";
  md += "\n|---|";
  for (std::size_t i = 0; i < explanation_subsets.size(); ++i) md += "---|";
  md += "\n| SHAP |";
  for (double v : shap_scores.ndcg_vs_global) md += " " + fmt(v) + " |";
  md += "\n| LIME |";
  for (double v : lime_scores.ndcg_vs_global) md += " " + fmt(v) + " |";
  md += "\n\n## Attribution nDCG vs Additive CBR\n\n| Method |";
  for (const auto& f : explanation_subsets) md += " " + f.label + " |";
  md += "\n|---|";
  for (std::size_t i = 0; i < explanation_subsets.size(); ++i) md += "---|";
  md += "\n| SHAP |";
  for (double v : shap_scores.ndcg_vs_additive) md += " " + fmt(v) + " |";
  md += "\n| LIME |";
  for (double v : lime_scores.ndcg_vs_additive) md += " " + fmt(v) + " |";
  md += "\n\nExcluded instances: gamma undefined " +
        std::to_string(excluded_gamma_undefined) + ", zero relevance " +
        std::to_string(excluded_zero_relevance) + ".\n";
  return md;
}

inline std::string EvalReport::histogram_csv() const {
  std::string csv = "model,bin_lo,bin_hi,count\n";
  for (const auto& b : cbr_histogram)
    csv += "cbr," + format_double(b.lo) + "," + format_double(b.hi) + "," +
           std::to_string(b.count) + "\n";
  for (const auto& b : gbdt_histogram)
    csv += "gbdt," + format_double(b.lo) + "," + format_double(b.hi) + "," +
           std::to_string(b.count) + "\n";
  return csv;
}

inline std::string EvalReport::threshold_csv() const {
  std::string csv = "model,threshold,within,above\n";
  for (const auto& t : cbr_thresholds)
    csv += "cbr," + format_double(t.threshold) + "," + std::to_string(t.within) + "," +
           std::to_string(t.above) + "\n";
  for (const auto& t : gbdt_thresholds)
    csv += "gbdt," + format_double(t.threshold) + "," + std::to_string(t.within) + "," +
           std::to_string(t.above) + "\n";
  return csv;
}

}  // namespace xcbr::eval
