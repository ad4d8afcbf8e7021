#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "xcbr/eval.hpp"
#include "xcbr/rng.hpp"

using namespace xcbr;
using explain::AdditiveExplanation;

TEST(Mae, IdentityAndHandEvaluated) {
  const std::vector<double> same{3, 3, 3};
  const auto id = eval::mae(same, same);
  EXPECT_DOUBLE_EQ(id.mae, 0.0);
  EXPECT_DOUBLE_EQ(id.sigma, 0.0);
  EXPECT_EQ(id.n, 3u);

  // errors {2, 4}: mean 3, population sigma 1
  const std::vector<double> y{0, 10}, yhat{2, 6};
  const auto s = eval::mae(y, yhat);
  EXPECT_DOUBLE_EQ(s.mae, 3.0);
  EXPECT_DOUBLE_EQ(s.sigma, 1.0);
}

TEST(Mae, SingleElementAndErrors) {
  const std::vector<double> one{5.0}, pred{7.5};
  const auto s = eval::mae(one, pred);
  EXPECT_DOUBLE_EQ(s.mae, 2.5);
  EXPECT_DOUBLE_EQ(s.sigma, 0.0);
  const std::vector<double> a{1, 2}, b{1};
  EXPECT_THROW(eval::mae(a, b), ValidationError);
  EXPECT_THROW(eval::mae({}, {}), ValidationError);
}

TEST(Mae, PermutationInvariant) {
  const std::vector<double> y{1, 5, 9, 2}, p{2, 3, 9, 7};
  const std::vector<double> y2{2, 9, 1, 5}, p2{7, 9, 2, 3};
  EXPECT_DOUBLE_EQ(eval::mae(y, p).mae, eval::mae(y2, p2).mae);
  EXPECT_DOUBLE_EQ(eval::mae(y, p).sigma, eval::mae(y2, p2).sigma);
}

TEST(SelectMostAccurate, ForcedOrderingAndTies) {
  const std::vector<double> errs{5, 1, 3};
  EXPECT_EQ(eval::select_most_accurate(errs, 1.0), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(eval::select_most_accurate(errs, 2.0 / 3.0), (std::vector<std::size_t>{1, 2}));
  const std::vector<double> tied{2, 2, 9};
  EXPECT_EQ(eval::select_most_accurate(tied, 1.0 / 3.0), (std::vector<std::size_t>{0}));
  EXPECT_THROW(eval::select_most_accurate(errs, 0.0), ValidationError);
  EXPECT_THROW(eval::select_most_accurate(errs, 1.5), ValidationError);
}

TEST(SelectMostAccurate, CeilCountAndSeparation) {
  Rng rng(1);
  std::vector<double> errs(37);
  for (auto& e : errs) e = rng.uniform(0.0, 100.0);
  for (double f : {0.64, 0.43, 0.5, 0.99}) {
    const auto sel = eval::select_most_accurate(errs, f);
    const auto expected = static_cast<std::size_t>(std::ceil(f * 37.0 - 1e-9));
    EXPECT_EQ(sel.size(), expected);
    double max_sel = 0.0, min_unsel = 1e18;
    std::vector<bool> in(errs.size(), false);
    for (auto i : sel) in[i] = true;
    for (std::size_t i = 0; i < errs.size(); ++i) {
      if (in[i])
        max_sel = std::max(max_sel, errs[i]);
      else
        min_unsel = std::min(min_unsel, errs[i]);
    }
    EXPECT_LE(max_sel, min_unsel);
  }
}

TEST(Histogram, BinsAndBoundaries) {
  const std::vector<double> errs{3, 12, 25};
  const auto bins = eval::error_histogram(errs, 10.0);
  ASSERT_EQ(bins.size(), 3u);
  EXPECT_EQ(bins[0].count, 1u);
  EXPECT_EQ(bins[1].count, 1u);
  EXPECT_EQ(bins[2].count, 1u);
  EXPECT_DOUBLE_EQ(bins[1].lo, 10.0);
  EXPECT_DOUBLE_EQ(bins[1].hi, 20.0);

  EXPECT_TRUE(eval::error_histogram({}, 10.0).empty());

  // exactly on a boundary falls in the upper bin
  const std::vector<double> edge{10.0};
  const auto b2 = eval::error_histogram(edge, 10.0);
  ASSERT_EQ(b2.size(), 2u);
  EXPECT_EQ(b2[0].count, 0u);
  EXPECT_EQ(b2[1].count, 1u);

  std::size_t total = 0;
  const std::vector<double> many{1, 2, 3, 44, 44, 101};
  for (const auto& b : eval::error_histogram(many, 10.0)) total += b.count;
  EXPECT_EQ(total, many.size());
  EXPECT_THROW(eval::error_histogram(many, 0.0), ValidationError);
}

TEST(Thresholds, CountsAndBoundary) {
  const std::vector<double> errs{1.5, 2.5, 6.0};
  const std::vector<double> ts{2.0, 5.0};
  const auto tc = eval::threshold_counts(errs, ts);
  ASSERT_EQ(tc.size(), 2u);
  EXPECT_EQ(tc[0].within, 1u);
  EXPECT_EQ(tc[0].above, 2u);
  EXPECT_EQ(tc[1].within, 2u);
  EXPECT_EQ(tc[1].above, 1u);

  const std::vector<double> exact{2.0};
  const auto tb = eval::threshold_counts(exact, ts);
  EXPECT_EQ(tb[0].within, 1u);  // boundary counts within
  EXPECT_EQ(tb[0].above, 0u);

  for (const auto& t : tc) EXPECT_EQ(t.within + t.above, errs.size());
  const std::vector<double> bad{-1.0};
  EXPECT_THROW(eval::threshold_counts(errs, bad), ValidationError);
}

TEST(Ndcg, PerfectOrderAndSingleItem) {
  const std::vector<double> rel{3, 2, 1};
  const std::vector<double> aligned{9, 5, 2};
  EXPECT_DOUBLE_EQ(eval::ndcg(rel, aligned), 1.0);
  const std::vector<double> one{7.0};
  EXPECT_DOUBLE_EQ(eval::ndcg(one, one), 1.0);
}

TEST(Ndcg, HandEvaluatedOrderings) {
  // relevance (A,B,C) = (3,2,1), independently recomputed here from the
  // formula: DCG = sum relevance[rank i] / log2(i+1), IDCG over descending
  // relevance, nDCG = DCG/IDCG.
  const double l3 = std::log2(3.0);
  const std::vector<double> rel{3, 2, 1};
  const double idcg = 3.0 / 1.0 + 2.0 / l3 + 1.0 / 2.0;

  // candidate order B,A,C
  const std::vector<double> bac{5, 9, 1};
  const double expected_bac = (2.0 + 3.0 / l3 + 0.5) / idcg;  // ~0.92249
  EXPECT_NEAR(eval::ndcg(rel, bac), expected_bac, 1e-12);
  EXPECT_NEAR(expected_bac, 0.9224, 1e-4);

  // reversed order C,B,A
  const std::vector<double> cba{1, 5, 9};
  const double expected_cba = (1.0 + 2.0 / l3 + 1.5) / idcg;  // ~0.79000
  EXPECT_NEAR(eval::ndcg(rel, cba), expected_cba, 1e-12);
  EXPECT_NEAR(expected_cba, 0.7900, 1e-4);
}

TEST(Ndcg, TiesBreakByLowestIndexAndRangeHolds) {
  const std::vector<double> rel{1, 3, 2};
  const std::vector<double> tied{5, 5, 5};  // candidate order = index order
  const double l3 = std::log2(3.0);
  const double expected = (1.0 + 3.0 / l3 + 1.0) / (3.0 + 2.0 / l3 + 0.5);
  EXPECT_NEAR(eval::ndcg(rel, tied), expected, 1e-12);

  Rng rng(2);
  for (int t = 0; t < 500; ++t) {
    const std::size_t m = 1 + rng.below(12);
    std::vector<double> r(m), s(m);
    bool any = false;
    for (auto& v : r) {
      v = rng.below(5) == 0 ? 0.0 : rng.uniform();
      if (v > 0) any = true;
    }
    if (!any) r[0] = 0.5;
    for (auto& v : s) v = rng.uniform(-3.0, 3.0);
    const double nd = eval::ndcg(r, s);
    EXPECT_GE(nd, 0.0);
    EXPECT_LE(nd, 1.0);
  }
}

TEST(Ndcg, RejectsDegenerateInputs) {
  const std::vector<double> zeros{0, 0, 0};
  const std::vector<double> s{1, 2, 3};
  EXPECT_THROW(eval::ndcg(zeros, s), ValidationError);
  const std::vector<double> neg{1, -1, 0};
  EXPECT_THROW(eval::ndcg(neg, s), ValidationError);
  EXPECT_THROW(eval::ndcg({}, {}), ValidationError);
  const std::vector<double> r2{1, 2};
  EXPECT_THROW(eval::ndcg(r2, s), ValidationError);
}

namespace {

AdditiveExplanation make_expl(std::vector<double> phi, double phi0 = 0.0) {
  AdditiveExplanation e;
  e.phi = std::move(phi);
  e.phi0 = phi0;
  e.explained_prediction = explain::additive_predict(e);
  return e;
}

}  // namespace

TEST(AttributionNdcg, SelfComparisonIsPerfect) {
  const auto base = make_expl({3, -2, 1});  // magnitudes (3,2,1)
  EXPECT_DOUBLE_EQ(eval::attribution_ndcg(base, base), 1.0);
}

TEST(AttributionNdcg, ReversedCandidate) {
  const auto base = make_expl({3, 2, 1});
  const auto reversed = make_expl({1, 2, 3});
  const double l3 = std::log2(3.0);
  const double expected = (1.0 + 2.0 / l3 + 1.5) / (3.0 + 2.0 / l3 + 0.5);
  EXPECT_NEAR(eval::attribution_ndcg(base, reversed), expected, 1e-12);
}

TEST(AttributionNdcg, UniformBaselineAlwaysPerfect) {
  const std::vector<double> uniform{0.25, 0.25, 0.25, 0.25};
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> phi(4);
    for (auto& v : phi) v = rng.uniform(-5.0, 5.0);
    EXPECT_DOUBLE_EQ(eval::attribution_ndcg(uniform, make_expl(phi)), 1.0);
  }
  const auto short_cand = make_expl({1, 2});
  EXPECT_THROW(eval::attribution_ndcg(uniform, short_cand), ValidationError);
}

TEST(LocalAccuracyReport, IdentityAndOffset) {
  const std::vector<double> model{10, 20, 30, 40};
  const std::vector<std::vector<std::size_t>> subsets{{0, 1, 2, 3}, {1, 3}};
  const auto same = eval::local_accuracy_report(model, model, subsets);
  EXPECT_DOUBLE_EQ(same[0].mae, 0.0);
  EXPECT_DOUBLE_EQ(same[1].mae, 0.0);

  std::vector<double> offset(model);
  for (auto& v : offset) v += 1.0;
  const auto off = eval::local_accuracy_report(model, offset, subsets);
  EXPECT_DOUBLE_EQ(off[0].mae, 1.0);
  EXPECT_DOUBLE_EQ(off[0].sigma, 0.0);
  EXPECT_EQ(off[1].n, 2u);

  const std::vector<double> shorter{1.0};
  EXPECT_THROW(eval::local_accuracy_report(model, shorter, subsets), ValidationError);
}

TEST(BuildReport, StructureAndSubsetMonotonicity) {
  Rng rng(8);
  const std::size_t n = 50;
  eval::ReportInputs in;
  for (std::size_t i = 0; i < n; ++i) {
    in.y_test.push_back(rng.uniform(0.0, 60.0));
    in.gbdt_preds.push_back(in.y_test.back() + rng.normal(0.0, 5.0));
    in.cbr_preds.push_back(in.y_test.back() + rng.normal(0.0, 3.0));
  }
  const auto rep = eval::build_report(in);
  EXPECT_EQ(rep.n_test, n);
  ASSERT_EQ(rep.data_subsets.size(), 3u);
  EXPECT_EQ(rep.data_subsets[1].n, static_cast<std::size_t>(std::ceil(0.64 * 50 - 1e-9)));
  EXPECT_EQ(rep.data_subsets[2].n, static_cast<std::size_t>(std::ceil(0.43 * 50 - 1e-9)));
  // most-accurate subsets can only improve the MAE
  EXPECT_LE(rep.cbr_summary[1].mae, rep.cbr_summary[0].mae);
  EXPECT_LE(rep.cbr_summary[2].mae, rep.cbr_summary[1].mae);
  EXPECT_LE(rep.gbdt_summary[1].mae, rep.gbdt_summary[0].mae);
  // histogram counts cover every instance; threshold counts partition
  std::size_t total = 0;
  for (const auto& b : rep.cbr_histogram) total += b.count;
  EXPECT_EQ(total, n);
  for (const auto& t : rep.gbdt_thresholds) EXPECT_EQ(t.within + t.above, n);
  EXPECT_FALSE(rep.explanations_present);
  EXPECT_TRUE(rep.to_json().at("explanations").is_null());
  EXPECT_NE(rep.to_markdown().find("sections absent"), std::string::npos);
}

TEST(BuildReport, ExplanationSectionsAndExclusions) {
  const std::size_t n = 12, m = 3;
  eval::ReportInputs in;
  Rng rng(9);
  for (std::size_t i = 0; i < n; ++i) {
    in.y_test.push_back(10.0 + static_cast<double>(i));
    in.gbdt_preds.push_back(in.y_test.back() + rng.normal(0.0, 1.0));
    in.cbr_preds.push_back(in.y_test.back() + rng.normal(0.0, 1.0));
  }
  in.global_weights = {0.5, 0.3, 0.2};
  for (std::size_t i = 0; i < 8; ++i) {
    in.explained_indices.push_back(i);
    AdditiveExplanation s = make_expl({2.0, 1.0, 0.5}, in.gbdt_preds[i] - 3.5);
    in.shap.push_back(s);
    in.lime.push_back(make_expl({0.5, 1.0, 2.0}, 1.0));
    if (i == 4)
      in.additive_cbr.push_back(std::nullopt);  // gamma-undefined instance
    else
      in.additive_cbr.push_back(make_expl({1.0, 0.5, 0.25}));
  }
  const auto rep = eval::build_report(in);
  EXPECT_TRUE(rep.explanations_present);
  EXPECT_EQ(rep.n_explained, 8u);
  EXPECT_EQ(rep.excluded_gamma_undefined, 1u);
  // SHAP reconstructs gbdt_pred exactly here: phi0 chosen so sums match
  EXPECT_NEAR(rep.shap_scores.local_accuracy[0].mae, 0.0, 1e-12);
  // all usable baselines scored
  EXPECT_EQ(rep.shap_scores.ndcg_counts_global[0], 8u);
  EXPECT_EQ(rep.shap_scores.ndcg_counts_additive[0], 7u);
  // shap candidate ranks (2,1,0.5) against weights (0.5,0.3,0.2): same order
  EXPECT_DOUBLE_EQ(rep.shap_scores.ndcg_vs_global[0], 1.0);
  for (double v : rep.lime_scores.ndcg_vs_global) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto j = rep.to_json();
  EXPECT_EQ(j.at("explanations").at("exclusions").at("gamma_undefined").get<int>(), 1);
  const auto md = rep.to_markdown();
  EXPECT_NE(md.find("nDCG vs Additive CBR"), std::string::npos);
  EXPECT_NE(md.find("gamma undefined 1"), std::string::npos);
}

TEST(BuildReport, ValidatesAlignment) {
  eval::ReportInputs in;
  in.y_test = {1, 2};
  in.gbdt_preds = {1};
  in.cbr_preds = {1, 2};
  EXPECT_THROW(eval::build_report(in), ValidationError);
  in.gbdt_preds = {1, 2};
  in.explained_indices = {0};
  EXPECT_THROW(eval::build_report(in), ValidationError);  // missing explanation vectors
}
