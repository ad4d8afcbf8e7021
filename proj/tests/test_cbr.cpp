#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "xcbr/cbr.hpp"
#include "xcbr/rng.hpp"
#include "test_util.hpp"

using namespace xcbr;

namespace {

cbr::CaseBase simple_case_base(const std::vector<std::vector<double>>& rows,
                               const std::vector<double>& targets,
                               std::vector<double> weights = {}) {
  const auto d = xcbr_test::numeric_dataset(rows, targets);
  if (weights.empty())
    weights.assign(d.n_features(), 1.0 / static_cast<double>(d.n_features()));
  return cbr::build_case_base(d, weights);
}

// Independent distance recomputation for the brute-force retrieval oracle.
double oracle_distance(const Row& a, const Row& b, const FeatureSchema& schema,
                       const std::vector<double>& weights, const FeatureRanges& ranges) {
  double acc = 0.0;
  for (std::size_t j = 0; j < schema.size(); ++j) {
    double d = 0.0;
    switch (schema.features[j].kind) {
      case FeatureKind::Numeric: {
        const auto& r = ranges.numeric[j];
        if (r.max == r.min)
          d = numeric_value(a[j]) == numeric_value(b[j]) ? 0.0 : 1.0;
        else
          d = std::clamp(std::abs(numeric_value(a[j]) - numeric_value(b[j])) / (r.max - r.min),
                         0.0, 1.0);
        break;
      }
      case FeatureKind::Binary:
        d = numeric_value(a[j]) == numeric_value(b[j]) ? 0.0 : 1.0;
        break;
      case FeatureKind::Categorical:
        d = label_value(a[j]) == label_value(b[j]) ? 0.0 : 1.0;
        break;
    }
    acc += weights[j] * d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

TEST(LocalDistance, SymbolicKinds) {
  NumericRange unused{};
  EXPECT_DOUBLE_EQ(
      cbr::local_distance(FeatureKind::Categorical, std::string("A"), std::string("A"), unused),
      0.0);
  EXPECT_DOUBLE_EQ(
      cbr::local_distance(FeatureKind::Categorical, std::string("A"), std::string("B"), unused),
      1.0);
  EXPECT_DOUBLE_EQ(cbr::local_distance(FeatureKind::Binary, 1.0, 0.0, unused), 1.0);
  EXPECT_DOUBLE_EQ(cbr::local_distance(FeatureKind::Binary, 1.0, 1.0, unused), 0.0);
}

TEST(LocalDistance, NumericRangeNormalizedAndClamped) {
  NumericRange r{5.0, 25.0, false};
  EXPECT_DOUBLE_EQ(cbr::local_distance(FeatureKind::Numeric, 5.0, 15.0, r), 0.5);
  EXPECT_DOUBLE_EQ(cbr::local_distance(FeatureKind::Numeric, 0.0, 100.0, r), 1.0);  // clamped
  NumericRange constant{7.0, 7.0, true};
  EXPECT_DOUBLE_EQ(cbr::local_distance(FeatureKind::Numeric, 7.0, 7.0, constant), 0.0);
  EXPECT_DOUBLE_EQ(cbr::local_distance(FeatureKind::Numeric, 7.0, 9.0, constant), 1.0);
}

TEST(CaseDistance, IdentityAndFrozenValues) {
  auto cb = simple_case_base({{0.0, 0.0}, {10.0, 10.0}}, {1, 2}, {0.5, 0.5});
  EXPECT_DOUBLE_EQ(
      cbr::case_distance(cb.cases[0], cb.cases[0], cb.schema, cb.weights, cb.ranges), 0.0);
  // local distances (0, 1) under weights (0.5, 0.5): sqrt(0.5)
  Row q{0.0, 10.0};
  EXPECT_NEAR(cbr::case_distance(q, cb.cases[0], cb.schema, cb.weights, cb.ranges),
              0.7071067811865476, 1e-15);
  // all local distances 1 -> full distance 1 under normalized weights
  Row far{10.0, 10.0};
  EXPECT_DOUBLE_EQ(
      cbr::case_distance(far, cb.cases[0], cb.schema, cb.weights, cb.ranges), 1.0);
}

TEST(Retrieve, ExactMatchAndExclusion) {
  auto cb = simple_case_base({{0}, {1}, {2}, {3}, {4}, {5}}, {10, 11, 12, 13, 14, 15});
  const auto hit = cbr::retrieve(cb, cb.cases[5], 1);
  EXPECT_EQ(hit.indices, (std::vector<std::size_t>{5}));
  EXPECT_DOUBLE_EQ(hit.distances[0], 0.0);
  const auto excl = cbr::retrieve(cb, cb.cases[5], 1, 5);
  EXPECT_EQ(excl.indices, (std::vector<std::size_t>{4}));
  EXPECT_GT(excl.distances[0], 0.0);
}

TEST(Retrieve, TieBreaksToLowestIndex) {
  // cases 0 and 1 are equidistant from the query
  auto cb = simple_case_base({{0.0}, {2.0}, {9.0}}, {1, 2, 3});
  Row q{1.0};
  const auto r = cbr::retrieve(cb, q, 1);
  EXPECT_EQ(r.indices[0], 0u);
}

TEST(Retrieve, RejectsOversizedK) {
  auto cb = simple_case_base({{0}, {1}}, {1, 2});
  EXPECT_THROW(cbr::retrieve(cb, cb.cases[0], 3), ValidationError);
  EXPECT_THROW(cbr::retrieve(cb, cb.cases[0], 2, 0), ValidationError);  // one excluded
  EXPECT_THROW(cbr::retrieve(cb, cb.cases[0], 0), ValidationError);
}

TEST(Predict, MeanOfNeighborTargets) {
  auto cb = simple_case_base({{0.0}, {0.1}, {0.2}, {9.0}}, {10, 20, 30, 500});
  Row q{0.1};
  EXPECT_DOUBLE_EQ(cbr::predict(cb, q, 3), 20.0);
  EXPECT_DOUBLE_EQ(cbr::predict(cb, cb.cases[3], 1), 500.0);
}

TEST(Predict, ConstantCaseBase) {
  auto cb = simple_case_base({{0}, {3}, {7}, {9}}, {4.5, 4.5, 4.5, 4.5});
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    Row q{rng.uniform(0.0, 9.0)};
    EXPECT_DOUBLE_EQ(cbr::predict(cb, q, 3), 4.5);
  }
}

TEST(Predict, StaysWithinTargetRange) {
  GeneratorConfig cfg;
  cfg.n = 60;
  cfg.seed = 21;
  const auto synth = generate_synthetic(cfg);
  std::vector<double> w(synth.data.n_features(), 1.0 / synth.data.n_features());
  const auto cb = cbr::build_case_base(synth.data, w);
  const auto lo = *std::min_element(cb.targets.begin(), cb.targets.end());
  const auto hi = *std::max_element(cb.targets.begin(), cb.targets.end());
  GeneratorConfig qcfg = cfg;
  qcfg.seed = 22;
  const auto queries = generate_synthetic(qcfg);
  for (std::size_t i = 0; i < queries.data.n_rows(); ++i) {
    const double p = cbr::predict(cb, queries.data.rows[i], 3);
    EXPECT_GE(p, lo);
    EXPECT_LE(p, hi);
  }
}

TEST(Loo, ForcedAverages) {
  auto cb = simple_case_base({{0.0}, {1.0}, {2.0}, {3.0}}, {0, 0, 0, 12});
  const auto loo = cbr::loo_predictions(cb, 3);
  ASSERT_EQ(loo.size(), 4u);
  EXPECT_DOUBLE_EQ(loo[0], 4.0);
  EXPECT_DOUBLE_EQ(loo[1], 4.0);
  EXPECT_DOUBLE_EQ(loo[2], 4.0);
  EXPECT_DOUBLE_EQ(loo[3], 0.0);
}

TEST(Loo, NeverUsesOwnTarget) {
  // each case is its own nearest neighbor, yet LOO must look elsewhere
  auto cb = simple_case_base({{0.0}, {5.0}, {10.0}}, {100, 200, 300});
  const auto loo = cbr::loo_predictions(cb, 1);
  EXPECT_DOUBLE_EQ(loo[0], 200.0);
  EXPECT_DOUBLE_EQ(loo[2], 200.0);
}

TEST(Loo, AllEqualTargetsAndDeterminism) {
  auto cb = simple_case_base({{0}, {1}, {2}, {3}, {4}}, {3, 3, 3, 3, 3});
  const auto a = cbr::loo_predictions(cb, 3);
  const auto b = cbr::loo_predictions(cb, 3);
  EXPECT_EQ(a, b);
  for (double v : a) EXPECT_DOUBLE_EQ(v, 3.0);
  auto tiny = simple_case_base({{0}, {1}, {2}}, {1, 2, 3});
  EXPECT_THROW(cbr::loo_predictions(tiny, 3), ValidationError);
}

TEST(OverrideWeights, ZeroedFeatureStopsMattering) {
  // feature 1 separates the cases; zero its weight and case 0 ties case 1
  auto cb = simple_case_base({{0.0, 0.0}, {0.0, 9.0}}, {1, 2}, {0.5, 0.5});
  Row q{0.0, 9.0};
  EXPECT_EQ(cbr::retrieve(cb, q, 1).indices[0], 1u);
  const auto zeroed = cbr::override_weights(cb, {{"f1", 0.0}});
  const auto r = cbr::retrieve(zeroed, q, 1);
  EXPECT_EQ(r.indices[0], 0u);  // tie at distance 0, lowest index wins
  EXPECT_DOUBLE_EQ(r.distances[0], 0.0);
  // source untouched
  EXPECT_DOUBLE_EQ(cb.weights[1], 0.5);
}

TEST(OverrideWeights, UniformScalingKeepsRankings) {
  GeneratorConfig cfg;
  cfg.n = 40;
  cfg.seed = 55;
  const auto synth = generate_synthetic(cfg);
  Rng rng(7);
  std::vector<double> w(synth.data.n_features());
  double total = 0.0;
  for (auto& x : w) {
    x = rng.uniform(0.1, 1.0);
    total += x;
  }
  for (auto& x : w) x /= total;
  const auto cb = cbr::build_case_base(synth.data, w);
  std::map<std::string, double> scaled;
  for (std::size_t j = 0; j < w.size(); ++j)
    scaled[cb.schema.features[j].name] = 10.0 * w[j];
  const auto cb10 = cbr::override_weights(cb, scaled);
  GeneratorConfig qcfg = cfg;
  qcfg.seed = 56;
  const auto queries = generate_synthetic(qcfg);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto r1 = cbr::retrieve(cb, queries.data.rows[i], 5);
    const auto r2 = cbr::retrieve(cb10, queries.data.rows[i], 5);
    EXPECT_EQ(r1.indices, r2.indices);
  }
}

TEST(OverrideWeights, AllZeroRejected) {
  auto cb = simple_case_base({{0}, {1}}, {1, 2});
  EXPECT_THROW(cbr::override_weights(cb, {{"f0", 0.0}}), ValidationError);
  EXPECT_THROW(cbr::override_weights(cb, {{"f0", -1.0}}), ValidationError);
  EXPECT_THROW(cbr::override_weights(cb, {{"nope", 1.0}}), ValidationError);
}

TEST(Retrieve, UnseenQueryLabelIsMaximallyFar) {
  Dataset d;
  d.schema.features = {{"k", FeatureKind::Categorical, std::nullopt}};
  d.schema.target_name = "y";
  d.rows = {{std::string("A")}, {std::string("B")}};
  d.targets = {1, 2};
  const auto cb = cbr::build_case_base(d, std::vector<double>{1.0});
  Row q{std::string("ZZZ")};
  const auto r = cbr::retrieve(cb, q, 2);
  EXPECT_DOUBLE_EQ(r.distances[0], 1.0);
  EXPECT_DOUBLE_EQ(r.distances[1], 1.0);
}

TEST(MetricLaws, RandomPairs) {
  GeneratorConfig cfg;
  cfg.n = 100;
  cfg.seed = 77;
  const auto synth = generate_synthetic(cfg);
  const auto m = synth.data.n_features();
  std::vector<double> w(m, 1.0 / static_cast<double>(m));
  const auto cb = cbr::build_case_base(synth.data, w);
  Rng rng(13);
  for (int t = 0; t < 1000; ++t) {
    const auto i = static_cast<std::size_t>(rng.below(cb.size()));
    const auto j = static_cast<std::size_t>(rng.below(cb.size()));
    const double dij = cbr::case_distance(cb.cases[i], cb.cases[j], cb.schema, cb.weights, cb.ranges);
    const double dji = cbr::case_distance(cb.cases[j], cb.cases[i], cb.schema, cb.weights, cb.ranges);
    EXPECT_DOUBLE_EQ(dij, dji);
    EXPECT_GE(dij, 0.0);
    EXPECT_LE(dij, 1.0);
    EXPECT_DOUBLE_EQ(
        cbr::case_distance(cb.cases[i], cb.cases[i], cb.schema, cb.weights, cb.ranges), 0.0);
  }
}

TEST(Retrieve, MatchesBruteForceOracle) {
  GeneratorConfig cfg;
  cfg.n = 150;
  cfg.seed = 31;
  const auto synth = generate_synthetic(cfg);
  Rng wrng(3);
  std::vector<double> w(synth.data.n_features());
  double total = 0.0;
  for (auto& x : w) {
    x = wrng.uniform();
    total += x;
  }
  for (auto& x : w) x /= total;
  const auto cb = cbr::build_case_base(synth.data, w);

  GeneratorConfig qcfg = cfg;
  qcfg.seed = 32;
  const auto queries = generate_synthetic(qcfg);
  for (std::size_t qi = 0; qi < 25; ++qi) {
    const auto& q = queries.data.rows[qi];
    std::vector<std::pair<double, std::size_t>> oracle;
    for (std::size_t i = 0; i < cb.size(); ++i)
      oracle.emplace_back(oracle_distance(q, cb.cases[i], cb.schema, cb.weights, cb.ranges), i);
    std::sort(oracle.begin(), oracle.end());
    const std::size_t k = 5;
    const auto r = cbr::retrieve(cb, q, k);
    for (std::size_t j = 0; j < k; ++j) {
      EXPECT_EQ(r.indices[j], oracle[j].second);
      EXPECT_DOUBLE_EQ(r.distances[j], oracle[j].first);
    }
  }
}

TEST(Persistence, RoundTrip) {
  GeneratorConfig cfg;
  cfg.n = 25;
  cfg.seed = 9;
  const auto synth = generate_synthetic(cfg);
  std::vector<double> w(synth.data.n_features(), 1.0 / synth.data.n_features());
  const auto cb = cbr::build_case_base(synth.data, w, 3);
  const auto j = cbr::to_json(cb, "digest");
  const auto back = cbr::from_json(j);
  EXPECT_EQ(back.size(), cb.size());
  EXPECT_EQ(back.weights, cb.weights);
  EXPECT_EQ(back.targets, cb.targets);
  EXPECT_EQ(back.default_k, cb.default_k);
  for (std::size_t i = 0; i < cb.size(); ++i) EXPECT_EQ(back.cases[i], cb.cases[i]);
  EXPECT_EQ(cbr::to_json(back, "digest").dump(), j.dump());
  auto bad = cbr::to_json(cb);
  bad["format_version"] = 5;
  EXPECT_THROW(cbr::from_json(bad), ValidationError);
}
