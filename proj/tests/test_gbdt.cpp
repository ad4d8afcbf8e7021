#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "xcbr/gbdt.hpp"
#include "test_util.hpp"

using namespace xcbr;

TEST(SplitGain, HandEvaluatedFormula) {
  // 0.5 * [16/3 + 36/4 - 4/6] = 41/6
  EXPECT_NEAR(gbdt::split_gain(-4, 2, 6, 3, 1.0), 41.0 / 6.0, 1e-12);
  EXPECT_DOUBLE_EQ(gbdt::split_gain(0, 5, 0, 7, 1.0), 0.0);
}

TEST(SplitGain, SymmetricHalvesMatchClosedForm) {
  const double g = 3.5, h = 2.0, lambda = 0.7;
  const double expected = g * g / (h + lambda) - 2.0 * g * g / (2.0 * h + lambda);
  EXPECT_NEAR(gbdt::split_gain(g, h, g, h, lambda), expected, 1e-12);
}

TEST(Hyperparams, Validation) {
  gbdt::Hyperparams p;
  p.learning_rate = 0.0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.subsample = 1.5;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.n_estimators = -1;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  EXPECT_NO_THROW(p.validate());
  EXPECT_DOUBLE_EQ(p.learning_rate, 0.1);
  EXPECT_EQ(p.max_depth, 7);
  EXPECT_EQ(p.n_estimators, 500);
  EXPECT_DOUBLE_EQ(p.reg_lambda, 1.0);
}

namespace {

gbdt::Model single_tree_model(double base) {
  gbdt::Model m;
  m.base_score = base;
  m.n_features = 1;
  m.feature_names = {"f0"};
  gbdt::Tree t;
  t.nodes.resize(3);
  t.nodes[0] = {0, 0.5, 1, 2, 0.0};
  t.nodes[1] = {-1, 0.0, -1, -1, -1.0};
  t.nodes[2] = {-1, 0.0, -1, -1, +1.0};
  m.trees.push_back(t);
  m.importance_raw = {1.0};
  m.importance_normalized = {1.0};
  return m;
}

}  // namespace

TEST(Predict, ZeroTreesGivesBaseScore) {
  gbdt::Model m;
  m.base_score = 12.5;
  m.n_features = 2;
  const std::vector<double> x{0.3, 0.9};
  EXPECT_DOUBLE_EQ(m.predict(x), 12.5);
}

TEST(Predict, SinglePathTrace) {
  const auto m = single_tree_model(10.0);
  EXPECT_DOUBLE_EQ(m.predict(std::vector<double>{0.2}), 9.0);
  EXPECT_DOUBLE_EQ(m.predict(std::vector<double>{0.7}), 11.0);
  EXPECT_DOUBLE_EQ(m.predict(std::vector<double>{0.5}), 9.0);  // <= goes left
}

TEST(Predict, TreesAreAdditive) {
  auto m = single_tree_model(10.0);
  m.trees.push_back(m.trees[0]);
  EXPECT_DOUBLE_EQ(m.predict(std::vector<double>{0.7}), 12.0);
}

TEST(Predict, SchemaMismatchRejected) {
  const auto m = single_tree_model(0.0);
  EXPECT_THROW(m.predict(std::vector<double>{0.1, 0.2}), ValidationError);
}

TEST(Fit, ConstantTargetsAreAFixedPoint) {
  std::vector<std::vector<double>> rows;
  std::vector<double> ys;
  Rng rng(3);
  for (int i = 0; i < 40; ++i) {
    rows.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    ys.push_back(7.25);
  }
  const auto d = xcbr_test::numeric_dataset(rows, ys);
  gbdt::Hyperparams p;
  p.n_estimators = 20;
  p.max_depth = 3;
  p.subsample = 1.0;
  p.colsample_bytree = 1.0;
  const auto m = gbdt::fit(d, p);
  for (const auto& row : rows) {
    std::vector<double> enc;
    const auto e = encode_instance({row[0], row[1], row[2]}, d.schema, m.ranges);
    EXPECT_DOUBLE_EQ(m.predict(e.values), 7.25);
  }
}

TEST(Fit, ZeroEstimatorsPredictsMean) {
  const auto d = xcbr_test::numeric_dataset({{0}, {1}, {2}}, {3, 6, 9});
  gbdt::Hyperparams p;
  p.n_estimators = 0;
  const auto m = gbdt::fit(d, p);
  EXPECT_DOUBLE_EQ(m.base_score, 6.0);
  EXPECT_DOUBLE_EQ(m.predict(std::vector<double>{0.4}), 6.0);
  EXPECT_TRUE(m.importance_uniform_fallback);
  EXPECT_DOUBLE_EQ(m.importance_normalized[0], 1.0);
}

TEST(Fit, EmptyDatasetRejected) {
  Dataset d;
  d.schema = xcbr_test::numeric_schema(1);
  gbdt::Hyperparams p;
  EXPECT_THROW(gbdt::fit(d, p), ValidationError);
}

TEST(Fit, BeatsConstantMeanOnNoiselessLinearData) {
  // Targets linear in the features; boosting must do better than the mean.
  Rng rng(17);
  std::vector<std::vector<double>> rows;
  std::vector<double> ys;
  for (int i = 0; i < 300; ++i) {
    const double a = rng.uniform(), b = rng.uniform();
    rows.push_back({a, b});
    ys.push_back(5.0 + 8.0 * a + 2.0 * b);
  }
  const auto d = xcbr_test::numeric_dataset(rows, ys);
  gbdt::Hyperparams p;
  p.n_estimators = 200;
  p.max_depth = 4;
  p.subsample = 1.0;
  p.colsample_bytree = 1.0;
  const auto m = gbdt::fit(d, p);

  const double mean = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
  double model_mae = 0.0, mean_mae = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto e = encode_instance({rows[i][0], rows[i][1]}, d.schema, m.ranges);
    model_mae += std::abs(m.predict(e.values) - ys[i]);
    mean_mae += std::abs(mean - ys[i]);
  }
  EXPECT_LT(model_mae, mean_mae);
}

TEST(Fit, TrainingLossNonIncreasingWithoutSubsampling) {
  Rng rng(8);
  std::vector<std::vector<double>> rows;
  std::vector<double> ys;
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
    rows.push_back({a, b, c});
    ys.push_back(10.0 * a - 4.0 * b + rng.normal(0.0, 0.5));
  }
  const auto d = xcbr_test::numeric_dataset(rows, ys);
  gbdt::Hyperparams p;
  p.n_estimators = 60;
  p.max_depth = 3;
  p.subsample = 1.0;
  p.colsample_bytree = 1.0;
  gbdt::FitDiagnostics diag;
  gbdt::fit(d, p, &diag);
  ASSERT_EQ(diag.train_loss.size(), 60u);
  for (std::size_t t = 1; t < diag.train_loss.size(); ++t)
    EXPECT_LE(diag.train_loss[t], diag.train_loss[t - 1] + 1e-12);
}

TEST(Fit, SingleInstanceLeafFitsResidualExactly) {
  // lambda=0, lr=1: a leaf holding one residual r gets weight exactly r.
  const auto d = xcbr_test::numeric_dataset({{0.0}, {1.0}}, {2.0, 10.0});
  gbdt::Hyperparams p;
  p.n_estimators = 1;
  p.max_depth = 1;
  p.learning_rate = 1.0;
  p.reg_lambda = 0.0;
  p.subsample = 1.0;
  p.colsample_bytree = 1.0;
  const auto m = gbdt::fit(d, p);
  const auto e0 = encode_instance({0.0}, d.schema, m.ranges);
  const auto e1 = encode_instance({1.0}, d.schema, m.ranges);
  EXPECT_DOUBLE_EQ(m.predict(e0.values), 2.0);
  EXPECT_DOUBLE_EQ(m.predict(e1.values), 10.0);
}

TEST(Importance, DominantFeatureWinsOnNoiselessData) {
  Rng rng(4);
  std::vector<std::vector<double>> rows;
  std::vector<double> ys;
  for (int i = 0; i < 250; ++i) {
    const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
    rows.push_back({a, b, c});
    ys.push_back(20.0 * b);  // only feature 1 matters
  }
  const auto d = xcbr_test::numeric_dataset(rows, ys);
  gbdt::Hyperparams p;
  p.n_estimators = 50;
  p.max_depth = 4;
  p.subsample = 1.0;
  p.colsample_bytree = 1.0;
  const auto m = gbdt::fit(d, p);
  EXPECT_GT(m.importance_normalized[1], m.importance_normalized[0]);
  EXPECT_GT(m.importance_normalized[1], m.importance_normalized[2]);
}

TEST(Importance, NormalizedSumsToOne) {
  GeneratorConfig cfg;
  cfg.n = 120;
  cfg.seed = 2;
  const auto synth = generate_synthetic(cfg);
  gbdt::Hyperparams p;
  p.n_estimators = 30;
  p.max_depth = 4;
  const auto m = gbdt::fit(synth.data, p);
  double sum = 0.0;
  for (double w : m.importance_normalized) {
    EXPECT_GE(w, 0.0);
    sum += w;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_FALSE(m.importance_uniform_fallback);
}

TEST(Fit, DeterministicUnderSeed) {
  GeneratorConfig cfg;
  cfg.n = 100;
  cfg.seed = 31;
  const auto synth = generate_synthetic(cfg);
  gbdt::Hyperparams p;
  p.n_estimators = 25;
  p.max_depth = 5;
  p.seed = 77;
  const auto m1 = gbdt::fit(synth.data, p);
  const auto m2 = gbdt::fit(synth.data, p);
  EXPECT_EQ(gbdt::to_json(m1).dump(), gbdt::to_json(m2).dump());
  p.seed = 78;
  const auto m3 = gbdt::fit(synth.data, p);
  EXPECT_NE(gbdt::to_json(m1).dump(), gbdt::to_json(m3).dump());
}

TEST(Persistence, RoundTripIsBitExact) {
  GeneratorConfig cfg;
  cfg.n = 80;
  cfg.seed = 12;
  const auto synth = generate_synthetic(cfg);
  gbdt::Hyperparams p;
  p.n_estimators = 12;
  p.max_depth = 3;
  const auto m = gbdt::fit(synth.data, p);
  const auto j = gbdt::to_json(m, "digest123");
  const auto back = gbdt::from_json(j);
  EXPECT_EQ(back.base_score, m.base_score);
  EXPECT_EQ(back.n_features, m.n_features);
  ASSERT_EQ(back.trees.size(), m.trees.size());
  for (std::size_t t = 0; t < m.trees.size(); ++t) EXPECT_EQ(back.trees[t], m.trees[t]);
  EXPECT_EQ(back.importance_raw, m.importance_raw);
  EXPECT_EQ(back.importance_normalized, m.importance_normalized);
  // serialized form is stable through a decode/encode cycle
  EXPECT_EQ(gbdt::to_json(back, "digest123").dump(), j.dump());
}

TEST(Persistence, RejectsWrongVersionOrKind) {
  auto j = gbdt::to_json(single_tree_model(1.0));
  j["format_version"] = 99;
  EXPECT_THROW(gbdt::from_json(j), ValidationError);
  auto j2 = gbdt::to_json(single_tree_model(1.0));
  j2["kind"] = "case_base";
  EXPECT_THROW(gbdt::from_json(j2), ValidationError);
}
