#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xcbr/cbr.hpp"
#include "xcbr/dataset.hpp"
#include "xcbr/error.hpp"
#include "xcbr/eval.hpp"
#include "xcbr/explain.hpp"
#include "xcbr/gbdt.hpp"
#include "xcbr/io.hpp"
#include "xcbr/parallel.hpp"
#include "xcbr/rng.hpp"

namespace xcbr {

struct Seeds {
  std::uint64_t split = 1;
  std::uint64_t gbdt = 2;
  std::uint64_t shap = 3;
  std::uint64_t lime = 4;

  nlohmann::json to_json() const {
    return nlohmann::json{{"split", split}, {"gbdt", gbdt}, {"shap", shap}, {"lime", lime}};
  }
  static Seeds from_json(const nlohmann::json& j) {
    Seeds s;
    if (j.contains("split")) s.split = j.at("split").get<std::uint64_t>();
    if (j.contains("gbdt")) s.gbdt = j.at("gbdt").get<std::uint64_t>();
    if (j.contains("shap")) s.shap = j.at("shap").get<std::uint64_t>();
    if (j.contains("lime")) s.lime = j.at("lime").get<std::uint64_t>();
    return s;
  }
};

struct EvalConfig {
  std::vector<double> subset_fractions{0.64, 0.43};
  double histogram_bin_width = 10.0;
  std::vector<double> thresholds{2.0, 5.0};
};

struct RunConfig {
  // Exactly one data source: a CSV+schema pair, or the synthetic generator.
  std::optional<std::string> data_csv;
  std::optional<std::string> schema_json;
  std::optional<GeneratorConfig> generator;
  std::string out_dir = "out";

  Seeds seeds;
  double train_fraction = 0.8;
  gbdt::Hyperparams gbdt_params;
  std::size_t cbr_k = 3;

  std::size_t shap_background_size = 100;
  std::optional<std::size_t> shap_budget;  // nullopt: full enumeration
  explain::LimeConfig lime;

  EvalConfig eval;
  std::size_t explain_limit = 200;  // 0 disables the explanation stages
  std::map<std::string, double> weight_overrides;

  void validate() const {
    const bool file_source = data_csv.has_value();
    if (file_source == generator.has_value())
      throw ValidationError("config: provide exactly one of data_csv or generator");
    if (file_source && !schema_json)
      throw ValidationError("config: data_csv requires schema_json");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw ValidationError("config: train_fraction must be in (0,1)");
    if (cbr_k < 1) throw ValidationError("config: cbr_k must be >= 1");
    if (shap_background_size < 1)
      throw ValidationError("config: shap_background_size must be >= 1");
    if (out_dir.empty()) throw ValidationError("config: out_dir must be set");
    gbdt_params.validate();
    for (double f : eval.subset_fractions)
      if (!(f > 0.0 && f <= 1.0))
        throw ValidationError("config: subset fractions must be in (0,1]");
  }

  // Canonical form, out_dir excluded so the digest identifies the experiment,
  // not where it landed.
  nlohmann::json canonical() const {
    nlohmann::json j{{"seeds", seeds.to_json()},
                     {"train_fraction", train_fraction},
                     {"gbdt", gbdt_params.to_json()},
                     {"cbr_k", cbr_k},
                     {"shap",
                      {{"background_size", shap_background_size},
                       {"budget", shap_budget ? nlohmann::json(*shap_budget) : nlohmann::json()}}},
                     {"lime",
                      {{"num_samples", lime.num_samples},
                       {"kernel_width",
                        lime.kernel_width ? nlohmann::json(*lime.kernel_width) : nlohmann::json()},
                       {"ridge_penalty", lime.ridge_penalty}}},
                     {"eval",
                      {{"subset_fractions", eval.subset_fractions},
                       {"histogram_bin_width", eval.histogram_bin_width},
                       {"thresholds", eval.thresholds}}},
                     {"explain_limit", explain_limit}};
    if (data_csv) j["data_csv"] = *data_csv;
    if (schema_json) j["schema_json"] = *schema_json;
    if (generator) j["generator"] = generator->to_json();
    if (!weight_overrides.empty()) j["weight_overrides"] = weight_overrides;
    return j;
  }

  std::string digest() const { return fnv1a_hex(canonical().dump()); }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig cfg;
    if (j.contains("data_csv") && !j.at("data_csv").is_null())
      cfg.data_csv = j.at("data_csv").get<std::string>();
    if (j.contains("schema_json") && !j.at("schema_json").is_null())
      cfg.schema_json = j.at("schema_json").get<std::string>();
    if (j.contains("generator") && !j.at("generator").is_null())
      cfg.generator = GeneratorConfig::from_json(j.at("generator"));
    if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("seeds")) cfg.seeds = Seeds::from_json(j.at("seeds"));
    if (j.contains("train_fraction")) cfg.train_fraction = j.at("train_fraction").get<double>();
    if (j.contains("gbdt")) cfg.gbdt_params = gbdt::Hyperparams::from_json(j.at("gbdt"));
    if (j.contains("cbr_k")) cfg.cbr_k = j.at("cbr_k").get<std::size_t>();
    if (j.contains("shap")) {
      const auto& js = j.at("shap");
      if (js.contains("background_size"))
        cfg.shap_background_size = js.at("background_size").get<std::size_t>();
      if (js.contains("budget") && !js.at("budget").is_null())
        cfg.shap_budget = js.at("budget").get<std::size_t>();
    }
    if (j.contains("lime")) {
      const auto& jl = j.at("lime");
      if (jl.contains("num_samples")) cfg.lime.num_samples = jl.at("num_samples").get<std::size_t>();
      if (jl.contains("kernel_width") && !jl.at("kernel_width").is_null())
        cfg.lime.kernel_width = jl.at("kernel_width").get<double>();
      if (jl.contains("ridge_penalty")) cfg.lime.ridge_penalty = jl.at("ridge_penalty").get<double>();
    }
    if (j.contains("eval")) {
      const auto& je = j.at("eval");
      if (je.contains("subset_fractions"))
        cfg.eval.subset_fractions = je.at("subset_fractions").get<std::vector<double>>();
      if (je.contains("histogram_bin_width"))
        cfg.eval.histogram_bin_width = je.at("histogram_bin_width").get<double>();
      if (je.contains("thresholds"))
        cfg.eval.thresholds = je.at("thresholds").get<std::vector<double>>();
    }
    if (j.contains("explain_limit")) cfg.explain_limit = j.at("explain_limit").get<std::size_t>();
    if (j.contains("weight_overrides") && !j.at("weight_overrides").is_null())
      cfg.weight_overrides = j.at("weight_overrides").get<std::map<std::string, double>>();
    cfg.validate();
    return cfg;
  }
};

// Fixed artifact names inside a run directory; stages find each other by them.
namespace artifact {
inline constexpr const char* kSchema = "schema.json";
inline constexpr const char* kData = "data.csv";
inline constexpr const char* kTruth = "truth.json";
inline constexpr const char* kTrain = "train.csv";
inline constexpr const char* kTest = "test.csv";
inline constexpr const char* kSplit = "split.json";
inline constexpr const char* kModel = "gbdt_model.json";
inline constexpr const char* kCaseBase = "casebase.json";
inline constexpr const char* kPredictions = "predictions.csv";
inline constexpr const char* kShap = "explanations_kernelshap.jsonl";
inline constexpr const char* kLime = "explanations_lime.jsonl";
inline constexpr const char* kAdditiveCbr = "explanations_additive_cbr.jsonl";
inline constexpr const char* kReportJson = "report.json";
inline constexpr const char* kReportMd = "report.md";
inline constexpr const char* kHistogramCsv = "histograms.csv";
inline constexpr const char* kThresholdCsv = "thresholds.csv";
inline constexpr const char* kRunConfig = "run_config.json";
}  // namespace artifact

struct PipelineResult {
  eval::EvalReport report;
  std::filesystem::path out_dir;
  gbdt::Model model;
  cbr::CaseBase case_base;
};

namespace detail {

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

inline std::string predictions_csv(std::span<const double> y, std::span<const double> gbdt_pred,
                                   std::span<const double> cbr_pred) {
  std::string out = "index,target,gbdt_pred,cbr_pred\n";
  for (std::size_t i = 0; i < y.size(); ++i) {
    out += std::to_string(i) + "," + format_double(y[i]) + "," + format_double(gbdt_pred[i]) +
           "," + format_double(cbr_pred[i]) + "\n";
  }
  return out;
}

}  // namespace detail

// Runs the whole benchmark: ingest or generate, split, fit the tree ensemble,
// transplant its importance into the case base, predict with both models,
// explain, and score. Every intermediate artifact lands in out_dir carrying
// the config digest.
inline PipelineResult run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  const std::string digest = cfg.digest();
  const std::filesystem::path out(cfg.out_dir);
  std::filesystem::create_directories(out);
  {
    auto j = cfg.canonical();
    j["out_dir"] = cfg.out_dir;
    j["config_digest"] = digest;
    write_text_file(out / artifact::kRunConfig, j.dump(2) + "\n");
  }

  Dataset data = detail::stage("load-data", [&] {
    if (cfg.generator) {
      auto synth = generate_synthetic(*cfg.generator);
      write_text_file(out / artifact::kSchema, synth.data.schema.to_json().dump(2) + "\n");
      save_csv(out / artifact::kData, synth.data);
      auto jt = synth.truth.to_json();
      jt["config_digest"] = digest;
      write_text_file(out / artifact::kTruth, jt.dump(2) + "\n");
      return std::move(synth.data);
    }
    const auto schema = FeatureSchema::from_json(
        nlohmann::json::parse(read_text_file(*cfg.schema_json)));
    auto loaded = load_csv(*cfg.data_csv, schema);
    write_text_file(out / artifact::kSchema, schema.to_json().dump(2) + "\n");
    save_csv(out / artifact::kData, loaded);
    return loaded;
  });

  auto [train, test] = detail::stage("split", [&] {
    SplitSpec spec;
    spec.train_fraction = cfg.train_fraction;
    auto pair = split_dataset(data, spec, cfg.seeds.split);
    save_csv(out / artifact::kTrain, pair.first);
    save_csv(out / artifact::kTest, pair.second);
    write_text_file(out / artifact::kSplit,
                    nlohmann::json{{"seed", cfg.seeds.split},
                                   {"train_fraction", cfg.train_fraction},
                                   {"n_train", pair.first.n_rows()},
                                   {"n_test", pair.second.n_rows()},
                                   {"config_digest", digest}}
                            .dump(2) +
                        "\n");
    return pair;
  });

  gbdt::Model model = detail::stage("train-gbdt", [&] {
    auto params = cfg.gbdt_params;
    params.seed = cfg.seeds.gbdt;
    auto fitted = gbdt::fit(train, params);
    write_text_file(out / artifact::kModel, gbdt::to_json(fitted, digest).dump() + "\n");
    return fitted;
  });

  cbr::CaseBase case_base = detail::stage("build-cbr", [&] {
    auto cb = cbr::build_case_base(train, model.importance_normalized, cfg.cbr_k);
    if (!cfg.weight_overrides.empty()) cb = cbr::override_weights(cb, cfg.weight_overrides);
    write_text_file(out / artifact::kCaseBase, cbr::to_json(cb, digest).dump() + "\n");
    return cb;
  });

  const auto ranges = model.ranges;
  std::vector<std::vector<double>> test_encoded;
  std::vector<double> gbdt_preds, cbr_preds;
  detail::stage("predict", [&] {
    test_encoded = encode_rows(test, ranges);
    gbdt_preds.resize(test.n_rows());
    cbr_preds.resize(test.n_rows());
    for (std::size_t i = 0; i < test.n_rows(); ++i) {
      gbdt_preds[i] = model.predict(test_encoded[i]);
      cbr_preds[i] = cbr::predict(case_base, test.rows[i], cfg.cbr_k);
    }
    write_text_file(out / artifact::kPredictions,
                    detail::predictions_csv(test.targets, gbdt_preds, cbr_preds));
    return 0;
  });

  eval::ReportInputs inputs;
  inputs.y_test = test.targets;
  inputs.gbdt_preds = gbdt_preds;
  inputs.cbr_preds = cbr_preds;
  inputs.global_weights = case_base.weights;
  inputs.subset_fractions = cfg.eval.subset_fractions;
  inputs.histogram_bin_width = cfg.eval.histogram_bin_width;
  inputs.thresholds = cfg.eval.thresholds;
  inputs.config_digest = digest;

  if (cfg.explain_limit > 0) {
    detail::stage("explain", [&] {
      const std::size_t ne = std::min<std::size_t>(cfg.explain_limit, test.n_rows());
      inputs.explained_indices.resize(ne);
      std::iota(inputs.explained_indices.begin(), inputs.explained_indices.end(), std::size_t{0});

      // Background: seeded sample of encoded training rows.
      const auto train_encoded = encode_rows(train, ranges);
      Rng bg_rng(cfg.seeds.shap);
      std::vector<std::vector<double>> background;
      if (train_encoded.size() <= cfg.shap_background_size) {
        background = train_encoded;
      } else {
        for (auto i :
             bg_rng.sample_without_replacement(train_encoded.size(), cfg.shap_background_size))
          background.push_back(train_encoded[i]);
      }
      const auto stats = compute_train_stats(train, ranges);
      explain::PredictFn model_fn = [&](std::span<const double> x) { return model.predict(x); };

      inputs.shap.resize(ne);
      inputs.lime.resize(ne);
      inputs.additive_cbr.resize(ne);
      parallel_for(ne, [&](std::size_t i) {
        const auto t = inputs.explained_indices[i];
        explain::ShapConfig sc;
        sc.background = background;
        sc.budget = cfg.shap_budget;
        sc.seed = mix_seed(cfg.seeds.shap, t);
        inputs.shap[i] = explain::kernelshap_explain(model_fn, test_encoded[t], sc);

        explain::LimeConfig lc = cfg.lime;
        lc.seed = mix_seed(cfg.seeds.lime, t);
        inputs.lime[i] =
            explain::lime_explain(model_fn, test.rows[t], test.schema, ranges, stats, lc);

        try {
          inputs.additive_cbr[i] = explain::additive_cbr(
              cbr_preds[t], test_encoded[t], case_base.weights, std::to_string(t));
        } catch (const UndefinedMultiplierError&) {
          inputs.additive_cbr[i] = std::nullopt;
        }
      });

      auto dump_jsonl = [&](const char* name, auto&& getter) {
        std::string text;
        for (std::size_t i = 0; i < ne; ++i) {
          nlohmann::json line = getter(i);
          line["index"] = inputs.explained_indices[i];
          text += line.dump() + "\n";
        }
        write_text_file(out / name, text);
      };
      dump_jsonl(artifact::kShap, [&](std::size_t i) {
        return explain::to_json(inputs.shap[i], model.feature_names, digest,
                                mix_seed(cfg.seeds.shap, inputs.explained_indices[i]));
      });
      dump_jsonl(artifact::kLime, [&](std::size_t i) {
        return explain::to_json(inputs.lime[i], model.feature_names, digest,
                                mix_seed(cfg.seeds.lime, inputs.explained_indices[i]));
      });
      dump_jsonl(artifact::kAdditiveCbr, [&](std::size_t i) -> nlohmann::json {
        if (!inputs.additive_cbr[i])
          return nlohmann::json{{"excluded", true},
                                {"reason", "gamma_undefined"},
                                {"config_digest", digest}};
        return explain::to_json(*inputs.additive_cbr[i], model.feature_names, digest);
      });
      return 0;
    });
  }

  PipelineResult result;
  result.report = detail::stage("evaluate", [&] {
    auto rep = eval::build_report(inputs);
    write_text_file(out / artifact::kReportJson, rep.to_json().dump(2) + "\n");
    write_text_file(out / artifact::kReportMd, rep.to_markdown());
    write_text_file(out / artifact::kHistogramCsv, rep.histogram_csv());
    write_text_file(out / artifact::kThresholdCsv, rep.threshold_csv());
    return rep;
  });
  result.out_dir = out;
  result.model = std::move(model);
  result.case_base = std::move(case_base);
  return result;
}

}  // namespace xcbr
