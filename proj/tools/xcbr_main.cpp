// Command-line driver for the tabular explainability benchmark: data
// generation, GBDT training, case-base construction with transplanted
// importance weights, prediction, additive explanation, and report assembly.
// Stages read and write fixed artifact names so each one can be re-run alone.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xcbr/cbr.hpp"
#include "xcbr/dataset.hpp"
#include "xcbr/error.hpp"
#include "xcbr/eval.hpp"
#include "xcbr/explain.hpp"
#include "xcbr/gbdt.hpp"
#include "xcbr/io.hpp"
#include "xcbr/parallel.hpp"
#include "xcbr/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json parse_json_file(const std::string& path) {
  try {
    return json::parse(xcbr::read_text_file(path));
  } catch (const json::parse_error& e) {
    throw xcbr::ValidationError(path + ": " + e.what());
  }
}

xcbr::Dataset load_dataset(const std::string& data_path, const std::string& schema_path) {
  const auto schema = xcbr::FeatureSchema::from_json(parse_json_file(schema_path));
  return xcbr::load_csv(data_path, schema);
}

struct PredictionsFile {
  std::vector<double> targets, gbdt_preds, cbr_preds;
};

PredictionsFile read_predictions(const fs::path& path) {
  const auto text = xcbr::read_text_file(path);
  PredictionsFile out;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != "index,target,gbdt_pred,cbr_pred")
        throw xcbr::ValidationError(path.string() + ": unexpected predictions header");
      header = false;
      continue;
    }
    const auto cells = xcbr::detail::split_csv_line(line);
    if (cells.size() != 4)
      throw xcbr::ValidationError(path.string() + ": malformed predictions row");
    double y, g, c;
    if (!xcbr::parse_double(cells[1], y) || !xcbr::parse_double(cells[2], g) ||
        !xcbr::parse_double(cells[3], c))
      throw xcbr::ValidationError(path.string() + ": non-numeric predictions row");
    out.targets.push_back(y);
    out.gbdt_preds.push_back(g);
    out.cbr_preds.push_back(c);
  }
  if (out.targets.empty()) throw xcbr::ValidationError(path.string() + ": no prediction rows");
  return out;
}

struct ExplanationsFile {
  std::vector<std::size_t> indices;
  std::vector<std::optional<xcbr::explain::AdditiveExplanation>> explanations;
};

ExplanationsFile read_explanations(const fs::path& path) {
  const auto text = xcbr::read_text_file(path);
  ExplanationsFile out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const auto j = json::parse(line);
    out.indices.push_back(j.at("index").get<std::size_t>());
    if (j.value("excluded", false))
      out.explanations.push_back(std::nullopt);
    else
      out.explanations.push_back(xcbr::explain::explanation_from_json(j));
  }
  return out;
}

int run_generate(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = xcbr::GeneratorConfig::from_json(parse_json_file(config_path));
  const std::string digest = xcbr::fnv1a_hex(cfg.to_json().dump());
  auto synth = xcbr::generate_synthetic(cfg);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  xcbr::write_text_file(out / xcbr::artifact::kSchema,
                        synth.data.schema.to_json().dump(2) + "\n");
  xcbr::save_csv(out / xcbr::artifact::kData, synth.data);
  auto jt = synth.truth.to_json();
  jt["config_digest"] = digest;
  xcbr::write_text_file(out / xcbr::artifact::kTruth, jt.dump(2) + "\n");
  std::cout << "generated " << synth.data.n_rows() << " rows x " << synth.data.n_features()
            << " features into " << out_dir << "\n";
  return 0;
}

int run_train(const std::string& data_path, const std::string& schema_path,
              const std::string& params_path, std::optional<std::uint64_t> seed,
              const std::string& out_path) {
  const auto train = load_dataset(data_path, schema_path);
  xcbr::gbdt::Hyperparams params;
  if (!params_path.empty())
    params = xcbr::gbdt::Hyperparams::from_json(parse_json_file(params_path));
  if (seed) params.seed = *seed;
  const auto model = xcbr::gbdt::fit(train, params);
  xcbr::write_text_file(out_path, xcbr::gbdt::to_json(model).dump() + "\n");
  std::cout << "trained " << model.trees.size() << " trees, base score "
            << xcbr::format_double(model.base_score) << ", model written to " << out_path << "\n";
  return 0;
}

int run_build_cbr(const std::string& data_path, const std::string& schema_path,
                  const std::string& model_path, const std::string& overrides_path,
                  std::size_t k, const std::string& out_path) {
  const auto train = load_dataset(data_path, schema_path);
  const auto model = xcbr::gbdt::from_json(parse_json_file(model_path));
  if (model.n_features != train.n_features())
    throw xcbr::ValidationError("model/train feature count mismatch");
  auto cb = xcbr::cbr::build_case_base(train, model.importance_normalized, k);
  if (!overrides_path.empty()) {
    const auto edits = parse_json_file(overrides_path).get<std::map<std::string, double>>();
    cb = xcbr::cbr::override_weights(cb, edits);
  }
  xcbr::write_text_file(out_path, xcbr::cbr::to_json(cb).dump() + "\n");
  std::cout << "case base with " << cb.size() << " cases written to " << out_path << "\n";
  return 0;
}

int run_predict(const std::string& data_path, const std::string& schema_path,
                const std::string& model_path, const std::string& casebase_path,
                std::size_t k, const std::string& out_path) {
  if (model_path.empty() && casebase_path.empty())
    throw xcbr::ValidationError("predict: need --model and/or --casebase");
  const auto data = load_dataset(data_path, schema_path);

  std::string csv = "index,target";
  std::optional<xcbr::gbdt::Model> model;
  std::optional<xcbr::cbr::CaseBase> cb;
  if (!model_path.empty()) {
    model = xcbr::gbdt::from_json(parse_json_file(model_path));
    csv += ",gbdt_pred";
  }
  if (!casebase_path.empty()) {
    cb = xcbr::cbr::from_json(parse_json_file(casebase_path));
    csv += ",cbr_pred";
  }
  csv += "\n";
  for (std::size_t i = 0; i < data.n_rows(); ++i) {
    csv += std::to_string(i) + "," + xcbr::format_double(data.targets[i]);
    if (model) {
      const auto enc = xcbr::encode_instance(data.rows[i], data.schema, model->ranges);
      csv += "," + xcbr::format_double(model->predict(enc.values));
    }
    if (cb) csv += "," + xcbr::format_double(xcbr::cbr::predict(*cb, data.rows[i], k));
    csv += "\n";
  }
  xcbr::write_text_file(out_path, csv);
  std::cout << data.n_rows() << " predictions written to " << out_path << "\n";
  return 0;
}

int run_explain(const std::string& data_path, const std::string& schema_path,
                const std::string& model_path, const std::string& casebase_path,
                const std::string& method_name, std::size_t limit,
                std::optional<std::size_t> budget, std::size_t background_size,
                std::size_t num_samples, std::uint64_t seed_shap, std::uint64_t seed_lime,
                const std::string& out_path) {
  using namespace xcbr;
  const auto method = explain::method_from_string(method_name);
  const auto data = load_dataset(data_path, schema_path);
  if (casebase_path.empty())
    throw ValidationError("explain: --casebase is required (background, ranges, weights)");
  const auto cb = cbr::from_json(parse_json_file(casebase_path));
  std::optional<gbdt::Model> model;
  if (method != explain::Method::AdditiveCbr) {
    if (model_path.empty()) throw ValidationError("explain: --model required for " + method_name);
    model = gbdt::from_json(parse_json_file(model_path));
  }

  const auto& ranges = cb.ranges;
  const std::size_t ne = limit == 0 ? data.n_rows() : std::min(limit, data.n_rows());
  std::vector<std::vector<double>> encoded;
  for (std::size_t i = 0; i < ne; ++i)
    encoded.push_back(encode_instance(data.rows[i], data.schema, ranges).values);

  std::vector<std::vector<double>> background;
  Dataset train_view;
  if (method == explain::Method::KernelShap || method == explain::Method::ExactShapley ||
      method == explain::Method::Lime) {
    train_view.schema = cb.schema;
    train_view.rows = cb.cases;
    train_view.targets = cb.targets;
    const auto train_encoded = encode_rows(train_view, ranges);
    if (train_encoded.size() <= background_size) {
      background = train_encoded;
    } else {
      Rng rng(seed_shap);
      for (auto i : rng.sample_without_replacement(train_encoded.size(), background_size))
        background.push_back(train_encoded[i]);
    }
  }

  std::vector<nlohmann::json> lines(ne);
  explain::PredictFn model_fn;
  if (model) model_fn = [&](std::span<const double> x) { return model->predict(x); };
  TrainStats stats;
  if (method == explain::Method::Lime) stats = compute_train_stats(train_view, ranges);

  parallel_for(ne, [&](std::size_t i) {
    switch (method) {
      case explain::Method::KernelShap: {
        explain::ShapConfig sc;
        sc.background = background;
        sc.budget = budget;
        sc.seed = mix_seed(seed_shap, i);
        auto e = explain::kernelshap_explain(model_fn, encoded[i], sc);
        lines[i] = explain::to_json(e, model->feature_names, "", sc.seed);
        break;
      }
      case explain::Method::ExactShapley: {
        auto e = explain::exact_shapley(model_fn, encoded[i], background);
        lines[i] = explain::to_json(e, model->feature_names);
        break;
      }
      case explain::Method::Lime: {
        explain::LimeConfig lc;
        lc.num_samples = num_samples;
        lc.seed = mix_seed(seed_lime, i);
        auto e = explain::lime_explain(model_fn, data.rows[i], data.schema, ranges, stats, lc);
        lines[i] = explain::to_json(e, model->feature_names, "", lc.seed);
        break;
      }
      case explain::Method::AdditiveCbr: {
        const double pred = cbr::predict(cb, data.rows[i], cb.default_k);
        try {
          auto e = explain::additive_cbr(pred, encoded[i], cb.weights, std::to_string(i));
          std::vector<std::string> names;
          for (const auto& f : cb.schema.features) names.push_back(f.name);
          lines[i] = explain::to_json(e, names);
        } catch (const UndefinedMultiplierError&) {
          lines[i] = nlohmann::json{{"excluded", true}, {"reason", "gamma_undefined"}};
        }
        break;
      }
    }
  });
  std::string text;
  for (std::size_t i = 0; i < ne; ++i) {
    lines[i]["index"] = i;
    text += lines[i].dump() + "\n";
  }
  xcbr::write_text_file(out_path, text);
  std::cout << ne << " " << method_name << " explanations written to " << out_path << "\n";
  return 0;
}

int run_evaluate(const std::string& dir, std::vector<double> fractions, double bin_width,
                 std::vector<double> thresholds) {
  using namespace xcbr;
  const fs::path run_dir(dir);
  const auto preds = read_predictions(run_dir / artifact::kPredictions);
  const auto cb = cbr::from_json(parse_json_file((run_dir / artifact::kCaseBase).string()));

  eval::ReportInputs inputs;
  inputs.y_test = preds.targets;
  inputs.gbdt_preds = preds.gbdt_preds;
  inputs.cbr_preds = preds.cbr_preds;
  inputs.global_weights = cb.weights;
  // A run directory carries its config; reuse its eval shape and digest so a
  // re-assembled report matches the pipeline's byte for byte.
  if (fs::exists(run_dir / artifact::kRunConfig)) {
    const auto j = parse_json_file((run_dir / artifact::kRunConfig).string());
    if (j.contains("eval")) {
      const auto& je = j.at("eval");
      if (je.contains("subset_fractions"))
        inputs.subset_fractions = je.at("subset_fractions").get<std::vector<double>>();
      if (je.contains("histogram_bin_width"))
        inputs.histogram_bin_width = je.at("histogram_bin_width").get<double>();
      if (je.contains("thresholds"))
        inputs.thresholds = je.at("thresholds").get<std::vector<double>>();
    }
    inputs.config_digest = j.value("config_digest", "");
  }
  if (!fractions.empty()) inputs.subset_fractions = std::move(fractions);
  if (bin_width > 0.0) inputs.histogram_bin_width = bin_width;
  if (!thresholds.empty()) inputs.thresholds = std::move(thresholds);

  const auto shap_path = run_dir / artifact::kShap;
  const auto lime_path = run_dir / artifact::kLime;
  const auto acbr_path = run_dir / artifact::kAdditiveCbr;
  if (fs::exists(shap_path) && fs::exists(lime_path) && fs::exists(acbr_path)) {
    const auto shap = read_explanations(shap_path);
    const auto lime = read_explanations(lime_path);
    const auto acbr = read_explanations(acbr_path);
    if (shap.indices != lime.indices || shap.indices != acbr.indices)
      throw ValidationError("evaluate: explanation files cover different instances");
    inputs.explained_indices = shap.indices;
    for (std::size_t i = 0; i < shap.indices.size(); ++i) {
      if (!shap.explanations[i] || !lime.explanations[i])
        throw ValidationError("evaluate: missing kernelshap/lime explanation line");
      inputs.shap.push_back(*shap.explanations[i]);
      inputs.lime.push_back(*lime.explanations[i]);
      inputs.additive_cbr.push_back(acbr.explanations[i]);
    }
  }

  const auto rep = eval::build_report(inputs);
  write_text_file(run_dir / artifact::kReportJson, rep.to_json().dump(2) + "\n");
  write_text_file(run_dir / artifact::kReportMd, rep.to_markdown());
  write_text_file(run_dir / artifact::kHistogramCsv, rep.histogram_csv());
  write_text_file(run_dir / artifact::kThresholdCsv, rep.threshold_csv());
  std::cout << "report written to " << (run_dir / artifact::kReportJson).string() << "\n";
  return 0;
}

int run_full(const std::string& config_path, const std::string& out_dir,
             std::optional<std::uint64_t> seed_split, std::optional<std::uint64_t> seed_gbdt,
             std::optional<std::uint64_t> seed_shap, std::optional<std::uint64_t> seed_lime,
             const std::string& overrides_path) {
  auto cfg = xcbr::RunConfig::from_json(parse_json_file(config_path));
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (seed_split) cfg.seeds.split = *seed_split;
  if (seed_gbdt) cfg.seeds.gbdt = *seed_gbdt;
  if (seed_shap) cfg.seeds.shap = *seed_shap;
  if (seed_lime) cfg.seeds.lime = *seed_lime;
  if (!overrides_path.empty())
    cfg.weight_overrides = parse_json_file(overrides_path).get<std::map<std::string, double>>();
  cfg.validate();
  const auto result = xcbr::run_pipeline(cfg);
  std::cout << "pipeline complete; report at "
            << (result.out_dir / xcbr::artifact::kReportJson).string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular regression explainability benchmark: GBDT + twin CBR + "
               "kernelSHAP/LIME/Additive-CBR explanations"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate a synthetic flight-delay-like dataset");
  std::string gen_config, gen_out = "out";
  gen->add_option("--config", gen_config, "generator config JSON")->required();
  gen->add_option("--out", gen_out, "output directory");

  // train-gbdt
  auto* train = app.add_subcommand("train-gbdt", "Fit the boosted-tree regressor");
  std::string tr_data, tr_schema, tr_params, tr_out = "gbdt_model.json";
  std::optional<std::uint64_t> tr_seed;
  train->add_option("--data", tr_data, "training CSV")->required();
  train->add_option("--schema", tr_schema, "schema JSON")->required();
  train->add_option("--params", tr_params, "hyperparameter JSON");
  train->add_option("--seed-gbdt", tr_seed, "training seed override");
  train->add_option("--out", tr_out, "model output path");

  // build-cbr
  auto* build = app.add_subcommand("build-cbr", "Build the case base with model importance weights");
  std::string cb_data, cb_schema, cb_model, cb_overrides, cb_out = "casebase.json";
  std::size_t cb_k = 3;
  build->add_option("--data", cb_data, "training CSV")->required();
  build->add_option("--schema", cb_schema, "schema JSON")->required();
  build->add_option("--model", cb_model, "trained model JSON")->required();
  build->add_option("--weights-override", cb_overrides, "JSON map feature -> raw weight");
  build->add_option("--k", cb_k, "neighbors for prediction");
  build->add_option("--out", cb_out, "case base output path");

  // predict
  auto* pred = app.add_subcommand("predict", "Score instances with the model and/or case base");
  std::string pr_data, pr_schema, pr_model, pr_cb, pr_out = "predictions.csv";
  std::size_t pr_k = 3;
  pred->add_option("--data", pr_data, "CSV to score")->required();
  pred->add_option("--schema", pr_schema, "schema JSON")->required();
  pred->add_option("--model", pr_model, "trained model JSON");
  pred->add_option("--casebase", pr_cb, "case base JSON");
  pred->add_option("--k", pr_k, "neighbors for CBR prediction");
  pred->add_option("--out", pr_out, "predictions output path");

  // explain
  auto* expl = app.add_subcommand("explain", "Produce additive explanations for instances");
  std::string ex_data, ex_schema, ex_model, ex_cb, ex_method = "kernelshap",
              ex_out = "explanations.jsonl";
  std::size_t ex_limit = 0, ex_background = 100, ex_samples = 1000;
  std::optional<std::size_t> ex_budget;
  std::uint64_t ex_seed_shap = 3, ex_seed_lime = 4;
  expl->add_option("--data", ex_data, "CSV of instances to explain")->required();
  expl->add_option("--schema", ex_schema, "schema JSON")->required();
  expl->add_option("--model", ex_model, "trained model JSON");
  expl->add_option("--casebase", ex_cb, "case base JSON")->required();
  expl->add_option("--method", ex_method, "kernelshap|lime|additive_cbr|exact_shapley");
  expl->add_option("--limit", ex_limit, "explain at most this many instances (0 = all)");
  expl->add_option("--budget", ex_budget, "kernelSHAP coalition budget (omit for full)");
  expl->add_option("--background", ex_background, "background sample size");
  expl->add_option("--num-samples", ex_samples, "LIME perturbation count");
  expl->add_option("--seed-shap", ex_seed_shap, "kernelSHAP seed");
  expl->add_option("--seed-lime", ex_seed_lime, "LIME seed");
  expl->add_option("--out", ex_out, "JSONL output path");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Assemble the report from run-directory artifacts");
  std::string ev_dir;
  std::vector<double> ev_fractions, ev_thresholds;
  double ev_bin_width = 0.0;  // 0: take the run config's width (or the default 10)
  ev->add_option("--dir", ev_dir, "run directory with artifacts")->required();
  ev->add_option("--fractions", ev_fractions, "subset fractions");
  ev->add_option("--bin-width", ev_bin_width, "histogram bin width in minutes");
  ev->add_option("--thresholds", ev_thresholds, "error thresholds in minutes");

  // run
  auto* run = app.add_subcommand("run", "Run the full pipeline from a config");
  std::string run_config, run_out, run_overrides;
  std::optional<std::uint64_t> rs_split, rs_gbdt, rs_shap, rs_lime;
  run->add_option("--config", run_config, "RunConfig JSON")->required();
  run->add_option("--out", run_out, "output directory (overrides config)");
  run->add_option("--seed-split", rs_split, "split seed override");
  run->add_option("--seed-gbdt", rs_gbdt, "training seed override");
  run->add_option("--seed-shap", rs_shap, "kernelSHAP seed override");
  run->add_option("--seed-lime", rs_lime, "LIME seed override");
  run->add_option("--weights-override", run_overrides, "JSON map feature -> raw weight");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_generate(gen_config, gen_out);
    if (train->parsed()) return run_train(tr_data, tr_schema, tr_params, tr_seed, tr_out);
    if (build->parsed())
      return run_build_cbr(cb_data, cb_schema, cb_model, cb_overrides, cb_k, cb_out);
    if (pred->parsed()) return run_predict(pr_data, pr_schema, pr_model, pr_cb, pr_k, pr_out);
    if (expl->parsed())
      return run_explain(ex_data, ex_schema, ex_model, ex_cb, ex_method, ex_limit, ex_budget,
                         ex_background, ex_samples, ex_seed_shap, ex_seed_lime, ex_out);
    if (ev->parsed()) return run_evaluate(ev_dir, ev_fractions, ev_bin_width, ev_thresholds);
    if (run->parsed())
      return run_full(run_config, run_out, rs_split, rs_gbdt, rs_shap, rs_lime, run_overrides);
  } catch (const xcbr::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const xcbr::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
