// Command-line front end: train-source, adapt, evaluate, gen-scenario,
// split, sweep. Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 numeric divergence.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tasfar/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tasfar;

namespace {

std::vector<std::string> parse_columns(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::string> feature_columns_or_rest(const std::string& features_arg,
                                                 const std::string& csv_path,
                                                 const std::vector<std::string>& labels) {
  if (!features_arg.empty()) return parse_columns(features_arg);
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open CSV file: " + csv_path);
  std::string header;
  std::getline(in, header);
  std::vector<std::string> out;
  for (const std::string& name : parse_columns(header)) {
    if (std::find(labels.begin(), labels.end(), name) == labels.end()) out.push_back(name);
  }
  return out;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open JSON file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw DataError("cannot write file: " + path);
}

std::vector<int> parse_layers(const std::string& arg, int input_dim, int output_dim) {
  std::vector<int> sizes{input_dim};
  std::stringstream ss(arg);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    sizes.push_back(std::stoi(item));
  }
  sizes.push_back(output_dim);
  return sizes;
}

struct CsvArgs {
  std::string labels = "y";
  std::string features;
};

FeatureTransform load_or_fit_transform(const std::string& transform_path,
                                       const std::string& model_path, const Dataset& fitted,
                                       const std::vector<std::string>& feature_names) {
  if (!transform_path.empty()) {
    return transform_from_json(read_json_file(transform_path), feature_names);
  }
  const std::string side_car = model_path + ".transform.json";
  if (fs::exists(side_car)) {
    return transform_from_json(read_json_file(side_car), feature_names);
  }
  return fitted.transform;
}

int run(int argc, char** argv) {
  CLI::App app{"Source-free domain adaptation for regression models"};
  app.require_subcommand(1);

  // ---- train-source ----
  auto* train_cmd = app.add_subcommand("train-source", "Fit a source model on a labeled CSV");
  std::string tr_data, tr_out = "source_model.bin", tr_layers = "64,64", tr_activation = "relu";
  CsvArgs tr_csv;
  double tr_lr = 1e-3, tr_dropout = 0.2;
  int tr_epochs = 200, tr_batch = 32;
  std::uint64_t tr_seed = 1;
  train_cmd->add_option("--data", tr_data, "labeled training CSV")->required();
  train_cmd->add_option("--labels", tr_csv.labels, "label column names (comma separated)");
  train_cmd->add_option("--features", tr_csv.features, "feature columns (default: all non-label)");
  train_cmd->add_option("--layers", tr_layers, "hidden layer widths, e.g. 64,64");
  train_cmd->add_option("--activation", tr_activation, "relu or tanh");
  train_cmd->add_option("--learning-rate", tr_lr);
  train_cmd->add_option("--epochs", tr_epochs);
  train_cmd->add_option("--batch-size", tr_batch);
  train_cmd->add_option("--dropout", tr_dropout);
  train_cmd->add_option("--seed", tr_seed);
  train_cmd->add_option("--out", tr_out, "model file to write");

  // ---- adapt ----
  auto* adapt_cmd = app.add_subcommand("adapt", "Adapt a source model to an unlabeled target CSV");
  std::string ad_model, ad_target, ad_cal, ad_config, ad_transform, ad_outdir = ".";
  CsvArgs ad_csv;
  bool ad_naive = false;
  adapt_cmd->add_option("--model", ad_model, "source model file")->required();
  adapt_cmd->add_option("--target", ad_target, "target CSV")->required();
  adapt_cmd->add_option("--calibration", ad_cal, "labeled source calibration CSV")->required();
  adapt_cmd->add_option("--config", ad_config, "adaptation config JSON");
  adapt_cmd->add_option("--labels", ad_csv.labels);
  adapt_cmd->add_option("--features", ad_csv.features);
  adapt_cmd->add_option("--transform", ad_transform,
                        "feature transform JSON (default: <model>.transform.json)");
  adapt_cmd->add_option("--out-dir", ad_outdir, "directory for the manifest and artifacts");
  adapt_cmd->add_flag("--naive-baseline", ad_naive, "run the unweighted self-training control");

  // ---- evaluate ----
  auto* eval_cmd = app.add_subcommand("evaluate", "Metrics of a model on a labeled CSV");
  std::string ev_model, ev_data, ev_transform, ev_out;
  CsvArgs ev_csv;
  eval_cmd->add_option("--model", ev_model)->required();
  eval_cmd->add_option("--data", ev_data)->required();
  eval_cmd->add_option("--labels", ev_csv.labels);
  eval_cmd->add_option("--features", ev_csv.features);
  eval_cmd->add_option("--transform", ev_transform);
  eval_cmd->add_option("--out", ev_out, "write metrics JSON here instead of stdout");

  // ---- gen-scenario ----
  auto* gen_cmd = app.add_subcommand("gen-scenario", "Generate a synthetic source/target pair");
  std::string gen_spec, gen_source_out = "source.csv", gen_target_out = "target.csv";
  gen_cmd->add_option("--spec", gen_spec, "scenario spec JSON")->required();
  gen_cmd->add_option("--source-out", gen_source_out);
  gen_cmd->add_option("--target-out", gen_target_out);

  // ---- split ----
  auto* split_cmd = app.add_subcommand("split", "Split a CSV by a predicate on one column");
  std::string sp_data, sp_column, sp_op = "lt", sp_source_out = "split_source.csv",
              sp_target_out = "split_target.csv";
  CsvArgs sp_csv;
  double sp_value = 0;
  split_cmd->add_option("--data", sp_data)->required();
  split_cmd->add_option("--column", sp_column)->required();
  split_cmd->add_option("--op", sp_op, "lt/le/gt/ge/eq/ne (matching rows become the target)");
  split_cmd->add_option("--value", sp_value)->required();
  split_cmd->add_option("--labels", sp_csv.labels);
  split_cmd->add_option("--features", sp_csv.features);
  split_cmd->add_option("--source-out", sp_source_out);
  split_cmd->add_option("--target-out", sp_target_out);

  // ---- sweep ----
  auto* sweep_cmd = app.add_subcommand("sweep", "Parameter sweep on a synthetic scenario");
  std::string sw_spec, sw_param = "grid-cells", sw_values = "20,50,100,200", sw_out = "sweep.csv";
  std::uint64_t sw_seed = 1;
  sweep_cmd->add_option("--spec", sw_spec, "scenario spec JSON")->required();
  sweep_cmd->add_option("--param", sw_param, "grid-cells, segments or eta");
  sweep_cmd->add_option("--values", sw_values, "comma-separated values to sweep");
  sweep_cmd->add_option("--seed", sw_seed);
  sweep_cmd->add_option("--out", sw_out, "sweep table CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems are configuration errors
  }

  if (*train_cmd) {
    const auto labels = parse_columns(tr_csv.labels);
    const auto features = feature_columns_or_rest(tr_csv.features, tr_data, labels);
    const Dataset data = load_csv(tr_data, labels, features);
    const auto sizes =
        parse_layers(tr_layers, static_cast<int>(features.size()), static_cast<int>(labels.size()));
    Regressor model = init_regressor(sizes, tr_dropout, tr_seed);
    if (tr_activation == "tanh") model.activation = Activation::Tanh;
    else if (tr_activation != "relu") throw ConfigError("unknown activation: " + tr_activation);

    std::vector<TrainingBatch> batches;
    const Index n = data.rows();
    for (Index start = 0; start < n; start += tr_batch) {
      const Index size = std::min<Index>(tr_batch, n - start);
      batches.push_back({data.features.middleRows(start, size),
                         data.labels->middleRows(start, size), Vector::Ones(size)});
    }
    Rng rng(tr_seed);
    const TrainResult result = train(model, batches, tr_lr, tr_epochs, rng);
    save_model(result.model, tr_out);
    write_text(tr_out + ".transform.json",
               transform_to_json(data.transform, data.feature_names).dump(2) + "\n");
    std::cout << "trained on " << n << " rows (" << data.dropped_rows
              << " dropped); final loss " << result.loss_history.back() << "\nmodel: " << tr_out
              << "\n";
    return 0;
  }

  if (*adapt_cmd) {
    const Regressor model = load_model(ad_model);
    AdaptationConfig config;
    if (!ad_config.empty()) config = config_from_json(read_json_file(ad_config));
    const auto labels = parse_columns(ad_csv.labels);
    const auto features = feature_columns_or_rest(ad_csv.features, ad_cal, labels);

    const Dataset cal_fitted = load_csv(ad_cal, labels, features);
    const FeatureTransform transform =
        load_or_fit_transform(ad_transform, ad_model, cal_fitted, features);
    const Dataset calibration = load_csv(ad_cal, labels, features, transform);
    // target labels are optional; load them when the columns exist
    std::vector<std::string> target_labels;
    try {
      (void)load_csv(ad_target, labels, features, transform);
      target_labels = labels;
    } catch (const DataError&) {
      target_labels.clear();
    }
    const Dataset target = load_csv(ad_target, target_labels, features, transform);

    try {
      const AdaptationResult result =
          ad_naive ? baseline_naive_selftrain(model, target, config, calibration)
                   : adapt(model, target, config, calibration);
      const std::string manifest = write_run_artifacts(result, ad_outdir);
      std::cout << "uncertain ratio " << result.report.uncertain_ratio << ", epochs "
                << result.report.epochs_run << "\nmanifest: " << manifest << "\n";
    } catch (const AdaptationDiverged& e) {
      const std::string manifest = write_partial_run_artifacts(e.partial, ad_outdir);
      std::cerr << "numeric error: " << e.what() << "\npartial manifest: " << manifest << "\n";
      return 4;
    }
    return 0;
  }

  if (*eval_cmd) {
    const Regressor model = load_model(ev_model);
    const auto labels = parse_columns(ev_csv.labels);
    const auto features = feature_columns_or_rest(ev_csv.features, ev_data, labels);
    const Dataset fitted = load_csv(ev_data, labels, features);
    const FeatureTransform transform =
        load_or_fit_transform(ev_transform, ev_model, fitted, features);
    const Dataset data = load_csv(ev_data, labels, features, transform);
    const nlohmann::ordered_json j = metrics_to_json(evaluate(model, data));
    if (ev_out.empty()) std::cout << j.dump(2) << "\n";
    else write_text(ev_out, j.dump(2) + "\n");
    return 0;
  }

  if (*gen_cmd) {
    const ScenarioSpec spec = scenario_from_json(read_json_file(gen_spec));
    const auto [source, target] = gen_scenario(spec);
    save_csv(source, gen_source_out);
    save_csv(target, gen_target_out);
    std::cout << "source: " << gen_source_out << " (" << source.rows() << " rows)\n"
              << "target: " << gen_target_out << " (" << target.rows() << " rows)\n";
    return 0;
  }

  if (*split_cmd) {
    const auto labels = parse_columns(sp_csv.labels);
    const auto features = feature_columns_or_rest(sp_csv.features, sp_data, labels);
    const Dataset data = load_csv(sp_data, labels, features);
    const SplitRule rule{sp_column, split_op_from_string(sp_op), sp_value};
    const auto [source, target] = split_by_predicate(data, rule);
    save_csv(source, sp_source_out);
    save_csv(target, sp_target_out);
    std::cout << "source: " << sp_source_out << " (" << source.rows() << " rows)\n"
              << "target: " << sp_target_out << " (" << target.rows() << " rows)\n";
    return 0;
  }

  if (*sweep_cmd) {
    const ScenarioSpec spec = scenario_from_json(read_json_file(sw_spec));
    const auto [source, target] = gen_scenario(spec);
    const Index n_train = source.rows() * 2 / 3;
    Dataset train_split = source, calibration = source;
    train_split.features = source.features.topRows(n_train);
    train_split.labels = source.labels->topRows(n_train);
    calibration.features = source.features.bottomRows(source.rows() - n_train);
    calibration.labels = source.labels->bottomRows(source.rows() - n_train);

    Regressor model = init_regressor({spec.feature_dim, 64, 64,
                                      static_cast<int>(source.labels->cols())}, 0.2, sw_seed);
    std::vector<TrainingBatch> batches;
    for (Index start = 0; start < n_train; start += 32) {
      const Index size = std::min<Index>(32, n_train - start);
      batches.push_back({train_split.features.middleRows(start, size),
                         train_split.labels->middleRows(start, size), Vector::Ones(size)});
    }
    Rng rng(sw_seed);
    model = train(model, batches, 1e-3, 200, rng).model;

    std::ofstream out(sw_out);
    out << "param,value,map_mae,pseudo_mae,source_mae,beta_accuracy_corr,uncertain_ratio,"
           "fallback_fraction\n";
    for (const std::string& value_str : parse_columns(sw_values)) {
      AdaptationConfig config;
      config.seed = sw_seed;
      config.max_epochs = 0;  // sweep inspects pseudo-labels, not training
      config.test_fraction = 0;
      if (sw_param == "grid-cells") config.grid_cells = std::stoi(value_str);
      else if (sw_param == "segments") config.segments_q = std::stoi(value_str);
      else if (sw_param == "eta") config.eta = std::stod(value_str);
      else throw ConfigError("unknown sweep parameter: " + sw_param);

      AdaptationConfig probe = config;
      probe.max_epochs = 0;
      const AdaptationResult result = adapt(model, target, probe, calibration);
      const RunReport& r = result.report;

      // map error against the label-built reference on the same grid
      const LabelDensityMap reference = build_reference_map(*target.labels, r.grids[0]);
      const Scalar mae_map = map_mae(r.maps[0], reference);

      Scalar pseudo_mae = 0, source_mae = 0;
      std::vector<Scalar> betas, accuracy;
      for (const PseudoLabel& l : r.pseudo_labels.labels) {
        const Scalar truth = (*target.labels)(l.source_index, 0);
        // source_index references the adaptation split, which equals the
        // whole target when test_fraction is zero
        pseudo_mae += std::abs(l.value[0] - truth);
        betas.push_back(l.credibility);
        accuracy.push_back(-std::abs(l.value[0] - truth));
      }
      Scalar corr = 0;
      {
        Vector vb = Eigen::Map<const Vector>(betas.data(), static_cast<Index>(betas.size()));
        Vector va = Eigen::Map<const Vector>(accuracy.data(), static_cast<Index>(accuracy.size()));
        const Vector db = vb.array() - vb.mean();
        const Vector da = va.array() - va.mean();
        const Scalar denom = std::sqrt(db.squaredNorm() * da.squaredNorm());
        corr = denom > 0 ? db.dot(da) / denom : 0;
      }
      pseudo_mae /= static_cast<Scalar>(r.pseudo_labels.labels.size());
      // source MAE over the same uncertain rows, via the source model itself
      {
        Scalar total = 0;
        for (const PseudoLabel& l : r.pseudo_labels.labels) {
          const Scalar truth = (*target.labels)(l.source_index, 0);
          const Scalar pred = forward(model, target.features.row(l.source_index).transpose())[0];
          total += std::abs(pred - truth);
        }
        source_mae = total / static_cast<Scalar>(r.pseudo_labels.labels.size());
      }
      out << sw_param << ',' << value_str << ',' << mae_map << ',' << pseudo_mae << ','
          << source_mae << ',' << corr << ',' << r.uncertain_ratio << ','
          << r.fallback_fraction << '\n';
    }
    if (!out) throw DataError("cannot write sweep table: " + sw_out);
    std::cout << "sweep table: " << sw_out << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
