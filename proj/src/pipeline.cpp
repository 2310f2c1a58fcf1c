#include "tasfar/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace tasfar {

namespace {

// Reference error-reduction percentages reported for the published
// housing-style experiments; echoed in every manifest next to the achieved
// numbers.
constexpr Scalar kReferenceMseReductionPct = 22.0;
constexpr Scalar kReferenceRmsleReductionPct = 28.0;

enum class Mode { DensityWeighted, NaiveSelfTrain };

Metrics compute_metrics(const Matrix& predictions, const Matrix& labels) {
  Metrics m;
  m.count = predictions.rows();
  const Matrix diff = predictions - labels;
  m.mse = diff.array().square().mean();
  m.mae = diff.array().abs().mean();
  if ((predictions.array() > -1).all() && (labels.array() > -1).all()) {
    m.rmsle = std::sqrt(((predictions.array() + 1).log() - (labels.array() + 1).log())
                            .square()
                            .mean());
  }
  return m;
}

Matrix select_rows(const Matrix& source, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), source.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = source.row(rows[i]);
  return out;
}

std::optional<Scalar> pearson(const Vector& a, const Vector& b) {
  if (a.size() != b.size() || a.size() < 3) return std::nullopt;
  const Vector da = a.array() - a.mean();
  const Vector db = b.array() - b.mean();
  const Scalar denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  if (denom <= 0) return std::nullopt;
  return da.dot(db) / denom;
}

struct ClassifiedSplit {
  std::vector<UncertainPrediction> predictions;  // aligned with split rows
  std::vector<Index> confident_rows;             // row indices within the split
  std::vector<Index> uncertain_rows;
};

ClassifiedSplit classify_split(const Regressor& model, const Matrix& features,
                               const ConfidenceThreshold& threshold, int samplings, Rng& rng) {
  ClassifiedSplit out;
  out.predictions = mc_predict_all(model, features, samplings, rng);
  for (std::size_t i = 0; i < out.predictions.size(); ++i) {
    const UncertainPrediction& p = out.predictions[i];
    const bool confident = (p.uncertainty.array() <= threshold.tau.array()).all();
    (confident ? out.confident_rows : out.uncertain_rows).push_back(static_cast<Index>(i));
  }
  return out;
}

void fill_split_metrics(SplitReport& report, const Regressor& before, const Regressor& after,
                        const Matrix& features, const std::optional<Matrix>& labels,
                        const ClassifiedSplit& classified) {
  report.count = features.rows();
  report.uncertain_count = static_cast<long>(classified.uncertain_rows.size());
  if (!labels || features.rows() == 0) return;
  const Matrix pred_before = forward_batch(before, features);
  const Matrix pred_after = forward_batch(after, features);
  report.whole.before = compute_metrics(pred_before, *labels);
  report.whole.after = compute_metrics(pred_after, *labels);
  if (!classified.uncertain_rows.empty()) {
    const Matrix lbl = select_rows(*labels, classified.uncertain_rows);
    report.uncertain.before = compute_metrics(select_rows(pred_before, classified.uncertain_rows), lbl);
    report.uncertain.after = compute_metrics(select_rows(pred_after, classified.uncertain_rows), lbl);
  }
  if (!classified.confident_rows.empty()) {
    const Matrix lbl = select_rows(*labels, classified.confident_rows);
    report.confident.before = compute_metrics(select_rows(pred_before, classified.confident_rows), lbl);
    report.confident.after = compute_metrics(select_rows(pred_after, classified.confident_rows), lbl);
  }
}

AdaptationResult run_adaptation(const Regressor& source_model, const Dataset& target,
                                const AdaptationConfig& config,
                                const Dataset& source_calibration_data, Mode mode) {
  validate_config(config);
  if (!source_calibration_data.labels) {
    throw DataError("stage calibration: calibration data must carry labels");
  }
  if (source_calibration_data.features.cols() != source_model.input_dim() ||
      target.features.cols() != source_model.input_dim()) {
    throw ShapeError("stage calibration: feature width does not match the model input");
  }
  const Index label_dims = source_model.output_dim();
  if (source_calibration_data.labels->cols() != label_dims) {
    throw ShapeError("stage calibration: label width does not match the model output");
  }
  if (target.labels && target.labels->cols() != label_dims) {
    throw ShapeError("stage calibration: target label width does not match the model output");
  }
  if (config.joint_2d && label_dims != 2) {
    throw ConfigError("joint_2d requires exactly 2 label dimensions");
  }

  Rng rng(config.seed);

  // Split the target into adaptation and held-out test rows.
  const Index n_target = target.rows();
  std::vector<Index> order(static_cast<std::size_t>(n_target));
  std::iota(order.begin(), order.end(), Index(0));
  std::shuffle(order.begin(), order.end(), rng);
  const auto test_n = static_cast<Index>(std::lround(config.test_fraction * n_target));
  std::vector<Index> test_rows(order.begin(), order.begin() + test_n);
  std::vector<Index> adapt_rows(order.begin() + test_n, order.end());
  std::sort(test_rows.begin(), test_rows.end());
  std::sort(adapt_rows.begin(), adapt_rows.end());
  if (adapt_rows.empty()) throw DataError("stage split: adaptation split is empty");

  const Matrix adapt_features = select_rows(target.features, adapt_rows);
  const Matrix test_features = select_rows(target.features, test_rows);
  std::optional<Matrix> adapt_labels, test_labels;
  if (target.labels) {
    adapt_labels = select_rows(*target.labels, adapt_rows);
    test_labels = select_rows(*target.labels, test_rows);
  }

  // Threshold and error calibration on the labeled source split.
  const std::vector<UncertainPrediction> cal_preds =
      mc_predict_all(source_model, source_calibration_data.features, config.samplings, rng);
  Matrix cal_uncertainty(static_cast<Index>(cal_preds.size()), label_dims);
  for (std::size_t i = 0; i < cal_preds.size(); ++i) {
    cal_uncertainty.row(static_cast<Index>(i)) = cal_preds[i].uncertainty.transpose();
  }
  const ConfidenceThreshold threshold = compute_thresholds(cal_uncertainty, config.eta);
  const ErrorModel error_model =
      fit_error_model(cal_preds, *source_calibration_data.labels, config.segments_q);

  // Classify the adaptation split, then the test split (for subset metrics).
  const ClassifiedSplit adapt_split =
      classify_split(source_model, adapt_features, threshold, config.samplings, rng);
  ClassifiedSplit test_split;
  if (test_features.rows() > 0) {
    test_split = classify_split(source_model, test_features, threshold, config.samplings, rng);
  }
  if (adapt_split.confident_rows.empty()) {
    throw DataError("stage classify: confident set is empty; no data to estimate the prior from");
  }
  if (adapt_split.uncertain_rows.empty()) {
    throw DataError("stage classify: uncertain set is empty; nothing to pseudo-label");
  }

  std::vector<UncertainPrediction> confident, uncertain;
  for (Index r : adapt_split.confident_rows) confident.push_back(adapt_split.predictions[r]);
  for (Index r : adapt_split.uncertain_rows) uncertain.push_back(adapt_split.predictions[r]);

  RunReport report;
  report.config = config;
  report.mode = mode == Mode::DensityWeighted ? "density_weighted" : "naive_self_train";
  report.threshold = threshold;
  report.error_model = error_model;
  report.target_count = n_target;
  report.adaptation_count = static_cast<long>(adapt_rows.size());
  report.test_count = static_cast<long>(test_rows.size());
  report.confident_count = static_cast<long>(confident.size());
  report.uncertain_count = static_cast<long>(uncertain.size());
  report.uncertain_ratio =
      static_cast<Scalar>(report.uncertain_count) / static_cast<Scalar>(report.adaptation_count);

  const auto n_unc = static_cast<Index>(uncertain.size());
  PseudoLabelBatch pseudo;
  if (config.joint_2d) {
    // One joint 2-D map; generate() handles the box window and the averaged
    // u/tau factor itself.
    const GridSpec spec = default_grid_spec(confident, error_model, config.grid_cells);
    LabelDensityMap map = build_map(confident, error_model, spec);
    if (config.uniform_prior) {
      map.densities.setConstant(1.0 / static_cast<Scalar>(map.densities.size()));
    }
    report.grids.push_back(spec);
    report.map_out_of_range.push_back(map.out_of_range);
    pseudo = generate_all(map, uncertain, error_model, threshold);
    report.maps.push_back(std::move(map));
  } else {
    // One 1-D density map and pseudo-label pass per label dimension.
    Matrix pseudo_values(n_unc, label_dims);
    Matrix beta_parts(n_unc, label_dims);
    std::vector<std::vector<PseudoLabel>> per_dim_labels(static_cast<std::size_t>(label_dims));
    for (Index d = 0; d < label_dims; ++d) {
      auto slice = [d](const UncertainPrediction& p) {
        UncertainPrediction s;
        s.prediction = p.prediction.segment(d, 1);
        s.uncertainty = p.uncertainty.segment(d, 1);
        s.input_index = p.input_index;
        return s;
      };
      std::vector<UncertainPrediction> conf_d, unc_d;
      conf_d.reserve(confident.size());
      unc_d.reserve(uncertain.size());
      for (const auto& p : confident) conf_d.push_back(slice(p));
      for (const auto& p : uncertain) unc_d.push_back(slice(p));

      ErrorModel em_d;
      em_d.a0 = error_model.a0.segment(d, 1);
      em_d.a1 = error_model.a1.segment(d, 1);
      em_d.segments = error_model.segments;
      ConfidenceThreshold thr_d;
      thr_d.tau = threshold.tau.segment(d, 1);
      thr_d.eta = threshold.eta;

      const GridSpec spec = default_grid_spec(conf_d, em_d, config.grid_cells);
      LabelDensityMap map = build_map(conf_d, em_d, spec);
      if (config.uniform_prior) {
        map.densities.setConstant(1.0 / static_cast<Scalar>(map.densities.size()));
      }
      report.grids.push_back(spec);
      report.map_out_of_range.push_back(map.out_of_range);

      PseudoLabelBatch batch = generate_all(map, unc_d, em_d, thr_d);
      for (Index i = 0; i < n_unc; ++i) {
        pseudo_values(i, d) = batch.labels[static_cast<std::size_t>(i)].value[0];
        beta_parts(i, d) = batch.labels[static_cast<std::size_t>(i)].credibility;
      }
      per_dim_labels[static_cast<std::size_t>(d)] = std::move(batch.labels);
      report.maps.push_back(std::move(map));
    }

    // Assemble per-example pseudo-labels with averaged credibility.
    pseudo.labels.reserve(static_cast<std::size_t>(n_unc));
    for (Index i = 0; i < n_unc; ++i) {
      PseudoLabel label;
      label.value = pseudo_values.row(i).transpose();
      label.credibility = beta_parts.row(i).mean();
      bool fallback = false;
      int cells = 0;
      for (Index d = 0; d < label_dims; ++d) {
        const PseudoLabel& part =
            per_dim_labels[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)];
        fallback = fallback || part.fallback;
        cells += part.locality_cells;
      }
      label.locality_cells = cells;
      label.fallback = fallback;
      pseudo.labels.push_back(std::move(label));
    }
  }

  // The naive arm trains toward its own predictions at weight 1; its report
  // and exports describe exactly those targets.
  if (mode == Mode::NaiveSelfTrain) {
    for (Index i = 0; i < n_unc; ++i) {
      PseudoLabel& label = pseudo.labels[static_cast<std::size_t>(i)];
      label.value = uncertain[static_cast<std::size_t>(i)].prediction;
      label.credibility = 1.0;
      label.fallback = false;
    }
  }
  long fallbacks = 0;
  for (Index i = 0; i < n_unc; ++i) {
    // exported indices refer to rows of the original target dataset
    pseudo.labels[static_cast<std::size_t>(i)].source_index =
        adapt_rows[static_cast<std::size_t>(
            adapt_split.uncertain_rows[static_cast<std::size_t>(i)])];
    if (pseudo.labels[static_cast<std::size_t>(i)].fallback) ++fallbacks;
  }
  pseudo.fallback_fraction = static_cast<Scalar>(fallbacks) / static_cast<Scalar>(n_unc);
  {
    std::vector<Scalar> betas;
    betas.reserve(pseudo.labels.size());
    for (const auto& l : pseudo.labels) betas.push_back(l.credibility);
    pseudo.beta_quantiles.resize(5);
    const Scalar qs[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (int k = 0; k < 5; ++k) pseudo.beta_quantiles[k] = quantile(betas, qs[k]);
  }
  report.fallback_fraction = pseudo.fallback_fraction;
  report.beta_quantiles = pseudo.beta_quantiles;

  // Training rows: uncertain first, then confident self-targets.
  const bool with_confident = config.include_confident;
  const Index n_conf = with_confident ? static_cast<Index>(confident.size()) : 0;
  Matrix train_x(n_unc + n_conf, adapt_features.cols());
  Matrix train_y(n_unc + n_conf, label_dims);
  Vector train_w(n_unc + n_conf);
  for (Index i = 0; i < n_unc; ++i) {
    const Index row = adapt_split.uncertain_rows[static_cast<std::size_t>(i)];
    train_x.row(i) = adapt_features.row(row);
    train_y.row(i) = pseudo.labels[static_cast<std::size_t>(i)].value.transpose();
    train_w[i] = config.force_zero_credibility
                     ? 0.0
                     : pseudo.labels[static_cast<std::size_t>(i)].credibility;
  }
  for (Index i = 0; i < n_conf; ++i) {
    const Index row = adapt_split.confident_rows[static_cast<std::size_t>(i)];
    train_x.row(n_unc + i) = adapt_features.row(row);
    train_y.row(n_unc + i) = confident[static_cast<std::size_t>(i)].prediction.transpose();
    train_w[n_unc + i] = 1.0;
  }

  std::vector<TrainingBatch> batches;
  const Index total = train_x.rows();
  const Index batch_size = config.batch_size <= 0 ? total : std::min<Index>(config.batch_size, total);
  for (Index start = 0; start < total; start += batch_size) {
    const Index size = std::min(batch_size, total - start);
    batches.push_back({train_x.middleRows(start, size), train_y.middleRows(start, size),
                       train_w.segment(start, size)});
  }

  // Epoch-at-a-time training with the early-stop rule on the loss history.
  Regressor adapted = source_model;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    try {
      TrainResult step = train(adapted, batches, config.learning_rate, 1, rng);
      adapted = std::move(step.model);
      report.loss_history.push_back(step.loss_history.front());
    } catch (const NumericError& e) {
      report.epochs_run = static_cast<int>(report.loss_history.size());
      report.pseudo_labels = std::move(pseudo);
      fill_split_metrics(report.adaptation, source_model, source_model, adapt_features,
                         adapt_labels, adapt_split);
      throw AdaptationDiverged("stage training: " + std::string(e.what()) + " (after " +
                                   std::to_string(report.epochs_run) + " completed epochs)",
                               std::move(report));
    }
    if (early_stop_check(report.loss_history, config.early_stop_window, config.early_stop_ratio)) {
      report.early_stop_epoch = epoch + 1;
      break;
    }
  }
  report.epochs_run = static_cast<int>(report.loss_history.size());

  fill_split_metrics(report.adaptation, source_model, adapted, adapt_features, adapt_labels,
                     adapt_split);
  if (test_features.rows() > 0) {
    fill_split_metrics(report.test, source_model, adapted, test_features, test_labels, test_split);
  }

  if (adapt_labels) {
    // Share of examples vs share of squared error carried by the uncertain set.
    const Matrix pred = forward_batch(source_model, adapt_features);
    const Vector sq = (pred - *adapt_labels).array().square().rowwise().sum();
    Scalar uncertain_sq = 0;
    for (Index r : adapt_split.uncertain_rows) uncertain_sq += sq[r];
    report.uncertain_example_share = report.uncertain_ratio;
    const Scalar total_sq = sq.sum();
    if (total_sq > 0) report.uncertain_error_share = uncertain_sq / total_sq;

    // Credibility against pseudo-label accuracy (negated absolute error).
    Vector betas(n_unc), accuracy(n_unc);
    for (Index i = 0; i < n_unc; ++i) {
      const Index row = adapt_split.uncertain_rows[static_cast<std::size_t>(i)];
      const Vector err =
          pseudo.labels[static_cast<std::size_t>(i)].value - adapt_labels->row(row).transpose();
      betas[i] = pseudo.labels[static_cast<std::size_t>(i)].credibility;
      accuracy[i] = -err.cwiseAbs().mean();
    }
    report.beta_accuracy_correlation = pearson(betas, accuracy);
  }
  if (report.test.whole.before && report.test.whole.after) {
    const Metrics& b = *report.test.whole.before;
    const Metrics& a = *report.test.whole.after;
    if (b.mse > 0) report.test_mse_reduction_pct = 100.0 * (1.0 - a.mse / b.mse);
    if (b.rmsle && a.rmsle && *b.rmsle > 0) {
      report.test_rmsle_reduction_pct = 100.0 * (1.0 - *a.rmsle / *b.rmsle);
    }
  }
  if (report.test.uncertain.before && report.test.uncertain.after &&
      report.test.uncertain.before->mse > 0) {
    report.test_uncertain_mse_reduction_pct =
        100.0 * (1.0 - report.test.uncertain.after->mse / report.test.uncertain.before->mse);
  }

  report.pseudo_labels = std::move(pseudo);
  return {std::move(adapted), std::move(report)};
}

nlohmann::ordered_json metrics_pair_json(const MetricsBeforeAfter& m) {
  nlohmann::ordered_json j;
  j["before"] = m.before ? metrics_to_json(*m.before) : nlohmann::ordered_json(nullptr);
  j["after"] = m.after ? metrics_to_json(*m.after) : nlohmann::ordered_json(nullptr);
  return j;
}

nlohmann::ordered_json split_report_json(const SplitReport& s) {
  nlohmann::ordered_json j;
  j["count"] = s.count;
  j["uncertain_count"] = s.uncertain_count;
  j["whole"] = metrics_pair_json(s.whole);
  j["uncertain"] = metrics_pair_json(s.uncertain);
  j["confident"] = metrics_pair_json(s.confident);
  return j;
}

template <typename T>
nlohmann::ordered_json opt_json(const std::optional<T>& v) {
  if (v) return nlohmann::ordered_json(*v);
  return nlohmann::ordered_json(nullptr);
}

}  // namespace

void validate_config(const AdaptationConfig& config) {
  if (config.eta <= 0 || config.eta > 1) throw ConfigError("eta must lie in (0, 1]");
  if (config.segments_q < 2) throw ConfigError("segments_q must be at least 2");
  if (config.samplings < 2) throw ConfigError("samplings must be at least 2");
  if (config.dropout_rate < 0 || config.dropout_rate >= 1) {
    throw ConfigError("dropout_rate must lie in [0, 1)");
  }
  if (config.grid_cells < 1) throw ConfigError("grid_cells must be positive");
  if (config.learning_rate <= 0) throw ConfigError("learning_rate must be positive");
  if (config.max_epochs < 0) throw ConfigError("max_epochs must be non-negative");
  if (config.early_stop_window < 2) throw ConfigError("early_stop_window must be at least 2");
  if (config.early_stop_ratio <= 0) throw ConfigError("early_stop_ratio must be positive");
  if (config.test_fraction < 0 || config.test_fraction >= 1) {
    throw ConfigError("test_fraction must lie in [0, 1)");
  }
}

nlohmann::ordered_json config_to_json(const AdaptationConfig& c) {
  nlohmann::ordered_json j;
  j["eta"] = c.eta;
  j["segments_q"] = c.segments_q;
  j["samplings"] = c.samplings;
  j["dropout_rate"] = c.dropout_rate;
  j["grid_cells"] = c.grid_cells;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["early_stop_window"] = c.early_stop_window;
  j["early_stop_ratio"] = c.early_stop_ratio;
  j["include_confident"] = c.include_confident;
  j["test_fraction"] = c.test_fraction;
  j["joint_2d"] = c.joint_2d;
  j["force_zero_credibility"] = c.force_zero_credibility;
  j["uniform_prior"] = c.uniform_prior;
  j["seed"] = c.seed;
  return j;
}

AdaptationConfig config_from_json(const nlohmann::json& j) {
  AdaptationConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("eta", c.eta);
  get("segments_q", c.segments_q);
  get("samplings", c.samplings);
  get("dropout_rate", c.dropout_rate);
  get("grid_cells", c.grid_cells);
  get("learning_rate", c.learning_rate);
  get("batch_size", c.batch_size);
  get("max_epochs", c.max_epochs);
  get("early_stop_window", c.early_stop_window);
  get("early_stop_ratio", c.early_stop_ratio);
  get("include_confident", c.include_confident);
  get("test_fraction", c.test_fraction);
  get("joint_2d", c.joint_2d);
  get("force_zero_credibility", c.force_zero_credibility);
  get("uniform_prior", c.uniform_prior);
  get("seed", c.seed);
  validate_config(c);
  return c;
}

Metrics evaluate(const Regressor& model, const Dataset& data) {
  if (!data.labels) throw DataError("evaluate requires labeled data");
  if (data.features.cols() != model.input_dim()) {
    throw ShapeError("feature width does not match the model input");
  }
  if (data.labels->cols() != model.output_dim()) {
    throw ShapeError("label width does not match the model output");
  }
  if (data.rows() == 0) throw DataError("evaluate requires at least one example");
  return compute_metrics(forward_batch(model, data.features), *data.labels);
}

bool early_stop_check(const std::vector<Scalar>& loss_history, int window, Scalar ratio) {
  if (window < 2) throw ConfigError("early-stop window must be at least 2");
  const auto n = static_cast<Index>(loss_history.size());
  if (n < 2 * window) return false;
  const Scalar first_drop =
      (loss_history[0] - loss_history[static_cast<std::size_t>(window)]) / static_cast<Scalar>(window);
  const Scalar recent_drop =
      (loss_history[static_cast<std::size_t>(n - 1 - window)] - loss_history[static_cast<std::size_t>(n - 1)]) /
      static_cast<Scalar>(window);
  return recent_drop < ratio * first_drop;
}

AdaptationResult adapt(const Regressor& source_model, const Dataset& target,
                       const AdaptationConfig& config, const Dataset& source_calibration_data) {
  return run_adaptation(source_model, target, config, source_calibration_data,
                        Mode::DensityWeighted);
}

AdaptationResult baseline_naive_selftrain(const Regressor& source_model, const Dataset& target,
                                          const AdaptationConfig& config,
                                          const Dataset& source_calibration_data) {
  return run_adaptation(source_model, target, config, source_calibration_data,
                        Mode::NaiveSelfTrain);
}

nlohmann::ordered_json metrics_to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["mse"] = m.mse;
  j["mae"] = m.mae;
  j["rmsle"] = m.rmsle ? nlohmann::ordered_json(*m.rmsle) : nlohmann::ordered_json(nullptr);
  j["rmsle_defined"] = m.rmsle.has_value();
  j["count"] = m.count;
  return j;
}

nlohmann::ordered_json report_to_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = r.mode;
  j["config"] = config_to_json(r.config);

  nlohmann::ordered_json cal;
  cal["eta"] = r.threshold.eta;
  cal["tau"] = std::vector<Scalar>(r.threshold.tau.data(),
                                   r.threshold.tau.data() + r.threshold.tau.size());
  cal["a0"] = std::vector<Scalar>(r.error_model.a0.data(),
                                  r.error_model.a0.data() + r.error_model.a0.size());
  cal["a1"] = std::vector<Scalar>(r.error_model.a1.data(),
                                  r.error_model.a1.data() + r.error_model.a1.size());
  cal["q"] = r.error_model.segments;
  j["calibration"] = cal;

  nlohmann::ordered_json splits;
  splits["target_total"] = r.target_count;
  splits["adaptation"] = r.adaptation_count;
  splits["test"] = r.test_count;
  splits["confident"] = r.confident_count;
  splits["uncertain"] = r.uncertain_count;
  splits["uncertain_ratio"] = r.uncertain_ratio;
  j["splits"] = splits;

  nlohmann::ordered_json grids = nlohmann::ordered_json::array();
  for (std::size_t d = 0; d < r.grids.size(); ++d) {
    const GridSpec& spec = r.grids[d];
    nlohmann::ordered_json g;
    g["y0"] = std::vector<Scalar>(spec.y0.data(), spec.y0.data() + spec.y0.size());
    g["ym"] = std::vector<Scalar>(spec.ym.data(), spec.ym.data() + spec.ym.size());
    g["g"] = std::vector<Scalar>(spec.g.data(), spec.g.data() + spec.g.size());
    const Eigen::VectorXi cells = spec.cells();
    g["cells"] = std::vector<int>(cells.data(), cells.data() + cells.size());
    g["out_of_range"] = r.map_out_of_range[d];
    grids.push_back(g);
  }
  j["density_grids"] = grids;

  nlohmann::ordered_json pseudo;
  pseudo["count"] = r.uncertain_count;
  pseudo["fallback_fraction"] = r.fallback_fraction;
  pseudo["beta_quantiles"] =
      std::vector<Scalar>(r.beta_quantiles.data(), r.beta_quantiles.data() + r.beta_quantiles.size());
  j["pseudo_labels"] = pseudo;

  nlohmann::ordered_json training;
  training["epochs_run"] = r.epochs_run;
  training["early_stop_epoch"] = opt_json(r.early_stop_epoch);
  training["loss_history"] = r.loss_history;
  j["training"] = training;

  j["metrics"] = {{"adaptation", split_report_json(r.adaptation)},
                  {"test", split_report_json(r.test)}};

  nlohmann::ordered_json diag;
  diag["uncertain_example_share"] = opt_json(r.uncertain_example_share);
  diag["uncertain_error_share"] = opt_json(r.uncertain_error_share);
  diag["beta_accuracy_correlation"] = opt_json(r.beta_accuracy_correlation);
  j["diagnostics"] = diag;

  nlohmann::ordered_json reduction;
  reduction["test_mse_reduction_pct"] = opt_json(r.test_mse_reduction_pct);
  reduction["test_rmsle_reduction_pct"] = opt_json(r.test_rmsle_reduction_pct);
  reduction["test_uncertain_mse_reduction_pct"] = opt_json(r.test_uncertain_mse_reduction_pct);
  reduction["reference_mse_reduction_pct"] = kReferenceMseReductionPct;
  reduction["reference_rmsle_reduction_pct"] = kReferenceRmsleReductionPct;
  j["reduction"] = reduction;
  return j;
}

namespace {

std::string write_artifacts_impl(const RunReport& report, const Regressor* model,
                                 const std::string& directory,
                                 const std::string& adapted_model_filename) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  const fs::path dir(directory);

  if (model) save_model(*model, (dir / adapted_model_filename).string());

  const std::string pseudo_name = "pseudo_labels.csv";
  {
    std::ofstream out(dir / pseudo_name);
    write_pseudo_labels_csv(report.pseudo_labels, out);
  }
  std::vector<std::string> map_names;
  for (std::size_t d = 0; d < report.maps.size(); ++d) {
    map_names.push_back("density_map_dim" + std::to_string(d) + ".csv");
    std::ofstream out(dir / map_names.back());
    write_map_csv(report.maps[d], out);
  }

  nlohmann::ordered_json manifest = report_to_json(report);
  manifest["diverged"] = model == nullptr;
  nlohmann::ordered_json artifacts;
  artifacts["adapted_model"] =
      model ? nlohmann::ordered_json(adapted_model_filename) : nlohmann::ordered_json(nullptr);
  artifacts["pseudo_labels_csv"] = pseudo_name;
  artifacts["density_map_csv"] = map_names;
  manifest["artifacts"] = artifacts;
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  manifest["timestamp"] = stamp;

  const fs::path manifest_path = dir / "run_manifest.json";
  std::ofstream out(manifest_path);
  out << manifest.dump(2) << '\n';
  if (!out) throw DataError("failed writing manifest: " + manifest_path.string());
  return manifest_path.string();
}

}  // namespace

std::string write_run_artifacts(const AdaptationResult& result, const std::string& directory,
                                const std::string& adapted_model_filename) {
  return write_artifacts_impl(result.report, &result.model, directory, adapted_model_filename);
}

std::string write_partial_run_artifacts(const RunReport& report, const std::string& directory) {
  return write_artifacts_impl(report, nullptr, directory, "");
}

}  // namespace tasfar
