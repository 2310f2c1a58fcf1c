#ifndef TASFAR_PIPELINE_HPP
#define TASFAR_PIPELINE_HPP

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tasfar/calibration.hpp"
#include "tasfar/dataio.hpp"
#include "tasfar/density.hpp"
#include "tasfar/pseudolabel.hpp"
#include "tasfar/regressor.hpp"

namespace tasfar {

struct AdaptationConfig {
  Scalar eta = 0.9;
  int segments_q = 40;
  int samplings = 20;
  Scalar dropout_rate = 0.2;
  int grid_cells = 100;
  Scalar learning_rate = 3e-3;
  int batch_size = 0;              // 0 = full batch
  int max_epochs = 500;
  int early_stop_window = 20;
  Scalar early_stop_ratio = 0.1;
  bool include_confident = true;
  Scalar test_fraction = 0.2;
  bool joint_2d = false;                // one joint 2-D map instead of per-dimension maps
  bool force_zero_credibility = false;  // diagnostic: train with all beta = 0
  bool uniform_prior = false;           // diagnostic: replace the map by a flat one
  std::uint64_t seed = 1;
};

void validate_config(const AdaptationConfig& config);
nlohmann::ordered_json config_to_json(const AdaptationConfig& config);
AdaptationConfig config_from_json(const nlohmann::json& j);

struct Metrics {
  Scalar mse = 0;
  Scalar mae = 0;
  std::optional<Scalar> rmsle;  // omitted when any value is <= -1
  long count = 0;
};

/// MSE / MAE / RMSLE over all (example, dimension) entries.
Metrics evaluate(const Regressor& model, const Dataset& data);

/// True once the mean per-epoch loss drop over the last `window` epochs
/// falls below ratio x the mean drop over the first `window` epochs.
/// Histories shorter than 2*window never stop.
bool early_stop_check(const std::vector<Scalar>& loss_history, int window, Scalar ratio);

struct MetricsBeforeAfter {
  std::optional<Metrics> before;
  std::optional<Metrics> after;
};

struct SplitReport {
  long count = 0;
  MetricsBeforeAfter whole;
  MetricsBeforeAfter uncertain;
  MetricsBeforeAfter confident;
  long uncertain_count = 0;
};

struct RunReport {
  AdaptationConfig config;
  std::string mode;  // "density_weighted" or "naive_self_train"

  ConfidenceThreshold threshold;
  ErrorModel error_model;

  long target_count = 0;
  long adaptation_count = 0;
  long test_count = 0;
  long confident_count = 0;
  long uncertain_count = 0;
  Scalar uncertain_ratio = 0;

  std::vector<GridSpec> grids;          // one per label dimension
  std::vector<int> map_out_of_range;

  Scalar fallback_fraction = 0;
  Vector beta_quantiles;

  std::vector<Scalar> loss_history;
  int epochs_run = 0;
  std::optional<int> early_stop_epoch;

  SplitReport adaptation;
  SplitReport test;

  // Present when target labels are available.
  std::optional<Scalar> uncertain_example_share;
  std::optional<Scalar> uncertain_error_share;
  std::optional<Scalar> beta_accuracy_correlation;
  std::optional<Scalar> test_mse_reduction_pct;
  std::optional<Scalar> test_rmsle_reduction_pct;
  std::optional<Scalar> test_uncertain_mse_reduction_pct;

  PseudoLabelBatch pseudo_labels;
  std::vector<LabelDensityMap> maps;
};

struct AdaptationResult {
  Regressor model;
  RunReport report;
};

/// Raised when adaptation training diverges; carries everything computed up
/// to the failing epoch so callers can still emit a partial manifest.
struct AdaptationDiverged : NumericError {
  AdaptationDiverged(const std::string& message, RunReport partial_report)
      : NumericError(message), partial(std::move(partial_report)) {}
  RunReport partial;
};

/// Full adaptation: threshold and calibration from the labeled calibration
/// split, MC-dropout classification of the target, per-dimension density
/// maps from the confident set, credibility-weighted pseudo-labels for the
/// uncertain set (plus confident self-targets at weight 1 when configured),
/// and early-stopped training.
AdaptationResult adapt(const Regressor& source_model, const Dataset& target,
                       const AdaptationConfig& config, const Dataset& source_calibration_data);

/// Control arm: identical staging, but pseudo-labels are the raw
/// predictions and every weight is 1.
AdaptationResult baseline_naive_selftrain(const Regressor& source_model, const Dataset& target,
                                          const AdaptationConfig& config,
                                          const Dataset& source_calibration_data);

nlohmann::ordered_json metrics_to_json(const Metrics& m);
nlohmann::ordered_json report_to_json(const RunReport& report);

/// Manifest JSON plus pseudo-label and density-map CSVs under `directory`.
/// Returns the manifest path. Deterministic except the timestamp field.
std::string write_run_artifacts(const AdaptationResult& result, const std::string& directory,
                                const std::string& adapted_model_filename = "adapted_model.bin");

/// Artifacts for a diverged run: manifest (flagged) and CSVs, no model.
std::string write_partial_run_artifacts(const RunReport& report, const std::string& directory);

}  // namespace tasfar

#endif
