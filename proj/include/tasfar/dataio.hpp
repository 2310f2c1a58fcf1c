#ifndef TASFAR_DATAIO_HPP
#define TASFAR_DATAIO_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tasfar/types.hpp"

namespace tasfar {

/// Column-wise affine standardization fitted on one split and reusable on
/// others. Zero-variance columns are flagged and left centered at 0.
struct FeatureTransform {
  Vector mean;
  Vector stdev;                    // 1 where zero_variance
  std::vector<bool> zero_variance;

  static FeatureTransform identity(Index dim);
  Matrix apply(const Eigen::Ref<const Matrix>& raw) const;
  Matrix invert(const Eigen::Ref<const Matrix>& standardized) const;
  Scalar raw_value(Index column, Scalar standardized) const;
  Scalar standardized_value(Index column, Scalar raw) const;
};

struct Dataset {
  Matrix features;                      // standardized when loaded from CSV
  std::optional<Matrix> labels;
  std::string tag;
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;
  FeatureTransform transform;
  long dropped_rows = 0;

  Index rows() const { return features.rows(); }
};

enum class TrueFunction { Linear, Piecewise, Sinusoidal };

/// Scalar response families over the projection t = w.x:
///   Linear:     params [w(d), b]                     y = t + b
///   Piecewise:  params [w(d), b, knee, post_slope]   y = b + min(t,knee) + post_slope*max(t-knee,0)
///   Sinusoidal: params [w(d), b, amplitude, freq]    y = b + amplitude*sin(freq*t)
Scalar true_function_value(TrueFunction family, const Eigen::Ref<const Vector>& params,
                           const Eigen::Ref<const Vector>& x);

/// Gaussian input sampler component. A finite projection_cap resamples
/// draws while w.x >= cap (w from the scenario's true function), carving a
/// one-sided support boundary.
struct SamplerComponent {
  Scalar weight = 1.0;
  Vector mean;
  Vector scale;
  Scalar projection_cap = std::numeric_limits<Scalar>::quiet_NaN();
};

/// Target-label concentration: a draw is kept iff its (noisy) label falls
/// within center +- halfwidth, else kept with probability leak_prob.
/// Disabled when halfwidth <= 0 or leak_prob >= 1.
struct LabelMode {
  Scalar center = 0;
  Scalar halfwidth = 0;
  Scalar leak_prob = 1.0;
  bool active() const { return halfwidth > 0 && leak_prob < 1.0; }
};

struct ScenarioSpec {
  int feature_dim = 0;
  TrueFunction family = TrueFunction::Linear;
  Vector params;
  std::vector<SamplerComponent> source_components;
  std::vector<SamplerComponent> target_components;
  LabelMode target_label_mode;
  Scalar noise_scale = 0;
  long source_count = 0;
  long target_count = 0;
  std::uint64_t seed = 0;
};

/// Deterministic synthetic source/target pair sharing the conditional
/// Pr(x|y): acceptance depends on the label only. Both datasets carry
/// labels; the pipeline uses target labels for reporting alone.
std::pair<Dataset, Dataset> gen_scenario(const ScenarioSpec& spec);

ScenarioSpec scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const ScenarioSpec& spec);

/// Loads named columns from a headered CSV, drops rows with missing or
/// non-numeric entries (counted), standardizes features and records the
/// transform. The overload with a transform applies it instead of fitting.
Dataset load_csv(const std::string& path, const std::vector<std::string>& label_columns,
                 const std::vector<std::string>& feature_columns);
Dataset load_csv(const std::string& path, const std::vector<std::string>& label_columns,
                 const std::vector<std::string>& feature_columns,
                 const FeatureTransform& transform);

/// Writes features (de-standardized back to raw values) and labels as CSV.
void save_csv(const Dataset& data, const std::string& path);

struct SplitRule {
  enum class Op { Lt, Le, Gt, Ge, Eq, Ne };
  std::string column;
  Op op = Op::Lt;
  Scalar value = 0;
};

SplitRule::Op split_op_from_string(const std::string& name);

/// Rows satisfying the rule (on raw column values) become the target split,
/// the rest the source split. Either side empty is an error naming the side.
std::pair<Dataset, Dataset> split_by_predicate(const Dataset& data, const SplitRule& rule);

nlohmann::json transform_to_json(const FeatureTransform& t, const std::vector<std::string>& names);
FeatureTransform transform_from_json(const nlohmann::json& j, const std::vector<std::string>& names);

}  // namespace tasfar

#endif
