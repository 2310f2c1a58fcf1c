#ifndef TASFAR_CALIBRATION_HPP
#define TASFAR_CALIBRATION_HPP

#include <vector>

#include "tasfar/regressor.hpp"
#include "tasfar/types.hpp"

namespace tasfar {

/// Lower bound applied to fitted error deviations; keeps later divisions by
/// sigma well defined when a fitted intercept is negative.
inline constexpr Scalar kSigmaFloor = 1e-6;

/// Per-dimension uncertainty threshold tau, the eta-quantile of source
/// uncertainties.
struct ConfidenceThreshold {
  Vector tau;
  Scalar eta = 0.9;
};

/// Linear uncertainty-to-error-deviation calibration, one (a0, a1) pair per
/// label dimension, fitted over `segments` equal-count uncertainty segments.
struct ErrorModel {
  Vector a0;
  Vector a1;
  int segments = 0;
  Index dims() const { return a0.size(); }
};

struct SplitSets {
  std::vector<UncertainPrediction> confident;
  std::vector<UncertainPrediction> uncertain;
};

/// Empirical p-quantile with linear interpolation between order statistics.
Scalar quantile(std::vector<Scalar> values, Scalar p);

/// eta-quantile of a one-dimensional uncertainty sample (>= 10 values).
Scalar compute_threshold(const Eigen::Ref<const Vector>& source_uncertainties, Scalar eta);

/// Per-dimension thresholds from an uncertainty matrix (rows = examples).
ConfidenceThreshold compute_thresholds(const Eigen::Ref<const Matrix>& source_uncertainties,
                                       Scalar eta);

/// Confident iff uncertainty <= tau in every dimension.
SplitSets classify(const std::vector<UncertainPrediction>& predictions,
                   const ConfidenceThreshold& threshold);

/// Sorts by uncertainty, splits into `segments` equal-count segments, takes
/// each segment's mean uncertainty and 68th percentile of absolute errors,
/// and solves the least-squares line through the segment summaries.
ErrorModel fit_error_model(const std::vector<UncertainPrediction>& source_predictions,
                           const Eigen::Ref<const Matrix>& source_labels, int segments);

/// max(a0 + a1*u, sigma floor) for one label dimension.
Scalar sigma_of(const ErrorModel& model, Index dim, Scalar u);
Vector sigma_of(const ErrorModel& model, const Eigen::Ref<const Vector>& u);

}  // namespace tasfar

#endif
