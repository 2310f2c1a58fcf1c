#ifndef TASFAR_PSEUDOLABEL_HPP
#define TASFAR_PSEUDOLABEL_HPP

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "tasfar/density.hpp"

namespace tasfar {

/// Window posteriors smaller than this trigger the fallback path.
inline constexpr Scalar kWindowProbabilityFloor = 1e-300;

struct PseudoLabel {
  Vector value;            // interpolated label, or the prediction on fallback
  Scalar credibility = 0;  // training weight beta
  Index source_index = -1;
  int locality_cells = 0;
  bool fallback = false;
};

/// Unnormalized posterior over the cells whose centers lie strictly within
/// 3 sigma of the prediction (per-dimension box for 2-D maps).
struct WindowPosterior {
  std::vector<Index> cells;     // flat cell indices
  Vector probs;                 // instance mass x map density per cell
  Scalar local_mean_density = 0;
};

WindowPosterior posterior_cell_probs(const LabelDensityMap& map,
                                     const Eigen::Ref<const Vector>& prediction,
                                     const Eigen::Ref<const Vector>& sigma,
                                     InstanceDistribution distribution = InstanceDistribution::Gaussian);

/// Pseudo-label for one uncertain prediction: the posterior-weighted mean of
/// window cell centers, with credibility (local/global mean density) x
/// (u/tau, averaged over dimensions). Empty or underflowing windows fall
/// back to the prediction itself with credibility 0.
PseudoLabel generate(const LabelDensityMap& map, const UncertainPrediction& prediction,
                     const ErrorModel& error_model, const ConfidenceThreshold& threshold,
                     InstanceDistribution distribution = InstanceDistribution::Gaussian);

struct PseudoLabelFailure {
  std::size_t index;
  std::string message;
};

struct PseudoLabelBatch {
  std::vector<PseudoLabel> labels;        // one per input, order preserved
  std::vector<PseudoLabelFailure> failures;
  Scalar fallback_fraction = 0;
  Vector beta_quantiles;                  // 0, .25, .5, .75, 1
};

/// generate() per item; a failing item degrades to the fallback label and is
/// recorded, never aborting the batch.
PseudoLabelBatch generate_all(const LabelDensityMap& map,
                              const std::vector<UncertainPrediction>& uncertain,
                              const ErrorModel& error_model, const ConfidenceThreshold& threshold,
                              InstanceDistribution distribution = InstanceDistribution::Gaussian);

/// CSV export: source_index, value components, credibility, window size,
/// fallback flag.
void write_pseudo_labels_csv(const PseudoLabelBatch& batch, std::ostream& out);

}  // namespace tasfar

#endif
