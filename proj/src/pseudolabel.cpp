#include "tasfar/pseudolabel.hpp"

#include <cmath>
#include <ostream>

#include "tasfar/calibration.hpp"

namespace tasfar {

WindowPosterior posterior_cell_probs(const LabelDensityMap& map,
                                     const Eigen::Ref<const Vector>& prediction,
                                     const Eigen::Ref<const Vector>& sigma,
                                     InstanceDistribution distribution) {
  const int dims = map.spec.dims();
  if (prediction.size() != dims || sigma.size() != dims) {
    throw ShapeError("prediction dimensionality does not match the map");
  }
  if (!(sigma.array() > 0).all()) throw DataError("posterior requires positive sigma");
  const Eigen::VectorXi j = map.spec.cells();

  // Per-dimension indices whose centers lie strictly within 3 sigma.
  std::vector<std::vector<Index>> axis_cells(dims);
  std::vector<std::vector<Scalar>> axis_mass(dims);
  for (int d = 0; d < dims; ++d) {
    for (Index cell = 0; cell < j[d]; ++cell) {
      if (std::abs(map.spec.cell_center(d, cell) - prediction[d]) < 3 * sigma[d]) {
        axis_cells[d].push_back(cell);
        axis_mass[d].push_back(cell_mass(prediction[d], sigma[d], map.spec.cell_low(d, cell),
                                         map.spec.cell_high(d, cell), distribution));
      }
    }
  }

  WindowPosterior out;
  if (dims == 1) {
    out.cells = axis_cells[0];
    out.probs.resize(static_cast<Index>(out.cells.size()));
    Scalar density_sum = 0;
    for (std::size_t k = 0; k < out.cells.size(); ++k) {
      const Scalar density = map.densities[out.cells[k]];
      out.probs[static_cast<Index>(k)] = axis_mass[0][k] * density;
      density_sum += density;
    }
    if (!out.cells.empty()) out.local_mean_density = density_sum / static_cast<Scalar>(out.cells.size());
    return out;
  }

  out.cells.reserve(axis_cells[0].size() * axis_cells[1].size());
  std::vector<Scalar> probs;
  probs.reserve(out.cells.capacity());
  Scalar density_sum = 0;
  for (std::size_t k0 = 0; k0 < axis_cells[0].size(); ++k0) {
    for (std::size_t k1 = 0; k1 < axis_cells[1].size(); ++k1) {
      const Index flat = axis_cells[0][k0] * j[1] + axis_cells[1][k1];
      const Scalar density = map.densities[flat];
      out.cells.push_back(flat);
      probs.push_back(axis_mass[0][k0] * axis_mass[1][k1] * density);
      density_sum += density;
    }
  }
  out.probs = Eigen::Map<const Vector>(probs.data(), static_cast<Index>(probs.size()));
  if (!out.cells.empty()) out.local_mean_density = density_sum / static_cast<Scalar>(out.cells.size());
  return out;
}

PseudoLabel generate(const LabelDensityMap& map, const UncertainPrediction& prediction,
                     const ErrorModel& error_model, const ConfidenceThreshold& threshold,
                     InstanceDistribution distribution) {
  const int dims = map.spec.dims();
  if (!prediction.prediction.allFinite() || !prediction.uncertainty.allFinite()) {
    throw NumericError("non-finite prediction passed to the pseudo-label generator");
  }
  const Scalar global_mean_density = map.densities.mean();
  if (!(global_mean_density > 0)) throw DataError("density map is empty");
  if (threshold.tau.size() < dims) throw ShapeError("threshold dimensionality below the map's");

  Vector sigma(dims);
  for (int d = 0; d < dims; ++d) sigma[d] = sigma_of(error_model, d, prediction.uncertainty[d]);

  PseudoLabel label;
  label.source_index = prediction.input_index;

  const WindowPosterior posterior =
      posterior_cell_probs(map, prediction.prediction.head(dims), sigma, distribution);
  label.locality_cells = static_cast<int>(posterior.cells.size());

  const Scalar total = posterior.cells.empty() ? 0.0 : posterior.probs.sum();
  if (posterior.cells.empty() || total < kWindowProbabilityFloor) {
    label.value = prediction.prediction.head(dims);
    label.credibility = 0;
    label.fallback = true;
    return label;
  }

  const Eigen::VectorXi j = map.spec.cells();
  Vector value = Vector::Zero(dims);
  for (std::size_t k = 0; k < posterior.cells.size(); ++k) {
    const Scalar p = posterior.probs[static_cast<Index>(k)] / total;
    Index flat = posterior.cells[k];
    if (dims == 1) {
      value[0] += p * map.spec.cell_center(0, flat);
    } else {
      value[0] += p * map.spec.cell_center(0, flat / j[1]);
      value[1] += p * map.spec.cell_center(1, flat % j[1]);
    }
  }
  label.value = value;

  Scalar u_over_tau = 0;
  for (int d = 0; d < dims; ++d) u_over_tau += prediction.uncertainty[d] / threshold.tau[d];
  u_over_tau /= static_cast<Scalar>(dims);
  label.credibility = posterior.local_mean_density / global_mean_density * u_over_tau;
  return label;
}

PseudoLabelBatch generate_all(const LabelDensityMap& map,
                              const std::vector<UncertainPrediction>& uncertain,
                              const ErrorModel& error_model, const ConfidenceThreshold& threshold,
                              InstanceDistribution distribution) {
  PseudoLabelBatch batch;
  batch.labels.reserve(uncertain.size());
  long fallbacks = 0;
  for (std::size_t i = 0; i < uncertain.size(); ++i) {
    try {
      batch.labels.push_back(generate(map, uncertain[i], error_model, threshold, distribution));
    } catch (const std::exception& e) {
      PseudoLabel degraded;
      degraded.value = uncertain[i].prediction.head(map.spec.dims());
      degraded.credibility = 0;
      degraded.fallback = true;
      degraded.source_index = uncertain[i].input_index;
      batch.labels.push_back(std::move(degraded));
      batch.failures.push_back({i, e.what()});
    }
    if (batch.labels.back().fallback) ++fallbacks;
  }
  if (!batch.labels.empty()) {
    batch.fallback_fraction = static_cast<Scalar>(fallbacks) / static_cast<Scalar>(batch.labels.size());
    std::vector<Scalar> betas;
    betas.reserve(batch.labels.size());
    for (const PseudoLabel& l : batch.labels) betas.push_back(l.credibility);
    batch.beta_quantiles.resize(5);
    const Scalar qs[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (int k = 0; k < 5; ++k) batch.beta_quantiles[k] = quantile(betas, qs[k]);
  }
  return batch;
}

void write_pseudo_labels_csv(const PseudoLabelBatch& batch, std::ostream& out) {
  const Index dims = batch.labels.empty() ? 1 : batch.labels.front().value.size();
  out << "source_index";
  for (Index d = 0; d < dims; ++d) out << ",value_" << d;
  out << ",credibility,window_cells,fallback\n";
  char buf[32];
  for (const PseudoLabel& l : batch.labels) {
    out << l.source_index;
    for (Index d = 0; d < dims; ++d) {
      std::snprintf(buf, sizeof buf, "%.17g", l.value[d]);
      out << ',' << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", l.credibility);
    out << ',' << buf << ',' << l.locality_cells << ',' << (l.fallback ? 1 : 0) << '\n';
  }
}

}  // namespace tasfar
