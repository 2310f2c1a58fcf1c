#include "tasfar/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tasfar {

Scalar quantile(std::vector<Scalar> values, Scalar p) {
  if (values.empty()) throw DataError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  p = std::clamp(p, 0.0, 1.0);
  const Scalar h = p * static_cast<Scalar>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= values.size()) return values.back();
  const Scalar frac = h - static_cast<Scalar>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

Scalar compute_threshold(const Eigen::Ref<const Vector>& source_uncertainties, Scalar eta) {
  if (eta <= 0 || eta > 1) throw ConfigError("eta must lie in (0, 1]");
  if (source_uncertainties.size() == 0) throw DataError("no source uncertainties given");
  if (source_uncertainties.size() < 10) {
    throw DataError("threshold estimation needs at least 10 source uncertainty values");
  }
  std::vector<Scalar> values(source_uncertainties.data(),
                             source_uncertainties.data() + source_uncertainties.size());
  return quantile(std::move(values), eta);
}

ConfidenceThreshold compute_thresholds(const Eigen::Ref<const Matrix>& source_uncertainties,
                                       Scalar eta) {
  ConfidenceThreshold out;
  out.eta = eta;
  out.tau.resize(source_uncertainties.cols());
  for (Index d = 0; d < source_uncertainties.cols(); ++d) {
    out.tau[d] = compute_threshold(source_uncertainties.col(d), eta);
  }
  return out;
}

SplitSets classify(const std::vector<UncertainPrediction>& predictions,
                   const ConfidenceThreshold& threshold) {
  SplitSets sets;
  for (const UncertainPrediction& p : predictions) {
    if (p.uncertainty.size() != threshold.tau.size()) {
      throw ShapeError("prediction and threshold dimensions disagree");
    }
    const bool confident = (p.uncertainty.array() <= threshold.tau.array()).all();
    (confident ? sets.confident : sets.uncertain).push_back(p);
  }
  return sets;
}

ErrorModel fit_error_model(const std::vector<UncertainPrediction>& source_predictions,
                           const Eigen::Ref<const Matrix>& source_labels, int segments) {
  if (segments < 2) throw ConfigError("segment count must be at least 2");
  const auto n = static_cast<Index>(source_predictions.size());
  if (n < segments) throw DataError("fewer samples than calibration segments");
  if (source_labels.rows() != n) {
    throw ShapeError("prediction and label counts disagree");
  }
  const Index dims = source_labels.cols();

  ErrorModel model;
  model.segments = segments;
  model.a0.resize(dims);
  model.a1.resize(dims);

  for (Index d = 0; d < dims; ++d) {
    std::vector<std::pair<Scalar, Scalar>> pairs(n);  // (uncertainty, |error|)
    for (Index i = 0; i < n; ++i) {
      const UncertainPrediction& p = source_predictions[static_cast<std::size_t>(i)];
      if (p.prediction.size() != dims || p.uncertainty.size() != dims) {
        throw ShapeError("prediction dimensionality does not match the labels");
      }
      pairs[i] = {p.uncertainty[d], std::abs(p.prediction[d] - source_labels(i, d))};
    }
    std::sort(pairs.begin(), pairs.end());

    // Equal-count segments; the first (n mod q) segments take one extra row.
    Vector seg_u(segments), seg_e(segments);
    Index start = 0;
    for (int s = 0; s < segments; ++s) {
      Index size = n / segments + (s < n % segments ? 1 : 0);
      Scalar u_sum = 0;
      std::vector<Scalar> errors(size);
      for (Index i = 0; i < size; ++i) {
        u_sum += pairs[start + i].first;
        errors[i] = pairs[start + i].second;
      }
      seg_u[s] = u_sum / static_cast<Scalar>(size);
      seg_e[s] = quantile(std::move(errors), 0.68);
      start += size;
    }

    const Scalar q = static_cast<Scalar>(segments);
    const Scalar u_bar = seg_u.mean();
    const Scalar e_bar = seg_e.mean();
    const Scalar denom = seg_u.squaredNorm() - q * u_bar * u_bar;
    if (std::abs(denom) < 1e-12 * std::max(Scalar(1), seg_u.squaredNorm())) {
      throw DataError("degenerate calibration fit: segment mean uncertainties have no spread");
    }
    model.a1[d] = (seg_u.dot(seg_e) - q * u_bar * e_bar) / denom;
    model.a0[d] = e_bar - model.a1[d] * u_bar;
  }
  return model;
}

Scalar sigma_of(const ErrorModel& model, Index dim, Scalar u) {
  if (dim < 0 || dim >= model.dims()) throw ShapeError("error model dimension out of range");
  return std::max(model.a0[dim] + model.a1[dim] * u, kSigmaFloor);
}

Vector sigma_of(const ErrorModel& model, const Eigen::Ref<const Vector>& u) {
  if (u.size() != model.dims()) throw ShapeError("uncertainty and error model dimensions disagree");
  Vector out(u.size());
  for (Index d = 0; d < u.size(); ++d) out[d] = sigma_of(model, d, u[d]);
  return out;
}

}  // namespace tasfar
