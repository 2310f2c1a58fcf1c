#include "tasfar/density.hpp"

#include <cmath>
#include <ostream>

namespace tasfar {

namespace {

constexpr Scalar kInvSqrt2 = 0.7071067811865475244;

// Standard-normal interval mass via erf/erfc with the branch chosen so tail
// differences never cancel catastrophically.
Scalar normal_interval_mass(Scalar a, Scalar b) {
  // a, b already standardized and divided by sqrt(2); a <= b
  if (a >= 0) return 0.5 * (std::erfc(a) - std::erfc(b));
  if (b <= 0) return 0.5 * (std::erfc(-b) - std::erfc(-a));
  return 0.5 * (std::erf(b) - std::erf(a));
}

Scalar laplace_cdf(Scalar x, Scalar mu, Scalar b) {
  const Scalar z = (x - mu) / b;
  return z < 0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
}

void check_spec_match(const GridSpec& a, const GridSpec& b) {
  if (a.dims() != b.dims()) throw ShapeError("grid specs differ in dimensionality");
  for (Index d = 0; d < a.dims(); ++d) {
    const Scalar tol = 1e-12 * std::max({std::abs(a.ym[d]), std::abs(a.y0[d]), Scalar(1)});
    if (std::abs(a.y0[d] - b.y0[d]) > tol || std::abs(a.ym[d] - b.ym[d]) > tol ||
        std::abs(a.g[d] - b.g[d]) > tol) {
      throw ShapeError("grid specs differ");
    }
  }
}

}  // namespace

Eigen::VectorXi GridSpec::cells() const {
  Eigen::VectorXi j(y0.size());
  for (Index d = 0; d < y0.size(); ++d) {
    // tiny relative bias so exact divisions are not floored away
    j[d] = static_cast<int>(std::floor((ym[d] - y0[d]) / g[d] * (1 + 1e-12)));
  }
  return j;
}

Index GridSpec::total_cells() const {
  const Eigen::VectorXi j = cells();
  Index total = 1;
  for (Index d = 0; d < j.size(); ++d) total *= j[d];
  return total;
}

GridSpec make_grid_spec(const Vector& y0, const Vector& ym, const Vector& g) {
  if (y0.size() < 1 || y0.size() > 2) throw ConfigError("grids support 1 or 2 dimensions");
  if (ym.size() != y0.size() || g.size() != y0.size()) {
    throw ShapeError("grid spec vectors disagree in length");
  }
  GridSpec spec{y0, ym, g};
  for (Index d = 0; d < y0.size(); ++d) {
    if (!(ym[d] > y0[d])) throw ConfigError("grid range must be non-empty per dimension");
    if (!(g[d] > 0)) throw ConfigError("grid size must be positive");
    if (spec.cells()[d] < 1) throw ConfigError("grid size larger than the label range");
  }
  return spec;
}

Scalar cell_mass(Scalar mu, Scalar sigma, Scalar cell_lo, Scalar cell_hi) {
  return cell_mass(mu, sigma, cell_lo, cell_hi, InstanceDistribution::Gaussian);
}

Scalar cell_mass(Scalar mu, Scalar sigma, Scalar cell_lo, Scalar cell_hi,
                 InstanceDistribution distribution) {
  if (!(sigma > 0)) throw DataError("cell_mass requires a positive sigma");
  if (!(cell_lo < cell_hi)) return 0.0;
  if (distribution == InstanceDistribution::Laplace) {
    const Scalar b = sigma * kInvSqrt2;  // Laplace scale with matching std deviation
    return laplace_cdf(cell_hi, mu, b) - laplace_cdf(cell_lo, mu, b);
  }
  const Scalar a = (cell_lo - mu) / sigma * kInvSqrt2;
  const Scalar c = (cell_hi - mu) / sigma * kInvSqrt2;
  return normal_interval_mass(a, c);
}

LabelDensityMap build_map(const std::vector<UncertainPrediction>& confident,
                          const ErrorModel& error_model, const GridSpec& spec,
                          InstanceDistribution distribution) {
  if (confident.empty()) throw DataError("cannot build a density map from an empty confident set");
  const int dims = spec.dims();
  if (error_model.dims() < dims) throw ShapeError("error model has fewer dimensions than the grid");
  const Eigen::VectorXi j = spec.cells();

  LabelDensityMap map;
  map.spec = spec;
  map.densities = Vector::Zero(spec.total_cells());

  std::vector<Vector> axis_mass(dims);
  for (const UncertainPrediction& p : confident) {
    if (p.prediction.size() < dims) throw ShapeError("prediction has fewer dimensions than the grid");
    bool in_range = true;
    for (int d = 0; d < dims; ++d) {
      const Scalar sigma = sigma_of(error_model, d, p.uncertainty[d]);
      const Scalar mu = p.prediction[d];
      if (mu < spec.y0[d] - 6 * sigma || mu > spec.ym[d] + 6 * sigma) in_range = false;
      Vector& mass = axis_mass[d];
      mass.resize(j[d]);
      for (int cell = 0; cell < j[d]; ++cell) {
        mass[cell] = cell_mass(mu, sigma, spec.cell_low(d, cell), spec.cell_high(d, cell),
                               distribution);
      }
    }
    if (!in_range) ++map.out_of_range;
    if (dims == 1) {
      map.densities += axis_mass[0];
    } else {
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> grid(
          map.densities.data(), j[0], j[1]);
      grid += axis_mass[0] * axis_mass[1].transpose();
    }
    ++map.count;
  }

  map.normalizer = static_cast<Scalar>(map.count);
  map.densities /= map.normalizer;
  return map;
}

LabelDensityMap build_reference_map(const Eigen::Ref<const Matrix>& labels, const GridSpec& spec) {
  if (labels.rows() == 0) throw DataError("cannot build a reference map from empty labels");
  const int dims = spec.dims();
  if (labels.cols() < dims) throw ShapeError("labels have fewer dimensions than the grid");
  const Eigen::VectorXi j = spec.cells();

  LabelDensityMap map;
  map.spec = spec;
  map.densities = Vector::Zero(spec.total_cells());
  for (Index i = 0; i < labels.rows(); ++i) {
    Index flat = 0;
    bool inside = true;
    for (int d = 0; d < dims && inside; ++d) {
      const auto cell = static_cast<Index>(std::floor((labels(i, d) - spec.y0[d]) / spec.g[d]));
      if (cell < 0 || cell >= j[d]) inside = false;
      flat = flat * j[d] + cell;
    }
    if (inside) map.densities[flat] += 1.0;
    ++map.count;
  }
  map.normalizer = static_cast<Scalar>(map.count);
  map.densities /= map.normalizer;
  return map;
}

Scalar map_mae(const LabelDensityMap& estimated, const LabelDensityMap& reference) {
  check_spec_match(estimated.spec, reference.spec);
  const Scalar volume = estimated.spec.cell_volume();
  return (estimated.densities - reference.densities).cwiseAbs().mean() / volume;
}

GridSpec default_grid_spec(const std::vector<UncertainPrediction>& confident,
                           const ErrorModel& error_model, int cells_per_dim) {
  if (confident.empty()) throw DataError("cannot derive a grid from an empty confident set");
  if (cells_per_dim < 1) throw ConfigError("grids need at least one cell per dimension");
  const auto dims = confident.front().prediction.size();
  Vector lo(dims), hi(dims);
  for (Index d = 0; d < dims; ++d) {
    Scalar mn = confident.front().prediction[d];
    Scalar mx = mn;
    Scalar max_sigma = 0;
    for (const UncertainPrediction& p : confident) {
      mn = std::min(mn, p.prediction[d]);
      mx = std::max(mx, p.prediction[d]);
      max_sigma = std::max(max_sigma, sigma_of(error_model, d, p.uncertainty[d]));
    }
    lo[d] = mn - 3 * max_sigma;
    hi[d] = mx + 3 * max_sigma;
  }
  Vector g = (hi - lo) / static_cast<Scalar>(cells_per_dim);
  return make_grid_spec(lo, hi, g);
}

void write_map_csv(const LabelDensityMap& map, std::ostream& out) {
  const int dims = map.spec.dims();
  auto joined = [dims](const Vector& v) {
    std::string s;
    for (Index d = 0; d < dims; ++d) {
      if (d) s += ';';
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", v[d]);
      s += buf;
    }
    return s;
  };
  out << "dims,y0,ym,g,K\n"
      << dims << ',' << joined(map.spec.y0) << ',' << joined(map.spec.ym) << ','
      << joined(map.spec.g) << ',' << map.count << '\n';
  const Eigen::VectorXi j = map.spec.cells();
  char buf[32];
  if (dims == 1) {
    out << "index,density\n";
    for (Index i = 0; i < map.densities.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", map.densities[i]);
      out << i << ',' << buf << '\n';
    }
  } else {
    out << "index0,index1,density\n";
    for (Index i0 = 0; i0 < j[0]; ++i0) {
      for (Index i1 = 0; i1 < j[1]; ++i1) {
        std::snprintf(buf, sizeof buf, "%.17g", map.densities[i0 * j[1] + i1]);
        out << i0 << ',' << i1 << ',' << buf << '\n';
      }
    }
  }
}

}  // namespace tasfar
