#ifndef TASFAR_DENSITY_HPP
#define TASFAR_DENSITY_HPP

#include <iosfwd>
#include <vector>

#include "tasfar/calibration.hpp"
#include "tasfar/regressor.hpp"
#include "tasfar/types.hpp"

namespace tasfar {

/// Instance-label distribution family used when accumulating and querying
/// the map. Both are parameterized by (mu, sigma) with sigma the standard
/// deviation.
enum class InstanceDistribution { Gaussian, Laplace };

/// Regular label grid over [y0, ym) per dimension with cell width g.
/// Cell j of dimension d spans [y0[d] + j*g[d], y0[d] + (j+1)*g[d]).
struct GridSpec {
  Vector y0;
  Vector ym;
  Vector g;

  int dims() const { return static_cast<int>(y0.size()); }
  Eigen::VectorXi cells() const;
  Index total_cells() const;
  Scalar cell_low(Index dim, Index j) const { return y0[dim] + static_cast<Scalar>(j) * g[dim]; }
  Scalar cell_high(Index dim, Index j) const { return y0[dim] + static_cast<Scalar>(j + 1) * g[dim]; }
  Scalar cell_center(Index dim, Index j) const { return y0[dim] + (static_cast<Scalar>(j) + 0.5) * g[dim]; }
  Scalar cell_volume() const { return g.prod(); }
};

GridSpec make_grid_spec(const Vector& y0, const Vector& ym, const Vector& g);

/// Normalized grid of label mass. densities is flat, row-major for 2-D
/// (index = j0 * J1 + j1); entries sum to at most 1, mass outside [y0, ym)
/// is dropped while the normalizer still counts every accumulated
/// prediction.
struct LabelDensityMap {
  GridSpec spec;
  Vector densities;
  Scalar normalizer = 0;   // divisor applied after accumulation (= count)
  long count = 0;          // accumulated confident predictions
  int out_of_range = 0;    // predictions further than 6 sigma outside the range
};

/// Mass of Normal(mu, sigma) over [cell_lo, cell_hi), via the error
/// function; branch selection keeps tail differences accurate.
Scalar cell_mass(Scalar mu, Scalar sigma, Scalar cell_lo, Scalar cell_hi);
Scalar cell_mass(Scalar mu, Scalar sigma, Scalar cell_lo, Scalar cell_hi,
                 InstanceDistribution distribution);

/// Accumulates each confident prediction's instance-label distribution into
/// the grid (per-dimension mass products for 2-D) and divides by the
/// confident count.
LabelDensityMap build_map(const std::vector<UncertainPrediction>& confident,
                          const ErrorModel& error_model, const GridSpec& spec,
                          InstanceDistribution distribution = InstanceDistribution::Gaussian);

/// Plain label histogram on the same grid, normalized by row count.
/// Diagnostic companion to build_map for data where labels exist.
LabelDensityMap build_reference_map(const Eigen::Ref<const Matrix>& labels, const GridSpec& spec);

/// Mean absolute difference of cell densities (mass / cell volume) between
/// two maps on the same grid.
Scalar map_mae(const LabelDensityMap& estimated, const LabelDensityMap& reference);

/// Range [min - 3*max_sigma, max + 3*max_sigma] over the confident
/// predictions, split into cells_per_dim cells per dimension.
GridSpec default_grid_spec(const std::vector<UncertainPrediction>& confident,
                           const ErrorModel& error_model, int cells_per_dim);

/// CSV export: metadata header (dims, y0, ym, g, K; per-dimension values
/// joined with ';'), then one row per cell.
void write_map_csv(const LabelDensityMap& map, std::ostream& out);

}  // namespace tasfar

#endif
