#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "tasfar/density.hpp"

using namespace tasfar;

namespace {

UncertainPrediction make_pred(Scalar prediction, Scalar uncertainty) {
  UncertainPrediction p;
  p.prediction = Vector::Constant(1, prediction);
  p.uncertainty = Vector::Constant(1, uncertainty);
  return p;
}

// sigma_of(identity) == u (clamped): a0 = 0, a1 = 1
ErrorModel identity_error_model(Index dims = 1) {
  ErrorModel em;
  em.a0 = Vector::Zero(dims);
  em.a1 = Vector::Ones(dims);
  em.segments = 2;
  return em;
}

GridSpec grid1(Scalar y0, Scalar ym, Scalar g) {
  return make_grid_spec(Vector::Constant(1, y0), Vector::Constant(1, ym), Vector::Constant(1, g));
}

}  // namespace

TEST_CASE("grid spec validation and cell arithmetic") {
  const GridSpec spec = grid1(-2.0, 3.0, 0.5);
  CHECK(spec.cells()[0] == 10);
  CHECK(spec.total_cells() == 10);
  CHECK(spec.cell_low(0, 0) == -2.0);
  CHECK(spec.cell_center(0, 0) == doctest::Approx(-1.75));
  CHECK(spec.cell_high(0, 9) == doctest::Approx(3.0));

  CHECK_THROWS_AS(grid1(1.0, 1.0, 0.5), ConfigError);
  CHECK_THROWS_AS(grid1(0.0, 1.0, -0.5), ConfigError);
  CHECK_THROWS_AS(grid1(0.0, 1.0, 2.0), ConfigError);
  CHECK_THROWS_AS(make_grid_spec(Vector::Zero(3), Vector::Ones(3), Vector::Ones(3)), ConfigError);
}

TEST_CASE("cell_mass: one-sigma interval, empty interval, quadrature oracle") {
  CHECK(cell_mass(0.0, 1.0, -1.0, 1.0) == doctest::Approx(0.6826894921370859).epsilon(1e-9));
  CHECK(std::abs(cell_mass(0.0, 1.0, -1.0, 1.0) - 0.682689) < 1e-6);
  CHECK(cell_mass(3.0, 0.7, 3.0, 3.0) == 0.0);
  CHECK_THROWS_AS(cell_mass(0.0, 0.0, -1.0, 1.0), DataError);
  CHECK_THROWS_AS(cell_mass(0.0, -1.0, -1.0, 1.0), DataError);

  CHECK(cell_mass(0.5, 0.2, 0.4, 0.6) ==
        doctest::Approx(oracles::gaussian_cell_mass_quadrature(0.5, 0.2, 0.4, 0.6)).epsilon(1e-9));

  Rng rng(314);
  std::uniform_real_distribution<Scalar> mu_d(-5, 5), sig_d(0.05, 3.0), width_d(0.01, 4.0);
  for (int i = 0; i < 200; ++i) {
    const Scalar mu = mu_d(rng), sigma = sig_d(rng);
    const Scalar lo = mu_d(rng), hi = lo + width_d(rng);
    const Scalar expected = oracles::gaussian_cell_mass_quadrature(mu, sigma, lo, hi);
    CHECK(std::abs(cell_mass(mu, sigma, lo, hi) - expected) < 1e-9);
  }
}

TEST_CASE("cell_mass: Laplace alternative integrates to one") {
  Scalar total = 0;
  for (int j = -400; j < 400; ++j) {
    total += cell_mass(0.3, 0.8, 0.05 * j, 0.05 * (j + 1), InstanceDistribution::Laplace);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  // matching standard deviation: the +-1 sigma mass differs from the Gaussian's
  const Scalar laplace_1sig = cell_mass(0.0, 1.0, -1.0, 1.0, InstanceDistribution::Laplace);
  CHECK(laplace_1sig == doctest::Approx(1.0 - std::exp(-std::sqrt(2.0))).epsilon(1e-12));
}

TEST_CASE("build_map: total mass, duplication invariance, hand-computed cells") {
  const ErrorModel em = identity_error_model();

  // one prediction centered in a single cell spanning +-8 sigma
  const GridSpec wide = grid1(-8.0, 8.0, 16.0);
  const LabelDensityMap one = build_map({make_pred(0.0, 1.0)}, em, wide);
  CHECK(one.densities[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(one.count == 1);

  // duplication leaves normalized densities unchanged
  const GridSpec spec = grid1(-3.0, 3.0, 0.5);
  const std::vector<UncertainPrediction> once = {make_pred(0.3, 0.4), make_pred(-1.0, 0.7)};
  std::vector<UncertainPrediction> twice = once;
  twice.insert(twice.end(), once.begin(), once.end());
  const LabelDensityMap m1 = build_map(once, em, spec);
  const LabelDensityMap m2 = build_map(twice, em, spec);
  CHECK((m1.densities - m2.densities).cwiseAbs().maxCoeff() < 1e-15);

  // three hand-chosen predictions on a 5-cell grid: mean of cell_mass values
  const GridSpec five = grid1(0.0, 5.0, 1.0);
  const std::vector<UncertainPrediction> preds = {make_pred(1.2, 0.5), make_pred(2.8, 0.3),
                                                  make_pred(3.9, 1.1)};
  const LabelDensityMap m3 = build_map(preds, em, five);
  for (int j = 0; j < 5; ++j) {
    Scalar expected = 0;
    for (const auto& p : preds) {
      expected += cell_mass(p.prediction[0], p.uncertainty[0], five.cell_low(0, j),
                            five.cell_high(0, j));
    }
    expected /= 3.0;
    CHECK(m3.densities[j] == doctest::Approx(expected).epsilon(1e-12));
  }

  CHECK_THROWS_AS(build_map({}, em, spec), DataError);
}

TEST_CASE("build_map: mass conservation against the cumulative telescoping") {
  const ErrorModel em = identity_error_model();
  const GridSpec spec = grid1(-1.0, 2.0, 0.03);
  Rng rng(8);
  std::uniform_real_distribution<Scalar> mu_d(-1.5, 2.5), sig_d(0.1, 0.8);
  for (int i = 0; i < 50; ++i) {
    const Scalar mu = mu_d(rng), sigma = sig_d(rng);
    const LabelDensityMap map = build_map({make_pred(mu, sigma)}, em, spec);
    const Scalar expected = cell_mass(mu, sigma, -1.0, spec.cell_high(0, spec.cells()[0] - 1));
    CHECK(std::abs(map.densities.sum() - expected) < 1e-9);
  }
}

TEST_CASE("build_map: permutation invariance and out-of-range accounting") {
  const ErrorModel em = identity_error_model();
  const GridSpec spec = grid1(-2.0, 2.0, 0.1);
  Rng rng(21);
  std::uniform_real_distribution<Scalar> mu_d(-2.0, 2.0), sig_d(0.1, 0.5);
  std::vector<UncertainPrediction> preds;
  for (int i = 0; i < 40; ++i) preds.push_back(make_pred(mu_d(rng), sig_d(rng)));
  const LabelDensityMap a = build_map(preds, em, spec);
  std::shuffle(preds.begin(), preds.end(), rng);
  const LabelDensityMap b = build_map(preds, em, spec);
  CHECK((a.densities - b.densities).cwiseAbs().maxCoeff() < 1e-9);

  // a prediction far outside [y0 - 6 sigma, ym + 6 sigma] is counted but kept
  preds.push_back(make_pred(50.0, 0.2));
  const LabelDensityMap c = build_map(preds, em, spec);
  CHECK(c.out_of_range == 1);
  CHECK(c.count == 41);
}

TEST_CASE("build_map: grid refinement consistency") {
  const ErrorModel em = identity_error_model();
  Rng rng(31);
  std::uniform_real_distribution<Scalar> mu_d(-1.0, 1.0), sig_d(0.2, 0.6);
  std::vector<UncertainPrediction> preds;
  for (int i = 0; i < 25; ++i) preds.push_back(make_pred(mu_d(rng), sig_d(rng)));

  const LabelDensityMap coarse = build_map(preds, em, grid1(-2.0, 2.0, 0.2));
  const LabelDensityMap fine = build_map(preds, em, grid1(-2.0, 2.0, 0.1));
  for (Index j = 0; j < coarse.densities.size(); ++j) {
    const Scalar paired = fine.densities[2 * j] + fine.densities[2 * j + 1];
    CHECK(std::abs(paired - coarse.densities[j]) < 1e-9);
  }
}

TEST_CASE("2-D maps use per-dimension mass products") {
  ErrorModel em = identity_error_model(2);
  UncertainPrediction p;
  p.prediction = (Vector(2) << 0.5, -0.5).finished();
  p.uncertainty = (Vector(2) << 0.3, 0.4).finished();
  const GridSpec spec = make_grid_spec((Vector(2) << -2, -2).finished(),
                                       (Vector(2) << 2, 2).finished(),
                                       (Vector(2) << 0.5, 1.0).finished());
  const LabelDensityMap map = build_map({p}, em, spec);
  const Eigen::VectorXi j = spec.cells();
  REQUIRE(map.densities.size() == j[0] * j[1]);
  for (Index a = 0; a < j[0]; ++a) {
    for (Index b = 0; b < j[1]; ++b) {
      const Scalar expected =
          cell_mass(0.5, 0.3, spec.cell_low(0, a), spec.cell_high(0, a)) *
          cell_mass(-0.5, 0.4, spec.cell_low(1, b), spec.cell_high(1, b));
      CHECK(map.densities[a * j[1] + b] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("build_reference_map: point mass, uniform, binomial oracle") {
  const GridSpec spec = grid1(0.0, 4.0, 1.0);
  Matrix one_cell = Matrix::Constant(7, 1, 2.5);
  const LabelDensityMap point = build_reference_map(one_cell, spec);
  CHECK(point.densities[2] == doctest::Approx(1.0));
  CHECK(point.densities.sum() == doctest::Approx(1.0));

  Matrix uniform(8, 1);
  uniform << 0.5, 1.5, 2.5, 3.5, 0.5, 1.5, 2.5, 3.5;
  const LabelDensityMap flat = build_reference_map(uniform, spec);
  for (Index j = 0; j < 4; ++j) CHECK(flat.densities[j] == doctest::Approx(0.25));

  CHECK_THROWS_AS(build_reference_map(Matrix(0, 1), spec), DataError);

  // Normal(0,1) labels on [-4,4], g = 0.5: within 3 binomial standard errors
  Rng rng(99);
  std::normal_distribution<Scalar> normal(0, 1);
  const int n = 1000;
  Matrix labels(n, 1);
  for (Index i = 0; i < n; ++i) labels(i, 0) = normal(rng);
  const GridSpec wide = grid1(-4.0, 4.0, 0.5);
  const LabelDensityMap hist = build_reference_map(labels, wide);
  for (Index j = 0; j < wide.cells()[0]; ++j) {
    const Scalar p = cell_mass(0.0, 1.0, wide.cell_low(0, j), wide.cell_high(0, j));
    const Scalar se = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(hist.densities[j] - p) <= 3 * se + 1e-12);
  }
}

TEST_CASE("map_mae: identity, maximal disagreement, monotone in grid size") {
  const GridSpec two = grid1(0.0, 2.0, 1.0);
  LabelDensityMap a, b;
  a.spec = b.spec = two;
  a.densities = (Vector(2) << 1.0, 0.0).finished();
  b.densities = (Vector(2) << 0.0, 1.0).finished();
  a.count = b.count = 1;
  CHECK(map_mae(a, a) == 0.0);
  CHECK(map_mae(a, b) == doctest::Approx(1.0));

  LabelDensityMap other;
  other.spec = grid1(0.0, 2.0, 0.5);
  other.densities = Vector::Zero(4);
  CHECK_THROWS_AS(map_mae(a, other), ShapeError);

  // estimated-vs-reference error falls as the grid becomes coarser
  Rng rng(55);
  std::normal_distribution<Scalar> normal(0, 1);
  const int n = 2000;
  const Scalar err_sigma = 0.35;
  Matrix labels(n, 1);
  std::vector<UncertainPrediction> preds;
  for (Index i = 0; i < n; ++i) {
    labels(i, 0) = normal(rng);
    preds.push_back(make_pred(labels(i, 0) + err_sigma * normal(rng), err_sigma));
  }
  const ErrorModel em = identity_error_model();
  Scalar prev = -1;
  const Scalar range = 8.0;
  for (int cells : {200, 100, 50, 20}) {
    const GridSpec spec = grid1(-4.0, 4.0, range / cells);
    const Scalar mae = map_mae(build_map(preds, em, spec), build_reference_map(labels, spec));
    if (prev >= 0) CHECK(mae < prev);
    prev = mae;
  }
}

TEST_CASE("default_grid_spec covers predictions plus three sigma") {
  const ErrorModel em = identity_error_model();
  const std::vector<UncertainPrediction> preds = {make_pred(0.0, 0.5), make_pred(2.0, 0.2)};
  const GridSpec spec = default_grid_spec(preds, em, 100);
  CHECK(spec.y0[0] == doctest::Approx(-1.5));
  CHECK(spec.ym[0] == doctest::Approx(3.5));
  CHECK(spec.cells()[0] == 100);
}

TEST_CASE("map CSV export carries the header and one row per cell") {
  const ErrorModel em = identity_error_model();
  const LabelDensityMap map = build_map({make_pred(0.5, 0.5)}, em, grid1(0.0, 2.0, 0.5));
  std::ostringstream out;
  write_map_csv(map, out);
  const std::string text = out.str();
  CHECK(text.find("dims,y0,ym,g,K") == 0);
  CHECK(text.find("index,density") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3 + 4);
}
