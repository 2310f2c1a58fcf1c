#include <doctest.h>

#include <random>
#include <sstream>

#include "tasfar/pseudolabel.hpp"

using namespace tasfar;

namespace {

UncertainPrediction make_pred(Scalar prediction, Scalar uncertainty, Index index = -1) {
  UncertainPrediction p;
  p.prediction = Vector::Constant(1, prediction);
  p.uncertainty = Vector::Constant(1, uncertainty);
  p.input_index = index;
  return p;
}

ErrorModel identity_error_model(Index dims = 1) {
  ErrorModel em;
  em.a0 = Vector::Zero(dims);
  em.a1 = Vector::Ones(dims);
  em.segments = 2;
  return em;
}

LabelDensityMap uniform_map(Scalar y0, Scalar ym, int cells) {
  LabelDensityMap map;
  map.spec = make_grid_spec(Vector::Constant(1, y0), Vector::Constant(1, ym),
                            Vector::Constant(1, (ym - y0) / cells));
  map.densities = Vector::Constant(cells, 1.0 / cells);
  map.count = 1;
  map.normalizer = 1;
  return map;
}

}  // namespace

TEST_CASE("posterior_cell_probs: constant prior factors out") {
  const LabelDensityMap map = uniform_map(-5.0, 5.0, 100);
  const Vector pred = Vector::Constant(1, 0.7);
  const Vector sigma = Vector::Constant(1, 0.4);
  const WindowPosterior wp = posterior_cell_probs(map, pred, sigma);
  REQUIRE(!wp.cells.empty());
  for (std::size_t k = 0; k < wp.cells.size(); ++k) {
    const Index cell = wp.cells[k];
    CHECK(std::abs(map.spec.cell_center(0, cell) - 0.7) < 3 * 0.4);
    const Scalar mass = cell_mass(0.7, 0.4, map.spec.cell_low(0, cell), map.spec.cell_high(0, cell));
    CHECK(wp.probs[static_cast<Index>(k)] == doctest::Approx(mass * 0.01).epsilon(1e-12));
  }
}

TEST_CASE("posterior_cell_probs: single nonzero prior cell dominates") {
  LabelDensityMap map = uniform_map(0.0, 10.0, 10);
  map.densities.setZero();
  map.densities[4] = 1.0;  // cell [4,5)
  const WindowPosterior wp =
      posterior_cell_probs(map, Vector::Constant(1, 5.0), Vector::Constant(1, 1.0));
  int nonzero = 0;
  for (Index k = 0; k < wp.probs.size(); ++k) {
    if (wp.probs[k] > 0) ++nonzero;
  }
  CHECK(nonzero == 1);
}

TEST_CASE("posterior_cell_probs: hand-multiplied five-cell window") {
  LabelDensityMap map;
  map.spec = make_grid_spec(Vector::Constant(1, 0.0), Vector::Constant(1, 5.0),
                            Vector::Constant(1, 1.0));
  map.densities = (Vector(5) << 0.0, 0.1, 0.4, 0.1, 0.0).finished();
  map.count = 1;
  map.normalizer = 1;
  const Vector pred = Vector::Constant(1, 2.5);
  const Vector sigma = Vector::Constant(1, 1.0);  // window: centers within (−0.5, 5.5) -> all 5
  const WindowPosterior wp = posterior_cell_probs(map, pred, sigma);
  REQUIRE(wp.cells.size() == 5);
  for (Index k = 0; k < 5; ++k) {
    const Scalar mass = cell_mass(2.5, 1.0, static_cast<Scalar>(k), static_cast<Scalar>(k + 1));
    CHECK(wp.probs[k] == doctest::Approx(mass * map.densities[k]).epsilon(1e-12));
  }
  CHECK(wp.local_mean_density == doctest::Approx(map.densities.mean()));

  // empty window: prediction far outside the grid with a tiny sigma
  const WindowPosterior none =
      posterior_cell_probs(map, Vector::Constant(1, 50.0), Vector::Constant(1, 0.1));
  CHECK(none.cells.empty());
}

TEST_CASE("generate: symmetric uniform window returns the prediction") {
  const LabelDensityMap map = uniform_map(-10.0, 10.0, 400);
  const ErrorModel em = identity_error_model();
  const ConfidenceThreshold thr{Vector::Constant(1, 0.2), 0.9};
  // prediction on a cell center so the 3-sigma window is exactly symmetric
  const Scalar center = map.spec.cell_center(0, 200);
  const UncertainPrediction pred = make_pred(center, 0.5);
  const PseudoLabel label = generate(map, pred, em, thr);
  CHECK(label.value[0] == doctest::Approx(center).epsilon(1e-9));
  CHECK(label.fallback == false);
  // uniform prior: local/global density ratio is 1, so beta = u/tau
  CHECK(label.credibility == doctest::Approx(0.5 / 0.2).epsilon(1e-9));
}

TEST_CASE("generate: point-mass posterior lands on the cell center") {
  LabelDensityMap map = uniform_map(0.0, 10.0, 10);
  map.densities.setZero();
  map.densities[6] = 1.0;
  const ErrorModel em = identity_error_model();
  const ConfidenceThreshold thr{Vector::Constant(1, 0.3), 0.9};
  const PseudoLabel label = generate(map, make_pred(5.0, 1.0), em, thr);
  CHECK(label.value[0] == doctest::Approx(map.spec.cell_center(0, 6)).epsilon(1e-12));
}

TEST_CASE("generate: credibility follows the density ratio times u over tau") {
  // u = 2 tau and local mean density = 2 x global mean -> beta = 4
  LabelDensityMap map;
  map.spec = make_grid_spec(Vector::Constant(1, 0.0), Vector::Constant(1, 8.0),
                            Vector::Constant(1, 1.0));
  // global mean 0.125; window must average 0.25
  map.densities = (Vector(8) << 0.0, 0.0, 0.25, 0.25, 0.25, 0.25, 0.0, 0.0).finished();
  map.count = 1;
  map.normalizer = 1;
  const ErrorModel em = identity_error_model();
  const ConfidenceThreshold thr{Vector::Constant(1, 0.35), 0.9};
  // sigma = u = 0.7: window half-width 2.1 around 4.0 -> centers 2.5..5.5 (cells 2..5)
  const PseudoLabel label = generate(map, make_pred(4.0, 0.7), em, thr);
  CHECK(label.locality_cells == 4);
  CHECK(label.credibility == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("generate: empty window falls back to the prediction with zero weight") {
  const LabelDensityMap map = uniform_map(0.0, 1.0, 10);
  ErrorModel em = identity_error_model();
  em.a1[0] = 0.0;
  em.a0[0] = 0.01;  // sigma pinned to 0.01
  const ConfidenceThreshold thr{Vector::Constant(1, 0.1), 0.9};
  const PseudoLabel label = generate(map, make_pred(25.0, 0.5, 3), em, thr);
  CHECK(label.fallback);
  CHECK(label.credibility == 0.0);
  CHECK(label.value[0] == 25.0);
  CHECK(label.source_index == 3);
}

TEST_CASE("generate: empty map and non-finite inputs raise") {
  LabelDensityMap map = uniform_map(0.0, 1.0, 4);
  map.densities.setZero();
  const ErrorModel em = identity_error_model();
  const ConfidenceThreshold thr{Vector::Constant(1, 0.1), 0.9};
  CHECK_THROWS_AS(generate(map, make_pred(0.5, 0.2), em, thr), DataError);

  const LabelDensityMap ok = uniform_map(0.0, 1.0, 4);
  UncertainPrediction bad = make_pred(std::numeric_limits<Scalar>::quiet_NaN(), 0.2);
  CHECK_THROWS_AS(generate(ok, bad, em, thr), NumericError);
}

TEST_CASE("generate: interpolation containment") {
  Rng rng(77);
  std::uniform_real_distribution<Scalar> mu_d(-3.0, 3.0), sig_d(0.05, 1.5), dens(0.0, 1.0);
  const ErrorModel em = identity_error_model();
  const ConfidenceThreshold thr{Vector::Constant(1, 0.2), 0.9};
  for (int trial = 0; trial < 100; ++trial) {
    LabelDensityMap map;
    map.spec = make_grid_spec(Vector::Constant(1, -2.0), Vector::Constant(1, 2.0),
                              Vector::Constant(1, 0.25));
    map.densities.resize(16);
    for (Index j = 0; j < 16; ++j) map.densities[j] = dens(rng);
    map.densities /= map.densities.sum();
    map.count = 1;
    map.normalizer = 1;

    const UncertainPrediction pred = make_pred(mu_d(rng), sig_d(rng));
    const PseudoLabel label = generate(map, pred, em, thr);
    if (label.fallback) {
      CHECK(label.value[0] == pred.prediction[0]);
      continue;
    }
    Scalar lo = 2.0, hi = -2.0;
    for (Index j = 0; j < 16; ++j) {
      const Scalar c = map.spec.cell_center(0, j);
      if (std::abs(c - pred.prediction[0]) < 3 * sigma_of(em, 0, pred.uncertainty[0])) {
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
    }
    CHECK(label.value[0] >= lo - 1e-12);
    CHECK(label.value[0] <= hi + 1e-12);
  }
}

TEST_CASE("generate: prior neutrality keeps the pseudo-label near the prediction") {
  // any strictly positive constant map: value within half a grid cell
  const LabelDensityMap map = uniform_map(-4.0, 4.0, 160);
  const ErrorModel em = identity_error_model();
  const ConfidenceThreshold thr{Vector::Constant(1, 0.2), 0.9};
  Rng rng(31);
  std::uniform_real_distribution<Scalar> mu_d(-2.0, 2.0), sig_d(0.1, 0.9);
  for (int i = 0; i < 50; ++i) {
    const UncertainPrediction pred = make_pred(mu_d(rng), sig_d(rng));
    const PseudoLabel label = generate(map, pred, em, thr);
    CHECK(std::abs(label.value[0] - pred.prediction[0]) <= 0.5 * map.spec.g[0] + 1e-12);
  }
}

TEST_CASE("generate: credibility is monotone in u and local density") {
  LabelDensityMap map = uniform_map(-4.0, 4.0, 80);
  const ErrorModel em = identity_error_model();
  const ConfidenceThreshold thr{Vector::Constant(1, 0.25), 0.9};
  Scalar prev = 0;
  for (Scalar u : {0.3, 0.5, 0.8, 1.2}) {
    const Scalar beta = generate(map, make_pred(0.0, u), em, thr).credibility;
    CHECK(beta > prev);
    prev = beta;
  }
  // raising density inside the window raises beta, all else fixed
  LabelDensityMap denser = map;
  for (Index j = 38; j < 42; ++j) denser.densities[j] *= 5.0;
  denser.densities /= denser.densities.sum();
  const Scalar base = generate(map, make_pred(0.0, 0.5), em, thr).credibility;
  const Scalar boosted = generate(denser, make_pred(0.0, 0.5), em, thr).credibility;
  CHECK(boosted > base);
}

TEST_CASE("generate on a joint 2-D map") {
  // uniform joint map: symmetric windows return the prediction and
  // beta = mean of per-dimension u/tau
  LabelDensityMap map;
  map.spec = make_grid_spec((Vector(2) << -4, -4).finished(), (Vector(2) << 4, 4).finished(),
                            (Vector(2) << 0.05, 0.05).finished());
  map.densities = Vector::Constant(map.spec.total_cells(), 1.0 / map.spec.total_cells());
  map.count = 1;
  map.normalizer = 1;

  const ErrorModel em = identity_error_model(2);
  const ConfidenceThreshold thr{(Vector(2) << 0.2, 0.4).finished(), 0.9};
  UncertainPrediction pred;
  pred.prediction = (Vector(2) << map.spec.cell_center(0, 80), map.spec.cell_center(1, 70)).finished();
  pred.uncertainty = (Vector(2) << 0.5, 0.6).finished();

  const PseudoLabel label = generate(map, pred, em, thr);
  CHECK(label.fallback == false);
  CHECK(label.value[0] == doctest::Approx(pred.prediction[0]).epsilon(1e-9));
  CHECK(label.value[1] == doctest::Approx(pred.prediction[1]).epsilon(1e-9));
  CHECK(label.credibility ==
        doctest::Approx(0.5 * (0.5 / 0.2 + 0.6 / 0.4)).epsilon(1e-9));

  // concentrated prior pulls both components toward the dense block
  LabelDensityMap lump = map;
  lump.densities.setZero();
  const Eigen::VectorXi j = map.spec.cells();
  for (Index a = 90; a < 95; ++a) {
    for (Index b = 60; b < 65; ++b) lump.densities[a * j[1] + b] = 1.0;
  }
  lump.densities /= lump.densities.sum();
  const PseudoLabel pulled = generate(lump, pred, em, thr);
  CHECK(pulled.value[0] > pred.prediction[0]);
  CHECK(pulled.value[1] < pred.prediction[1]);
}

TEST_CASE("generate_all: vacuous, singleton composition, failure records") {
  const LabelDensityMap map = uniform_map(-2.0, 2.0, 40);
  const ErrorModel em = identity_error_model();
  const ConfidenceThreshold thr{Vector::Constant(1, 0.2), 0.9};

  const PseudoLabelBatch empty = generate_all(map, {}, em, thr);
  CHECK(empty.labels.empty());

  const UncertainPrediction one = make_pred(0.4, 0.5, 9);
  const PseudoLabelBatch single = generate_all(map, {one}, em, thr);
  REQUIRE(single.labels.size() == 1);
  const PseudoLabel direct = generate(map, one, em, thr);
  CHECK(single.labels[0].value[0] == direct.value[0]);
  CHECK(single.labels[0].credibility == direct.credibility);

  // a non-finite item degrades to fallback and is recorded; the batch survives
  std::vector<UncertainPrediction> mixed = {
      one, make_pred(std::numeric_limits<Scalar>::infinity(), 0.4, 10), make_pred(-0.3, 0.6, 11)};
  const PseudoLabelBatch batch = generate_all(map, mixed, em, thr);
  REQUIRE(batch.labels.size() == 3);
  REQUIRE(batch.failures.size() == 1);
  CHECK(batch.failures[0].index == 1);
  CHECK(batch.labels[1].credibility == 0.0);
  CHECK(batch.labels[2].fallback == false);
  CHECK(batch.beta_quantiles.size() == 5);
}

TEST_CASE("pseudo-label CSV export") {
  const LabelDensityMap map = uniform_map(-2.0, 2.0, 40);
  const ErrorModel em = identity_error_model();
  const ConfidenceThreshold thr{Vector::Constant(1, 0.2), 0.9};
  const PseudoLabelBatch batch =
      generate_all(map, {make_pred(0.4, 0.5, 0), make_pred(1.0, 0.3, 1)}, em, thr);
  std::ostringstream out;
  write_pseudo_labels_csv(batch, out);
  const std::string text = out.str();
  CHECK(text.find("source_index,value_0,credibility,window_cells,fallback") == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}
