#ifndef TASFAR_TESTS_FIXTURES_HPP
#define TASFAR_TESTS_FIXTURES_HPP

// Shared synthetic setups for the pipeline tests and the acceptance suite.

#include <utility>

#include "tasfar/dataio.hpp"
#include "tasfar/pipeline.hpp"
#include "tasfar/regressor.hpp"

namespace fixtures {

using namespace tasfar;

// Saturation scenario: the response ramps along t = w.x and turns downward
// past the knee; source inputs are capped below the knee, so the source
// model extrapolates the ramp upward where the truth descends back into the
// target's concentrated label mode. Half the target stays in-support so the
// confident set can carry the mode into the density map.
inline ScenarioSpec gap_scenario(std::uint64_t seed, long source_count = 6000,
                                 long target_count = 5000) {
  ScenarioSpec spec;
  spec.feature_dim = 3;
  spec.family = TrueFunction::Piecewise;
  spec.params = (Vector(6) << 0.96, -0.72, 0.48, 0.0, 1.8, -1.0).finished();
  SamplerComponent in_support;
  in_support.weight = 1.0;
  in_support.mean = Vector::Zero(3);
  in_support.scale = Vector::Ones(3);
  in_support.projection_cap = 1.8;
  spec.source_components = {in_support};
  SamplerComponent shifted;
  shifted.weight = 1.0;
  shifted.mean = (Vector(3) << 1.466, -1.099, 0.733).finished();
  shifted.scale = Vector::Constant(3, 0.5);
  spec.target_components = {in_support, shifted};
  spec.target_label_mode = {1.2, 0.25, 0.01};
  spec.noise_scale = 0.25;
  spec.source_count = source_count;
  spec.target_count = target_count;
  spec.seed = seed;
  return spec;
}

// Same-distribution control: target sampled exactly like the source, no
// label concentration.
inline ScenarioSpec no_gap_scenario(std::uint64_t seed, long source_count = 6000,
                                    long target_count = 5000) {
  ScenarioSpec spec = gap_scenario(seed, source_count, target_count);
  spec.target_components = spec.source_components;
  spec.target_label_mode = {0.0, 0.0, 1.0};
  return spec;
}

struct TrainedScenario {
  Regressor model;
  Dataset source_train;
  Dataset calibration;
  Dataset target;
};

// Splits the source, trains the source model, and hands back everything the
// adaptation entry points need.
inline TrainedScenario train_source_model(const ScenarioSpec& spec, Scalar dropout = 0.2,
                                          int epochs = 200) {
  auto [source, target] = gen_scenario(spec);
  const Index n = source.rows();
  const Index n_train = n * 2 / 3;

  TrainedScenario out;
  out.target = std::move(target);
  out.source_train = source;
  out.source_train.features = source.features.topRows(n_train);
  out.source_train.labels = source.labels->topRows(n_train);
  out.calibration = source;
  out.calibration.features = source.features.bottomRows(n - n_train);
  out.calibration.labels = source.labels->bottomRows(n - n_train);

  Regressor model = init_regressor({spec.feature_dim, 64, 64, 1}, dropout, spec.seed);
  std::vector<TrainingBatch> batches;
  const Index batch_size = 32;
  for (Index start = 0; start < n_train; start += batch_size) {
    const Index size = std::min(batch_size, n_train - start);
    batches.push_back({out.source_train.features.middleRows(start, size),
                       out.source_train.labels->middleRows(start, size), Vector::Ones(size)});
  }
  Rng rng(spec.seed + 1);
  out.model = train(model, batches, 1e-3, epochs, rng).model;
  return out;
}

}  // namespace fixtures

#endif
