#ifndef TASFAR_REGRESSOR_HPP
#define TASFAR_REGRESSOR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "tasfar/types.hpp"

namespace tasfar {

enum class Activation { Rectifier = 0, Tanh = 1 };

/// Feed-forward regressor with per-hidden-layer dropout.
///
/// Immutable by convention: training returns a new model. weights[l] has
/// shape layer_sizes[l+1] x layer_sizes[l]; dropout applies after each
/// hidden activation only (inverted convention, surviving units scaled by
/// 1/(1-rate)), never on input or output.
struct Regressor {
  std::vector<int> layer_sizes;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Activation activation = Activation::Rectifier;
  Scalar dropout_rate = 0.0;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  Index layer_count() const { return static_cast<Index>(weights.size()); }
};

/// Model output with per-dimension MC-dropout uncertainty.
struct UncertainPrediction {
  Vector prediction;    // mean over sampling passes
  Vector uncertainty;   // sample standard deviation over passes
  Index input_index = -1;
};

/// One weighted training batch; rows of inputs/targets are examples.
struct TrainingBatch {
  Matrix inputs;
  Matrix targets;
  Vector weights;
};

enum class LossKind { SquaredError };

struct TrainResult {
  Regressor model;
  std::vector<Scalar> loss_history;  // mean weighted loss per epoch
};

struct LossGradient {
  Scalar loss = 0;                // batch objective, (1/n) sum_i w_i * l_i
  std::vector<Matrix> weight_gradients;
  std::vector<Vector> bias_gradients;
};

/// Seeded initialization: uniform weights in +-sqrt(6/(fan_in+fan_out)),
/// zero biases. Identical (layer_sizes, seed) give identical parameters.
Regressor init_regressor(const std::vector<int>& layer_sizes, Scalar dropout_rate,
                         std::uint64_t seed);

/// Single forward pass. With stochastic set, each hidden unit is zeroed
/// independently with probability dropout_rate and survivors are scaled by
/// 1/(1-dropout_rate); rng is untouched otherwise.
Vector forward(const Regressor& model, const Eigen::Ref<const Vector>& input,
               bool stochastic, Rng& rng);
Vector forward(const Regressor& model, const Eigen::Ref<const Vector>& input);

/// Deterministic forward over a batch (rows = examples).
Matrix forward_batch(const Regressor& model, const Eigen::Ref<const Matrix>& inputs);

/// MC-dropout prediction: mean and sample standard deviation over
/// `samplings` stochastic passes. samplings >= 2.
UncertainPrediction mc_predict(const Regressor& model, const Eigen::Ref<const Vector>& input,
                               int samplings, Rng& rng);
std::vector<UncertainPrediction> mc_predict_all(const Regressor& model,
                                                const Eigen::Ref<const Matrix>& inputs,
                                                int samplings, Rng& rng);

/// Gradient descent on sum_i weight_i * ||f(x_i) - y_i||^2 (per-batch mean),
/// dropout active. Returns the updated model; the input model is unchanged.
/// Throws NumericError naming the epoch on non-finite loss or gradient.
TrainResult train(const Regressor& model, const std::vector<TrainingBatch>& batches,
                  Scalar learning_rate, int epochs, Rng& rng,
                  LossKind loss = LossKind::SquaredError);

/// Deterministic (dropout-off) weighted loss and its analytic gradient for
/// one batch. Shares the backward path train() uses.
LossGradient weighted_loss_gradient(const Regressor& model, const TrainingBatch& batch);

/// Flat binary model file: magic "TASFAR-MODEL", version, layer sizes,
/// dropout rate, activation tag, then row-major little-endian f64 weight
/// matrices and bias vectors in layer order.
void save_model(const Regressor& model, const std::string& path);
Regressor load_model(const std::string& path);

}  // namespace tasfar

#endif
