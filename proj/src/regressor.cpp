#include "tasfar/regressor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <utility>

namespace tasfar {

namespace {

void check_architecture(const std::vector<int>& layer_sizes, Scalar dropout_rate) {
  if (layer_sizes.size() < 2) {
    throw ConfigError("regressor needs at least an input and an output layer");
  }
  for (int s : layer_sizes) {
    if (s <= 0) throw ConfigError("layer sizes must be positive");
  }
  if (dropout_rate < 0 || dropout_rate >= 1) {
    throw ConfigError("dropout rate must lie in [0, 1)");
  }
}

Matrix activate(const Regressor& model, const Matrix& z) {
  switch (model.activation) {
    case Activation::Tanh:
      return z.array().tanh().matrix();
    case Activation::Rectifier:
    default:
      return z.cwiseMax(0.0);
  }
}

// Derivative of the activation expressed through its pre-activation.
Matrix activate_grad(const Regressor& model, const Matrix& z) {
  switch (model.activation) {
    case Activation::Tanh:
      return (1.0 - z.array().tanh().square()).matrix();
    case Activation::Rectifier:
    default:
      return (z.array() > 0.0).cast<Scalar>().matrix();
  }
}

// Inverted-dropout mask: 0 with probability rate, 1/(1-rate) otherwise.
// Entry order is fixed (row-major) so identical rng states give identical masks.
Matrix dropout_mask(Index rows, Index cols, Scalar rate, Rng& rng) {
  Matrix mask(rows, cols);
  std::bernoulli_distribution drop(rate);
  const Scalar keep_scale = 1.0 / (1.0 - rate);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      mask(i, j) = drop(rng) ? 0.0 : keep_scale;
    }
  }
  return mask;
}

struct ForwardTrace {
  std::vector<Matrix> activations;  // activations[0] = inputs, post-dropout
  std::vector<Matrix> pre;          // pre-activation per layer
};

ForwardTrace forward_trace(const Regressor& model, const Eigen::Ref<const Matrix>& inputs,
                           const std::vector<Matrix>* masks) {
  ForwardTrace trace;
  const Index layers = model.layer_count();
  trace.activations.reserve(layers + 1);
  trace.pre.reserve(layers);
  trace.activations.push_back(inputs);
  for (Index l = 0; l < layers; ++l) {
    Matrix z = trace.activations.back() * model.weights[l].transpose();
    z.rowwise() += model.biases[l].transpose();
    trace.pre.push_back(z);
    if (l + 1 < layers) {
      Matrix a = activate(model, z);
      if (masks) a = a.cwiseProduct((*masks)[l]);
      trace.activations.push_back(std::move(a));
    } else {
      trace.activations.push_back(std::move(z));
    }
  }
  return trace;
}

// Weighted squared-error objective (1/n) sum_i w_i ||f(x_i) - y_i||^2 and
// its gradients; `masks` null means dropout off.
LossGradient loss_and_gradient(const Regressor& model, const TrainingBatch& batch,
                               const std::vector<Matrix>* masks) {
  const Index n = batch.inputs.rows();
  ForwardTrace trace = forward_trace(model, batch.inputs, masks);
  const Matrix residual = trace.activations.back() - batch.targets;

  LossGradient out;
  out.loss = (residual.array().square().rowwise().sum() * batch.weights.array()).sum() /
             static_cast<Scalar>(n);
  out.weight_gradients.resize(model.weights.size());
  out.bias_gradients.resize(model.biases.size());

  Matrix grad =
      (2.0 / static_cast<Scalar>(n)) * (residual.array().colwise() * batch.weights.array());
  for (Index l = model.layer_count() - 1; l >= 0; --l) {
    out.weight_gradients[l] = grad.transpose() * trace.activations[l];
    out.bias_gradients[l] = grad.colwise().sum().transpose();
    if (l > 0) {
      grad = grad * model.weights[l];
      if (masks) grad = grad.cwiseProduct((*masks)[l - 1]);
      grad = grad.cwiseProduct(activate_grad(model, trace.pre[l - 1]));
    }
  }
  return out;
}

void check_batch(const Regressor& model, const TrainingBatch& batch) {
  if (batch.inputs.cols() != model.input_dim()) {
    throw ShapeError("batch input width does not match the model input dimension");
  }
  if (batch.targets.cols() != model.output_dim()) {
    throw ShapeError("batch target width does not match the model output dimension");
  }
  if (batch.inputs.rows() != batch.targets.rows() ||
      batch.inputs.rows() != batch.weights.size()) {
    throw ShapeError("batch inputs, targets and weights disagree on row count");
  }
  if ((batch.weights.array() < 0).any()) {
    throw ConfigError("example weights must be non-negative");
  }
}

bool all_finite(const LossGradient& g) {
  if (!std::isfinite(g.loss)) return false;
  for (const Matrix& m : g.weight_gradients) {
    if (!m.allFinite()) return false;
  }
  for (const Vector& v : g.bias_gradients) {
    if (!v.allFinite()) return false;
  }
  return true;
}

// ---- little-endian binary helpers for the model file ----

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, Scalar v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

Scalar get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  Scalar v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

constexpr char kModelMagic[] = "TASFAR-MODEL";
constexpr std::uint32_t kModelVersion = 1;

}  // namespace

Regressor init_regressor(const std::vector<int>& layer_sizes, Scalar dropout_rate,
                         std::uint64_t seed) {
  check_architecture(layer_sizes, dropout_rate);
  Regressor model;
  model.layer_sizes = layer_sizes;
  model.dropout_rate = dropout_rate;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    const Scalar limit = std::sqrt(6.0 / static_cast<Scalar>(fan_in + fan_out));
    std::uniform_real_distribution<Scalar> uniform(-limit, limit);
    Matrix w(fan_out, fan_in);
    for (Index i = 0; i < w.rows(); ++i) {
      for (Index j = 0; j < w.cols(); ++j) w(i, j) = uniform(rng);
    }
    model.weights.push_back(std::move(w));
    model.biases.emplace_back(Vector::Zero(fan_out));
  }
  return model;
}

Vector forward(const Regressor& model, const Eigen::Ref<const Vector>& input,
               bool stochastic, Rng& rng) {
  if (input.size() != model.input_dim()) {
    throw ShapeError("input length does not match the model input dimension");
  }
  const Index layers = model.layer_count();
  Matrix a = input.transpose();
  for (Index l = 0; l < layers; ++l) {
    Matrix z = a * model.weights[l].transpose();
    z.rowwise() += model.biases[l].transpose();
    if (l + 1 < layers) {
      a = activate(model, z);
      if (stochastic && model.dropout_rate > 0) {
        a = a.cwiseProduct(dropout_mask(a.rows(), a.cols(), model.dropout_rate, rng));
      }
    } else {
      a = std::move(z);
    }
  }
  return a.row(0).transpose();
}

Vector forward(const Regressor& model, const Eigen::Ref<const Vector>& input) {
  Rng unused(0);
  return forward(model, input, false, unused);
}

Matrix forward_batch(const Regressor& model, const Eigen::Ref<const Matrix>& inputs) {
  if (inputs.cols() != model.input_dim()) {
    throw ShapeError("input width does not match the model input dimension");
  }
  return forward_trace(model, inputs, nullptr).activations.back();
}

UncertainPrediction mc_predict(const Regressor& model, const Eigen::Ref<const Vector>& input,
                               int samplings, Rng& rng) {
  Matrix one_row = input.transpose();
  std::vector<UncertainPrediction> result = mc_predict_all(model, one_row, samplings, rng);
  result[0].input_index = -1;
  return result[0];
}

std::vector<UncertainPrediction> mc_predict_all(const Regressor& model,
                                                const Eigen::Ref<const Matrix>& inputs,
                                                int samplings, Rng& rng) {
  if (samplings < 2) {
    throw ConfigError("mc_predict needs at least 2 samplings for a standard deviation");
  }
  if (inputs.cols() != model.input_dim()) {
    throw ShapeError("input width does not match the model input dimension");
  }
  const Index n = inputs.rows();
  const Index m = model.output_dim();
  const Index layers = model.layer_count();

  Matrix mean = Matrix::Zero(n, m);
  Matrix m2 = Matrix::Zero(n, m);
  for (int s = 0; s < samplings; ++s) {
    Matrix a = inputs;
    for (Index l = 0; l < layers; ++l) {
      Matrix z = a * model.weights[l].transpose();
      z.rowwise() += model.biases[l].transpose();
      if (l + 1 < layers) {
        a = activate(model, z);
        if (model.dropout_rate > 0) {
          a = a.cwiseProduct(dropout_mask(a.rows(), a.cols(), model.dropout_rate, rng));
        }
      } else {
        a = std::move(z);
      }
    }
    // Welford update keeps one pass in memory at a time.
    const Matrix delta = a - mean;
    mean += delta / static_cast<Scalar>(s + 1);
    m2 += delta.cwiseProduct(a - mean);
  }

  const Matrix stdev = (m2 / static_cast<Scalar>(samplings - 1)).cwiseMax(0.0).cwiseSqrt();
  std::vector<UncertainPrediction> out(n);
  for (Index i = 0; i < n; ++i) {
    out[i].prediction = mean.row(i).transpose();
    out[i].uncertainty = stdev.row(i).transpose();
    out[i].input_index = i;
  }
  return out;
}

TrainResult train(const Regressor& model, const std::vector<TrainingBatch>& batches,
                  Scalar learning_rate, int epochs, Rng& rng, LossKind loss) {
  (void)loss;  // squared error is the only variant
  if (learning_rate <= 0) throw ConfigError("learning rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  Index total_examples = 0;
  for (const TrainingBatch& batch : batches) {
    check_batch(model, batch);
    total_examples += batch.inputs.rows();
  }
  if (total_examples == 0) throw DataError("training requires at least one example");

  TrainResult result;
  result.model = model;
  result.loss_history.reserve(epochs);
  const bool use_dropout = model.dropout_rate > 0 && model.layer_count() > 1;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Scalar weighted_loss_sum = 0;
    for (const TrainingBatch& batch : batches) {
      std::vector<Matrix> masks;
      if (use_dropout) {
        for (Index l = 0; l + 1 < result.model.layer_count(); ++l) {
          masks.push_back(dropout_mask(batch.inputs.rows(), result.model.layer_sizes[l + 1],
                                       result.model.dropout_rate, rng));
        }
      }
      LossGradient grad =
          loss_and_gradient(result.model, batch, use_dropout ? &masks : nullptr);
      if (!all_finite(grad)) {
        throw NumericError("non-finite loss or gradient at epoch " + std::to_string(epoch + 1));
      }
      for (Index l = 0; l < result.model.layer_count(); ++l) {
        result.model.weights[l] -= learning_rate * grad.weight_gradients[l];
        result.model.biases[l] -= learning_rate * grad.bias_gradients[l];
      }
      weighted_loss_sum += grad.loss * static_cast<Scalar>(batch.inputs.rows());
    }
    result.loss_history.push_back(weighted_loss_sum / static_cast<Scalar>(total_examples));
  }
  return result;
}

LossGradient weighted_loss_gradient(const Regressor& model, const TrainingBatch& batch) {
  check_batch(model, batch);
  return loss_and_gradient(model, batch, nullptr);
}

void save_model(const Regressor& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open model file for writing: " + path);
  out.write(kModelMagic, sizeof(kModelMagic) - 1);
  put_u32(out, kModelVersion);
  put_u32(out, static_cast<std::uint32_t>(model.layer_sizes.size()));
  for (int s : model.layer_sizes) put_u32(out, static_cast<std::uint32_t>(s));
  put_f64(out, model.dropout_rate);
  put_u32(out, static_cast<std::uint32_t>(model.activation));
  for (Index l = 0; l < model.layer_count(); ++l) {
    const Matrix& w = model.weights[l];
    for (Index i = 0; i < w.rows(); ++i) {
      for (Index j = 0; j < w.cols(); ++j) put_f64(out, w(i, j));
    }
    for (Index i = 0; i < model.biases[l].size(); ++i) put_f64(out, model.biases[l][i]);
  }
  if (!out) throw DataError("failed writing model file: " + path);
}

Regressor load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path);
  char magic[sizeof(kModelMagic) - 1];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kModelMagic, sizeof magic) != 0) {
    throw DataError("not a model file (bad magic): " + path);
  }
  const std::uint32_t version = get_u32(in);
  if (version != kModelVersion) {
    throw DataError("unsupported model file version " + std::to_string(version));
  }
  const std::uint32_t n_layers = get_u32(in);
  if (n_layers < 2 || n_layers > 64) throw DataError("implausible layer count in model file");
  std::vector<int> sizes(n_layers);
  for (auto& s : sizes) s = static_cast<int>(get_u32(in));
  const Scalar dropout = get_f64(in);
  const std::uint32_t act = get_u32(in);
  if (act > 1) throw DataError("unknown activation tag in model file");
  if (!in) throw DataError("truncated model file header: " + path);

  Regressor model;
  model.layer_sizes = sizes;
  model.dropout_rate = dropout;
  model.activation = static_cast<Activation>(act);
  check_architecture(model.layer_sizes, model.dropout_rate);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Matrix w(sizes[l + 1], sizes[l]);
    for (Index i = 0; i < w.rows(); ++i) {
      for (Index j = 0; j < w.cols(); ++j) w(i, j) = get_f64(in);
    }
    Vector b(sizes[l + 1]);
    for (Index i = 0; i < b.size(); ++i) b[i] = get_f64(in);
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  if (!in) throw DataError("truncated model file: " + path);
  return model;
}

}  // namespace tasfar
