#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wearpose/errors.hpp"
#include "wearpose/rng.hpp"

namespace wearpose::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Sequential MLP architecture: ReLU hidden layers, linear output.
/// `dropout` is the hidden-layer drop probability used for stochastic
/// forward passes; layers and shapes are derived from `dims`.
struct MlpSpec {
  std::vector<int> dims;  // [in, hidden..., out]
  double dropout = 0.0;

  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }
  int layer_count() const { return static_cast<int>(dims.size()) - 1; }
};

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

struct MlpParams {
  MlpSpec spec;
  std::vector<Layer> layers;

  /// He-style uniform fan-in initialization, zero biases.
  static MlpParams init(const MlpSpec& spec, Rng& rng);

  std::size_t parameter_count() const;
  /// Flat parameter access in (layer, weight-row-major, then bias) order.
  /// Linear scan; intended for tests and finite-difference probes.
  double get_parameter(std::size_t index) const;
  void set_parameter(std::size_t index, double value);
};

/// Per-parameter gradient accumulator mirroring MlpParams shapes.
struct Gradients {
  std::vector<Layer> layers;

  static Gradients zeros_like(const MlpParams& params);
  void set_zero();
  void add(const Gradients& other);
  void scale(double factor);
  double get(std::size_t index) const;
};

/// Recorded forward intermediates for one reverse pass. Rows of the batch
/// are independent samples with independent dropout masks.
struct Tape {
  Matrix input;                     // B x in
  std::vector<Matrix> pre_act;      // per layer: B x out
  std::vector<Matrix> layer_input;  // per layer: B x in
  std::vector<Matrix> mask;         // per hidden layer: B x out, {0, 1/(1-p)}; empty when no dropout
  int batch = 0;
  int output_dim = 0;
};

/// Stochastic forward pass over a batch (rows = samples). With
/// dropout_rate > 0 an inverted-dropout mask is sampled per hidden unit and
/// row; rate 0 is deterministic. Records intermediates into `tape` when
/// non-null. Throws ShapeMismatch on input width mismatch.
Matrix forward_batch(const MlpParams& params, const Matrix& input, double dropout_rate,
                     Rng& rng, Tape* tape = nullptr);

/// Replays a forward pass under previously sampled masks (one matrix per
/// hidden layer; pass an empty vector for a deterministic net).
Matrix forward_batch_masked(const MlpParams& params, const Matrix& input,
                            const std::vector<Matrix>& masks, Tape* tape = nullptr);

/// Single-sample convenience wrappers.
Vector forward(const MlpParams& params, const Vector& input, double dropout_rate,
               Rng& rng, Tape* tape = nullptr);

/// Reverse pass: accumulates parameter gradients into `grads` and returns
/// the gradient with respect to the batch input. Throws TapeMismatch when
/// `output_grad` does not match the taped output shape.
Matrix backward_batch(const MlpParams& params, const Tape& tape, const Matrix& output_grad,
                      Gradients& grads);
Vector backward(const MlpParams& params, const Tape& tape, const Vector& output_grad,
                Gradients& grads);

/// Mean squared error over equal-length vectors. Throws ShapeMismatch.
double mse(const Vector& prediction, const Vector& target);

/// Adam moment accumulators. Lazily shaped on first step.
struct AdamState {
  std::vector<Layer> m;
  std::vector<Layer> v;
  long step = 0;
};

/// Standard Adam update (beta1 0.9, beta2 0.999, eps 1e-8, bias correction).
void adam_step(MlpParams& params, const Gradients& grads, AdamState& state, double lr);

// --- checkpoint format ---------------------------------------------------
//
// A checkpoint is a directory holding `manifest.json` (architecture dims,
// activation tags, dropout rates, tensor order, caller metadata) and
// `weights.bin` (little-endian 32-bit floats, tensors concatenated
// row-major in manifest order).

void save_checkpoint(const std::string& dir,
                     const std::vector<std::pair<std::string, const MlpParams*>>& models,
                     const std::string& extra_json);

struct LoadedCheckpoint {
  std::map<std::string, MlpParams> models;
  std::string extra_json;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

}  // namespace wearpose::nn
