#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wearpose/data.hpp"
#include "wearpose/enkf.hpp"
#include "wearpose/kinematics.hpp"
#include "wearpose/neuralnet.hpp"

namespace wearpose::models {

using nn::Matrix;
using nn::Vector;

/// Architecture of the four learned submodels. Dimensions are configurable
/// so tests can run truncated instances; defaults match the pose pipeline.
struct BundleConfig {
  int state_dim = data::kStateDim;
  int raw_dim = data::kObsDim;
  int window = 5;  // transition history length N
  std::vector<int> transition_hidden{128, 128, 128};
  std::vector<int> sensor_hidden{256, 256, 256};
  std::vector<int> observation_hidden{64, 64};
  std::vector<int> noise_hidden{64, 64};
  double transition_dropout = 0.1;
  double sensor_dropout = 0.1;
  double observation_dropout = 0.0;
  double noise_dropout = 0.0;
  int ensemble = 32;
  double init_jitter = 0.05;
  /// When true the sensor model consumes a window of raw observations
  /// (window * raw_dim inputs) instead of a single step.
  bool sensor_window = false;

  int transition_input() const { return window * state_dim; }
  int sensor_input() const { return sensor_window ? window * raw_dim : raw_dim; }
};

/// The four networks: state transition f, observation h, sensor s and
/// observation-noise r. The observation net is initialized near identity
/// since the learned observation space is defined to equal the state space.
struct ModelBundle {
  BundleConfig cfg;
  nn::MlpParams transition;
  nn::MlpParams observation;
  nn::MlpParams sensor;
  nn::MlpParams noise;

  static ModelBundle init(const BundleConfig& cfg, Rng& rng);
  void save(const std::string& dir) const;
  static ModelBundle load(const std::string& dir);
};

/// Folds per-feature standardization of the raw observation (mean/std over
/// the dataset) into the sensor net's first layer, so raw IMU scales do not
/// swamp the freshly initialized weights. Call once before training.
void standardize_sensor_input(ModelBundle& bundle, const std::vector<data::Trajectory>& dataset);

struct BundleGradients {
  nn::Gradients transition, observation, sensor, noise;

  static BundleGradients zeros_like(const ModelBundle& bundle);
  void set_zero();
  void scale(double factor);
};

/// Noise model head: eps + softplus(mlp(y_mean)) with eps = 1e-6, so the
/// returned diagonal is strictly positive. `raw_out` receives the
/// pre-softplus activations when non-null (needed for the backward pass).
Vector noise_forward(const ModelBundle& bundle, const Vector& y_mean, Rng& rng,
                     nn::Tape* tape = nullptr, Vector* raw_out = nullptr);

/// Everything recorded by one traced filter step, sufficient to run the
/// reverse pass of the whole predict+update chain.
struct StepTrace {
  Matrix window;  // E x (N * state_dim)
  nn::Tape f_tape, h_tape, s_tape, r_tape;
  Matrix xp, hx, ha, ytil;  // E x D
  Vector ymean, r_raw, r_diag;
  Matrix s;  // D x D innovation covariance
  enkf::UpdateDetail update;
  Matrix xpost;  // E x D
};

struct FilterStepResult {
  enkf::Ensemble posterior;
  enkf::FilterEstimate estimate;
};

/// One full filter step (predict, observe, sample sensor, noise, update,
/// estimate) on a raw observation vector. Records a StepTrace when
/// requested. Does not modify the history; callers push the posterior.
FilterStepResult filter_step(const ModelBundle& bundle, const enkf::StateHistory& history,
                             const Vector& y_raw, Rng& rng, StepTrace* trace = nullptr);
FilterStepResult filter_step(const ModelBundle& bundle, const enkf::StateHistory& history,
                             const data::RawObservation& obs, Rng& rng,
                             StepTrace* trace = nullptr);

/// Reverse pass of one filter step. `g_xpost` is dLoss/dXpost, plus optional
/// direct contributions to the transition output (`g_xp_extra`) and the
/// sensor mean (`g_ymean_extra`). Accumulates parameter gradients and
/// returns dLoss/dWindow so gradients chain into earlier steps.
Matrix backward_step(const ModelBundle& bundle, const StepTrace& trace,
                     const Matrix& g_xpost, const Matrix& g_xp_extra,
                     const Vector& g_ymean_extra, BundleGradients& grads);

/// Sequential filter over a stream of observations with deterministic
/// seeding; shared by offline evaluation and live ingestion.
class FilterSession {
 public:
  FilterSession(const ModelBundle& bundle, std::uint64_t seed);

  /// Re-initializes the ensemble around x0 and restarts warm-up.
  void reset(const Vector& x0);
  enkf::FilterEstimate step(const data::RawObservation& obs, double timestamp);
  /// Prediction-only step used when the update side is unavailable
  /// (e.g. stale phone): propagates the ensemble without correcting it.
  enkf::FilterEstimate predict_only(double timestamp);

  const enkf::Ensemble& ensemble() const { return ensemble_; }
  long step_count() const { return step_count_; }

 private:
  const ModelBundle* bundle_;
  enkf::StateHistory history_;
  enkf::Ensemble ensemble_;
  Rng rng_;
  long step_count_ = 0;
};

// --- training ---------------------------------------------------------------

struct TrainConfig {
  int epochs = 50;
  int batch_size = 256;
  double lr = 1e-5;
  int ensemble = 32;
  int bptt_steps = 8;  // filter steps unrolled per training window
  int stride = 4;      // window start stride along each trajectory
  double lambda_transition = 1.0;
  double lambda_sensor = 1.0;
  double val_fraction = 0.1;  // trajectory-level split
  int max_windows_per_epoch = 0;  // 0 = use all
  std::uint64_t seed = 0;
};

struct LossBreakdown {
  double total = 0.0;
  double end_to_end = 0.0;
  double transition = 0.0;
  double sensor = 0.0;
};

/// One trainable window: `bptt_steps` consecutive filter steps of a
/// trajectory, with the preceding `window` ground-truth states seeding the
/// history (teacher forcing).
struct TrainWindow {
  const data::Trajectory* traj = nullptr;
  int start = 0;
};

std::vector<TrainWindow> make_windows(const std::vector<data::Trajectory>& dataset,
                                      const BundleConfig& cfg, int bptt_steps, int stride);

/// Loss of one window; accumulates gradients when `grads` is non-null.
LossBreakdown window_loss(const ModelBundle& bundle, const TrainWindow& window,
                          const TrainConfig& cfg, Rng& rng, BundleGradients* grads);

/// Mean loss over a batch of windows (the spec's `loss` operation).
LossBreakdown loss(const ModelBundle& bundle, const std::vector<TrainWindow>& batch,
                   const TrainConfig& cfg, Rng& rng, BundleGradients* grads = nullptr);

struct EpochMetrics {
  int epoch = 0;
  LossBreakdown train;
  double val_end_to_end = 0.0;
  bool best = false;
};

struct TrainResult {
  ModelBundle bundle;  // checkpoint with the lowest validation loss
  std::vector<EpochMetrics> metrics;
};

/// End-to-end training: Adam on all four submodels, trajectory-level
/// train/validation split, best-checkpoint selection. Throws EmptyDataset.
TrainResult train(const ModelBundle& bundle, const std::vector<data::Trajectory>& dataset,
                  const TrainConfig& cfg);

// --- evaluation ---------------------------------------------------------------

struct EvalMetrics {
  double wrist_cm = 0.0;
  double elbow_cm = 0.0;
  double hip_deg = 0.0;
  double throughput_hz = 0.0;
  long steps = 0;
};

/// Runs the filter over every trajectory (ensemble initialized at the
/// calibration rest pose) and reports mean Euclidean wrist/elbow errors and
/// mean absolute yaw error against ground truth. Throws EmptyDataset.
EvalMetrics evaluate(const ModelBundle& bundle, const std::vector<data::Trajectory>& dataset,
                     const kin::ArmConfig& arm, std::uint64_t seed);

/// Same metrics for a constant state prediction (baseline comparator).
EvalMetrics evaluate_constant(const Vector& state, const std::vector<data::Trajectory>& dataset,
                              const kin::ArmConfig& arm);

/// Dataset mean state vector (the constant-mean baseline predictor).
Vector mean_state(const std::vector<data::Trajectory>& dataset);

/// Absolute yaw difference in degrees, wrapped to [-180, 180].
double yaw_error_deg(const rot::YawSinCos& a, const rot::YawSinCos& b);

}  // namespace wearpose::models
