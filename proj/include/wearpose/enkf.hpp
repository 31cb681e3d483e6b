#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <deque>
#include <functional>

#include "wearpose/errors.hpp"
#include "wearpose/rng.hpp"

namespace wearpose::enkf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Ensemble of state hypotheses: one member per row (E x D, E >= 2).
struct Ensemble {
  Matrix members;
  long step = 0;

  int size() const { return static_cast<int>(members.rows()); }
  int dim() const { return static_cast<int>(members.cols()); }
  Vector mean() const { return members.colwise().mean().transpose(); }
  /// Per-dimension population standard deviation around the ensemble mean.
  Vector spread() const;
};

/// Ring buffer of the last N posterior ensembles, oldest first. The
/// transition window is zero-padded in the oldest slots until N pushes
/// have happened (warm-up).
class StateHistory {
 public:
  explicit StateHistory(int window);

  void push(const Matrix& members);
  void clear() { entries_.clear(); }
  int window() const { return window_; }
  int size() const { return static_cast<int>(entries_.size()); }
  bool empty() const { return entries_.empty(); }
  bool warmed_up() const { return size() >= window_; }
  const std::deque<Matrix>& entries() const { return entries_; }

  /// E x (N*D) matrix; member i's row concatenates its own states oldest to
  /// newest, with zeros in slots older than the recorded history.
  Matrix window_matrix() const;

 private:
  int window_;
  std::deque<Matrix> entries_;
};

struct FilterEstimate {
  Vector mean;
  Vector spread;
  double timestamp = 0.0;
  bool warmup = false;
};

/// Pluggable models. Batched: one row per ensemble member.
using TransitionFn = std::function<Matrix(const Matrix& windows, Rng& rng)>;
using ObservationFn = std::function<Matrix(const Matrix& states, Rng& rng)>;
using SensorFn = std::function<Matrix(const Vector& raw, int ensemble, Rng& rng)>;

/// Subtracts the member mean from every row.
Matrix center_members(const Matrix& m);

/// E copies of x0 with zero-mean Gaussian perturbation of std `jitter`.
/// Throws InvalidEnsembleSize when E < 2, InvalidConfig when jitter < 0.
Ensemble init_ensemble(const Vector& x0, int ensemble_size, double jitter, Rng& rng);

/// One stochastic forward pass per member on its own history window.
/// Throws ModelShapeMismatch when the transition output is not E x D.
Ensemble predict(const StateHistory& history, const TransitionFn& transition, Rng& rng);

/// Maps members to observation space (hx) and centers them (ha).
void observe_ensemble(const Ensemble& ensemble, const ObservationFn& observation,
                      Rng& rng, Matrix& hx, Matrix& ha);

/// E independent stochastic projections of the raw observation plus their
/// columnwise mean.
void sample_sensor(const Vector& raw, const SensorFn& sensor, int ensemble_size,
                   Rng& rng, Matrix& ytilde, Vector& ymean);

/// S = ha' * ha / (E - 1) + diag(r_diag).
Matrix innovation_covariance(const Matrix& ha, const Vector& r_diag);

/// Intermediates of the measurement update, exposed for the training path.
struct UpdateDetail {
  Matrix anomalies;    // A = centered members, E x D
  Matrix gain_t;       // K', D x D, so that update = (ytilde - hx) * K'
  Eigen::LLT<Matrix> llt;  // factorization of S
};

/// Measurement update: each member moves by K * (ytilde_i - hx_i) with
/// K = A' * ha * S^-1 / (E - 1). Solves through a Cholesky factorization and
/// throws SingularInnovation when S is not positive definite or its
/// condition number exceeds 1e12.
Ensemble kalman_update(const Ensemble& ensemble, const Matrix& hx, const Matrix& ha,
                       const Matrix& ytilde, const Matrix& s, UpdateDetail* detail = nullptr);

/// Ensemble mean and spread. For 14-dim pose states the two 6D blocks of
/// the mean are re-orthonormalized before export (falling back to the raw
/// mean when degenerate) and the yaw pair is renormalized.
FilterEstimate estimate(const Ensemble& ensemble);

}  // namespace wearpose::enkf
