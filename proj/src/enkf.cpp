#include "wearpose/enkf.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "wearpose/rotmath.hpp"

namespace wearpose::enkf {

namespace {
constexpr double kMaxCondition = 1e12;
constexpr int kPoseDim = 14;
}  // namespace

Vector Ensemble::spread() const {
  const Matrix centered = center_members(members);
  return (centered.array().square().colwise().mean()).sqrt().matrix().transpose();
}

StateHistory::StateHistory(int window) : window_(window) {
  if (window < 1) {
    throw InvalidConfig("StateHistory: window must be >= 1");
  }
}

void StateHistory::push(const Matrix& members) {
  if (!entries_.empty() &&
      (members.rows() != entries_.back().rows() || members.cols() != entries_.back().cols())) {
    throw ModelShapeMismatch("StateHistory::push: ensemble shape changed");
  }
  entries_.push_back(members);
  while (static_cast<int>(entries_.size()) > window_) {
    entries_.pop_front();
  }
}

Matrix StateHistory::window_matrix() const {
  if (entries_.empty()) {
    throw ModelShapeMismatch("StateHistory::window_matrix: empty history");
  }
  const int ensemble = static_cast<int>(entries_.back().rows());
  const int dim = static_cast<int>(entries_.back().cols());
  Matrix window = Matrix::Zero(ensemble, static_cast<Eigen::Index>(window_) * dim);
  const int pad = window_ - static_cast<int>(entries_.size());
  int slot = pad;
  for (const Matrix& e : entries_) {
    window.middleCols(static_cast<Eigen::Index>(slot) * dim, dim) = e;
    ++slot;
  }
  return window;
}

Matrix center_members(const Matrix& m) {
  return m.rowwise() - m.colwise().mean();
}

Ensemble init_ensemble(const Vector& x0, int ensemble_size, double jitter, Rng& rng) {
  if (ensemble_size < 2) {
    throw InvalidEnsembleSize("init_ensemble: ensemble size must be >= 2");
  }
  if (jitter < 0.0) {
    throw InvalidConfig("init_ensemble: jitter must be >= 0");
  }
  Ensemble e;
  e.members.resize(ensemble_size, x0.size());
  for (int i = 0; i < ensemble_size; ++i) {
    for (Eigen::Index j = 0; j < x0.size(); ++j) {
      e.members(i, j) = x0(j) + (jitter > 0.0 ? jitter * rng.normal() : 0.0);
    }
  }
  return e;
}

Ensemble predict(const StateHistory& history, const TransitionFn& transition, Rng& rng) {
  const Matrix window = history.window_matrix();
  Matrix next = transition(window, rng);
  if (next.rows() != window.rows()) {
    throw ModelShapeMismatch("predict: transition changed the ensemble size");
  }
  if (!next.allFinite()) {
    throw ModelShapeMismatch("predict: transition produced non-finite members");
  }
  Ensemble e;
  e.members = std::move(next);
  return e;
}

void observe_ensemble(const Ensemble& ensemble, const ObservationFn& observation,
                      Rng& rng, Matrix& hx, Matrix& ha) {
  hx = observation(ensemble.members, rng);
  if (hx.rows() != ensemble.members.rows()) {
    throw ModelShapeMismatch("observe_ensemble: observation changed the ensemble size");
  }
  ha = center_members(hx);
}

void sample_sensor(const Vector& raw, const SensorFn& sensor, int ensemble_size,
                   Rng& rng, Matrix& ytilde, Vector& ymean) {
  ytilde = sensor(raw, ensemble_size, rng);
  if (ytilde.rows() != ensemble_size) {
    throw ModelShapeMismatch("sample_sensor: sensor output row count != ensemble size");
  }
  ymean = ytilde.colwise().mean().transpose();
}

Matrix innovation_covariance(const Matrix& ha, const Vector& r_diag) {
  if (ha.cols() != r_diag.size()) {
    throw ModelShapeMismatch("innovation_covariance: noise diagonal length mismatch");
  }
  const double denom = static_cast<double>(ha.rows()) - 1.0;
  Matrix s = (ha.transpose() * ha) / denom;
  s += r_diag.asDiagonal();
  return s;
}

Ensemble kalman_update(const Ensemble& ensemble, const Matrix& hx, const Matrix& ha,
                       const Matrix& ytilde, const Matrix& s, UpdateDetail* detail) {
  const int e = ensemble.size();
  const Eigen::Index d = ensemble.members.cols();
  const Eigen::Index od = hx.cols();
  if (hx.rows() != e || ha.rows() != e || ytilde.rows() != e || ha.cols() != od ||
      ytilde.cols() != od || s.rows() != od || s.cols() != od) {
    throw ModelShapeMismatch("kalman_update: inconsistent shapes");
  }

  {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > kMaxCondition) {
      throw SingularInnovation("kalman_update: innovation covariance ill-conditioned");
    }
  }

  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) {
    throw SingularInnovation("kalman_update: Cholesky factorization failed");
  }

  const Matrix anomalies = center_members(ensemble.members);
  const double denom = static_cast<double>(e) - 1.0;
  // K = A' * HA * S^-1 / (E-1); stored transposed so the member update is a
  // single right-multiplication on the innovation rows.
  const Matrix gain_t = llt.solve(ha.transpose() * anomalies / denom);

  Ensemble out;
  out.step = ensemble.step;
  out.members = ensemble.members + (ytilde - hx) * gain_t;
  if (detail) {
    detail->anomalies = anomalies;
    detail->gain_t = gain_t;
    detail->llt = llt;
  }
  return out;
}

FilterEstimate estimate(const Ensemble& ensemble) {
  FilterEstimate est;
  est.mean = ensemble.mean();
  est.spread = ensemble.spread();
  if (ensemble.dim() == kPoseDim) {
    for (int block = 0; block < 2; ++block) {
      Eigen::Matrix<double, 6, 1> six = est.mean.segment<6>(block * 6);
      try {
        const rot::UnitQuaternion q = rot::sixd_to_quat(rot::SixD::from_vector(six));
        est.mean.segment<6>(block * 6) = rot::quat_to_sixd(q).to_vector();
      } catch (const DegenerateSixD&) {
        // keep the raw mean when the block has collapsed
      }
    }
    const double n = std::hypot(est.mean(12), est.mean(13));
    if (n > 1e-12) {
      est.mean(12) /= n;
      est.mean(13) /= n;
    }
  }
  return est;
}

}  // namespace wearpose::enkf
