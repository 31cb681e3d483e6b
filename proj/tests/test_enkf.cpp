#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "testutil.hpp"
#include "wearpose/enkf.hpp"
#include "wearpose/neuralnet.hpp"

using namespace wearpose;
using namespace wearpose::enkf;
using testutil::random_matrix;
using testutil::random_vector;

namespace {

const ObservationFn kIdentityObs = [](const Matrix& x, Rng&) { return x; };

}  // namespace

TEST_CASE("init_ensemble") {
  Rng rng(1);
  Vector x0 = random_vector(14, rng);

  const Ensemble exact = init_ensemble(x0, 8, 0.0, rng);
  for (int i = 0; i < exact.size(); ++i) {
    CHECK((exact.members.row(i).transpose() - x0).norm() == 0.0);
  }

  CHECK_THROWS_AS(init_ensemble(x0, 1, 0.1, rng), InvalidEnsembleSize);
  CHECK_THROWS_AS(init_ensemble(x0, 8, -0.1, rng), InvalidConfig);

  // sample std per dimension stays near the requested jitter
  const Ensemble jittered = init_ensemble(x0, 32, 0.05, rng);
  const Matrix centered = center_members(jittered.members);
  for (int j = 0; j < 14; ++j) {
    const double sample_std = std::sqrt(centered.col(j).squaredNorm() / (32 - 1));
    CHECK(sample_std > 0.03);
    CHECK(sample_std < 0.07);
  }
}

TEST_CASE("predict with deterministic transitions") {
  Rng rng(2);
  const Matrix members = random_matrix(6, 4, rng);
  StateHistory history(2);
  history.push(Matrix::Zero(6, 4));
  history.push(members);

  // identity on the newest window block
  const TransitionFn identity_last = [](const Matrix& window, Rng&) {
    return Matrix(window.rightCols(4));
  };
  const Ensemble same = predict(history, identity_last, rng);
  CHECK((same.members - members).norm() == 0.0);

  const TransitionFn decay = [](const Matrix& window, Rng&) {
    return Matrix(0.9 * window.rightCols(4));
  };
  const Ensemble scaled = predict(history, decay, rng);
  CHECK((scaled.members - 0.9 * members).norm() < 1e-15);

  const TransitionFn bad = [](const Matrix& window, Rng&) {
    return Matrix(window.topRows(2));
  };
  CHECK_THROWS_AS(predict(history, bad, rng), ModelShapeMismatch);
}

TEST_CASE("stochastic transition diversifies a degenerate ensemble") {
  // all-equal ensemble, dropout-driven transition: variance appears
  nn::MlpSpec spec{{4, 32, 4}, 0.2};
  Rng init_rng(3);
  const nn::MlpParams net = nn::MlpParams::init(spec, init_rng);
  const TransitionFn transition = [&](const Matrix& window, Rng& r) {
    return nn::forward_batch(net, window, 0.2, r);
  };

  int positive = 0;
  for (int seedi = 0; seedi < 100; ++seedi) {
    Rng rng(1000 + seedi);
    StateHistory history(1);
    history.push(Matrix::Ones(16, 4));
    const Ensemble next = predict(history, transition, rng);
    const double variance = center_members(next.members).squaredNorm();
    if (variance > 0.0) ++positive;
  }
  CHECK(positive == 100);
}

TEST_CASE("observe_ensemble centering") {
  Rng rng(4);

  Ensemble identical;
  identical.members = Matrix::Ones(5, 3);
  Matrix hx, ha;
  observe_ensemble(identical, kIdentityObs, rng, hx, ha);
  CHECK(ha.norm() == 0.0);

  Ensemble pair;
  pair.members.resize(2, 3);
  const Vector v = random_vector(3, rng);
  pair.members.row(0) = v.transpose();
  pair.members.row(1) = -v.transpose();
  observe_ensemble(pair, kIdentityObs, rng, hx, ha);
  CHECK((ha.row(0).transpose() - v).norm() < 1e-15);
  CHECK((ha.row(1).transpose() + v).norm() < 1e-15);

  Ensemble big;
  big.members = random_matrix(32, 14, rng);
  observe_ensemble(big, kIdentityObs, rng, hx, ha);
  CHECK(ha.colwise().sum().cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sample_sensor") {
  Rng init_rng(5);
  nn::MlpSpec spec{{6, 24, 3}, 0.1};
  const nn::MlpParams net = nn::MlpParams::init(spec, init_rng);
  const Vector raw = random_vector(6, init_rng);

  const SensorFn deterministic = [&](const Vector& y, int e, Rng& r) {
    return nn::forward_batch(net, y.transpose().replicate(e, 1), 0.0, r);
  };
  Rng rng(6);
  Matrix ytil;
  Vector ymean;
  sample_sensor(raw, deterministic, 8, rng, ytil, ymean);
  for (int i = 0; i < 8; ++i) {
    CHECK((ytil.row(i).transpose() - ymean).norm() < 1e-12);
  }
  CHECK((ytil.colwise().mean().transpose() - ymean).norm() < 1e-12);

  const SensorFn stochastic = [&](const Vector& y, int e, Rng& r) {
    return nn::forward_batch(net, y.transpose().replicate(e, 1), 0.1, r);
  };
  int with_variance = 0;
  for (int seedi = 0; seedi < 100; ++seedi) {
    Rng r2(2000 + seedi);
    sample_sensor(raw, stochastic, 32, r2, ytil, ymean);
    Matrix centered = ytil.rowwise() - ymean.transpose();
    if ((centered.array().square().colwise().mean() > 0.0).all()) ++with_variance;
  }
  CHECK(with_variance >= 95);
}

TEST_CASE("innovation_covariance") {
  Vector ones = Vector::Ones(4);
  const Matrix s1 = innovation_covariance(Matrix::Zero(6, 4), ones);
  CHECK((s1 - Matrix::Identity(4, 4)).norm() == 0.0);

  Matrix ha(2, 1);
  ha << 1, -1;
  Vector r0(1);
  r0 << 0.0;
  CHECK(innovation_covariance(ha, r0)(0, 0) == doctest::Approx(2.0));

  Rng rng(7);
  const Matrix big_ha = center_members(random_matrix(16, 5, rng));
  Vector r = random_vector(5, rng).cwiseAbs() + Vector::Constant(5, 0.01);
  const Matrix s = innovation_covariance(big_ha, r);
  CHECK((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::LLT<Matrix> llt(s);
  CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("kalman_update limits") {
  Rng rng(8);
  Ensemble ens;
  ens.members = random_matrix(16, 4, rng);
  Matrix hx, ha;
  observe_ensemble(ens, kIdentityObs, rng, hx, ha);

  SUBCASE("zero innovation is a no-op") {
    const Vector r = Vector::Ones(4);
    const Matrix s = innovation_covariance(ha, r);
    const Ensemble updated = kalman_update(ens, hx, ha, hx, s);
    CHECK((updated.members - ens.members).norm() == 0.0);
  }

  SUBCASE("near-infinite measurement noise freezes the ensemble") {
    const Matrix ytil = hx + random_matrix(16, 4, rng);
    const Vector r = Vector::Constant(4, 1e9);
    const Matrix s = innovation_covariance(ha, r);
    const Ensemble updated = kalman_update(ens, hx, ha, ytil, s);
    const double displacement = (updated.members - ens.members).norm();
    const double innovation = (ytil - hx).norm();
    CHECK(displacement < 1e-3 * innovation);
  }

  SUBCASE("update displacement shrinks monotonically in R") {
    const Matrix ytil = hx + random_matrix(16, 4, rng);
    double previous = std::numeric_limits<double>::infinity();
    for (const double rv : {1e3, 1e6, 1e9}) {
      const Matrix s = innovation_covariance(ha, Vector::Constant(4, rv));
      const Ensemble updated = kalman_update(ens, hx, ha, ytil, s);
      const double displacement = (updated.members - ens.members).norm();
      CHECK(displacement < previous);
      previous = displacement;
    }
  }

  SUBCASE("update is affine in the innovation") {
    const Matrix ytil = hx + random_matrix(16, 4, rng);
    const Vector r = Vector::Ones(4);
    const Matrix s = innovation_covariance(ha, r);
    const Ensemble once = kalman_update(ens, hx, ha, ytil, s);
    const Matrix doubled = hx + 2.0 * (ytil - hx);
    const Ensemble twice = kalman_update(ens, hx, ha, doubled, s);
    const Matrix d1 = once.members - ens.members;
    const Matrix d2 = twice.members - ens.members;
    CHECK((d2 - 2.0 * d1).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("ill-conditioned innovation covariance is rejected") {
    Matrix s = Matrix::Identity(4, 4);
    s(3, 3) = 1e-15;
    CHECK_THROWS_AS(kalman_update(ens, hx, ha, hx, s), SingularInnovation);
  }

  SUBCASE("shape mismatch") {
    const Matrix s = innovation_covariance(ha, Vector::Ones(4));
    CHECK_THROWS_AS(kalman_update(ens, hx.topRows(4), ha, hx, s), ModelShapeMismatch);
  }
}

TEST_CASE("anomaly centering holds through repeated updates") {
  Rng rng(9);
  Ensemble ens;
  ens.members = random_matrix(12, 3, rng);
  StateHistory history(2);
  history.push(ens.members);
  const TransitionFn decay = [](const Matrix& window, Rng&) {
    return Matrix(0.95 * window.rightCols(3));
  };
  for (int t = 0; t < 50; ++t) {
    ens = predict(history, decay, rng);
    Matrix hx, ha;
    observe_ensemble(ens, kIdentityObs, rng, hx, ha);
    CHECK(center_members(ens.members).colwise().sum().cwiseAbs().maxCoeff() < 1e-9);
    CHECK(ha.colwise().sum().cwiseAbs().maxCoeff() < 1e-9);
    const Matrix ytil = hx + 0.1 * random_matrix(12, 3, rng);
    const Matrix s = innovation_covariance(ha, Vector::Constant(3, 0.01));
    ens = kalman_update(ens, hx, ha, ytil, s);
    history.push(ens.members);
  }
}

TEST_CASE("estimate mean, spread and pose re-orthonormalization") {
  SUBCASE("identical members have zero spread") {
    Ensemble ens;
    ens.members = Matrix::Ones(6, 5);
    const FilterEstimate est = estimate(ens);
    CHECK(est.spread.norm() == 0.0);
  }

  SUBCASE("symmetric pair: population spread is |v| per dimension") {
    Rng rng(10);
    const Vector v = random_vector(14, rng);
    Ensemble ens;
    ens.members.resize(2, 14);
    ens.members.row(0) = v.transpose();
    ens.members.row(1) = -v.transpose();
    const FilterEstimate est = estimate(ens);
    // the zero mean has degenerate 6D blocks; the raw mean is kept
    CHECK(est.mean.norm() == 0.0);
    CHECK((est.spread - v.cwiseAbs()).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("pose-dimension means export orthonormal 6D blocks") {
    Rng rng(11);
    Vector pose(14);
    pose << 1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 1, 0, 0.6, 0.8;
    Ensemble ens = init_ensemble(pose, 32, 0.05, rng);
    const FilterEstimate est = estimate(ens);
    for (int block = 0; block < 2; ++block) {
      const rot::Vec3 a(est.mean[block * 6 + 0], est.mean[block * 6 + 1], est.mean[block * 6 + 2]);
      const rot::Vec3 b(est.mean[block * 6 + 3], est.mean[block * 6 + 4], est.mean[block * 6 + 5]);
      CHECK(std::abs(a.norm() - 1.0) < 1e-9);
      CHECK(std::abs(b.norm() - 1.0) < 1e-9);
      CHECK(std::abs(a.dot(b)) < 1e-9);
    }
    CHECK(std::abs(est.mean[12] * est.mean[12] + est.mean[13] * est.mean[13] - 1.0) < 1e-9);
  }
}

TEST_CASE("state history windowing") {
  CHECK_THROWS_AS(StateHistory(0), InvalidConfig);
  StateHistory history(3);
  CHECK_THROWS_AS(history.window_matrix(), ModelShapeMismatch);

  Matrix a = Matrix::Constant(2, 2, 1.0);
  Matrix b = Matrix::Constant(2, 2, 2.0);
  history.push(a);
  Matrix w = history.window_matrix();
  REQUIRE(w.cols() == 6);
  CHECK(w.leftCols(4).norm() == 0.0);  // zero-padded oldest slots
  CHECK((w.rightCols(2) - a).norm() == 0.0);

  history.push(b);
  w = history.window_matrix();
  CHECK(w.leftCols(2).norm() == 0.0);
  CHECK((w.middleCols(2, 2) - a).norm() == 0.0);
  CHECK((w.rightCols(2) - b).norm() == 0.0);
  CHECK(!history.warmed_up());
  history.push(a);
  CHECK(history.warmed_up());
  history.push(b);
  CHECK(history.size() == 3);  // ring buffer capped at the window
}

TEST_CASE("ensemble filter tracks the closed-form Kalman filter") {
  double ratio_sum = 0.0;
  const int seeds = 10;
  for (int i = 0; i < seeds; ++i) {
    const auto result = testutil::linear_gaussian_comparison(100 + i, 1000, 100);
    ratio_sum += result.ratio();
  }
  const double mean_ratio = ratio_sum / seeds;
  CHECK(mean_ratio < 1.05);
}
