#include "wearpose/models.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace wearpose::models {

using nlohmann::json;

namespace {

constexpr double kNoiseEps = 1e-6;

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<int> full_dims(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> dims;
  dims.reserve(hidden.size() + 2);
  dims.push_back(in);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

/// Embeds the identity map through relu(x) - relu(-x) and perturbs every
/// entry slightly. Requires the first hidden layer to hold 2*dim units;
/// falls back to plain initialization otherwise.
nn::MlpParams init_near_identity(const nn::MlpSpec& spec, Rng& rng, double noise) {
  nn::MlpParams p = nn::MlpParams::init(spec, rng);
  const int dim = spec.input_dim();
  if (spec.output_dim() != dim || spec.layer_count() < 2) {
    return p;
  }
  for (const int h : std::vector<int>(spec.dims.begin() + 1, spec.dims.end() - 1)) {
    if (h < 2 * dim) return p;
  }
  for (auto& layer : p.layers) {
    layer.weight *= 0.1;  // damp the random part
  }
  nn::Matrix& w0 = p.layers[0].weight;
  for (int i = 0; i < dim; ++i) {
    w0(i, i) += 1.0;
    w0(dim + i, i) += -1.0;
  }
  for (int l = 1; l + 1 < spec.layer_count(); ++l) {
    nn::Matrix& w = p.layers[l].weight;
    for (int i = 0; i < 2 * dim; ++i) w(i, i) += 1.0;
  }
  nn::Matrix& wl = p.layers.back().weight;
  for (int i = 0; i < dim; ++i) {
    wl(i, i) += 1.0;
    wl(i, dim + i) += -1.0;
  }
  if (noise > 0.0) {
    for (auto& layer : p.layers) {
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
          layer.weight(i, j) += rng.uniform(-noise, noise);
        }
      }
    }
  }
  return p;
}

}  // namespace

ModelBundle ModelBundle::init(const BundleConfig& cfg, Rng& rng) {
  ModelBundle b;
  b.cfg = cfg;
  b.transition = nn::MlpParams::init(
      {full_dims(cfg.transition_input(), cfg.transition_hidden, cfg.state_dim),
       cfg.transition_dropout},
      rng);
  b.observation = init_near_identity(
      {full_dims(cfg.state_dim, cfg.observation_hidden, cfg.state_dim),
       cfg.observation_dropout},
      rng, 0.01);
  b.sensor = nn::MlpParams::init(
      {full_dims(cfg.sensor_input(), cfg.sensor_hidden, cfg.state_dim), cfg.sensor_dropout},
      rng);
  b.noise = nn::MlpParams::init(
      {full_dims(cfg.state_dim, cfg.noise_hidden, cfg.state_dim), cfg.noise_dropout}, rng);
  return b;
}

void ModelBundle::save(const std::string& dir) const {
  json extra;
  extra["state_dim"] = cfg.state_dim;
  extra["raw_dim"] = cfg.raw_dim;
  extra["window"] = cfg.window;
  extra["ensemble"] = cfg.ensemble;
  extra["init_jitter"] = cfg.init_jitter;
  extra["sensor_window"] = cfg.sensor_window;
  nn::save_checkpoint(dir,
                      {{"transition", &transition},
                       {"observation", &observation},
                       {"sensor", &sensor},
                       {"noise", &noise}},
                      extra.dump());
}

ModelBundle ModelBundle::load(const std::string& dir) {
  nn::LoadedCheckpoint ck = nn::load_checkpoint(dir);
  for (const char* name : {"transition", "observation", "sensor", "noise"}) {
    if (ck.models.find(name) == ck.models.end()) {
      throw SchemaMismatch(std::string("ModelBundle::load: checkpoint missing model ") + name);
    }
  }
  ModelBundle b;
  b.transition = ck.models.at("transition");
  b.observation = ck.models.at("observation");
  b.sensor = ck.models.at("sensor");
  b.noise = ck.models.at("noise");

  json extra = ck.extra_json.empty() ? json::object() : json::parse(ck.extra_json);
  BundleConfig cfg;
  cfg.state_dim = extra.value("state_dim", b.observation.spec.input_dim());
  cfg.window = extra.value("window", 5);
  cfg.sensor_window = extra.value("sensor_window", false);
  cfg.raw_dim = extra.value("raw_dim", cfg.sensor_window
                                           ? b.sensor.spec.input_dim() / cfg.window
                                           : b.sensor.spec.input_dim());
  cfg.ensemble = extra.value("ensemble", 32);
  cfg.init_jitter = extra.value("init_jitter", 0.05);
  auto hidden_of = [](const nn::MlpParams& p) {
    return std::vector<int>(p.spec.dims.begin() + 1, p.spec.dims.end() - 1);
  };
  cfg.transition_hidden = hidden_of(b.transition);
  cfg.observation_hidden = hidden_of(b.observation);
  cfg.sensor_hidden = hidden_of(b.sensor);
  cfg.noise_hidden = hidden_of(b.noise);
  cfg.transition_dropout = b.transition.spec.dropout;
  cfg.observation_dropout = b.observation.spec.dropout;
  cfg.sensor_dropout = b.sensor.spec.dropout;
  cfg.noise_dropout = b.noise.spec.dropout;
  b.cfg = cfg;

  if (b.transition.spec.input_dim() != cfg.transition_input() ||
      b.transition.spec.output_dim() != cfg.state_dim) {
    throw SchemaMismatch("ModelBundle::load: transition dims inconsistent with metadata");
  }
  return b;
}

void standardize_sensor_input(ModelBundle& bundle, const std::vector<data::Trajectory>& dataset) {
  const int in = bundle.sensor.spec.input_dim();
  if (bundle.cfg.sensor_window) {
    throw InvalidConfig("standardize_sensor_input: windowed sensor input not supported");
  }
  Vector sum = Vector::Zero(in);
  Vector sumsq = Vector::Zero(in);
  long count = 0;
  for (const data::Trajectory& traj : dataset) {
    for (const data::Sample& s : traj.samples) {
      const Vector y = s.obs.to_vector().head(in);
      sum += y;
      sumsq += y.cwiseProduct(y);
      ++count;
    }
  }
  if (count == 0) {
    throw EmptyDataset("standardize_sensor_input: no samples");
  }
  const Vector mean = sum / static_cast<double>(count);
  Vector stddev =
      (sumsq / static_cast<double>(count) - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
  stddev = stddev.cwiseMax(1e-6);

  // z = W((y - mu) / sigma) + b  ==  (W diag(1/sigma)) y + (b - W' mu)
  nn::Layer& first = bundle.sensor.layers.front();
  for (Eigen::Index j = 0; j < first.weight.cols(); ++j) {
    first.weight.col(j) /= stddev[j];
  }
  first.bias -= first.weight * mean;
}

BundleGradients BundleGradients::zeros_like(const ModelBundle& bundle) {
  BundleGradients g;
  g.transition = nn::Gradients::zeros_like(bundle.transition);
  g.observation = nn::Gradients::zeros_like(bundle.observation);
  g.sensor = nn::Gradients::zeros_like(bundle.sensor);
  g.noise = nn::Gradients::zeros_like(bundle.noise);
  return g;
}

void BundleGradients::set_zero() {
  transition.set_zero();
  observation.set_zero();
  sensor.set_zero();
  noise.set_zero();
}

void BundleGradients::scale(double factor) {
  transition.scale(factor);
  observation.scale(factor);
  sensor.scale(factor);
  noise.scale(factor);
}

Vector noise_forward(const ModelBundle& bundle, const Vector& y_mean, Rng& rng,
                     nn::Tape* tape, Vector* raw_out) {
  const Vector raw =
      nn::forward(bundle.noise, y_mean, bundle.cfg.noise_dropout, rng, tape);
  if (raw_out) *raw_out = raw;
  Vector r(raw.size());
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    r[i] = kNoiseEps + softplus(raw[i]);
  }
  return r;
}

FilterStepResult filter_step(const ModelBundle& bundle, const enkf::StateHistory& history,
                             const Vector& y_raw, Rng& rng, StepTrace* trace) {
  if (history.empty()) {
    throw ModelShapeMismatch("filter_step: empty history");
  }
  const int ensemble = static_cast<int>(history.entries().back().rows());
  if (history.window() != bundle.cfg.window) {
    throw ModelShapeMismatch("filter_step: history window != bundle window");
  }
  if (y_raw.size() != bundle.cfg.sensor_input()) {
    throw ModelShapeMismatch("filter_step: raw observation length mismatch");
  }

  // prediction: one stochastic transition pass per member
  enkf::TransitionFn transition = [&](const Matrix& windows, Rng& r) {
    if (windows.cols() != bundle.transition.spec.input_dim()) {
      throw ModelShapeMismatch("filter_step: transition input dim mismatch");
    }
    return nn::forward_batch(bundle.transition, windows, bundle.cfg.transition_dropout, r,
                             trace ? &trace->f_tape : nullptr);
  };
  if (trace) trace->window = history.window_matrix();
  enkf::Ensemble xp = enkf::predict(history, transition, rng);

  // observation space
  enkf::ObservationFn observation = [&](const Matrix& states, Rng& r) {
    return nn::forward_batch(bundle.observation, states, bundle.cfg.observation_dropout, r,
                             trace ? &trace->h_tape : nullptr);
  };
  Matrix hx, ha;
  enkf::observe_ensemble(xp, observation, rng, hx, ha);

  // stochastic sensor projections of the raw observation
  enkf::SensorFn sensor = [&](const Vector& raw, int e, Rng& r) {
    const Matrix replicated = raw.transpose().replicate(e, 1);
    return nn::forward_batch(bundle.sensor, replicated, bundle.cfg.sensor_dropout, r,
                             trace ? &trace->s_tape : nullptr);
  };
  Matrix ytil;
  Vector ymean;
  enkf::sample_sensor(y_raw, sensor, ensemble, rng, ytil, ymean);

  Vector r_raw;
  const Vector r_diag =
      noise_forward(bundle, ymean, rng, trace ? &trace->r_tape : nullptr, &r_raw);
  const Matrix s = enkf::innovation_covariance(ha, r_diag);

  enkf::UpdateDetail detail;
  enkf::Ensemble posterior = enkf::kalman_update(xp, hx, ha, ytil, s, &detail);

  if (trace) {
    trace->xp = xp.members;
    trace->hx = hx;
    trace->ha = ha;
    trace->ytil = ytil;
    trace->ymean = ymean;
    trace->r_raw = r_raw;
    trace->r_diag = r_diag;
    trace->s = s;
    trace->update = detail;
    trace->xpost = posterior.members;
  }

  FilterStepResult result;
  result.estimate = enkf::estimate(posterior);
  result.posterior = std::move(posterior);
  return result;
}

FilterStepResult filter_step(const ModelBundle& bundle, const enkf::StateHistory& history,
                             const data::RawObservation& obs, Rng& rng, StepTrace* trace) {
  return filter_step(bundle, history, Vector(obs.to_vector()), rng, trace);
}

Matrix backward_step(const ModelBundle& bundle, const StepTrace& trace,
                     const Matrix& g_xpost, const Matrix& g_xp_extra,
                     const Vector& g_ymean_extra, BundleGradients& grads) {
  const double denom = static_cast<double>(trace.xp.rows()) - 1.0;
  const double inv_e = 1.0 / static_cast<double>(trace.xp.rows());

  // Xpost = Xp + (Ytil - HX) * K'
  Matrix g_xp = g_xpost;
  const Matrix dmat = trace.ytil - trace.hx;
  Matrix g_d = g_xpost * trace.update.gain_t.transpose();
  const Matrix g_kt = dmat.transpose() * g_xpost;
  Matrix g_ytil = g_d;
  Matrix g_hx = -g_d;

  // K' = S^-1 * G with G = HA' * A / (E-1)
  const Matrix g_g = trace.update.llt.solve(g_kt);
  const Matrix g_s = -g_g * trace.update.gain_t.transpose();
  Matrix g_ha = trace.update.anomalies * g_g.transpose() / denom;
  const Matrix g_a = trace.ha * g_g / denom;

  // S = HA' * HA / (E-1) + diag(R)
  g_ha += trace.ha * (g_s + g_s.transpose()) / denom;
  const Vector g_rdiag = g_s.diagonal();

  // A = centered Xp
  g_xp += enkf::center_members(g_a);

  // R = eps + softplus(raw)
  Vector g_rraw(g_rdiag.size());
  for (Eigen::Index i = 0; i < g_rdiag.size(); ++i) {
    g_rraw[i] = g_rdiag[i] * sigmoid(trace.r_raw[i]);
  }
  Vector g_ymean = nn::backward(bundle.noise, trace.r_tape, g_rraw, grads.noise);
  g_ymean += g_ymean_extra;

  // ymean = column mean of Ytil
  g_ytil.rowwise() += (inv_e * g_ymean).transpose();
  nn::backward_batch(bundle.sensor, trace.s_tape, g_ytil, grads.sensor);

  // HA = centered HX
  g_hx += enkf::center_members(g_ha);
  g_xp += nn::backward_batch(bundle.observation, trace.h_tape, g_hx, grads.observation);

  g_xp += g_xp_extra;
  return nn::backward_batch(bundle.transition, trace.f_tape, g_xp, grads.transition);
}

// --- filter session -------------------------------------------------------------

FilterSession::FilterSession(const ModelBundle& bundle, std::uint64_t seed)
    : bundle_(&bundle), history_(bundle.cfg.window), rng_(seed) {
  reset(data::calibration_rest_state().to_vector());
}

void FilterSession::reset(const Vector& x0) {
  history_.clear();
  ensemble_ = enkf::init_ensemble(x0, bundle_->cfg.ensemble, bundle_->cfg.init_jitter, rng_);
  ensemble_.step = 0;
  history_.push(ensemble_.members);
  step_count_ = 0;
}

enkf::FilterEstimate FilterSession::step(const data::RawObservation& obs, double timestamp) {
  FilterStepResult result = filter_step(*bundle_, history_, obs, rng_);
  ensemble_ = std::move(result.posterior);
  ensemble_.step = ++step_count_;
  history_.push(ensemble_.members);
  result.estimate.timestamp = timestamp;
  result.estimate.warmup = step_count_ <= bundle_->cfg.window;
  return result.estimate;
}

enkf::FilterEstimate FilterSession::predict_only(double timestamp) {
  enkf::TransitionFn transition = [&](const Matrix& windows, Rng& r) {
    return nn::forward_batch(bundle_->transition, windows, bundle_->cfg.transition_dropout, r);
  };
  ensemble_ = enkf::predict(history_, transition, rng_);
  ensemble_.step = ++step_count_;
  history_.push(ensemble_.members);
  enkf::FilterEstimate est = enkf::estimate(ensemble_);
  est.timestamp = timestamp;
  est.warmup = step_count_ <= bundle_->cfg.window;
  return est;
}

// --- training ----------------------------------------------------------------------

std::vector<TrainWindow> make_windows(const std::vector<data::Trajectory>& dataset,
                                      const BundleConfig& cfg, int bptt_steps, int stride) {
  std::vector<TrainWindow> windows;
  for (const data::Trajectory& traj : dataset) {
    const int len = static_cast<int>(traj.samples.size());
    for (int start = cfg.window; start + bptt_steps <= len; start += stride) {
      windows.push_back({&traj, start});
    }
  }
  return windows;
}

namespace {

Matrix replicate_state(const Vector& state, int ensemble) {
  return state.transpose().replicate(ensemble, 1);
}

}  // namespace

LossBreakdown window_loss(const ModelBundle& bundle, const TrainWindow& window,
                          const TrainConfig& cfg, Rng& rng, BundleGradients* grads) {
  const int n = bundle.cfg.window;
  const int dim = bundle.cfg.state_dim;
  if (cfg.ensemble < 2) {
    throw InvalidEnsembleSize("window_loss: training ensemble must be >= 2");
  }
  const int ensemble = cfg.ensemble;
  const int steps = cfg.bptt_steps;
  const auto& samples = window.traj->samples;
  if (window.start < n || window.start + steps > static_cast<int>(samples.size())) {
    throw EmptyDataset("window_loss: window out of trajectory bounds");
  }

  // truncated bundles read the leading components of the sample vectors
  const auto state_of = [&](int k) {
    return Vector(samples[k].state.to_vector().head(dim));
  };
  const auto obs_of = [&](int k) {
    return Vector(samples[k].obs.to_vector().head(bundle.cfg.sensor_input()));
  };

  // teacher forcing: seed the history with replicated ground-truth states
  enkf::StateHistory history(n);
  for (int k = window.start - n; k < window.start; ++k) {
    history.push(replicate_state(state_of(k), ensemble));
  }

  std::vector<StepTrace> traces(grads ? steps : 0);
  LossBreakdown out;
  std::vector<Vector> goal(steps);
  std::vector<Vector> xbar(steps), fbar(steps), ymean(steps);

  for (int k = 0; k < steps; ++k) {
    goal[k] = state_of(window.start + k);
    StepTrace local;
    StepTrace* trace = grads ? &traces[k] : &local;
    filter_step(bundle, history, obs_of(window.start + k), rng, trace);
    history.push(trace->xpost);
    xbar[k] = trace->xpost.colwise().mean().transpose();
    fbar[k] = trace->xp.colwise().mean().transpose();
    ymean[k] = trace->ymean;
    out.end_to_end += nn::mse(xbar[k], goal[k]);
    out.transition += nn::mse(fbar[k], goal[k]);
    out.sensor += nn::mse(ymean[k], goal[k]);
  }
  const double inv_steps = 1.0 / static_cast<double>(steps);
  out.end_to_end *= inv_steps;
  out.transition *= inv_steps;
  out.sensor *= inv_steps;
  out.total = out.end_to_end + cfg.lambda_transition * out.transition +
              cfg.lambda_sensor * out.sensor;

  if (!grads) return out;

  // reverse pass, newest step first; gradients flow into earlier posteriors
  // through the transition windows
  std::vector<Matrix> pending(steps, Matrix::Zero(ensemble, dim));
  const double mse_scale = 2.0 / static_cast<double>(dim);
  const double inv_e = 1.0 / static_cast<double>(ensemble);
  for (int k = steps - 1; k >= 0; --k) {
    Matrix g_xpost = pending[k];
    const Vector g_mean = mse_scale * inv_steps * (xbar[k] - goal[k]);
    g_xpost.rowwise() += (inv_e * g_mean).transpose();

    Matrix g_xp_extra = Matrix::Zero(ensemble, dim);
    const Vector g_fmean =
        mse_scale * inv_steps * cfg.lambda_transition * (fbar[k] - goal[k]);
    g_xp_extra.rowwise() += (inv_e * g_fmean).transpose();

    const Vector g_ymean_extra =
        mse_scale * inv_steps * cfg.lambda_sensor * (ymean[k] - goal[k]);

    const Matrix g_window =
        backward_step(bundle, traces[k], g_xpost, g_xp_extra, g_ymean_extra, *grads);
    for (int j = 0; j < n; ++j) {
      const int src = k - n + j;
      if (src >= 0) {
        pending[src] += g_window.middleCols(static_cast<Eigen::Index>(j) * dim, dim);
      }
    }
  }
  return out;
}

LossBreakdown loss(const ModelBundle& bundle, const std::vector<TrainWindow>& batch,
                   const TrainConfig& cfg, Rng& rng, BundleGradients* grads) {
  if (batch.empty()) {
    throw EmptyDataset("loss: empty batch");
  }
  LossBreakdown total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainWindow& w = batch[i];
    Rng item_rng = rng.fork(i);
    const LossBreakdown l = window_loss(bundle, w, cfg, item_rng, grads);
    total.total += l.total;
    total.end_to_end += l.end_to_end;
    total.transition += l.transition;
    total.sensor += l.sensor;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  total.total *= inv;
  total.end_to_end *= inv;
  total.transition *= inv;
  total.sensor *= inv;
  if (grads) {
    grads->scale(inv);
  }
  return total;
}

TrainResult train(const ModelBundle& bundle, const std::vector<data::Trajectory>& dataset,
                  const TrainConfig& cfg) {
  if (dataset.empty()) {
    throw EmptyDataset("train: no trajectories");
  }

  // trajectory-level split
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(Rng::derive(cfg.seed, 0xdead5eedULL));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(split_rng.uniform01() * i)]);
  }
  std::size_t val_count = static_cast<std::size_t>(
      std::lround(cfg.val_fraction * static_cast<double>(dataset.size())));
  if (val_count == 0 && dataset.size() > 1) val_count = 1;
  if (val_count >= dataset.size()) val_count = dataset.size() - 1;

  std::vector<data::Trajectory> train_set, val_set;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < val_count) {
      val_set.push_back(dataset[order[i]]);
    } else {
      train_set.push_back(dataset[order[i]]);
    }
  }

  ModelBundle current = bundle;
  std::vector<TrainWindow> train_windows =
      make_windows(train_set, current.cfg, cfg.bptt_steps, cfg.stride);
  std::vector<TrainWindow> val_windows =
      make_windows(val_set, current.cfg, cfg.bptt_steps, cfg.stride);
  if (train_windows.empty()) {
    throw EmptyDataset("train: trajectories shorter than one training window");
  }

  TrainResult result;
  result.bundle = current;
  if (cfg.epochs <= 0) {
    return result;
  }

  nn::AdamState adam_f, adam_h, adam_s, adam_r;
  BundleGradients grads = BundleGradients::zeros_like(current);
  double best_val = std::numeric_limits<double>::infinity();

  auto validation_loss = [&](const ModelBundle& b, int epoch) {
    if (val_windows.empty()) return 0.0;
    double total = 0.0;
    TrainConfig eval_cfg = cfg;
    for (std::size_t i = 0; i < val_windows.size(); ++i) {
      Rng item(Rng::derive(cfg.seed, 0xa11dULL + 1000003ULL * i));
      total += window_loss(b, val_windows[i], eval_cfg, item, nullptr).end_to_end;
    }
    (void)epoch;
    return total / static_cast<double>(val_windows.size());
  };

  Rng shuffle_rng(Rng::derive(cfg.seed, 0x5aff1eULL));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = train_windows.size(); i > 1; --i) {
      std::swap(train_windows[i - 1],
                train_windows[static_cast<std::size_t>(shuffle_rng.uniform01() * i)]);
    }
    std::size_t used = train_windows.size();
    if (cfg.max_windows_per_epoch > 0) {
      used = std::min<std::size_t>(used, static_cast<std::size_t>(cfg.max_windows_per_epoch));
    }

    LossBreakdown epoch_loss;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < used; begin += cfg.batch_size) {
      const std::size_t end = std::min(used, begin + static_cast<std::size_t>(cfg.batch_size));
      grads.set_zero();
      LossBreakdown batch_loss;
      for (std::size_t i = begin; i < end; ++i) {
        Rng item(Rng::derive(cfg.seed, 0xb47c4ULL + 7919ULL * epoch + 104729ULL * i));
        const LossBreakdown l = window_loss(current, train_windows[i], cfg, item, &grads);
        batch_loss.total += l.total;
        batch_loss.end_to_end += l.end_to_end;
        batch_loss.transition += l.transition;
        batch_loss.sensor += l.sensor;
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      grads.scale(inv);
      nn::adam_step(current.transition, grads.transition, adam_f, cfg.lr);
      nn::adam_step(current.observation, grads.observation, adam_h, cfg.lr);
      nn::adam_step(current.sensor, grads.sensor, adam_s, cfg.lr);
      nn::adam_step(current.noise, grads.noise, adam_r, cfg.lr);

      epoch_loss.total += batch_loss.total * inv;
      epoch_loss.end_to_end += batch_loss.end_to_end * inv;
      epoch_loss.transition += batch_loss.transition * inv;
      epoch_loss.sensor += batch_loss.sensor * inv;
      ++batches;
    }
    const double inv_batches = batches ? 1.0 / static_cast<double>(batches) : 0.0;
    epoch_loss.total *= inv_batches;
    epoch_loss.end_to_end *= inv_batches;
    epoch_loss.transition *= inv_batches;
    epoch_loss.sensor *= inv_batches;

    EpochMetrics em;
    em.epoch = epoch;
    em.train = epoch_loss;
    em.val_end_to_end = validation_loss(current, epoch);
    const double selector = val_windows.empty() ? epoch_loss.end_to_end : em.val_end_to_end;
    if (selector <= best_val) {
      best_val = selector;
      result.bundle = current;
      em.best = true;
    }
    result.metrics.push_back(em);
  }
  return result;
}

// --- evaluation ------------------------------------------------------------------

double yaw_error_deg(const rot::YawSinCos& a, const rot::YawSinCos& b) {
  const double diff = std::remainder(a.angle() - b.angle(), 2.0 * M_PI);
  return std::abs(diff) * 180.0 / M_PI;
}

namespace {

struct ErrorAccumulator {
  double wrist = 0.0;
  double elbow = 0.0;
  double hip = 0.0;
  long count = 0;

  void add(const data::PoseState& estimate, const data::PoseState& truth,
           const kin::ArmConfig& arm) {
    const kin::ArmPose est_pose =
        kin::forward_kinematics(estimate.upper_arm, estimate.lower_arm, estimate.r_h, arm);
    const kin::ArmPose gt_pose =
        kin::forward_kinematics(truth.upper_arm, truth.lower_arm, truth.r_h, arm);
    wrist += (est_pose.wrist - gt_pose.wrist).norm();
    elbow += (est_pose.elbow - gt_pose.elbow).norm();
    hip += yaw_error_deg(estimate.r_h, truth.r_h);
    ++count;
  }

  EvalMetrics finish(double seconds) const {
    EvalMetrics m;
    if (count > 0) {
      m.wrist_cm = wrist / count * 100.0;
      m.elbow_cm = elbow / count * 100.0;
      m.hip_deg = hip / count;
    }
    m.steps = count;
    if (seconds > 0.0) {
      m.throughput_hz = static_cast<double>(count) / seconds;
    }
    return m;
  }
};

}  // namespace

EvalMetrics evaluate(const ModelBundle& bundle, const std::vector<data::Trajectory>& dataset,
                     const kin::ArmConfig& arm, std::uint64_t seed) {
  if (dataset.empty()) {
    throw EmptyDataset("evaluate: no trajectories");
  }
  ErrorAccumulator acc;
  double filter_seconds = 0.0;
  for (std::size_t ti = 0; ti < dataset.size(); ++ti) {
    const data::Trajectory& traj = dataset[ti];
    FilterSession session(bundle, Rng::derive(seed, ti));
    double t = 0.0;
    bool first = true;
    const auto begin = std::chrono::steady_clock::now();
    std::vector<enkf::FilterEstimate> estimates;
    estimates.reserve(traj.samples.size());
    for (const data::Sample& sample : traj.samples) {
      if (!first) t += sample.obs.dt;
      first = false;
      estimates.push_back(session.step(sample.obs, t));
    }
    filter_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
    for (std::size_t i = 0; i < estimates.size(); ++i) {
      acc.add(data::PoseState::from_vector(estimates[i].mean), traj.samples[i].state, arm);
    }
  }
  return acc.finish(filter_seconds);
}

namespace {

/// A mean state over symmetric data can collapse (zero 6D blocks, zero yaw
/// pair). Fall back to the rest pose for any block kinematics cannot use.
data::PoseState sanitize_pose(const Vector& state) {
  data::PoseState pose = data::PoseState::from_vector(state);
  const data::PoseState rest = data::calibration_rest_state();
  for (rot::SixD data::PoseState::*block : {&data::PoseState::lower_arm, &data::PoseState::upper_arm}) {
    try {
      rot::sixd_to_quat(pose.*block);
    } catch (const DegenerateSixD&) {
      pose.*block = rest.*block;
    }
  }
  if (std::hypot(pose.r_h.s, pose.r_h.c) < 1e-9) {
    pose.r_h = rest.r_h;
  }
  return pose;
}

}  // namespace

EvalMetrics evaluate_constant(const Vector& state, const std::vector<data::Trajectory>& dataset,
                              const kin::ArmConfig& arm) {
  if (dataset.empty()) {
    throw EmptyDataset("evaluate_constant: no trajectories");
  }
  const data::PoseState predicted = sanitize_pose(state);
  ErrorAccumulator acc;
  for (const data::Trajectory& traj : dataset) {
    for (const data::Sample& sample : traj.samples) {
      acc.add(predicted, sample.state, arm);
    }
  }
  return acc.finish(0.0);
}

Vector mean_state(const std::vector<data::Trajectory>& dataset) {
  Vector sum = Vector::Zero(data::kStateDim);
  long count = 0;
  for (const data::Trajectory& traj : dataset) {
    for (const data::Sample& sample : traj.samples) {
      sum += sample.state.to_vector();
      ++count;
    }
  }
  if (count == 0) {
    throw EmptyDataset("mean_state: no samples");
  }
  return sum / static_cast<double>(count);
}

}  // namespace wearpose::models
