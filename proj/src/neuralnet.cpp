#include "wearpose/neuralnet.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace wearpose::nn {

namespace fs = std::filesystem;
using nlohmann::json;

MlpParams MlpParams::init(const MlpSpec& spec, Rng& rng) {
  if (spec.dims.size() < 2) {
    throw ShapeMismatch("MlpParams::init: need at least input and output dims");
  }
  if (spec.dropout < 0.0 || spec.dropout >= 1.0) {
    throw InvalidConfig("MlpParams::init: dropout must be in [0, 1)");
  }
  MlpParams p;
  p.spec = spec;
  p.layers.resize(spec.layer_count());
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.dims[l];
    const int out = spec.dims[l + 1];
    const double limit = std::sqrt(6.0 / in);
    Layer& layer = p.layers[l];
    layer.weight.resize(out, in);
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in; ++j) {
        layer.weight(i, j) = rng.uniform(-limit, limit);
      }
    }
    layer.bias = Vector::Zero(out);
  }
  return p;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) {
    n += static_cast<std::size_t>(l.weight.size()) + static_cast<std::size_t>(l.bias.size());
  }
  return n;
}

namespace {

// Maps a flat index to (layer, is_bias, row, col).
template <typename Layers, typename Fn>
decltype(auto) with_flat_index(Layers& layers, std::size_t index, Fn&& fn) {
  for (auto& l : layers) {
    const std::size_t wn = static_cast<std::size_t>(l.weight.size());
    if (index < wn) {
      const Eigen::Index r = static_cast<Eigen::Index>(index) / l.weight.cols();
      const Eigen::Index c = static_cast<Eigen::Index>(index) % l.weight.cols();
      return fn(l.weight(r, c));
    }
    index -= wn;
    const std::size_t bn = static_cast<std::size_t>(l.bias.size());
    if (index < bn) {
      return fn(l.bias(static_cast<Eigen::Index>(index)));
    }
    index -= bn;
  }
  throw ShapeMismatch("parameter index out of range");
}

}  // namespace

double MlpParams::get_parameter(std::size_t index) const {
  return with_flat_index(layers, index, [](const double& v) { return v; });
}

void MlpParams::set_parameter(std::size_t index, double value) {
  with_flat_index(layers, index, [&](double& v) { v = value; });
}

Gradients Gradients::zeros_like(const MlpParams& params) {
  Gradients g;
  g.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    g.layers[l].weight = Matrix::Zero(params.layers[l].weight.rows(), params.layers[l].weight.cols());
    g.layers[l].bias = Vector::Zero(params.layers[l].bias.size());
  }
  return g;
}

void Gradients::set_zero() {
  for (Layer& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

void Gradients::add(const Gradients& other) {
  if (other.layers.size() != layers.size()) {
    throw ShapeMismatch("Gradients::add: layer count mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight += other.layers[l].weight;
    layers[l].bias += other.layers[l].bias;
  }
}

void Gradients::scale(double factor) {
  for (Layer& l : layers) {
    l.weight *= factor;
    l.bias *= factor;
  }
}

double Gradients::get(std::size_t index) const {
  return with_flat_index(layers, index, [](const double& v) { return v; });
}

namespace {

Matrix sample_mask(int rows, int cols, double rate, Rng& rng) {
  Matrix m(rows, cols);
  const double keep = 1.0 - rate;
  const double scale = 1.0 / keep;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      m(i, j) = rng.uniform01() < keep ? scale : 0.0;
    }
  }
  return m;
}

Matrix run_forward(const MlpParams& params, const Matrix& input,
                   const std::vector<Matrix>* given_masks, double rate, Rng* rng,
                   Tape* tape) {
  if (input.cols() != params.spec.input_dim()) {
    throw ShapeMismatch("forward: input width " + std::to_string(input.cols()) +
                        " != expected " + std::to_string(params.spec.input_dim()));
  }
  const int layer_count = params.spec.layer_count();
  const bool dropout = given_masks ? !given_masks->empty() : rate > 0.0;
  if (given_masks && !given_masks->empty() &&
      static_cast<int>(given_masks->size()) != layer_count - 1) {
    throw ShapeMismatch("forward: mask count does not match hidden layer count");
  }
  if (tape) {
    tape->input = input;
    tape->pre_act.assign(layer_count, Matrix());
    tape->layer_input.assign(layer_count, Matrix());
    tape->mask.clear();
    tape->batch = static_cast<int>(input.rows());
    tape->output_dim = params.spec.output_dim();
  }

  Matrix act = input;
  for (int l = 0; l < layer_count; ++l) {
    const Layer& layer = params.layers[l];
    if (tape) tape->layer_input[l] = act;
    Matrix z = act * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (tape) tape->pre_act[l] = z;
    if (l == layer_count - 1) {
      act = std::move(z);  // linear output
      break;
    }
    Matrix h = z.cwiseMax(0.0);
    if (dropout) {
      Matrix m = given_masks ? (*given_masks)[l]
                             : sample_mask(static_cast<int>(h.rows()),
                                           static_cast<int>(h.cols()), rate, *rng);
      h = h.cwiseProduct(m);
      if (tape) tape->mask.push_back(std::move(m));
    }
    act = std::move(h);
  }
  return act;
}

}  // namespace

Matrix forward_batch(const MlpParams& params, const Matrix& input, double dropout_rate,
                     Rng& rng, Tape* tape) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw InvalidConfig("forward: dropout rate must be in [0, 1)");
  }
  return run_forward(params, input, nullptr, dropout_rate, &rng, tape);
}

Matrix forward_batch_masked(const MlpParams& params, const Matrix& input,
                            const std::vector<Matrix>& masks, Tape* tape) {
  return run_forward(params, input, &masks, 0.0, nullptr, tape);
}

Vector forward(const MlpParams& params, const Vector& input, double dropout_rate,
               Rng& rng, Tape* tape) {
  const Matrix out = forward_batch(params, input.transpose(), dropout_rate, rng, tape);
  return out.row(0).transpose();
}

Matrix backward_batch(const MlpParams& params, const Tape& tape, const Matrix& output_grad,
                      Gradients& grads) {
  const int layer_count = params.spec.layer_count();
  if (static_cast<int>(tape.pre_act.size()) != layer_count) {
    throw TapeMismatch("backward: tape does not match parameters");
  }
  if (output_grad.rows() != tape.batch || output_grad.cols() != tape.output_dim) {
    throw TapeMismatch("backward: output gradient shape mismatch");
  }
  if (grads.layers.size() != params.layers.size()) {
    grads = Gradients::zeros_like(params);
  }

  Matrix g_z = output_grad;  // gradient wrt pre-activation of current layer
  for (int l = layer_count - 1; l >= 0; --l) {
    const Layer& layer = params.layers[l];
    grads.layers[l].weight.noalias() += g_z.transpose() * tape.layer_input[l];
    grads.layers[l].bias += g_z.colwise().sum().transpose();
    Matrix g_in = g_z * layer.weight;
    if (l == 0) return g_in;
    // through the previous hidden layer's dropout mask and ReLU
    if (!tape.mask.empty()) {
      g_in = g_in.cwiseProduct(tape.mask[l - 1]);
    }
    g_z = g_in.cwiseProduct(
        (tape.pre_act[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return g_z;  // unreachable for layer_count >= 1
}

Vector backward(const MlpParams& params, const Tape& tape, const Vector& output_grad,
                Gradients& grads) {
  const Matrix g = backward_batch(params, tape, output_grad.transpose(), grads);
  return g.row(0).transpose();
}

double mse(const Vector& prediction, const Vector& target) {
  if (prediction.size() != target.size()) {
    throw ShapeMismatch("mse: length mismatch");
  }
  if (prediction.size() == 0) {
    throw ShapeMismatch("mse: empty vectors");
  }
  return (prediction - target).squaredNorm() / static_cast<double>(prediction.size());
}

void adam_step(MlpParams& params, const Gradients& grads, AdamState& state, double lr) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  if (grads.layers.size() != params.layers.size()) {
    throw ShapeMismatch("adam_step: gradient shape mismatch");
  }
  if (state.m.empty()) {
    state.m.resize(params.layers.size());
    state.v.resize(params.layers.size());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      state.m[l].weight = Matrix::Zero(params.layers[l].weight.rows(), params.layers[l].weight.cols());
      state.m[l].bias = Vector::Zero(params.layers[l].bias.size());
      state.v[l] = state.m[l];
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const Matrix& gw = grads.layers[l].weight;
    const Vector& gb = grads.layers[l].bias;
    if (gw.rows() != params.layers[l].weight.rows() || gw.cols() != params.layers[l].weight.cols()) {
      throw ShapeMismatch("adam_step: layer gradient shape mismatch");
    }
    state.m[l].weight = kBeta1 * state.m[l].weight + (1.0 - kBeta1) * gw;
    state.v[l].weight = kBeta2 * state.v[l].weight.array().matrix() +
                        (1.0 - kBeta2) * gw.cwiseProduct(gw);
    state.m[l].bias = kBeta1 * state.m[l].bias + (1.0 - kBeta1) * gb;
    state.v[l].bias = kBeta2 * state.v[l].bias + (1.0 - kBeta2) * gb.cwiseProduct(gb);

    params.layers[l].weight.array() -=
        lr * (state.m[l].weight / bc1).array() /
        ((state.v[l].weight / bc2).array().sqrt() + kEps);
    params.layers[l].bias.array() -=
        lr * (state.m[l].bias / bc1).array() /
        ((state.v[l].bias / bc2).array().sqrt() + kEps);
  }
}

// --- checkpoint ------------------------------------------------------------

void save_checkpoint(const std::string& dir,
                     const std::vector<std::pair<std::string, const MlpParams*>>& models,
                     const std::string& extra_json) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "wearpose.checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float32-le";
  json jmodels = json::array();
  std::vector<float> blob;
  for (const auto& [name, params] : models) {
    json jm;
    jm["name"] = name;
    jm["dims"] = params->spec.dims;
    jm["dropout"] = params->spec.dropout;
    jm["hidden_activation"] = "relu";
    jm["output_activation"] = "linear";
    json tensors = json::array();
    for (std::size_t l = 0; l < params->layers.size(); ++l) {
      const Layer& layer = params->layers[l];
      tensors.push_back({{"name", name + ".layer" + std::to_string(l) + ".weight"},
                         {"rows", layer.weight.rows()},
                         {"cols", layer.weight.cols()}});
      tensors.push_back({{"name", name + ".layer" + std::to_string(l) + ".bias"},
                         {"rows", layer.bias.size()},
                         {"cols", 1}});
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
          blob.push_back(static_cast<float>(layer.weight(i, j)));
        }
      }
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
        blob.push_back(static_cast<float>(layer.bias(i)));
      }
    }
    jm["tensors"] = std::move(tensors);
    jmodels.push_back(std::move(jm));
  }
  manifest["models"] = std::move(jmodels);
  if (!extra_json.empty()) {
    manifest["extra"] = json::parse(extra_json);
  }

  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw IoError("save_checkpoint: cannot write manifest.json in " + dir);
  mf << manifest.dump(2) << "\n";
  mf.close();

  std::ofstream wf(fs::path(dir) / "weights.bin", std::ios::binary);
  if (!wf) throw IoError("save_checkpoint: cannot write weights.bin in " + dir);
  wf.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!wf) throw IoError("save_checkpoint: short write to weights.bin");
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw IoError("load_checkpoint: cannot open manifest.json in " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw ParseError(std::string("load_checkpoint: bad manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "wearpose.checkpoint") {
    throw SchemaMismatch("load_checkpoint: unrecognized manifest format");
  }

  std::ifstream wf(fs::path(dir) / "weights.bin", std::ios::binary);
  if (!wf) throw IoError("load_checkpoint: cannot open weights.bin in " + dir);
  std::vector<float> blob;
  {
    wf.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(wf.tellg());
    if (bytes % sizeof(float) != 0) {
      throw ParseError("load_checkpoint: weights.bin size not a multiple of 4");
    }
    blob.resize(bytes / sizeof(float));
    wf.seekg(0);
    wf.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(bytes));
    if (!wf) throw IoError("load_checkpoint: short read from weights.bin");
  }

  LoadedCheckpoint out;
  std::size_t cursor = 0;
  for (const json& jm : manifest.at("models")) {
    MlpSpec spec;
    spec.dims = jm.at("dims").get<std::vector<int>>();
    spec.dropout = jm.value("dropout", 0.0);
    MlpParams params;
    params.spec = spec;
    params.layers.resize(spec.layer_count());
    for (int l = 0; l < spec.layer_count(); ++l) {
      const int in = spec.dims[l];
      const int out_dim = spec.dims[l + 1];
      Layer& layer = params.layers[l];
      layer.weight.resize(out_dim, in);
      layer.bias.resize(out_dim);
      const std::size_t need = static_cast<std::size_t>(out_dim) * in + out_dim;
      if (cursor + need > blob.size()) {
        throw ParseError("load_checkpoint: weights.bin shorter than manifest order");
      }
      for (int i = 0; i < out_dim; ++i) {
        for (int j = 0; j < in; ++j) {
          layer.weight(i, j) = static_cast<double>(blob[cursor++]);
        }
      }
      for (int i = 0; i < out_dim; ++i) {
        layer.bias(i) = static_cast<double>(blob[cursor++]);
      }
    }
    out.models.emplace(jm.at("name").get<std::string>(), std::move(params));
  }
  if (cursor != blob.size()) {
    throw ParseError("load_checkpoint: weights.bin longer than manifest order");
  }
  if (manifest.contains("extra")) {
    out.extra_json = manifest["extra"].dump();
  }
  return out;
}

}  // namespace wearpose::nn
