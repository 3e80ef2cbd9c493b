#include "haar/mlp.hpp"

#include <cmath>

namespace haar {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMajor>;
using Weights = Eigen::Map<RowMajor>;
using ConstBias = Eigen::Map<const Vector>;
using Bias = Eigen::Map<Vector>;

}  // namespace

void MlpSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) throw ShapeError("MlpSpec: input and output dims must be >= 1");
  for (auto h : hidden) {
    if (h < 1) throw ShapeError("MlpSpec: hidden widths must be >= 1");
  }
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  std::size_t in = input_dim;
  for (auto h : hidden) {
    n += h * in + h;
    in = h;
  }
  return n + output_dim * in + output_dim;
}

Mlp::Mlp(MlpSpec spec, ParamVector& params, const std::string& prefix) : spec_(std::move(spec)) {
  spec_.validate();
  std::size_t in = spec_.input_dim;
  std::vector<std::size_t> widths = spec_.hidden;
  widths.push_back(spec_.output_dim);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    Layer layer;
    layer.in = in;
    layer.out = widths[l];
    layer.w_offset = params.add_segment(prefix + "w" + std::to_string(l), layer.out * layer.in);
    layer.b_offset = params.add_segment(prefix + "b" + std::to_string(l), layer.out);
    layers_.push_back(layer);
    in = widths[l];
  }
}

void Mlp::initialize(ParamVector& params, Rng& rng) const {
  for (const auto& layer : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    double* w = params.data() + layer.w_offset;
    for (std::size_t i = 0; i < layer.in * layer.out; ++i) w[i] = dist(rng);
    std::fill_n(params.data() + layer.b_offset, layer.out, 0.0);
  }
}

void Mlp::check_input(std::size_t rows) const {
  if (rows != spec_.input_dim) {
    throw ShapeError("Mlp: expected input of dimension " + std::to_string(spec_.input_dim) + ", got " +
                     std::to_string(rows));
  }
}

Vector Mlp::forward(const ParamVector& params, std::span<const double> x) const {
  check_input(x.size());
  Vector h = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    ConstWeights w(params.data() + L.w_offset, L.out, L.in);
    ConstBias b(params.data() + L.b_offset, L.out);
    Vector z = w * h + b;
    if (l + 1 < layers_.size()) z = z.array().tanh();
    h = std::move(z);
  }
  return h;
}

Matrix Mlp::forward_batch(const ParamVector& params, const Matrix& x, Trace* trace) const {
  check_input(static_cast<std::size_t>(x.rows()));
  if (trace) {
    trace->layers.clear();
    trace->layers.push_back(x);
  }
  Matrix h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    ConstWeights w(params.data() + L.w_offset, L.out, L.in);
    ConstBias b(params.data() + L.b_offset, L.out);
    Matrix z = w * h;
    z.colwise() += b;
    if (l + 1 < layers_.size()) z = z.array().tanh();
    if (trace) trace->layers.push_back(z);
    h = std::move(z);
  }
  return h;
}

void Mlp::backward(const ParamVector& params, const Trace& trace, const Matrix& d_out, ParamVector& grad) const {
  if (trace.layers.size() != layers_.size() + 1) throw ShapeError("Mlp::backward: trace does not match network");
  if (grad.size() != params.size()) throw ShapeError("Mlp::backward: gradient layout does not match");
  Matrix g = d_out;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Layer& L = layers_[li];
    const Matrix& input = trace.layers[li];
    Weights dw(grad.data() + L.w_offset, L.out, L.in);
    Bias db(grad.data() + L.b_offset, L.out);
    dw.noalias() += g * input.transpose();
    db += g.rowwise().sum();
    if (li == 0) break;
    ConstWeights w(params.data() + L.w_offset, L.out, L.in);
    Matrix back = w.transpose() * g;
    g = back.array() * (1.0 - input.array().square());
  }
}

Matrix Mlp::jvp(const ParamVector& params, const Trace& trace, const ParamVector& direction) const {
  if (trace.layers.size() != layers_.size() + 1) throw ShapeError("Mlp::jvp: trace does not match network");
  if (direction.size() != params.size()) throw ShapeError("Mlp::jvp: direction layout does not match");
  const Eigen::Index n = trace.layers.front().cols();
  Matrix dh = Matrix::Zero(static_cast<Eigen::Index>(spec_.input_dim), n);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    ConstWeights w(params.data() + L.w_offset, L.out, L.in);
    ConstWeights dw(direction.data() + L.w_offset, L.out, L.in);
    ConstBias db(direction.data() + L.b_offset, L.out);
    Matrix dz = dw * trace.layers[l];
    if (l > 0) dz.noalias() += w * dh;
    dz.colwise() += db;
    if (l + 1 < layers_.size()) {
      dh = dz.array() * (1.0 - trace.layers[l + 1].array().square());
    } else {
      dh = std::move(dz);
    }
  }
  return dh;
}

}  // namespace haar
