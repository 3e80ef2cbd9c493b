#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "haar/common.hpp"
#include "haar/param_vector.hpp"

namespace haar {

enum class Activation { tanh };

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden{32, 32};
  std::size_t output_dim = 1;
  Activation activation = Activation::tanh;

  void validate() const;
  std::size_t param_count() const;
};

/// Fully connected tanh network with a linear output layer.
///
/// The network owns no weights. Construction registers segments
/// "<prefix>w<l>" (row-major, out x in) and "<prefix>b<l>" in a ParamVector,
/// and every call takes the ParamVector to read them from. Batched calls use
/// one column per sample.
class Mlp {
 public:
  /// Activations of every layer for a batch: layers.front() is the input,
  /// layers.back() the linear output, the rest post-tanh hidden values.
  struct Trace {
    std::vector<Matrix> layers;
  };

  Mlp() = default;
  Mlp(MlpSpec spec, ParamVector& params, const std::string& prefix);

  const MlpSpec& spec() const { return spec_; }

  /// Weights uniform in +-1/sqrt(fan_in), biases zero.
  void initialize(ParamVector& params, Rng& rng) const;

  Vector forward(const ParamVector& params, std::span<const double> x) const;
  Matrix forward_batch(const ParamVector& params, const Matrix& x, Trace* trace = nullptr) const;

  /// Accumulates d(sum of <d_out, output>)/d(params) into `grad`.
  void backward(const ParamVector& params, const Trace& trace, const Matrix& d_out, ParamVector& grad) const;

  /// Directional derivative of the batch output along `direction` in parameter space.
  Matrix jvp(const ParamVector& params, const Trace& trace, const ParamVector& direction) const;

 private:
  struct Layer {
    std::size_t w_offset = 0;
    std::size_t b_offset = 0;
    std::size_t in = 0;
    std::size_t out = 0;
  };

  void check_input(std::size_t rows) const;

  MlpSpec spec_;
  std::vector<Layer> layers_;
};

}  // namespace haar
