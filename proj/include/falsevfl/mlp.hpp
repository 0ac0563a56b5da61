#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "falsevfl/parameters.hpp"
#include "falsevfl/rng.hpp"
#include "falsevfl/tape.hpp"

namespace falsevfl {

struct MlpShape {
  std::size_t input = 0;
  std::vector<std::size_t> hidden;
  std::size_t output = 0;
  Activation hidden_activation = Activation::Tanh;
  Activation output_activation = Activation::Identity;
};

// Feed-forward network whose weights live in a ParameterSet. Layers refer to
// parameters by index, so copying the owning set keeps the network valid.
class Mlp {
 public:
  struct Layer {
    std::size_t weight = 0;  // out x in
    std::size_t bias = 0;    // 1 x out
    Activation activation = Activation::Identity;
  };

  Mlp() = default;
  explicit Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  // Registers "<prefix>.<i>.weight" / ".bias". Weights are uniform in
  // +-1/sqrt(fan_in); biases start at zero.
  static Mlp create(ParameterSet& params, const std::string& prefix, ParamGroup group,
                    const MlpShape& shape, RngStream& rng);

  Var forward(Tape& tape, const ParameterSet& params, Var input) const;

  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t input_dim(const ParameterSet& params) const;
  std::size_t output_dim(const ParameterSet& params) const;

 private:
  std::vector<Layer> layers_;
};

// Standalone layer description for evaluating a network outside a model.
struct DenseLayer {
  DenseMatrix weight;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::Identity;
};

// Forward pass recorded on `tape`; the returned values are also copied out.
// Throws ConfigError when the dimensions do not chain.
std::vector<double> mlp_forward(std::span<const DenseLayer> layers, std::span<const double> input,
                                Tape& tape);

}  // namespace falsevfl
