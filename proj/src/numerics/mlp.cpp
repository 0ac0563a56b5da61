#include "falsevfl/mlp.hpp"

#include <cmath>

#include "falsevfl/error.hpp"

namespace falsevfl {

Mlp Mlp::create(ParameterSet& params, const std::string& prefix, ParamGroup group,
                const MlpShape& shape, RngStream& rng) {
  if (shape.input == 0 || shape.output == 0) throw ConfigError(prefix + ": zero-width MLP");
  std::vector<std::size_t> widths{shape.input};
  widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
  widths.push_back(shape.output);
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i];
    const std::size_t out = widths[i + 1];
    if (out == 0) throw ConfigError(prefix + ": zero-width hidden layer");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseMatrix w(out, in);
    for (double& v : w.flat()) v = bound * (2.0 * rng.uniform() - 1.0);
    const std::string base = prefix + "." + std::to_string(i);
    Layer layer;
    layer.weight = params.add(base + ".weight", group, std::move(w)).index;
    layer.bias = params.add(base + ".bias", group, DenseMatrix(1, out)).index;
    layer.activation = i + 2 == widths.size() ? shape.output_activation : shape.hidden_activation;
    layers.push_back(layer);
  }
  return Mlp(std::move(layers));
}

Var Mlp::forward(Tape& tape, const ParameterSet& params, Var input) const {
  Var h = input;
  for (const Layer& layer : layers_) {
    h = tape.linear(h, tape.parameter(params[layer.weight]), tape.parameter(params[layer.bias]));
    h = tape.activate(h, layer.activation);
  }
  return h;
}

std::size_t Mlp::input_dim(const ParameterSet& params) const {
  return layers_.empty() ? 0 : params[layers_.front().weight].value.cols();
}

std::size_t Mlp::output_dim(const ParameterSet& params) const {
  return layers_.empty() ? 0 : params[layers_.back().weight].value.rows();
}

std::vector<double> mlp_forward(std::span<const DenseLayer> layers, std::span<const double> input,
                                Tape& tape) {
  Var h = tape.constant(DenseMatrix::row_vector(input));
  for (const DenseLayer& layer : layers) {
    if (layer.weight.rows() != layer.bias.size())
      throw ConfigError("mlp_forward: bias length does not match weight rows");
    h = tape.linear(h, tape.constant(layer.weight), tape.constant(DenseMatrix::row_vector(layer.bias)));
    h = tape.activate(h, layer.activation);
  }
  const auto out = tape.value(h).flat();
  return {out.begin(), out.end()};
}

}  // namespace falsevfl
