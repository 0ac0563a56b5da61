#pragma once
// Shared minibatch ascent loop used by both training stages and the baseline.

#include <functional>
#include <span>
#include <vector>

#include "falsevfl/objectives.hpp"

namespace falsevfl::detail {

// Per-sample objective to maximize. Receives the sample's own sub-stream.
using SampleObjective = std::function<Var(Tape&, std::size_t sample, RngStream&)>;

// Each epoch shuffles `indices` with base.split(epoch).split(0); sample i in
// that epoch draws from base.split(epoch).split(i + 1). Gradients of the
// batch-mean objective are reduced over fixed-size chunks in order, so the
// result does not depend on the worker count.
TrainReport ascend(ParameterSet& params, std::span<const std::size_t> indices, std::size_t epochs,
                   std::size_t batch_size, const AdamConfig& adam, const RngStream& base,
                   const SampleObjective& objective);

}  // namespace falsevfl::detail
