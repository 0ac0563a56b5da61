#include "minibatch.hpp"

#include <algorithm>

#include "falsevfl/error.hpp"
#include "falsevfl/parallel.hpp"

namespace falsevfl::detail {

namespace {
constexpr std::size_t kChunk = 8;
}

TrainReport ascend(ParameterSet& params, std::span<const std::size_t> indices, std::size_t epochs,
                   std::size_t batch_size, const AdamConfig& adam, const RngStream& base,
                   const SampleObjective& objective) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  TrainReport report;
  Adam opt(params, adam);
  const std::size_t nparams = params.size();
  const std::size_t threads = configured_threads();
  std::vector<std::size_t> order(indices.begin(), indices.end());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const RngStream erng = base.split(epoch);
    RngStream shuffle_rng = erng.split(0);
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t b = std::min(batch_size, order.size() - start);
      const std::size_t chunks = (b + kChunk - 1) / kChunk;
      std::vector<GradientBuffer> chunk_grads(chunks, GradientBuffer(nparams));
      std::vector<double> chunk_values(chunks, 0.0);
      parallel_for(
          chunks,
          [&](std::size_t c) {
            const std::size_t end = std::min(b, (c + 1) * kChunk);
            for (std::size_t s = c * kChunk; s < end; ++s) {
              const std::size_t i = order[start + s];
              RngStream srng = erng.split(i + 1);
              Tape tape;
              const Var v = objective(tape, i, srng);
              chunk_values[c] += tape.scalar(v);
              tape.backward(v, &chunk_grads[c], -1.0 / static_cast<double>(b));
            }
          },
          threads);
      GradientBuffer total(nparams);
      for (std::size_t c = 0; c < chunks; ++c) {
        total.accumulate(chunk_grads[c]);
        epoch_sum += chunk_values[c];
      }
      opt.step(params, total);
    }
    report.epoch_mean_bound.push_back(order.empty() ? 0.0 : epoch_sum / static_cast<double>(order.size()));
  }
  report.optimizer_steps = opt.steps();
  report.touched = opt.touched();
  return report;
}

}  // namespace falsevfl::detail
