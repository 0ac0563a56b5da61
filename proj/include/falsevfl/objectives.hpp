#pragma once
// Importance-weighted bounds on log p(x_obs) and log p(y, x_obs) for both
// model variants, the Adam optimizer, and the two training stages.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "falsevfl/model.hpp"
#include "falsevfl/parameters.hpp"
#include "falsevfl/rng.hpp"
#include "falsevfl/tape.hpp"
#include "falsevfl/vpartition.hpp"
#include "json.hpp"

namespace falsevfl {

// Per-particle log-ratios are clamped into [-kLogRatioLimit, kLogRatioLimit].
inline constexpr double kLogRatioLimit = 1e6;

// One sample as seen by the bounds: its index into a dataset and its
// availability record.
struct SampleRef {
  const PartitionedDataset* dataset = nullptr;
  std::size_t index = 0;
  const AvailabilityRecord* record = nullptr;
};

// Per-particle log terms (kappa x 1 each). `marginal` holds
// log p(x_obs|h) + log p(h|z) + log p(z) - log q(h|x_obs) - log q(z|h);
// `label` holds log p(y|h) and `mask` sum_k log p(m^k | x^k), each only when
// requested.
struct ParticleTerms {
  // kappa x dim_h latent draws the terms were evaluated at.
  Var h;
  Var marginal;
  Var label;
  Var mask;
  std::size_t kappa = 0;
};

struct TermRequest {
  std::size_t kappa = 1;
  // Class label whose log-probability to add; requires the sample's label.
  std::optional<std::size_t> label;
  // Samples x_mis ~ p(x^k | h) for each missing party and evaluates the
  // missingness indicators. Requires a variant II model.
  bool mask = false;
};

// Draw order from `rng`: h noise (kappa x dim_h), z noise (kappa x dim_z),
// then one kappa x d_k block per missing party in ascending party order.
ParticleTerms particle_terms(Tape& tape, const FalseVflModel& model, const SampleRef& sample,
                             const TermRequest& request, RngStream& rng);

// Sum of the requested terms, clamped by the numeric guard.
Var combined_log_weights(Tape& tape, const ParticleTerms& terms, bool with_label, bool with_mask);
// logsumexp(log_w) - log kappa as a 1 x 1 node.
Var bound_from_log_weights(Tape& tape, Var log_weights);

struct BoundSpec {
  Variant variant = Variant::I;
  bool conditional = false;
  std::size_t kappa = 10;
};

// Dispatches to one of the four bounds. Conditional bounds throw UsageError
// for samples without an available label; variant II requires a variant II
// model.
Var bound(Tape& tape, const FalseVflModel& model, const SampleRef& sample, const BoundSpec& spec, RngStream& rng);

Var marginal_bound_I(Tape& tape, const FalseVflModel& model, const SampleRef& sample, std::size_t kappa,
                     RngStream& rng);
Var conditional_bound_I(Tape& tape, const FalseVflModel& model, const SampleRef& sample, std::size_t kappa,
                        RngStream& rng);
Var marginal_bound_II(Tape& tape, const FalseVflModel& model, const SampleRef& sample, std::size_t kappa,
                      RngStream& rng);
Var conditional_bound_II(Tape& tape, const FalseVflModel& model, const SampleRef& sample, std::size_t kappa,
                         RngStream& rng);

// Plain-value bound estimates from the first kappa particles of one draw of
// max(kappas) particles, for each kappa in `kappas`.
std::vector<double> nested_bound_estimates(std::span<const double> log_weights, std::span<const std::size_t> kappas);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay:
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
// Frozen parameters and parameters without a gradient entry are skipped.
class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig config);

  // Throws ConfigError when the buffer or any gradient shape disagrees with
  // the parameters.
  void step(ParameterSet& params, const GradientBuffer& grads);

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  // Indices of every parameter changed by any step so far.
  const std::vector<bool>& touched() const { return touched_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<DenseMatrix> m_;
  std::vector<DenseMatrix> v_;
  std::vector<bool> touched_;
};

// ---------------------------------------------------------------------------

struct TrainConfig {
  Variant variant = Variant::I;
  std::size_t kappa = 10;
  std::size_t dim_h = 128;
  std::size_t dim_z = 64;
  std::size_t hidden = 128;
  double lr_stage1 = 5e-4;
  double lr_stage2 = 2e-4;
  std::size_t epochs_stage1 = 300;
  std::size_t epochs_stage2 = 300;
  std::size_t batch_size = 128;
  std::size_t batch_size_stage1 = 512;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
  ArchConfig arch(std::vector<std::size_t> party_dims, std::size_t num_classes) const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainReport {
  // Mean per-sample bound over each epoch, measured during the pass.
  std::vector<double> epoch_mean_bound;
  std::size_t optimizer_steps = 0;
  std::vector<bool> touched;
};

// Maximizes the marginal bound over every sample. Trains the generative
// arrays (plus the indicators for variant II), then freezes them.
TrainReport train_stage1(FalseVflModel& model, const PartitionedDataset& ds,
                         std::span<const AvailabilityRecord> records, const TrainConfig& config);

// Maximizes the conditional bound over the discriminator only, on samples
// whose label is available. Throws UsageError when the generative arrays are
// not frozen and ConfigError when no labeled sample exists.
TrainReport train_stage2(FalseVflModel& model, const PartitionedDataset& ds,
                         std::span<const AvailabilityRecord> records, const TrainConfig& config);

// Average bound over the given samples with one fresh draw each.
double mean_bound(const FalseVflModel& model, const PartitionedDataset& ds, std::span<const AvailabilityRecord> records,
                  std::span<const std::size_t> indices, const BoundSpec& spec, const RngStream& rng);

}  // namespace falsevfl
