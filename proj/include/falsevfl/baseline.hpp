#pragma once
// Vanilla split network: one feature extractor per party, a fusion network
// over the concatenated embeddings, and a class head. A party that is missing
// contributes an all-zero embedding.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "falsevfl/inference.hpp"
#include "falsevfl/mlp.hpp"
#include "falsevfl/objectives.hpp"
#include "falsevfl/vpartition.hpp"
#include "json.hpp"

namespace falsevfl {

struct VanillaConfig {
  std::size_t embed_dim = 64;
  std::size_t hidden = 128;
  std::size_t extractor_layers = 1;
  std::size_t fusion_layers = 1;
  double lr = 5e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json vanilla_config_to_json(const VanillaConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
VanillaConfig vanilla_config_from_json(const nlohmann::json& j);

class VanillaModel {
 public:
  VanillaModel() = default;
  static VanillaModel init(std::vector<std::size_t> party_dims, std::size_t num_classes, const VanillaConfig& config,
                           RngStream& rng);

  const std::vector<std::size_t>& party_dims() const { return party_dims_; }
  std::size_t num_classes() const { return num_classes_; }
  const VanillaConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // 1 x C logits for the parties present in `view`.
  Var logits(Tape& tape, const ObservedView& view) const;
  // Softmax of the logits.
  std::vector<double> predict(const ObservedView& view) const;

 private:
  std::vector<std::size_t> party_dims_;
  std::size_t num_classes_ = 0;
  VanillaConfig config_;
  ParameterSet params_;
  std::vector<Mlp> extractors_;
  Mlp fusion_;
};

// Cross-entropy training on samples that are both labeled and fully aligned.
// Throws ConfigError when there are none. Uses RngStream(config.seed) for
// initialization and batching.
VanillaModel vanilla_train(const PartitionedDataset& ds, std::span<const AvailabilityRecord> records,
                           const VanillaConfig& config, TrainReport* report = nullptr);

std::vector<double> vanilla_predict(const VanillaModel& model, const PartitionedDataset& ds, std::size_t sample,
                                    const AvailabilityRecord& record);

// Accuracy report in the same shape as the FALSE-VFL evaluation.
EvalMetrics vanilla_evaluate(const VanillaModel& model, const PartitionedDataset& ds,
                             std::span<const AvailabilityRecord> records);

void save_vanilla(const VanillaModel& model, const NormalizationStats* stats, const std::filesystem::path& path);
struct VanillaCheckpoint {
  VanillaModel model;
  std::optional<NormalizationStats> stats;
};
VanillaCheckpoint load_vanilla(const std::filesystem::path& path);

// The "kind" field of a checkpoint file: "falsevfl" or "vanilla".
std::string checkpoint_kind(const std::filesystem::path& path);

}  // namespace falsevfl
