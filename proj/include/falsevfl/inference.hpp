#pragma once
// Predictive class probabilities by self-normalized importance sampling over
// latent draws h_l ~ q(h | x_obs), and dataset-level accuracy reports.

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "falsevfl/model.hpp"
#include "falsevfl/objectives.hpp"
#include "json.hpp"

namespace falsevfl {

struct SnisOptions {
  std::size_t samples = 50;
  // Adds the missingness-indicator term to each importance weight.
  // Needs a variant II model.
  bool mask_term = false;
};

struct Prediction {
  std::vector<double> class_probs;
  // Effective sample size 1 / sum(w_l^2) of the normalized weights.
  double ess = 0.0;
};

// Draws within an estimate below this fraction of L count as low-ESS.
inline constexpr double kLowEssFraction = 0.05;

// Normalized weights softmax(log_r).
std::vector<double> snis_weights(std::span<const double> log_r);

// Combines per-particle log-ratios (length L) with per-particle class
// log-probabilities (L x C).
Prediction snis_combine(std::span<const double> log_r, const DenseMatrix& class_log_probs);

// Consumes the same noise order as the marginal bound with kappa = L.
Prediction snis_predict(const FalseVflModel& model, const SampleRef& sample, const SnisOptions& options,
                        RngStream& rng);

// Argmax; ties resolve to the lowest class index.
std::size_t classify(std::span<const double> class_probs);

// Process-wide count of predictions whose ESS fell below kLowEssFraction * L.
std::size_t low_ess_warnings();
void reset_low_ess_warnings();

struct EvalMetrics {
  double accuracy = 0.0;
  std::size_t n = 0;
  // Indexed by AlignmentClass; empty when no test sample has that pattern.
  std::array<std::optional<double>, 3> by_alignment{};
  std::array<std::size_t, 3> count_by_alignment{};
  double ess_mean = 0.0;
  std::size_t low_ess = 0;
  std::vector<std::size_t> predictions;
};

// Scores every sample of `ds` (labels required). Sample i draws from
// rng.split(i); work is spread over configured_threads().
EvalMetrics evaluate(const FalseVflModel& model, const PartitionedDataset& ds,
                     std::span<const AvailabilityRecord> records, const SnisOptions& options, const RngStream& rng);

// Accuracy summary from precomputed class predictions.
EvalMetrics score_predictions(std::span<const std::size_t> predicted, const PartitionedDataset& ds,
                              std::span<const AvailabilityRecord> records);

// {format_version, accuracy, n, ess_mean, low_ess, by_alignment{...}, counts{...}}
// with null for alignment patterns that do not occur.
nlohmann::json metrics_to_json(const EvalMetrics& m);
EvalMetrics metrics_from_json(const nlohmann::json& j);
void save_metrics(const EvalMetrics& m, const std::filesystem::path& path);
EvalMetrics load_metrics(const std::filesystem::path& path);

}  // namespace falsevfl
