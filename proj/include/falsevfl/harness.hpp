#pragma once
// Synthetic data, experiment configuration and the train-pattern x
// test-pattern grid runner.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <variant>
#include <string>
#include <vector>

#include "falsevfl/baseline.hpp"
#include "falsevfl/inference.hpp"
#include "falsevfl/missingness.hpp"
#include "falsevfl/objectives.hpp"
#include "json.hpp"

namespace falsevfl {

// Class-conditional isotropic Gaussians split vertically across parties.
struct SyntheticSpec {
  std::size_t num_classes = 2;
  std::size_t samples_per_class = 100;
  DenseMatrix class_means;  // C x d
  double std = 1.0;
  std::vector<std::size_t> party_dims;

  std::size_t dim() const;
  // Throws ConfigError unless d = sum(party_dims), std > 0 and the mean
  // matrix is C x d.
  void validate() const;

  // Mutually orthogonal class means with pairwise distance separation * std.
  // Requires num_classes <= d.
  static SyntheticSpec orthogonal(std::size_t num_classes, std::vector<std::size_t> party_dims, double separation,
                                  double std, std::size_t samples_per_class, RngStream& rng);
};

// samples_per_class draws per class, in shuffled order.
PartitionedDataset gen_synthetic(const SyntheticSpec& spec, RngStream& rng);

// Bayes accuracy of two equiprobable isotropic Gaussians at the given mean
// distance and std.
double two_class_bayes_accuracy(double mean_distance, double std);

struct SyntheticSource {
  std::size_t num_classes = 3;
  std::vector<std::size_t> party_dims{3, 3, 3, 3};
  double separation = 4.0;
  double std = 1.0;
  std::size_t train_per_class = 800;
  std::size_t test_per_class = 200;
};

struct CsvSource {
  std::filesystem::path train;
  std::filesystem::path test;
  std::vector<std::size_t> party_dims;
  std::string label_column = "label";
  bool discard_extra = false;
  std::optional<std::size_t> num_classes;
};

struct ExperimentConfig {
  std::variant<SyntheticSource, CsvSource> data;
  std::size_t labeled = 200;
  std::size_t aligned = 50;
  std::vector<std::string> train_patterns{"mcar2"};
  std::vector<std::string> test_patterns{"mcar0", "mcar2", "mcar5", "mar1", "mar2", "mnar7", "mnar9"};
  // Any of "falsevfl-I", "falsevfl-II", "vanilla".
  std::vector<std::string> methods{"falsevfl-I"};
  TrainConfig falsevfl;
  VanillaConfig vanilla;
  SnisOptions snis;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir = "out";

  // Throws ConfigError for empty seed/pattern/method lists, unknown names or
  // invalid nested settings.
  void validate() const;
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& c);
// Relative CSV paths resolve against `base_dir`.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct CellResult {
  std::string train_pattern;
  std::uint64_t seed = 0;
  std::string method;
  std::string test_pattern;
  EvalMetrics metrics;
};

struct SummaryRow {
  std::string test_pattern;
  double mean_acc = 0.0;
  // Sample standard deviation across seeds; zero for a single seed.
  double std_acc = 0.0;
  std::size_t n_seeds = 0;
};

struct ExperimentResult {
  std::vector<CellResult> cells;
  // Keyed by (train pattern, method); rows follow the configured test order.
  std::map<std::pair<std::string, std::string>, std::vector<SummaryRow>> summaries;

  // Accuracies over seeds for one (train, method, test) triple.
  std::vector<double> accuracies(const std::string& train, const std::string& method, const std::string& test) const;
};

// Seed-level inputs of one grid cell: normalized train/test sets and the
// train masks (with labels assigned) for a training pattern.
struct PreparedData {
  PartitionedDataset train;
  PartitionedDataset test;
  NormalizationStats stats;
};
PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);
MaskSet train_masks(const ExperimentConfig& config, const PartitionedDataset& train, const std::string& pattern,
                    std::uint64_t seed);
// Test masks keep every label available.
MaskSet test_masks(const PartitionedDataset& test, const std::string& pattern, std::uint64_t seed);

// Writes <out>/<train>/seed<k>/<method>/<test>.json, a checkpoint per
// (train, seed, method), the train masks per (train, seed), and
// <out>/<train>/<method>/summary.csv. Identical configs produce identical
// files.
ExperimentResult run_experiment(const ExperimentConfig& config);

std::vector<SummaryRow> summarize(const std::vector<std::string>& test_patterns,
                                  const std::vector<CellResult>& cells, const std::string& train,
                                  const std::string& method);
void save_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);
std::vector<SummaryRow> load_summary_csv(const std::filesystem::path& path);

// Line chart of mean accuracy per test pattern, one series per entry.
struct PlotSeries {
  std::string label;
  std::vector<SummaryRow> rows;
};
std::string accuracy_svg(const std::vector<PlotSeries>& series, const std::string& title);

}  // namespace falsevfl
