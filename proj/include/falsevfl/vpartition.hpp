#pragma once
// Vertically partitioned datasets and per-sample availability.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "falsevfl/dense_matrix.hpp"

namespace falsevfl {

inline constexpr int kFormatVersion = 1;

// N samples split column-wise across K parties. Party k holds an N x d_k block.
struct PartitionedDataset {
  std::vector<std::size_t> dims;
  std::size_t num_samples = 0;
  std::vector<DenseMatrix> blocks;
  // Class index per sample; empty when the dataset carries no labels.
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t num_parties() const { return dims.size(); }
  std::size_t total_dim() const;
  bool has_labels() const { return !labels.empty(); }
  std::span<const double> features(std::size_t sample, std::size_t party) const {
    return blocks[party].row(sample);
  }
  // Throws ConfigError when block shapes, dims or labels disagree.
  void validate() const;
  // Party blocks glued back together in party order: N x sum(d_k).
  DenseMatrix concatenated() const;
  // Splits an N x d matrix into contiguous party blocks.
  static PartitionedDataset from_matrix(const DenseMatrix& features, std::span<const std::size_t> dims,
                                        std::vector<std::size_t> labels = {}, std::size_t num_classes = 0);
  PartitionedDataset subset(std::span<const std::size_t> indices) const;
};

// m[k] = 1 means party k's block is missing; label_missing means u = 1.
// At least one party is always observed.
class AvailabilityRecord {
 public:
  // Throws InvariantError when every party is missing, ConfigError when the
  // mask is empty or holds values other than 0/1.
  AvailabilityRecord(std::vector<std::uint8_t> mask, bool label_missing);
  static AvailabilityRecord fully_observed(std::size_t num_parties, bool label_missing);

  std::size_t num_parties() const { return mask_.size(); }
  bool missing(std::size_t party) const { return mask_[party] != 0; }
  bool label_missing() const { return label_missing_; }
  std::size_t missing_count() const;
  std::span<const std::uint8_t> mask() const { return mask_; }

  AvailabilityRecord with_label_missing(bool label_missing) const;

  friend bool operator==(const AvailabilityRecord&, const AvailabilityRecord&) = default;

 private:
  std::vector<std::uint8_t> mask_;
  bool label_missing_ = true;
};

enum class AlignmentClass { FullyAligned, PartiallyAligned, FullyUnaligned };

std::string_view alignment_name(AlignmentClass c);

// Throws InvariantError when all parties are missing.
AlignmentClass alignment_class(std::span<const std::uint8_t> mask);
// Throws ConfigError when the record does not have `num_parties` entries.
AlignmentClass alignment_class(const AvailabilityRecord& record, std::size_t num_parties);

struct PartyFeatures {
  std::size_t party;
  std::span<const double> x;
};
using ObservedView = std::vector<PartyFeatures>;

// Observed party indices in ascending order.
std::vector<std::size_t> observed_parties(const AvailabilityRecord& record);
ObservedView observed_view(const PartitionedDataset& ds, std::size_t sample, const AvailabilityRecord& record);

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;
};

inline constexpr double kStdFloor = 1e-8;

// Standardizes every feature column to mean 0, std 1 (population std,
// floored at kStdFloor). Requires N >= 2.
std::pair<PartitionedDataset, NormalizationStats> zscore_normalize(const PartitionedDataset& ds);
PartitionedDataset apply_normalization(const PartitionedDataset& ds, const NormalizationStats& stats);

// Dataset CSV: header row, feature columns in party order, then an optional
// label column. With `discard_extra`, trailing feature columns beyond
// sum(party_dims) are dropped; otherwise the widths must match exactly.
struct CsvLoadOptions {
  std::vector<std::size_t> party_dims;
  std::optional<std::string> label_column = std::string("label");
  bool discard_extra = false;
  // When set, labels outside [0, num_classes) are rejected.
  std::optional<std::size_t> num_classes;
};

PartitionedDataset load_csv(const std::filesystem::path& path, const CsvLoadOptions& options);
void save_csv(const PartitionedDataset& ds, const std::filesystem::path& path);

// Mask CSV: header m1,...,mK,u; one 0/1 row per sample.
std::vector<AvailabilityRecord> load_mask_csv(const std::filesystem::path& path);
void save_mask_csv(std::span<const AvailabilityRecord> records, const std::filesystem::path& path);

void save_stats_json(const NormalizationStats& stats, const std::filesystem::path& path);
NormalizationStats load_stats_json(const std::filesystem::path& path);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace falsevfl
