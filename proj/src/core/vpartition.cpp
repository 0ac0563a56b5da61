#include "falsevfl/vpartition.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "falsevfl/error.hpp"
#include "text_io.hpp"

namespace falsevfl {

std::size_t PartitionedDataset::total_dim() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{0});
}

void PartitionedDataset::validate() const {
  if (dims.empty()) throw ConfigError("dataset has no parties");
  if (blocks.size() != dims.size()) throw ConfigError("dataset: block count != party count");
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (dims[k] == 0) throw ConfigError("dataset: party " + std::to_string(k) + " has zero features");
    if (blocks[k].rows() != num_samples || blocks[k].cols() != dims[k]) {
      throw ConfigError("dataset: block " + std::to_string(k) + " has the wrong shape");
    }
  }
  if (!labels.empty()) {
    if (labels.size() != num_samples) throw ConfigError("dataset: label count != sample count");
    for (std::size_t y : labels)
      if (y >= num_classes) throw ConfigError("dataset: label " + std::to_string(y) + " out of range");
  }
}

DenseMatrix PartitionedDataset::concatenated() const {
  DenseMatrix out(num_samples, total_dim());
  std::size_t offset = 0;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    for (std::size_t i = 0; i < num_samples; ++i)
      std::copy_n(blocks[k].row(i).data(), dims[k], out.row(i).data() + offset);
    offset += dims[k];
  }
  return out;
}

PartitionedDataset PartitionedDataset::from_matrix(const DenseMatrix& features, std::span<const std::size_t> dims,
                                                   std::vector<std::size_t> labels, std::size_t num_classes) {
  PartitionedDataset ds;
  ds.dims.assign(dims.begin(), dims.end());
  if (ds.total_dim() != features.cols()) {
    throw ConfigError("party dims sum to " + std::to_string(ds.total_dim()) + " but there are " +
                      std::to_string(features.cols()) + " feature columns");
  }
  ds.num_samples = features.rows();
  std::size_t offset = 0;
  for (std::size_t d : dims) {
    DenseMatrix block(features.rows(), d);
    for (std::size_t i = 0; i < features.rows(); ++i)
      std::copy_n(features.row(i).data() + offset, d, block.row(i).data());
    ds.blocks.push_back(std::move(block));
    offset += d;
  }
  ds.labels = std::move(labels);
  ds.num_classes = num_classes;
  if (!ds.labels.empty() && ds.num_classes == 0)
    ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.validate();
  return ds;
}

PartitionedDataset PartitionedDataset::subset(std::span<const std::size_t> indices) const {
  PartitionedDataset out;
  out.dims = dims;
  out.num_samples = indices.size();
  out.num_classes = num_classes;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    DenseMatrix block(indices.size(), dims[k]);
    for (std::size_t r = 0; r < indices.size(); ++r) {
      if (indices[r] >= num_samples) throw ConfigError("subset: index out of range");
      std::copy_n(blocks[k].row(indices[r]).data(), dims[k], block.row(r).data());
    }
    out.blocks.push_back(std::move(block));
  }
  if (has_labels()) {
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels[i]);
  }
  return out;
}

AvailabilityRecord::AvailabilityRecord(std::vector<std::uint8_t> mask, bool label_missing)
    : mask_(std::move(mask)), label_missing_(label_missing) {
  if (mask_.empty()) throw ConfigError("availability record with zero parties");
  for (std::uint8_t v : mask_)
    if (v > 1) throw ConfigError("availability mask entries must be 0 or 1");
  if (missing_count() == mask_.size())
    throw InvariantError("availability record with every party missing");
}

AvailabilityRecord AvailabilityRecord::fully_observed(std::size_t num_parties, bool label_missing) {
  return AvailabilityRecord(std::vector<std::uint8_t>(num_parties, 0), label_missing);
}

std::size_t AvailabilityRecord::missing_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

AvailabilityRecord AvailabilityRecord::with_label_missing(bool label_missing) const {
  AvailabilityRecord r = *this;
  r.label_missing_ = label_missing;
  return r;
}

std::string_view alignment_name(AlignmentClass c) {
  switch (c) {
    case AlignmentClass::FullyAligned:
      return "fully_aligned";
    case AlignmentClass::PartiallyAligned:
      return "partially_aligned";
    case AlignmentClass::FullyUnaligned:
      return "fully_unaligned";
  }
  return "unknown";
}

AlignmentClass alignment_class(std::span<const std::uint8_t> mask) {
  const std::size_t k = mask.size();
  const auto missing = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  if (k == 0 || missing == k) throw InvariantError("alignment_class: every party is missing");
  if (missing == 0) return AlignmentClass::FullyAligned;
  if (missing == k - 1) return AlignmentClass::FullyUnaligned;
  return AlignmentClass::PartiallyAligned;
}

AlignmentClass alignment_class(const AvailabilityRecord& record, std::size_t num_parties) {
  if (record.num_parties() != num_parties) throw ConfigError("alignment_class: party count mismatch");
  return alignment_class(record.mask());
}

std::vector<std::size_t> observed_parties(const AvailabilityRecord& record) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < record.num_parties(); ++k)
    if (!record.missing(k)) out.push_back(k);
  return out;
}

ObservedView observed_view(const PartitionedDataset& ds, std::size_t sample, const AvailabilityRecord& record) {
  if (record.num_parties() != ds.num_parties()) throw ConfigError("observed_view: party count mismatch");
  if (sample >= ds.num_samples) throw ConfigError("observed_view: sample index out of range");
  ObservedView view;
  for (std::size_t k : observed_parties(record)) view.push_back({k, ds.features(sample, k)});
  return view;
}

std::pair<PartitionedDataset, NormalizationStats> zscore_normalize(const PartitionedDataset& ds) {
  if (ds.num_samples < 2) throw ConfigError("zscore_normalize: need at least two samples");
  NormalizationStats stats;
  const auto n = static_cast<double>(ds.num_samples);
  for (std::size_t k = 0; k < ds.num_parties(); ++k) {
    for (std::size_t c = 0; c < ds.dims[k]; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < ds.num_samples; ++i) mean += ds.blocks[k](i, c);
      mean /= n;
      double ss = 0.0;
      for (std::size_t i = 0; i < ds.num_samples; ++i) {
        const double d = ds.blocks[k](i, c) - mean;
        ss += d * d;
      }
      stats.mean.push_back(mean);
      stats.std.push_back(std::max(std::sqrt(ss / n), kStdFloor));
    }
  }
  return {apply_normalization(ds, stats), stats};
}

PartitionedDataset apply_normalization(const PartitionedDataset& ds, const NormalizationStats& stats) {
  if (stats.mean.size() != ds.total_dim() || stats.std.size() != ds.total_dim())
    throw ConfigError("normalization stats do not match the feature dimension");
  PartitionedDataset out = ds;
  std::size_t col = 0;
  for (std::size_t k = 0; k < out.num_parties(); ++k) {
    for (std::size_t c = 0; c < out.dims[k]; ++c, ++col) {
      for (std::size_t i = 0; i < out.num_samples; ++i) {
        double& v = out.blocks[k](i, c);
        v = (v - stats.mean[col]) / stats.std[col];
      }
    }
  }
  return out;
}

PartitionedDataset load_csv(const std::filesystem::path& path, const CsvLoadOptions& options) {
  const detail::CsvTable table = detail::read_csv(path);
  std::optional<std::size_t> label_col;
  if (options.label_column) {
    const auto it = std::find(table.header.begin(), table.header.end(), *options.label_column);
    if (it != table.header.end()) label_col = static_cast<std::size_t>(it - table.header.begin());
  }
  const std::size_t feature_cols = table.header.size() - (label_col ? 1 : 0);
  const std::size_t want = std::accumulate(options.party_dims.begin(), options.party_dims.end(), std::size_t{0});
  if (options.party_dims.empty() || want == 0) throw ConfigError("load_csv: party dims are empty");
  if (want > feature_cols || (want < feature_cols && !options.discard_extra)) {
    throw ConfigError("load_csv: party dims sum to " + std::to_string(want) + " but " + path.string() + " has " +
                      std::to_string(feature_cols) + " feature columns");
  }
  DenseMatrix features(table.rows.size(), want);
  std::vector<std::size_t> labels;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    std::size_t f = 0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (label_col && c == *label_col) {
        const long long y = detail::parse_int(row[c], path, table.line_numbers[r], c);
        if (y < 0 || (options.num_classes && static_cast<std::size_t>(y) >= *options.num_classes)) {
          throw IoError(path.string() + ":" + std::to_string(table.line_numbers[r]) + ": unknown label value " +
                        row[c]);
        }
        labels.push_back(static_cast<std::size_t>(y));
        continue;
      }
      // Features beyond the party widths are the discarded trailing columns.
      if (f < want) features(r, f) = detail::parse_double(row[c], path, table.line_numbers[r], c);
      ++f;
    }
  }
  std::size_t num_classes = options.num_classes.value_or(0);
  if (!labels.empty() && num_classes == 0) num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  return PartitionedDataset::from_matrix(features, options.party_dims, std::move(labels), num_classes);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void save_csv(const PartitionedDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  auto out = detail::open_for_write(path);
  detail::write_csv_preamble(out);
  std::size_t col = 0;
  for (std::size_t k = 0; k < ds.num_parties(); ++k) {
    for (std::size_t c = 0; c < ds.dims[k]; ++c, ++col) {
      if (col != 0) out << ',';
      out << "p" << (k + 1) << "_f" << (c + 1);
    }
  }
  if (ds.has_labels()) out << ",label";
  out << '\n';
  for (std::size_t i = 0; i < ds.num_samples; ++i) {
    bool first = true;
    for (std::size_t k = 0; k < ds.num_parties(); ++k) {
      for (double v : ds.features(i, k)) {
        if (!first) out << ',';
        out << format_double(v);
        first = false;
      }
    }
    if (ds.has_labels()) out << ',' << ds.labels[i];
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<AvailabilityRecord> load_mask_csv(const std::filesystem::path& path) {
  const detail::CsvTable table = detail::read_csv(path);
  const std::size_t cols = table.header.size();
  if (cols < 2 || table.header.back() != "u") throw IoError(path.string() + ": mask header must be m1,...,mK,u");
  for (std::size_t k = 0; k + 1 < cols; ++k) {
    if (table.header[k] != "m" + std::to_string(k + 1))
      throw IoError(path.string() + ": mask header must be m1,...,mK,u");
  }
  std::vector<AvailabilityRecord> records;
  records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    std::vector<std::uint8_t> m(cols - 1);
    bool u = false;
    for (std::size_t c = 0; c < cols; ++c) {
      const long long v = detail::parse_int(table.rows[r][c], path, table.line_numbers[r], c);
      if (v != 0 && v != 1) {
        throw IoError(path.string() + ":" + std::to_string(table.line_numbers[r]) + ": mask values must be 0 or 1");
      }
      if (c + 1 == cols) {
        u = v == 1;
      } else {
        m[c] = static_cast<std::uint8_t>(v);
      }
    }
    try {
      records.emplace_back(std::move(m), u);
    } catch (const InvariantError& e) {
      throw InvariantError(path.string() + ":" + std::to_string(table.line_numbers[r]) + ": " + e.what());
    }
  }
  return records;
}

void save_mask_csv(std::span<const AvailabilityRecord> records, const std::filesystem::path& path) {
  if (records.empty()) throw ConfigError("save_mask_csv: no records");
  const std::size_t k = records.front().num_parties();
  auto out = detail::open_for_write(path);
  detail::write_csv_preamble(out);
  for (std::size_t p = 0; p < k; ++p) out << 'm' << (p + 1) << ',';
  out << "u\n";
  for (const auto& rec : records) {
    if (rec.num_parties() != k) throw ConfigError("save_mask_csv: inconsistent party counts");
    for (std::size_t p = 0; p < k; ++p) out << (rec.missing(p) ? 1 : 0) << ',';
    out << (rec.label_missing() ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void save_stats_json(const NormalizationStats& stats, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  j["mean"] = stats.mean;
  j["std"] = stats.std;
  detail::write_json(j, path);
}

NormalizationStats load_stats_json(const std::filesystem::path& path) {
  const auto j = detail::read_json(path);
  detail::check_format_version(j, path);
  NormalizationStats stats;
  try {
    stats.mean = j.at("mean").get<std::vector<double>>();
    stats.std = j.at("std").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (stats.mean.size() != stats.std.size()) throw IoError(path.string() + ": mean/std length mismatch");
  return stats;
}

}  // namespace falsevfl
