#pragma once
// Availability-mask generators: MCAR, MAR (two sequential-visit variants) and
// MNAR, plus labeled-subset assignment and summary statistics.
//
// Every generator is a pure function of (dataset, mechanism, seed): sample i
// draws from its own sub-stream rng.split(i), so results do not depend on
// evaluation order. No generator ever emits a record with every party
// missing. MCAR and MNAR redraw the whole mask of a sample until at least
// one party is observed; the MAR variants observe their first visited party
// by construction.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "falsevfl/rng.hpp"
#include "falsevfl/vpartition.hpp"

namespace falsevfl {

enum class MechanismKind { Mcar, Mar1, Mar2, Mnar };

struct MechanismSpec {
  MechanismKind kind = MechanismKind::Mcar;
  double p = 0.0;            // MCAR per-cell / MNAR sign-dependent drop probability
  double threshold = 1.1;    // MAR initial variance threshold
  double budget = 0.7;       // MAR type 2 excess-variance budget
  double decrement = 0.15;   // MAR threshold decrement per non-stopping visit

  static MechanismSpec mcar(double p);
  static MechanismSpec mar1(double threshold = 1.1, double decrement = 0.15);
  static MechanismSpec mar2(double threshold = 0.5, double budget = 0.7, double decrement = 0.15);
  static MechanismSpec mnar(double p);

  // Throws ConfigError for out-of-range parameters.
  void validate() const;
  std::string describe() const;
};

// mcar0, mcar2, mcar5, mar1, mar2, mnar7, mnar9. Throws ConfigError otherwise.
MechanismSpec mechanism_from_name(std::string_view name);
const std::vector<std::string>& named_mechanisms();

struct MaskSet {
  std::vector<AvailabilityRecord> records;
  MechanismSpec spec;
  std::uint64_t seed = 0;

  std::size_t size() const { return records.size(); }
};

// Optional override of the random party visit order used by the MAR
// generators (sample index -> permutation of parties).
using VisitOrderFn = std::function<std::vector<std::size_t>(std::size_t sample)>;

// Throws ConfigError for p outside [0, 1).
MaskSet gen_mcar(const PartitionedDataset& ds, double p, const RngStream& rng);
MaskSet gen_mar_type1(const PartitionedDataset& ds, double threshold, double decrement, const RngStream& rng,
                      const VisitOrderFn& visit_order = {});
MaskSet gen_mar_type2(const PartitionedDataset& ds, double threshold, double budget, double decrement,
                      const RngStream& rng, const VisitOrderFn& visit_order = {});
// Throws ConfigError for p outside (0, 1).
MaskSet gen_mnar(const PartitionedDataset& ds, double p, const RngStream& rng);
MaskSet generate_masks(const PartitionedDataset& ds, const MechanismSpec& spec, const RngStream& rng);

// Population variance of one party's features for one sample.
double piece_variance(std::span<const double> x);

// Number of pieces observed when visiting pieces with these variances in
// order. Type 1 stops at the first variance strictly above the threshold.
std::size_t mar_type1_observed_count(std::span<const double> variances, double threshold, double decrement);
// Type 2 stops once the budget drops to zero or below.
std::size_t mar_type2_observed_count(std::span<const double> variances, double threshold, double budget,
                                     double decrement);

// A uniformly random `labeled_count` subset gets u = 0 (everything else
// u = 1); the first `aligned_labeled_count` of that subset are forced fully
// observed. Throws ConfigError when the counts exceed the sample count.
MaskSet assign_label_availability(MaskSet masks, std::size_t labeled_count, std::size_t aligned_labeled_count,
                                  const RngStream& rng);

struct MaskAudit {
  std::size_t num_samples = 0;
  std::size_t num_parties = 0;
  std::vector<double> party_missing_rate;
  double cell_missing_rate = 0.0;
  std::size_t fully_aligned = 0;
  std::size_t partially_aligned = 0;
  std::size_t fully_unaligned = 0;
  std::size_t labeled = 0;
  double label_rate = 0.0;  // fraction with u = 0
};

MaskAudit audit(std::span<const AvailabilityRecord> records);
inline MaskAudit audit(const MaskSet& masks) { return audit(masks.records); }
std::string audit_to_json(const MaskAudit& a);

}  // namespace falsevfl
