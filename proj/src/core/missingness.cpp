#include "falsevfl/missingness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "falsevfl/error.hpp"
#include "json.hpp"

namespace falsevfl {
namespace {

std::vector<std::size_t> random_order(std::size_t k, RngStream& rng) {
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

// Redraws the whole mask until at least one party is observed.
template <class DropProb>
AvailabilityRecord draw_with_rejection(std::size_t k, RngStream& rng, DropProb drop_prob) {
  std::vector<std::uint8_t> m(k);
  while (true) {
    std::size_t missing = 0;
    for (std::size_t j = 0; j < k; ++j) {
      m[j] = rng.bernoulli(drop_prob(j)) ? 1 : 0;
      missing += m[j];
    }
    if (missing < k) return AvailabilityRecord(m, true);
  }
}

AvailabilityRecord mask_from_visits(std::size_t k, std::span<const std::size_t> order, std::size_t observed) {
  std::vector<std::uint8_t> m(k, 1);
  for (std::size_t i = 0; i < observed; ++i) m[order[i]] = 0;
  return AvailabilityRecord(std::move(m), true);
}

template <class CountFn>
MaskSet gen_sequential(const PartitionedDataset& ds, const RngStream& rng, const VisitOrderFn& visit_order,
                       CountFn count) {
  const std::size_t k = ds.num_parties();
  MaskSet out;
  out.seed = rng.seed();
  out.records.reserve(ds.num_samples);
  std::vector<double> variances(k);
  for (std::size_t i = 0; i < ds.num_samples; ++i) {
    std::vector<std::size_t> order;
    if (visit_order) {
      order = visit_order(i);
      std::vector<std::size_t> sorted = order;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t j = 0; j < sorted.size(); ++j)
        if (sorted.size() != k || sorted[j] != j) throw ConfigError("visit order is not a permutation of the parties");
    } else {
      RngStream sub = rng.split(i);
      order = random_order(k, sub);
    }
    for (std::size_t j = 0; j < k; ++j) variances[j] = piece_variance(ds.features(i, order[j]));
    out.records.push_back(mask_from_visits(k, order, count(std::span<const double>(variances))));
  }
  return out;
}

}  // namespace

MechanismSpec MechanismSpec::mcar(double p) {
  MechanismSpec s;
  s.kind = MechanismKind::Mcar;
  s.p = p;
  return s;
}

MechanismSpec MechanismSpec::mar1(double threshold, double decrement) {
  MechanismSpec s;
  s.kind = MechanismKind::Mar1;
  s.threshold = threshold;
  s.decrement = decrement;
  return s;
}

MechanismSpec MechanismSpec::mar2(double threshold, double budget, double decrement) {
  MechanismSpec s;
  s.kind = MechanismKind::Mar2;
  s.threshold = threshold;
  s.budget = budget;
  s.decrement = decrement;
  return s;
}

MechanismSpec MechanismSpec::mnar(double p) {
  MechanismSpec s;
  s.kind = MechanismKind::Mnar;
  s.p = p;
  return s;
}

void MechanismSpec::validate() const {
  switch (kind) {
    case MechanismKind::Mcar:
      if (!(p >= 0.0 && p < 1.0)) throw ConfigError("MCAR probability must lie in [0, 1)");
      break;
    case MechanismKind::Mnar:
      if (!(p > 0.0 && p < 1.0)) throw ConfigError("MNAR probability must lie in (0, 1)");
      break;
    case MechanismKind::Mar2:
      if (!(budget > 0.0) || !std::isfinite(budget)) throw ConfigError("MAR budget must be positive and finite");
      [[fallthrough]];
    case MechanismKind::Mar1:
      if (!std::isfinite(threshold)) throw ConfigError("MAR threshold must be finite");
      if (!(decrement > 0.0) || !std::isfinite(decrement)) throw ConfigError("MAR decrement must be positive");
      break;
  }
}

std::string MechanismSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case MechanismKind::Mcar:
      os << "mcar(p=" << p << ")";
      break;
    case MechanismKind::Mar1:
      os << "mar1(T=" << threshold << ", delta=" << decrement << ")";
      break;
    case MechanismKind::Mar2:
      os << "mar2(T=" << threshold << ", B=" << budget << ", delta=" << decrement << ")";
      break;
    case MechanismKind::Mnar:
      os << "mnar(p=" << p << ")";
      break;
  }
  return os.str();
}

const std::vector<std::string>& named_mechanisms() {
  static const std::vector<std::string> names{"mcar0", "mcar2", "mcar5", "mar1", "mar2", "mnar7", "mnar9"};
  return names;
}

MechanismSpec mechanism_from_name(std::string_view name) {
  if (name == "mcar0") return MechanismSpec::mcar(0.0);
  if (name == "mcar2") return MechanismSpec::mcar(0.2);
  if (name == "mcar5") return MechanismSpec::mcar(0.5);
  if (name == "mar1") return MechanismSpec::mar1();
  if (name == "mar2") return MechanismSpec::mar2();
  if (name == "mnar7") return MechanismSpec::mnar(0.7);
  if (name == "mnar9") return MechanismSpec::mnar(0.9);
  throw ConfigError("unknown mechanism name '" + std::string(name) +
                    "' (expected mcar0|mcar2|mcar5|mar1|mar2|mnar7|mnar9)");
}

double piece_variance(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(x.size());
}

std::size_t mar_type1_observed_count(std::span<const double> variances, double threshold, double decrement) {
  double t = threshold;
  for (std::size_t i = 0; i < variances.size(); ++i) {
    if (variances[i] > t) return i + 1;
    t -= decrement;
  }
  return variances.size();
}

std::size_t mar_type2_observed_count(std::span<const double> variances, double threshold, double budget,
                                     double decrement) {
  double t = threshold;
  double b = budget;
  for (std::size_t i = 0; i < variances.size(); ++i) {
    if (variances[i] > t) b -= variances[i] - t;
    if (b <= 0.0) return i + 1;
    t -= decrement;
  }
  return variances.size();
}

MaskSet gen_mcar(const PartitionedDataset& ds, double p, const RngStream& rng) {
  const MechanismSpec spec = MechanismSpec::mcar(p);
  spec.validate();
  MaskSet out;
  out.spec = spec;
  out.seed = rng.seed();
  out.records.reserve(ds.num_samples);
  for (std::size_t i = 0; i < ds.num_samples; ++i) {
    RngStream sub = rng.split(i);
    out.records.push_back(draw_with_rejection(ds.num_parties(), sub, [p](std::size_t) { return p; }));
  }
  return out;
}

MaskSet gen_mar_type1(const PartitionedDataset& ds, double threshold, double decrement, const RngStream& rng,
                      const VisitOrderFn& visit_order) {
  const MechanismSpec spec = MechanismSpec::mar1(threshold, decrement);
  spec.validate();
  MaskSet out = gen_sequential(ds, rng, visit_order, [&](std::span<const double> v) {
    return mar_type1_observed_count(v, threshold, decrement);
  });
  out.spec = spec;
  return out;
}

MaskSet gen_mar_type2(const PartitionedDataset& ds, double threshold, double budget, double decrement,
                      const RngStream& rng, const VisitOrderFn& visit_order) {
  const MechanismSpec spec = MechanismSpec::mar2(threshold, budget, decrement);
  spec.validate();
  MaskSet out = gen_sequential(ds, rng, visit_order, [&](std::span<const double> v) {
    return mar_type2_observed_count(v, threshold, budget, decrement);
  });
  out.spec = spec;
  return out;
}

MaskSet gen_mnar(const PartitionedDataset& ds, double p, const RngStream& rng) {
  const MechanismSpec spec = MechanismSpec::mnar(p);
  spec.validate();
  MaskSet out;
  out.spec = spec;
  out.seed = rng.seed();
  out.records.reserve(ds.num_samples);
  const std::size_t k = ds.num_parties();
  std::vector<double> drop(k);
  for (std::size_t i = 0; i < ds.num_samples; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto x = ds.features(i, j);
      const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
      drop[j] = mean < 0.0 ? p : 1.0 - p;
    }
    RngStream sub = rng.split(i);
    out.records.push_back(draw_with_rejection(k, sub, [&drop](std::size_t j) { return drop[j]; }));
  }
  return out;
}

MaskSet generate_masks(const PartitionedDataset& ds, const MechanismSpec& spec, const RngStream& rng) {
  switch (spec.kind) {
    case MechanismKind::Mcar:
      return gen_mcar(ds, spec.p, rng);
    case MechanismKind::Mar1:
      return gen_mar_type1(ds, spec.threshold, spec.decrement, rng);
    case MechanismKind::Mar2:
      return gen_mar_type2(ds, spec.threshold, spec.budget, spec.decrement, rng);
    case MechanismKind::Mnar:
      return gen_mnar(ds, spec.p, rng);
  }
  throw ConfigError("unknown mechanism kind");
}

MaskSet assign_label_availability(MaskSet masks, std::size_t labeled_count, std::size_t aligned_labeled_count,
                                  const RngStream& rng) {
  const std::size_t n = masks.records.size();
  if (labeled_count > n) throw ConfigError("labeled count exceeds the number of samples");
  if (aligned_labeled_count > labeled_count) throw ConfigError("aligned labeled count exceeds the labeled count");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  RngStream sub = rng.split(0x1abe1);
  sub.shuffle(std::span<std::size_t>(idx));
  for (auto& rec : masks.records) rec = rec.with_label_missing(true);
  for (std::size_t j = 0; j < labeled_count; ++j) {
    AvailabilityRecord& rec = masks.records[idx[j]];
    rec = j < aligned_labeled_count ? AvailabilityRecord::fully_observed(rec.num_parties(), false)
                                    : rec.with_label_missing(false);
  }
  return masks;
}

MaskAudit audit(std::span<const AvailabilityRecord> records) {
  MaskAudit a;
  a.num_samples = records.size();
  if (records.empty()) return a;
  a.num_parties = records.front().num_parties();
  a.party_missing_rate.assign(a.num_parties, 0.0);
  std::size_t missing_cells = 0;
  for (const auto& r : records) {
    if (r.num_parties() != a.num_parties) throw ConfigError("audit: inconsistent party counts");
    for (std::size_t k = 0; k < a.num_parties; ++k) {
      if (r.missing(k)) {
        a.party_missing_rate[k] += 1.0;
        ++missing_cells;
      }
    }
    switch (alignment_class(r.mask())) {
      case AlignmentClass::FullyAligned:
        ++a.fully_aligned;
        break;
      case AlignmentClass::PartiallyAligned:
        ++a.partially_aligned;
        break;
      case AlignmentClass::FullyUnaligned:
        ++a.fully_unaligned;
        break;
    }
    if (!r.label_missing()) ++a.labeled;
  }
  const auto n = static_cast<double>(a.num_samples);
  for (double& v : a.party_missing_rate) v /= n;
  a.cell_missing_rate = static_cast<double>(missing_cells) / (n * static_cast<double>(a.num_parties));
  a.label_rate = static_cast<double>(a.labeled) / n;
  return a;
}

std::string audit_to_json(const MaskAudit& a) {
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  j["n"] = a.num_samples;
  j["parties"] = a.num_parties;
  j["party_missing_rate"] = a.party_missing_rate;
  j["cell_missing_rate"] = a.cell_missing_rate;
  j["alignment"] = {{"fully_aligned", a.fully_aligned},
                    {"partially_aligned", a.partially_aligned},
                    {"fully_unaligned", a.fully_unaligned}};
  j["labeled"] = a.labeled;
  j["label_rate"] = a.label_rate;
  return j.dump(2);
}

}  // namespace falsevfl
