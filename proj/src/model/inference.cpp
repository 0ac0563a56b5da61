#include "falsevfl/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "../core/text_io.hpp"
#include "falsevfl/distributions.hpp"
#include "falsevfl/error.hpp"
#include "falsevfl/parallel.hpp"

namespace falsevfl {
namespace {

std::atomic<std::size_t> g_low_ess{0};

constexpr std::array<AlignmentClass, 3> kClasses{AlignmentClass::FullyAligned, AlignmentClass::PartiallyAligned,
                                                 AlignmentClass::FullyUnaligned};

}  // namespace

std::vector<double> snis_weights(std::span<const double> log_r) {
  if (log_r.empty()) throw ConfigError("snis_weights: no particles");
  const double lse = logsumexp(log_r);
  std::vector<double> w(log_r.size());
  for (std::size_t l = 0; l < log_r.size(); ++l) w[l] = std::exp(log_r[l] - lse);
  return w;
}

Prediction snis_combine(std::span<const double> log_r, const DenseMatrix& class_log_probs) {
  if (class_log_probs.rows() != log_r.size())
    throw ConfigError("snis_combine: one row of class log-probabilities per particle is required");
  const std::vector<double> w = snis_weights(log_r);
  Prediction p;
  p.class_probs.assign(class_log_probs.cols(), 0.0);
  double sum_sq = 0.0;
  for (std::size_t l = 0; l < w.size(); ++l) {
    sum_sq += w[l] * w[l];
    for (std::size_t c = 0; c < class_log_probs.cols(); ++c) p.class_probs[c] += w[l] * std::exp(class_log_probs(l, c));
  }
  p.ess = 1.0 / sum_sq;
  if (p.ess < kLowEssFraction * static_cast<double>(w.size())) g_low_ess.fetch_add(1, std::memory_order_relaxed);
  return p;
}

Prediction snis_predict(const FalseVflModel& model, const SampleRef& sample, const SnisOptions& options,
                        RngStream& rng) {
  if (options.samples == 0) throw ConfigError("SNIS needs at least one particle");
  if (options.mask_term && model.arch().variant != Variant::II)
    throw UsageError("the mask-term weighting requires a variant II model");
  Tape tape;
  TermRequest req;
  req.kappa = options.samples;
  req.mask = options.mask_term;
  const ParticleTerms terms = particle_terms(tape, model, sample, req, rng);
  const Var log_w = combined_log_weights(tape, terms, false, options.mask_term);
  const Var log_py = model.discriminate(tape, terms.h);
  const DenseMatrix& lw = tape.value(log_w);
  return snis_combine(lw.flat(), tape.value(log_py));
}

std::size_t classify(std::span<const double> class_probs) {
  if (class_probs.empty()) throw ConfigError("classify: empty probability vector");
  return static_cast<std::size_t>(std::max_element(class_probs.begin(), class_probs.end()) - class_probs.begin());
}

std::size_t low_ess_warnings() { return g_low_ess.load(); }
void reset_low_ess_warnings() { g_low_ess.store(0); }

EvalMetrics score_predictions(std::span<const std::size_t> predicted, const PartitionedDataset& ds,
                              std::span<const AvailabilityRecord> records) {
  if (ds.num_samples == 0) throw ConfigError("evaluation set is empty");
  if (!ds.has_labels()) throw ConfigError("evaluation set has no labels");
  if (predicted.size() != ds.num_samples || records.size() != ds.num_samples)
    throw ConfigError("prediction, mask and dataset sizes disagree");
  EvalMetrics m;
  m.n = ds.num_samples;
  std::array<std::size_t, 3> correct{};
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < ds.num_samples; ++i) {
    const auto cls = static_cast<std::size_t>(alignment_class(records[i], ds.num_parties()));
    const bool hit = predicted[i] == ds.labels[i];
    ++m.count_by_alignment[cls];
    correct[cls] += hit;
    total_correct += hit;
  }
  m.accuracy = static_cast<double>(total_correct) / static_cast<double>(m.n);
  for (std::size_t c = 0; c < 3; ++c)
    if (m.count_by_alignment[c] > 0)
      m.by_alignment[c] = static_cast<double>(correct[c]) / static_cast<double>(m.count_by_alignment[c]);
  m.predictions.assign(predicted.begin(), predicted.end());
  return m;
}

EvalMetrics evaluate(const FalseVflModel& model, const PartitionedDataset& ds,
                     std::span<const AvailabilityRecord> records, const SnisOptions& options, const RngStream& rng) {
  if (ds.num_samples == 0) throw ConfigError("evaluation set is empty");
  if (records.size() != ds.num_samples) throw ConfigError("mask count does not match the dataset");
  FalseVflModel frozen = model;
  frozen.set_all_frozen(true);
  std::vector<std::size_t> predicted(ds.num_samples);
  std::vector<double> ess(ds.num_samples);
  std::vector<std::uint8_t> low(ds.num_samples);
  parallel_for(ds.num_samples, [&](std::size_t i) {
    RngStream srng = rng.split(i);
    const Prediction p = snis_predict(frozen, SampleRef{&ds, i, &records[i]}, options, srng);
    predicted[i] = classify(p.class_probs);
    ess[i] = p.ess;
    low[i] = p.ess < kLowEssFraction * static_cast<double>(options.samples);
  });
  EvalMetrics m = score_predictions(predicted, ds, records);
  double ess_sum = 0.0;
  for (std::size_t i = 0; i < ds.num_samples; ++i) {
    ess_sum += ess[i];
    m.low_ess += low[i];
  }
  m.ess_mean = ess_sum / static_cast<double>(ds.num_samples);
  return m;
}

nlohmann::json metrics_to_json(const EvalMetrics& m) {
  nlohmann::json by = nlohmann::json::object();
  nlohmann::json counts = nlohmann::json::object();
  for (std::size_t c = 0; c < 3; ++c) {
    const std::string name(alignment_name(kClasses[c]));
    by[name] = m.by_alignment[c] ? nlohmann::json(*m.by_alignment[c]) : nlohmann::json(nullptr);
    counts[name] = m.count_by_alignment[c];
  }
  return {{"format_version", kFormatVersion}, {"accuracy", m.accuracy}, {"n", m.n},
          {"ess_mean", m.ess_mean},           {"low_ess", m.low_ess},   {"by_alignment", by},
          {"counts", counts}};
}

EvalMetrics metrics_from_json(const nlohmann::json& j) {
  EvalMetrics m;
  try {
    if (j.value("format_version", kFormatVersion) != kFormatVersion) throw IoError("metrics: unsupported format_version");
    m.accuracy = j.at("accuracy").get<double>();
    m.n = j.at("n").get<std::size_t>();
    m.ess_mean = j.value("ess_mean", 0.0);
    m.low_ess = j.value("low_ess", std::size_t{0});
    for (std::size_t c = 0; c < 3; ++c) {
      const std::string name(alignment_name(kClasses[c]));
      const auto& v = j.at("by_alignment").at(name);
      if (!v.is_null()) m.by_alignment[c] = v.get<double>();
      if (j.contains("counts")) m.count_by_alignment[c] = j["counts"].value(name, std::size_t{0});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("metrics: ") + e.what());
  }
  return m;
}

void save_metrics(const EvalMetrics& m, const std::filesystem::path& path) {
  detail::write_json(metrics_to_json(m), path);
}

EvalMetrics load_metrics(const std::filesystem::path& path) {
  const auto j = detail::read_json(path);
  detail::check_format_version(j, path);
  return metrics_from_json(j);
}

}  // namespace falsevfl
