#include "falsevfl/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "falsevfl/distributions.hpp"
#include "falsevfl/error.hpp"
#include "falsevfl/parallel.hpp"
#include "minibatch.hpp"

namespace falsevfl {
namespace {

DenseMatrix normal_noise(std::size_t rows, std::size_t cols, RngStream& rng) {
  DenseMatrix m(rows, cols);
  for (double& v : m.flat()) v = rng.normal();
  return m;
}

const AvailabilityRecord& record_of(const SampleRef& s) {
  if (!s.dataset || !s.record) throw UsageError("sample reference is incomplete");
  if (s.index >= s.dataset->num_samples) throw UsageError("sample index out of range");
  if (s.record->num_parties() != s.dataset->num_parties())
    throw ConfigError("availability record does not match the dataset's party count");
  return *s.record;
}

std::size_t label_of(const SampleRef& s) {
  const AvailabilityRecord& rec = record_of(s);
  if (rec.label_missing() || !s.dataset->has_labels())
    throw UsageError("conditional bound requested for a sample without an available label");
  return s.dataset->labels[s.index];
}

}  // namespace

ParticleTerms particle_terms(Tape& tape, const FalseVflModel& model, const SampleRef& sample,
                             const TermRequest& request, RngStream& rng) {
  const AvailabilityRecord& rec = record_of(sample);
  const PartitionedDataset& ds = *sample.dataset;
  const ArchConfig& arch = model.arch();
  if (ds.dims != arch.party_dims) throw ConfigError("dataset party widths do not match the model");
  if (request.kappa == 0) throw ConfigError("kappa must be at least 1");
  if (request.mask && arch.variant != Variant::II) throw UsageError("mask term requires a variant II model");
  const std::size_t kappa = request.kappa;

  const DenseMatrix noise_h = normal_noise(kappa, arch.dim_h, rng);
  const DenseMatrix noise_z = normal_noise(kappa, arch.dim_z, rng);

  const ObservedView view = observed_view(ds, sample.index, rec);
  std::vector<Var> x_obs(arch.num_parties());
  for (const auto& pf : view) x_obs[pf.party] = tape.constant(DenseMatrix::row_vector(pf.x));

  const GaussianVar qh = [&] {
    std::vector<GaussianVar> parts;
    for (const auto& pf : view) parts.push_back(model.encode_party(tape, pf.party, x_obs[pf.party]));
    return aggregate_posterior(tape, parts);
  }();
  const Var h = tape.reparameterize(qh.mean, qh.log_var, noise_h);
  const GaussianVar qz = model.encode_z(tape, h);
  const Var z = tape.reparameterize(qz.mean, qz.log_var, noise_z);
  const GaussianVar ph = model.decode_h(tape, z);

  Var log_w = tape.sub(tape.gaussian_logpdf_rows(h, ph.mean, ph.log_var), tape.gaussian_logpdf_rows(h, qh.mean, qh.log_var));
  log_w = tape.add(log_w, tape.standard_normal_logpdf_rows(z));
  log_w = tape.sub(log_w, tape.gaussian_logpdf_rows(z, qz.mean, qz.log_var));
  for (const auto& pf : view) {
    const GaussianVar px = model.decode_x(tape, h, pf.party);
    log_w = tape.add(log_w, tape.gaussian_logpdf_rows(x_obs[pf.party], px.mean, px.log_var));
  }

  ParticleTerms terms;
  terms.kappa = kappa;
  terms.h = h;
  terms.marginal = log_w;
  if (request.label) {
    if (*request.label >= arch.num_classes) throw ConfigError("label out of range for the discriminator");
    terms.label = tape.categorical_logpmf_rows(model.class_logits(tape, h), *request.label);
  }
  if (request.mask) {
    Var mask_term;
    auto add_term = [&](Var t) { mask_term = mask_term.valid() ? tape.add(mask_term, t) : t; };
    for (std::size_t k = 0; k < arch.num_parties(); ++k) {
      if (!rec.missing(k)) {
        add_term(tape.bernoulli_logpmf_rows(model.missing_logit(tape, k, x_obs[k]), 0.0));
      } else {
        const DenseMatrix noise_x = normal_noise(kappa, arch.party_dims[k], rng);
        const GaussianVar px = model.decode_x(tape, h, k);
        const Var x_mis = tape.reparameterize(px.mean, px.log_var, noise_x);
        add_term(tape.bernoulli_logpmf_rows(model.missing_logit(tape, k, x_mis), 1.0));
      }
    }
    // Observed-only samples produce a single shared row; spread it over the particles.
    if (tape.value(mask_term).rows() != kappa) mask_term = tape.broadcast_rows(mask_term, kappa);
    terms.mask = mask_term;
  }
  return terms;
}

Var combined_log_weights(Tape& tape, const ParticleTerms& terms, bool with_label, bool with_mask) {
  Var w = terms.marginal;
  if (with_label) {
    if (!terms.label.valid()) throw UsageError("label term was not computed");
    w = tape.add(w, terms.label);
  }
  if (with_mask) {
    if (!terms.mask.valid()) throw UsageError("mask term was not computed");
    w = tape.add(w, terms.mask);
  }
  return tape.guard(w, kLogRatioLimit);
}

Var bound_from_log_weights(Tape& tape, Var log_weights) {
  const double kappa = static_cast<double>(tape.value(log_weights).rows());
  return tape.add_scalar(tape.logsumexp_col(log_weights), -std::log(kappa));
}

Var bound(Tape& tape, const FalseVflModel& model, const SampleRef& sample, const BoundSpec& spec, RngStream& rng) {
  if (spec.variant == Variant::II && model.arch().variant != Variant::II)
    throw UsageError("variant II bound requires a variant II model");
  TermRequest req;
  req.kappa = spec.kappa;
  if (spec.conditional) req.label = label_of(sample);
  req.mask = spec.variant == Variant::II;
  const ParticleTerms terms = particle_terms(tape, model, sample, req, rng);
  return bound_from_log_weights(tape, combined_log_weights(tape, terms, spec.conditional, req.mask));
}

Var marginal_bound_I(Tape& tape, const FalseVflModel& model, const SampleRef& sample, std::size_t kappa,
                     RngStream& rng) {
  return bound(tape, model, sample, {Variant::I, false, kappa}, rng);
}

Var conditional_bound_I(Tape& tape, const FalseVflModel& model, const SampleRef& sample, std::size_t kappa,
                        RngStream& rng) {
  return bound(tape, model, sample, {Variant::I, true, kappa}, rng);
}

Var marginal_bound_II(Tape& tape, const FalseVflModel& model, const SampleRef& sample, std::size_t kappa,
                      RngStream& rng) {
  return bound(tape, model, sample, {Variant::II, false, kappa}, rng);
}

Var conditional_bound_II(Tape& tape, const FalseVflModel& model, const SampleRef& sample, std::size_t kappa,
                         RngStream& rng) {
  return bound(tape, model, sample, {Variant::II, true, kappa}, rng);
}

std::vector<double> nested_bound_estimates(std::span<const double> log_weights, std::span<const std::size_t> kappas) {
  std::vector<double> out;
  out.reserve(kappas.size());
  for (std::size_t k : kappas) {
    if (k == 0 || k > log_weights.size()) throw ConfigError("nested_bound_estimates: kappa out of range");
    out.push_back(logsumexp(log_weights.first(k)) - std::log(static_cast<double>(k)));
  }
  return out;
}

Adam::Adam(const ParameterSet& params, AdamConfig config)
    : config_(config), m_(params.size()), v_(params.size()), touched_(params.size(), false) {
  if (!(config.lr > 0.0) || config.weight_decay < 0.0) throw ConfigError("Adam: invalid learning rate or weight decay");
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = DenseMatrix(params[i].value.rows(), params[i].value.cols());
    v_[i] = DenseMatrix(params[i].value.rows(), params[i].value.cols());
  }
}

void Adam::step(ParameterSet& params, const GradientBuffer& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw ConfigError("Adam: gradient buffer does not match the parameter set");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (p.frozen || !grads.has(i)) continue;
    const DenseMatrix& g = grads[i];
    if (!g.same_shape(p.value)) throw ConfigError("Adam: gradient shape mismatch for " + p.name);
    auto theta = p.value.flat();
    auto m = m_[i].flat();
    auto v = v_[i].flat();
    const auto gf = g.flat();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gf[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gf[j] * gf[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      theta[j] -= config_.lr * (m_hat / (std::sqrt(v_hat) + config_.eps) + config_.weight_decay * theta[j]);
    }
    touched_[i] = true;
  }
}

void TrainConfig::validate() const {
  if (kappa == 0) throw ConfigError("kappa must be at least 1");
  if (dim_h == 0 || dim_z == 0 || hidden == 0) throw ConfigError("dim_h, dim_z and hidden must be positive");
  if (!(lr_stage1 > 0.0) || !(lr_stage2 > 0.0)) throw ConfigError("learning rates must be positive");
  if (batch_size == 0 || batch_size_stage1 == 0) throw ConfigError("batch sizes must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
}

ArchConfig TrainConfig::arch(std::vector<std::size_t> party_dims, std::size_t num_classes) const {
  ArchConfig a;
  a.party_dims = std::move(party_dims);
  a.num_classes = num_classes;
  a.dim_h = dim_h;
  a.dim_z = dim_z;
  a.hidden = hidden;
  a.variant = variant;
  return a;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"variant", variant_name(c.variant)},
          {"kappa", c.kappa},
          {"dim_h", c.dim_h},
          {"dim_z", c.dim_z},
          {"hidden", c.hidden},
          {"lr_stage1", c.lr_stage1},
          {"lr_stage2", c.lr_stage2},
          {"epochs_stage1", c.epochs_stage1},
          {"epochs_stage2", c.epochs_stage2},
          {"batch_size", c.batch_size},
          {"batch_size_stage1", c.batch_size_stage1},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  static const std::set<std::string> known{"variant",       "kappa",         "dim_h",      "dim_z",
                                           "hidden",        "lr_stage1",     "lr_stage2",  "epochs_stage1",
                                           "epochs_stage2", "batch_size",    "batch_size_stage1",
                                           "weight_decay",  "seed",          "format_version"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("training config: unknown key '" + key + "'");
  TrainConfig c;
  try {
    if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
    c.kappa = j.value("kappa", c.kappa);
    c.dim_h = j.value("dim_h", c.dim_h);
    c.dim_z = j.value("dim_z", c.dim_z);
    c.hidden = j.value("hidden", c.hidden);
    c.lr_stage1 = j.value("lr_stage1", c.lr_stage1);
    c.lr_stage2 = j.value("lr_stage2", c.lr_stage2);
    c.epochs_stage1 = j.value("epochs_stage1", c.epochs_stage1);
    c.epochs_stage2 = j.value("epochs_stage2", c.epochs_stage2);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.batch_size_stage1 = j.value("batch_size_stage1", c.batch_size_stage1);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainReport train_stage1(FalseVflModel& model, const PartitionedDataset& ds,
                         std::span<const AvailabilityRecord> records, const TrainConfig& config) {
  config.validate();
  if (records.size() != ds.num_samples) throw ConfigError("mask count does not match the dataset");
  std::vector<std::size_t> all(ds.num_samples);
  std::iota(all.begin(), all.end(), std::size_t{0});
  model.set_generative_frozen(false);
  for (std::size_t i = 0; i < model.params().size(); ++i)
    if (is_discriminator_group(model.params()[i].group)) model.params()[i].frozen = true;
  const BoundSpec spec{model.arch().variant, false, config.kappa};
  TrainReport report = detail::ascend(
      model.params(), all, config.epochs_stage1, config.batch_size_stage1,
      {.lr = config.lr_stage1, .weight_decay = config.weight_decay}, RngStream(config.seed).split(1),
      [&](Tape& tape, std::size_t i, RngStream& rng) { return bound(tape, model, {&ds, i, &records[i]}, spec, rng); });
  model.set_generative_frozen(true);
  for (std::size_t i = 0; i < model.params().size(); ++i)
    if (is_discriminator_group(model.params()[i].group)) model.params()[i].frozen = false;
  return report;
}

TrainReport train_stage2(FalseVflModel& model, const PartitionedDataset& ds,
                         std::span<const AvailabilityRecord> records, const TrainConfig& config) {
  config.validate();
  if (records.size() != ds.num_samples) throw ConfigError("mask count does not match the dataset");
  if (!model.generative_frozen()) throw UsageError("stage 2 requires the generative parameters to be frozen");
  std::vector<std::size_t> labeled;
  if (ds.has_labels())
    for (std::size_t i = 0; i < ds.num_samples; ++i)
      if (!records[i].label_missing()) labeled.push_back(i);
  if (labeled.empty()) throw ConfigError("stage 2 needs at least one labeled sample");
  const BoundSpec spec{model.arch().variant, true, config.kappa};
  return detail::ascend(
      model.params(), labeled, config.epochs_stage2, config.batch_size,
      {.lr = config.lr_stage2, .weight_decay = config.weight_decay}, RngStream(config.seed).split(2),
      [&](Tape& tape, std::size_t i, RngStream& rng) { return bound(tape, model, {&ds, i, &records[i]}, spec, rng); });
}

double mean_bound(const FalseVflModel& model, const PartitionedDataset& ds, std::span<const AvailabilityRecord> records,
                  std::span<const std::size_t> indices, const BoundSpec& spec, const RngStream& rng) {
  if (indices.empty()) throw ConfigError("mean_bound: no samples");
  double sum = 0.0;
  for (std::size_t i : indices) {
    RngStream srng = rng.split(i);
    Tape tape;
    sum += tape.scalar(bound(tape, model, SampleRef{&ds, i, &records[i]}, spec, srng));
  }
  return sum / static_cast<double>(indices.size());
}

}  // namespace falsevfl
