#include "falsevfl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "../core/text_io.hpp"
#include "falsevfl/error.hpp"

namespace falsevfl {
namespace {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Identity:
      return "identity";
    case Activation::Tanh:
      return "tanh";
    case Activation::Relu:
      return "relu";
    case Activation::Softplus:
      return "softplus";
    case Activation::Sigmoid:
      return "sigmoid";
  }
  return "identity";
}

Activation parse_activation(const std::string& s) {
  for (Activation a : {Activation::Identity, Activation::Tanh, Activation::Relu, Activation::Softplus})
    if (activation_name(a) == s) return a;
  throw ConfigError("unknown activation '" + s + "' (expected tanh|relu|softplus|identity)");
}

MlpShape shape(std::size_t in, std::size_t width, std::size_t layers, std::size_t out, Activation act) {
  MlpShape s;
  s.input = in;
  s.hidden.assign(layers, width);
  s.output = out;
  s.hidden_activation = act;
  return s;
}

}  // namespace

std::string variant_name(Variant v) { return v == Variant::I ? "I" : "II"; }

Variant parse_variant(const std::string& s) {
  if (s == "I") return Variant::I;
  if (s == "II") return Variant::II;
  throw ConfigError("variant must be \"I\" or \"II\", got '" + s + "'");
}

void ArchConfig::validate() const {
  if (party_dims.empty()) throw ConfigError("architecture: no parties");
  for (std::size_t d : party_dims)
    if (d == 0) throw ConfigError("architecture: zero-width party");
  if (num_classes < 2) throw ConfigError("architecture: need at least two classes");
  if (dim_h == 0 || dim_z == 0) throw ConfigError("architecture: latent dimensions must be positive");
  if (hidden == 0) throw ConfigError("architecture: hidden width must be positive");
}

nlohmann::json arch_to_json(const ArchConfig& a) {
  return {{"party_dims", a.party_dims},
          {"num_classes", a.num_classes},
          {"dim_h", a.dim_h},
          {"dim_z", a.dim_z},
          {"hidden", a.hidden},
          {"variant", variant_name(a.variant)},
          {"activation", activation_name(a.activation)},
          {"party_layers", a.party_layers},
          {"global_layers", a.global_layers},
          {"discriminator_layers", a.discriminator_layers},
          {"indicator_layers", a.indicator_layers}};
}

ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig a;
  try {
    a.party_dims = j.at("party_dims").get<std::vector<std::size_t>>();
    a.num_classes = j.at("num_classes").get<std::size_t>();
    a.dim_h = j.at("dim_h").get<std::size_t>();
    a.dim_z = j.at("dim_z").get<std::size_t>();
    a.hidden = j.at("hidden").get<std::size_t>();
    a.variant = parse_variant(j.at("variant").get<std::string>());
    a.activation = parse_activation(j.value("activation", std::string("tanh")));
    a.party_layers = j.value("party_layers", a.party_layers);
    a.global_layers = j.value("global_layers", a.global_layers);
    a.discriminator_layers = j.value("discriminator_layers", a.discriminator_layers);
    a.indicator_layers = j.value("indicator_layers", a.indicator_layers);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("architecture: ") + e.what());
  }
  a.validate();
  return a;
}

DiagGaussian aggregate_posterior(std::span<const DiagGaussian> parts) {
  if (parts.empty()) throw InvariantError("aggregate_posterior: empty observed set");
  const std::size_t d = parts.front().dim();
  DiagGaussian out;
  out.mean.assign(d, 0.0);
  out.log_var.assign(d, 0.0);
  for (const auto& p : parts) {
    if (p.dim() != d || p.log_var.size() != d) throw ConfigError("aggregate_posterior: dimension mismatch");
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  std::vector<double> terms(parts.size());
  // Terms are summed in sorted order so the result does not depend on party order.
  auto sorted_sum = [&terms] {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
  };
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < parts.size(); ++k) terms[k] = parts[k].mean[i];
    out.mean[i] = sorted_sum() * inv;
    // log sum_k exp(-lv_k), shifted for stability.
    double m = -parts.front().log_var[i];
    for (const auto& p : parts) m = std::max(m, -p.log_var[i]);
    for (std::size_t k = 0; k < parts.size(); ++k) terms[k] = std::exp(-parts[k].log_var[i] - m);
    out.log_var[i] = -(m + std::log(sorted_sum()));
  }
  return out;
}

GaussianVar aggregate_posterior(Tape& tape, std::span<const GaussianVar> parts) {
  if (parts.empty()) throw InvariantError("aggregate_posterior: empty observed set");
  if (parts.size() == 1) return parts.front();
  std::vector<Var> means, log_vars;
  for (const auto& p : parts) {
    means.push_back(p.mean);
    log_vars.push_back(p.log_var);
  }
  return {tape.average(means), tape.precision_pool(log_vars)};
}

FalseVflModel FalseVflModel::init(const ArchConfig& arch, RngStream& rng) {
  arch.validate();
  FalseVflModel m;
  m.arch_ = arch;
  const std::size_t k = arch.num_parties();
  const Activation act = arch.activation;
  for (std::size_t p = 0; p < k; ++p) {
    m.party_encoders_.push_back(Mlp::create(m.params_, "party" + std::to_string(p) + ".encoder",
                                            ParamGroup::PartyEncoder,
                                            shape(arch.party_dims[p], arch.hidden, arch.party_layers, 2 * arch.dim_h, act),
                                            rng));
  }
  for (std::size_t p = 0; p < k; ++p) {
    m.party_decoders_.push_back(Mlp::create(m.params_, "party" + std::to_string(p) + ".decoder",
                                            ParamGroup::PartyDecoder,
                                            shape(arch.dim_h, arch.hidden, arch.party_layers, 2 * arch.party_dims[p], act),
                                            rng));
  }
  m.global_encoder_ = Mlp::create(m.params_, "global.encoder", ParamGroup::GlobalEncoder,
                                  shape(arch.dim_h, arch.hidden, arch.global_layers, 2 * arch.dim_z, act), rng);
  m.global_decoder_ = Mlp::create(m.params_, "global.decoder", ParamGroup::GlobalDecoder,
                                  shape(arch.dim_z, arch.hidden, arch.global_layers, 2 * arch.dim_h, act), rng);
  m.discriminator_ = Mlp::create(m.params_, "discriminator", ParamGroup::Discriminator,
                                 shape(arch.dim_h, arch.hidden, arch.discriminator_layers, arch.num_classes, act), rng);
  if (arch.variant == Variant::II) {
    for (std::size_t p = 0; p < k; ++p) {
      m.indicators_.push_back(Mlp::create(m.params_, "party" + std::to_string(p) + ".indicator",
                                          ParamGroup::MissingIndicator,
                                          shape(arch.party_dims[p], arch.hidden, arch.indicator_layers, 1, act), rng));
    }
  }
  return m;
}

GaussianVar FalseVflModel::gaussian_head(Tape& tape, const Mlp& net, Var input) const {
  const Var out = net.forward(tape, params_, input);
  const std::size_t d = tape.value(out).cols() / 2;
  return {tape.slice_cols(out, 0, d), tape.clamp_min(tape.slice_cols(out, d, 2 * d), kLogVarianceFloor)};
}

GaussianVar FalseVflModel::encode_party(Tape& tape, std::size_t party, Var x) const {
  if (party >= party_encoders_.size()) throw ConfigError("encode_party: party index out of range");
  if (tape.value(x).cols() != arch_.party_dims[party]) throw ConfigError("encode_party: feature width mismatch");
  return gaussian_head(tape, party_encoders_[party], x);
}

GaussianVar FalseVflModel::encode_h(Tape& tape, const ObservedView& view) const {
  std::vector<GaussianVar> parts;
  parts.reserve(view.size());
  for (const auto& pf : view) parts.push_back(encode_party(tape, pf.party, tape.constant(DenseMatrix::row_vector(pf.x))));
  return aggregate_posterior(tape, parts);
}

GaussianVar FalseVflModel::encode_z(Tape& tape, Var h) const {
  if (tape.value(h).cols() != arch_.dim_h) throw ConfigError("encode_z: h width mismatch");
  return gaussian_head(tape, global_encoder_, h);
}

GaussianVar FalseVflModel::decode_h(Tape& tape, Var z) const {
  if (tape.value(z).cols() != arch_.dim_z) throw ConfigError("decode_h: z width mismatch");
  return gaussian_head(tape, global_decoder_, z);
}

GaussianVar FalseVflModel::decode_x(Tape& tape, Var h, std::size_t party) const {
  if (party >= party_decoders_.size()) throw ConfigError("decode_x: party index out of range");
  if (tape.value(h).cols() != arch_.dim_h) throw ConfigError("decode_x: h width mismatch");
  return gaussian_head(tape, party_decoders_[party], h);
}

Var FalseVflModel::class_logits(Tape& tape, Var h) const {
  if (tape.value(h).cols() != arch_.dim_h) throw ConfigError("discriminate: h width mismatch");
  return discriminator_.forward(tape, params_, h);
}

Var FalseVflModel::discriminate(Tape& tape, Var h) const { return tape.log_softmax_rows(class_logits(tape, h)); }

Var FalseVflModel::missing_logit(Tape& tape, std::size_t party, Var x) const {
  if (indicators_.empty()) throw UsageError("missing_logit: model has no missingness indicators");
  if (party >= indicators_.size()) throw ConfigError("missing_logit: party index out of range");
  if (tape.value(x).cols() != arch_.party_dims[party]) throw ConfigError("missing_logit: feature width mismatch");
  return indicators_[party].forward(tape, params_, x);
}

bool is_generative_group(ParamGroup g) {
  return g == ParamGroup::PartyEncoder || g == ParamGroup::PartyDecoder || g == ParamGroup::GlobalEncoder ||
         g == ParamGroup::GlobalDecoder || g == ParamGroup::MissingIndicator;
}

bool is_discriminator_group(ParamGroup g) { return g == ParamGroup::Discriminator; }

void FalseVflModel::set_generative_frozen(bool frozen) {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (is_generative_group(params_[i].group)) params_[i].frozen = frozen;
}

bool FalseVflModel::generative_frozen() const {
  bool any = false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!is_generative_group(params_[i].group)) continue;
    if (!params_[i].frozen) return false;
    any = true;
  }
  return any;
}

void FalseVflModel::set_all_frozen(bool frozen) {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].frozen = frozen;
}

std::uint64_t FalseVflModel::checksum(bool (*select)(ParamGroup)) const {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Parameter& p = params_[i];
    if (select && !select(p.group)) continue;
    for (double v : p.value.flat()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

nlohmann::json params_to_json(const ParameterSet& params) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    const auto flat = p.value.flat();
    arr.push_back({{"name", p.name},
                   {"group", std::string(group_name(p.group))},
                   {"shape", {p.value.rows(), p.value.cols()}},
                   {"values", std::vector<double>(flat.begin(), flat.end())}});
  }
  return arr;
}

void params_from_json(ParameterSet& params, const nlohmann::json& j, const std::string& source) {
  if (!j.is_array()) throw IoError(source + ": parameters must be an array");
  std::vector<bool> seen(params.size(), false);
  try {
    for (const auto& entry : j) {
      const std::string name = entry.at("name").get<std::string>();
      Parameter* p = params.find(name);
      if (!p) throw IoError(source + ": unexpected parameter '" + name + "'");
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto values = entry.at("values").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] != p->value.rows() || shape[1] != p->value.cols() ||
          values.size() != p->value.size()) {
        throw IoError(source + ": shape mismatch for '" + name + "'");
      }
      p->value = DenseMatrix(shape[0], shape[1], values);
      seen[p->index] = true;
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(source + ": malformed parameter entry: " + e.what());
  }
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!seen[i]) throw IoError(source + ": missing parameter '" + params[i].name + "'");
}

void save_checkpoint(const FalseVflModel& model, const NormalizationStats* stats, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "falsevfl";
  j["arch"] = arch_to_json(model.arch());
  j["generative_frozen"] = model.generative_frozen();
  if (stats) j["normalization"] = {{"mean", stats->mean}, {"std", stats->std}};
  j["parameters"] = params_to_json(model.params());
  detail::write_json(j, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto j = detail::read_json(path);
  detail::check_format_version(j, path);
  if (j.value("kind", std::string()) != "falsevfl") throw IoError(path.string() + ": not a FALSE-VFL checkpoint");
  Checkpoint ck;
  RngStream rng(0);
  ck.model = FalseVflModel::init(arch_from_json(j.at("arch")), rng);
  params_from_json(ck.model.params(), j.at("parameters"), path.string());
  ck.model.set_generative_frozen(j.value("generative_frozen", false));
  if (j.contains("normalization")) {
    NormalizationStats s;
    s.mean = j["normalization"].at("mean").get<std::vector<double>>();
    s.std = j["normalization"].at("std").get<std::vector<double>>();
    ck.stats = std::move(s);
  }
  return ck;
}

}  // namespace falsevfl
