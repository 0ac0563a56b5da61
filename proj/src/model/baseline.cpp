#include "falsevfl/baseline.hpp"

#include <cmath>
#include <numeric>
#include <set>

#include "../core/text_io.hpp"
#include "falsevfl/error.hpp"
#include "falsevfl/parallel.hpp"
#include "minibatch.hpp"

namespace falsevfl {

void VanillaConfig::validate() const {
  if (embed_dim == 0 || hidden == 0) throw ConfigError("vanilla: embed_dim and hidden must be positive");
  if (!(lr > 0.0) || weight_decay < 0.0) throw ConfigError("vanilla: invalid learning rate or weight decay");
  if (batch_size == 0) throw ConfigError("vanilla: batch_size must be positive");
}

nlohmann::json vanilla_config_to_json(const VanillaConfig& c) {
  return {{"embed_dim", c.embed_dim},       {"hidden", c.hidden},     {"extractor_layers", c.extractor_layers},
          {"fusion_layers", c.fusion_layers}, {"lr", c.lr},           {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},     {"epochs", c.epochs},     {"seed", c.seed}};
}

VanillaConfig vanilla_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("vanilla config must be a JSON object");
  static const std::set<std::string> known{"embed_dim",    "hidden",     "extractor_layers", "fusion_layers", "lr",
                                           "weight_decay", "batch_size", "epochs",           "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("vanilla config: unknown key '" + key + "'");
  VanillaConfig c;
  try {
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.hidden = j.value("hidden", c.hidden);
    c.extractor_layers = j.value("extractor_layers", c.extractor_layers);
    c.fusion_layers = j.value("fusion_layers", c.fusion_layers);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("vanilla config: ") + e.what());
  }
  c.validate();
  return c;
}

VanillaModel VanillaModel::init(std::vector<std::size_t> party_dims, std::size_t num_classes,
                                const VanillaConfig& config, RngStream& rng) {
  config.validate();
  if (party_dims.empty() || num_classes < 2) throw ConfigError("vanilla: need at least one party and two classes");
  VanillaModel m;
  m.party_dims_ = std::move(party_dims);
  m.num_classes_ = num_classes;
  m.config_ = config;
  for (std::size_t k = 0; k < m.party_dims_.size(); ++k) {
    if (m.party_dims_[k] == 0) throw ConfigError("vanilla: zero-width party");
    MlpShape shape{.input = m.party_dims_[k],
                   .hidden = std::vector<std::size_t>(config.extractor_layers, config.hidden),
                   .output = config.embed_dim,
                   .output_activation = Activation::Tanh};
    m.extractors_.push_back(
        Mlp::create(m.params_, "vanilla.party" + std::to_string(k), ParamGroup::Baseline, shape, rng));
  }
  MlpShape fusion{.input = m.party_dims_.size() * config.embed_dim,
                  .hidden = std::vector<std::size_t>(config.fusion_layers, config.hidden),
                  .output = num_classes};
  m.fusion_ = Mlp::create(m.params_, "vanilla.fusion", ParamGroup::Baseline, fusion, rng);
  return m;
}

Var VanillaModel::logits(Tape& tape, const ObservedView& view) const {
  if (view.empty()) throw InvariantError("vanilla: no observed party");
  std::vector<Var> embeddings(party_dims_.size());
  for (const auto& pf : view) {
    if (pf.party >= party_dims_.size() || pf.x.size() != party_dims_[pf.party])
      throw ConfigError("vanilla: party features do not match the model");
    embeddings[pf.party] =
        extractors_[pf.party].forward(tape, params_, tape.constant(DenseMatrix::row_vector(pf.x)));
  }
  for (auto& e : embeddings)
    if (!e.valid()) e = tape.constant(DenseMatrix(1, config_.embed_dim));
  return fusion_.forward(tape, params_, tape.concat_cols(embeddings));
}

std::vector<double> VanillaModel::predict(const ObservedView& view) const {
  Tape tape;
  const auto lp = tape.value(tape.log_softmax_rows(logits(tape, view)));
  std::vector<double> p(num_classes_);
  for (std::size_t c = 0; c < num_classes_; ++c) p[c] = std::exp(lp(0, c));
  return p;
}

VanillaModel vanilla_train(const PartitionedDataset& ds, std::span<const AvailabilityRecord> records,
                           const VanillaConfig& config, TrainReport* report) {
  config.validate();
  if (records.size() != ds.num_samples) throw ConfigError("mask count does not match the dataset");
  std::vector<std::size_t> aligned;
  if (ds.has_labels())
    for (std::size_t i = 0; i < ds.num_samples; ++i)
      if (!records[i].label_missing() && records[i].missing_count() == 0) aligned.push_back(i);
  if (aligned.empty()) throw ConfigError("vanilla training needs at least one labeled, fully aligned sample");
  const RngStream base(config.seed);
  RngStream init_rng = base.split(0);
  VanillaModel model = VanillaModel::init(ds.dims, ds.num_classes, config, init_rng);
  TrainReport r = detail::ascend(model.params(), aligned, config.epochs, config.batch_size,
                                 {.lr = config.lr, .weight_decay = config.weight_decay}, base.split(1),
                                 [&](Tape& tape, std::size_t i, RngStream&) {
                                   const Var lg = model.logits(tape, observed_view(ds, i, records[i]));
                                   return tape.categorical_logpmf_rows(lg, ds.labels[i]);
                                 });
  if (report) *report = std::move(r);
  return model;
}

std::vector<double> vanilla_predict(const VanillaModel& model, const PartitionedDataset& ds, std::size_t sample,
                                    const AvailabilityRecord& record) {
  return model.predict(observed_view(ds, sample, record));
}

EvalMetrics vanilla_evaluate(const VanillaModel& model, const PartitionedDataset& ds,
                             std::span<const AvailabilityRecord> records) {
  if (ds.num_samples == 0) throw ConfigError("evaluation set is empty");
  if (records.size() != ds.num_samples) throw ConfigError("mask count does not match the dataset");
  VanillaModel frozen = model;
  for (std::size_t i = 0; i < frozen.params().size(); ++i) frozen.params()[i].frozen = true;
  std::vector<std::size_t> predicted(ds.num_samples);
  parallel_for(ds.num_samples,
               [&](std::size_t i) { predicted[i] = classify(vanilla_predict(frozen, ds, i, records[i])); });
  return score_predictions(predicted, ds, records);
}

void save_vanilla(const VanillaModel& model, const NormalizationStats* stats, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "vanilla";
  j["party_dims"] = model.party_dims();
  j["num_classes"] = model.num_classes();
  j["config"] = vanilla_config_to_json(model.config());
  if (stats) j["normalization"] = {{"mean", stats->mean}, {"std", stats->std}};
  j["parameters"] = params_to_json(model.params());
  detail::write_json(j, path);
}

VanillaCheckpoint load_vanilla(const std::filesystem::path& path) {
  const auto j = detail::read_json(path);
  detail::check_format_version(j, path);
  if (j.value("kind", std::string()) != "vanilla") throw IoError(path.string() + ": not a vanilla checkpoint");
  VanillaCheckpoint ck;
  try {
    RngStream rng(0);
    ck.model = VanillaModel::init(j.at("party_dims").get<std::vector<std::size_t>>(),
                                  j.at("num_classes").get<std::size_t>(), vanilla_config_from_json(j.at("config")),
                                  rng);
    if (j.contains("normalization")) {
      NormalizationStats s;
      s.mean = j["normalization"].at("mean").get<std::vector<double>>();
      s.std = j["normalization"].at("std").get<std::vector<double>>();
      ck.stats = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  params_from_json(ck.model.params(), j.at("parameters"), path.string());
  return ck;
}

std::string checkpoint_kind(const std::filesystem::path& path) {
  const auto j = detail::read_json(path);
  detail::check_format_version(j, path);
  const std::string kind = j.value("kind", std::string());
  if (kind != "falsevfl" && kind != "vanilla") throw IoError(path.string() + ": unknown checkpoint kind");
  return kind;
}

}  // namespace falsevfl
