#pragma once
// The latent-variable model: per-party Gaussian encoders q(h | x^k) fused by
// precision pooling, a global encoder q(z | h), decoders p(h | z) and
// p(x^k | h), a discriminator p(y | h), and (variant II) per-party
// missingness indicators p(m^k | x^k).
//
// Every network head works on row batches, so the same call evaluates one
// particle or kappa particles at once.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "falsevfl/distributions.hpp"
#include "falsevfl/mlp.hpp"
#include "falsevfl/parameters.hpp"
#include "falsevfl/rng.hpp"
#include "falsevfl/tape.hpp"
#include "falsevfl/vpartition.hpp"
#include "json.hpp"

namespace falsevfl {

enum class Variant { I, II };

std::string variant_name(Variant v);
// Accepts "I" or "II". Throws ConfigError otherwise.
Variant parse_variant(const std::string& s);

struct ArchConfig {
  std::vector<std::size_t> party_dims;
  std::size_t num_classes = 2;
  std::size_t dim_h = 128;
  std::size_t dim_z = 64;
  std::size_t hidden = 128;
  Variant variant = Variant::I;
  Activation activation = Activation::Tanh;
  // Hidden-layer counts; zero makes the network a single affine map.
  std::size_t party_layers = 2;
  std::size_t global_layers = 2;
  std::size_t discriminator_layers = 1;
  std::size_t indicator_layers = 1;

  std::size_t num_parties() const { return party_dims.size(); }
  // Throws ConfigError for empty or zero-sized entries.
  void validate() const;
};

nlohmann::json arch_to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const nlohmann::json& j);

// Tape handles for a diagonal Gaussian with one row per particle (or a
// single row shared by all particles).
struct GaussianVar {
  Var mean;
  Var log_var;
};

// Plain-value fusion: mean is the arithmetic average of the party means,
// variance is the inverse of the summed precisions. Throws InvariantError for
// an empty list and ConfigError for mismatched dimensions.
DiagGaussian aggregate_posterior(std::span<const DiagGaussian> parts);
// Same rule on the tape.
GaussianVar aggregate_posterior(Tape& tape, std::span<const GaussianVar> parts);

class FalseVflModel {
 public:
  FalseVflModel() = default;
  // Random initialization; every weight is uniform in +-1/sqrt(fan_in) and
  // every bias (including the log-variance halves) starts at zero.
  static FalseVflModel init(const ArchConfig& arch, RngStream& rng);

  const ArchConfig& arch() const { return arch_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // q(h | x^k) for one party; x has d_k columns.
  GaussianVar encode_party(Tape& tape, std::size_t party, Var x) const;
  // q(h | x_obs) as a single row.
  GaussianVar encode_h(Tape& tape, const ObservedView& view) const;
  GaussianVar encode_z(Tape& tape, Var h) const;
  GaussianVar decode_h(Tape& tape, Var z) const;
  GaussianVar decode_x(Tape& tape, Var h, std::size_t party) const;
  // Raw discriminator outputs and their log-softmax, one row per input row.
  Var class_logits(Tape& tape, Var h) const;
  Var discriminate(Tape& tape, Var h) const;
  // Bernoulli logit of the party being missing. Variant II only.
  Var missing_logit(Tape& tape, std::size_t party, Var x) const;

  // Freezes (or thaws) every generative array plus the missingness
  // indicators; the discriminator is untouched.
  void set_generative_frozen(bool frozen);
  bool generative_frozen() const;
  void set_all_frozen(bool frozen);
  // FNV-1a over the bytes of every array whose group matches `select`.
  std::uint64_t checksum(bool (*select)(ParamGroup)) const;

 private:
  GaussianVar gaussian_head(Tape& tape, const Mlp& net, Var input) const;

  ArchConfig arch_;
  ParameterSet params_;
  std::vector<Mlp> party_encoders_;
  std::vector<Mlp> party_decoders_;
  Mlp global_encoder_;
  Mlp global_decoder_;
  Mlp discriminator_;
  std::vector<Mlp> indicators_;
};

// True for the groups frozen after stage 1.
bool is_generative_group(ParamGroup g);
bool is_discriminator_group(ParamGroup g);

// Checkpoint JSON: format_version, kind, arch, frozen flag, optional
// normalization stats and every parameter array by name.
struct Checkpoint {
  FalseVflModel model;
  std::optional<NormalizationStats> stats;
};
void save_checkpoint(const FalseVflModel& model, const NormalizationStats* stats, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameter arrays as JSON objects {name, group, shape, values}.
nlohmann::json params_to_json(const ParameterSet& params);
// Copies values by name into an already-shaped set. Throws IoError on any
// missing name or shape mismatch.
void params_from_json(ParameterSet& params, const nlohmann::json& j, const std::string& source);

}  // namespace falsevfl
