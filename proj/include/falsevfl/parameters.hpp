#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "falsevfl/dense_matrix.hpp"

namespace falsevfl {

// Which model component a parameter array belongs to.
enum class ParamGroup : std::uint8_t {
  PartyEncoder,
  PartyDecoder,
  GlobalEncoder,
  GlobalDecoder,
  Discriminator,
  MissingIndicator,
  Baseline,
};

std::string_view group_name(ParamGroup group);

struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::Baseline;
  DenseMatrix value;
  // Frozen parameters are treated as constants by the tape and skipped by
  // the optimizer.
  bool frozen = false;
  // Position inside the owning ParameterSet; keys gradient buffers.
  std::size_t index = 0;
};

// Owns parameter arrays at stable addresses.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(std::string name, ParamGroup group, DenseMatrix init);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }
  // nullptr when absent.
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t scalar_count() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// Gradient storage keyed by Parameter::index. Entries stay empty until
// something is accumulated into them.
class GradientBuffer {
 public:
  explicit GradientBuffer(std::size_t parameter_count = 0) : grads_(parameter_count) {}

  std::size_t size() const { return grads_.size(); }
  bool has(std::size_t index) const { return !grads_[index].empty(); }
  const DenseMatrix& operator[](std::size_t index) const { return grads_[index]; }

  void accumulate(const Parameter& param, const DenseMatrix& grad, double scale = 1.0);
  // Accumulate entry-wise; both buffers must be sized for the same set.
  void accumulate(const GradientBuffer& other, double scale = 1.0);
  void scale(double factor);
  void clear();

 private:
  std::vector<DenseMatrix> grads_;
};

}  // namespace falsevfl
