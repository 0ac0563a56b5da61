#include "falsevfl/parameters.hpp"

#include "falsevfl/error.hpp"

namespace falsevfl {

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::PartyEncoder:
      return "party_encoder";
    case ParamGroup::PartyDecoder:
      return "party_decoder";
    case ParamGroup::GlobalEncoder:
      return "global_encoder";
    case ParamGroup::GlobalDecoder:
      return "global_decoder";
    case ParamGroup::Discriminator:
      return "discriminator";
    case ParamGroup::MissingIndicator:
      return "missing_indicator";
    case ParamGroup::Baseline:
      return "baseline";
  }
  return "unknown";
}

ParameterSet::ParameterSet(const ParameterSet& other) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) {
    ParameterSet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Parameter& ParameterSet::add(std::string name, ParamGroup group, DenseMatrix init) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->group = group;
  p->value = std::move(init);
  p->index = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterSet::find(std::string_view name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void GradientBuffer::accumulate(const Parameter& param, const DenseMatrix& grad,
                                double scale) {
  if (param.index >= grads_.size()) throw UsageError("GradientBuffer: parameter index out of range");
  DenseMatrix& slot = grads_[param.index];
  if (slot.empty()) slot = DenseMatrix(grad.rows(), grad.cols());
  slot.add_scaled(grad, scale);
}

void GradientBuffer::accumulate(const GradientBuffer& other, double scale) {
  if (other.grads_.size() != grads_.size()) throw UsageError("GradientBuffer: size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (other.grads_[i].empty()) continue;
    if (grads_[i].empty()) grads_[i] = DenseMatrix(other.grads_[i].rows(), other.grads_[i].cols());
    grads_[i].add_scaled(other.grads_[i], scale);
  }
}

void GradientBuffer::scale(double factor) {
  for (auto& g : grads_)
    for (double& v : g.flat()) v *= factor;
}

void GradientBuffer::clear() {
  for (auto& g : grads_) g = DenseMatrix();
}

}  // namespace falsevfl
