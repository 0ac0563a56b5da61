#include "falsevfl/distributions.hpp"

#include <algorithm>
#include <limits>

#include "falsevfl/error.hpp"

namespace falsevfl {
namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

void DiagGaussian::validate() const {
  if (mean.size() != log_var.size()) throw ConfigError("DiagGaussian: mean/log_var length mismatch");
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!std::isfinite(mean[i]) || !std::isfinite(log_var[i]))
      throw ConfigError("DiagGaussian: non-finite parameter");
  }
}

std::vector<double> DiagGaussian::variance() const {
  std::vector<double> v(log_var.size());
  std::transform(log_var.begin(), log_var.end(), v.begin(), [](double lv) { return std::exp(lv); });
  return v;
}

DiagGaussian DiagGaussian::from_variance(std::vector<double> mean, std::span<const double> variance) {
  if (mean.size() != variance.size()) throw ConfigError("DiagGaussian: mean/variance length mismatch");
  DiagGaussian g;
  g.mean = std::move(mean);
  g.log_var.resize(variance.size());
  for (std::size_t i = 0; i < variance.size(); ++i) {
    if (!(variance[i] > 0.0)) throw ConfigError("DiagGaussian: variance must be positive");
    g.log_var[i] = std::log(variance[i]);
  }
  return g;
}

DiagGaussian DiagGaussian::standard(std::size_t dim) {
  return DiagGaussian{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
}

double gaussian_logpdf(std::span<const double> x, const DiagGaussian& g) {
  if (x.size() != g.dim() || g.log_var.size() != g.dim())
    throw ConfigError("gaussian_logpdf: dimension mismatch");
  double s = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double diff = x[d] - g.mean[d];
    s += -0.5 * kLog2Pi - 0.5 * g.log_var[d] - diff * diff / (2.0 * std::exp(g.log_var[d]));
  }
  return s;
}

std::vector<double> reparam_sample(const DiagGaussian& g, RngStream& rng) {
  std::vector<double> out(g.dim());
  for (std::size_t d = 0; d < g.dim(); ++d)
    out[d] = g.mean[d] + std::exp(0.5 * g.log_var[d]) * rng.normal();
  return out;
}

double logsumexp(std::span<const double> values) {
  if (values.empty()) throw ConfigError("logsumexp: empty input");
  const double mx = *std::max_element(values.begin(), values.end());
  if (mx == -std::numeric_limits<double>::infinity()) return mx;
  double s = 0.0;
  for (double v : values) s += std::exp(v - mx);
  return mx + std::log(s);
}

std::vector<double> softmax_logits_to_logprobs(std::span<const double> logits) {
  const double lse = logsumexp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

}  // namespace falsevfl
