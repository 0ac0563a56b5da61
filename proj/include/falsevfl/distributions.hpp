#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "falsevfl/rng.hpp"

namespace falsevfl {

// Smallest variance any encoder or decoder head may report.
inline constexpr double kVarianceFloor = 1e-6;
inline const double kLogVarianceFloor = std::log(kVarianceFloor);

// Diagonal Gaussian stored as mean and log-variance.
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_var;

  std::size_t dim() const { return mean.size(); }
  // Throws ConfigError on length mismatch or non-finite entries.
  void validate() const;
  std::vector<double> variance() const;
  static DiagGaussian from_variance(std::vector<double> mean, std::span<const double> variance);
  static DiagGaussian standard(std::size_t dim);
};

double gaussian_logpdf(std::span<const double> x, const DiagGaussian& g);

// mean + exp(log_var / 2) * eps, eps ~ N(0, I) drawn from rng.
std::vector<double> reparam_sample(const DiagGaussian& g, RngStream& rng);

// Throws ConfigError on empty input.
double logsumexp(std::span<const double> values);
std::vector<double> softmax_logits_to_logprobs(std::span<const double> logits);

}  // namespace falsevfl
