#pragma once

#include <stdexcept>
#include <string>

namespace falsevfl {

// Bad dimensions, out-of-range hyperparameters, malformed config files.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An operation was called in a state where it is not allowed
// (non-scalar backward root, stage 2 without a frozen generative model, ...).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A domain invariant would be broken (all-missing availability record, ...).
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// File access and file-format problems.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace falsevfl
