#pragma once
// Reverse-mode differentiation over matrix-valued nodes.
//
// Every operation evaluates eagerly and, if any input needs a gradient,
// records a backward rule. Frozen parameters and constants never need a
// gradient, so graphs that only touch them cost a plain forward pass.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "falsevfl/dense_matrix.hpp"
#include "falsevfl/parameters.hpp"

namespace falsevfl {

enum class Activation : std::uint8_t { Identity, Tanh, Relu, Softplus, Sigmoid };

class Var {
 public:
  Var() = default;
  std::uint32_t id() const { return id_; }
  bool valid() const { return id_ != kInvalid; }

 private:
  friend class Tape;
  explicit Var(std::uint32_t id) : id_(id) {}
  static constexpr std::uint32_t kInvalid = 0xFFFFFFFFu;
  std::uint32_t id_ = kInvalid;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(DenseMatrix value);
  // Leaf bound to a parameter's current value. The tape keeps a pointer; the
  // parameter must outlive the tape and stay unmodified while it is in use.
  Var parameter(const Parameter& param);

  const DenseMatrix& value(Var v) const;
  double scalar(Var v) const;
  bool requires_grad(Var v) const;
  // Gradient of the last backward() root w.r.t. v; empty if none reached v.
  const DenseMatrix& grad(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }

  // y = x W^T + b with x: n x in, W: out x in, b: 1 x out.
  Var linear(Var x, Var weight, Var bias);
  Var activate(Var x, Activation act);

  // Element-wise; either side may be a single row broadcast over the other.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var add_scalar(Var a, double c);
  Var exp(Var a);

  Var slice_cols(Var x, std::size_t begin, std::size_t end);
  Var concat_cols(std::span<const Var> parts);
  Var broadcast_rows(Var x, std::size_t rows);
  // Entries below `floor` are replaced by it; no gradient flows through them.
  Var clamp_min(Var x, double floor);
  // Clamps into [-limit, limit] and bumps the numeric guard counter for each
  // clamped entry.
  Var guard(Var x, double limit);

  // Arithmetic mean of same-shape inputs.
  Var average(std::span<const Var> parts);
  // -log(sum_k exp(-x_k)) element-wise: log-variance of summed precisions.
  Var precision_pool(std::span<const Var> log_vars);

  // mean + exp(log_var / 2) * noise. `noise` fixes the row count; mean and
  // log_var may be single rows.
  Var reparameterize(Var mean, Var log_var, const DenseMatrix& noise);

  // Row-wise diagonal Gaussian log-density; any argument may be one row.
  Var gaussian_logpdf_rows(Var x, Var mean, Var log_var);
  Var standard_normal_logpdf_rows(Var x);
  Var log_softmax_rows(Var logits);
  // Row-wise log p(label) under softmax(logits).
  Var categorical_logpmf_rows(Var logits, std::size_t label);
  // Row-wise log Bernoulli(value | sigmoid(logit)); logit is n x 1.
  Var bernoulli_logpmf_rows(Var logit, double value);

  // n x 1 -> 1 x 1.
  Var logsumexp_col(Var x);
  Var sum_all(Var x);
  // Sums the columns of each row: n x d -> n x 1.
  Var sum_cols(Var x);

  // Backpropagates from a 1 x 1 root. Parameter gradients go into `out`
  // (keyed by Parameter::index) when given. Throws UsageError for a
  // non-scalar root.
  void backward(Var root, GradientBuffer* out = nullptr, double seed = 1.0);

 private:
  struct Node {
    DenseMatrix owned;  // unused for parameter leaves
    DenseMatrix grad;
    const Parameter* param = nullptr;
    bool needs_grad = false;
    std::function<void(Tape&, const DenseMatrix& out_grad)> backward;
  };

  Var push(DenseMatrix value, bool needs_grad,
           std::function<void(Tape&, const DenseMatrix&)> backward);
  DenseMatrix& grad_slot(Var v);
  void accumulate(Var v, const DenseMatrix& g);
  Var elementwise(Var a, Var b, int kind);

  std::vector<Node> nodes_;
};

// Count of entries clamped by Tape::guard since process start.
std::uint64_t guard_trigger_count();

}  // namespace falsevfl
