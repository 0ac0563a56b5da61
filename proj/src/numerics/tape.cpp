#include "falsevfl/tape.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "falsevfl/error.hpp"
#include "falsevfl/kernels.hpp"

namespace falsevfl {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Sums after sorting, so any permutation of the inputs gives the same bits.
double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

std::atomic<std::uint64_t> g_guard_triggers{0};

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Row index into a possibly single-row operand.
inline std::size_t brow(const DenseMatrix& m, std::size_t r) { return m.rows() == 1 ? 0 : r; }

std::size_t broadcast_rows_of(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (a.cols() != b.cols()) throw ConfigError(std::string(op) + ": column mismatch");
  if (a.rows() == b.rows()) return a.rows();
  if (a.rows() == 1) return b.rows();
  if (b.rows() == 1) return a.rows();
  throw ConfigError(std::string(op) + ": row mismatch");
}

// Collapses a full-size gradient onto an operand that may have been broadcast.
DenseMatrix reduce_to(const DenseMatrix& g, const DenseMatrix& shape_of) {
  if (shape_of.rows() == g.rows()) return g;
  DenseMatrix out(1, g.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) kernels::axpy(1.0, g.row(r).data(), out.data(), g.cols());
  return out;
}

}  // namespace

std::uint64_t guard_trigger_count() { return g_guard_triggers.load(); }

Var Tape::push(DenseMatrix value, bool needs_grad,
               std::function<void(Tape&, const DenseMatrix&)> backward) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(DenseMatrix value) { return push(std::move(value), false, {}); }

Var Tape::parameter(const Parameter& param) {
  Node n;
  n.param = &param;
  n.needs_grad = !param.frozen;
  nodes_.push_back(std::move(n));
  return Var(static_cast<std::uint32_t>(nodes_.size() - 1));
}

const DenseMatrix& Tape::value(Var v) const {
  const Node& n = nodes_.at(v.id());
  return n.param != nullptr ? n.param->value : n.owned;
}

double Tape::scalar(Var v) const {
  const DenseMatrix& m = value(v);
  if (m.size() != 1) throw UsageError("Tape::scalar: node is not 1 x 1");
  return m[0];
}

bool Tape::requires_grad(Var v) const { return nodes_.at(v.id()).needs_grad; }

const DenseMatrix& Tape::grad(Var v) const { return nodes_.at(v.id()).grad; }

DenseMatrix& Tape::grad_slot(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty()) {
    const DenseMatrix& val = value(v);
    n.grad = DenseMatrix(val.rows(), val.cols());
  }
  return n.grad;
}

void Tape::accumulate(Var v, const DenseMatrix& g) {
  if (!nodes_[v.id()].needs_grad) return;
  DenseMatrix& slot = grad_slot(v);
  if (slot.same_shape(g)) {
    slot.add_scaled(g);
  } else {
    slot.add_scaled(reduce_to(g, slot));
  }
}

Var Tape::linear(Var x, Var weight, Var bias) {
  const DenseMatrix& xv = value(x);
  const DenseMatrix& wv = value(weight);
  const DenseMatrix& bv = value(bias);
  if (xv.cols() != wv.cols()) {
    throw ConfigError("linear: input width " + std::to_string(xv.cols()) +
                      " != weight columns " + std::to_string(wv.cols()));
  }
  if (bv.rows() != 1 || bv.cols() != wv.rows()) throw ConfigError("linear: bias shape mismatch");
  const std::size_t n = xv.rows();
  const std::size_t out_dim = wv.rows();
  DenseMatrix y(n, out_dim);
  for (std::size_t r = 0; r < n; ++r) std::copy(bv.data(), bv.data() + out_dim, y.row(r).data());
  kernels::gemm_nt(xv.data(), wv.data(), y.data(), n, out_dim, xv.cols());
  const bool ng = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
  return push(std::move(y), ng, [x, weight, bias](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& xv = t.value(x);
    const DenseMatrix& wv = t.value(weight);
    const std::size_t n = xv.rows();
    const std::size_t in_dim = xv.cols();
    const std::size_t out_dim = wv.rows();
    if (t.requires_grad(x)) {
      DenseMatrix& dx = t.grad_slot(x);
      kernels::gemm_nn(g.data(), wv.data(), dx.data(), n, in_dim, out_dim);
    }
    if (t.requires_grad(weight)) {
      DenseMatrix& dw = t.grad_slot(weight);
      kernels::gemm_tn(g.data(), xv.data(), dw.data(), out_dim, in_dim, n);
    }
    if (t.requires_grad(bias)) {
      DenseMatrix& db = t.grad_slot(bias);
      for (std::size_t r = 0; r < n; ++r) kernels::axpy(1.0, g.row(r).data(), db.data(), out_dim);
    }
  });
}

Var Tape::activate(Var x, Activation act) {
  if (act == Activation::Identity) return x;
  const DenseMatrix& xv = value(x);
  DenseMatrix y(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    switch (act) {
      case Activation::Tanh:
        y[i] = std::tanh(v);
        break;
      case Activation::Relu:
        y[i] = v > 0.0 ? v : 0.0;
        break;
      case Activation::Softplus:
        y[i] = softplus(v);
        break;
      case Activation::Sigmoid:
        y[i] = sigmoid(v);
        break;
      case Activation::Identity:
        y[i] = v;
        break;
    }
  }
  const Var out(static_cast<std::uint32_t>(nodes_.size()));
  return push(std::move(y), requires_grad(x), [x, act, out](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& xv = t.value(x);
    const DenseMatrix& yv = t.value(out);
    DenseMatrix dx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (act) {
        case Activation::Tanh:
          dx[i] = g[i] * (1.0 - yv[i] * yv[i]);
          break;
        case Activation::Relu:
          dx[i] = xv[i] > 0.0 ? g[i] : 0.0;
          break;
        case Activation::Softplus:
          dx[i] = g[i] * sigmoid(xv[i]);
          break;
        case Activation::Sigmoid:
          dx[i] = g[i] * yv[i] * (1.0 - yv[i]);
          break;
        case Activation::Identity:
          dx[i] = g[i];
          break;
      }
    }
    t.accumulate(x, dx);
  });
}

// kind: 0 add, 1 sub, 2 mul
Var Tape::elementwise(Var a, Var b, int kind) {
  static constexpr const char* kNames[] = {"add", "sub", "mul"};
  const DenseMatrix& av = value(a);
  const DenseMatrix& bv = value(b);
  const std::size_t n = broadcast_rows_of(av, bv, kNames[kind]);
  const std::size_t d = av.cols();
  DenseMatrix y(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    const double* ar = av.data() + brow(av, r) * d;
    const double* br = bv.data() + brow(bv, r) * d;
    double* yr = y.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) {
      yr[c] = kind == 0 ? ar[c] + br[c] : kind == 1 ? ar[c] - br[c] : ar[c] * br[c];
    }
  }
  return push(std::move(y), requires_grad(a) || requires_grad(b),
              [a, b, kind](Tape& t, const DenseMatrix& g) {
                if (kind == 0) {
                  t.accumulate(a, g);
                  t.accumulate(b, g);
                  return;
                }
                if (kind == 1) {
                  t.accumulate(a, g);
                  if (t.requires_grad(b)) {
                    DenseMatrix ng = g;
                    for (double& v : ng.flat()) v = -v;
                    t.accumulate(b, ng);
                  }
                  return;
                }
                const DenseMatrix& av = t.value(a);
                const DenseMatrix& bv = t.value(b);
                const std::size_t d = g.cols();
                if (t.requires_grad(a)) {
                  DenseMatrix da(g.rows(), d);
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < d; ++c) da(r, c) = g(r, c) * bv(brow(bv, r), c);
                  t.accumulate(a, da);
                }
                if (t.requires_grad(b)) {
                  DenseMatrix db(g.rows(), d);
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < d; ++c) db(r, c) = g(r, c) * av(brow(av, r), c);
                  t.accumulate(b, db);
                }
              });
}

Var Tape::add(Var a, Var b) { return elementwise(a, b, 0); }
Var Tape::sub(Var a, Var b) { return elementwise(a, b, 1); }
Var Tape::mul(Var a, Var b) { return elementwise(a, b, 2); }

Var Tape::scale(Var a, double factor) {
  DenseMatrix y = value(a);
  for (double& v : y.flat()) v *= factor;
  return push(std::move(y), requires_grad(a), [a, factor](Tape& t, const DenseMatrix& g) {
    DenseMatrix da = g;
    for (double& v : da.flat()) v *= factor;
    t.accumulate(a, da);
  });
}

Var Tape::add_scalar(Var a, double c) {
  DenseMatrix y = value(a);
  for (double& v : y.flat()) v += c;
  return push(std::move(y), requires_grad(a),
              [a](Tape& t, const DenseMatrix& g) { t.accumulate(a, g); });
}

Var Tape::exp(Var a) {
  DenseMatrix y = value(a);
  for (double& v : y.flat()) v = std::exp(v);
  const Var out(static_cast<std::uint32_t>(nodes_.size()));
  return push(std::move(y), requires_grad(a), [a, out](Tape& t, const DenseMatrix& g) {
    DenseMatrix da = g;
    const DenseMatrix& yv = t.value(out);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] *= yv[i];
    t.accumulate(a, da);
  });
}

Var Tape::slice_cols(Var x, std::size_t begin, std::size_t end) {
  const DenseMatrix& xv = value(x);
  if (begin > end || end > xv.cols()) throw ConfigError("slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  DenseMatrix y(xv.rows(), w);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    std::copy_n(xv.row(r).data() + begin, w, y.row(r).data());
  return push(std::move(y), requires_grad(x), [x, begin, w](Tape& t, const DenseMatrix& g) {
    DenseMatrix& dx = t.grad_slot(x);
    for (std::size_t r = 0; r < g.rows(); ++r)
      kernels::axpy(1.0, g.row(r).data(), dx.row(r).data() + begin, w);
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const std::size_t n = value(parts[0]).rows();
  std::size_t width = 0;
  bool ng = false;
  for (Var p : parts) {
    if (value(p).rows() != n) throw ConfigError("concat_cols: row mismatch");
    width += value(p).cols();
    ng = ng || requires_grad(p);
  }
  DenseMatrix y(n, width);
  std::size_t offset = 0;
  for (Var p : parts) {
    const DenseMatrix& pv = value(p);
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(pv.row(r).data(), pv.cols(), y.row(r).data() + offset);
    offset += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push(std::move(y), ng, [inputs = std::move(inputs)](Tape& t, const DenseMatrix& g) {
    std::size_t offset = 0;
    for (Var p : inputs) {
      const std::size_t w = t.value(p).cols();
      if (t.requires_grad(p)) {
        DenseMatrix& dp = t.grad_slot(p);
        for (std::size_t r = 0; r < g.rows(); ++r)
          kernels::axpy(1.0, g.row(r).data() + offset, dp.row(r).data(), w);
      }
      offset += w;
    }
  });
}

Var Tape::broadcast_rows(Var x, std::size_t rows) {
  const DenseMatrix& xv = value(x);
  if (xv.rows() != 1) throw ConfigError("broadcast_rows: input must be a single row");
  DenseMatrix y(rows, xv.cols());
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data(), xv.cols(), y.row(r).data());
  return push(std::move(y), requires_grad(x),
              [x](Tape& t, const DenseMatrix& g) { t.accumulate(x, g); });
}

Var Tape::clamp_min(Var x, double floor) {
  DenseMatrix y = value(x);
  for (double& v : y.flat()) v = std::max(v, floor);
  return push(std::move(y), requires_grad(x), [x, floor](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& xv = t.value(x);
    DenseMatrix dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(xv[i] > floor)) dx[i] = 0.0;
    t.accumulate(x, dx);
  });
}

Var Tape::guard(Var x, double limit) {
  DenseMatrix y = value(x);
  std::uint64_t hits = 0;
  for (double& v : y.flat()) {
    if (std::isnan(v)) {
      v = -limit;
      ++hits;
    } else if (v > limit) {
      v = limit;
      ++hits;
    } else if (v < -limit) {
      v = -limit;
      ++hits;
    }
  }
  if (hits != 0) g_guard_triggers.fetch_add(hits);
  return push(std::move(y), requires_grad(x), [x, limit](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& xv = t.value(x);
    DenseMatrix dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(std::abs(xv[i]) <= limit)) dx[i] = 0.0;
    t.accumulate(x, dx);
  });
}

Var Tape::average(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("average: no inputs");
  const DenseMatrix& first = value(parts[0]);
  bool ng = false;
  const double w = 1.0 / static_cast<double>(parts.size());
  for (Var p : parts) {
    if (!value(p).same_shape(first)) throw ConfigError("average: shape mismatch");
    ng = ng || requires_grad(p);
  }
  DenseMatrix y(first.rows(), first.cols());
  std::vector<double> terms(parts.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t k = 0; k < parts.size(); ++k) terms[k] = value(parts[k])[i];
    y[i] = sorted_sum(terms) * w;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push(std::move(y), ng, [inputs = std::move(inputs), w](Tape& t, const DenseMatrix& g) {
    DenseMatrix scaled = g;
    for (double& v : scaled.flat()) v *= w;
    for (Var p : inputs) t.accumulate(p, scaled);
  });
}

Var Tape::precision_pool(std::span<const Var> log_vars) {
  if (log_vars.empty()) throw ConfigError("precision_pool: no inputs");
  const DenseMatrix& first = value(log_vars[0]);
  bool ng = false;
  for (Var p : log_vars) {
    if (!value(p).same_shape(first)) throw ConfigError("precision_pool: shape mismatch");
    ng = ng || requires_grad(p);
  }
  DenseMatrix y(first.rows(), first.cols());
  std::vector<double> terms(log_vars.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    double lo = std::numeric_limits<double>::infinity();
    for (Var p : log_vars) lo = std::min(lo, value(p)[i]);
    for (std::size_t k = 0; k < log_vars.size(); ++k) terms[k] = std::exp(lo - value(log_vars[k])[i]);
    y[i] = lo - std::log(sorted_sum(terms));
  }
  const Var out(static_cast<std::uint32_t>(nodes_.size()));
  std::vector<Var> inputs(log_vars.begin(), log_vars.end());
  return push(std::move(y), ng, [inputs = std::move(inputs), out](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& yv = t.value(out);
    for (Var p : inputs) {
      if (!t.requires_grad(p)) continue;
      const DenseMatrix& pv = t.value(p);
      DenseMatrix dp(g.rows(), g.cols());
      // d/dx_k of -log sum exp(-x_j) is the precision share of input k.
      for (std::size_t i = 0; i < dp.size(); ++i) dp[i] = g[i] * std::exp(yv[i] - pv[i]);
      t.accumulate(p, dp);
    }
  });
}

Var Tape::reparameterize(Var mean, Var log_var, const DenseMatrix& noise) {
  const DenseMatrix& mv = value(mean);
  const DenseMatrix& lv = value(log_var);
  const std::size_t n = noise.rows();
  const std::size_t d = noise.cols();
  if (mv.cols() != d || lv.cols() != d) throw ConfigError("reparameterize: width mismatch");
  if ((mv.rows() != 1 && mv.rows() != n) || (lv.rows() != 1 && lv.rows() != n))
    throw ConfigError("reparameterize: row mismatch");
  DenseMatrix y(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c)
      y(r, c) = mv(brow(mv, r), c) + std::exp(0.5 * lv(brow(lv, r), c)) * noise(r, c);
  return push(std::move(y), requires_grad(mean) || requires_grad(log_var),
              [mean, log_var, noise](Tape& t, const DenseMatrix& g) {
                t.accumulate(mean, g);
                if (!t.requires_grad(log_var)) return;
                const DenseMatrix& lv = t.value(log_var);
                DenseMatrix dl(g.rows(), g.cols());
                for (std::size_t r = 0; r < g.rows(); ++r)
                  for (std::size_t c = 0; c < g.cols(); ++c)
                    dl(r, c) = g(r, c) * 0.5 * std::exp(0.5 * lv(brow(lv, r), c)) * noise(r, c);
                t.accumulate(log_var, dl);
              });
}

Var Tape::gaussian_logpdf_rows(Var x, Var mean, Var log_var) {
  const DenseMatrix& xv = value(x);
  const DenseMatrix& mv = value(mean);
  const DenseMatrix& lv = value(log_var);
  const std::size_t d = xv.cols();
  if (mv.cols() != d || lv.cols() != d) throw ConfigError("gaussian_logpdf_rows: width mismatch");
  const std::size_t n = std::max({xv.rows(), mv.rows(), lv.rows()});
  for (const DenseMatrix* m : {&xv, &mv, &lv})
    if (m->rows() != 1 && m->rows() != n) throw ConfigError("gaussian_logpdf_rows: row mismatch");
  DenseMatrix y(n, 1);
  std::vector<double> inv_var(d);
  for (std::size_t r = 0; r < n; ++r) {
    const double* lr = lv.data() + brow(lv, r) * d;
    double log_det = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      inv_var[c] = std::exp(-lr[c]);
      log_det += lr[c];
    }
    const double q = kernels::weighted_sq_dist(xv.data() + brow(xv, r) * d,
                                               mv.data() + brow(mv, r) * d, inv_var.data(), d);
    y(r, 0) = -0.5 * (static_cast<double>(d) * kLog2Pi + log_det + q);
  }
  const bool ng = requires_grad(x) || requires_grad(mean) || requires_grad(log_var);
  return push(std::move(y), ng, [x, mean, log_var](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& xv = t.value(x);
    const DenseMatrix& mv = t.value(mean);
    const DenseMatrix& lv = t.value(log_var);
    const std::size_t n = g.rows();
    const std::size_t d = xv.cols();
    const bool gx = t.requires_grad(x), gm = t.requires_grad(mean), gl = t.requires_grad(log_var);
    DenseMatrix dx(gx ? n : 0, d), dm(gm ? n : 0, d), dl(gl ? n : 0, d);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        const double iv = std::exp(-lv(brow(lv, r), c));
        const double diff = xv(brow(xv, r), c) - mv(brow(mv, r), c);
        const double s = diff * iv * g(r, 0);
        if (gx) dx(r, c) = -s;
        if (gm) dm(r, c) = s;
        if (gl) dl(r, c) = g(r, 0) * 0.5 * (diff * diff * iv - 1.0);
      }
    }
    if (gx) t.accumulate(x, dx);
    if (gm) t.accumulate(mean, dm);
    if (gl) t.accumulate(log_var, dl);
  });
}

Var Tape::standard_normal_logpdf_rows(Var x) {
  const DenseMatrix& xv = value(x);
  const std::size_t d = xv.cols();
  DenseMatrix y(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const double* xr = xv.row(r).data();
    y(r, 0) = -0.5 * (static_cast<double>(d) * kLog2Pi + kernels::dot(xr, xr, d));
  }
  return push(std::move(y), requires_grad(x), [x](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& xv = t.value(x);
    DenseMatrix dx(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) dx(r, c) = -xv(r, c) * g(r, 0);
    t.accumulate(x, dx);
  });
}

Var Tape::log_softmax_rows(Var logits) {
  const DenseMatrix& lv = value(logits);
  DenseMatrix y(lv.rows(), lv.cols());
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    const auto row = lv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < lv.cols(); ++c) y(r, c) = row[c] - lse;
  }
  const Var out(static_cast<std::uint32_t>(nodes_.size()));
  return push(std::move(y), requires_grad(logits), [logits, out](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& yv = t.value(out);
    DenseMatrix dl(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) gs += g(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) dl(r, c) = g(r, c) - std::exp(yv(r, c)) * gs;
    }
    t.accumulate(logits, dl);
  });
}

Var Tape::categorical_logpmf_rows(Var logits, std::size_t label) {
  const DenseMatrix& lv = value(logits);
  if (label >= lv.cols()) throw ConfigError("categorical_logpmf_rows: label out of range");
  DenseMatrix y(lv.rows(), 1);
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    const auto row = lv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    y(r, 0) = row[label] - mx - std::log(s);
  }
  return push(std::move(y), requires_grad(logits), [logits, label](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& lv = t.value(logits);
    DenseMatrix dl(lv.rows(), lv.cols());
    for (std::size_t r = 0; r < lv.rows(); ++r) {
      const auto row = lv.row(r);
      const double mx = *std::max_element(row.begin(), row.end());
      double s = 0.0;
      for (double v : row) s += std::exp(v - mx);
      for (std::size_t c = 0; c < lv.cols(); ++c) {
        const double p = std::exp(row[c] - mx) / s;
        dl(r, c) = g(r, 0) * ((c == label ? 1.0 : 0.0) - p);
      }
    }
    t.accumulate(logits, dl);
  });
}

Var Tape::bernoulli_logpmf_rows(Var logit, double value_) {
  const DenseMatrix& lv = value(logit);
  if (lv.cols() != 1) throw ConfigError("bernoulli_logpmf_rows: logit must be n x 1");
  DenseMatrix y(lv.rows(), 1);
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    const double l = lv(r, 0);
    // log sigmoid(l) = -softplus(-l), log sigmoid(-l) = -softplus(l)
    y(r, 0) = -value_ * softplus(-l) - (1.0 - value_) * softplus(l);
  }
  return push(std::move(y), requires_grad(logit), [logit, value_](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& lv = t.value(logit);
    DenseMatrix dl(lv.rows(), 1);
    for (std::size_t r = 0; r < lv.rows(); ++r) dl(r, 0) = g(r, 0) * (value_ - sigmoid(lv(r, 0)));
    t.accumulate(logit, dl);
  });
}

Var Tape::logsumexp_col(Var x) {
  const DenseMatrix& xv = value(x);
  if (xv.cols() != 1 || xv.rows() == 0) throw ConfigError("logsumexp_col: expected nonempty n x 1");
  const double mx = *std::max_element(xv.flat().begin(), xv.flat().end());
  double s = 0.0;
  for (double v : xv.flat()) s += std::exp(v - mx);
  DenseMatrix y(1, 1, mx + std::log(s));
  const Var out(static_cast<std::uint32_t>(nodes_.size()));
  return push(std::move(y), requires_grad(x), [x, out](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& xv = t.value(x);
    const double lse = t.value(out)[0];
    DenseMatrix dx(xv.rows(), 1);
    for (std::size_t r = 0; r < xv.rows(); ++r) dx[r] = g[0] * std::exp(xv[r] - lse);
    t.accumulate(x, dx);
  });
}

Var Tape::sum_all(Var x) {
  const DenseMatrix& xv = value(x);
  double s = 0.0;
  for (double v : xv.flat()) s += v;
  return push(DenseMatrix(1, 1, s), requires_grad(x), [x](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& xv = t.value(x);
    t.accumulate(x, DenseMatrix(xv.rows(), xv.cols(), g[0]));
  });
}

Var Tape::sum_cols(Var x) {
  const DenseMatrix& xv = value(x);
  DenseMatrix y(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (double v : xv.row(r)) s += v;
    y(r, 0) = s;
  }
  return push(std::move(y), requires_grad(x), [x](Tape& t, const DenseMatrix& g) {
    const DenseMatrix& xv = t.value(x);
    DenseMatrix dx(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) dx(r, c) = g(r, 0);
    t.accumulate(x, dx);
  });
}

void Tape::backward(Var root, GradientBuffer* out, double seed) {
  if (!root.valid() || root.id() >= nodes_.size()) throw UsageError("backward: invalid root");
  if (value(root).size() != 1) throw UsageError("backward: root must be a 1 x 1 scalar");
  for (Node& n : nodes_) n.grad = DenseMatrix();
  if (!nodes_[root.id()].needs_grad) return;
  grad_slot(root)[0] = seed;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      if (out != nullptr) out->accumulate(*n.param, n.grad);
      continue;
    }
    if (n.backward) {
      // The rule may grow other nodes' grads but never this one's.
      const DenseMatrix g = std::move(n.grad);
      n.backward(*this, g);
      n.grad = g;
    }
  }
}

}  // namespace falsevfl
