#pragma once
// Exact likelihoods for a linear-Gaussian instance of the model.
//
// Generative side: z ~ N(0, I), h | z ~ N(A z + a, diag(sh)),
// x^k | h ~ N(B_k h + b_k, diag(sk)). The discriminator is rank one,
// logits = c * (w . h) + d, and the missingness indicators are affine,
// logit_k = alpha_k . x^k + beta_k. Encoders are affine with constant
// log-variances; they shape estimator variance but never the exact values.
//
// Every quantity reduces to E[f(u)] for a Gaussian vector u given x_obs,
// where u stacks (w . h) and the missing coordinates of x. That expectation
// is evaluated by tensor Gauss-Hermite quadrature.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "falsevfl/model.hpp"
#include "falsevfl/rng.hpp"

namespace falsevfl::testing {

struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;  // for weight function exp(-t^2)
};

// Golub-Welsch.
inline GaussHermite gauss_hermite(int n) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) j(i, i - 1) = j(i - 1, i) = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
  GaussHermite gh;
  for (int i = 0; i < n; ++i) {
    gh.nodes.push_back(es.eigenvalues()(i));
    const double v = es.eigenvectors()(0, i);
    gh.weights.push_back(std::sqrt(std::numbers::pi) * v * v);
  }
  return gh;
}

// E[f(u)] for u ~ N(mean, cov) by tensor Gauss-Hermite with n nodes per axis.
inline double gaussian_expectation(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                   const std::function<double(const Eigen::VectorXd&)>& f, int n = 48) {
  const int dim = static_cast<int>(mean.size());
  if (dim == 0) return f(mean);
  const GaussHermite gh = gauss_hermite(n);
  Eigen::MatrixXd jitter = cov + 1e-300 * Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::MatrixXd l = jitter.llt().matrixL();
  std::vector<int> idx(dim, 0);
  double total = 0.0;
  while (true) {
    Eigen::VectorXd t(dim);
    double w = 1.0;
    for (int d = 0; d < dim; ++d) {
      t(d) = std::sqrt(2.0) * gh.nodes[idx[d]];
      w *= gh.weights[idx[d]];
    }
    total += w * f(mean + l * t);
    int d = 0;
    while (d < dim && ++idx[d] == n) idx[d++] = 0;
    if (d == dim) break;
  }
  return total / std::pow(std::numbers::pi, dim / 2.0);
}

inline double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

class LinearGaussianInstance {
 public:
  // Builds a random instance and writes matching parameters into a freshly
  // initialized affine model.
  LinearGaussianInstance(std::vector<std::size_t> party_dims, std::size_t dim_h, std::size_t dim_z,
                         std::size_t num_classes, Variant variant, RngStream& rng)
      : dims_(std::move(party_dims)), dh_(dim_h), dz_(dim_z), classes_(num_classes) {
    ArchConfig arch;
    arch.party_dims = dims_;
    arch.num_classes = num_classes;
    arch.dim_h = dim_h;
    arch.dim_z = dim_z;
    arch.hidden = 1;
    arch.variant = variant;
    arch.party_layers = arch.global_layers = arch.discriminator_layers = arch.indicator_layers = 0;
    model_ = FalseVflModel::init(arch, rng);

    auto normal = [&](double s) { return s * rng.normal(); };
    A_ = Eigen::MatrixXd(dh_, dz_);
    for (int i = 0; i < A_.size(); ++i) A_.data()[i] = normal(0.6);
    a_ = Eigen::VectorXd(dh_);
    for (auto& v : a_) v = normal(0.5);
    sh_ = Eigen::VectorXd(dh_);
    for (auto& v : sh_) v = 0.3 + 0.5 * rng.uniform();
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      Eigen::MatrixXd b(dims_[k], dh_);
      for (int i = 0; i < b.size(); ++i) b.data()[i] = normal(0.7);
      Eigen::VectorXd off(dims_[k]), s(dims_[k]);
      for (auto& v : off) v = normal(0.5);
      for (auto& v : s) v = 0.2 + 0.4 * rng.uniform();
      B_.push_back(b);
      b_.push_back(off);
      sk_.push_back(s);
      Eigen::VectorXd alpha(dims_[k]);
      for (auto& v : alpha) v = normal(0.8);
      alpha_.push_back(alpha);
      beta_.push_back(normal(0.5));
    }
    w_ = Eigen::VectorXd(dh_);
    for (auto& v : w_) v = normal(1.0);
    c_ = Eigen::VectorXd(classes_);
    d_ = Eigen::VectorXd(classes_);
    for (auto& v : c_) v = normal(1.0);
    for (auto& v : d_) v = normal(0.5);
    write_parameters(rng);
  }

  FalseVflModel& model() { return model_; }
  std::size_t total_dim() const {
    std::size_t t = 0;
    for (auto d : dims_) t += d;
    return t;
  }

  // Draws x from the generative model (all parties).
  std::vector<double> sample_x(RngStream& rng) const {
    Eigen::VectorXd z(dz_);
    for (auto& v : z) v = rng.normal();
    Eigen::VectorXd h = A_ * z + a_;
    for (int i = 0; i < h.size(); ++i) h(i) += std::sqrt(sh_(i)) * rng.normal();
    std::vector<double> x;
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      Eigen::VectorXd xk = B_[k] * h + b_[k];
      for (int i = 0; i < xk.size(); ++i) x.push_back(xk(i) + std::sqrt(sk_[k](i)) * rng.normal());
    }
    return x;
  }

  // log p(x_obs), log p(y, x_obs), log p(x_obs, m), log p(y, x_obs, m).
  double log_likelihood(const std::vector<double>& x, const std::vector<std::uint8_t>& missing,
                        std::optional<std::size_t> label, bool with_mask) const {
    const std::size_t total = total_dim();
    const int nv = static_cast<int>(dh_ + total);
    // Joint Gaussian over v = (h, x).
    Eigen::VectorXd mean(nv);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(nv, nv);
    const Eigen::MatrixXd p = A_ * A_.transpose() + Eigen::MatrixXd(sh_.asDiagonal());
    Eigen::MatrixXd b_all(total, dh_);
    Eigen::VectorXd off_all(total), s_all(total);
    std::vector<int> party_of;
    for (std::size_t k = 0, r = 0; k < dims_.size(); ++k) {
      for (std::size_t i = 0; i < dims_[k]; ++i, ++r) {
        b_all.row(r) = B_[k].row(i);
        off_all(r) = b_[k](i);
        s_all(r) = sk_[k](i);
        party_of.push_back(static_cast<int>(k));
      }
    }
    mean << a_, b_all * a_ + off_all;
    cov.topLeftCorner(dh_, dh_) = p;
    cov.topRightCorner(dh_, total) = p * b_all.transpose();
    cov.bottomLeftCorner(total, dh_) = b_all * p;
    cov.bottomRightCorner(total, total) = b_all * p * b_all.transpose() + Eigen::MatrixXd(s_all.asDiagonal());

    std::vector<int> obs, rest;
    for (int i = 0; i < static_cast<int>(dh_); ++i) rest.push_back(i);
    for (std::size_t r = 0; r < total; ++r) (missing[party_of[r]] ? rest : obs).push_back(static_cast<int>(dh_ + r));
    const int no = static_cast<int>(obs.size()), nr = static_cast<int>(rest.size());
    Eigen::VectorXd xo(no), mo(no), mr(nr);
    Eigen::MatrixXd soo(no, no), sro(nr, no), srr(nr, nr);
    for (int i = 0; i < no; ++i) {
      xo(i) = x[obs[i] - dh_];
      mo(i) = mean(obs[i]);
      for (int j = 0; j < no; ++j) soo(i, j) = cov(obs[i], obs[j]);
    }
    for (int i = 0; i < nr; ++i) {
      mr(i) = mean(rest[i]);
      for (int j = 0; j < no; ++j) sro(i, j) = cov(rest[i], obs[j]);
      for (int j = 0; j < nr; ++j) srr(i, j) = cov(rest[i], rest[j]);
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(soo);
    const Eigen::VectorXd diff = xo - mo;
    const Eigen::VectorXd alpha = llt.solve(diff);
    double logdet = 0.0;
    const Eigen::MatrixXd l = llt.matrixL();
    for (int i = 0; i < no; ++i) logdet += 2.0 * std::log(l(i, i));
    double result = -0.5 * (no * std::log(2.0 * std::numbers::pi) + logdet + diff.dot(alpha));

    // Observed indicators contribute log p(m^k = 0 | x^k) directly.
    if (with_mask) {
      for (std::size_t k = 0, r = 0; k < dims_.size(); r += dims_[k], ++k) {
        if (missing[k]) continue;
        double logit = beta_[k];
        for (std::size_t i = 0; i < dims_[k]; ++i) logit += alpha_[k](i) * x[r + i];
        result += log_sigmoid(-logit);
      }
    }
    if (!label && !with_mask) return result;

    // Conditional of the rest given x_obs, then project onto u.
    const Eigen::VectorXd cmean = mr + sro * alpha;
    const Eigen::MatrixXd ccov = srr - sro * llt.solve(sro.transpose());
    std::vector<Eigen::VectorXd> rows;
    std::vector<std::function<double(double)>> factors;
    if (label) {
      Eigen::VectorXd t = Eigen::VectorXd::Zero(nr);
      t.head(dh_) = w_;
      rows.push_back(t);
      const std::size_t y = *label;
      factors.push_back([this, y](double s) {
        Eigen::VectorXd logits = c_ * s + d_;
        const double mx = logits.maxCoeff();
        return std::exp(logits(y) - mx - std::log((logits.array() - mx).exp().sum()));
      });
    }
    if (with_mask) {
      for (std::size_t k = 0, r = 0; k < dims_.size(); r += dims_[k], ++k) {
        if (!missing[k]) continue;
        // Missing blocks enter through alpha_k . x^k.
        Eigen::VectorXd t = Eigen::VectorXd::Zero(nr);
        for (std::size_t i = 0; i < dims_[k]; ++i) {
          const int pos = static_cast<int>(std::find(rest.begin(), rest.end(), static_cast<int>(dh_ + r + i)) - rest.begin());
          t(pos) = alpha_[k](i);
        }
        rows.push_back(t);
        const double beta = beta_[k];
        factors.push_back([beta](double s) { return std::exp(log_sigmoid(s + beta)); });
      }
    }
    const int nu = static_cast<int>(rows.size());
    Eigen::MatrixXd t(nu, nr);
    for (int i = 0; i < nu; ++i) t.row(i) = rows[i].transpose();
    const Eigen::VectorXd umean = t * cmean;
    const Eigen::MatrixXd ucov = t * ccov * t.transpose();
    const double e = gaussian_expectation(umean, ucov, [&](const Eigen::VectorXd& u) {
      double v = 1.0;
      for (int i = 0; i < nu; ++i) v *= factors[i](u(i));
      return v;
    });
    return result + std::log(e);
  }

 private:
  void set(const std::string& name, const DenseMatrix& value) {
    Parameter* p = model_.params().find(name);
    if (!p || !p->value.same_shape(value)) throw std::logic_error("oracle: bad parameter " + name);
    p->value = value;
  }

  // Affine Gaussian head: mean = M in + m0, constant log-variance lv.
  static std::pair<DenseMatrix, DenseMatrix> head(const Eigen::MatrixXd& m, const Eigen::VectorXd& m0,
                                                  const Eigen::VectorXd& lv) {
    const auto out = m.rows(), in = m.cols();
    DenseMatrix w(2 * out, in), b(1, 2 * out);
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in; ++j) w(i, j) = m(i, j);
      b(0, i) = m0(i);
      b(0, out + i) = lv(i);
    }
    return {w, b};
  }

  void write_parameters(RngStream& rng) {
    auto [gw, gb] = head(A_, a_, sh_.array().log());
    set("global.decoder.0.weight", gw);
    set("global.decoder.0.bias", gb);
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      auto [w, b] = head(B_[k], b_[k], sk_[k].array().log());
      const std::string p = "party" + std::to_string(k);
      set(p + ".decoder.0.weight", w);
      set(p + ".decoder.0.bias", b);
      // Broad encoders keep importance weights well behaved.
      Eigen::MatrixXd em(dh_, dims_[k]);
      for (int i = 0; i < em.size(); ++i) em.data()[i] = 0.3 * rng.normal();
      Eigen::VectorXd e0(dh_);
      for (auto& v : e0) v = 0.3 * rng.normal();
      auto [ew, eb] = head(em, e0, Eigen::VectorXd::Constant(dh_, std::log(2.5)));
      set(p + ".encoder.0.weight", ew);
      set(p + ".encoder.0.bias", eb);
      if (model_.arch().variant == Variant::II) {
        DenseMatrix iw(1, dims_[k]), ib(1, 1);
        for (std::size_t i = 0; i < dims_[k]; ++i) iw(0, i) = alpha_[k](i);
        ib(0, 0) = beta_[k];
        set(p + ".indicator.0.weight", iw);
        set(p + ".indicator.0.bias", ib);
      }
    }
    Eigen::MatrixXd gm(dz_, dh_);
    for (int i = 0; i < gm.size(); ++i) gm.data()[i] = 0.3 * rng.normal();
    auto [qw, qb] = head(gm, Eigen::VectorXd::Zero(dz_), Eigen::VectorXd::Constant(dz_, std::log(1.5)));
    set("global.encoder.0.weight", qw);
    set("global.encoder.0.bias", qb);
    DenseMatrix dw(classes_, dh_), db(1, classes_);
    for (std::size_t c = 0; c < classes_; ++c) {
      for (std::size_t j = 0; j < dh_; ++j) dw(c, j) = c_(c) * w_(j);
      db(0, c) = d_(c);
    }
    set("discriminator.0.weight", dw);
    set("discriminator.0.bias", db);
  }

  std::vector<std::size_t> dims_;
  std::size_t dh_, dz_, classes_;
  FalseVflModel model_;
  Eigen::MatrixXd A_;
  Eigen::VectorXd a_, sh_;
  std::vector<Eigen::MatrixXd> B_;
  std::vector<Eigen::VectorXd> b_, sk_, alpha_;
  std::vector<double> beta_;
  Eigen::VectorXd w_, c_, d_;
};

}  // namespace falsevfl::testing
