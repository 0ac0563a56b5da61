#include <cmath>
#include <cstdlib>
#include <numeric>

#include "doctest.h"
#include "falsevfl/error.hpp"
#include "falsevfl/objectives.hpp"
#include "fd_check.hpp"
#include "lg_oracle.hpp"

using namespace falsevfl;
using falsevfl::testing::LinearGaussianInstance;

namespace {

struct Fixture {
  PartitionedDataset ds;
  std::vector<AvailabilityRecord> records;
};

Fixture random_fixture(RngStream& rng, std::vector<std::size_t> dims, std::size_t n, std::size_t classes) {
  std::size_t d = std::accumulate(dims.begin(), dims.end(), std::size_t{0});
  DenseMatrix x(n, d);
  for (double& v : x.flat()) v = rng.normal();
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng.uniform_index(classes);
  Fixture f{PartitionedDataset::from_matrix(x, dims, y, classes), {}};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint8_t> m(dims.size());
    do {
      for (auto& v : m) v = rng.bernoulli(0.4);
    } while (std::all_of(m.begin(), m.end(), [](auto v) { return v == 1; }));
    f.records.emplace_back(m, false);
  }
  return f;
}

ArchConfig small_arch(std::vector<std::size_t> dims, std::size_t classes, Variant v) {
  ArchConfig a;
  a.party_dims = std::move(dims);
  a.num_classes = classes;
  a.dim_h = 4;
  a.dim_z = 2;
  a.hidden = 5;
  a.variant = v;
  return a;
}

double eval_bound(const FalseVflModel& model, const SampleRef& s, const BoundSpec& spec, std::uint64_t seed) {
  RngStream rng(seed);
  Tape tape;
  return tape.scalar(bound(tape, model, s, spec, rng));
}

struct MeanSe {
  double mean, se;
};

MeanSe mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1) / n)};
}

}  // namespace

TEST_CASE("bound estimator identities for identical draws") {
  RngStream rng(1);
  auto fx = random_fixture(rng, {2, 1, 3}, 10, 3);
  auto model = FalseVflModel::init(small_arch({2, 1, 3}, 3, Variant::II), rng);

  SUBCASE("kappa = 1 is the single-sample evidence bound") {
    for (std::size_t i = 0; i < 10; ++i) {
      const SampleRef s{&fx.ds, i, &fx.records[i]};
      RngStream r1(100 + i), r2(100 + i);
      Tape t;
      const auto terms = particle_terms(t, model, s, {.kappa = 1}, r1);
      CHECK(eval_bound(model, s, {Variant::I, false, 1}, 100 + i) == t.scalar(t.sum_all(terms.marginal)));
    }
  }
  SUBCASE("fixed seed reproduces the value") {
    const SampleRef s{&fx.ds, 3, &fx.records[3]};
    for (bool cond : {false, true})
      for (Variant v : {Variant::I, Variant::II})
        CHECK(eval_bound(model, s, {v, cond, 7}, 5) == eval_bound(model, s, {v, cond, 7}, 5));
  }
  SUBCASE("uniform discriminator subtracts log C") {
    for (std::size_t i = 0; i < model.params().size(); ++i)
      if (model.params()[i].group == ParamGroup::Discriminator)
        for (double& v : model.params()[i].value.flat()) v = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
      const SampleRef s{&fx.ds, i, &fx.records[i]};
      for (Variant v : {Variant::I, Variant::II}) {
        const double marg = eval_bound(model, s, {v, false, 8}, 40 + i);
        const double cond = eval_bound(model, s, {v, true, 8}, 40 + i);
        CHECK(cond == doctest::Approx(marg - std::log(3.0)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("constant one-half indicators add K log 1/2") {
    for (std::size_t i = 0; i < model.params().size(); ++i)
      if (model.params()[i].group == ParamGroup::MissingIndicator)
        for (double& v : model.params()[i].value.flat()) v = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
      const SampleRef s{&fx.ds, i, &fx.records[i]};
      for (bool cond : {false, true}) {
        const double one = eval_bound(model, s, {Variant::I, cond, 6}, 70 + i);
        const double two = eval_bound(model, s, {Variant::II, cond, 6}, 70 + i);
        CHECK(two == doctest::Approx(one + 3 * std::log(0.5)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("fully observed sample: the mask term is the observed-indicator likelihood") {
    const AvailabilityRecord rec({0, 0, 0}, false);
    const SampleRef s{&fx.ds, 0, &rec};
    RngStream r(3);
    Tape t;
    const auto terms = particle_terms(t, model, s, {.kappa = 4, .mask = true}, r);
    double expected = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double logit =
          t.value(model.missing_logit(t, k, t.constant(DenseMatrix::row_vector(fx.ds.features(0, k)))))(0, 0);
      expected += -std::log1p(std::exp(logit));
    }
    for (std::size_t j = 0; j < 4; ++j) CHECK(t.value(terms.mask)(j, 0) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("usage errors") {
    const AvailabilityRecord unlabeled = fx.records[0].with_label_missing(true);
    const SampleRef s{&fx.ds, 0, &unlabeled};
    RngStream r(1);
    Tape t;
    CHECK_THROWS_AS(conditional_bound_I(t, model, s, 3, r), UsageError);
    auto m1 = FalseVflModel::init(small_arch({2, 1, 3}, 3, Variant::I), rng);
    const SampleRef ok{&fx.ds, 0, &fx.records[0]};
    CHECK_THROWS_AS(marginal_bound_II(t, m1, ok, 3, r), UsageError);
    CHECK_THROWS_AS(marginal_bound_I(t, m1, ok, 0, r), ConfigError);
  }
}

TEST_CASE("nested estimates") {
  const std::vector<double> lw{0.0, std::log(3.0), -1.0};
  const std::vector<std::size_t> ks{1, 2, 3};
  const auto est = nested_bound_estimates(lw, ks);
  CHECK(est[0] == 0.0);
  CHECK(est[1] == doctest::Approx(std::log(2.0)));
  CHECK(est[2] == doctest::Approx(std::log((1 + 3 + std::exp(-1.0)) / 3)));
  CHECK_THROWS_AS(nested_bound_estimates(lw, std::vector<std::size_t>{4}), ConfigError);
}

TEST_CASE("linear-Gaussian oracle self-consistency") {
  // exp(log p(y, x) - log p(x)) summed over classes is one.
  RngStream rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    LinearGaussianInstance inst({2, 1}, 2, 2, 3, Variant::I, rng);
    const auto x = inst.sample_x(rng);
    const std::vector<std::uint8_t> miss{0, 0};
    double total = 0.0;
    for (std::size_t y = 0; y < 3; ++y)
      total += std::exp(inst.log_likelihood(x, miss, y, false) - inst.log_likelihood(x, miss, std::nullopt, false));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("bounds stay below the exact likelihood and tighten with kappa") {
  RngStream rng(3);
  for (int trial = 0; trial < 4; ++trial) {
    const std::vector<std::size_t> dims = trial % 2 ? std::vector<std::size_t>{1, 1, 1} : std::vector<std::size_t>{2, 1};
    LinearGaussianInstance inst(dims, 2, 2, 2, Variant::II, rng);
    auto& model = inst.model();
    model.set_all_frozen(true);
    const auto xv = inst.sample_x(rng);
    const auto ds = PartitionedDataset::from_matrix(DenseMatrix(1, xv.size(), xv), dims, {1}, 2);
    std::vector<std::uint8_t> m(dims.size(), 0);
    m[0] = 1;
    const AvailabilityRecord rec(m, false);
    const SampleRef s{&ds, 0, &rec};
    for (bool cond : {false, true}) {
      for (Variant v : {Variant::I, Variant::II}) {
        const double exact =
            inst.log_likelihood(xv, m, cond ? std::optional<std::size_t>(1) : std::nullopt, v == Variant::II);
        std::vector<double> g1, g50;
        for (std::uint64_t r = 0; r < 1500; ++r) {
          RngStream sr(1000 * trial + r);
          Tape t;
          TermRequest req{.kappa = 50, .mask = v == Variant::II};
          if (cond) req.label = 1;
          const auto terms = particle_terms(t, model, s, req, sr);
          const Var lw = combined_log_weights(t, terms, cond, v == Variant::II);
          const auto flat = t.value(lw).flat();
          const auto est = nested_bound_estimates(flat, std::vector<std::size_t>{1, 50});
          g1.push_back(est[0]);
          g50.push_back(est[1]);
        }
        const auto a = mean_se(g1), b = mean_se(g50);
        INFO("cond=" << cond << " variant=" << variant_name(v) << " exact=" << exact << " k1=" << a.mean
                     << " k50=" << b.mean);
        CHECK(a.mean <= exact + 3 * a.se);
        CHECK(b.mean <= exact + 3 * b.se);
        CHECK(std::abs(exact - b.mean) < std::abs(exact - a.mean));
      }
    }
  }
}

TEST_CASE("the importance ratio is unbiased for the likelihood") {
  RngStream rng(4);
  LinearGaussianInstance inst({1, 2}, 2, 1, 2, Variant::I, rng);
  inst.model().set_all_frozen(true);
  const auto xv = inst.sample_x(rng);
  const auto ds = PartitionedDataset::from_matrix(DenseMatrix(1, 3, xv), std::vector<std::size_t>{1, 2});
  const AvailabilityRecord rec({0, 0}, true);
  const double exact = inst.log_likelihood(xv, {0, 0}, std::nullopt, false);
  std::vector<double> ratios;
  for (std::uint64_t r = 0; r < 200; ++r) {
    RngStream sr(r);
    Tape t;
    const auto terms = particle_terms(t, inst.model(), {&ds, 0, &rec}, {.kappa = 200}, sr);
    for (double lw : t.value(terms.marginal).flat()) ratios.push_back(std::exp(lw - exact));
  }
  const auto ms = mean_se(ratios);
  INFO("mean ratio / p = " << ms.mean << " se " << ms.se);
  CHECK(std::abs(ms.mean - 1.0) < 4 * ms.se);
}

TEST_CASE("bound gradients pass the finite-difference check with frozen noise") {
  RngStream rng(5);
  auto fx = random_fixture(rng, {2, 1, 2}, 4, 3);
  auto model = FalseVflModel::init(small_arch({2, 1, 2}, 3, Variant::II), rng);
  const AvailabilityRecord rec({0, 1, 0}, false);
  const SampleRef s{&fx.ds, 1, &rec};
  for (bool cond : {false, true}) {
    for (Variant v : {Variant::I, Variant::II}) {
      const auto loss = [&](Tape& t) {
        RngStream r(77);
        return bound(t, model, s, {v, cond, 5}, r);
      };
      const auto res = falsevfl::testing::fd_check(model.params(), loss, 30, 9);
      INFO(res.worst);
      CHECK(res.failures == 0);
    }
  }
}

TEST_CASE("Adam") {
  ParameterSet ps;
  ps.add("w", ParamGroup::Baseline, DenseMatrix(1, 1, 1.0));
  ps.add("f", ParamGroup::Baseline, DenseMatrix(1, 1, 1.0)).frozen = true;
  SUBCASE("zero gradient shrinks by weight decay only") {
    Adam opt(ps, {.lr = 0.1, .weight_decay = 0.01});
    GradientBuffer g(2);
    g.accumulate(ps[0], DenseMatrix(1, 1, 0.0));
    g.accumulate(ps[1], DenseMatrix(1, 1, 0.0));
    opt.step(ps, g);
    CHECK(ps[0].value(0, 0) == doctest::Approx(1.0 - 0.1 * 0.01).epsilon(1e-15));
    CHECK(ps[1].value(0, 0) == 1.0);
    CHECK(opt.touched() == std::vector<bool>{true, false});
  }
  SUBCASE("single step by hand") {
    Adam opt(ps, {.lr = 0.1, .weight_decay = 0.01});
    GradientBuffer g(2);
    g.accumulate(ps[0], DenseMatrix(1, 1, 0.5));
    opt.step(ps, g);
    // m_hat = 0.5, v_hat = 0.25.
    CHECK(ps[0].value(0, 0) == doctest::Approx(1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01)).epsilon(1e-15));
  }
  SUBCASE("constant gradient moves by about lr per step") {
    Adam opt(ps, {.lr = 0.01});
    for (int t = 0; t < 200; ++t) {
      GradientBuffer g(2);
      g.accumulate(ps[0], DenseMatrix(1, 1, -3.0));
      const double before = ps[0].value(0, 0);
      opt.step(ps, g);
      CHECK(ps[0].value(0, 0) - before == doctest::Approx(0.01).epsilon(1e-6));
    }
  }
  SUBCASE("shape mismatch") {
    Adam opt(ps, {.lr = 0.1});
    GradientBuffer wrong(1);
    CHECK_THROWS_AS(opt.step(ps, wrong), ConfigError);
    GradientBuffer g(2);
    g.accumulate(ps[0], DenseMatrix(1, 1, 0.5));
    ps[0].value = DenseMatrix(1, 2);
    CHECK_THROWS_AS(opt.step(ps, g), ConfigError);
  }
}

TEST_CASE("training config JSON") {
  TrainConfig c;
  c.variant = Variant::II;
  c.kappa = 7;
  c.lr_stage2 = 0.125;
  const auto back = train_config_from_json(train_config_to_json(c));
  CHECK(train_config_to_json(back) == train_config_to_json(c));
  CHECK(train_config_from_json(nlohmann::json::object()).dim_h == 128);
  CHECK_THROWS_AS(train_config_from_json({{"kapa", 3}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"kappa", 0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"variant", "III"}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"kappa", "ten"}}), ConfigError);
}

TEST_CASE("two-stage training") {
  RngStream rng(6);
  LinearGaussianInstance inst({2, 2}, 2, 1, 2, Variant::I, rng);
  const std::size_t n = 300;
  DenseMatrix x(n, 4);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = inst.sample_x(rng);
    for (std::size_t j = 0; j < 4; ++j) x(i, j) = xi[j];
  }
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x(i, 0) > 0;
  const auto ds = PartitionedDataset::from_matrix(x, std::vector<std::size_t>{2, 2}, y, 2);
  std::vector<AvailabilityRecord> unlabeled;
  for (std::size_t i = 0; i < n; ++i) unlabeled.emplace_back(std::vector<std::uint8_t>{0, static_cast<std::uint8_t>(i % 3 == 0)}, true);

  TrainConfig cfg;
  cfg.dim_h = 3;
  cfg.dim_z = 2;
  cfg.hidden = 8;
  cfg.kappa = 5;
  cfg.lr_stage1 = 5e-3;
  cfg.lr_stage2 = 5e-3;
  cfg.batch_size = 32;
  cfg.batch_size_stage1 = 32;
  cfg.epochs_stage1 = 15;
  cfg.epochs_stage2 = 3;
  cfg.seed = 4;

  SUBCASE("zero epochs leaves parameters unchanged and freezes") {
    RngStream r(1);
    auto model = FalseVflModel::init(cfg.arch(ds.dims, 2), r);
    const auto before = model.checksum(nullptr);
    TrainConfig zero = cfg;
    zero.epochs_stage1 = 0;
    train_stage1(model, ds, unlabeled, zero);
    CHECK(model.checksum(nullptr) == before);
    CHECK(model.generative_frozen());
  }
  SUBCASE("stage 1 on unlabeled data raises the held-out bound; stage 2 touches only the discriminator") {
    RngStream r(1);
    auto model = FalseVflModel::init(cfg.arch(ds.dims, 2), r);
    std::vector<std::size_t> held(50);
    std::iota(held.begin(), held.end(), std::size_t{250});
    const BoundSpec spec{Variant::I, false, 5};
    const double before = mean_bound(model, ds, unlabeled, held, spec, RngStream(99));
    const auto report = train_stage1(model, ds, unlabeled, cfg);
    const double after = mean_bound(model, ds, unlabeled, held, spec, RngStream(99));
    CHECK(report.epoch_mean_bound.size() == 15);
    CHECK(report.optimizer_steps == 15 * 10);
    CHECK(after > before + 1.0);
    for (std::size_t i = 0; i < model.params().size(); ++i)
      CHECK(report.touched[i] == is_generative_group(model.params()[i].group));

    CHECK_THROWS_AS(train_stage2(model, ds, unlabeled, cfg), ConfigError);

    std::vector<AvailabilityRecord> labeled = unlabeled;
    for (std::size_t i = 0; i < 40; ++i) labeled[i] = labeled[i].with_label_missing(false);
    const auto gen = model.checksum(is_generative_group);
    const auto disc = model.checksum(is_discriminator_group);
    const auto r2 = train_stage2(model, ds, labeled, cfg);
    CHECK(model.checksum(is_generative_group) == gen);
    CHECK(model.checksum(is_discriminator_group) != disc);
    for (std::size_t i = 0; i < model.params().size(); ++i)
      CHECK(r2.touched[i] == is_discriminator_group(model.params()[i].group));
  }
  SUBCASE("stage 2 refuses an unfrozen model") {
    RngStream r(1);
    auto model = FalseVflModel::init(cfg.arch(ds.dims, 2), r);
    CHECK_THROWS_AS(train_stage2(model, ds, unlabeled, cfg), UsageError);
  }
  SUBCASE("results do not depend on the worker count") {
    TrainConfig quick = cfg;
    quick.epochs_stage1 = 2;
    RngStream r1(1), r2(1);
    auto a = FalseVflModel::init(cfg.arch(ds.dims, 2), r1);
    auto b = FalseVflModel::init(cfg.arch(ds.dims, 2), r2);
    ::setenv("FALSEVFL_THREADS", "1", 1);
    train_stage1(a, ds, unlabeled, quick);
    ::setenv("FALSEVFL_THREADS", "3", 1);
    train_stage1(b, ds, unlabeled, quick);
    ::unsetenv("FALSEVFL_THREADS");
    CHECK(a.checksum(nullptr) == b.checksum(nullptr));
  }
}
