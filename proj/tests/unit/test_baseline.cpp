#include <cmath>

#include "doctest.h"
#include "falsevfl/baseline.hpp"
#include "falsevfl/error.hpp"
#include "fd_check.hpp"
#include "temp_dir.hpp"

using namespace falsevfl;

namespace {

PartitionedDataset separable(std::size_t n, RngStream& rng) {
  DenseMatrix x(n, 5);
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = rng.uniform_index(3);
    for (std::size_t j = 0; j < 5; ++j) x(i, j) = 0.5 * rng.normal() + (j % 3 == y[i] ? 2.5 : 0.0);
  }
  return PartitionedDataset::from_matrix(x, std::vector<std::size_t>{2, 2, 1}, y, 3);
}

VanillaConfig quick_config() {
  VanillaConfig c;
  c.embed_dim = 6;
  c.hidden = 12;
  c.lr = 1e-2;
  c.batch_size = 16;
  c.epochs = 30;
  c.seed = 5;
  return c;
}

std::vector<AvailabilityRecord> all_aligned(std::size_t n, bool label_missing) {
  return std::vector<AvailabilityRecord>(n, AvailabilityRecord::fully_observed(3, label_missing));
}

}  // namespace

TEST_CASE("shapes follow the configuration") {
  RngStream rng(1);
  VanillaConfig c = quick_config();
  auto m = VanillaModel::init({2, 2, 1}, 3, c, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto* last = m.params().find("vanilla.party" + std::to_string(k) + ".1.weight");
    REQUIRE(last != nullptr);
    CHECK(last->value.rows() == c.embed_dim);
  }
  const auto* fusion_in = m.params().find("vanilla.fusion.0.weight");
  REQUIRE(fusion_in != nullptr);
  CHECK(fusion_in->value.cols() == 3 * c.embed_dim);
  CHECK_THROWS_AS(VanillaModel::init({2, 0}, 3, c, rng), ConfigError);
  CHECK_THROWS_AS(VanillaModel::init({2}, 1, c, rng), ConfigError);
}

TEST_CASE("missing parties enter the fusion layer as zero embeddings") {
  RngStream rng(2);
  auto m = VanillaModel::init({2, 2, 1}, 3, quick_config(), rng);
  const auto ds = separable(4, rng);

  SUBCASE("perturbing a missing party's features changes nothing") {
    DenseMatrix x = ds.concatenated();
    const AvailabilityRecord rec({0, 1, 1}, true);
    const auto before = vanilla_predict(m, ds, 0, rec);
    for (std::size_t j = 2; j < 5; ++j) x(0, j) = 1e4;
    const auto changed = PartitionedDataset::from_matrix(x, ds.dims, ds.labels, 3);
    CHECK(vanilla_predict(m, changed, 0, rec) == before);
    // Observed features do matter.
    CHECK(vanilla_predict(m, changed, 0, AvailabilityRecord::fully_observed(3, true)) !=
          vanilla_predict(m, ds, 0, AvailabilityRecord::fully_observed(3, true)));
  }
  SUBCASE("one observed party: logits equal the fusion net on [e_0, 0, 0]") {
    const AvailabilityRecord rec({0, 1, 1}, true);
    Tape tape;
    const auto got = tape.value(m.logits(tape, observed_view(ds, 1, rec)));

    // Rebuild the forward pass from the stored weights.
    auto layer = [&](const std::string& name, const std::vector<double>& in, bool squash) {
      const auto& w = m.params().find(name + ".weight")->value;
      const auto& b = m.params().find(name + ".bias")->value;
      std::vector<double> out(w.rows());
      for (std::size_t r = 0; r < w.rows(); ++r) {
        double s = b(0, r);
        for (std::size_t c = 0; c < w.cols(); ++c) s += w(r, c) * in[c];
        out[r] = squash ? std::tanh(s) : s;
      }
      return out;
    };
    const auto f = ds.features(1, 0);
    auto e0 = layer("vanilla.party0.1", layer("vanilla.party0.0", {f.begin(), f.end()}, true), true);
    e0.resize(3 * quick_config().embed_dim, 0.0);
    const auto want = layer("vanilla.fusion.1", layer("vanilla.fusion.0", e0, true), false);
    for (std::size_t c = 0; c < 3; ++c) CHECK(got(0, c) == doctest::Approx(want[c]).epsilon(1e-12));
  }
}

TEST_CASE("cross-entropy gradients match finite differences") {
  RngStream rng(3);
  auto m = VanillaModel::init({2, 2, 1}, 3, quick_config(), rng);
  const auto ds = separable(3, rng);
  const std::vector<AvailabilityRecord> recs{AvailabilityRecord({0, 0, 0}, false), AvailabilityRecord({1, 0, 0}, false),
                                             AvailabilityRecord({0, 1, 1}, false)};
  auto loss = [&](Tape& t) {
    Var total;
    for (std::size_t i = 0; i < 3; ++i) {
      const Var l = t.categorical_logpmf_rows(m.logits(t, observed_view(ds, i, recs[i])), ds.labels[i]);
      total = total.valid() ? t.add(total, l) : l;
    }
    return total;
  };
  const auto r = falsevfl::testing::fd_check(m.params(), loss, 100, 4);
  INFO(r.worst);
  CHECK(r.checked == 100);
  CHECK(r.failures == 0);
}

TEST_CASE("training") {
  RngStream rng(4);
  const auto train = separable(300, rng);
  const auto test = separable(200, rng);

  SUBCASE("separable classes are learned from aligned labeled data") {
    const auto recs = all_aligned(300, false);
    TrainReport report;
    const auto m = vanilla_train(train, recs, quick_config(), &report);
    CHECK(report.epoch_mean_bound.back() > report.epoch_mean_bound.front());
    const auto metrics = vanilla_evaluate(m, test, all_aligned(200, true));
    INFO("accuracy " << metrics.accuracy);
    CHECK(metrics.accuracy >= 0.95);
  }
  SUBCASE("only labeled, fully aligned samples are used") {
    std::vector<AvailabilityRecord> recs;
    for (std::size_t i = 0; i < 300; ++i)
      recs.emplace_back(std::vector<std::uint8_t>{0, static_cast<std::uint8_t>(i % 2), 0}, i % 3 != 0);
    TrainReport report;
    VanillaConfig c = quick_config();
    c.epochs = 1;
    c.batch_size = 1000;
    vanilla_train(train, recs, c, &report);
    // One full batch per epoch over the 50 eligible samples.
    CHECK(report.optimizer_steps == 1);

    // Changing an ineligible sample's features leaves the trained weights alone.
    DenseMatrix x = train.concatenated();
    x(1, 0) += 10.0;  // sample 1: party 1 missing
    x(3, 0) += 10.0;  // sample 3: label missing
    const auto other = PartitionedDataset::from_matrix(x, train.dims, train.labels, 3);
    const auto a = vanilla_train(train, recs, c);
    const auto b = vanilla_train(other, recs, c);
    for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].value.flat()[0] == b.params()[i].value.flat()[0]);
  }
  SUBCASE("no aligned labeled samples is an error") {
    std::vector<AvailabilityRecord> recs;
    for (std::size_t i = 0; i < 300; ++i) recs.emplace_back(std::vector<std::uint8_t>{0, 1, 0}, false);
    CHECK_THROWS_AS(vanilla_train(train, recs, quick_config()), ConfigError);
    CHECK_THROWS_AS(vanilla_train(train, all_aligned(300, true), quick_config()), ConfigError);
  }
  SUBCASE("deterministic under a seed") {
    VanillaConfig c = quick_config();
    c.epochs = 3;
    const auto a = vanilla_train(train, all_aligned(300, false), c);
    const auto b = vanilla_train(train, all_aligned(300, false), c);
    for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].value.flat()[0] == b.params()[i].value.flat()[0]);
    c.seed = 6;
    const auto d = vanilla_train(train, all_aligned(300, false), c);
    CHECK(d.params()[0].value(0, 0) != a.params()[0].value(0, 0));
  }
}

TEST_CASE("checkpoint and config round trips") {
  RngStream rng(5);
  auto m = VanillaModel::init({2, 2, 1}, 3, quick_config(), rng);
  testing::TempDir dir;
  NormalizationStats stats{{0.1, 0.2, 0.3, 0.4, 0.5}, {1, 2, 3, 4, 5}};
  save_vanilla(m, &stats, dir / "v.json");
  CHECK(checkpoint_kind(dir / "v.json") == "vanilla");
  const auto back = load_vanilla(dir / "v.json");
  CHECK(back.stats->std == stats.std);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto a = m.params()[i].value.flat();
    const auto b = back.model.params()[i].value.flat();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "v.json"), IoError);
  dir.write("bad.json", R"({"format_version": 1, "kind": "other"})");
  CHECK_THROWS_AS(checkpoint_kind(dir / "bad.json"), IoError);

  const auto j = vanilla_config_to_json(quick_config());
  CHECK(vanilla_config_to_json(vanilla_config_from_json(j)) == j);
  CHECK_THROWS_AS(vanilla_config_from_json({{"learning_rate", 1.0}}), ConfigError);
  CHECK_THROWS_AS(vanilla_config_from_json({{"batch_size", 0}}), ConfigError);
}
