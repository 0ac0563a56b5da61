#include <cmath>
#include <numeric>

#include "doctest.h"
#include "falsevfl/error.hpp"
#include "falsevfl/harness.hpp"
#include "temp_dir.hpp"

using namespace falsevfl;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  SyntheticSource s;
  s.num_classes = 2;
  s.party_dims = {2, 2};
  s.train_per_class = 40;
  s.test_per_class = 10;
  c.data = s;
  c.labeled = 20;
  c.aligned = 5;
  c.train_patterns = {"mcar2"};
  c.test_patterns = {"mcar0"};
  c.methods = {"falsevfl-I", "vanilla"};
  c.falsevfl.dim_h = 2;
  c.falsevfl.dim_z = 1;
  c.falsevfl.hidden = 4;
  c.falsevfl.kappa = 2;
  c.falsevfl.epochs_stage1 = 1;
  c.falsevfl.epochs_stage2 = 1;
  c.vanilla.embed_dim = 2;
  c.vanilla.hidden = 4;
  c.vanilla.epochs = 2;
  c.snis.samples = 4;
  c.seeds = {0};
  c.output_dir = out;
  return c;
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) ++n;
  return n;
}

}  // namespace

TEST_CASE("synthetic generator") {
  SUBCASE("orthogonal means sit at the requested pairwise distance") {
    RngStream rng(1);
    const auto spec = SyntheticSpec::orthogonal(3, {3, 3, 3, 3}, 4.0, 1.5, 10, rng);
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = a + 1; b < 3; ++b) {
        double d2 = 0.0, dot = 0.0;
        for (std::size_t j = 0; j < 12; ++j) {
          d2 += std::pow(spec.class_means(a, j) - spec.class_means(b, j), 2);
          dot += spec.class_means(a, j) * spec.class_means(b, j);
        }
        CHECK(std::sqrt(d2) == doctest::Approx(6.0).epsilon(1e-12));
        CHECK(dot == doctest::Approx(0.0).epsilon(1e-12));
      }
    CHECK_THROWS_AS(SyntheticSpec::orthogonal(5, {2, 2}, 4.0, 1.0, 10, rng), ConfigError);
  }
  SUBCASE("zero std reproduces the class means") {
    RngStream rng(2);
    auto spec = SyntheticSpec::orthogonal(2, {1, 2}, 4.0, 1.0, 5, rng);
    spec.std = 0.0;
    RngStream g(3);
    const auto ds = gen_synthetic(spec, g);
    CHECK(ds.num_samples == 10);
    CHECK(std::count(ds.labels.begin(), ds.labels.end(), 1u) == 5);
    const auto x = ds.concatenated();
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(x(i, j) == spec.class_means(ds.labels[i], j));
  }
  SUBCASE("fixed seeds reproduce the data") {
    RngStream r1(4), r2(4);
    const auto s1 = SyntheticSpec::orthogonal(2, {2, 2}, 4.0, 1.0, 20, r1);
    const auto s2 = SyntheticSpec::orthogonal(2, {2, 2}, 4.0, 1.0, 20, r2);
    const auto a = gen_synthetic(s1, r1);
    const auto b = gen_synthetic(s2, r2);
    CHECK(a.labels == b.labels);
    const auto fa = a.concatenated().flat();
    const auto fb = b.concatenated().flat();
    CHECK(std::equal(fa.begin(), fa.end(), fb.begin(), fb.end()));
  }
  SUBCASE("four-sigma separation gives Bayes accuracy above 0.97") {
    // Phi(2) from its series expansion, independent of erfc.
    double term = 2.0, sum = 2.0;
    for (int n = 1; n < 60; ++n) {
      term *= -4.0 / (2.0 * n) ;
      sum += term / (2.0 * n + 1.0);
    }
    const double phi2 = 0.5 + sum / std::sqrt(2.0 * M_PI);
    CHECK(two_class_bayes_accuracy(4.0, 1.0) == doctest::Approx(phi2).epsilon(1e-12));
    CHECK(phi2 > 0.97);

    // The Bayes rule (nearest mean) on generated data matches the closed form.
    RngStream rng(5);
    const auto spec = SyntheticSpec::orthogonal(2, {3, 3}, 4.0, 1.0, 20000, rng);
    const auto ds = gen_synthetic(spec, rng);
    const auto x = ds.concatenated();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.num_samples; ++i) {
      double d0 = 0, d1 = 0;
      for (std::size_t j = 0; j < 6; ++j) {
        d0 += std::pow(x(i, j) - spec.class_means(0, j), 2);
        d1 += std::pow(x(i, j) - spec.class_means(1, j), 2);
      }
      correct += (d1 < d0) == (ds.labels[i] == 1);
    }
    CHECK(static_cast<double>(correct) / 40000.0 == doctest::Approx(phi2).epsilon(0.004));
  }
}

TEST_CASE("experiment config") {
  testing::TempDir dir;
  const auto c = tiny_config(dir / "out");
  const auto j = experiment_config_to_json(c);
  CHECK(experiment_config_to_json(experiment_config_from_json(j)) == j);

  auto bad = j;
  bad["seeds"] = nlohmann::json::array();
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = j;
  bad["test_patterns"] = {"mcar7"};
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = j;
  bad["methods"] = {"laser"};
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = j;
  bad["epochs"] = 3;
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = j;
  bad["data"]["source"] = "sql";
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);

  dir.write("cfg.json", R"({"data": {"source": "csv", "train": "a.csv", "test": "/abs/b.csv", "party_dims": [2]},
                             "output_dir": "results"})");
  const auto loaded = load_experiment_config(dir / "cfg.json");
  const auto& csv = std::get<CsvSource>(loaded.data);
  CHECK(csv.train == dir.path() / "a.csv");
  CHECK(csv.test == fs::path("/abs/b.csv"));
  CHECK(loaded.output_dir == dir.path() / "results");
}

TEST_CASE("summary statistics") {
  std::vector<CellResult> cells;
  const std::vector<double> acc{0.5, 0.75, 0.9};
  for (std::size_t s = 0; s < 3; ++s) {
    CellResult c{"mcar2", s, "vanilla", "mcar0", {}};
    c.metrics.accuracy = acc[s];
    cells.push_back(c);
  }
  const auto rows = summarize({"mcar0", "mcar5"}, cells, "mcar2", "vanilla");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].mean_acc == doctest::Approx(2.15 / 3));
  const double m = 2.15 / 3;
  const double var = (std::pow(0.5 - m, 2) + std::pow(0.75 - m, 2) + std::pow(0.9 - m, 2)) / 2.0;
  CHECK(rows[0].std_acc == doctest::Approx(std::sqrt(var)));
  CHECK(rows[0].n_seeds == 3);
  CHECK(rows[1].n_seeds == 0);

  testing::TempDir dir;
  save_summary_csv(rows, dir / "s.csv");
  const auto back = load_summary_csv(dir / "s.csv");
  CHECK(back[0].mean_acc == rows[0].mean_acc);
  CHECK(back[0].std_acc == rows[0].std_acc);
  CHECK(testing::read_file(dir / "s.csv").find("test_pattern,mean_acc,std_acc,n_seeds\n") != std::string::npos);
}

TEST_CASE("grid runner") {
  testing::TempDir dir;
  SUBCASE("one seed and one test pattern write one metrics file per method") {
    const auto c = tiny_config(dir / "out");
    const auto result = run_experiment(c);
    CHECK(result.cells.size() == 2);
    CHECK(fs::exists(dir / "out/mcar2/seed0/falsevfl-I/mcar0.json"));
    CHECK(fs::exists(dir / "out/mcar2/seed0/vanilla/mcar0.json"));
    CHECK(fs::exists(dir / "out/mcar2/seed0/train_masks.csv"));
    std::size_t metrics_files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "out"))
      if (e.path().extension() == ".json" && e.path().filename() != "model.json") ++metrics_files;
    CHECK(metrics_files == 2);
    const auto m = load_metrics(dir / "out/mcar2/seed0/falsevfl-I/mcar0.json");
    CHECK(m.n == 20);
    CHECK(m.by_alignment[0].has_value());
    CHECK(checkpoint_kind(dir / "out/mcar2/seed0/falsevfl-I/model.json") == "falsevfl");
  }
  SUBCASE("summary equals statistics recomputed from the per-seed files; reruns are byte-identical") {
    auto c = tiny_config(dir / "a");
    c.seeds = {3, 4};
    c.test_patterns = {"mcar0", "mnar7"};
    c.methods = {"vanilla"};
    run_experiment(c);
    const auto rows = load_summary_csv(dir / "a/mcar2/vanilla/summary.csv");
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
      const double a = load_metrics(dir / "a/mcar2/seed3/vanilla" / (row.test_pattern + ".json")).accuracy;
      const double b = load_metrics(dir / "a/mcar2/seed4/vanilla" / (row.test_pattern + ".json")).accuracy;
      CHECK(row.mean_acc == doctest::Approx((a + b) / 2));
      CHECK(row.std_acc == doctest::Approx(std::abs(a - b) / std::sqrt(2.0)));
      CHECK(row.n_seeds == 2);
    }
    c.output_dir = dir / "b";
    run_experiment(c);
    std::size_t compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), dir / "a");
      CHECK(testing::read_file(e.path()) == testing::read_file(dir / "b" / rel));
      ++compared;
    }
    CHECK(compared == count_files(dir / "b", ".json") + count_files(dir / "b", ".csv"));
  }
  SUBCASE("label and alignment counts reach the training masks") {
    const auto c = tiny_config(dir / "c");
    const auto data = prepare_data(c, 0);
    const auto masks = train_masks(c, data.train, "mcar5", 0);
    const auto a = audit(masks);
    CHECK(a.labeled == 20);
    std::size_t aligned_labeled = 0;
    for (const auto& r : masks.records) aligned_labeled += !r.label_missing() && r.missing_count() == 0;
    CHECK(aligned_labeled >= 5);
    const auto tm = test_masks(data.test, "mcar5", 0);
    for (const auto& r : tm.records) CHECK_FALSE(r.label_missing());
  }
}

TEST_CASE("accuracy chart") {
  std::vector<PlotSeries> series{{"FALSE-VFL <I>", {{"mcar0", 0.9, 0, 1}, {"mcar5", 0.7, 0, 1}}},
                                 {"vanilla", {{"mcar0", 0.8, 0, 1}, {"mcar5", 0.4, 0, 1}}}};
  const auto svg = accuracy_svg(series, "trained on mcar2");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  std::size_t lines = 0;
  for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
  CHECK(lines == 2);
  CHECK(svg.find("FALSE-VFL &lt;I&gt;") != std::string::npos);
}
