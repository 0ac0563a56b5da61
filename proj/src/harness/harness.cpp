#include "falsevfl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "../core/text_io.hpp"
#include "falsevfl/error.hpp"

namespace falsevfl {
namespace {

std::uint64_t name_key(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Sub-stream ids under RngStream(seed).
enum StreamId : std::uint64_t {
  kDataStream = 1,
  kTrainMaskStream = 2,
  kLabelStream = 3,
  kTestMaskStream = 4,
  kInitStream = 5,
  kEvalStream = 6,
};

void check_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

bool is_falsevfl(const std::string& method) { return method == "falsevfl-I" || method == "falsevfl-II"; }

std::string seed_dir(std::uint64_t seed) { return "seed" + std::to_string(seed); }

}  // namespace

std::size_t SyntheticSpec::dim() const { return std::accumulate(party_dims.begin(), party_dims.end(), std::size_t{0}); }

void SyntheticSpec::validate() const {
  if (party_dims.empty() || std::count(party_dims.begin(), party_dims.end(), 0u) > 0)
    throw ConfigError("synthetic: party widths must be positive");
  if (num_classes < 2) throw ConfigError("synthetic: need at least two classes");
  if (!(std >= 0.0) || !std::isfinite(std)) throw ConfigError("synthetic: std must be finite and non-negative");
  if (class_means.rows() != num_classes || class_means.cols() != dim())
    throw ConfigError("synthetic: class means must be C x sum(party_dims)");
}

SyntheticSpec SyntheticSpec::orthogonal(std::size_t num_classes, std::vector<std::size_t> party_dims,
                                        double separation, double std, std::size_t samples_per_class,
                                        RngStream& rng) {
  SyntheticSpec s;
  s.num_classes = num_classes;
  s.samples_per_class = samples_per_class;
  s.std = std;
  s.party_dims = std::move(party_dims);
  const std::size_t d = s.dim();
  if (num_classes > d) throw ConfigError("synthetic: more classes than feature dimensions");
  if (!(separation >= 0.0)) throw ConfigError("synthetic: separation must be non-negative");
  s.class_means = DenseMatrix(num_classes, d);
  const double radius = separation * std / std::numbers::sqrt2;
  std::vector<std::vector<double>> basis;
  while (basis.size() < num_classes) {
    std::vector<double> v(d);
    for (double& e : v) e = rng.normal();
    for (const auto& b : basis) {
      const double dot = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
      for (std::size_t j = 0; j < d; ++j) v[j] -= dot * b[j];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (double& e : v) e /= norm;
    basis.push_back(std::move(v));
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t j = 0; j < d; ++j) s.class_means(c, j) = radius * basis[c][j];
  s.validate();
  return s;
}

PartitionedDataset gen_synthetic(const SyntheticSpec& spec, RngStream& rng) {
  spec.validate();
  const std::size_t n = spec.num_classes * spec.samples_per_class;
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i / spec.samples_per_class;
  rng.shuffle(std::span<std::size_t>(labels));
  DenseMatrix x(n, spec.dim());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < spec.dim(); ++j) x(i, j) = spec.class_means(labels[i], j) + spec.std * rng.normal();
  return PartitionedDataset::from_matrix(x, spec.party_dims, std::move(labels), spec.num_classes);
}

double two_class_bayes_accuracy(double mean_distance, double std) {
  return 0.5 * std::erfc(-mean_distance / (2.0 * std * std::numbers::sqrt2));
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("experiment: seeds must not be empty");
  if (train_patterns.empty() || test_patterns.empty()) throw ConfigError("experiment: pattern lists must not be empty");
  if (methods.empty()) throw ConfigError("experiment: methods must not be empty");
  for (const auto& p : train_patterns) mechanism_from_name(p);
  for (const auto& p : test_patterns) mechanism_from_name(p);
  for (const auto& m : methods)
    if (!is_falsevfl(m) && m != "vanilla") throw ConfigError("experiment: unknown method '" + m + "'");
  if (aligned > labeled) throw ConfigError("experiment: aligned count exceeds labeled count");
  if (snis.samples == 0) throw ConfigError("experiment: snis_samples must be positive");
  falsevfl.validate();
  vanilla.validate();
  if (const auto* csv = std::get_if<CsvSource>(&data)) {
    if (csv->train.empty() || csv->test.empty()) throw ConfigError("experiment: csv source needs train and test paths");
    if (csv->party_dims.empty()) throw ConfigError("experiment: csv source needs party_dims");
  }
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json data;
  if (const auto* s = std::get_if<SyntheticSource>(&c.data)) {
    data = {{"source", "synthetic"},         {"num_classes", s->num_classes}, {"party_dims", s->party_dims},
            {"separation", s->separation},   {"std", s->std},                 {"train_per_class", s->train_per_class},
            {"test_per_class", s->test_per_class}};
  } else {
    const auto& v = std::get<CsvSource>(c.data);
    data = {{"source", "csv"},
            {"train", v.train.string()},
            {"test", v.test.string()},
            {"party_dims", v.party_dims},
            {"label_column", v.label_column},
            {"discard_extra", v.discard_extra}};
    if (v.num_classes) data["num_classes"] = *v.num_classes;
  }
  return {{"format_version", kFormatVersion},
          {"data", data},
          {"labeled", c.labeled},
          {"aligned", c.aligned},
          {"train_patterns", c.train_patterns},
          {"test_patterns", c.test_patterns},
          {"methods", c.methods},
          {"falsevfl", train_config_to_json(c.falsevfl)},
          {"vanilla", vanilla_config_to_json(c.vanilla)},
          {"snis_samples", c.snis.samples},
          {"mask_term", c.snis.mask_term},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir.string()}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  check_keys(j,
             {"format_version", "data", "labeled", "aligned", "train_patterns", "test_patterns", "methods", "falsevfl",
              "vanilla", "snis_samples", "mask_term", "seeds", "output_dir"},
             "experiment config");
  if (j.value("format_version", kFormatVersion) != kFormatVersion)
    throw ConfigError("experiment config: unsupported format_version");
  ExperimentConfig c;
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  try {
    if (j.contains("data")) {
      const auto& d = j["data"];
      const std::string source = d.is_object() ? d.value("source", std::string("synthetic")) : "";
      if (source == "synthetic") {
        check_keys(d, {"source", "num_classes", "party_dims", "separation", "std", "train_per_class", "test_per_class"},
                   "data");
        SyntheticSource s;
        s.num_classes = d.value("num_classes", s.num_classes);
        s.party_dims = d.value("party_dims", s.party_dims);
        s.separation = d.value("separation", s.separation);
        s.std = d.value("std", s.std);
        s.train_per_class = d.value("train_per_class", s.train_per_class);
        s.test_per_class = d.value("test_per_class", s.test_per_class);
        c.data = s;
      } else if (source == "csv") {
        check_keys(d, {"source", "train", "test", "party_dims", "label_column", "discard_extra", "num_classes"}, "data");
        CsvSource s;
        s.train = resolve(d.at("train").get<std::string>());
        s.test = resolve(d.at("test").get<std::string>());
        s.party_dims = d.at("party_dims").get<std::vector<std::size_t>>();
        s.label_column = d.value("label_column", s.label_column);
        s.discard_extra = d.value("discard_extra", s.discard_extra);
        if (d.contains("num_classes")) s.num_classes = d["num_classes"].get<std::size_t>();
        c.data = s;
      } else {
        throw ConfigError("data.source must be \"synthetic\" or \"csv\"");
      }
    }
    c.labeled = j.value("labeled", c.labeled);
    c.aligned = j.value("aligned", c.aligned);
    c.train_patterns = j.value("train_patterns", c.train_patterns);
    c.test_patterns = j.value("test_patterns", c.test_patterns);
    c.methods = j.value("methods", c.methods);
    if (j.contains("falsevfl")) c.falsevfl = train_config_from_json(j["falsevfl"]);
    if (j.contains("vanilla")) c.vanilla = vanilla_config_from_json(j["vanilla"]);
    c.snis.samples = j.value("snis_samples", c.snis.samples);
    c.snis.mask_term = j.value("mask_term", c.snis.mask_term);
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("output_dir")) c.output_dir = resolve(j["output_dir"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config_from_json(detail::read_json(path), path.parent_path());
}

// ---------------------------------------------------------------------------

std::vector<double> ExperimentResult::accuracies(const std::string& train, const std::string& method,
                                                 const std::string& test) const {
  std::vector<double> out;
  for (const auto& c : cells)
    if (c.train_pattern == train && c.method == method && c.test_pattern == test) out.push_back(c.metrics.accuracy);
  return out;
}

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
  PartitionedDataset train, test;
  if (const auto* s = std::get_if<SyntheticSource>(&config.data)) {
    const RngStream root = RngStream(seed).split(kDataStream);
    RngStream spec_rng = root.split(0);
    SyntheticSpec spec =
        SyntheticSpec::orthogonal(s->num_classes, s->party_dims, s->separation, s->std, s->train_per_class, spec_rng);
    RngStream train_rng = root.split(1);
    train = gen_synthetic(spec, train_rng);
    spec.samples_per_class = s->test_per_class;
    RngStream test_rng = root.split(2);
    test = gen_synthetic(spec, test_rng);
  } else {
    const auto& c = std::get<CsvSource>(config.data);
    CsvLoadOptions opt;
    opt.party_dims = c.party_dims;
    opt.label_column = c.label_column;
    opt.discard_extra = c.discard_extra;
    opt.num_classes = c.num_classes;
    train = load_csv(c.train, opt);
    test = load_csv(c.test, opt);
    const std::size_t classes = std::max(train.num_classes, test.num_classes);
    train.num_classes = test.num_classes = classes;
  }
  auto [train_norm, stats] = zscore_normalize(train);
  PreparedData out;
  out.test = apply_normalization(test, stats);
  out.train = std::move(train_norm);
  out.stats = std::move(stats);
  return out;
}

MaskSet train_masks(const ExperimentConfig& config, const PartitionedDataset& train, const std::string& pattern,
                    std::uint64_t seed) {
  const RngStream root(seed);
  MaskSet masks = generate_masks(train, mechanism_from_name(pattern), root.split(kTrainMaskStream).split(name_key(pattern)));
  return assign_label_availability(std::move(masks), config.labeled, config.aligned, root.split(kLabelStream));
}

MaskSet test_masks(const PartitionedDataset& test, const std::string& pattern, std::uint64_t seed) {
  MaskSet masks = generate_masks(test, mechanism_from_name(pattern),
                                 RngStream(seed).split(kTestMaskStream).split(name_key(pattern)));
  for (auto& r : masks.records) r = r.with_label_missing(false);
  return masks;
}

std::vector<SummaryRow> summarize(const std::vector<std::string>& test_patterns, const std::vector<CellResult>& cells,
                                  const std::string& train, const std::string& method) {
  std::vector<SummaryRow> rows;
  for (const auto& test : test_patterns) {
    std::vector<double> acc;
    for (const auto& c : cells)
      if (c.train_pattern == train && c.method == method && c.test_pattern == test) acc.push_back(c.metrics.accuracy);
    SummaryRow row;
    row.test_pattern = test;
    row.n_seeds = acc.size();
    if (!acc.empty()) {
      row.mean_acc = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
      if (acc.size() > 1) {
        double ss = 0.0;
        for (double a : acc) ss += (a - row.mean_acc) * (a - row.mean_acc);
        row.std_acc = std::sqrt(ss / static_cast<double>(acc.size() - 1));
      }
    }
    rows.push_back(row);
  }
  return rows;
}

void save_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  detail::write_csv_preamble(out);
  out << "test_pattern,mean_acc,std_acc,n_seeds\n";
  for (const auto& r : rows)
    out << r.test_pattern << ',' << format_double(r.mean_acc) << ',' << format_double(r.std_acc) << ',' << r.n_seeds
        << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<SummaryRow> load_summary_csv(const std::filesystem::path& path) {
  const auto table = detail::read_csv(path);
  const std::vector<std::string> want{"test_pattern", "mean_acc", "std_acc", "n_seeds"};
  if (table.header != want) throw IoError(path.string() + ": unexpected summary header");
  std::vector<SummaryRow> rows;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t line = table.line_numbers[r];
    SummaryRow s;
    s.test_pattern = row[0];
    s.mean_acc = detail::parse_double(row[1], path, line, 2);
    s.std_acc = detail::parse_double(row[2], path, line, 3);
    const long long n = detail::parse_int(row[3], path, line, 4);
    if (n < 0) throw IoError(path.string() + ": negative seed count");
    s.n_seeds = static_cast<std::size_t>(n);
    rows.push_back(s);
  }
  return rows;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentResult result;
  const auto& out = config.output_dir;
  for (const auto& train_pattern : config.train_patterns) {
    for (std::uint64_t seed : config.seeds) {
      const PreparedData data = prepare_data(config, seed);
      const MaskSet masks = train_masks(config, data.train, train_pattern, seed);
      const auto cell_dir = out / train_pattern / seed_dir(seed);
      std::filesystem::create_directories(cell_dir);
      save_mask_csv(masks.records, cell_dir / "train_masks.csv");

      std::vector<MaskSet> tests;
      for (const auto& tp : config.test_patterns) tests.push_back(test_masks(data.test, tp, seed));

      for (const auto& method : config.methods) {
        const auto method_dir = cell_dir / method;
        std::filesystem::create_directories(method_dir);
        std::vector<EvalMetrics> metrics;
        if (is_falsevfl(method)) {
          TrainConfig tc = config.falsevfl;
          tc.variant = method == "falsevfl-II" ? Variant::II : Variant::I;
          tc.seed = seed;
          RngStream init = RngStream(seed).split(kInitStream);
          FalseVflModel model = FalseVflModel::init(tc.arch(data.train.dims, data.train.num_classes), init);
          train_stage1(model, data.train, masks.records, tc);
          train_stage2(model, data.train, masks.records, tc);
          save_checkpoint(model, &data.stats, method_dir / "model.json");
          SnisOptions snis = config.snis;
          snis.mask_term = snis.mask_term && tc.variant == Variant::II;
          for (std::size_t t = 0; t < tests.size(); ++t)
            metrics.push_back(evaluate(model, data.test, tests[t].records, snis,
                                       RngStream(seed).split(kEvalStream).split(name_key(config.test_patterns[t]))));
        } else {
          VanillaConfig vc = config.vanilla;
          vc.seed = seed;
          const VanillaModel model = vanilla_train(data.train, masks.records, vc);
          save_vanilla(model, &data.stats, method_dir / "model.json");
          for (const auto& t : tests) metrics.push_back(vanilla_evaluate(model, data.test, t.records));
        }
        for (std::size_t t = 0; t < tests.size(); ++t) {
          save_metrics(metrics[t], method_dir / (config.test_patterns[t] + ".json"));
          result.cells.push_back({train_pattern, seed, method, config.test_patterns[t], metrics[t]});
        }
      }
    }
    for (const auto& method : config.methods) {
      auto rows = summarize(config.test_patterns, result.cells, train_pattern, method);
      std::filesystem::create_directories(out / train_pattern / method);
      save_summary_csv(rows, out / train_pattern / method / "summary.csv");
      result.summaries[{train_pattern, method}] = std::move(rows);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string accuracy_svg(const std::vector<PlotSeries>& series, const std::string& title) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  constexpr double w = 640, h = 400, left = 60, right = 150, top = 40, bottom = 60;
  const double pw = w - left - right, ph = h - top - bottom;
  std::vector<std::string> patterns;
  for (const auto& s : series)
    for (const auto& r : s.rows)
      if (std::find(patterns.begin(), patterns.end(), r.test_pattern) == patterns.end())
        patterns.push_back(r.test_pattern);
  auto x_of = [&](std::size_t i) {
    return patterns.size() < 2 ? left + pw / 2 : left + pw * static_cast<double>(i) / static_cast<double>(patterns.size() - 1);
  };
  auto y_of = [&](double acc) { return top + ph * (1.0 - std::clamp(acc, 0.0, 1.0)); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
  for (int t = 0; t <= 5; ++t) {
    const double acc = t / 5.0;
    o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << y_of(acc) << "\" y2=\"" << y_of(acc)
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << left - 8 << "\" y=\"" << y_of(acc) + 4 << "\" text-anchor=\"end\">" << acc << "</text>\n";
  }
  for (std::size_t i = 0; i < patterns.size(); ++i)
    o << "<text x=\"" << x_of(i) << "\" y=\"" << top + ph + 20 << "\" text-anchor=\"middle\">" << xml_escape(patterns[i])
      << "</text>\n";
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 16 << "\" text-anchor=\"middle\">test pattern</text>\n";
  o << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">accuracy</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % std::size(palette)];
    std::ostringstream pts;
    for (const auto& r : series[s].rows) {
      const auto i = static_cast<std::size_t>(std::find(patterns.begin(), patterns.end(), r.test_pattern) - patterns.begin());
      pts << x_of(i) << ',' << y_of(r.mean_acc) << ' ';
      o << "<circle cx=\"" << x_of(i) << "\" cy=\"" << y_of(r.mean_acc) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n";
    const double ly = top + 16 + 18 * static_cast<double>(s);
    o << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << xml_escape(series[s].label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace falsevfl
