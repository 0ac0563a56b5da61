#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "falsevfl/baseline.hpp"
#include "falsevfl/error.hpp"
#include "falsevfl/harness.hpp"
#include "falsevfl/inference.hpp"
#include "falsevfl/missingness.hpp"
#include "falsevfl/objectives.hpp"

using namespace falsevfl;
namespace fs = std::filesystem;

namespace {

struct DataArgs {
  std::string path;
  std::vector<std::size_t> party_dims;
  std::string label_column = "label";
  bool discard_extra = false;
  std::size_t num_classes = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--data", path, "Dataset CSV (features in party order, optional label column)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--party-dims", party_dims, "Feature count per party, comma separated")
        ->required()
        ->delimiter(',');
    cmd->add_option("--label-column", label_column, "Name of the label column")->capture_default_str();
    cmd->add_flag("--discard-extra", discard_extra, "Drop feature columns beyond the party widths");
    cmd->add_option("--num-classes", num_classes, "Number of classes (default: largest label + 1)");
  }

  PartitionedDataset load() const {
    CsvLoadOptions opt;
    opt.party_dims = party_dims;
    opt.label_column = label_column;
    opt.discard_extra = discard_extra;
    if (num_classes > 0) opt.num_classes = num_classes;
    return load_csv(path, opt);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::vector<AvailabilityRecord> load_masks_for(const std::string& path, const PartitionedDataset& ds) {
  auto recs = load_mask_csv(path);
  if (recs.size() != ds.num_samples)
    throw ConfigError("mask file has " + std::to_string(recs.size()) + " rows but the dataset has " +
                      std::to_string(ds.num_samples) + " samples");
  return recs;
}

PartitionedDataset normalized(const PartitionedDataset& ds, const std::optional<NormalizationStats>& stats) {
  return stats ? apply_normalization(ds, *stats) : ds;
}

void report_low_ess(std::size_t samples) {
  if (const std::size_t n = low_ess_warnings(); n > 0)
    std::cerr << "warning: " << n << " prediction(s) had effective sample size below " << kLowEssFraction * 100
              << "% of L=" << samples << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-variable vertical federated learning with missing parties"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Write a class-conditional Gaussian dataset as CSV");
  std::size_t s_classes = 3, s_per_class = 800, s_test_per_class = 0;
  std::vector<std::size_t> s_dims{3, 3, 3, 3};
  double s_sep = 4.0, s_std = 1.0;
  std::uint64_t s_seed = 0;
  std::string s_out, s_test_out;
  synth->add_option("--classes", s_classes, "Number of classes")->capture_default_str();
  synth->add_option("--party-dims", s_dims, "Feature count per party")->delimiter(',')->capture_default_str();
  synth->add_option("--separation", s_sep, "Pairwise class-mean distance in units of std")->capture_default_str();
  synth->add_option("--std", s_std, "Shared isotropic standard deviation")->capture_default_str();
  synth->add_option("--per-class", s_per_class, "Samples per class")->capture_default_str();
  synth->add_option("--seed", s_seed, "Random seed")->capture_default_str();
  synth->add_option("--out", s_out, "Output CSV")->required();
  synth->add_option("--test-per-class", s_test_per_class, "Samples per class in a second file from the same means");
  synth->add_option("--test-out", s_test_out, "Output CSV for the second file");

  // gen-masks
  auto* gen = app.add_subcommand("gen-masks", "Generate availability masks for a dataset");
  DataArgs g_data;
  g_data.attach(gen);
  std::string g_mech, g_out, g_stats;
  std::uint64_t g_seed = 0;
  std::size_t g_labeled = 0, g_aligned = 0;
  bool g_raw = false;
  gen->add_option("--mechanism", g_mech, "One of mcar0 mcar2 mcar5 mar1 mar2 mnar7 mnar9")->required();
  gen->add_option("--seed", g_seed, "Random seed")->capture_default_str();
  gen->add_option("--labeled", g_labeled, "Samples whose label stays available (0: every label)");
  gen->add_option("--aligned", g_aligned, "Labeled samples forced fully observed");
  gen->add_option("--stats", g_stats, "Normalization stats JSON applied before generating")->check(CLI::ExistingFile);
  gen->add_flag("--raw", g_raw, "Use the features as stored instead of z-scoring them first");
  gen->add_option("--out", g_out, "Output mask CSV")->required();

  // audit-masks
  auto* aud = app.add_subcommand("audit-masks", "Summarize a mask file as JSON");
  std::string a_masks, a_out;
  aud->add_option("--masks", a_masks, "Mask CSV")->required()->check(CLI::ExistingFile);
  aud->add_option("--out", a_out, "Write the JSON here instead of stdout");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Stage 1: fit the generative model on every sample, then freeze it");
  DataArgs p_data;
  p_data.attach(pre);
  std::string p_masks, p_config, p_out, p_variant;
  std::optional<std::uint64_t> p_seed;
  pre->add_option("--masks", p_masks, "Mask CSV")->required()->check(CLI::ExistingFile);
  pre->add_option("--config", p_config, "Training config JSON")->check(CLI::ExistingFile);
  pre->add_option("--variant", p_variant, "I or II (overrides the config)");
  pre->add_option("--seed", p_seed, "Seed (overrides the config)");
  pre->add_option("--out", p_out, "Output checkpoint")->required();

  // train
  auto* trn = app.add_subcommand("train", "Stage 2 from a pretrained checkpoint, or train the vanilla baseline");
  DataArgs t_data;
  t_data.attach(trn);
  std::string t_masks, t_config, t_ckpt, t_out, t_method = "falsevfl";
  std::optional<std::uint64_t> t_seed;
  trn->add_option("--masks", t_masks, "Mask CSV")->required()->check(CLI::ExistingFile);
  trn->add_option("--method", t_method, "falsevfl or vanilla")
      ->check(CLI::IsMember({"falsevfl", "vanilla"}))
      ->capture_default_str();
  trn->add_option("--checkpoint", t_ckpt, "Pretrained checkpoint (falsevfl only)")->check(CLI::ExistingFile);
  trn->add_option("--config", t_config, "Training config JSON (falsevfl or vanilla layout)")
      ->check(CLI::ExistingFile);
  trn->add_option("--seed", t_seed, "Seed (overrides the config)");
  trn->add_option("--out", t_out, "Output checkpoint")->required();

  // predict / evaluate share their options
  struct ScoreArgs {
    DataArgs data;
    std::string masks, ckpt, out;
    std::size_t samples = 50;
    bool mask_term = false;
    std::uint64_t seed = 0;
  } pr, ev;
  auto attach_score = [](CLI::App* cmd, ScoreArgs& a) {
    a.data.attach(cmd);
    cmd->add_option("--masks", a.masks, "Mask CSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--checkpoint", a.ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--samples", a.samples, "Importance samples per prediction")->capture_default_str();
    cmd->add_flag("--mask-term", a.mask_term, "Weight particles by the missingness model too (variant II)");
    cmd->add_option("--seed", a.seed, "Random seed")->capture_default_str();
  };
  auto* pred = app.add_subcommand("predict", "Write class probabilities per sample as CSV");
  attach_score(pred, pr);
  pred->add_option("--out", pr.out, "Output CSV")->required();
  auto* eval = app.add_subcommand("evaluate", "Write accuracy metrics JSON");
  attach_score(eval, ev);
  eval->add_option("--out", ev.out, "Output JSON (stdout when omitted)");

  // grid
  auto* grid = app.add_subcommand("grid", "Run a train-pattern x test-pattern experiment");
  std::string gr_config, gr_out;
  grid->add_option("--config", gr_config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  grid->add_option("--out-dir", gr_out, "Output directory (overrides the config)");

  // plot
  auto* plot = app.add_subcommand("plot", "Draw accuracy per test pattern as an SVG line chart");
  std::vector<std::string> pl_summaries, pl_labels;
  std::string pl_grid, pl_title = "accuracy by test pattern", pl_out;
  plot->add_option("--summary", pl_summaries, "Summary CSV (repeatable)")->check(CLI::ExistingFile);
  plot->add_option("--label", pl_labels, "Legend label for each --summary");
  plot->add_option("--grid-dir", pl_grid, "A <out>/<train pattern> directory; plots every method in it")
      ->check(CLI::ExistingDirectory);
  plot->add_option("--title", pl_title, "Chart title");
  plot->add_option("--out", pl_out, "Output SVG")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      RngStream rng(s_seed);
      RngStream spec_rng = rng.split(0);
      auto spec = SyntheticSpec::orthogonal(s_classes, s_dims, s_sep, s_std, s_per_class, spec_rng);
      RngStream a = rng.split(1);
      save_csv(gen_synthetic(spec, a), s_out);
      if (!s_test_out.empty()) {
        if (s_test_per_class == 0) throw ConfigError("--test-out needs --test-per-class");
        spec.samples_per_class = s_test_per_class;
        RngStream b = rng.split(2);
        save_csv(gen_synthetic(spec, b), s_test_out);
      }
    } else if (*gen) {
      const auto raw = g_data.load();
      PartitionedDataset ds = raw;
      if (!g_stats.empty()) ds = apply_normalization(raw, load_stats_json(g_stats));
      else if (!g_raw) ds = zscore_normalize(raw).first;
      MaskSet masks = generate_masks(ds, mechanism_from_name(g_mech), RngStream(g_seed));
      if (g_labeled > 0) {
        masks = assign_label_availability(std::move(masks), g_labeled, g_aligned, RngStream(g_seed).split(1));
      } else {
        if (g_aligned > 0) throw ConfigError("--aligned needs --labeled");
        for (auto& r : masks.records) r = r.with_label_missing(!ds.has_labels());
      }
      save_mask_csv(masks.records, g_out);
    } else if (*aud) {
      const std::string json = audit_to_json(audit(load_mask_csv(a_masks)));
      if (a_out.empty()) std::cout << json << "\n";
      else write_text(a_out, json + "\n");
    } else if (*pre) {
      const auto [ds, stats] = zscore_normalize(p_data.load());
      const auto recs = load_masks_for(p_masks, ds);
      TrainConfig cfg = p_config.empty() ? TrainConfig{} : train_config_from_json(read_json_file(p_config));
      if (!p_variant.empty()) cfg.variant = parse_variant(p_variant);
      if (p_seed) cfg.seed = *p_seed;
      if (ds.num_classes < 2) throw ConfigError("the dataset needs labels from at least two classes");
      RngStream init = RngStream(cfg.seed).split(5);
      auto model = FalseVflModel::init(cfg.arch(ds.dims, ds.num_classes), init);
      const auto report = train_stage1(model, ds, recs, cfg);
      save_checkpoint(model, &stats, p_out);
      if (!report.epoch_mean_bound.empty())
        std::cerr << "final epoch mean bound: " << report.epoch_mean_bound.back() << "\n";
    } else if (*trn) {
      const auto raw = t_data.load();
      if (t_method == "vanilla") {
        const auto [ds, stats] = zscore_normalize(raw);
        const auto recs = load_masks_for(t_masks, ds);
        VanillaConfig cfg = t_config.empty() ? VanillaConfig{} : vanilla_config_from_json(read_json_file(t_config));
        if (t_seed) cfg.seed = *t_seed;
        save_vanilla(vanilla_train(ds, recs, cfg), &stats, t_out);
      } else {
        if (t_ckpt.empty()) throw UsageError("train --method falsevfl needs --checkpoint from pretrain");
        auto ck = load_checkpoint(t_ckpt);
        const auto ds = normalized(raw, ck.stats);
        const auto recs = load_masks_for(t_masks, ds);
        TrainConfig cfg = t_config.empty() ? TrainConfig{} : train_config_from_json(read_json_file(t_config));
        cfg.variant = ck.model.arch().variant;
        if (t_seed) cfg.seed = *t_seed;
        const auto report = train_stage2(ck.model, ds, recs, cfg);
        save_checkpoint(ck.model, ck.stats ? &*ck.stats : nullptr, t_out);
        if (!report.epoch_mean_bound.empty())
          std::cerr << "final epoch mean conditional bound: " << report.epoch_mean_bound.back() << "\n";
      }
    } else if (*pred || *eval) {
      ScoreArgs& a = *pred ? pr : ev;
      const auto raw = a.data.load();
      const std::string kind = checkpoint_kind(a.ckpt);
      reset_low_ess_warnings();
      if (*eval) {
        EvalMetrics m;
        if (kind == "vanilla") {
          const auto ck = load_vanilla(a.ckpt);
          const auto ds = normalized(raw, ck.stats);
          m = vanilla_evaluate(ck.model, ds, load_masks_for(a.masks, ds));
        } else {
          const auto ck = load_checkpoint(a.ckpt);
          const auto ds = normalized(raw, ck.stats);
          m = evaluate(ck.model, ds, load_masks_for(a.masks, ds), {a.samples, a.mask_term}, RngStream(a.seed));
          report_low_ess(a.samples);
        }
        const std::string json = metrics_to_json(m).dump(2);
        if (a.out.empty()) std::cout << json << "\n";
        else save_metrics(m, a.out);
      } else {
        std::ostringstream csv;
        auto emit = [&](std::size_t i, const std::vector<double>& p, double ess) {
          csv << i << ',' << classify(p);
          for (double v : p) csv << ',' << format_double(v);
          csv << ',' << format_double(ess) << '\n';
        };
        auto header = [&](std::size_t classes) {
          csv << "sample,prediction";
          for (std::size_t c = 0; c < classes; ++c) csv << ",p" << c;
          csv << ",ess\n";
        };
        if (kind == "vanilla") {
          const auto ck = load_vanilla(a.ckpt);
          const auto ds = normalized(raw, ck.stats);
          const auto recs = load_masks_for(a.masks, ds);
          header(ck.model.num_classes());
          for (std::size_t i = 0; i < ds.num_samples; ++i) emit(i, vanilla_predict(ck.model, ds, i, recs[i]), 1.0);
        } else {
          auto ck = load_checkpoint(a.ckpt);
          ck.model.set_all_frozen(true);
          const auto ds = normalized(raw, ck.stats);
          const auto recs = load_masks_for(a.masks, ds);
          header(ck.model.arch().num_classes);
          const RngStream root(a.seed);
          for (std::size_t i = 0; i < ds.num_samples; ++i) {
            RngStream r = root.split(i);
            const auto p = snis_predict(ck.model, {&ds, i, &recs[i]}, {a.samples, a.mask_term}, r);
            emit(i, p.class_probs, p.ess);
          }
          report_low_ess(a.samples);
        }
        write_text(a.out, "# format_version: " + std::to_string(kFormatVersion) + "\n" + csv.str());
      }
    } else if (*grid) {
      ExperimentConfig cfg = load_experiment_config(gr_config);
      if (!gr_out.empty()) cfg.output_dir = gr_out;
      const auto result = run_experiment(cfg);
      for (const auto& [key, rows] : result.summaries) {
        std::cout << "train " << key.first << ", " << key.second << "\n";
        for (const auto& r : rows)
          std::cout << "  " << r.test_pattern << ": " << r.mean_acc << " +- " << r.std_acc << " (" << r.n_seeds
                    << " seeds)\n";
      }
    } else if (*plot) {
      std::vector<PlotSeries> series;
      if (!pl_grid.empty()) {
        std::vector<fs::path> dirs;
        for (const auto& e : fs::directory_iterator(pl_grid))
          if (e.is_directory() && fs::exists(e.path() / "summary.csv")) dirs.push_back(e.path());
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) series.push_back({d.filename().string(), load_summary_csv(d / "summary.csv")});
      }
      if (!pl_labels.empty() && pl_labels.size() != pl_summaries.size())
        throw UsageError("give one --label per --summary");
      for (std::size_t i = 0; i < pl_summaries.size(); ++i)
        series.push_back({pl_labels.empty() ? fs::path(pl_summaries[i]).stem().string() : pl_labels[i],
                          load_summary_csv(pl_summaries[i])});
      if (series.empty()) throw UsageError("nothing to plot: pass --summary or --grid-dir");
      write_text(pl_out, accuracy_svg(series, pl_title));
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid configuration: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const InvariantError& e) {
    std::cerr << "error: invalid data: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
