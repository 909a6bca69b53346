#include "htsr/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "htsr/diagnostics.hpp"
#include "htsr/ingestion.hpp"
#include "htsr/spectral.hpp"
#include "htsr/toytrain.hpp"

namespace htsr::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
}

// Flags shared by schedule and train-demo.
struct ScheduleFlags {
  double s_above = 1.0;
  double s_below = 1.0;
  double tau = 10.0;
  std::string metric = "alpha";
  std::string function = "sigmoid";
  std::string granularity = "per-block";
  std::string direction;  // empty: metric default
  double k_ratio = 0.5;
  double base_lr = 1e-3;

  void attach(CLI::App* cmd) {
    cmd->add_option("--s-above", s_above, "Scaling s for layers at or above the mean")
        ->capture_default_str();
    cmd->add_option("--s-below", s_below, "Scaling s for layers below the mean")
        ->capture_default_str();
    cmd->add_option("--tau", tau, "Sigmoid temperature")->capture_default_str();
    cmd->add_option("--metric", metric, "alpha | spectral-norm | stable-rank")
        ->capture_default_str();
    cmd->add_option("--function", function, "sigmoid | linear-map | off")->capture_default_str();
    cmd->add_option("--granularity", granularity, "per-block | per-layer")->capture_default_str();
    cmd->add_option("--direction", direction, "higher-undertrained | lower-undertrained");
    cmd->add_option("--k-ratio", k_ratio, "Fraction of positive eigenvalues in the Hill fit")
        ->capture_default_str();
    cmd->add_option("--base-lr", base_lr, "Base learning rate eta0")->capture_default_str();
  }

  ScheduleConfig config(BaseSchedule base) const {
    ScheduleConfig cfg;
    const auto f = parse_function(function);
    const auto m = parse_metric(metric);
    const auto g = parse_granularity(granularity);
    if (!f) throw Error(ErrorCode::InvalidArgument, "unknown --function '" + function + "'");
    if (!m) throw Error(ErrorCode::InvalidArgument, "unknown --metric '" + metric + "'");
    if (!g) throw Error(ErrorCode::InvalidArgument, "unknown --granularity '" + granularity + "'");
    cfg.function = *f;
    cfg.metric = *m;
    cfg.granularity = *g;
    cfg.direction = default_direction(*m);
    if (!direction.empty()) {
      const auto d = parse_direction(direction);
      if (!d) throw Error(ErrorCode::InvalidArgument, "unknown --direction '" + direction + "'");
      cfg.direction = *d;
    }
    cfg.s_above = s_above;
    cfg.s_below = s_below;
    cfg.tau = tau;
    base.eta0 = base_lr;
    cfg.base = base;
    if (!(k_ratio > 0.0 && k_ratio <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "--k-ratio must lie in (0, 1]");
    }
    validate(cfg);
    return cfg;
  }
};

struct Analysis {
  std::vector<EsdMetrics> metrics;   // includes unfitted layers (alpha NaN)
  std::vector<std::string> skipped;  // below the eligibility threshold
  std::vector<std::string> unfitted;
  BlockMap blocks;

  std::vector<EsdMetrics> fitted() const {
    std::vector<EsdMetrics> out;
    for (const auto& m : metrics) {
      if (std::isfinite(m.alpha_hill)) out.push_back(m);
    }
    return out;
  }
  std::vector<std::string> unanalyzed() const {
    std::vector<std::string> out(skipped);
    out.insert(out.end(), unfitted.begin(), unfitted.end());
    return out;
  }
};

Analysis analyze_checkpoint(const std::vector<WeightMatrix>& matrices, double k_ratio) {
  Analysis a;
  for (const auto& w : matrices) {
    if (w.block_id) a.blocks[w.name] = *w.block_id;
    if (!is_eligible(w)) {
      a.skipped.push_back(w.name);
      continue;
    }
    try {
      const auto spectrum = compute_spectrum(w);
      try {
        a.metrics.push_back(shape_metrics(spectrum, FixedRatio{k_ratio}));
      } catch (const Error& e) {
        // A flat tail (e.g. an identity layer) has no power-law fit but its
        // norm metrics are still meaningful.
        if (e.code() != ErrorCode::DegenerateTail) throw;
        a.metrics.push_back(norm_metrics(spectrum));
        a.unfitted.push_back(w.name);
      }
    } catch (const Error& e) {
      throw Error(e.code(), "layer '" + w.name + "': " + e.detail());
    }
  }
  if (a.metrics.empty()) {
    throw Error(ErrorCode::InsufficientSpectrum, "no layer has both dimensions >= " +
                                                     std::to_string(kMinEligibleDim));
  }
  return a;
}

std::string ratio_label(double r) { return format_double(r); }

struct ArmStats {
  std::vector<double> final_test;
  std::vector<double> final_alpha_std;
  int diverged = 0;
};

}  // namespace

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ManifestError:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::OrphanAdapter:
    case ErrorCode::NonFiniteInput:
    case ErrorCode::IoError:
      return kCheckpoint;
    case ErrorCode::InsufficientSpectrum:
    case ErrorCode::DegenerateTail:
    case ErrorCode::ZeroSpectrum:
      return kSpectral;
    case ErrorCode::MissingBlockId:
      return kMissingBlock;
    default:
      return kUsage;
  }
}

void run_train_demo(const TrainDemoOptions& o, std::ostream& log) {
  if (o.ratios.empty() || o.seeds.empty()) {
    throw Error(ErrorCode::InvalidArgument, "train-demo needs at least one ratio and one seed");
  }
  for (double r : o.ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw Error(ErrorCode::InvalidArgument, "ratios must lie in (0, 1]");
  }
  validate(o.schedule);

  const std::vector<std::pair<std::string, ScheduleFunction>> arms{
      {"baseline", ScheduleFunction::Off}, {"tempbalance", o.schedule.function}};
  // arm -> ratio label -> stats
  std::map<std::string, std::map<std::string, ArmStats>> stats;

  for (double ratio : o.ratios) {
    for (std::uint64_t seed : o.seeds) {
      DatasetSpec spec;
      spec.n = o.pool_size;
      spec.input_dim = o.layer_dims.front();
      const Dataset pool = make_dataset(spec, 1000 + seed);
      spec.n = o.test_size;
      const Dataset test = make_dataset(spec, 2000 + seed);
      for (const auto& [arm, function] : arms) {
        TrainConfig cfg;
        cfg.seed = seed;
        cfg.epochs = o.epochs;
        cfg.batch_size = o.batch_size;
        cfg.schedule = o.schedule;
        cfg.schedule.function = function;
        cfg.subsample_ratio = ratio;
        cfg.k_policy = FixedRatio{o.k_ratio};
        MlpModel model = make_mlp(o.layer_dims, Activation::Tanh, seed);
        const RunHistory h = train(model, pool, test, cfg);

        const std::string stem = arm + "_ratio-" + ratio_label(ratio) + "_seed-" + std::to_string(seed);
        write_json(o.output / "runs" / (stem + ".json"), to_json(h));
        write_text(o.output / "runs" / (stem + ".csv"), history_csv(h));

        ArmStats& st = stats[arm][ratio_label(ratio)];
        if (h.diverged) {
          ++st.diverged;
          log << "run " << stem << ": DivergenceDetected after " << h.per_epoch.size()
              << " epochs\n";
        } else {
          st.final_test.push_back(h.per_epoch.back().test_loss);
          st.final_alpha_std.push_back(h.final_alpha_std);
        }
      }
    }
  }

  json comparison = json::array();
  std::ostringstream table;
  table << "arm,ratio,runs,diverged,test_loss_mean,test_loss_std,alpha_std_mean\n";
  json trend_doc = json::object();
  log << "| arm | ratio | final test loss (mean +- std) | final alpha STD | diverged |\n"
      << "|---|---|---|---|---|\n";
  for (const auto& [arm, function] : arms) {
    std::vector<TrendPoint> points;
    for (double ratio : o.ratios) {
      const std::string label = ratio_label(ratio);
      const ArmStats& st = stats[arm][label];
      const bool any = !st.final_test.empty();
      const MeanStd loss = any ? population_mean_std(st.final_test) : MeanStd{NAN, NAN};
      const MeanStd astd = any ? population_mean_std(st.final_alpha_std) : MeanStd{NAN, NAN};
      comparison.push_back({{"arm", arm},
                            {"ratio", ratio},
                            {"runs", st.final_test.size() + static_cast<std::size_t>(st.diverged)},
                            {"diverged", st.diverged},
                            {"test_loss_mean", any ? json(loss.mean) : json(nullptr)},
                            {"test_loss_std", any ? json(loss.std) : json(nullptr)},
                            {"alpha_std_mean", any ? json(astd.mean) : json(nullptr)}});
      table << arm << ',' << label << ',' << st.final_test.size() + st.diverged << ','
            << st.diverged << ',' << (any ? format_double(loss.mean) : "") << ','
            << (any ? format_double(loss.std) : "") << ',' << (any ? format_double(astd.mean) : "")
            << '\n';
      log << "| " << arm << " | " << label << " | " << std::setprecision(6) << loss.mean << " +- "
          << loss.std << " | " << astd.mean << " | " << st.diverged << " |\n";
      TrendPoint p{label, any ? astd.mean : 0.0, std::nullopt};
      if (any) p.quality = loss.mean;
      points.push_back(p);
    }
    // A single-ratio sweep has no trend but the file keeps its schema.
    const TrendReport trend = points.size() >= 2 ? build_trend(points) : TrendReport{points};
    trend_doc[arm] = to_json(trend);
    write_text(o.output / ("trend_" + arm + ".csv"), trend_csv(trend));
  }
  write_json(o.output / "comparison.json", comparison);
  write_text(o.output / "comparison.csv", table.str());
  write_json(o.output / "trend.json", trend_doc);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Heavy-tailed spectral diagnostics and layer-wise learning-rate scheduling"};
  app.require_subcommand(1);

  std::string manifest;
  std::string output;

  auto* analyze = app.add_subcommand("analyze", "Write a per-layer ESD metric report");
  std::string csv_path;
  std::string checkpoint_id;
  double analyze_k_ratio = 0.5;
  std::string analyze_granularity = "per-block";
  analyze->add_option("--manifest", manifest, "Checkpoint manifest.json")->required();
  analyze->add_option("--output", output, "Report JSON path")->required();
  analyze->add_option("--csv", csv_path, "Optional per-layer CSV path");
  analyze->add_option("--id", checkpoint_id, "Checkpoint label stored in the report");
  analyze->add_option("--k-ratio", analyze_k_ratio, "Fraction of positive eigenvalues in the Hill fit")
      ->capture_default_str();
  analyze->add_option("--granularity", analyze_granularity, "per-block | per-layer")
      ->capture_default_str();

  auto* schedule = app.add_subcommand("schedule", "Write per-layer learning rates");
  ScheduleFlags sched_flags;
  std::int64_t step = 0;
  schedule->add_option("--manifest", manifest, "Checkpoint manifest.json")->required();
  schedule->add_option("--output", output, "Assignment JSON path")->required();
  schedule->add_option("--step", step, "Step recorded in the assignment")->capture_default_str();
  sched_flags.attach(schedule);

  auto* demo = app.add_subcommand("train-demo", "Baseline vs TempBalance sweep on a toy MLP");
  ScheduleFlags demo_flags;
  demo_flags.base_lr = 0.05;
  TrainDemoOptions demo_opts;
  double step_gamma = 0.5;
  std::int64_t step_period = 100;
  demo->add_option("--output", output, "Output directory")->required();
  demo->add_option("--ratios", demo_opts.ratios, "Subsampling ratios")->delimiter(',')
      ->capture_default_str();
  demo->add_option("--seeds", demo_opts.seeds, "Seeds")->delimiter(',')->capture_default_str();
  demo->add_option("--epochs", demo_opts.epochs, "Epochs per run")->capture_default_str();
  demo->add_option("--batch-size", demo_opts.batch_size)->capture_default_str();
  demo->add_option("--pool-size", demo_opts.pool_size, "Training pool before subsampling")
      ->capture_default_str();
  demo->add_option("--test-size", demo_opts.test_size)->capture_default_str();
  demo->add_option("--gamma", step_gamma, "Step-decay factor")->capture_default_str();
  demo->add_option("--decay-period", step_period, "Epochs between decays")->capture_default_str();
  demo_flags.attach(demo);

  auto* report = app.add_subcommand("report", "Build a trend report from analyze outputs");
  std::vector<std::string> report_paths;
  std::vector<std::string> labels;
  std::vector<double> qualities;
  std::string trend_csv_path;
  report->add_option("--reports", report_paths, "Report JSON files")->required();
  report->add_option("--labels", labels, "One label per report")->required();
  report->add_option("--quality", qualities, "Optional quality value per report");
  report->add_option("--output", output, "Trend JSON path")->required();
  report->add_option("--csv", trend_csv_path, "Plot-data CSV path");

  std::vector<char*> argv;
  std::vector<std::string> storage(args);
  for (auto& a : storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kUsage;
  }

  try {
    if (analyze->parsed()) {
      const auto g = parse_granularity(analyze_granularity);
      if (!g) throw Error(ErrorCode::InvalidArgument, "unknown --granularity");
      if (!(analyze_k_ratio > 0.0 && analyze_k_ratio <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "--k-ratio must lie in (0, 1]");
      }
      const auto matrices = load_checkpoint(manifest);
      const Analysis a = analyze_checkpoint(matrices, analyze_k_ratio);
      ModelReport r = build_report(a.metrics, a.blocks, *g,
                                   checkpoint_id.empty() ? fs::path(manifest).parent_path().filename().string()
                                                         : checkpoint_id);
      r.skipped = a.skipped;
      write_json(output, to_json(r));
      if (!csv_path.empty()) write_text(csv_path, report_csv(r));
      return kOk;
    }
    if (schedule->parsed()) {
      const ScheduleConfig cfg = sched_flags.config(BaseSchedule{ConstantLr{}, 1.0});
      if (step < 0) throw Error(ErrorCode::InvalidStep, "--step must be >= 0");
      const auto matrices = load_checkpoint(manifest);
      const Analysis a = analyze_checkpoint(matrices, sched_flags.k_ratio);
      const double eta = base_lr(cfg.base, step, 0);
      const auto fitted = a.fitted();
      if (fitted.empty() && cfg.function != ScheduleFunction::Off) {
        throw Error(ErrorCode::DegenerateTail, "no layer has a fittable spectrum");
      }
      const LrAssignment lrs = assign_lrs(fitted, a.blocks, cfg, eta, step, a.unanalyzed());
      write_json(output, {{"step", lrs.step}, {"base_lr", lrs.base_lr}, {"per_layer", lrs.per_layer}});
      return kOk;
    }
    if (demo->parsed()) {
      demo_opts.output = output;
      demo_opts.k_ratio = demo_flags.k_ratio;
      demo_opts.schedule = demo_flags.config(BaseSchedule{StepDecay{step_gamma, step_period}, 1.0});
      if (demo_opts.epochs < 1) throw Error(ErrorCode::InvalidArgument, "--epochs must be >= 1");
      run_train_demo(demo_opts, out);
      return kOk;
    }
    if (report->parsed()) {
      if (labels.size() != report_paths.size()) {
        throw Error(ErrorCode::InvalidArgument, "--labels must match --reports one to one");
      }
      if (!qualities.empty() && qualities.size() != report_paths.size()) {
        throw Error(ErrorCode::InvalidArgument, "--quality must match --reports one to one");
      }
      std::vector<TrendEntry> entries;
      for (std::size_t i = 0; i < report_paths.size(); ++i) {
        entries.push_back({labels[i], report_from_json(read_json(report_paths[i])),
                           qualities.empty() ? std::nullopt : std::optional<double>(qualities[i])});
      }
      const TrendReport trend = build_trend(entries);
      write_json(output, to_json(trend));
      if (!trend_csv_path.empty()) write_text(trend_csv_path, trend_csv(trend));
      return kOk;
    }
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace htsr::cli
