// disco: run continual-learning experiments and report on them.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "disco/config.hpp"
#include "disco/harness.hpp"
#include "disco/plot.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int seeds = 1;
  int jobs = 1;
  std::vector<std::string> overrides;
};

disco::ExperimentConfig load(const CommonOptions& o) {
  disco::ExperimentConfig c = disco::load_config(o.config);
  std::vector<std::pair<std::string, std::string>> assignments;
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw disco::ConfigError("--set expects key=value (got '" + kv + "')");
    assignments.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!assignments.empty()) disco::set_config_values(c, assignments);
  if (o.seed) {
    c.seed = *o.seed;
    c.train.seed = *o.seed;
  }
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.seeds < 1) throw disco::ConfigError("--seeds must be >= 1");
  if (o.jobs < 1) throw disco::ConfigError("--jobs must be >= 1");
  return c;
}

void print_metrics(const disco::json& j) {
  for (const char* key : {"AA", "FM", "IA", "PIV", "PFTS", "TIA", "ITA_first"}) {
    if (j.contains(key) && j[key].is_number()) std::cout << "  " << key << " = " << disco::format_double(j[key].get<double>(), "%.2f") << "\n";
  }
}

void add_common(CLI::App* cmd, CommonOptions& o, bool grid_seeds = true) {
  cmd->add_option("--config", o.config, "experiment config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "override the config seed");
  cmd->add_option("--out", o.out, "output directory (relative paths honour DISCO_OUT)");
  cmd->add_option("--set", o.overrides, "override a config value, key=value");
  if (grid_seeds) {
    cmd->add_option("--seeds", o.seeds, "number of consecutive seeds starting at the config seed");
    cmd->add_option("--jobs", o.jobs, "concurrent runs");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DisCo continual-learning experiments"};
  app.require_subcommand(1);

  CommonOptions run_opts, sweep_opts, compare_opts;
  std::vector<std::string> report_dirs, plot_dirs, grid;
  std::string report_out, plot_out = "plots", export_run, export_out;
  bool projected = false;
  std::optional<int> export_task;

  auto* run = app.add_subcommand("run", "train over every task and write a run directory");
  add_common(run, run_opts);
  auto* rep = app.add_subcommand("report", "compute metrics for one or more run directories");
  rep->add_option("runs", report_dirs, "run directories")->required();
  rep->add_option("--out", report_out, "directory for report.json and curve CSVs");
  auto* sw = app.add_subcommand("sweep", "grid over loss weights");
  add_common(sw, sweep_opts);
  sw->add_option("--grid", grid, "lambda_tcon|lambda_ccon|lambda_ccd=v1,v2,...");
  auto* cmp = app.add_subcommand("compare", "CIL versus CILD over the same label partition");
  add_common(cmp, compare_opts);
  auto* plt = app.add_subcommand("plot", "write SVG curves and a feature scatter");
  plt->add_option("runs", plot_dirs, "run directories")->required();
  plt->add_option("--out", plot_out, "output directory");
  auto* exp = app.add_subcommand("export-features", "re-export test features from a finished run");
  exp->add_option("run", export_run, "run directory")->required();
  exp->add_option("--out", export_out, "CSV file")->required();
  exp->add_option("--task", export_task, "include tasks 1..k (default: all)");
  exp->add_flag("--projected", projected, "export projector outputs instead of backbone features");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*run) {
      const disco::ExperimentConfig c = load(run_opts);
      const fs::path out = disco::resolve_output_dir(c);
      std::vector<fs::path> dirs;
      if (run_opts.seeds == 1) {
        disco::run_experiment(c, out);
        dirs.push_back(out);
      } else {
        dirs = disco::run_seeds(c, out, disco::seed_list(c.seed, run_opts.seeds), run_opts.jobs);
      }
      const auto r = disco::report(dirs, run_opts.seeds > 1 ? std::optional<fs::path>(out) : std::nullopt, &std::cerr);
      std::cout << "wrote " << out.string() << "\n";
      print_metrics(r.document.contains("mean") ? r.document["mean"] : r.document["runs"][0]);
    } else if (*rep) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      const auto r = disco::report(dirs, report_out.empty() ? std::nullopt : std::optional<fs::path>(report_out), &std::cerr);
      for (const auto& row : r.document["runs"]) {
        std::cout << row["run"].get<std::string>() << "\n";
        print_metrics(row);
      }
      if (r.document.contains("mean")) {
        std::cout << "mean over " << r.runs.size() << " runs\n";
        print_metrics(r.document["mean"]);
      }
    } else if (*sw) {
      const disco::ExperimentConfig c = load(sweep_opts);
      std::vector<disco::GridAxis> axes;
      for (const auto& g : grid) axes.push_back(disco::parse_grid_axis(g));
      const fs::path out = disco::resolve_output_dir(c);
      const auto rows = disco::sweep(c, axes, disco::seed_list(c.seed, sweep_opts.seeds), out, sweep_opts.jobs);
      std::cout << disco::read_text(out / "sweep.csv");
      for (const auto& row : rows)
        if (row.status != "ok") std::cerr << "warning: grid point failed: " << row.status << "\n";
    } else if (*cmp) {
      const disco::ExperimentConfig c = load(compare_opts);
      const fs::path out = disco::resolve_output_dir(c);
      const auto result = disco::compare_cil_cild(c, disco::seed_list(c.seed, compare_opts.seeds), out, compare_opts.jobs);
      std::cout << result.table;
    } else if (*plt) {
      std::vector<fs::path> dirs(plot_dirs.begin(), plot_dirs.end());
      for (const auto& f : disco::plot_runs(dirs, plot_out)) std::cout << "wrote " << f.string() << "\n";
    } else if (*exp) {
      const std::size_t n = disco::export_features(export_run, export_out, projected, export_task);
      std::cout << "wrote " << n << " records to " << export_out << "\n";
    }
  } catch (const disco::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
