#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flexireg/config.hpp"
#include "flexireg/pipeline.hpp"

namespace {

using flexireg::RunConfig;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::string out_dir;
  std::string variant;
  long long seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts* opts) {
  cmd->add_option("--config", opts->config_path,
                  "config file (falls back to $FLEXIREG_CONFIG)");
  cmd->add_option("--set", opts->overrides, "config override key=value")
      ->expected(-1);
  cmd->add_option("--out", opts->out_dir, "output directory");
  cmd->add_option("--variant", opts->variant, "model variant (e.g. full, w/o-PE)");
  cmd->add_option("--seed", opts->seed, "root random seed");
}

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg;
  std::string path = opts.config_path;
  if (path.empty()) {
    const char* env = std::getenv("FLEXIREG_CONFIG");
    if (env != nullptr) path = env;
  }
  if (!path.empty()) cfg = flexireg::load_config_file(path);
  for (const std::string& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (!opts.variant.empty()) cfg.variant = opts.variant;
  if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
  return cfg;
}

void log_failure(const RunConfig& cfg, const std::string& command,
                 const std::string& message) {
  std::cerr << "error: " << command << ": " << message << "\n";
  try {
    std::filesystem::create_directories(cfg.out_dir);
    nlohmann::json j;
    j["command"] = command;
    j["error"] = message;
    std::ofstream out((std::filesystem::path(cfg.out_dir) / "error.json").string());
    out << j.dump(2) << "\n";
  } catch (...) {
    // the console message is the fallback
  }
}

void print_reports(const std::vector<flexireg::MetricsReport>& reports) {
  for (const auto& r : reports)
    std::cout << r.variant << " / " << r.task_name << ": MAE=" << r.mae
              << " RMSE=" << r.rmse << " R2=" << r.r2 << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FlexiReg: grid-based urban region representation pipeline"};
  app.require_subcommand(1);

  CommonOpts opts;
  int synth_regions = 0;
  int cell_epochs = 0;
  int prompt_epochs = 0;
  std::string regions_path;
  std::string task_name;
  std::vector<std::string> ablate_variants;
  std::vector<int> merge_targets;
  std::string report_csv, out_png;

  CLI::App* synth = app.add_subcommand("synth", "generate the synthetic city");
  add_common(synth, &opts);
  synth->add_option("--regions", synth_regions, "number of regions");

  CLI::App* grid = app.add_subcommand("grid", "build the grid and overlap map");
  add_common(grid, &opts);
  grid->add_option("--regions", regions_path, "region GeoJSON path");

  CLI::App* features = app.add_subcommand("features", "bin features and encode");
  add_common(features, &opts);

  CLI::App* train_cells = app.add_subcommand("train-cells", "stage-1 training");
  add_common(train_cells, &opts);
  train_cells->add_option("--epochs", cell_epochs, "stage-1 epochs");

  CLI::App* aggregate = app.add_subcommand("aggregate", "stage-2 aggregation");
  add_common(aggregate, &opts);
  aggregate->add_option("--regions", regions_path, "region GeoJSON path");

  CLI::App* train_task = app.add_subcommand("train-task", "stage-3 training");
  add_common(train_task, &opts);
  train_task->add_option("--task", task_name, "task name")->required();
  train_task->add_option("--epochs", prompt_epochs, "stage-3 epochs");

  CLI::App* eval = app.add_subcommand("eval", "cross-validated evaluation");
  add_common(eval, &opts);

  CLI::App* ablate = app.add_subcommand("ablate", "run ablation variants");
  add_common(ablate, &opts);
  ablate->add_option("--variants", ablate_variants, "variant subset")->expected(-1);

  CLI::App* merge_eval = app.add_subcommand("merge-eval", "region-merging study");
  add_common(merge_eval, &opts);
  merge_eval->add_option("--targets", merge_targets, "merged region counts")
      ->expected(-1);

  CLI::App* plot = app.add_subcommand("plot", "bar chart from a report CSV");
  add_common(plot, &opts);
  plot->add_option("--report", report_csv, "report CSV path");
  plot->add_option("--out-png", out_png, "output PNG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  RunConfig cfg;
  std::string command = app.get_subcommands().front()->get_name();
  try {
    cfg = resolve_config(opts);
    if (synth_regions > 0) cfg.synth_regions = synth_regions;
    if (cell_epochs > 0) cfg.cell_epochs = cell_epochs;
    if (prompt_epochs > 0) cfg.prompt_epochs = prompt_epochs;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) {
      flexireg::stage_synth(cfg);
    } else if (grid->parsed()) {
      flexireg::stage_grid(cfg, regions_path);
    } else if (features->parsed()) {
      flexireg::stage_features(cfg);
    } else if (train_cells->parsed()) {
      flexireg::stage_train_cells(cfg);
    } else if (aggregate->parsed()) {
      flexireg::stage_aggregate(cfg, regions_path);
    } else if (train_task->parsed()) {
      flexireg::stage_train_task(cfg, task_name);
    } else if (eval->parsed()) {
      print_reports(flexireg::stage_eval(cfg));
    } else if (ablate->parsed()) {
      print_reports(flexireg::stage_ablate(cfg, ablate_variants));
    } else if (merge_eval->parsed()) {
      print_reports(flexireg::stage_merge_eval(cfg, merge_targets));
    } else if (plot->parsed()) {
      flexireg::stage_plot(cfg, report_csv, out_png);
    }
  } catch (const std::exception& e) {
    log_failure(cfg, command, e.what());
    return 1;
  }
  return 0;
}
