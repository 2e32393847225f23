#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flexireg/aggregate.hpp"
#include "flexireg/config.hpp"
#include "flexireg/encoders.hpp"
#include "flexireg/evalharness.hpp"
#include "flexireg/gridlearner.hpp"
#include "flexireg/synth.hpp"

namespace flexireg {

// Structural substitutions for the ablation matrix.
struct VariantSpec {
  std::string name = "full";
  std::vector<std::string> views = {"p", "l", "gn", "si"};  // stage-1 views
  AggregateWeights weights = AggregateWeights::kOverlap;
  TextBranchMode text = TextBranchMode::kAlign;
  SvBranchMode sv = SvBranchMode::kAlign;
  bool use_enhancer = true;
  bool env_context_training = true;  // false: raw frozen image features
  TextReduction reduction = TextReduction::kLastToken;
};

VariantSpec variant_spec(const std::string& name);  // throws on unknown name
const std::vector<std::string>& all_variants();

// Everything the eval/ablation paths need, built once per seed: the city,
// the grid, binned features, encoder outputs, and overlap maps.
struct Workbench {
  RunConfig cfg;
  SynthCity city;
  HexGrid grid;
  FeatureBundle features;
  OverlapMap overlap;                  // original region set
  Eigen::MatrixXd sat_features;        // m x sat_dim
  Eigen::MatrixXd text_cells_last;     // m x text_dim, last-token reduction
  Eigen::MatrixXd text_cells_mean;     // m x text_dim, mean-token reduction
  std::vector<Eigen::MatrixXd> sv_cell_features;  // per cell, k_i x sv_dim
  std::vector<Vec2> sv_locations;      // flattened image locations
  Eigen::MatrixXd sv_features_flat;    // total x sv_dim, aligned to locations
  Eigen::MatrixXd direct_features;     // n x 35 overlap-weighted aggregates

  // lazily trained contrastive projection head (deterministic per seed)
  mutable std::optional<SvEncoder> sv_encoder_cache;

  Eigen::Index num_cells() const { return static_cast<Eigen::Index>(grid.size()); }
  Eigen::Index num_regions() const {
    return static_cast<Eigen::Index>(city.regions.size());
  }
};

// Generates the synthetic city for cfg.seed and derives all inputs.
Workbench build_workbench(const RunConfig& cfg);

// As above but for a pre-loaded city (the file-based CLI path).
Workbench build_workbench_from_city(const RunConfig& cfg, SynthCity city);

// Stage 1 for a view subset; loss curve optional.
Eigen::MatrixXd train_cell_embeddings(const Workbench& wb,
                                      const std::vector<std::string>& views,
                                      GridTrainResult* result = nullptr);

// Variant- and region-set-specific stage-2/3 inputs.
struct TaskMaterials {
  Eigen::MatrixXd H;                           // n x d
  Eigen::MatrixXd H_text;                      // empty when text off
  std::vector<Eigen::MatrixXd> region_images;  // empty when sv off
};

TaskMaterials prepare_materials(const Workbench& wb, const Eigen::MatrixXd& E,
                                const VariantSpec& spec, const RegionSet& regions,
                                const OverlapMap& overlap);

PromptConfig make_prompt_config(const RunConfig& cfg, const VariantSpec& spec);

// InfoNCE-trained street-view projection head, cached on the workbench.
const SvEncoder& workbench_sv_encoder(const Workbench& wb);

// Fold-hygienic CV evaluation of prepared materials across tasks.
std::vector<MetricsReport> evaluate_materials(const Workbench& wb,
                                              const TaskMaterials& materials,
                                              const std::vector<TaskDataset>& tasks,
                                              const VariantSpec& spec);

// Convenience: materials from the workbench's own region set, all tasks.
std::vector<MetricsReport> evaluate_variant(const Workbench& wb,
                                            const Eigen::MatrixXd& E,
                                            const VariantSpec& spec);

// --- file-based CLI stages (artifacts under cfg.out_dir) ---

void stage_synth(const RunConfig& cfg);
void stage_grid(const RunConfig& cfg, const std::string& regions_path = "");
void stage_features(const RunConfig& cfg);
void stage_train_cells(const RunConfig& cfg);
void stage_aggregate(const RunConfig& cfg, const std::string& regions_path = "");
void stage_train_task(const RunConfig& cfg, const std::string& task);
std::vector<MetricsReport> stage_eval(const RunConfig& cfg);
std::vector<MetricsReport> stage_ablate(const RunConfig& cfg,
                                        const std::vector<std::string>& variants);
std::vector<MetricsReport> stage_merge_eval(const RunConfig& cfg,
                                            const std::vector<int>& merge_targets);
void stage_plot(const RunConfig& cfg, const std::string& report_csv,
                const std::string& out_png);

// Report serialization shared by the CLI stages.
void write_report_csv(const std::vector<MetricsReport>& reports,
                      const std::string& path);
void write_report_markdown(const std::vector<MetricsReport>& reports,
                           const std::string& path);
std::vector<MetricsReport> read_report_csv(const std::string& path);

}  // namespace flexireg
