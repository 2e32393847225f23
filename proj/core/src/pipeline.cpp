#include "flexireg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "flexireg/graphs.hpp"
#include "flexireg/ingest.hpp"
#include "flexireg/io.hpp"
#include "flexireg/overlap.hpp"
#include "flexireg/rng.hpp"

namespace fs = std::filesystem;

namespace flexireg {
namespace {

constexpr double kRefCountScale = 0.05;  // matches the stub text-count scale

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

std::vector<std::int64_t> cell_ids(const HexGrid& grid) {
  std::vector<std::int64_t> ids;
  ids.reserve(grid.size());
  for (const auto& c : grid.cells) ids.push_back(c.id);
  return ids;
}

std::vector<std::int64_t> region_ids_of(const RegionSet& regions) {
  std::vector<std::int64_t> ids;
  ids.reserve(regions.size());
  for (const auto& r : regions) ids.push_back(r.id);
  return ids;
}

BBox bbox_of_regions(const RegionSet& regions) {
  if (regions.empty()) throw std::invalid_argument("empty region set");
  BBox b = regions.front().bbox();
  for (const auto& r : regions) {
    const BBox rb = r.bbox();
    b.min_x = std::min(b.min_x, rb.min_x);
    b.min_y = std::min(b.min_y, rb.min_y);
    b.max_x = std::max(b.max_x, rb.max_x);
    b.max_y = std::max(b.max_y, rb.max_y);
  }
  return b;
}

HexGrid build_grid(const RunConfig& cfg, const BBox& bbox) {
  if (cfg.grid_shape == "hex") return build_hex_grid(bbox, cfg.edge_length);
  if (cfg.grid_shape == "square") return build_square_grid(bbox, cfg.edge_length);
  throw std::invalid_argument("unknown grid shape: " + cfg.grid_shape);
}

std::string satellite_ref(const GridCell& cell, const Eigen::VectorXi& poi_row,
                          const Eigen::VectorXi& lu_row) {
  std::ostringstream os;
  os.precision(10);
  os << "sat:cell=" << cell.id;
  for (Eigen::Index k = 0; k < poi_row.size(); ++k)
    if (poi_row(k) > 0) os << ";p" << k << "=" << poi_row(k) * kRefCountScale;
  for (Eigen::Index k = 0; k < lu_row.size(); ++k)
    if (lu_row(k) > 0) os << ";u" << k << "=" << lu_row(k) * kRefCountScale;
  return os.str();
}

Eigen::MatrixXd aggregate_counts(const RegionSet& regions, const OverlapMap& overlap,
                                 const Eigen::MatrixXi& poi,
                                 const Eigen::MatrixXi& landuse) {
  const auto n = static_cast<Eigen::Index>(regions.size());
  Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(n, kPoiCategories + kLandUseTypes);
  Eigen::Index row = 0;
  for (const auto& [rid, cells] : overlap.entries) {
    for (const auto& [cid, coeff] : cells) {
      agg.row(row).head(kPoiCategories) += coeff * poi.row(cid).cast<double>();
      agg.row(row).tail(kLandUseTypes) += coeff * landuse.row(cid).cast<double>();
    }
    ++row;
  }
  return agg;
}

}  // namespace

// --- variants ---

const std::vector<std::string>& all_variants() {
  static const std::vector<std::string> names = {
      "full",     "w/o-PE", "w/o-TAlign", "w/o-SVAlign", "w/o-EC",
      "w/o-WS",   "w/o-LT", "w/o-P",      "w/o-L",       "w/o-N",
      "w/o-SI",   "w/o-T",  "w/o-SV"};
  return names;
}

VariantSpec variant_spec(const std::string& name) {
  VariantSpec spec;
  spec.name = name;
  if (name == "full") return spec;
  if (name == "w/o-PE") {
    spec.use_enhancer = false;
    return spec;
  }
  if (name == "w/o-TAlign") {
    spec.text = TextBranchMode::kConcatRaw;
    return spec;
  }
  if (name == "w/o-SVAlign") {
    spec.sv = SvBranchMode::kSumConcat;
    return spec;
  }
  if (name == "w/o-EC") {
    spec.env_context_training = false;
    return spec;
  }
  if (name == "w/o-WS") {
    spec.weights = AggregateWeights::kUniform;
    return spec;
  }
  if (name == "w/o-LT") {
    spec.reduction = TextReduction::kMeanTokens;
    return spec;
  }
  auto drop_view = [&spec](const std::string& v) {
    spec.views.erase(std::find(spec.views.begin(), spec.views.end(), v));
  };
  if (name == "w/o-P") {
    drop_view("p");
    return spec;
  }
  if (name == "w/o-L") {
    drop_view("l");
    return spec;
  }
  if (name == "w/o-N") {
    drop_view("gn");
    return spec;
  }
  if (name == "w/o-SI") {
    drop_view("si");
    return spec;
  }
  if (name == "w/o-T") {
    spec.text = TextBranchMode::kOff;
    return spec;
  }
  if (name == "w/o-SV") {
    spec.sv = SvBranchMode::kOff;
    return spec;
  }
  throw std::invalid_argument("unknown variant: " + name);
}

// --- workbench ---

Workbench build_workbench_from_city(const RunConfig& cfg, SynthCity city) {
  Workbench wb;
  wb.cfg = cfg;
  wb.city = std::move(city);
  wb.grid = build_grid(cfg, wb.city.bbox);
  const auto m = static_cast<Eigen::Index>(wb.grid.size());
  if (m == 0) throw std::runtime_error("workbench: empty grid");

  wb.features.poi = bin_pois(wb.city.pois, wb.grid);
  wb.features.landuse = bin_landuse(wb.city.zones, wb.grid);
  wb.features.neighbors = neighbor_vector(wb.grid);
  wb.features.streetview =
      sample_streetview_points(wb.city.roads, wb.grid, cfg.seed);

  wb.features.descriptions.resize(static_cast<std::size_t>(m));
  wb.features.satellite_refs.resize(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const GridCell& cell = wb.grid.cells[static_cast<std::size_t>(i)];
    std::ostringstream addr;
    addr.precision(6);
    addr << "tile " << cell.id << " near (" << cell.center.x << ", "
         << cell.center.y << ")";
    wb.features.descriptions[static_cast<std::size_t>(i)] =
        compose_cell_description(cell, wb.features.poi.row(i), addr.str());
    wb.features.satellite_refs[static_cast<std::size_t>(i)] =
        satellite_ref(cell, wb.features.poi.row(i), wb.features.landuse.row(i));
    // scene-level fields appended so street-view embeddings carry cell signal
    const double pden = wb.features.poi.row(i).sum() * kRefCountScale;
    const double lden = wb.features.landuse.row(i).sum() * kRefCountScale;
    std::ostringstream extra;
    extra.precision(10);
    extra << ";pd=" << pden << ";ld=" << lden;
    for (auto& sp : wb.features.streetview[static_cast<std::size_t>(i)])
      sp.token += extra.str();
  }

  ProviderBundle prov_last = make_providers(cfg.provider, cfg.seed, cfg.stub_signal,
                                            cfg.endpoint, TextReduction::kLastToken,
                                            cfg.sat_dim, cfg.sv_dim, cfg.text_dim);
  ProviderBundle prov_mean = make_providers(cfg.provider, cfg.seed, cfg.stub_signal,
                                            cfg.endpoint, TextReduction::kMeanTokens,
                                            cfg.sat_dim, cfg.sv_dim, cfg.text_dim);
  wb.sat_features = prov_last.satellite->encode_batch(wb.features.satellite_refs);
  wb.text_cells_last = prov_last.text->encode_batch(wb.features.descriptions);
  wb.text_cells_mean = prov_mean.text->encode_batch(wb.features.descriptions);

  std::vector<std::string> sv_tokens;
  std::vector<Eigen::Index> sv_counts;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& points = wb.features.streetview[static_cast<std::size_t>(i)];
    sv_counts.push_back(static_cast<Eigen::Index>(points.size()));
    for (const auto& sp : points) {
      sv_tokens.push_back(sp.token);
      wb.sv_locations.push_back(sp.location);
    }
  }
  wb.sv_features_flat = prov_last.streetview->encode_batch(sv_tokens);
  wb.sv_cell_features.resize(static_cast<std::size_t>(m));
  Eigen::Index row = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    wb.sv_cell_features[static_cast<std::size_t>(i)] =
        wb.sv_features_flat.middleRows(row, sv_counts[static_cast<std::size_t>(i)]);
    row += sv_counts[static_cast<std::size_t>(i)];
  }

  wb.overlap = build_overlap_map(wb.city.regions, wb.grid);
  wb.direct_features =
      aggregate_counts(wb.city.regions, wb.overlap, wb.features.poi,
                       wb.features.landuse);
  return wb;
}

Workbench build_workbench(const RunConfig& cfg) {
  SynthParams params;
  params.extent = cfg.synth_extent;
  params.edge_length = cfg.edge_length;
  params.regions = cfg.synth_regions;
  params.noise_rel = cfg.synth_noise;
  return build_workbench_from_city(cfg, generate_synthetic_city(cfg.seed, params));
}

Eigen::MatrixXd train_cell_embeddings(const Workbench& wb,
                                      const std::vector<std::string>& views,
                                      GridTrainResult* result) {
  const auto m = wb.num_cells();
  GridLearnerInputs gi;
  gi.views = views;
  auto has = [&views](const char* v) {
    return std::find(views.begin(), views.end(), v) != views.end();
  };
  if (has("p")) gi.adj_poi = cosine_adjacency(wb.features.poi.cast<double>());
  if (has("l")) gi.adj_landuse = cosine_adjacency(wb.features.landuse.cast<double>());
  if (has("gn")) {
    gi.adj_neighbor =
        cosine_adjacency(neighbor_feature_vectorize(wb.features.neighbors, m));
    gi.neighbor_ids = wb.features.neighbors;
  }
  if (has("si")) gi.sat_features = wb.sat_features;
  gi.poi_counts = wb.features.poi.cast<double>();

  GridLearnerConfig gc;
  gc.d = wb.cfg.d;
  gc.heads = wb.cfg.heads;
  gc.gat_layers = wb.cfg.gat_layers;
  gc.fusion_layers = wb.cfg.fusion_layers;
  gc.dropout = wb.cfg.dropout;
  gc.margin = wb.cfg.margin;
  gc.smooth_l1_beta = wb.cfg.smooth_l1_beta;
  gc.epochs = wb.cfg.cell_epochs;
  gc.lr = wb.cfg.cell_lr;
  gc.seed = wb.cfg.seed;

  GridLearner learner(std::move(gi), gc);
  GridTrainResult r = learner.train();
  if (result != nullptr) *result = r;
  return r.embeddings;
}

const SvEncoder& workbench_sv_encoder(const Workbench& wb) {
  if (!wb.sv_encoder_cache) {
    SvEncoderConfig sc;
    sc.epochs = wb.cfg.sv_epochs;
    sc.lr = wb.cfg.sv_lr;
    sc.tau = wb.cfg.tau;
    sc.seed = wb.cfg.seed;
    wb.sv_encoder_cache = train_streetview_encoder(wb.sv_cell_features, sc).encoder;
  }
  return *wb.sv_encoder_cache;
}

TaskMaterials prepare_materials(const Workbench& wb, const Eigen::MatrixXd& E,
                                const VariantSpec& spec, const RegionSet& regions,
                                const OverlapMap& overlap) {
  TaskMaterials mat;
  mat.H = aggregate_region_embeddings(E, overlap, spec.weights).H;

  if (spec.text != TextBranchMode::kOff) {
    const Eigen::MatrixXd& text_cells = spec.reduction == TextReduction::kLastToken
                                            ? wb.text_cells_last
                                            : wb.text_cells_mean;
    mat.H_text = aggregate_region_embeddings(text_cells, overlap, spec.weights).H;
  }

  if (spec.sv != SvBranchMode::kOff) {
    Eigen::MatrixXd image_features = wb.sv_features_flat;
    if (spec.env_context_training)
      image_features = workbench_sv_encoder(wb).apply(image_features);
    mat.region_images =
        select_region_images(regions, wb.sv_locations, image_features,
                             wb.cfg.region_images, wb.cfg.seed);
  }
  return mat;
}

PromptConfig make_prompt_config(const RunConfig& cfg, const VariantSpec& spec) {
  PromptConfig pc;
  pc.d = cfg.d;
  pc.d_text = cfg.d_text;
  pc.d_proj = cfg.d_proj;
  pc.epochs = cfg.prompt_epochs;
  pc.lr = cfg.prompt_lr;
  pc.weight_decay = cfg.prompt_weight_decay;
  pc.seed = cfg.seed;
  pc.text_mode = spec.text;
  pc.sv_mode = spec.sv;
  return pc;
}

std::vector<MetricsReport> evaluate_materials(const Workbench& wb,
                                              const TaskMaterials& materials,
                                              const std::vector<TaskDataset>& tasks,
                                              const VariantSpec& spec) {
  std::vector<MetricsReport> reports;
  const PromptConfig pc = make_prompt_config(wb.cfg, spec);
  for (const TaskDataset& task : tasks) {
    MetricsReport report;
    if (spec.use_enhancer) {
      EnhancerEvalInputs in;
      in.H = materials.H;
      in.H_text_raw = materials.H_text;
      in.region_images = materials.region_images;
      in.targets = task.targets;
      in.task_name = task.task_name;
      report = evaluate_with_enhancer(in, pc, wb.cfg.ridge_lambda, wb.cfg.folds,
                                      wb.cfg.seed);
    } else {
      report = evaluate_plain(materials.H, task.targets, task.task_name,
                              wb.cfg.ridge_lambda, wb.cfg.folds, wb.cfg.seed);
    }
    report.variant = spec.name;
    reports.push_back(std::move(report));
  }
  return reports;
}

std::vector<MetricsReport> evaluate_variant(const Workbench& wb,
                                            const Eigen::MatrixXd& E,
                                            const VariantSpec& spec) {
  const TaskMaterials mat =
      prepare_materials(wb, E, spec, wb.city.regions, wb.overlap);
  return evaluate_materials(wb, mat, wb.city.tasks, spec);
}

// --- report I/O ---

void write_report_csv(const std::vector<MetricsReport>& reports,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "variant,task,scope,mae,rmse,r2\n";
  for (const auto& r : reports) {
    out << r.variant << "," << r.task_name << ",pooled," << r.mae << "," << r.rmse
        << "," << r.r2 << "\n";
    for (std::size_t f = 0; f < r.per_fold.size(); ++f)
      out << r.variant << "," << r.task_name << ",fold" << f << ","
          << r.per_fold[f].mae << "," << r.per_fold[f].rmse << ","
          << r.per_fold[f].r2 << "\n";
  }
}

void write_report_markdown(const std::vector<MetricsReport>& reports,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(6);
  out << "| variant | task | MAE | RMSE | R2 |\n";
  out << "|---|---|---|---|---|\n";
  for (const auto& r : reports)
    out << "| " << r.variant << " | " << r.task_name << " | " << r.mae << " | "
        << r.rmse << " | " << r.r2 << " |\n";
}

std::vector<MetricsReport> read_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<MetricsReport> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string variant, task, scope, mae_s, rmse_s, r2_s;
    if (!std::getline(is, variant, ',') || !std::getline(is, task, ',') ||
        !std::getline(is, scope, ',') || !std::getline(is, mae_s, ',') ||
        !std::getline(is, rmse_s, ',') || !std::getline(is, r2_s, ','))
      throw std::runtime_error(path + ": malformed report row");
    if (scope == "pooled") {
      MetricsReport r;
      r.variant = variant;
      r.task_name = task;
      r.mae = std::stod(mae_s);
      r.rmse = std::stod(rmse_s);
      r.r2 = std::stod(r2_s);
      out.push_back(std::move(r));
    } else if (scope.rfind("fold", 0) == 0) {
      if (out.empty() || out.back().variant != variant ||
          out.back().task_name != task)
        throw std::runtime_error(path + ": fold row without its pooled row");
      FoldMetrics fm;
      fm.mae = std::stod(mae_s);
      fm.rmse = std::stod(rmse_s);
      fm.r2 = std::stod(r2_s);
      out.back().per_fold.push_back(fm);
    } else {
      throw std::runtime_error(path + ": unknown report scope: " + scope);
    }
  }
  return out;
}

// --- file stages ---

namespace {

void write_pois_csv(const std::vector<PoiRecord>& pois, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  for (const auto& p : pois)
    out << p.location.x << "," << p.location.y << "," << p.category << "\n";
}

nlohmann::json ring_to_coords(const Ring& ring) {
  nlohmann::json coords = nlohmann::json::array();
  for (const Vec2& p : ring) coords.push_back({p.x, p.y});
  if (!ring.empty()) coords.push_back({ring.front().x, ring.front().y});
  return coords;
}

void write_landuse_geojson(const std::vector<LandUseZone>& zones,
                           const std::string& path) {
  nlohmann::json j;
  j["type"] = "FeatureCollection";
  j["crs"] = "planar-meters";
  j["features"] = nlohmann::json::array();
  for (const auto& z : zones) {
    nlohmann::json f;
    f["type"] = "Feature";
    f["properties"]["type"] = z.type;
    f["geometry"]["type"] = "Polygon";
    f["geometry"]["coordinates"] = nlohmann::json::array({ring_to_coords(z.polygon)});
    j["features"].push_back(std::move(f));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

void write_roads_geojson(const std::vector<Polyline>& roads, const std::string& path) {
  nlohmann::json j;
  j["type"] = "FeatureCollection";
  j["crs"] = "planar-meters";
  j["features"] = nlohmann::json::array();
  for (const auto& line : roads) {
    nlohmann::json f;
    f["type"] = "Feature";
    f["properties"] = nlohmann::json::object();
    f["geometry"]["type"] = "LineString";
    nlohmann::json coords = nlohmann::json::array();
    for (const Vec2& p : line) coords.push_back({p.x, p.y});
    f["geometry"]["coordinates"] = std::move(coords);
    j["features"].push_back(std::move(f));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& artifacts) {
  std::map<std::string, std::uint64_t> hashes;
  for (const std::string& a : artifacts) hashes[a] = hash_file(out_path(cfg, a));
  write_run_manifest(out_path(cfg, "manifest_" + command + ".json"), command,
                     cfg.to_map(), cfg.config_hash(), hashes);
}

SynthCity load_city_files(const RunConfig& cfg) {
  SynthCity city;
  city.regions = read_regions_geojson(out_path(cfg, "regions.geojson"));
  city.bbox = bbox_of_regions(city.regions);
  city.pois = load_pois_csv(out_path(cfg, "pois.csv"), nullptr);
  city.zones = load_landuse_geojson(out_path(cfg, "landuse.geojson"), nullptr);
  city.roads = load_roads_geojson(out_path(cfg, "roads.geojson"), nullptr);
  for (const auto& entry : fs::directory_iterator(cfg.out_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("task_", 0) == 0 && entry.path().extension() == ".csv") {
      const std::string task_name = name.substr(5, name.size() - 9);
      city.tasks.push_back(
          load_task_csv(entry.path().string(), task_name, city.regions.size()));
    }
  }
  std::sort(city.tasks.begin(), city.tasks.end(),
            [](const TaskDataset& a, const TaskDataset& b) {
              return a.task_name < b.task_name;
            });
  return city;
}

Workbench load_or_build_workbench(const RunConfig& cfg) {
  if (fs::exists(out_path(cfg, "regions.geojson")))
    return build_workbench_from_city(cfg, load_city_files(cfg));
  return build_workbench(cfg);
}

Eigen::MatrixXd obtain_cell_embeddings(const Workbench& wb, const VariantSpec& spec) {
  const bool full_views = spec.views.size() == 4;
  const std::string cells_path = out_path(wb.cfg, "cells.femb");
  if (full_views && fs::exists(cells_path)) return read_embedding_file(cells_path);
  return train_cell_embeddings(wb, spec.views);
}

}  // namespace

void stage_synth(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  SynthParams params;
  params.extent = cfg.synth_extent;
  params.edge_length = cfg.edge_length;
  params.regions = cfg.synth_regions;
  params.noise_rel = cfg.synth_noise;
  const SynthCity city = generate_synthetic_city(cfg.seed, params);

  write_regions_geojson(city.regions, out_path(cfg, "regions.geojson"));
  write_pois_csv(city.pois, out_path(cfg, "pois.csv"));
  write_landuse_geojson(city.zones, out_path(cfg, "landuse.geojson"));
  write_roads_geojson(city.roads, out_path(cfg, "roads.geojson"));
  save_synth_coefficients(city.coefficients, out_path(cfg, "coefficients.json"));
  std::vector<std::string> artifacts = {"regions.geojson", "pois.csv",
                                        "landuse.geojson", "roads.geojson",
                                        "coefficients.json"};
  for (const auto& task : city.tasks) {
    const std::string name = "task_" + task.task_name + ".csv";
    save_task_csv(task, out_path(cfg, name));
    artifacts.push_back(name);
  }
  write_manifest(cfg, "synth", artifacts);
}

void stage_grid(const RunConfig& cfg, const std::string& regions_path) {
  fs::create_directories(cfg.out_dir);
  const std::string path =
      regions_path.empty() ? out_path(cfg, "regions.geojson") : regions_path;
  const RegionSet regions = read_regions_geojson(path);
  const HexGrid grid = build_grid(cfg, bbox_of_regions(regions));
  const OverlapMap overlap = build_overlap_map(regions, grid);

  nlohmann::json meta;
  meta["shape"] = cfg.grid_shape;
  meta["edge_length"] = cfg.edge_length;
  meta["cells"] = grid.size();
  meta["bbox"] = {grid.bbox.min_x, grid.bbox.min_y, grid.bbox.max_x, grid.bbox.max_y};
  std::ofstream gm(out_path(cfg, "grid.json"));
  if (!gm) throw std::runtime_error("cannot write grid.json");
  gm << meta.dump(2) << "\n";
  write_overlap_map(overlap, out_path(cfg, "overlap.json"));
  write_manifest(cfg, "grid", {"grid.json", "overlap.json"});
}

void stage_features(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const Workbench wb = build_workbench_from_city(cfg, load_city_files(cfg));
  const auto ids = cell_ids(wb.grid);

  write_embedding_file(out_path(cfg, "poi_counts.femb"),
                       wb.features.poi.cast<double>(), ids);
  write_embedding_file(out_path(cfg, "landuse_counts.femb"),
                       wb.features.landuse.cast<double>(), ids);
  write_embedding_file(out_path(cfg, "sat_features.femb"), wb.sat_features, ids);
  write_embedding_file(out_path(cfg, "text_last.femb"), wb.text_cells_last, ids);
  write_embedding_file(out_path(cfg, "text_mean.femb"), wb.text_cells_mean, ids);

  std::vector<std::int64_t> sv_ids;
  for (std::size_t i = 0; i < wb.sv_cell_features.size(); ++i)
    for (Eigen::Index k = 0; k < wb.sv_cell_features[i].rows(); ++k)
      sv_ids.push_back(wb.grid.cells[i].id);
  write_embedding_file(out_path(cfg, "sv_features.femb"), wb.sv_features_flat, sv_ids);
  {
    std::ofstream out(out_path(cfg, "sv_locations.csv"));
    if (!out) throw std::runtime_error("cannot write sv_locations.csv");
    out.precision(17);
    for (const Vec2& p : wb.sv_locations) out << p.x << "," << p.y << "\n";
  }
  {
    std::ofstream out(out_path(cfg, "descriptions.txt"));
    if (!out) throw std::runtime_error("cannot write descriptions.txt");
    for (const std::string& d : wb.features.descriptions) out << d << "\n";
  }
  write_manifest(cfg, "features",
                 {"poi_counts.femb", "landuse_counts.femb", "sat_features.femb",
                  "text_last.femb", "text_mean.femb", "sv_features.femb",
                  "sv_locations.csv", "descriptions.txt"});
}

void stage_train_cells(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const Workbench wb = load_or_build_workbench(cfg);
  const VariantSpec spec = variant_spec(cfg.variant);
  GridTrainResult result;
  const Eigen::MatrixXd E = train_cell_embeddings(wb, spec.views, &result);
  write_embedding_file(out_path(cfg, "cells.femb"), E, cell_ids(wb.grid));

  std::vector<std::vector<double>> rows;
  for (const auto& r : result.loss_curve)
    rows.push_back({r[0], r[1], r[2], r[3], r[4]});
  write_csv(out_path(cfg, "cell_loss.csv"),
            {"loss_p", "loss_l", "loss_gn", "loss_si", "total"}, rows);
  write_manifest(cfg, "train-cells", {"cells.femb", "cell_loss.csv"});
}

void stage_aggregate(const RunConfig& cfg, const std::string& regions_path) {
  fs::create_directories(cfg.out_dir);
  const Eigen::MatrixXd E = read_embedding_file(out_path(cfg, "cells.femb"));
  const RegionSet base_regions =
      read_regions_geojson(out_path(cfg, "regions.geojson"));
  const RegionSet regions =
      regions_path.empty() ? base_regions : read_regions_geojson(regions_path);
  // grid geometry is pinned to the original study area
  const HexGrid grid = build_grid(cfg, bbox_of_regions(base_regions));
  if (static_cast<Eigen::Index>(grid.size()) != E.rows())
    throw std::runtime_error(
        "stage_aggregate: cells.femb does not match the configured grid");

  const OverlapMap overlap = build_overlap_map(regions, grid);
  const VariantSpec spec = variant_spec(cfg.variant);
  const RegionEmbeddings H = aggregate_region_embeddings(E, overlap, spec.weights);

  std::string suffix;
  if (!regions_path.empty())
    suffix = "_" + fs::path(regions_path).stem().string();
  write_overlap_map(overlap, out_path(cfg, "overlap" + suffix + ".json"));
  write_embedding_file(out_path(cfg, "H" + suffix + ".femb"), H.H, H.region_ids);
  write_manifest(cfg, "aggregate",
                 {"overlap" + suffix + ".json", "H" + suffix + ".femb"});
}

void stage_train_task(const RunConfig& cfg, const std::string& task_name) {
  fs::create_directories(cfg.out_dir);
  const Workbench wb = load_or_build_workbench(cfg);
  const VariantSpec spec = variant_spec(cfg.variant);
  const Eigen::MatrixXd E = obtain_cell_embeddings(wb, spec);
  const TaskMaterials mat =
      prepare_materials(wb, E, spec, wb.city.regions, wb.overlap);

  const TaskDataset* task = nullptr;
  for (const auto& t : wb.city.tasks)
    if (t.task_name == task_name) task = &t;
  if (task == nullptr)
    throw std::invalid_argument("unknown task: " + task_name);

  const auto rids = region_ids_of(wb.city.regions);
  std::vector<std::string> artifacts;
  if (!spec.use_enhancer) {
    write_embedding_file(out_path(cfg, "hhat_" + task_name + ".femb"), mat.H, rids);
    artifacts = {"hhat_" + task_name + ".femb"};
  } else {
    PromptInputs pin;
    pin.H = mat.H;
    pin.H_text_raw = mat.H_text;
    pin.region_images = mat.region_images;
    pin.targets = task->targets;
    pin.train_idx.resize(static_cast<std::size_t>(task->targets.size()));
    std::iota(pin.train_idx.begin(), pin.train_idx.end(), 0);
    PromptEnhancer enhancer(std::move(pin), make_prompt_config(cfg, spec));
    const PromptResult result = enhancer.train();

    write_embedding_file(out_path(cfg, "hhat_" + task_name + ".femb"),
                         result.enhanced, rids);
    std::vector<std::vector<double>> rows;
    for (double v : result.loss_curve) rows.push_back({v});
    write_csv(out_path(cfg, "prompt_loss_" + task_name + ".csv"), {"mse"}, rows);
    {
      std::ofstream out(out_path(cfg, "predictions_" + task_name + ".csv"));
      if (!out) throw std::runtime_error("cannot write predictions csv");
      out.precision(17);
      out << "region_id,prediction,target\n";
      for (Eigen::Index i = 0; i < result.predictions.size(); ++i)
        out << rids[static_cast<std::size_t>(i)] << "," << result.predictions(i)
            << "," << task->targets(i) << "\n";
    }
    artifacts = {"hhat_" + task_name + ".femb", "prompt_loss_" + task_name + ".csv",
                 "predictions_" + task_name + ".csv"};
  }
  write_manifest(cfg, "train-task-" + task_name, artifacts);
}

std::vector<MetricsReport> stage_eval(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const Workbench wb = load_or_build_workbench(cfg);
  const VariantSpec spec = variant_spec(cfg.variant);
  const Eigen::MatrixXd E = obtain_cell_embeddings(wb, spec);
  const auto reports = evaluate_variant(wb, E, spec);
  write_report_csv(reports, out_path(cfg, "report_eval.csv"));
  write_report_markdown(reports, out_path(cfg, "report_eval.md"));
  write_manifest(cfg, "eval", {"report_eval.csv", "report_eval.md"});
  return reports;
}

std::vector<MetricsReport> stage_ablate(const RunConfig& cfg,
                                        const std::vector<std::string>& variants) {
  fs::create_directories(cfg.out_dir);
  const Workbench wb = load_or_build_workbench(cfg);
  const std::vector<std::string>& list =
      variants.empty() ? all_variants() : variants;

  std::map<std::string, Eigen::MatrixXd> cells_by_views;
  std::vector<MetricsReport> reports;
  for (const std::string& name : list) {
    const VariantSpec spec = variant_spec(name);
    std::string key;
    for (const auto& v : spec.views) key += v + ",";
    auto it = cells_by_views.find(key);
    if (it == cells_by_views.end())
      it = cells_by_views.emplace(key, train_cell_embeddings(wb, spec.views)).first;
    auto variant_reports = evaluate_variant(wb, it->second, spec);
    reports.insert(reports.end(), variant_reports.begin(), variant_reports.end());
  }
  write_report_csv(reports, out_path(cfg, "ablation_report.csv"));
  write_report_markdown(reports, out_path(cfg, "ablation_report.md"));
  write_manifest(cfg, "ablate", {"ablation_report.csv", "ablation_report.md"});
  return reports;
}

std::vector<MetricsReport> stage_merge_eval(const RunConfig& cfg,
                                            const std::vector<int>& merge_targets) {
  fs::create_directories(cfg.out_dir);
  const Workbench wb = load_or_build_workbench(cfg);
  const VariantSpec spec = variant_spec(cfg.variant);

  const std::string cells_path = out_path(cfg, "cells.femb");
  if (!fs::exists(cells_path)) {
    const Eigen::MatrixXd E0 = train_cell_embeddings(wb, spec.views);
    write_embedding_file(cells_path, E0, cell_ids(wb.grid));
  }
  const std::uint64_t cells_hash_before = hash_file(cells_path);
  const Eigen::MatrixXd E = read_embedding_file(cells_path);

  std::vector<int> targets = merge_targets;
  if (targets.empty()) targets = {50, 40, 30};

  std::vector<MetricsReport> reports;
  auto eval_formation = [&](const RegionSet& regions, const std::string& label) {
    const OverlapMap overlap = build_overlap_map(regions, wb.grid);
    const TaskMaterials mat = prepare_materials(wb, E, spec, regions, overlap);
    std::vector<TaskDataset> tasks;
    for (const auto& task : wb.city.tasks) {
      TaskDataset merged;
      merged.task_name = task.task_name;
      merged.targets = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(regions.size()));
      for (std::size_t r = 0; r < regions.size(); ++r)
        for (std::int64_t member : regions[r].member_ids)
          merged.targets(static_cast<Eigen::Index>(r)) += task.targets(member);
      tasks.push_back(std::move(merged));
    }
    auto rs = evaluate_materials(wb, mat, tasks, spec);
    for (auto& r : rs) r.variant = label;
    reports.insert(reports.end(), rs.begin(), rs.end());
  };

  eval_formation(wb.city.regions,
                 "regions-" + std::to_string(wb.city.regions.size()));
  for (int target : targets) {
    const RegionSet merged =
        merge_regions(wb.city.regions, static_cast<std::size_t>(target), cfg.seed);
    eval_formation(merged, "regions-" + std::to_string(target));
  }

  const std::uint64_t cells_hash_after = hash_file(cells_path);
  write_report_csv(reports, out_path(cfg, "merge_report.csv"));
  write_report_markdown(reports, out_path(cfg, "merge_report.md"));
  {
    nlohmann::json j;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(cells_hash_before));
    j["cells_hash_before"] = buf;
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(cells_hash_after));
    j["cells_hash_after"] = buf;
    j["retrained"] = cells_hash_before != cells_hash_after;
    std::ofstream out(out_path(cfg, "merge_hashes.json"));
    if (!out) throw std::runtime_error("cannot write merge_hashes.json");
    out << j.dump(2) << "\n";
  }
  write_manifest(cfg, "merge-eval",
                 {"merge_report.csv", "merge_report.md", "merge_hashes.json"});
  return reports;
}

// --- plot: minimal PNG bar chart (stored-deflate, no dependencies) ---

namespace {

std::uint32_t crc32_of(const unsigned char* data, std::size_t len,
                       std::uint32_t crc = 0xffffffffu) {
  static std::uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc;
}

void put_u32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

void png_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::vector<unsigned char> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.insert(out.end(), body.begin(), body.end());
  put_u32(out, crc32_of(body.data(), body.size()) ^ 0xffffffffu);
}

// zlib stream with stored (uncompressed) deflate blocks
std::vector<unsigned char> zlib_store(const std::vector<unsigned char>& raw) {
  std::vector<unsigned char> out{0x78, 0x01};
  std::size_t pos = 0;
  do {
    const std::size_t n = std::min<std::size_t>(raw.size() - pos, 65535);
    const bool last = pos + n == raw.size();
    out.push_back(last ? 1 : 0);
    out.push_back(static_cast<unsigned char>(n & 0xff));
    out.push_back(static_cast<unsigned char>(n >> 8));
    out.push_back(static_cast<unsigned char>(~n & 0xff));
    out.push_back(static_cast<unsigned char>((~n >> 8) & 0xff));
    out.insert(out.end(), raw.begin() + static_cast<long>(pos),
               raw.begin() + static_cast<long>(pos + n));
    pos += n;
  } while (pos < raw.size());
  std::uint32_t a = 1, b = 0;
  for (unsigned char c : raw) {
    a = (a + c) % 65521;
    b = (b + a) % 65521;
  }
  put_u32(out, (b << 16) | a);
  return out;
}

void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<unsigned char>& rgb) {
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(height) * (1 + 3 * static_cast<std::size_t>(width)));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    const auto* row = &rgb[static_cast<std::size_t>(y) * width * 3];
    raw.insert(raw.end(), row, row + width * 3);
  }
  std::vector<unsigned char> png{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<unsigned char> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  png_chunk(png, "IHDR", ihdr);
  png_chunk(png, "IDAT", zlib_store(raw));
  png_chunk(png, "IEND", {});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(png.data()),
            static_cast<std::streamsize>(png.size()));
}

}  // namespace

void stage_plot(const RunConfig& cfg, const std::string& report_csv,
                const std::string& out_png) {
  const std::string csv =
      report_csv.empty() ? out_path(cfg, "report_eval.csv") : report_csv;
  const std::string png = out_png.empty() ? out_path(cfg, "report.png") : out_png;
  const auto reports = read_report_csv(csv);
  if (reports.empty()) throw std::runtime_error("no pooled rows in " + csv);

  // mean pooled R^2 per variant, preserving first-seen order
  std::vector<std::string> order;
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : reports) {
    if (acc.find(r.variant) == acc.end()) order.push_back(r.variant);
    auto& [sum, count] = acc[r.variant];
    sum += r.r2;
    ++count;
  }

  const int width = 640, height = 360, margin = 30;
  std::vector<unsigned char> rgb(static_cast<std::size_t>(width) * height * 3, 0xff);
  auto set_px = [&](int x, int y, unsigned char r, unsigned char g, unsigned char b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const std::size_t o = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[o] = r;
    rgb[o + 1] = g;
    rgb[o + 2] = b;
  };
  // axes
  for (int x = margin; x < width - margin; ++x) set_px(x, height - margin, 40, 40, 40);
  for (int y = margin; y < height - margin; ++y) set_px(margin, y, 40, 40, 40);

  const int bars = static_cast<int>(order.size());
  const int slot = (width - 2 * margin) / std::max(1, bars);
  const int plot_h = height - 2 * margin;
  for (int i = 0; i < bars; ++i) {
    const auto& [sum, count] = acc[order[static_cast<std::size_t>(i)]];
    const double r2 = std::clamp(sum / count, 0.0, 1.0);
    const int bar_h = static_cast<int>(r2 * plot_h);
    const int x0 = margin + i * slot + slot / 6;
    const int x1 = margin + (i + 1) * slot - slot / 6;
    const unsigned char shade = static_cast<unsigned char>(60 + (i * 47) % 150);
    for (int x = x0; x < x1; ++x)
      for (int y = height - margin - bar_h; y < height - margin; ++y)
        set_px(x, y, shade, 90, static_cast<unsigned char>(220 - shade / 2));
  }
  write_png_rgb(png, width, height, rgb);

  std::ofstream labels(png + ".labels.txt");
  if (!labels) throw std::runtime_error("cannot write " + png + ".labels.txt");
  labels << "bar,variant,mean_r2\n";
  labels.precision(6);
  for (int i = 0; i < bars; ++i) {
    const auto& [sum, count] = acc[order[static_cast<std::size_t>(i)]];
    labels << i << "," << order[static_cast<std::size_t>(i)] << "," << sum / count
           << "\n";
  }
}

}  // namespace flexireg
