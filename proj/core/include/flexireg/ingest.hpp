#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "flexireg/hexgrid.hpp"
#include "flexireg/regions.hpp"

namespace flexireg {

inline constexpr int kPoiCategories = 15;
inline constexpr int kLandUseTypes = 20;

// Fixed category vocabularies, index order is part of the data contract.
const std::array<std::string, kPoiCategories>& poi_category_names();
const std::array<std::string, kLandUseTypes>& landuse_type_names();
int poi_category_index(const std::string& name);      // unknown -> "others"
int landuse_type_index(const std::string& name);      // unknown -> -1 (reject)

struct PoiRecord {
  Vec2 location;  // planar meters
  int category = 0;
};

struct LandUseZone {
  Ring polygon;
  int type = 0;
};

struct StreetViewPoint {
  Vec2 location;
  int heading = 0;  // degrees, one of 0/90/180/270
  std::string token;  // opaque image ref handed to encoders
};

struct FeatureBundle {
  Eigen::MatrixXi poi;       // m x 15 counts
  Eigen::MatrixXi landuse;   // m x 20 zone counts
  Eigen::MatrixXi neighbors; // m x 6 ids, -1 padding
  std::vector<std::string> satellite_refs;            // m
  std::vector<std::vector<StreetViewPoint>> streetview;  // per cell
  std::vector<std::string> descriptions;              // m
};

struct TaskDataset {
  std::string task_name;
  Eigen::VectorXd targets;  // per region, aligned to RegionSet order
};

struct BinReport {
  std::int64_t spilled = 0;   // records outside every cell
  std::int64_t rejected = 0;  // records with invalid fields
};

// Counts per (cell, category); points outside all cells go to the spill
// bucket. Points on shared boundaries resolve to the lowest cell id.
Eigen::MatrixXi bin_pois(const std::vector<PoiRecord>& pois, const HexGrid& grid,
                         BinReport* report = nullptr);

// Counts zones with positive intersection area per (cell, type).
Eigen::MatrixXi bin_landuse(const std::vector<LandUseZone>& zones, const HexGrid& grid,
                            BinReport* report = nullptr);

using Polyline = std::vector<Vec2>;

struct StreetViewSampleReport {
  bool empty_network_fallback = false;
  std::size_t road_points_kept = 0;
  std::size_t random_points_added = 0;
};

// Samples points every 100 m along each road, drops points within 20 m of a
// kept point, tops cells up to 5 points with uniform-random interior points,
// and expands each point into 4 headings (0/90/180/270).
std::vector<std::vector<StreetViewPoint>> sample_streetview_points(
    const std::vector<Polyline>& roads, const HexGrid& grid, std::uint64_t seed,
    StreetViewSampleReport* report = nullptr);

enum class InstructionVariant { kStandard, kRemoved, kRephrased, kAtEnd };

struct DescriptionConfig {
  InstructionVariant instruction = InstructionVariant::kStandard;
  int max_tokens = 256;  // whitespace tokens
};

// Fixed template: task instruction, geometry (shape, edge length, area),
// address, then nonzero POI categories with counts.
std::string compose_cell_description(const GridCell& cell,
                                     const Eigen::VectorXi& poi_row,
                                     const std::string& address,
                                     const DescriptionConfig& cfg = {});

// File loaders (see data format notes in the README).
std::vector<PoiRecord> load_pois_csv(const std::string& path, const Projection* proj);
std::vector<LandUseZone> load_landuse_geojson(const std::string& path, const Projection* proj);
std::vector<Polyline> load_roads_geojson(const std::string& path, const Projection* proj);
TaskDataset load_task_csv(const std::string& path, const std::string& task_name,
                          std::size_t num_regions);
void save_task_csv(const TaskDataset& task, const std::string& path);

}  // namespace flexireg
