#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flexireg/ingest.hpp"
#include "flexireg/regions.hpp"

namespace flexireg {

struct SynthParams {
  double extent = 8000.0;       // bbox side length, meters (centered at origin)
  double edge_length = 200.0;   // hex edge for target aggregation
  int regions = 60;             // Voronoi seed count
  int districts = 5;            // intensity profile classes
  double poi_rate = 12.0;       // mean POIs per region per active category
  double zones_per_region = 4.0;
  double road_spacing = 700.0;  // street grid spacing
  double nonlinear_scale = 0.15;  // relative amplitude of the nonlinear term
  double noise_rel = 0.05;        // target noise sigma relative to signal stddev
  std::vector<std::string> tasks = {"crime", "checkin", "call", "population"};
};

// Generating coefficients, persisted for auditability.
struct SynthCoefficients {
  std::string task_name;
  Eigen::VectorXd linear;   // 15 poi + 20 landuse aggregate weights
  double nonlinear = 0.0;
  double noise_sigma = 0.0;  // absolute sigma actually applied
};

struct SynthCity {
  BBox bbox;
  RegionSet regions;
  std::vector<PoiRecord> pois;
  std::vector<LandUseZone> zones;
  std::vector<Polyline> roads;
  std::vector<TaskDataset> tasks;
  std::vector<SynthCoefficients> coefficients;
};

// Fully self-contained desk-scale city with planted signal:
// Voronoi regions over random seeds, district-profiled POI/land-use/road
// layers, and per-region targets
//   y = X gamma + nonlinear(X) + noise,
// where X are the overlap-weighted cell-to-region feature aggregates.
// Bit-deterministic per seed.
SynthCity generate_synthetic_city(std::uint64_t seed, const SynthParams& params);

void save_synth_coefficients(const std::vector<SynthCoefficients>& coeffs,
                             const std::string& path);

}  // namespace flexireg
