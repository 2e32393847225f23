#include "flexireg/synth.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "flexireg/overlap.hpp"
#include "flexireg/rng.hpp"

namespace flexireg {
namespace {

int poisson(Rng& rng, double lambda) {
  if (lambda <= 0.0) return 0;
  // Knuth; fine for the small rates used here
  const double limit = std::exp(-lambda);
  double p = 1.0;
  int k = 0;
  do {
    ++k;
    p *= rng.uniform();
  } while (p > limit && k < 10000);
  return k - 1;
}

Vec2 random_point_in_region(Rng& rng, const Region& region) {
  const BBox b = region.bbox();
  for (int tries = 0; tries < 10000; ++tries) {
    const Vec2 p{rng.uniform(b.min_x, b.max_x), rng.uniform(b.min_y, b.max_y)};
    for (const auto& part : region.parts) {
      if (!point_in_ring(p, part.outer)) continue;
      bool in_hole = false;
      for (const Ring& h : part.holes)
        if (point_in_ring(p, h)) {
          in_hole = true;
          break;
        }
      if (!in_hole) return p;
    }
  }
  // pathological sliver: fall back to a vertex
  return region.parts.at(0).outer.at(0);
}

RegionSet voronoi_regions(const std::vector<Vec2>& seeds, const BBox& bbox) {
  RegionSet out;
  const Ring box = bbox.to_ring();
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    Ring cell = box;
    for (std::size_t j = 0; j < seeds.size() && !cell.empty(); ++j) {
      if (j == i) continue;
      // keep the half-plane closer to seed i: points p with
      // (p - mid) . (s_j - s_i) <= 0; as a directed clip edge this is the
      // line through mid, perpendicular to s_i -> s_j
      const Vec2 mid = (seeds[i] + seeds[j]) * 0.5;
      const Vec2 d = seeds[j] - seeds[i];
      // direction along the bisector such that the kept side (toward s_i)
      // is on the left of a->b
      const Vec2 along{-d.y, d.x};
      cell = clip_halfplane(cell, mid, mid + along);
    }
    Region r;
    r.id = static_cast<std::int64_t>(i);
    r.member_ids = {r.id};
    PolygonPart part;
    part.outer = std::move(cell);
    r.parts.push_back(std::move(part));
    if (r.area() <= 0.0)
      throw std::runtime_error("synthetic Voronoi produced a degenerate region");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

SynthCity generate_synthetic_city(std::uint64_t seed, const SynthParams& params) {
  if (params.regions < 2)
    throw std::invalid_argument("generate_synthetic_city: need at least 2 regions");
  if (params.districts < 1)
    throw std::invalid_argument("generate_synthetic_city: need at least 1 district");
  if (params.extent <= 0.0 || params.edge_length <= 0.0)
    throw std::invalid_argument("generate_synthetic_city: non-positive extent or edge");

  SynthCity city;
  const double half = params.extent / 2.0;
  city.bbox = {-half, -half, half, half};

  // Voronoi regions over random seed points
  Rng region_rng = Rng::substream(seed, "synth-regions");
  std::vector<Vec2> seeds;
  seeds.reserve(static_cast<std::size_t>(params.regions));
  for (int i = 0; i < params.regions; ++i)
    seeds.push_back({region_rng.uniform(-half * 0.95, half * 0.95),
                     region_rng.uniform(-half * 0.95, half * 0.95)});
  city.regions = voronoi_regions(seeds, city.bbox);

  // district profiles: per-district POI category and land-use intensities
  Rng profile_rng = Rng::substream(seed, "synth-profiles");
  std::vector<Eigen::VectorXd> poi_profile(static_cast<std::size_t>(params.districts));
  std::vector<Eigen::VectorXd> lu_profile(static_cast<std::size_t>(params.districts));
  for (int t = 0; t < params.districts; ++t) {
    Eigen::VectorXd pp(kPoiCategories), lp(kLandUseTypes);
    for (int k = 0; k < kPoiCategories; ++k)
      pp(k) = std::max(0.0, profile_rng.uniform() * 2.0 - 0.6);  // some categories absent
    for (int k = 0; k < kLandUseTypes; ++k)
      lp(k) = std::max(0.0, profile_rng.uniform() * 1.5 - 0.6);
    poi_profile[static_cast<std::size_t>(t)] = pp;
    lu_profile[static_cast<std::size_t>(t)] = lp;
  }
  std::vector<int> district(city.regions.size());
  for (std::size_t i = 0; i < city.regions.size(); ++i)
    district[i] = static_cast<int>(profile_rng.uniform_index(
        static_cast<std::uint64_t>(params.districts)));

  // POIs scattered inside regions with district-scaled rates
  Rng poi_rng = Rng::substream(seed, "synth-pois");
  const double mean_area = params.extent * params.extent / params.regions;
  for (std::size_t i = 0; i < city.regions.size(); ++i) {
    const double area_scale = city.regions[i].area() / mean_area;
    const auto& profile = poi_profile[static_cast<std::size_t>(district[i])];
    for (int k = 0; k < kPoiCategories; ++k) {
      const int count = poisson(poi_rng, params.poi_rate * profile(k) * area_scale);
      for (int c = 0; c < count; ++c)
        city.pois.push_back({random_point_in_region(poi_rng, city.regions[i]), k});
    }
  }

  // land-use zones: random quadrilaterals seeded inside regions
  Rng zone_rng = Rng::substream(seed, "synth-zones");
  for (std::size_t i = 0; i < city.regions.size(); ++i) {
    const auto& profile = lu_profile[static_cast<std::size_t>(district[i])];
    const double profile_sum = profile.sum();
    if (profile_sum <= 0.0) continue;
    const int zones = poisson(zone_rng, params.zones_per_region);
    for (int z = 0; z < zones; ++z) {
      // type sampled from the district profile
      double pick = zone_rng.uniform() * profile_sum;
      int type = 0;
      for (int k = 0; k < kLandUseTypes; ++k) {
        pick -= profile(k);
        if (pick <= 0.0) {
          type = k;
          break;
        }
      }
      const Vec2 c = random_point_in_region(zone_rng, city.regions[i]);
      const double w = zone_rng.uniform(80.0, 400.0);
      const double h = zone_rng.uniform(80.0, 400.0);
      LandUseZone zone;
      zone.type = type;
      zone.polygon = {{c.x - w / 2, c.y - h / 2},
                      {c.x + w / 2, c.y - h / 2},
                      {c.x + w / 2, c.y + h / 2},
                      {c.x - w / 2, c.y + h / 2}};
      city.zones.push_back(std::move(zone));
    }
  }

  // street grid with jitter, plus a couple of diagonals
  Rng road_rng = Rng::substream(seed, "synth-roads");
  for (double y = -half + params.road_spacing / 2; y < half; y += params.road_spacing) {
    const double jitter = road_rng.uniform(-40.0, 40.0);
    city.roads.push_back({{-half, y + jitter}, {half, y + jitter}});
  }
  for (double x = -half + params.road_spacing / 2; x < half; x += params.road_spacing) {
    const double jitter = road_rng.uniform(-40.0, 40.0);
    city.roads.push_back({{x + jitter, -half}, {x + jitter, half}});
  }
  city.roads.push_back({{-half, -half}, {half, half}});
  city.roads.push_back({{-half, half}, {half, -half}});

  // targets from overlap-weighted cell-to-region feature aggregates
  const HexGrid grid = build_hex_grid(city.bbox, params.edge_length);
  const Eigen::MatrixXi poi_counts = bin_pois(city.pois, grid);
  const Eigen::MatrixXi lu_counts = bin_landuse(city.zones, grid);
  const OverlapMap overlap = build_overlap_map(city.regions, grid);

  const auto n = static_cast<Eigen::Index>(city.regions.size());
  const int fdim = kPoiCategories + kLandUseTypes;
  Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(n, fdim);
  for (const auto& [rid, cells] : overlap.entries) {
    for (const auto& [cid, coeff] : cells) {
      agg.row(rid).head(kPoiCategories) +=
          coeff * poi_counts.row(cid).cast<double>();
      agg.row(rid).tail(kLandUseTypes) += coeff * lu_counts.row(cid).cast<double>();
    }
  }

  Rng target_rng = Rng::substream(seed, "synth-targets");
  for (const std::string& task_name : params.tasks) {
    SynthCoefficients coeff;
    coeff.task_name = task_name;
    coeff.linear = Eigen::VectorXd(fdim);
    for (int k = 0; k < fdim; ++k) coeff.linear(k) = target_rng.normal();

    Eigen::VectorXd linear_part = agg * coeff.linear;
    Eigen::VectorXd total_poi = agg.leftCols(kPoiCategories).rowwise().sum();
    Eigen::VectorXd nonlinear_part(n);
    for (Eigen::Index i = 0; i < n; ++i)
      nonlinear_part(i) = std::log1p(total_poi(i));

    const double lin_sd = std::sqrt(
        (linear_part.array() - linear_part.mean()).square().sum() / std::max<double>(1, n - 1));
    const double nl_sd = std::sqrt(
        (nonlinear_part.array() - nonlinear_part.mean()).square().sum() / std::max<double>(1, n - 1));
    const double nl_gain =
        nl_sd > 0.0 ? params.nonlinear_scale * lin_sd / nl_sd : 0.0;
    coeff.nonlinear = nl_gain;

    Eigen::VectorXd y = linear_part + nl_gain * nonlinear_part;
    const double sig_sd = std::sqrt(
        (y.array() - y.mean()).square().sum() / std::max<double>(1, n - 1));
    coeff.noise_sigma = params.noise_rel * sig_sd;
    for (Eigen::Index i = 0; i < n; ++i)
      y(i) += coeff.noise_sigma * target_rng.normal();

    TaskDataset task;
    task.task_name = task_name;
    task.targets = std::move(y);
    city.tasks.push_back(std::move(task));
    city.coefficients.push_back(std::move(coeff));
  }
  return city;
}

void save_synth_coefficients(const std::vector<SynthCoefficients>& coeffs,
                             const std::string& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : coeffs) {
    nlohmann::json e;
    e["task"] = c.task_name;
    e["linear"] = std::vector<double>(c.linear.data(), c.linear.data() + c.linear.size());
    e["nonlinear"] = c.nonlinear;
    e["noise_sigma"] = c.noise_sigma;
    j.push_back(std::move(e));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace flexireg
