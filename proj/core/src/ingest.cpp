#include "flexireg/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

#include "flexireg/rng.hpp"

namespace flexireg {

const std::array<std::string, kPoiCategories>& poi_category_names() {
  static const std::array<std::string, kPoiCategories> names = {
      "educational institutions",
      "commercial and industrial properties",
      "accommodation",
      "cultural and recreational venues",
      "healthcare and medical facilities",
      "entertainment venues",
      "places of worship",
      "food and drink establishments",
      "parking facilities",
      "transportation and transit facilities",
      "residential properties",
      "camping and outdoor recreation sites",
      "sports and recreation facilities",
      "financial services",
      "others",
  };
  return names;
}

const std::array<std::string, kLandUseTypes>& landuse_type_names() {
  static const std::array<std::string, kLandUseTypes> names = {
      "grass", "park", "cemetery", "forest", "scrub", "meadow", "farmland",
      "industrial", "heath", "retail", "military", "nature reserve",
      "residential", "commercial", "orchard", "farmyard", "allotments",
      "recreation ground", "vineyard", "quarry",
  };
  return names;
}

int poi_category_index(const std::string& name) {
  const auto& names = poi_category_names();
  for (int i = 0; i < kPoiCategories; ++i)
    if (names[static_cast<std::size_t>(i)] == name) return i;
  return kPoiCategories - 1;  // "others"
}

int landuse_type_index(const std::string& name) {
  const auto& names = landuse_type_names();
  for (int i = 0; i < kLandUseTypes; ++i)
    if (names[static_cast<std::size_t>(i)] == name) return i;
  return -1;
}

namespace {

// Lowest-id cell containing the point, or -1.
std::int64_t locate_cell(const Vec2& p, const HexGrid& grid,
                         const std::vector<BBox>& cell_boxes) {
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    if (!cell_boxes[i].contains(p)) continue;
    if (point_in_ring(p, grid.cells[i].polygon)) return grid.cells[i].id;
  }
  return -1;
}

std::vector<BBox> cell_bboxes(const HexGrid& grid) {
  std::vector<BBox> boxes;
  boxes.reserve(grid.cells.size());
  for (const auto& c : grid.cells) boxes.push_back(ring_bbox(c.polygon));
  return boxes;
}

}  // namespace

Eigen::MatrixXi bin_pois(const std::vector<PoiRecord>& pois, const HexGrid& grid,
                         BinReport* report) {
  const auto m = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(m, kPoiCategories);
  const auto boxes = cell_bboxes(grid);
  BinReport rep;
  for (const PoiRecord& poi : pois) {
    if (poi.category < 0 || poi.category >= kPoiCategories) {
      ++rep.rejected;
      continue;
    }
    const std::int64_t cid = locate_cell(poi.location, grid, boxes);
    if (cid < 0) {
      ++rep.spilled;
      continue;
    }
    ++counts(static_cast<Eigen::Index>(cid), poi.category);
  }
  if (report) *report = rep;
  return counts;
}

Eigen::MatrixXi bin_landuse(const std::vector<LandUseZone>& zones, const HexGrid& grid,
                            BinReport* report) {
  const auto m = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(m, kLandUseTypes);
  BinReport rep;
  for (const LandUseZone& zone : zones) {
    if (zone.type < 0 || zone.type >= kLandUseTypes || zone.polygon.size() < 3 ||
        ring_area(zone.polygon) <= 0.0) {
      ++rep.rejected;
      continue;
    }
    const BBox zb = ring_bbox(zone.polygon);
    bool touched = false;
    for (const GridCell& cell : grid.cells) {
      const BBox cb = ring_bbox(cell.polygon);
      if (cb.max_x < zb.min_x || cb.min_x > zb.max_x || cb.max_y < zb.min_y ||
          cb.min_y > zb.max_y)
        continue;
      if (intersection_area_convex(zone.polygon, cell.polygon) > 0.0) {
        ++counts(static_cast<Eigen::Index>(cell.id), zone.type);
        touched = true;
      }
    }
    if (!touched) ++rep.spilled;  // zone entirely outside the grid
  }
  if (report) *report = rep;
  return counts;
}

std::vector<std::vector<StreetViewPoint>> sample_streetview_points(
    const std::vector<Polyline>& roads, const HexGrid& grid, std::uint64_t seed,
    StreetViewSampleReport* report) {
  constexpr double kInterval = 100.0;
  constexpr double kDedupDist = 20.0;
  constexpr std::size_t kMinPerCell = 5;
  static constexpr int kHeadings[4] = {0, 90, 180, 270};

  StreetViewSampleReport rep;
  const auto boxes = cell_bboxes(grid);

  // interval sampling along each polyline
  std::vector<Vec2> raw;
  for (const Polyline& road : roads) {
    if (road.size() < 2) continue;
    double total = 0.0;
    std::vector<double> cum = {0.0};
    for (std::size_t i = 1; i < road.size(); ++i) {
      total += (road[i] - road[i - 1]).norm();
      cum.push_back(total);
    }
    for (double t = 0.0; t <= total + 1e-9; t += kInterval) {
      const double tt = std::min(t, total);
      auto it = std::upper_bound(cum.begin(), cum.end(), tt);
      std::size_t seg = std::min(road.size() - 1,
                                 static_cast<std::size_t>(it - cum.begin()));
      if (seg == 0) seg = 1;
      const double seg_len = cum[seg] - cum[seg - 1];
      const double f = seg_len > 0.0 ? (tt - cum[seg - 1]) / seg_len : 0.0;
      raw.push_back(road[seg - 1] + (road[seg] - road[seg - 1]) * f);
    }
  }

  // greedy dedup: keep a point only if >= 20 m from every kept point
  std::vector<Vec2> kept;
  for (const Vec2& p : raw) {
    bool ok = true;
    for (const Vec2& q : kept) {
      if ((p - q).norm() < kDedupDist) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(p);
  }
  rep.road_points_kept = kept.size();
  rep.empty_network_fallback = kept.empty();

  std::vector<std::vector<Vec2>> per_cell(grid.size());
  for (const Vec2& p : kept) {
    const std::int64_t cid = locate_cell(p, grid, boxes);
    if (cid >= 0) per_cell[static_cast<std::size_t>(cid)].push_back(p);
  }

  // top sparse cells up with uniform-random interior points
  Rng rng = Rng::substream(seed, "streetview-sampling");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Ring& hex = grid.cells[i].polygon;
    const BBox hb = ring_bbox(hex);
    while (per_cell[i].size() < kMinPerCell) {
      const Vec2 p{rng.uniform(hb.min_x, hb.max_x), rng.uniform(hb.min_y, hb.max_y)};
      if (!point_in_ring(p, hex)) continue;
      per_cell[i].push_back(p);
      ++rep.random_points_added;
    }
  }

  std::vector<std::vector<StreetViewPoint>> out(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (const Vec2& p : per_cell[i]) {
      for (int h : kHeadings) {
        StreetViewPoint sp;
        sp.location = p;
        sp.heading = h;
        std::ostringstream os;
        os.precision(10);
        os << "sv:cell=" << grid.cells[i].id << ";x=" << p.x << ";y=" << p.y
           << ";h=" << h;
        sp.token = os.str();
        out[i].push_back(std::move(sp));
      }
    }
  }
  if (report) *report = rep;
  return out;
}

std::string compose_cell_description(const GridCell& cell,
                                     const Eigen::VectorXi& poi_row,
                                     const std::string& address,
                                     const DescriptionConfig& cfg) {
  const std::string instruction =
      cfg.instruction == InstructionVariant::kRephrased
          ? "Summarize the urban characteristics of the following grid cell."
          : "Describe the urban function of this grid cell for a downstream "
            "prediction task.";

  std::ostringstream body;
  const double area = ring_area(cell.polygon);
  body << "This is a " << (cell.polygon.size() == 6 ? "hexagonal" : "square")
       << " grid cell with edge length " << std::llround(cell.edge_length)
       << " meters and area " << std::llround(area) << " square meters. ";
  body << "It is located at " << (address.empty() ? "an unknown address" : address)
       << ". ";

  std::vector<std::pair<int, int>> nonzero;
  for (int k = 0; k < poi_row.size(); ++k)
    if (poi_row(k) > 0) nonzero.emplace_back(k, poi_row(k));
  if (nonzero.empty()) {
    body << "The cell has no recorded POIs.";
  } else {
    body << "The cell contains";
    for (std::size_t i = 0; i < nonzero.size(); ++i) {
      body << (i == 0 ? " " : (i + 1 == nonzero.size() ? " and " : ", "))
           << nonzero[i].second << " "
           << poi_category_names()[static_cast<std::size_t>(nonzero[i].first)];
    }
    body << ".";
  }

  std::string text;
  switch (cfg.instruction) {
    case InstructionVariant::kRemoved:
      text = body.str();
      break;
    case InstructionVariant::kAtEnd:
      text = body.str() + " " + instruction;
      break;
    default:
      text = instruction + " " + body.str();
  }

  // truncate to max_tokens whitespace tokens
  std::istringstream is(text);
  std::ostringstream os;
  std::string tok;
  int count = 0;
  while (is >> tok && count < cfg.max_tokens) {
    if (count) os << " ";
    os << tok;
    ++count;
  }
  return os.str();
}

std::vector<PoiRecord> load_pois_csv(const std::string& path, const Projection* proj) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<PoiRecord> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.find("lon") != std::string::npos) {
      first = false;
      continue;  // header
    }
    first = false;
    std::istringstream is(line);
    std::string lon_s, lat_s, cat_s;
    if (!std::getline(is, lon_s, ',') || !std::getline(is, lat_s, ',') ||
        !std::getline(is, cat_s, ','))
      throw std::runtime_error(path + ": expected lon,lat,category");
    PoiRecord r;
    const double lon = std::stod(lon_s);
    const double lat = std::stod(lat_s);
    r.location = proj ? proj->to_planar(lon, lat) : Vec2{lon, lat};
    try {
      r.category = std::stoi(cat_s);
    } catch (const std::exception&) {
      r.category = poi_category_index(cat_s);
    }
    out.push_back(r);
  }
  return out;
}

std::vector<LandUseZone> load_landuse_geojson(const std::string& path,
                                              const Projection* proj) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  std::vector<LandUseZone> out;
  for (const auto& f : j["features"]) {
    LandUseZone z;
    const auto& props = f["properties"];
    if (props["type"].is_number()) {
      z.type = props["type"].get<int>();
    } else {
      z.type = landuse_type_index(props["type"].get<std::string>());
    }
    const auto& geom = f["geometry"];
    if (geom["type"] != "Polygon") continue;
    for (const auto& pt : geom["coordinates"][0]) {
      const double x = pt[0].get<double>();
      const double y = pt[1].get<double>();
      z.polygon.push_back(proj ? proj->to_planar(x, y) : Vec2{x, y});
    }
    if (z.polygon.size() > 1 &&
        std::fabs(z.polygon.front().x - z.polygon.back().x) < 1e-12 &&
        std::fabs(z.polygon.front().y - z.polygon.back().y) < 1e-12)
      z.polygon.pop_back();
    out.push_back(std::move(z));
  }
  return out;
}

std::vector<Polyline> load_roads_geojson(const std::string& path, const Projection* proj) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  std::vector<Polyline> out;
  for (const auto& f : j["features"]) {
    const auto& geom = f["geometry"];
    if (geom["type"] != "LineString") continue;
    Polyline line;
    for (const auto& pt : geom["coordinates"]) {
      const double x = pt[0].get<double>();
      const double y = pt[1].get<double>();
      line.push_back(proj ? proj->to_planar(x, y) : Vec2{x, y});
    }
    out.push_back(std::move(line));
  }
  return out;
}

TaskDataset load_task_csv(const std::string& path, const std::string& task_name,
                          std::size_t num_regions) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  TaskDataset task;
  task.task_name = task_name;
  task.targets = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_regions));
  Eigen::VectorXi seen = Eigen::VectorXi::Zero(static_cast<Eigen::Index>(num_regions));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.find("region_id") != std::string::npos) continue;
    std::istringstream is(line);
    std::string id_s, val_s;
    if (!std::getline(is, id_s, ',') || !std::getline(is, val_s, ','))
      throw std::runtime_error(path + ": expected region_id,value");
    const auto rid = std::stoll(id_s);
    if (rid < 0 || rid >= static_cast<long long>(num_regions))
      throw std::runtime_error(path + ": region id out of range: " + id_s);
    const double v = std::stod(val_s);
    if (!std::isfinite(v)) throw std::runtime_error(path + ": non-finite target");
    task.targets(static_cast<Eigen::Index>(rid)) = v;
    seen(static_cast<Eigen::Index>(rid)) = 1;
  }
  if (seen.sum() != static_cast<int>(num_regions))
    throw std::runtime_error(path + ": missing targets for some regions");
  return task;
}

void save_task_csv(const TaskDataset& task, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "region_id,value\n";
  for (Eigen::Index i = 0; i < task.targets.size(); ++i)
    out << i << "," << task.targets(i) << "\n";
}

}  // namespace flexireg
