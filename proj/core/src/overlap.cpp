#include "flexireg/overlap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace flexireg {

double overlap_coefficient(const Region& region, const GridCell& cell) {
  if (region.area() <= 0.0)
    throw std::invalid_argument("overlap_coefficient: degenerate region polygon");
  const double cell_area = ring_area(cell.polygon);
  const double inter = region_intersection_area(region, cell.polygon);
  return std::clamp(inter / cell_area, 0.0, 1.0);
}

OverlapMap build_overlap_map(const RegionSet& regions, const HexGrid& grid) {
  OverlapMap map;
  const double cell_area = grid.cells.empty() ? 0.0 : ring_area(grid.cells[0].polygon);
  const double min_area = 1e-9 * cell_area;
  for (const Region& region : regions) {
    if (region.area() <= 0.0) {
      map.errors.emplace_back(region.id, "degenerate region polygon");
      continue;
    }
    const BBox rb = region.bbox();
    if (rb.max_x < grid.bbox.min_x - grid.edge_length * 2 ||
        rb.min_x > grid.bbox.max_x + grid.edge_length * 2 ||
        rb.max_y < grid.bbox.min_y - grid.edge_length * 2 ||
        rb.min_y > grid.bbox.max_y + grid.edge_length * 2) {
      map.errors.emplace_back(region.id, "region outside grid bbox");
      continue;
    }
    std::vector<std::pair<std::int64_t, double>> list;
    for (const GridCell& cell : grid.cells) {
      // cheap bbox reject before clipping
      const BBox cb = ring_bbox(cell.polygon);
      if (cb.max_x < rb.min_x || cb.min_x > rb.max_x || cb.max_y < rb.min_y ||
          cb.min_y > rb.max_y)
        continue;
      const double inter = region_intersection_area(region, cell.polygon);
      if (inter > min_area)
        list.emplace_back(cell.id, std::clamp(inter / cell_area, 0.0, 1.0));
    }
    map.entries[region.id] = std::move(list);
  }
  return map;
}

void write_overlap_map(const OverlapMap& map, const std::string& path) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [rid, list] : map.entries) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [cid, coeff] : list) arr.push_back({cid, coeff});
    j[std::to_string(rid)] = std::move(arr);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump() << "\n";
}

OverlapMap read_overlap_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  OverlapMap map;
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::vector<std::pair<std::int64_t, double>> list;
    for (const auto& pair : it.value())
      list.emplace_back(pair[0].get<std::int64_t>(), pair[1].get<double>());
    map.entries[std::stoll(it.key())] = std::move(list);
  }
  return map;
}

}  // namespace flexireg
