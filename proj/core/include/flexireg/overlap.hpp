#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flexireg/hexgrid.hpp"
#include "flexireg/regions.hpp"

namespace flexireg {

// Per-region list of (cell id, Area(r INTERSECT c) / Area(c)).
struct OverlapMap {
  std::map<std::int64_t, std::vector<std::pair<std::int64_t, double>>> entries;
  // regions whose polygons fell outside the grid or failed to clip
  std::vector<std::pair<std::int64_t, std::string>> errors;
};

// Area(region INTERSECT cell) / Area(cell), in [0, 1].
double overlap_coefficient(const Region& region, const GridCell& cell);

// Every cell with intersection area above 1e-9 * cell_area appears exactly
// once per region. A region outside the grid bbox yields an error record,
// not an exception.
OverlapMap build_overlap_map(const RegionSet& regions, const HexGrid& grid);

// JSON {region_id: [[cell_id, coeff], ...]}
void write_overlap_map(const OverlapMap& map, const std::string& path);
OverlapMap read_overlap_map(const std::string& path);

}  // namespace flexireg
