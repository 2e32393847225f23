#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flexireg/geometry.hpp"

namespace flexireg {

// One polygon with optional holes (GeoJSON Polygon semantics).
struct PolygonPart {
  Ring outer;
  std::vector<Ring> holes;
  double area() const;
};

// Simple polygon or multipolygon in planar meters. Merged regions keep the
// constituent parts rather than computing a boolean union; the parts are
// disjoint except along shared boundaries, so areas and clipped areas add.
struct Region {
  std::int64_t id = -1;
  std::vector<PolygonPart> parts;
  std::vector<std::int64_t> member_ids;  // input regions this one was merged from
  double area() const;
  BBox bbox() const;
};

using RegionSet = std::vector<Region>;

// Area of region INTERSECT convex CCW ring (hexagon/square cell).
double region_intersection_area(const Region& region, const Ring& convex_ccw);

// Recursive random merging with neighboring regions until exactly
// target_count remain. Deterministic for a fixed seed. Throws with the
// connected-component breakdown if the target is unreachable.
RegionSet merge_regions(const RegionSet& regions, std::size_t target_count,
                        std::uint64_t seed);

// Boundary-sharing adjacency (segments overlapping collinearly with
// positive shared length, tolerance for floating-point boundaries).
std::vector<std::vector<std::size_t>> region_adjacency(const RegionSet& regions);

// GeoJSON FeatureCollection I/O. Files written by this project carry
// "crs": "planar-meters" and are read back without projection; WGS84
// lon/lat inputs are projected to a local equirectangular frame anchored
// at the dataset bbox centroid.
RegionSet read_regions_geojson(const std::string& path);
void write_regions_geojson(const RegionSet& regions, const std::string& path);

}  // namespace flexireg
