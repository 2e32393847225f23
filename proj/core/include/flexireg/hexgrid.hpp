#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "flexireg/geometry.hpp"

namespace flexireg {

struct GridCell {
  std::int64_t id = -1;
  Vec2 center;
  Ring polygon;        // 6 vertices (pointy-top), CCW
  double edge_length = 0.0;
  int axial_q = 0;     // axial column
  int axial_r = 0;     // axial row
};

// Neighbor slots in fixed angular order (center-to-center bearing).
enum NeighborDir { kEast = 0, kNorthEast, kNorthWest, kWest, kSouthWest, kSouthEast };

struct HexGrid {
  std::vector<GridCell> cells;
  // cell id -> neighbor ids in NeighborDir order, -1 where missing
  std::vector<std::array<std::int64_t, 6>> neighbors;
  BBox bbox;
  double edge_length = 0.0;

  std::size_t size() const { return cells.size(); }
  bool adjacent(std::int64_t a, std::int64_t b) const;
};

// Pointy-top axial tiling covering the bbox; every hexagon intersecting the
// bbox is included, ids assigned row-major (row, then column).
HexGrid build_hex_grid(const BBox& bbox, double edge_length);

// Square-grid variant used by grid-design experiments; cells get 4 edge
// neighbors mapped to slots {E, NE(=N), W, SW(=S)} with NW/SE set to -1.
HexGrid build_square_grid(const BBox& bbox, double edge_length);

// m x 6 matrix of neighbor ids (-1 padding), rows in cell-id order.
Eigen::MatrixXi neighbor_vector(const HexGrid& grid);

Ring hexagon_ring(const Vec2& center, double edge_length);

}  // namespace flexireg
