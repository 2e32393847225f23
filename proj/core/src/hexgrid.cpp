#include "flexireg/hexgrid.hpp"

#include <cmath>
#include <stdexcept>

namespace flexireg {

namespace {
constexpr double kSqrt3 = 1.7320508075688772;

Vec2 axial_center(int q, int r, double R) {
  return {kSqrt3 * R * (q + 0.5 * r), 1.5 * R * r};
}
}  // namespace

Ring hexagon_ring(const Vec2& c, double R) {
  Ring ring;
  ring.reserve(6);
  for (int k = 0; k < 6; ++k) {
    const double ang = M_PI / 6.0 + k * M_PI / 3.0;  // pointy-top, CCW
    ring.push_back({c.x + R * std::cos(ang), c.y + R * std::sin(ang)});
  }
  return ring;
}

bool HexGrid::adjacent(std::int64_t a, std::int64_t b) const {
  if (a < 0 || b < 0 || a >= static_cast<std::int64_t>(size())) return false;
  for (std::int64_t n : neighbors[static_cast<std::size_t>(a)])
    if (n == b) return true;
  return false;
}

HexGrid build_hex_grid(const BBox& bbox, double R) {
  if (R <= 0.0) throw std::invalid_argument("build_hex_grid: edge_length must be positive");
  if (bbox.width() <= 0.0 || bbox.height() <= 0.0)
    throw std::invalid_argument("build_hex_grid: degenerate bbox");

  HexGrid grid;
  grid.bbox = bbox;
  grid.edge_length = R;
  const Ring bbox_ring = bbox.to_ring();

  const int r_lo = static_cast<int>(std::floor((bbox.min_y - R) / (1.5 * R))) - 1;
  const int r_hi = static_cast<int>(std::ceil((bbox.max_y + R) / (1.5 * R))) + 1;

  std::map<std::pair<int, int>, std::int64_t> axial_to_id;
  for (int r = r_lo; r <= r_hi; ++r) {
    const double half_w = kSqrt3 * R / 2.0;
    const int q_lo =
        static_cast<int>(std::floor((bbox.min_x - half_w) / (kSqrt3 * R) - 0.5 * r)) - 1;
    const int q_hi =
        static_cast<int>(std::ceil((bbox.max_x + half_w) / (kSqrt3 * R) - 0.5 * r)) + 1;
    for (int q = q_lo; q <= q_hi; ++q) {
      const Vec2 c = axial_center(q, r, R);
      Ring hex = hexagon_ring(c, R);
      Ring cut = clip_convex(hex, bbox_ring);
      if (cut.size() < 3 || ring_area(cut) <= 0.0) continue;
      GridCell cell;
      cell.id = static_cast<std::int64_t>(grid.cells.size());
      cell.center = c;
      cell.polygon = std::move(hex);
      cell.edge_length = R;
      cell.axial_q = q;
      cell.axial_r = r;
      axial_to_id[{r, q}] = cell.id;
      grid.cells.push_back(std::move(cell));
    }
  }

  // axial offsets in NeighborDir order: E, NE, NW, W, SW, SE
  static constexpr int dq[6] = {1, 0, -1, -1, 0, 1};
  static constexpr int dr[6] = {0, 1, 1, 0, -1, -1};
  grid.neighbors.resize(grid.cells.size());
  for (const GridCell& cell : grid.cells) {
    auto& slots = grid.neighbors[static_cast<std::size_t>(cell.id)];
    for (int k = 0; k < 6; ++k) {
      auto it = axial_to_id.find({cell.axial_r + dr[k], cell.axial_q + dq[k]});
      slots[static_cast<std::size_t>(k)] = it == axial_to_id.end() ? -1 : it->second;
    }
  }
  return grid;
}

HexGrid build_square_grid(const BBox& bbox, double side) {
  if (side <= 0.0) throw std::invalid_argument("build_square_grid: edge_length must be positive");
  if (bbox.width() <= 0.0 || bbox.height() <= 0.0)
    throw std::invalid_argument("build_square_grid: degenerate bbox");

  HexGrid grid;
  grid.bbox = bbox;
  grid.edge_length = side;
  const int rows = static_cast<int>(std::ceil(bbox.height() / side));
  const int cols = static_cast<int>(std::ceil(bbox.width() / side));
  auto id_of = [cols](int r, int c) { return static_cast<std::int64_t>(r) * cols + c; };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      GridCell cell;
      cell.id = id_of(r, c);
      const double x0 = bbox.min_x + c * side;
      const double y0 = bbox.min_y + r * side;
      cell.polygon = {{x0, y0}, {x0 + side, y0}, {x0 + side, y0 + side}, {x0, y0 + side}};
      cell.center = {x0 + side / 2.0, y0 + side / 2.0};
      cell.edge_length = side;
      cell.axial_q = c;
      cell.axial_r = r;
      grid.cells.push_back(std::move(cell));
    }
  }
  grid.neighbors.resize(grid.cells.size());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      auto& slots = grid.neighbors[static_cast<std::size_t>(id_of(r, c))];
      slots.fill(-1);
      if (c + 1 < cols) slots[kEast] = id_of(r, c + 1);
      if (r + 1 < rows) slots[kNorthEast] = id_of(r + 1, c);  // N
      if (c - 1 >= 0) slots[kWest] = id_of(r, c - 1);
      if (r - 1 >= 0) slots[kSouthWest] = id_of(r - 1, c);    // S
    }
  }
  return grid;
}

Eigen::MatrixXi neighbor_vector(const HexGrid& grid) {
  const auto m = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXi nv(m, 6);
  for (Eigen::Index i = 0; i < m; ++i)
    for (int k = 0; k < 6; ++k)
      nv(i, k) = static_cast<int>(grid.neighbors[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
  return nv;
}

}  // namespace flexireg
