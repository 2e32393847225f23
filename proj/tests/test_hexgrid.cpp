#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "flexireg/geometry.hpp"
#include "flexireg/hexgrid.hpp"

using namespace flexireg;

namespace {

// Independent count of pointy-top hexagons touching the bbox: scan a
// generous axial window and test each hexagon polygon for bbox overlap.
int brute_force_cell_count(const BBox& bbox, double e) {
  const double sqrt3 = std::sqrt(3.0);
  int count = 0;
  const int span = static_cast<int>(
      std::ceil(std::max(bbox.width(), bbox.height()) / e)) + 8;
  for (int r = -span; r <= span; ++r)
    for (int q = -span; q <= span; ++q) {
      const Vec2 c{sqrt3 * e * (q + 0.5 * r), 1.5 * e * r};
      const Ring hexa = hexagon_ring(c, e);
      const BBox hb = ring_bbox(hexa);
      const bool separated = hb.max_x < bbox.min_x || hb.min_x > bbox.max_x ||
                             hb.max_y < bbox.min_y || hb.min_y > bbox.max_y;
      if (separated) continue;
      if (intersection_area_convex(bbox.to_ring(), hexa) > 1e-9) ++count;
    }
  return count;
}

}  // namespace

TEST_SUITE("hexgrid") {

TEST_CASE("cell count matches an exhaustive axial enumeration") {
  for (const auto& [side, e] : std::vector<std::pair<double, double>>{
           {100.0, 30.0}, {500.0, 80.0}, {350.0, 200.0}}) {
    const BBox bbox{-side / 2, -side / 2, side / 2, side / 2};
    const HexGrid grid = build_hex_grid(bbox, e);
    CHECK(static_cast<int>(grid.size()) == brute_force_cell_count(bbox, e));
  }
}

TEST_CASE("cells are regular hexagons with the requested edge") {
  const HexGrid grid = build_hex_grid({-300, -300, 300, 300}, 100.0);
  for (const GridCell& cell : grid.cells) {
    REQUIRE(cell.polygon.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
      const Vec2 a = cell.polygon[i], b = cell.polygon[(i + 1) % 6];
      CHECK((b - a).norm() == doctest::Approx(100.0).epsilon(1e-12));
      CHECK((a - cell.center).norm() == doctest::Approx(100.0).epsilon(1e-12));
    }
    CHECK(signed_area(cell.polygon) > 0);  // CCW
  }
}

TEST_CASE("interior cells have 6 neighbors all at the same center distance") {
  const double e = 50.0;
  const HexGrid grid = build_hex_grid({-400, -400, 400, 400}, e);
  int interior = 0;
  for (const GridCell& cell : grid.cells) {
    const auto& nbrs = grid.neighbors[static_cast<std::size_t>(cell.id)];
    int present = 0;
    for (std::int64_t n : nbrs)
      if (n >= 0) ++present;
    if (present < 6) continue;  // boundary cell
    ++interior;
    for (std::int64_t n : nbrs) {
      const Vec2 nc = grid.cells[static_cast<std::size_t>(n)].center;
      CHECK((nc - cell.center).norm() ==
            doctest::Approx(std::sqrt(3.0) * e).epsilon(1e-12));
    }
  }
  CHECK(interior > 50);
}

TEST_CASE("neighbor relation is symmetric with opposite slots") {
  const HexGrid grid = build_hex_grid({-200, -200, 200, 200}, 60.0);
  for (const GridCell& cell : grid.cells)
    for (int s = 0; s < 6; ++s) {
      const std::int64_t n = grid.neighbors[static_cast<std::size_t>(cell.id)]
                                           [static_cast<std::size_t>(s)];
      if (n < 0) continue;
      // the reverse slot is offset by 3 (opposite bearing)
      CHECK(grid.neighbors[static_cast<std::size_t>(n)]
                          [static_cast<std::size_t>((s + 3) % 6)] == cell.id);
      CHECK(grid.adjacent(cell.id, n));
      CHECK(grid.adjacent(n, cell.id));
    }
  CHECK_FALSE(grid.adjacent(0, 0));
}

TEST_CASE("ids are dense and row-major") {
  const HexGrid grid = build_hex_grid({-150, -150, 150, 150}, 45.0);
  for (std::size_t i = 0; i < grid.size(); ++i)
    CHECK(grid.cells[i].id == static_cast<std::int64_t>(i));
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const GridCell& prev = grid.cells[i - 1];
    const GridCell& cur = grid.cells[i];
    const bool ordered = cur.axial_r > prev.axial_r ||
                         (cur.axial_r == prev.axial_r && cur.axial_q > prev.axial_q);
    CHECK(ordered);
  }
}

TEST_CASE("grid tiles the plane: interior bbox area is fully covered") {
  const BBox bbox{-130, -130, 130, 130};
  const HexGrid grid = build_hex_grid(bbox, 40.0);
  double covered = 0.0;
  for (const GridCell& cell : grid.cells)
    covered += intersection_area_convex(bbox.to_ring(), cell.polygon);
  CHECK(covered == doctest::Approx(bbox.width() * bbox.height()).epsilon(1e-9));
}

TEST_CASE("square grid has 4 neighbors in the documented slots") {
  const HexGrid grid = build_square_grid({-100, -100, 100, 100}, 50.0);
  for (const GridCell& cell : grid.cells) {
    REQUIRE(cell.polygon.size() == 4);
    CHECK(ring_area(cell.polygon) == doctest::Approx(2500.0));
    const auto& nbrs = grid.neighbors[static_cast<std::size_t>(cell.id)];
    CHECK(nbrs[kNorthWest] == -1);
    CHECK(nbrs[kSouthEast] == -1);
    for (int s : {kEast, kNorthEast, kWest, kSouthWest}) {
      const std::int64_t n = nbrs[static_cast<std::size_t>(s)];
      if (n < 0) continue;
      const Vec2 nc = grid.cells[static_cast<std::size_t>(n)].center;
      CHECK((nc - cell.center).norm() == doctest::Approx(50.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("neighbor_vector mirrors the neighbor table") {
  const HexGrid grid = build_hex_grid({-100, -100, 100, 100}, 60.0);
  const Eigen::MatrixXi nv = neighbor_vector(grid);
  REQUIRE(nv.rows() == static_cast<Eigen::Index>(grid.size()));
  REQUIRE(nv.cols() == 6);
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (int s = 0; s < 6; ++s)
      CHECK(nv(static_cast<Eigen::Index>(i), s) ==
            static_cast<int>(grid.neighbors[i][static_cast<std::size_t>(s)]));
}

}  // TEST_SUITE
