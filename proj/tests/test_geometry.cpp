#include <cmath>

#include "doctest.h"
#include "flexireg/geometry.hpp"
#include "flexireg/hexgrid.hpp"
#include "flexireg/rng.hpp"

using namespace flexireg;

namespace {

Ring square(double x0, double y0, double side) {
  return {{x0, y0}, {x0 + side, y0}, {x0 + side, y0 + side}, {x0, y0 + side}};
}

// Monte-Carlo area of subject INTERSECT clip over a bounding box.
double mc_intersection_area(const Ring& subject, const Ring& clip, int samples,
                            Rng& rng) {
  BBox b = ring_bbox(subject);
  const BBox cb = ring_bbox(clip);
  b.min_x = std::min(b.min_x, cb.min_x);
  b.min_y = std::min(b.min_y, cb.min_y);
  b.max_x = std::max(b.max_x, cb.max_x);
  b.max_y = std::max(b.max_y, cb.max_y);
  int hits = 0;
  for (int i = 0; i < samples; ++i) {
    const Vec2 p{rng.uniform(b.min_x, b.max_x), rng.uniform(b.min_y, b.max_y)};
    if (point_in_ring(p, subject) && point_in_ring(p, clip)) ++hits;
  }
  return b.width() * b.height() * hits / static_cast<double>(samples);
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("signed area orientation and magnitude") {
  const Ring ccw = square(0, 0, 2);
  Ring cw = ccw;
  std::reverse(cw.begin(), cw.end());
  CHECK(signed_area(ccw) == doctest::Approx(4.0));
  CHECK(signed_area(cw) == doctest::Approx(-4.0));
  CHECK(ring_area(cw) == doctest::Approx(4.0));
  // triangle with base 3, height 4
  const Ring tri{{0, 0}, {3, 0}, {0, 4}};
  CHECK(ring_area(tri) == doctest::Approx(6.0));
}

TEST_CASE("hexagon ring area matches the closed form") {
  // area of a regular hexagon with edge e is (3*sqrt(3)/2) e^2
  for (double e : {1.0, 37.5, 200.0}) {
    const Ring h = hexagon_ring({12.0, -5.0}, e);
    REQUIRE(h.size() == 6);
    CHECK(ring_area(h) ==
          doctest::Approx(1.5 * std::sqrt(3.0) * e * e).epsilon(1e-12));
  }
}

TEST_CASE("point in ring including boundary") {
  const Ring sq = square(0, 0, 1);
  CHECK(point_in_ring({0.5, 0.5}, sq));
  CHECK(point_in_ring({0.0, 0.5}, sq));   // edge
  CHECK(point_in_ring({0.0, 0.0}, sq));   // vertex
  CHECK_FALSE(point_in_ring({1.5, 0.5}, sq));
  CHECK_FALSE(point_in_ring({-1e-9, 0.5}, sq));
  // concave L-shape: the notch is outside
  const Ring ell{{0, 0}, {2, 0}, {2, 1}, {1, 1}, {1, 2}, {0, 2}};
  CHECK(point_in_ring({0.5, 1.5}, ell));
  CHECK_FALSE(point_in_ring({1.5, 1.5}, ell));
}

TEST_CASE("half-plane clip keeps the left side of the directed edge") {
  const Ring sq = square(0, 0, 1);
  // upward edge at x = 0.4 keeps x <= 0.4
  const Ring left = clip_halfplane(sq, {0.4, -1.0}, {0.4, 2.0});
  CHECK(ring_area(left) == doctest::Approx(0.4));
  for (const Vec2& p : left) CHECK(p.x <= 0.4 + 1e-12);
  // downward edge keeps x >= 0.4
  const Ring right = clip_halfplane(sq, {0.4, 2.0}, {0.4, -1.0});
  CHECK(ring_area(right) == doctest::Approx(0.6));
  // clip away everything: upward edge at x = -1 keeps x <= -1
  CHECK(clip_halfplane(sq, {-1.0, -5.0}, {-1.0, 5.0}).size() < 3);
}

TEST_CASE("convex clip of overlapping squares") {
  const Ring a = square(0, 0, 2);
  const Ring b = square(1, 1, 2);
  const Ring inter = clip_convex(a, b);
  CHECK(ring_area(inter) == doctest::Approx(1.0));
}

TEST_CASE("triangulation preserves area") {
  const Ring convex = hexagon_ring({0, 0}, 3.0);
  const Ring concave{{0, 0}, {4, 0}, {4, 3}, {2, 1}, {0, 3}};
  for (const Ring* r : {&convex, &concave}) {
    double total = 0.0;
    for (const auto& tri : triangulate(*r))
      total += ring_area({tri[0], tri[1], tri[2]});
    CHECK(total == doctest::Approx(ring_area(*r)).epsilon(1e-10));
  }
}

TEST_CASE("intersection area: exact cases") {
  const Ring hexa = hexagon_ring({0, 0}, 1.0);
  // hexagon fully inside a big square: full hex area
  CHECK(intersection_area_convex(hexa, square(-5, -5, 10)) ==
        doctest::Approx(ring_area(hexa)).epsilon(1e-12));
  // disjoint
  CHECK(intersection_area_convex(hexa, square(10, 10, 1)) ==
        doctest::Approx(0.0));
  // concave subject vs square: L-shape fully inside
  const Ring ell{{0, 0}, {2, 0}, {2, 1}, {1, 1}, {1, 2}, {0, 2}};
  CHECK(intersection_area_convex(ell, square(-1, -1, 5)) ==
        doctest::Approx(3.0).epsilon(1e-12));
  // clip box [-1,1]^2 keeps exactly the unit square corner of the L
  CHECK(intersection_area_convex(ell, square(-1, -1, 2)) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("intersection area agrees with Monte Carlo on random pairs") {
  Rng rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    // random concave-ish quad (star-shaped around its centroid) vs hexagon
    Ring subject;
    const Vec2 c{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    for (int k = 0; k < 5; ++k) {
      const double ang = 2 * M_PI * k / 5.0 + rng.uniform(0.0, 0.3);
      const double rad = rng.uniform(0.5, 2.0);
      subject.push_back({c.x + rad * std::cos(ang), c.y + rad * std::sin(ang)});
    }
    const Ring hexa = hexagon_ring({rng.uniform(-1, 1), rng.uniform(-1, 1)},
                                   rng.uniform(0.5, 1.5));
    const double exact = intersection_area_convex(subject, hexa);
    const double approx = mc_intersection_area(subject, hexa, 200000, rng);
    CHECK(std::abs(exact - approx) < 0.08);  // MC noise bound
  }
}

TEST_CASE("equirectangular projection scales") {
  const Projection proj{10.0, 45.0};
  // one degree of latitude is ~111.19 km on the 6371 km sphere
  const Vec2 north = proj.to_planar(10.0, 46.0);
  CHECK(north.x == doctest::Approx(0.0));
  CHECK(north.y == doctest::Approx(2 * M_PI * 6371000.0 / 360.0).epsilon(1e-9));
  // longitude shrinks by cos(lat0)
  const Vec2 east = proj.to_planar(11.0, 45.0);
  CHECK(east.y == doctest::Approx(0.0));
  CHECK(east.x ==
        doctest::Approx(2 * M_PI * 6371000.0 / 360.0 * std::cos(45.0 * M_PI / 180.0))
            .epsilon(1e-9));
  CHECK(proj.to_planar(10.0, 45.0).norm() == doctest::Approx(0.0));
}

}  // TEST_SUITE
