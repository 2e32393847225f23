#pragma once

#include <array>
#include <vector>

namespace flexireg {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}
  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const;
};

// Single closed ring, vertices in order, not repeated at the end.
using Ring = std::vector<Vec2>;

struct BBox {
  double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
  bool contains(const Vec2& p) const {
    return p.x >= min_x && p.x <= max_x && p.y >= min_y && p.y <= max_y;
  }
  Ring to_ring() const;
};

// Signed area (positive for counter-clockwise rings).
double signed_area(const Ring& r);
double ring_area(const Ring& r);  // absolute

BBox ring_bbox(const Ring& r);

// Even-odd point-in-polygon; boundary points count as inside.
bool point_in_ring(const Vec2& p, const Ring& r);

// Clip a convex or concave subject ring against the half-plane
// {p : (p - a) x (b - a) <= 0}, i.e. keep the right side of a->b...
// Orientation convention: keeps points p with cross(b-a, p-a) >= 0
// (left of the directed edge a->b).
Ring clip_halfplane(const Ring& subject, const Vec2& a, const Vec2& b);

// Sutherland-Hodgman: clip subject against a convex clip ring (CCW).
// Subject must be convex for an exact result; use intersection_area for
// general simple polygons.
Ring clip_convex(const Ring& subject, const Ring& convex_clip_ccw);

// Ear-clipping triangulation of a simple ring (any orientation).
std::vector<std::array<Vec2, 3>> triangulate(const Ring& r);

// Area of (simple ring) INTERSECT (convex CCW ring), exact for
// piecewise-linear inputs: the subject is triangulated and each triangle
// is clipped by successive half-planes of the convex ring.
double intersection_area_convex(const Ring& subject, const Ring& convex_ccw);

// Equirectangular projection anchored at (lon0, lat0): lon/lat degrees to
// local planar meters.
struct Projection {
  double lon0 = 0, lat0 = 0;
  Vec2 to_planar(double lon, double lat) const;
};

}  // namespace flexireg
