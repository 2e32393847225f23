#include "flexireg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace flexireg {

double Vec2::norm() const { return std::hypot(x, y); }

Ring BBox::to_ring() const {
  return {{min_x, min_y}, {max_x, min_y}, {max_x, max_y}, {min_x, max_y}};
}

double signed_area(const Ring& r) {
  double a = 0.0;
  const std::size_t n = r.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = r[i];
    const Vec2& q = r[(i + 1) % n];
    a += p.cross(q);
  }
  return 0.5 * a;
}

double ring_area(const Ring& r) { return std::fabs(signed_area(r)); }

BBox ring_bbox(const Ring& r) {
  if (r.empty()) return {};
  BBox b{r[0].x, r[0].y, r[0].x, r[0].y};
  for (const Vec2& p : r) {
    b.min_x = std::min(b.min_x, p.x);
    b.min_y = std::min(b.min_y, p.y);
    b.max_x = std::max(b.max_x, p.x);
    b.max_y = std::max(b.max_y, p.y);
  }
  return b;
}

bool point_in_ring(const Vec2& p, const Ring& r) {
  const std::size_t n = r.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = r[i];
    const Vec2& b = r[j];
    // on-edge check
    const Vec2 ab = b - a;
    const Vec2 ap = p - a;
    const double c = ab.cross(ap);
    if (c == 0.0 && ap.dot(p - b) <= 0.0) return true;
    if ((a.y > p.y) != (b.y > p.y)) {
      const double xint = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
      if (p.x < xint) inside = !inside;
    }
  }
  return inside;
}

Ring clip_halfplane(const Ring& subject, const Vec2& a, const Vec2& b) {
  Ring out;
  const std::size_t n = subject.size();
  if (n == 0) return out;
  const Vec2 dir = b - a;
  auto side = [&](const Vec2& p) { return dir.cross(p - a); };
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& cur = subject[i];
    const Vec2& nxt = subject[(i + 1) % n];
    const double sc = side(cur);
    const double sn = side(nxt);
    if (sc >= 0.0) out.push_back(cur);
    if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
      const double t = sc / (sc - sn);
      out.push_back(cur + (nxt - cur) * t);
    }
  }
  return out;
}

Ring clip_convex(const Ring& subject, const Ring& clip) {
  Ring cur = subject;
  const std::size_t n = clip.size();
  for (std::size_t i = 0; i < n && !cur.empty(); ++i)
    cur = clip_halfplane(cur, clip[i], clip[(i + 1) % n]);
  return cur;
}

std::vector<std::array<Vec2, 3>> triangulate(const Ring& input) {
  std::vector<std::array<Vec2, 3>> tris;
  if (input.size() < 3) return tris;
  Ring r = input;
  if (signed_area(r) < 0.0) std::reverse(r.begin(), r.end());  // force CCW

  auto is_convex = [&](std::size_t i) {
    const std::size_t n = r.size();
    const Vec2& a = r[(i + n - 1) % n];
    const Vec2& b = r[i];
    const Vec2& c = r[(i + 1) % n];
    return (b - a).cross(c - b) > 0.0;
  };
  auto ear_ok = [&](std::size_t i) {
    if (!is_convex(i)) return false;
    const std::size_t n = r.size();
    const Vec2& a = r[(i + n - 1) % n];
    const Vec2& b = r[i];
    const Vec2& c = r[(i + 1) % n];
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i || k == (i + n - 1) % n || k == (i + 1) % n) continue;
      if (is_convex(k)) continue;  // only reflex vertices can block an ear
      const Vec2& p = r[k];
      const double d0 = (b - a).cross(p - a);
      const double d1 = (c - b).cross(p - b);
      const double d2 = (a - c).cross(p - c);
      // closed-triangle test: a reflex vertex exactly on the diagonal
      // still invalidates the ear
      if (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) return false;
    }
    return true;
  };

  std::size_t guard = 0;
  while (r.size() > 3) {
    const std::size_t n = r.size();
    bool clipped = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (ear_ok(i)) {
        tris.push_back({r[(i + n - 1) % n], r[i], r[(i + 1) % n]});
        r.erase(r.begin() + static_cast<std::ptrdiff_t>(i));
        clipped = true;
        break;
      }
    }
    if (!clipped) {
      // degenerate/collinear leftovers: drop the vertex with the smallest
      // turning area rather than looping forever
      std::size_t best = 0;
      double best_area = std::numeric_limits<double>::max();
      for (std::size_t i = 0; i < n; ++i) {
        const Vec2& a = r[(i + n - 1) % n];
        const Vec2& b = r[i];
        const Vec2& c = r[(i + 1) % n];
        const double ar = std::fabs((b - a).cross(c - b));
        if (ar < best_area) {
          best_area = ar;
          best = i;
        }
      }
      tris.push_back({r[(best + n - 1) % n], r[best], r[(best + 1) % n]});
      r.erase(r.begin() + static_cast<std::ptrdiff_t>(best));
    }
    if (++guard > 4 * input.size() + 16) break;
  }
  if (r.size() == 3) tris.push_back({r[0], r[1], r[2]});
  return tris;
}

double intersection_area_convex(const Ring& subject, const Ring& convex) {
  if (subject.size() < 3 || convex.size() < 3) return 0.0;
  Ring clip = convex;
  if (signed_area(clip) < 0.0) std::reverse(clip.begin(), clip.end());
  double total = 0.0;
  for (const auto& t : triangulate(subject)) {
    Ring tri = {t[0], t[1], t[2]};
    if (signed_area(tri) < 0.0) std::reverse(tri.begin(), tri.end());
    Ring cut = clip_convex(tri, clip);
    if (cut.size() >= 3) total += ring_area(cut);
  }
  return total;
}

Vec2 Projection::to_planar(double lon, double lat) const {
  constexpr double kEarthRadius = 6371000.0;
  constexpr double kDeg = M_PI / 180.0;
  const double x = (lon - lon0) * kDeg * kEarthRadius * std::cos(lat0 * kDeg);
  const double y = (lat - lat0) * kDeg * kEarthRadius;
  return {x, y};
}

}  // namespace flexireg
