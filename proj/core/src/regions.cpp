#include "flexireg/regions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <stdexcept>

#include "flexireg/rng.hpp"

namespace flexireg {

double PolygonPart::area() const {
  double a = ring_area(outer);
  for (const Ring& h : holes) a -= ring_area(h);
  return a;
}

double Region::area() const {
  double a = 0.0;
  for (const auto& p : parts) a += p.area();
  return a;
}

BBox Region::bbox() const {
  BBox b;
  bool first = true;
  for (const auto& p : parts) {
    BBox pb = ring_bbox(p.outer);
    if (first) {
      b = pb;
      first = false;
    } else {
      b.min_x = std::min(b.min_x, pb.min_x);
      b.min_y = std::min(b.min_y, pb.min_y);
      b.max_x = std::max(b.max_x, pb.max_x);
      b.max_y = std::max(b.max_y, pb.max_y);
    }
  }
  return b;
}

double region_intersection_area(const Region& region, const Ring& convex) {
  double a = 0.0;
  for (const auto& part : region.parts) {
    a += intersection_area_convex(part.outer, convex);
    for (const Ring& h : part.holes) a -= intersection_area_convex(h, convex);
  }
  return a;
}

namespace {

// Shared boundary length between two segments if they are collinear and
// overlap; 0 otherwise.
double segment_overlap_length(const Vec2& a1, const Vec2& a2, const Vec2& b1,
                              const Vec2& b2, double tol) {
  const Vec2 da = a2 - a1;
  const double len = da.norm();
  if (len < tol) return 0.0;
  const Vec2 u{da.x / len, da.y / len};
  // both endpoints of b must lie on line a within tol
  if (std::fabs(u.cross(b1 - a1)) > tol || std::fabs(u.cross(b2 - a1)) > tol) return 0.0;
  double t1 = u.dot(b1 - a1);
  double t2 = u.dot(b2 - a1);
  if (t1 > t2) std::swap(t1, t2);
  const double lo = std::max(0.0, t1);
  const double hi = std::min(len, t2);
  return hi > lo ? hi - lo : 0.0;
}

std::vector<std::pair<Vec2, Vec2>> region_segments(const Region& r) {
  std::vector<std::pair<Vec2, Vec2>> segs;
  for (const auto& part : r.parts) {
    const std::size_t n = part.outer.size();
    for (std::size_t i = 0; i < n; ++i)
      segs.emplace_back(part.outer[i], part.outer[(i + 1) % n]);
  }
  return segs;
}

bool bbox_near(const BBox& a, const BBox& b, double tol) {
  return a.min_x <= b.max_x + tol && b.min_x <= a.max_x + tol &&
         a.min_y <= b.max_y + tol && b.min_y <= a.max_y + tol;
}

}  // namespace

std::vector<std::vector<std::size_t>> region_adjacency(const RegionSet& regions) {
  const std::size_t n = regions.size();
  std::vector<std::vector<std::size_t>> adj(n);
  std::vector<std::vector<std::pair<Vec2, Vec2>>> segs(n);
  std::vector<BBox> boxes(n);
  double scale = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    segs[i] = region_segments(regions[i]);
    boxes[i] = regions[i].bbox();
    scale = std::max({scale, std::fabs(boxes[i].max_x), std::fabs(boxes[i].max_y),
                      std::fabs(boxes[i].min_x), std::fabs(boxes[i].min_y)});
  }
  const double tol = 1e-9 * scale;
  const double min_shared = 1e-6 * scale;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!bbox_near(boxes[i], boxes[j], tol)) continue;
      double shared = 0.0;
      for (const auto& [a1, a2] : segs[i]) {
        for (const auto& [b1, b2] : segs[j]) {
          shared += segment_overlap_length(a1, a2, b1, b2, tol);
          if (shared > min_shared) break;
        }
        if (shared > min_shared) break;
      }
      if (shared > min_shared) {
        adj[i].push_back(j);
        adj[j].push_back(i);
      }
    }
  }
  return adj;
}

RegionSet merge_regions(const RegionSet& regions, std::size_t target_count,
                        std::uint64_t seed) {
  const std::size_t n = regions.size();
  if (target_count < 1 || target_count > n)
    throw std::invalid_argument("merge_regions: target_count out of range");
  if (target_count == n) {
    RegionSet out = regions;
    for (auto& r : out)
      if (r.member_ids.empty()) r.member_ids = {r.id};
    return out;
  }

  auto adj = region_adjacency(regions);
  std::vector<std::set<std::size_t>> nb(n);
  for (std::size_t i = 0; i < n; ++i) nb[i] = {adj[i].begin(), adj[i].end()};

  RegionSet work = regions;
  for (std::size_t i = 0; i < n; ++i) {
    work[i].id = static_cast<std::int64_t>(i);
    if (work[i].member_ids.empty()) work[i].member_ids = {regions[i].id};
  }
  std::vector<bool> alive(n, true);
  std::size_t count = n;

  Rng rng = Rng::substream(seed, "merge-regions");
  while (count > target_count) {
    // alive regions that still have an alive neighbor
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i] && !nb[i].empty()) candidates.push_back(i);
    if (candidates.empty()) {
      // report connected components of the remaining regions
      std::vector<int> comp(n, -1);
      int ncomp = 0;
      for (std::size_t s = 0; s < n; ++s) {
        if (!alive[s] || comp[s] >= 0) continue;
        std::vector<std::size_t> stack = {s};
        comp[s] = ncomp;
        while (!stack.empty()) {
          auto v = stack.back();
          stack.pop_back();
          for (auto w : nb[v])
            if (comp[w] < 0) {
              comp[w] = ncomp;
              stack.push_back(w);
            }
        }
        ++ncomp;
      }
      std::ostringstream os;
      os << "merge_regions: region set has " << count
         << " disconnected regions across " << ncomp
         << " components; cannot reach target " << target_count << " (components:";
      for (int c = 0; c < ncomp; ++c) {
        os << " [";
        bool first = true;
        for (std::size_t i = 0; i < n; ++i)
          if (alive[i] && comp[i] == c) {
            if (!first) os << ",";
            os << regions[i].id;
            first = false;
          }
        os << "]";
      }
      os << ")";
      throw std::runtime_error(os.str());
    }
    const std::size_t a = candidates[rng.uniform_index(candidates.size())];
    std::vector<std::size_t> nbs(nb[a].begin(), nb[a].end());
    const std::size_t b = nbs[rng.uniform_index(nbs.size())];

    // merge b into a
    for (auto& part : work[b].parts) work[a].parts.push_back(std::move(part));
    work[a].member_ids.insert(work[a].member_ids.end(), work[b].member_ids.begin(),
                              work[b].member_ids.end());
    for (auto w : nb[b]) {
      nb[w].erase(b);
      if (w != a) {
        nb[w].insert(a);
        nb[a].insert(w);
      }
    }
    nb[a].erase(a);
    nb[b].clear();
    alive[b] = false;
    --count;
  }

  RegionSet out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!alive[i]) continue;
    Region r = std::move(work[i]);
    r.id = static_cast<std::int64_t>(out.size());
    std::sort(r.member_ids.begin(), r.member_ids.end());
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

Ring ring_from_coords(const nlohmann::json& coords, const Projection* proj) {
  Ring r;
  for (const auto& pt : coords) {
    const double x = pt[0].get<double>();
    const double y = pt[1].get<double>();
    r.push_back(proj ? proj->to_planar(x, y) : Vec2{x, y});
  }
  if (r.size() > 1 && std::fabs(r.front().x - r.back().x) < 1e-12 &&
      std::fabs(r.front().y - r.back().y) < 1e-12)
    r.pop_back();  // GeoJSON rings repeat the first vertex
  return r;
}

PolygonPart part_from_polygon(const nlohmann::json& rings, const Projection* proj) {
  PolygonPart part;
  bool first = true;
  for (const auto& ring : rings) {
    Ring r = ring_from_coords(ring, proj);
    if (first) {
      part.outer = std::move(r);
      first = false;
    } else {
      part.holes.push_back(std::move(r));
    }
  }
  return part;
}

}  // namespace

RegionSet read_regions_geojson(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("type", "") != "FeatureCollection")
    throw std::runtime_error(path + ": expected a GeoJSON FeatureCollection");

  const bool planar = j.value("crs", "") == "planar-meters";
  Projection proj;
  if (!planar) {
    // anchor at the lon/lat bbox centroid
    double min_lon = 1e30, max_lon = -1e30, min_lat = 1e30, max_lat = -1e30;
    std::function<void(const nlohmann::json&)> scan = [&](const nlohmann::json& c) {
      if (c.is_array() && !c.empty() && c[0].is_number()) {
        min_lon = std::min(min_lon, c[0].get<double>());
        max_lon = std::max(max_lon, c[0].get<double>());
        min_lat = std::min(min_lat, c[1].get<double>());
        max_lat = std::max(max_lat, c[1].get<double>());
      } else if (c.is_array()) {
        for (const auto& e : c) scan(e);
      }
    };
    for (const auto& f : j["features"]) scan(f["geometry"]["coordinates"]);
    proj.lon0 = (min_lon + max_lon) / 2.0;
    proj.lat0 = (min_lat + max_lat) / 2.0;
  }
  const Projection* p = planar ? nullptr : &proj;

  RegionSet regions;
  for (const auto& f : j["features"]) {
    const auto& geom = f["geometry"];
    const std::string type = geom.value("type", "");
    Region r;
    r.id = static_cast<std::int64_t>(regions.size());
    if (f.contains("properties") && f["properties"].is_object()) {
      const auto& props = f["properties"];
      if (props.contains("id")) r.id = props["id"].get<std::int64_t>();
      if (props.contains("member_ids"))
        r.member_ids = props["member_ids"].get<std::vector<std::int64_t>>();
    }
    if (type == "Polygon") {
      r.parts.push_back(part_from_polygon(geom["coordinates"], p));
    } else if (type == "MultiPolygon") {
      for (const auto& poly : geom["coordinates"])
        r.parts.push_back(part_from_polygon(poly, p));
    } else {
      throw std::runtime_error(path + ": unsupported geometry type " + type);
    }
    if (r.area() <= 0.0)
      throw std::runtime_error(path + ": region " + std::to_string(r.id) +
                               " has non-positive area");
    regions.push_back(std::move(r));
  }
  return regions;
}

void write_regions_geojson(const RegionSet& regions, const std::string& path) {
  nlohmann::json features = nlohmann::json::array();
  for (const Region& r : regions) {
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& part : r.parts) {
      nlohmann::json rings = nlohmann::json::array();
      auto dump_ring = [](const Ring& ring) {
        nlohmann::json out = nlohmann::json::array();
        for (const Vec2& v : ring) out.push_back({v.x, v.y});
        if (!ring.empty()) out.push_back({ring.front().x, ring.front().y});
        return out;
      };
      rings.push_back(dump_ring(part.outer));
      for (const Ring& h : part.holes) rings.push_back(dump_ring(h));
      coords.push_back(rings);
    }
    nlohmann::json f;
    f["type"] = "Feature";
    f["properties"] = {{"id", r.id}, {"member_ids", r.member_ids}};
    f["geometry"] = {{"type", "MultiPolygon"}, {"coordinates", coords}};
    features.push_back(std::move(f));
  }
  nlohmann::json j;
  j["type"] = "FeatureCollection";
  j["crs"] = "planar-meters";
  j["features"] = std::move(features);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump() << "\n";
}

}  // namespace flexireg
