#include <algorithm>
#include <cstdio>
#include <limits>
#include <sstream>

#include "meshdens/geometry.hpp"

namespace meshdens {

double Polygon::signed_area() const {
  const std::size_t n = vertices.size();
  double a = 0.0;
  for (std::size_t i = 0; i < n; ++i) a += cross(vertices[i], vertices[(i + 1) % n]);
  return 0.5 * a;
}

Vec2 Polygon::centroid() const {
  const std::size_t n = vertices.size();
  double a = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 p = vertices[i], q = vertices[(i + 1) % n];
    const double w = cross(p, q);
    a += w;
    cx += (p.x + q.x) * w;
    cy += (p.y + q.y) * w;
  }
  if (std::abs(a) < 1e-300) {
    Vec2 s;
    for (auto v : vertices) s += v;
    return (1.0 / static_cast<double>(n)) * s;
  }
  return {cx / (3.0 * a), cy / (3.0 * a)};
}

void Polygon::reverse() { std::reverse(vertices.begin(), vertices.end()); }

bool ComplexityClass::valid() const {
  return (convexity == 0 || convexity == 1) && genus >= 0 && genus <= 2 && smoothness == 0;
}

std::string ComplexityClass::label() const {
  return std::to_string(convexity) + "," + std::to_string(genus) + "," + std::to_string(smoothness);
}

ComplexityClass ComplexityClass::parse(const std::string& text) {
  ComplexityClass c;
  char s1 = 0, s2 = 0;
  std::istringstream is(text);
  if (!(is >> c.convexity >> s1 >> c.genus >> s2 >> c.smoothness) || s1 != ',' || s2 != ',') {
    throw GeometryError("malformed complexity class '" + text + "' (expected c,k,s)");
  }
  std::string rest;
  if (is >> rest) throw GeometryError("malformed complexity class '" + text + "'");
  if (!c.valid()) throw GeometryError("unsupported complexity class (" + text + ")");
  return c;
}

namespace {

bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  const int o1 = sign(orient(a, b, c));
  const int o2 = sign(orient(a, b, d));
  const int o3 = sign(orient(c, d, a));
  const int o4 = sign(orient(c, d, b));
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return dist(p, a);
  const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
  return dist(p, a + t * ab);
}

bool point_in_polygon(Vec2 p, const Polygon& poly) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = poly.vertices[i], b = poly.vertices[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

bool point_in_geometry(Vec2 p, const Geometry& g) {
  if (!point_in_polygon(p, g.outer)) return false;
  for (const auto& h : g.holes)
    if (point_in_polygon(p, h)) return false;
  return true;
}

double distance_to_boundary(Vec2 p, const Polygon& poly) {
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < poly.size(); ++i)
    d = std::min(d, point_segment_distance(p, poly.vertex(i), poly.vertex(i + 1)));
  return d;
}

bool is_simple(const Polygon& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = poly.vertex(i), b = poly.vertex(i + 1);
    if (a == b) return false;
    for (std::size_t j = i + 1; j < n; ++j) {
      const Vec2 c = poly.vertex(j), d = poly.vertex(j + 1);
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) {
        // Adjacent edges may only share their common vertex: reject folds.
        const Vec2 shared = (j == i + 1) ? b : a;
        const Vec2 u = (j == i + 1) ? a : b;
        const Vec2 w = (j == i + 1) ? d : c;
        if (orient(u, shared, w) == 0.0 && dot(u - shared, w - shared) > 0.0) return false;
        continue;
      }
      if (segments_intersect(a, b, c, d)) return false;
    }
  }
  return true;
}

bool is_convex(const Polygon& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  const double s = poly.signed_area() >= 0.0 ? 1.0 : -1.0;
  for (std::size_t i = 0; i < n; ++i)
    if (s * orient(poly.vertex(i), poly.vertex(i + 1), poly.vertex(i + 2)) < 0.0) return false;
  return true;
}

bool has_reflex_vertex(const Polygon& poly) {
  const double s = poly.signed_area() >= 0.0 ? 1.0 : -1.0;
  for (std::size_t i = 0; i < poly.size(); ++i)
    if (s * orient(poly.vertex(i), poly.vertex(i + 1), poly.vertex(i + 2)) < 0.0) return true;
  return false;
}

double polygon_distance(const Polygon& a, const Polygon& b) {
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vec2 p = a.vertex(i), q = a.vertex(i + 1);
    for (std::size_t j = 0; j < b.size(); ++j) {
      const Vec2 r = b.vertex(j), s = b.vertex(j + 1);
      if (segments_intersect(p, q, r, s)) return 0.0;
      d = std::min({d, point_segment_distance(p, r, s), point_segment_distance(q, r, s),
                    point_segment_distance(r, p, q), point_segment_distance(s, p, q)});
    }
  }
  return d;
}

bool edges_adjacent(std::size_t n, int i, int j) {
  const int m = static_cast<int>(n);
  return i == j || (i + 1) % m == j || (j + 1) % m == i;
}

std::string validate_geometry(const Geometry& geom) {
  const Polygon& outer = geom.outer;
  if (outer.size() < 3) return "outer polygon has fewer than 3 vertices";
  if (!is_simple(outer)) return "outer polygon is not simple";
  if (!outer.is_ccw()) return "outer polygon is not counter-clockwise";
  for (auto v : outer.vertices)
    if (v.x < 0.0 || v.x > 1.0 || v.y < 0.0 || v.y > 1.0) return "outer vertex outside unit square";
  for (std::size_t h = 0; h < geom.holes.size(); ++h) {
    const Polygon& hole = geom.holes[h];
    if (hole.size() < 3 || !is_simple(hole)) return "hole " + std::to_string(h) + " is not simple";
    if (hole.is_ccw()) return "hole " + std::to_string(h) + " is not clockwise";
    for (auto v : hole.vertices)
      if (!point_in_polygon(v, outer)) return "hole " + std::to_string(h) + " not inside outer";
    if (polygon_distance(hole, outer) <= 0.0) return "hole " + std::to_string(h) + " touches outer";
    for (std::size_t g = 0; g < h; ++g) {
      const Polygon& other = geom.holes[g];
      if (polygon_distance(hole, other) <= 0.0 || point_in_polygon(hole[0], other) ||
          point_in_polygon(other[0], hole))
        return "holes " + std::to_string(g) + " and " + std::to_string(h) + " overlap";
    }
  }
  return {};
}

std::string validate(const DomainSpec& spec) {
  if (auto err = validate_geometry(spec.geom); !err.empty()) return err;
  const int n = static_cast<int>(spec.outer().size());
  if (spec.dirichlet_edge < 0 || spec.dirichlet_edge >= n) return "dirichlet edge out of range";
  if (spec.neumann_edge < 0 || spec.neumann_edge >= n) return "neumann edge out of range";
  if (edges_adjacent(spec.outer().size(), spec.dirichlet_edge, spec.neumann_edge))
    return "dirichlet and neumann edges coincide or are adjacent";
  return {};
}

// ---------------------------------------------------------------------------

void write_domain(std::ostream& os, const DomainSpec& spec) {
  char buf[96];
  auto put_loop = [&](const char* tag, const Polygon& p) {
    os << tag << ' ' << p.size() << '\n';
    for (auto v : p.vertices) {
      std::snprintf(buf, sizeof buf, "%.17g %.17g\n", v.x, v.y);
      os << buf;
    }
  };
  put_loop("outer", spec.outer());
  for (const auto& h : spec.holes()) put_loop("hole", h);
  os << "dirichlet " << spec.dirichlet_edge << '\n';
  os << "neumann " << spec.neumann_edge << '\n';
  os << "seed " << spec.seed << '\n';
}

DomainSpec read_domain(std::istream& is) {
  DomainSpec spec;
  std::string key;
  bool have_outer = false;
  auto read_loop = [&](Polygon& p) {
    std::size_t n = 0;
    if (!(is >> n) || n < 3) throw GeometryError("domain file: bad vertex count");
    p.vertices.resize(n);
    for (auto& v : p.vertices)
      if (!(is >> v.x >> v.y)) throw GeometryError("domain file: truncated coordinates");
  };
  while (is >> key) {
    if (key == "outer") {
      read_loop(spec.geom.outer);
      have_outer = true;
    } else if (key == "hole") {
      read_loop(spec.geom.holes.emplace_back());
    } else if (key == "dirichlet") {
      is >> spec.dirichlet_edge;
    } else if (key == "neumann") {
      is >> spec.neumann_edge;
    } else if (key == "seed") {
      is >> spec.seed;
    } else {
      throw GeometryError("domain file: unknown key '" + key + "'");
    }
    if (!is) throw GeometryError("domain file: malformed value after '" + key + "'");
  }
  if (!have_outer) throw GeometryError("domain file: missing outer loop");
  return spec;
}

}  // namespace meshdens
