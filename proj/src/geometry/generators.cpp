#include <algorithm>
#include <fstream>
#include <numbers>

#include "meshdens/geometry.hpp"

namespace meshdens {

Polygon convex_hull(std::span<const Vec2> points) {
  std::vector<Vec2> p(points.begin(), points.end());
  std::sort(p.begin(), p.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  p.erase(std::unique(p.begin(), p.end()), p.end());
  if (p.size() < 3) return Polygon{p};
  std::vector<Vec2> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && orient(h[k - 2], h[k - 1], p[i]) <= 0.0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && orient(h[k - 2], h[k - 1], p[i - 1]) <= 0.0) --k;
    h[k++] = p[i - 1];
  }
  h.resize(k - 1);
  return Polygon{h};
}

namespace {

std::vector<Vec2> sample_box(Rng& rng, int n, Vec2 lo, Vec2 hi) {
  std::vector<Vec2> pts(static_cast<std::size_t>(n));
  for (auto& q : pts) {
    q.x = rng.uniform(lo.x, hi.x);
    q.y = rng.uniform(lo.y, hi.y);
  }
  return pts;
}

bool inside_or_on(const Polygon& convex, Vec2 p) {
  for (std::size_t i = 0; i < convex.size(); ++i)
    if (orient(convex.vertex(i), convex.vertex(i + 1), p) < 0.0) return false;
  return true;
}

struct Hit {
  double t;  // along the walking segment
  std::size_t edge;
};

// First crossing of segment p->q with the boundary of `poly`, t in (eps, 1].
std::optional<Hit> first_crossing(Vec2 p, Vec2 q, const Polygon& poly) {
  constexpr double eps = 1e-12;
  std::optional<Hit> best;
  const Vec2 d = q - p;
  for (std::size_t j = 0; j < poly.size(); ++j) {
    const Vec2 a = poly.vertex(j), b = poly.vertex(j + 1);
    const Vec2 e = b - a;
    const double den = cross(d, e);
    if (den == 0.0) continue;
    const double t = cross(a - p, e) / den;
    const double u = cross(a - p, d) / den;
    if (t > eps && t <= 1.0 && u >= 0.0 && u < 1.0) {
      // Only entering crossings: the walked edge must head into `poly`.
      if (cross(e, d) <= 0.0) continue;
      if (!best || t < best->t) best = Hit{t, j};
    }
  }
  return best;
}

}  // namespace

Polygon gen_convex(int n_points, Rng& rng) {
  if (n_points < 3) throw GeometryError("gen_convex needs at least 3 points");
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto pts = sample_box(rng, n_points, {0.0, 0.0}, {1.0, 1.0});
    Polygon hull = convex_hull(pts);
    if (hull.size() >= 3 && hull.area() > 1e-12) return hull;
  }
  throw GeometryError("gen_convex: degenerate hull after 1000 resamples");
}

Polygon convex_union(const Polygon& a, const Polygon& b) {
  auto outside_vertex = [](const Polygon& p, const Polygon& other) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < p.size(); ++i)
      if (!inside_or_on(other, p[i])) return i;
    return std::nullopt;
  };
  const auto start_a = outside_vertex(a, b);
  if (!start_a) return b;
  if (!outside_vertex(b, a)) return a;

  const Polygon* polys[2] = {&a, &b};
  int cur = 0;
  std::size_t idx = *start_a;
  Vec2 pos = a[idx];
  Polygon out;
  out.vertices.push_back(pos);
  int crossings = 0;
  const std::size_t max_steps = 4 * (a.size() + b.size()) + 8;
  for (std::size_t step = 0; step < max_steps; ++step) {
    const Polygon& p = *polys[cur];
    const Polygon& q = *polys[1 - cur];
    const std::size_t next = (idx + 1) % p.size();
    const Vec2 end = p[next];
    if (auto hit = first_crossing(pos, end, q); hit && hit->t < 1.0) {
      pos = pos + hit->t * (end - pos);
      out.vertices.push_back(pos);
      cur = 1 - cur;
      idx = hit->edge;
      ++crossings;
      continue;
    }
    if (cur == 0 && next == *start_a) {
      if (crossings == 0) throw GeometryError("convex_union: polygons are disjoint");
      // Drop near-duplicate consecutive vertices produced by grazing crossings.
      Polygon clean;
      for (auto v : out.vertices)
        if (clean.vertices.empty() || dist(clean.vertices.back(), v) > 1e-12) clean.vertices.push_back(v);
      while (clean.size() > 1 && dist(clean.vertices.front(), clean.vertices.back()) <= 1e-12)
        clean.vertices.pop_back();
      return clean;
    }
    pos = end;
    idx = next;
    out.vertices.push_back(pos);
  }
  throw GeometryError("convex_union: boundary walk did not close");
}

std::optional<Polygon> nonconvex_from_hulls(const Polygon& a, const Polygon& b) {
  Polygon u;
  try {
    u = convex_union(a, b);
  } catch (const GeometryError&) {
    return std::nullopt;
  }
  if (u.size() < 4 || !is_simple(u) || !u.is_ccw() || !has_reflex_vertex(u)) return std::nullopt;
  return u;
}

Polygon gen_nonconvex(Rng& rng, const GeneratorLimits& limits) {
  for (int attempt = 0; attempt < limits.max_attempts; ++attempt) {
    Vec2 lo[2], hi[2];
    for (int r = 0; r < 2; ++r) {
      const double w = rng.uniform(0.3, 0.7), h = rng.uniform(0.3, 0.7);
      lo[r] = {rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h)};
      hi[r] = {lo[r].x + w, lo[r].y + h};
    }
    const double ox = std::min(hi[0].x, hi[1].x) - std::max(lo[0].x, lo[1].x);
    const double oy = std::min(hi[0].y, hi[1].y) - std::max(lo[0].y, lo[1].y);
    if (ox <= 0.0 || oy <= 0.0 || ox * oy < 0.05) continue;
    const Polygon a = convex_hull(sample_box(rng, 30, lo[0], hi[0]));
    const Polygon b = convex_hull(sample_box(rng, 30, lo[1], hi[1]));
    if (a.size() < 3 || b.size() < 3) continue;
    if (auto u = nonconvex_from_hulls(a, b)) return *u;
  }
  throw GeometryError("gen_nonconvex: no simply connected non-convex union within retry budget");
}

Geometry gen_with_voids(const Polygon& base, int k, Rng& rng, const GeneratorLimits& limits) {
  if (k < 0 || k > 2) throw GeometryError("gen_with_voids: k must be in [0, 2]");
  Geometry g{base, {}};
  if (k == 0) return g;

  const Vec2 c = base.centroid();
  // Division points uniform on the unit-square perimeter.
  std::vector<double> angles;
  for (int i = 0; i < k; ++i) {
    const double t = rng.uniform(0.0, 4.0);
    Vec2 p;
    if (t < 1.0) p = {t, 0.0};
    else if (t < 2.0) p = {1.0, t - 1.0};
    else if (t < 3.0) p = {3.0 - t, 1.0};
    else p = {0.0, 4.0 - t};
    angles.push_back(std::atan2(p.y - c.y, p.x - c.x));
  }
  std::sort(angles.begin(), angles.end());

  auto in_sector = [&](Vec2 q, int s) {
    if (k == 1) return true;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const double a0 = angles[static_cast<std::size_t>(s)];
    double span = angles[static_cast<std::size_t>((s + 1) % k)] - a0;
    if (span <= 0.0) span += two_pi;
    double a = std::atan2(q.y - c.y, q.x - c.x) - a0;
    while (a < 0.0) a += two_pi;
    return a < span;
  };

  for (int s = 0; s < k; ++s) {
    bool placed = false;
    for (int attempt = 0; attempt < limits.max_attempts && !placed; ++attempt) {
      Vec2 center;
      bool found = false;
      for (int tries = 0; tries < 200 && !found; ++tries) {
        center = {rng.uniform(), rng.uniform()};
        found = point_in_polygon(center, base) && in_sector(center, s);
      }
      if (!found) continue;
      const double r = rng.uniform(0.04, 0.1);
      Polygon hole = convex_hull(sample_box(rng, 10, center - Vec2{r, r}, center + Vec2{r, r}));
      if (hole.size() < 3 || hole.area() < 1e-4) continue;
      bool ok = true;
      for (auto v : hole.vertices)
        if (!point_in_polygon(v, base)) { ok = false; break; }
      if (!ok || polygon_distance(hole, base) < limits.hole_margin) continue;
      for (const auto& other : g.holes) {
        if (polygon_distance(hole, other) < limits.hole_margin || point_in_polygon(hole[0], other) ||
            point_in_polygon(other[0], hole)) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      hole.reverse();
      g.holes.push_back(std::move(hole));
      placed = true;
    }
    if (!placed) throw GeometryError("gen_with_voids: could not place hole within retry budget");
  }
  return g;
}

DomainSpec assign_bcs(const Geometry& geom, Rng& rng) {
  const std::size_t n = geom.outer.size();
  if (n < 4) throw GeometryError("assign_bcs: outer boundary needs at least 4 edges");
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < static_cast<int>(n); ++i)
    for (int j = 0; j < static_cast<int>(n); ++j)
      if (!edges_adjacent(n, i, j)) pairs.emplace_back(i, j);
  const auto [d, t] = pairs[rng.below(pairs.size())];
  DomainSpec spec;
  spec.geom = geom;
  spec.dirichlet_edge = d;
  spec.neumann_edge = t;
  return spec;
}

DomainSpec generate_domain(const ComplexityClass& cls, std::uint64_t seed, const GeneratorLimits& limits) {
  if (!cls.valid()) throw GeometryError("generate_domain: unsupported class " + cls.label());
  const Rng root(seed);
  std::string last_error = "no attempt";
  for (int attempt = 0; attempt < limits.max_attempts; ++attempt) {
    Rng rng = attempt == 0 ? Rng(seed) : root.split(static_cast<std::uint64_t>(attempt));
    try {
      Polygon base = cls.convexity == 0 ? gen_convex(30, rng) : gen_nonconvex(rng, limits);
      if (base.size() < 4) continue;
      Geometry geom = gen_with_voids(base, cls.genus, rng, limits);
      DomainSpec spec = assign_bcs(geom, rng);
      spec.seed = seed;
      if (auto err = validate(spec); !err.empty()) {
        last_error = err;
        continue;
      }
      return spec;
    } catch (const GeometryError& e) {
      last_error = e.what();
    }
  }
  throw GeometryError("generate_domain(" + cls.label() + "): " + last_error);
}

void save_domain(const std::string& path, const DomainSpec& spec) {
  std::ofstream os(path);
  if (!os) throw GeometryError("cannot write " + path);
  write_domain(os, spec);
}

DomainSpec load_domain(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw GeometryError("cannot read " + path);
  return read_domain(is);
}

}  // namespace meshdens
