#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "meshdens/geometry.hpp"
#include "meshdens/rng.hpp"

using namespace meshdens;

namespace {

// O(n^3): every vertex triple of a CCW convex polygon is CCW or collinear.
bool brute_force_convex(const Polygon& p) {
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k)
        if (orient(p[i], p[j], p[k]) < -1e-15) return false;
  return true;
}

}  // namespace

TEST_CASE("rng is deterministic and splits into distinct streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng root(7);
  CHECK(root.split(0).next() != root.split(1).next());
  Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("gen_convex with 30 points returns a CCW convex hull of the samples") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Polygon p = gen_convex(30, rng);
    CHECK(p.size() >= 3);
    CHECK(p.is_ccw());
    CHECK(is_convex(p));
    for (auto v : p.vertices) {
      CHECK(v.x >= 0.0);
      CHECK(v.x <= 1.0);
      CHECK(v.y >= 0.0);
      CHECK(v.y <= 1.0);
    }
  }
}

TEST_CASE("gen_convex with 10 points passes the brute-force convexity oracle") {
  Rng rng(1234);
  const Polygon p = gen_convex(10, rng);
  CHECK(brute_force_convex(p));
}

TEST_CASE("hull of three non-collinear points is that triangle") {
  const std::vector<Vec2> pts{{0.1, 0.1}, {0.9, 0.2}, {0.4, 0.8}};
  const Polygon h = convex_hull(pts);
  REQUIRE(h.size() == 3);
  for (auto v : pts) CHECK(std::find(h.vertices.begin(), h.vertices.end(), v) != h.vertices.end());
  CHECK(h.is_ccw());
}

TEST_CASE("hull drops interior and collinear points") {
  const std::vector<Vec2> pts{{0, 0}, {0.5, 0}, {1, 0}, {1, 1}, {0, 1}, {0.5, 0.5}};
  CHECK(convex_hull(pts).size() == 4);
}

TEST_CASE("union of identical hulls is convex and therefore rejected") {
  Rng rng(5);
  const Polygon a = gen_convex(30, rng);
  const Polygon u = convex_union(a, a);
  CHECK(std::abs(u.area() - a.area()) < 1e-12);
  CHECK_FALSE(nonconvex_from_hulls(a, a).has_value());
}

TEST_CASE("disjoint hulls are rejected") {
  const Polygon a = testutil::rect(0.0, 0.0, 0.3, 0.3), b = testutil::rect(0.6, 0.6, 0.9, 0.9);
  CHECK_FALSE(nonconvex_from_hulls(a, b).has_value());
}

TEST_CASE("overlapping rectangles give a non-convex union with the right area") {
  const Polygon a = testutil::rect(0.1, 0.1, 0.6, 0.4), b = testutil::rect(0.3, 0.2, 0.5, 0.9);
  const auto u = nonconvex_from_hulls(a, b);
  REQUIRE(u.has_value());
  CHECK(has_reflex_vertex(*u));
  CHECK(is_simple(*u));
  // Inclusion-exclusion: 0.15 + 0.14 - 0.04.
  CHECK(u->area() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("gen_nonconvex output has a reflex vertex and is simple") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Polygon p = gen_nonconvex(rng);
    CHECK(is_simple(p));
    CHECK(p.is_ccw());
    bool negative = false;
    for (std::size_t i = 0; i < p.size(); ++i)
      negative = negative || orient(p.vertex(i), p.vertex(i + 1), p.vertex(i + 2)) < 0.0;
    CHECK(negative);
  }
}

TEST_CASE("gen_with_voids with k = 0 returns the base unchanged") {
  Rng rng(9);
  const Polygon base = gen_convex(30, rng);
  const Geometry g = gen_with_voids(base, 0, rng);
  CHECK(g.holes.empty());
  CHECK(g.outer == base);
}

TEST_CASE("gen_with_voids holes are interior, clockwise and disjoint") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (int k = 1; k <= 2; ++k) {
      Rng rng(seed * 10 + static_cast<std::uint64_t>(k));
      const Polygon base = gen_convex(30, rng);
      const Geometry g = gen_with_voids(base, k, rng);
      REQUIRE(g.holes.size() == static_cast<std::size_t>(k));
      for (const auto& h : g.holes) {
        CHECK_FALSE(h.is_ccw());
        for (auto v : h.vertices) CHECK(testutil::winding_number(v, g.outer) == 1);
        for (std::size_t i = 0; i < h.size(); ++i)
          for (std::size_t j = 0; j < g.outer.size(); ++j)
            CHECK_FALSE(segments_intersect(h.vertex(i), h.vertex(i + 1), g.outer.vertex(j), g.outer.vertex(j + 1)));
        CHECK(polygon_distance(h, g.outer) >= 0.02);
      }
      if (k == 2) {
        const auto &a = g.holes[0], &b = g.holes[1];
        for (std::size_t i = 0; i < a.size(); ++i)
          for (std::size_t j = 0; j < b.size(); ++j)
            CHECK_FALSE(segments_intersect(a.vertex(i), a.vertex(i + 1), b.vertex(j), b.vertex(j + 1)));
      }
    }
  }
}

TEST_CASE("assign_bcs picks opposite edges on a square") {
  Geometry g{testutil::rect(0, 0, 1, 1), {}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const DomainSpec d = assign_bcs(g, rng);
    CHECK((d.dirichlet_edge + 2) % 4 == d.neumann_edge);
  }
}

TEST_CASE("assign_bcs on a hexagon picks edges that share no vertex") {
  Polygon hex;
  for (int i = 0; i < 6; ++i) {
    const double a = i * std::numbers::pi / 3.0;
    hex.vertices.push_back({0.5 + 0.4 * std::cos(a), 0.5 + 0.4 * std::sin(a)});
  }
  Rng rng(77);
  const DomainSpec d = assign_bcs(Geometry{hex, {}}, rng);
  const Vec2 d0 = hex.vertex(static_cast<std::size_t>(d.dirichlet_edge)), d1 = hex.vertex(static_cast<std::size_t>(d.dirichlet_edge) + 1);
  const Vec2 n0 = hex.vertex(static_cast<std::size_t>(d.neumann_edge)), n1 = hex.vertex(static_cast<std::size_t>(d.neumann_edge) + 1);
  CHECK(d0 != n0);
  CHECK(d0 != n1);
  CHECK(d1 != n0);
  CHECK(d1 != n1);
}

TEST_CASE("assign_bcs on a triangle is an error") {
  Rng rng(1);
  const Geometry g{Polygon{{{0.1, 0.1}, {0.9, 0.1}, {0.5, 0.9}}}, {}};
  CHECK_THROWS_AS(assign_bcs(g, rng), GeometryError);
}

TEST_CASE("generate_domain is valid and deterministic for every class") {
  for (int convexity : {0, 1}) {
    for (int genus = 0; genus <= 2; ++genus) {
      const ComplexityClass cls{convexity, genus, 0};
      for (std::uint64_t seed = 100; seed < 105; ++seed) {
        const DomainSpec a = generate_domain(cls, seed);
        const DomainSpec b = generate_domain(cls, seed);
        CHECK(validate(a).empty());
        CHECK(a.holes().size() == static_cast<std::size_t>(genus));
        if (convexity == 0) CHECK(is_convex(a.outer()));
        if (convexity == 1) CHECK(has_reflex_vertex(a.outer()));
        std::ostringstream sa, sb;
        write_domain(sa, a);
        write_domain(sb, b);
        CHECK(sa.str() == sb.str());
      }
    }
  }
}

TEST_CASE("domain text round trip is exact") {
  const DomainSpec d = generate_domain({0, 2, 0}, 31337);
  std::stringstream ss;
  write_domain(ss, d);
  const DomainSpec r = read_domain(ss);
  CHECK(r.geom.outer == d.geom.outer);
  CHECK(r.geom.holes == d.geom.holes);
  CHECK(r.dirichlet_edge == d.dirichlet_edge);
  CHECK(r.neumann_edge == d.neumann_edge);
  CHECK(r.seed == d.seed);
}

TEST_CASE("complexity class parsing") {
  const auto c = ComplexityClass::parse("1,2,0");
  CHECK(c.convexity == 1);
  CHECK(c.genus == 2);
  CHECK(c.label() == "1,2,0");
  CHECK_THROWS_AS(ComplexityClass::parse("1,3,0"), GeometryError);
  CHECK_THROWS_AS(ComplexityClass::parse("1,0,1"), GeometryError);
  CHECK_THROWS_AS(ComplexityClass::parse("garbage"), GeometryError);
}

TEST_CASE("validate rejects adjacent boundary-condition edges") {
  DomainSpec d = testutil::unit_square();
  d.neumann_edge = 1;
  CHECK_FALSE(validate(d).empty());
}
