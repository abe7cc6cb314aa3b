#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "meshdens/rng.hpp"

namespace meshdens {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
  Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
  Vec2& operator*=(double s) { x *= s; y *= s; return *this; }
  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double dist(Vec2 a, Vec2 b) { return norm(a - b); }
/// Twice the signed area of (a, b, c); positive when counter-clockwise.
inline double orient(Vec2 a, Vec2 b, Vec2 c) { return cross(b - a, c - a); }

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed polygon; edge i runs from vertex i to vertex (i+1) mod n.
struct Polygon {
  std::vector<Vec2> vertices;

  std::size_t size() const { return vertices.size(); }
  Vec2 operator[](std::size_t i) const { return vertices[i]; }
  Vec2 vertex(std::size_t i) const { return vertices[i % vertices.size()]; }

  double signed_area() const;
  double area() const { return std::abs(signed_area()); }
  Vec2 centroid() const;
  bool is_ccw() const { return signed_area() > 0.0; }
  void reverse();

  bool operator==(const Polygon&) const = default;
};

/// (convexity, genus, smoothness). Only polygonal boundaries are generated.
struct ComplexityClass {
  int convexity = 0;  // 0 convex, 1 non-convex
  int genus = 0;      // number of holes, 0..2
  int smoothness = 0;

  bool valid() const;
  std::string label() const;  // "0,1,0"
  static ComplexityClass parse(const std::string& text);

  bool operator==(const ComplexityClass&) const = default;
};

/// Outer boundary (CCW) and holes (CW).
struct Geometry {
  Polygon outer;
  std::vector<Polygon> holes;

  bool operator==(const Geometry&) const = default;
};

struct DomainSpec {
  Geometry geom;
  int dirichlet_edge = -1;
  int neumann_edge = -1;
  std::uint64_t seed = 0;

  const Polygon& outer() const { return geom.outer; }
  const std::vector<Polygon>& holes() const { return geom.holes; }

  bool operator==(const DomainSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Predicates

bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d);
double point_segment_distance(Vec2 p, Vec2 a, Vec2 b);
/// Even-odd ray casting.
bool point_in_polygon(Vec2 p, const Polygon& poly);
/// Inside the outer loop and outside every hole.
bool point_in_geometry(Vec2 p, const Geometry& g);
double distance_to_boundary(Vec2 p, const Polygon& poly);
bool is_simple(const Polygon& poly);
bool is_convex(const Polygon& poly);
bool has_reflex_vertex(const Polygon& poly);
double polygon_distance(const Polygon& a, const Polygon& b);
bool edges_adjacent(std::size_t n, int i, int j);

/// Simplicity, orientation and containment of the loops; empty when valid.
std::string validate_geometry(const Geometry& geom);
/// Checks every DomainSpec invariant; returns an empty string when valid.
std::string validate(const DomainSpec& spec);

// ---------------------------------------------------------------------------
// Generators

struct GeneratorLimits {
  int max_attempts = 100;
  double hole_margin = 0.02;
};

/// Andrew's monotone chain, CCW, collinear points dropped.
Polygon convex_hull(std::span<const Vec2> points);

Polygon gen_convex(int n_points, Rng& rng);

/// Outer boundary of the union of two convex CCW polygons. Throws when the
/// polygons do not overlap (the union would not be connected).
Polygon convex_union(const Polygon& a, const Polygon& b);

/// Union of two hulls if it is simply connected and non-convex; otherwise
/// nullopt (the candidate is discarded by the generator).
std::optional<Polygon> nonconvex_from_hulls(const Polygon& a, const Polygon& b);

Polygon gen_nonconvex(Rng& rng, const GeneratorLimits& limits = {});

Geometry gen_with_voids(const Polygon& base, int k, Rng& rng,
                        const GeneratorLimits& limits = {});

DomainSpec assign_bcs(const Geometry& geom, Rng& rng);

/// Full sample domain for a complexity class with a per-sample seed.
DomainSpec generate_domain(const ComplexityClass& cls, std::uint64_t seed,
                           const GeneratorLimits& limits = {});

// ---------------------------------------------------------------------------
// Text format

void write_domain(std::ostream& os, const DomainSpec& spec);
DomainSpec read_domain(std::istream& is);
void save_domain(const std::string& path, const DomainSpec& spec);
DomainSpec load_domain(const std::string& path);

}  // namespace meshdens
