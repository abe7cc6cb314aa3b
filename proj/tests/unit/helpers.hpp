#pragma once

#include "meshdens/geometry.hpp"

namespace testutil {

using meshdens::DomainSpec;
using meshdens::Polygon;
using meshdens::Vec2;

inline Polygon rect(double x0, double y0, double x1, double y1) { return Polygon{{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}}; }

inline DomainSpec unit_square() {
  DomainSpec d;
  d.geom.outer = rect(0, 0, 1, 1);
  d.dirichlet_edge = 0;
  d.neumann_edge = 2;
  return d;
}

/// Unit square with a centered clockwise square hole of side `s`.
inline DomainSpec square_with_hole(double s = 0.5) {
  DomainSpec d = unit_square();
  Polygon h = rect(0.5 - s / 2, 0.5 - s / 2, 0.5 + s / 2, 0.5 + s / 2);
  h.reverse();
  d.geom.holes.push_back(h);
  return d;
}

inline DomainSpec l_shape() {
  DomainSpec d;
  d.geom.outer = Polygon{{{0, 0}, {1, 0}, {1, 0.5}, {0.5, 0.5}, {0.5, 1}, {0, 1}}};
  d.dirichlet_edge = 0;
  d.neumann_edge = 3;
  return d;
}

/// Winding number of a closed polygon around p.
inline int winding_number(Vec2 p, const Polygon& poly) {
  int w = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2 a = poly.vertex(i), b = poly.vertex(i + 1);
    const double side = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
    if (a.y <= p.y) {
      if (b.y > p.y && side > 0) ++w;
    } else if (b.y <= p.y && side < 0) {
      --w;
    }
  }
  return w;
}

}  // namespace testutil
