#include <algorithm>
#include <cmath>
#include <limits>

#include "meshdens/imaging.hpp"

namespace meshdens {

GrayImage rasterize_domain(const DomainSpec& domain, int res) {
  GrayImage img(res, res);
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c) img.at(r, c) = point_in_geometry(img.pixel_center(r, c), domain.geom) ? 1.0f : 0.0f;
  return img;
}

std::array<Vec2, 9> pixel_probes(const GrayImage& img, int row, int col) {
  static constexpr int offsets[9][2] = {{0, 0}, {-1, -1}, {1, -1}, {1, 1}, {-1, 1}, {0, -1}, {1, 0}, {0, 1}, {-1, 0}};
  const Vec2 c = img.pixel_center(row, col);
  const double hx = 0.5 / img.width(), hy = 0.5 / img.height();
  std::array<Vec2, 9> out;
  for (std::size_t i = 0; i < 9; ++i)
    out[i] = {std::clamp(c.x + offsets[i][0] * hx, 0.0, 1.0), std::clamp(c.y + offsets[i][1] * hy, 0.0, 1.0)};
  return out;
}

GrayImage rasterize_support(const DomainSpec& domain, int res) {
  GrayImage img(res, res);
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c)
      for (Vec2 p : pixel_probes(img, r, c))
        if (point_in_geometry(p, domain.geom)) {
          img.at(r, c) = 1.0f;
          break;
        }
  return img;
}

GrayImage rasterize_segment(Vec2 a, Vec2 b, int res) {
  GrayImage img(res, res);
  if (a == b) return img;
  const double reach = 0.5 * std::sqrt(2.0) / res;
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c)
      if (point_segment_distance(img.pixel_center(r, c), a, b) <= reach) img.at(r, c) = 1.0f;
  return img;
}

GrayImage rasterize_edge(const DomainSpec& domain, EdgeKind kind, int res) {
  const int e = kind == EdgeKind::dirichlet ? domain.dirichlet_edge : domain.neumann_edge;
  const Polygon& outer = domain.outer();
  if (e < 0 || static_cast<std::size_t>(e) >= outer.size()) throw GeometryError("boundary edge index out of range");
  return rasterize_segment(outer.vertex(static_cast<std::size_t>(e)), outer.vertex(static_cast<std::size_t>(e) + 1), res);
}

InputStack make_input_stack(const DomainSpec& domain, int res) {
  InputStack s{rasterize_domain(domain, res), rasterize_edge(domain, EdgeKind::dirichlet, res),
               rasterize_edge(domain, EdgeKind::neumann, res)};
  const Polygon& outer = domain.outer();
  const auto d = static_cast<std::size_t>(domain.dirichlet_edge), n = static_cast<std::size_t>(domain.neumann_edge);
  for (int r = 0; r < res; ++r) {
    for (int c = 0; c < res; ++c) {
      if (s.dirichlet.at(r, c) == 0.0f || s.neumann.at(r, c) == 0.0f) continue;
      const Vec2 p = s.geometry.pixel_center(r, c);
      const double dd = point_segment_distance(p, outer.vertex(d), outer.vertex(d + 1));
      const double dn = point_segment_distance(p, outer.vertex(n), outer.vertex(n + 1));
      (dd <= dn ? s.neumann : s.dirichlet).at(r, c) = 0.0f;
    }
  }
  return s;
}

GrayImage preprocess_prediction(const GrayImage& pred, const GrayImage& geometry) {
  if (!pred.same_shape(geometry)) throw ImageError("prediction and geometry resolution differ");
  GrayImage out = pred;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (geometry[i] < 0.5f) out[i] = 1.0f;
  return out;
}

float postprocess_value(float v, PostprocessConfig cfg) {
  const float t = cfg.threshold, f = cfg.factor;
  if (v < t) return v * f;
  if (t >= 1.0f) return v;
  return t * f + (v - t) * (1.0f - t * f) / (1.0f - t);
}

GrayImage postprocess_scale(const GrayImage& pred, PostprocessConfig cfg) {
  GrayImage out = pred;
  for (auto& v : out.data()) v = postprocess_value(v, cfg);
  return out;
}

double epsilon_rel(const GrayImage& ground, const GrayImage& pred, const GrayImage& geometry) {
  if (!ground.same_shape(pred) || !ground.same_shape(geometry)) throw ImageError("epsilon_rel: resolution mismatch");
  const GrayImage p = preprocess_prediction(pred, geometry);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ground.size(); ++i) {
    const double d = static_cast<double>(ground[i]) - p[i];
    num += d * d;
    den += static_cast<double>(ground[i]) * ground[i];
  }
  if (!(den > 0.0)) throw ImageError("epsilon_rel: ground-truth image has zero norm");
  return std::sqrt(num / den);
}

}  // namespace meshdens
