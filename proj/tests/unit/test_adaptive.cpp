#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "meshdens/adaptive.hpp"
#include "meshdens/imaging.hpp"
#include "meshdens/rng.hpp"

using namespace meshdens;

namespace {

AdaptiveConfig quick_config() {
  AdaptiveConfig cfg;
  cfg.reference_h = 0.012;
  return cfg;
}

double mean_diameter_near(const QuadMesh& m, Vec2 p, double radius) {
  double s = 0.0;
  int n = 0;
  for (std::size_t q = 0; q < m.quads.size(); ++q) {
    if (dist(m.quad_centroid(q), p) > radius) continue;
    s += m.quad_diameter(q);
    ++n;
  }
  REQUIRE(n > 0);
  return s / n;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("size field: full error halves, zero error keeps h") {
  const std::vector<double> h{0.2, 0.2}, eps{3.0, 0.0};
  const auto b = size_field_values(h, eps, 3.0);
  CHECK(b[0] == doctest::Approx(0.1));
  CHECK(b[1] == doctest::Approx(0.2));
}

TEST_CASE("size field: two-element toy") {
  const std::vector<double> h{0.2, 0.2}, eps{1.0, 0.5};
  const auto b = size_field_values(h, eps, 1.0);
  CHECK(b[0] == doctest::Approx(0.1));
  CHECK(b[1] == doctest::Approx(0.15));
}

TEST_CASE("size field: zero global error leaves h unchanged") {
  const std::vector<double> h{0.05, 0.2}, eps{0.0, 0.0};
  const auto b = size_field_values(h, eps, 0.0);
  CHECK(b[0] == 0.05);
  CHECK(b[1] == 0.2);
}

TEST_CASE("size field: clamped to the bounds") {
  const std::vector<double> h{0.006, 0.6}, eps{1.0, 0.0};
  const auto b = size_field_values(h, eps, 1.0);
  CHECK(b[0] == 0.004);
  CHECK(b[1] == 0.25);
}

TEST_CASE("size_field_update on a two-quad strip") {
  // Error equals x: left quad averages 0.1, right 0.3, global max 0.4.
  QuadMesh m = structured_grid(2, 1, {0, 0}, {0.4, 0.2});
  std::vector<double> coarse(m.vertices.size()), fine(m.vertices.size(), 0.0);
  for (std::size_t v = 0; v < m.vertices.size(); ++v) coarse[v] = m.vertices[v].x;
  const auto upd = size_field_update(m, coarse, fine);
  CHECK(upd.eps_max == doctest::Approx(0.4));
  for (std::size_t q = 0; q < 2; ++q) {
    const bool left = m.quad_centroid(q).x < 0.2;
    CHECK(upd.values[q] == doctest::Approx(left ? 0.2 * (1 - 0.1 / 0.8) : 0.2 * (1 - 0.3 / 0.8)));
    CHECK(upd.field(m.quad_centroid(q)) == doctest::Approx(upd.values[q]));
  }
  CHECK_THROWS_AS(size_field_update(m, std::vector<double>(3), fine), MeshingError);
}

TEST_CASE("size field is monotone in the element error and stays within [h/2, h]") {
  Rng rng(7);
  const SizeBounds wide{1e-9, 1e9};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> h(5), eps(5);
    for (auto& v : h) v = rng.uniform(0.01, 0.3);
    for (auto& v : eps) v = rng.uniform(0.0, 1.0);
    const double emax = *std::max_element(eps.begin(), eps.end()) * rng.uniform(1.0, 2.0);
    const auto b = size_field_values(h, eps, emax, wide);
    for (std::size_t e = 0; e < h.size(); ++e) {
      CHECK(b[e] >= h[e] / 2 - 1e-15);
      CHECK(b[e] <= h[e] + 1e-15);
    }
    auto bumped = eps;
    bumped[2] = std::min(emax, bumped[2] + rng.uniform(0.0, 0.5));
    CHECK(size_field_values(h, bumped, emax, wide)[2] <= b[2]);
  }
}

TEST_CASE("adaptive config validation") {
  AdaptiveConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.levels = 0;
  CHECK_THROWS_AS(cfg.validate(), MeshingError);
  cfg = {};
  cfg.reference_h = cfg.initial_h;
  CHECK_THROWS_AS(cfg.validate(), MeshingError);
}

TEST_CASE("run_adaptive without load keeps every level equal to the first") {
  AdaptiveConfig cfg = quick_config();
  cfg.bc.t_mag = 0.0;
  const auto r = run_adaptive(testutil::unit_square(), cfg);
  REQUIRE(r.meshes.size() == 4);
  for (const auto& m : r.meshes) {
    CHECK(m.vertices == r.meshes[0].vertices);
    CHECK(m.quads == r.meshes[0].quads);
  }
}

TEST_CASE("run_adaptive refines toward the L-shape reentrant corner") {
  const DomainSpec lshape = testutil::l_shape();
  const auto r = run_adaptive(lshape, quick_config());
  REQUIRE(r.meshes.size() == 4);
  double prev = mean_diameter_near(r.meshes[0], {0.5, 0.5}, 0.1);
  for (std::size_t l = 1; l < r.meshes.size(); ++l) {
    const double d = mean_diameter_near(r.meshes[l], {0.5, 0.5}, 0.1);
    CHECK(d < prev);
    prev = d;
  }
  for (const auto& m : r.meshes) CHECK(inspect_mesh(m, &lshape).ok());
}

TEST_CASE("run_adaptive lowers the energy-norm error on a convex domain") {
  const DomainSpec d = generate_domain({0, 0, 0}, 11);
  const auto r = run_adaptive(d, quick_config());
  REQUIRE(r.e_rel.size() == 4);
  CHECK(r.e_rel.back() <= r.e_rel.front());
  CHECK(r.final_solution.mesh.quads == r.final_mesh().quads);
}

TEST_CASE("run_adaptive is deterministic") {
  AdaptiveConfig cfg = quick_config();
  cfg.levels = 1;
  const DomainSpec d = generate_domain({1, 1, 0}, 5);
  const auto a = run_adaptive(d, cfg), b = run_adaptive(d, cfg);
  CHECK(a.final_mesh().vertices == b.final_mesh().vertices);
  CHECK(a.e_rel == b.e_rel);
}

TEST_CASE("density of uniform meshes at the clamp endpoints") {
  const DomainSpec sq = testutil::unit_square();
  const GrayImage coarse = density_from_mesh(mesh_uniform(sq, 0.25), sq);
  for (float v : coarse.data()) CHECK(v == 1.0f);

  DomainSpec small = sq;
  small.geom.outer = testutil::rect(0.2, 0.2, 0.4, 0.4);
  const GrayImage fine = density_from_mesh(mesh_uniform(small, 0.004), small);
  const GrayImage geo = rasterize_domain(small, 60);
  int inside = 0;
  for (int r = 0; r < 60; ++r)
    for (int c = 0; c < 60; ++c) {
      if (geo.at(r, c) == 1.0f) {
        CHECK(fine.at(r, c) == 0.0f);
        ++inside;
      }
      const Vec2 p = fine.pixel_center(r, c);
      if (p.x < 0.19 || p.x > 0.41 || p.y < 0.19 || p.y > 0.41) CHECK(fine.at(r, c) == 1.0f);
    }
  CHECK(inside > 100);
}

TEST_CASE("density counts pixels straddling the boundary as inside") {
  // Hole edges at 0.305 and 0.695 cut through pixel interiors at 60 pixels.
  const DomainSpec d = testutil::square_with_hole(0.39);
  const GrayImage img = density_from_mesh(mesh_uniform(d, 0.02), d);
  const GrayImage geo = rasterize_domain(d, 60);
  int straddling = 0;
  for (int r = 0; r < 60; ++r)
    for (int c = 0; c < 60; ++c) {
      const Vec2 p = img.pixel_center(r, c);
      const double half = 0.5 / 60;
      auto within = [&](double v) { return v - half >= 0.305 && v + half <= 0.695; };
      const bool deep_in_hole = within(p.x) && within(p.y);
      if (deep_in_hole) CHECK(img.at(r, c) == 1.0f);
      if (geo.at(r, c) == 0.0f && !deep_in_hole) {
        CHECK(img.at(r, c) < 1.0f);
        ++straddling;
      }
    }
  CHECK(straddling > 0);
}

TEST_CASE("density of a two-zone mesh is lower on the fine side") {
  const DomainSpec sq = testutil::unit_square();
  const auto field = SizingField::from_function([](Vec2 p) { return p.x < 0.5 ? 0.02 : 0.2; });
  const GrayImage img = density_from_mesh(mesh_from_field(sq, field), sq);
  double left = 0.0, right = 0.0;
  for (int r = 0; r < 60; ++r)
    for (int c = 0; c < 60; ++c) (c < 30 ? left : right) += img.at(r, c);
  CHECK(left < right);
}

TEST_CASE("density round trip through a mesh correlates with the input image") {
  const DomainSpec d = generate_domain({1, 0, 0}, 3);
  const GrayImage geo = rasterize_domain(d, 60);
  GrayImage input(60, 60, 1.0f);
  for (int r = 0; r < 60; ++r)
    for (int c = 0; c < 60; ++c) {
      const Vec2 p = input.pixel_center(r, c);
      input.at(r, c) = static_cast<float>(0.1 + 0.5 * (0.5 + 0.5 * std::sin(3.0 * p.x) * std::cos(2.0 * p.y)));
    }
  const QuadMesh m = mesh_from_field(d, SizingField::from_image(input, geo));
  const GrayImage out = density_from_mesh(m, d);
  std::vector<double> a, b;
  for (int r = 0; r < 60; ++r)
    for (int c = 0; c < 60; ++c)
      if (geo.at(r, c) == 1.0f) {
        a.push_back(input.at(r, c));
        b.push_back(out.at(r, c));
      }
  CHECK(pearson(a, b) >= 0.8);
}
