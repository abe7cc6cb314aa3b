#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "meshdens/imaging.hpp"
#include "meshdens/rng.hpp"

using namespace meshdens;

TEST_CASE("full unit square rasterizes to all ones") {
  const GrayImage g = rasterize_domain(testutil::unit_square(), 60);
  CHECK(g.width() == 60);
  CHECK(g.height() == 60);
  CHECK(g.mean() == 1.0);
}

TEST_CASE("square with a centered hole of area one quarter") {
  for (int res : {60, 120}) {
    const GrayImage g = rasterize_domain(testutil::square_with_hole(0.5), res);
    CHECK(std::abs(g.mean() - 0.75) <= 2.0 / res);
  }
}

TEST_CASE("rasterization agrees with a winding-number oracle away from the boundary") {
  const DomainSpec d = generate_domain({1, 2, 0}, 4242);
  const int res = 60;
  const GrayImage g = rasterize_domain(d, res);
  Rng rng(99);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const int r = static_cast<int>(rng.below(res)), c = static_cast<int>(rng.below(res));
    const Vec2 p = g.pixel_center(r, c);
    double clearance = distance_to_boundary(p, d.outer());
    for (const auto& h : d.holes()) clearance = std::min(clearance, distance_to_boundary(p, h));
    if (clearance <= 0.5 / res) continue;
    int w = testutil::winding_number(p, d.outer());
    for (const auto& h : d.holes()) w += testutil::winding_number(p, h);  // holes are clockwise
    CHECK((g.at(r, c) == 1.0f) == (w != 0));
    ++checked;
  }
  CHECK(checked > 500);
}

TEST_CASE("bottom edge of the unit square is one pixel row") {
  const DomainSpec d = testutil::unit_square();
  const GrayImage m = rasterize_edge(d, EdgeKind::dirichlet, 60);
  for (int r = 0; r < 60; ++r)
    for (int c = 0; c < 60; ++c) CHECK(m.at(r, c) == (r == 59 ? 1.0f : 0.0f));
}

TEST_CASE("zero-length segment rasterizes to zeros") {
  const GrayImage m = rasterize_segment({0.3, 0.3}, {0.3, 0.3}, 60);
  CHECK(m.mean() == 0.0);
}

TEST_CASE("input stacks are binary with disjoint edge masks") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const DomainSpec d = generate_domain({static_cast<int>(seed % 2), static_cast<int>(seed % 3), 0}, seed);
    const InputStack s = make_input_stack(d);
    for (std::size_t i = 0; i < s.geometry.size(); ++i) {
      for (const GrayImage* img : {&s.geometry, &s.dirichlet, &s.neumann}) CHECK(((*img)[i] == 0.0f || (*img)[i] == 1.0f));
      CHECK(s.dirichlet[i] * s.neumann[i] == 0.0f);
    }
    CHECK(s.dirichlet.mean() > 0.0);
    CHECK(s.neumann.mean() > 0.0);
  }
}

TEST_CASE("preprocess_prediction masks the outside to one") {
  const GrayImage pred(60, 60, 0.3f);
  CHECK(preprocess_prediction(pred, GrayImage(60, 60, 1.0f)) == pred);
  CHECK(preprocess_prediction(pred, GrayImage(60, 60, 0.0f)) == GrayImage(60, 60, 1.0f));
  GrayImage half(60, 60, 0.0f);
  for (int r = 0; r < 60; ++r)
    for (int c = 0; c < 30; ++c) half.at(r, c) = 1.0f;
  const GrayImage out = preprocess_prediction(pred, half);
  CHECK(out.at(10, 10) == 0.3f);
  CHECK(out.at(10, 40) == 1.0f);
  CHECK_THROWS_AS(preprocess_prediction(pred, GrayImage(30, 30)), ImageError);
}

TEST_CASE("postprocess scaling") {
  CHECK(postprocess_value(0.01f) == doctest::Approx(0.0025));
  CHECK(postprocess_value(1.0f) == doctest::Approx(1.0));
  CHECK(postprocess_value(0.02f) == doctest::Approx(0.005));
  CHECK(postprocess_value(std::nextafter(0.02f, 0.0f)) == doctest::Approx(0.005).epsilon(1e-5));
  float prev = -1.0f;
  for (int i = 0; i <= 1000; ++i) {
    const float v = postprocess_value(static_cast<float>(i) / 1000.0f);
    CHECK(v >= prev);
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f + 1e-6f);
    prev = v;
  }
}

TEST_CASE("epsilon_rel closed forms") {
  const GrayImage ones(60, 60, 1.0f), geo(60, 60, 1.0f);
  CHECK(epsilon_rel(ones, ones, geo) == 0.0);
  GrayImage p = ones;
  p.at(20, 20) = 0.5f;
  CHECK(epsilon_rel(ones, p, geo) == doctest::Approx(0.5 / 60.0).epsilon(1e-12));
}

TEST_CASE("epsilon_rel ignores the prediction outside the domain") {
  const DomainSpec d = testutil::square_with_hole(0.4);
  const GrayImage geo = rasterize_domain(d);
  GrayImage ground(60, 60, 0.4f);
  for (std::size_t i = 0; i < ground.size(); ++i)
    if (geo[i] == 0.0f) ground[i] = 1.0f;
  GrayImage pred = ground;
  Rng rng(3);
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (geo[i] == 0.0f) pred[i] = static_cast<float>(rng.uniform());
  CHECK(epsilon_rel(ground, pred, geo) == 0.0);
}

TEST_CASE("GIMG and PNG round trips") {
  const auto dir = std::filesystem::temp_directory_path() / "meshdens_img_test";
  std::filesystem::create_directories(dir);
  GrayImage img(7, 5);
  Rng rng(11);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  save_gimg((dir / "a.gimg").string(), img);
  CHECK(load_image((dir / "a.gimg").string()) == img);
  save_png((dir / "a.png").string(), img);
  const GrayImage q = load_image((dir / "a.png").string());
  REQUIRE(q.same_shape(img));
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(std::abs(q[i] - img[i]) <= 0.5f / 255.0f + 1e-6f);
  CHECK_THROWS_AS(load_image((dir / "a.bmp").string()), ImageError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("support mask contains the center mask and adds straddling pixels") {
  const DomainSpec d = testutil::square_with_hole(0.39);
  const GrayImage center = rasterize_domain(d, 60), support = rasterize_support(d, 60);
  int extra = 0;
  for (std::size_t i = 0; i < center.size(); ++i) {
    CHECK(support[i] >= center[i]);
    if (support[i] > center[i]) ++extra;
  }
  // Pixels 18 and 41 along each hole side have centers in the hole but reach 0.305 / 0.695.
  CHECK(extra == 4 * 24 - 4);
  for (auto p : pixel_probes(support, 0, 0)) CHECK((p.x >= 0.0 && p.x <= 1.0 / 60 && p.y >= 1.0 - 1.0 / 60 && p.y <= 1.0));
}
