#pragma once

#include <array>

#include "meshdens/geometry.hpp"
#include "meshdens/image.hpp"

namespace meshdens {

inline constexpr int kDefaultResolution = 60;

enum class EdgeKind { dirichlet, neumann };

/// 1 where the pixel center lies inside the domain (outer minus holes), else 0.
GrayImage rasterize_domain(const DomainSpec& domain, int res = kDefaultResolution);

/// Pixel center first, then its four corners and four edge midpoints.
std::array<Vec2, 9> pixel_probes(const GrayImage& img, int row, int col);

/// 1 where any probe of the pixel lies in the domain: pixels at least
/// partially inside. Used for masking predictions and targets.
GrayImage rasterize_support(const DomainSpec& domain, int res = kDefaultResolution);

/// 1 where the pixel center is within half a pixel diagonal of the segment.
GrayImage rasterize_segment(Vec2 a, Vec2 b, int res = kDefaultResolution);
GrayImage rasterize_edge(const DomainSpec& domain, EdgeKind kind, int res = kDefaultResolution);

/// The three network input channels.
struct InputStack {
  GrayImage geometry;
  GrayImage dirichlet;
  GrayImage neumann;
};

/// Pixels claimed by both edge masks go to the nearer edge, so the masks are disjoint.
InputStack make_input_stack(const DomainSpec& domain, int res = kDefaultResolution);

/// Prediction with every pixel outside the domain set to 1.
GrayImage preprocess_prediction(const GrayImage& pred, const GrayImage& geometry);

struct PostprocessConfig {
  float threshold = 0.02f;
  float factor = 0.25f;
};

/// Piecewise-linear rescale: v < t maps to v*f, [t, 1] maps linearly onto [t*f, 1].
float postprocess_value(float v, PostprocessConfig cfg = {});
GrayImage postprocess_scale(const GrayImage& pred, PostprocessConfig cfg = {});

/// ||ground - preprocessed(pred)||_F / ||ground||_F.
double epsilon_rel(const GrayImage& ground, const GrayImage& pred, const GrayImage& geometry);

}  // namespace meshdens
