#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "meshdens/geometry.hpp"
#include "meshdens/image.hpp"
#include "meshdens/mesh.hpp"

namespace meshdens {

/// Global clamp on element sizes; also the endpoints of the density map.
struct SizeBounds {
  double h_min = 0.004;
  double h_max = 0.25;

  double clamp(double h) const;
  /// Relative density in [0, 1] for an element size.
  double to_density(double h) const;
  /// Inverse of to_density; exact at both endpoints.
  double from_density(double d) const;
};

/// Target element size h(p) > 0 over the unit square. For quad meshes h is
/// the bound on a quad's longest edge.
class SizingField {
 public:
  using Fn = std::function<double(Vec2)>;

  SizingField() : SizingField(constant(SizeBounds{}.h_max)) {}

  static SizingField constant(double h, SizeBounds bounds = {});
  static SizingField from_function(Fn fn, SizeBounds bounds = {});
  /// Piecewise constant per element of `mesh`, nearest element outside it.
  static SizingField from_elements(const QuadMesh& mesh, std::vector<double> values,
                                   SizeBounds bounds = {});
  /// h(p) = h_min + I(p)(h_max - h_min), bilinear between pixel centers;
  /// pixels with mask == 0 are ignored (nearest inside pixel if none remain).
  static SizingField from_image(const GrayImage& density, const GrayImage& mask,
                                SizeBounds bounds = {});

  double operator()(Vec2 p) const;
  double raw(Vec2 p) const { return constant_ ? *constant_ : fn_(p); }

  const SizeBounds& bounds() const { return bounds_; }
  std::optional<double> constant_value() const;

  /// Same field with every value multiplied by `s` before clamping.
  SizingField scaled(double s) const;
  /// Lipschitz-limited copy: h(p) <= h(q) + rate |p - q| on a background grid.
  SizingField graded(double rate, int grid = 129) const;

 private:
  SizingField(std::optional<double> c, Fn fn, SizeBounds b) : constant_(c), fn_(std::move(fn)), bounds_(b) {}

  std::optional<double> constant_;
  Fn fn_;
  SizeBounds bounds_;
  double scale_ = 1.0;
};

}  // namespace meshdens
