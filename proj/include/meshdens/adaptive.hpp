#pragma once

#include <span>
#include <vector>

#include "meshdens/fem.hpp"
#include "meshdens/image.hpp"
#include "meshdens/meshing.hpp"

namespace meshdens {

struct AdaptiveConfig {
  int levels = 3;
  SizeBounds bounds;
  double reference_h = 2 * SizeBounds{}.h_min;
  double initial_h = 0.12;
  MeshingOptions meshing;
  Material material;
  BoundaryData bc;

  void validate() const;
};

/// B = h (1 - eps_avg / (2 eps_max)) per element, clamped to the bounds;
/// B = h when eps_max is zero.
std::vector<double> size_field_values(std::span<const double> h, std::span<const double> eps_avg, double eps_max,
                                      SizeBounds bounds = {});

struct SizeFieldUpdate {
  std::vector<double> values;  // per element of the level mesh
  double eps_max = 0.0;
  SizingField field;
};

/// Vertex errors |vm_coarse - vm_fine| averaged per element; h is the element's longest edge.
SizeFieldUpdate size_field_update(const QuadMesh& mesh, std::span<const double> vm_coarse,
                                  std::span<const double> vm_fine_at_vertices, SizeBounds bounds = {});

struct AdaptiveResult {
  std::vector<QuadMesh> meshes;  // M_0 .. M_levels
  std::vector<double> e_rel;     // energy-norm error of each mesh against M*
  FemField reference;            // solution on M*
  FemField final_solution;

  const QuadMesh& final_mesh() const { return meshes.back(); }
};

AdaptiveResult run_adaptive(const DomainSpec& domain, const AdaptiveConfig& cfg = {});

/// Relative element size per pixel: (size - h_min) / (h_max - h_min) for
/// pixels touching the domain, 1 elsewhere. Size is the element's target size.
GrayImage density_from_mesh(const QuadMesh& mesh, const DomainSpec& domain, int res = 60, SizeBounds bounds = {});

}  // namespace meshdens
