#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "meshdens/geometry.hpp"
#include "meshdens/mesh.hpp"
#include "meshdens/sizing.hpp"

namespace meshdens {

class MeshingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MeshingOptions {
  /// Triangles above this count abort the refinement.
  std::size_t max_triangles = 200000;
  double min_angle_deg = 20.0;
  /// Lipschitz rate for field grading (|grad h| bound).
  double grading = 0.5;
  int smoothing_passes = 3;
};

/// Constrained Delaunay triangulation of the domain (outer minus holes),
/// refined until every triangle's longest edge is at most field(centroid).
TriangleMesh triangulate(const DomainSpec& domain, const SizingField& field,
                         const MeshingOptions& opts = {});

/// Splits every triangle into three quads through its centroid and edge midpoints.
QuadMesh quadrangulate(const TriangleMesh& tri);

/// Quad mesh whose elements have longest edges bounded by the field.
QuadMesh mesh_from_field(const DomainSpec& domain, const SizingField& field,
                         const MeshingOptions& opts = {});

QuadMesh mesh_uniform(const DomainSpec& domain, double h, const MeshingOptions& opts = {},
                      SizeBounds bounds = {});

struct DofMatchResult {
  QuadMesh mesh;
  double scale = 1.0;
  double deviation = 0.0;  // |dofs - target| / target
  int iterations = 0;
};

/// Bisects a global scale on `field` until the mesh DOF count is within
/// `tolerance` of the target.
DofMatchResult dof_match(const DomainSpec& domain, const SizingField& field, std::size_t target_dofs,
                         double tolerance = 0.05, const MeshingOptions& opts = {});

/// Initial guess of a constant size giving roughly `target_dofs` on `domain`.
double uniform_size_for_dofs(const DomainSpec& domain, std::size_t target_dofs);

struct MeshReport {
  bool conforming = true;
  bool positive = true;
  bool boundary_fidelity = true;
  double min_corner_jacobian = 0.0;
  double sizing_conformity = 1.0;  // fraction of quads with diameter <= 1.5 h(centroid)
  std::string message;

  bool ok() const { return conforming && positive && boundary_fidelity; }
};

/// Conformity, orientation and boundary-fidelity checks (domain may be null).
MeshReport inspect_mesh(const QuadMesh& mesh, const DomainSpec* domain = nullptr,
                        const SizingField* field = nullptr);

/// Structured n x n quad grid of [x0,x1] x [y0,y1]; every boundary edge
/// gets `tag`. Used for verification problems.
QuadMesh structured_grid(int nx, int ny, Vec2 lo, Vec2 hi, BoundaryTag tag = BoundaryTag::dirichlet);

}  // namespace meshdens
