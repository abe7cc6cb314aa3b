#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "meshdens/geometry.hpp"

namespace meshdens {

enum class BoundaryTag : std::uint8_t { free = 0, dirichlet = 1, neumann = 2, hole = 3 };

const char* to_string(BoundaryTag tag);
BoundaryTag parse_boundary_tag(const std::string& s);

/// Boundary edge oriented with the domain interior on its left.
struct BoundaryEdge {
  int a = 0;
  int b = 0;
  BoundaryTag tag = BoundaryTag::free;
};

struct TriangleMesh {
  std::vector<Vec2> vertices;
  std::vector<std::array<int, 3>> triangles;  // CCW
  std::vector<BoundaryEdge> boundary;
};

struct QuadMesh {
  std::vector<Vec2> vertices;
  std::vector<std::array<int, 4>> quads;  // CCW
  std::vector<BoundaryEdge> boundary;
  /// Sizing-field value each quad was generated under; empty when unknown.
  std::vector<double> target_size;
  std::string label;

  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_quads() const { return quads.size(); }
  /// Flags vertices touching a Dirichlet-tagged boundary edge.
  std::vector<char> dirichlet_mask() const;
  /// 2 x (number of vertices not on the Dirichlet boundary).
  std::size_t dofs() const;
  double quad_area(std::size_t q) const;
  double quad_diameter(std::size_t q) const;
  double quad_max_edge(std::size_t q) const;
  Vec2 quad_centroid(std::size_t q) const;
  /// Element size used for sizing: the recorded target if present, else the max edge.
  double element_size(std::size_t q) const;
  double area() const;
};

/// Bilinear shape functions on the reference square [-1, 1]^2, CCW corners.
std::array<double, 4> bilinear_shape(double xi, double eta);

/// Jacobian determinant of a quad at each corner (bilinear map).
std::array<double, 4> corner_jacobians(const std::array<Vec2, 4>& p);

/// Point location in a quad mesh through a uniform bucket grid.
class MeshLocator {
 public:
  explicit MeshLocator(const QuadMesh& mesh);

  struct Hit {
    int quad = -1;
    double xi = 0.0;
    double eta = 0.0;
    bool exact = false;  // false when the nearest-element fallback was used
  };

  /// Containing element and reference coordinates; falls back to the nearest
  /// element (clamped reference coordinates) for points outside the mesh.
  Hit locate(Vec2 p) const;

  const QuadMesh& mesh() const { return *mesh_; }

 private:
  bool inverse_map(int q, Vec2 p, double& xi, double& eta) const;

  const QuadMesh* mesh_;
  Vec2 lo_, hi_;
  int nx_ = 1, ny_ = 1;
  std::vector<std::vector<int>> buckets_;
};

// Mesh text format: "vertices n" + n "x y"; "quads m" + m "i0 i1 i2 i3";
// "bedges b" + b "i j tag".
void write_mesh(std::ostream& os, const QuadMesh& mesh);
QuadMesh read_mesh(std::istream& is);
void save_mesh(const std::string& path, const QuadMesh& mesh);
QuadMesh load_mesh(const std::string& path);

}  // namespace meshdens
