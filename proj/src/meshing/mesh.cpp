#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>

#include "meshdens/mesh.hpp"

namespace meshdens {

const char* to_string(BoundaryTag tag) {
  switch (tag) {
    case BoundaryTag::free: return "free";
    case BoundaryTag::dirichlet: return "dirichlet";
    case BoundaryTag::neumann: return "neumann";
    case BoundaryTag::hole: return "hole";
  }
  return "free";
}

BoundaryTag parse_boundary_tag(const std::string& s) {
  if (s == "free") return BoundaryTag::free;
  if (s == "dirichlet") return BoundaryTag::dirichlet;
  if (s == "neumann") return BoundaryTag::neumann;
  if (s == "hole") return BoundaryTag::hole;
  throw GeometryError("unknown boundary tag '" + s + "'");
}

std::vector<char> QuadMesh::dirichlet_mask() const {
  std::vector<char> mask(vertices.size(), 0);
  for (const auto& e : boundary) {
    if (e.tag == BoundaryTag::dirichlet) {
      mask[static_cast<std::size_t>(e.a)] = 1;
      mask[static_cast<std::size_t>(e.b)] = 1;
    }
  }
  return mask;
}

std::size_t QuadMesh::dofs() const {
  const auto mask = dirichlet_mask();
  return 2 * static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 0));
}

double QuadMesh::quad_area(std::size_t q) const {
  const auto& v = quads[q];
  double a = 0.0;
  for (int i = 0; i < 4; ++i) a += cross(vertices[v[i]], vertices[v[(i + 1) % 4]]);
  return 0.5 * a;
}

double QuadMesh::quad_diameter(std::size_t q) const {
  const auto& v = quads[q];
  double d = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) d = std::max(d, dist(vertices[v[i]], vertices[v[j]]));
  return d;
}

double QuadMesh::quad_max_edge(std::size_t q) const {
  const auto& v = quads[q];
  double d = 0.0;
  for (int i = 0; i < 4; ++i) d = std::max(d, dist(vertices[v[i]], vertices[v[(i + 1) % 4]]));
  return d;
}

Vec2 QuadMesh::quad_centroid(std::size_t q) const {
  const auto& v = quads[q];
  Vec2 c;
  for (int i = 0; i < 4; ++i) c += vertices[v[i]];
  return 0.25 * c;
}

double QuadMesh::element_size(std::size_t q) const {
  return target_size.size() == quads.size() ? target_size[q] : quad_max_edge(q);
}

double QuadMesh::area() const {
  double a = 0.0;
  for (std::size_t q = 0; q < quads.size(); ++q) a += quad_area(q);
  return a;
}

std::array<double, 4> bilinear_shape(double xi, double eta) {
  return {0.25 * (1 - xi) * (1 - eta), 0.25 * (1 + xi) * (1 - eta), 0.25 * (1 + xi) * (1 + eta),
          0.25 * (1 - xi) * (1 + eta)};
}

std::array<double, 4> corner_jacobians(const std::array<Vec2, 4>& p) {
  // At corner i the bilinear Jacobian is spanned by the two incident edges.
  std::array<double, 4> j{};
  for (int i = 0; i < 4; ++i) j[i] = cross(p[(i + 1) % 4] - p[i], p[(i + 3) % 4] - p[i]);
  return j;
}

// ---------------------------------------------------------------------------

MeshLocator::MeshLocator(const QuadMesh& mesh) : mesh_(&mesh) {
  lo_ = {std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
  hi_ = {std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};
  for (auto v : mesh.vertices) {
    lo_.x = std::min(lo_.x, v.x);
    lo_.y = std::min(lo_.y, v.y);
    hi_.x = std::max(hi_.x, v.x);
    hi_.y = std::max(hi_.y, v.y);
  }
  const double n = std::max<double>(1.0, std::sqrt(static_cast<double>(mesh.quads.size())));
  nx_ = ny_ = std::clamp(static_cast<int>(n), 1, 512);
  buckets_.assign(static_cast<std::size_t>(nx_ * ny_), {});
  const double wx = std::max(hi_.x - lo_.x, 1e-300), wy = std::max(hi_.y - lo_.y, 1e-300);
  auto cell = [&](double v, double lo, double w, int n) {
    return std::clamp(static_cast<int>((v - lo) / w * n), 0, n - 1);
  };
  for (std::size_t q = 0; q < mesh.quads.size(); ++q) {
    Vec2 qlo = mesh.vertices[mesh.quads[q][0]], qhi = qlo;
    for (int k = 1; k < 4; ++k) {
      const Vec2 v = mesh.vertices[mesh.quads[q][k]];
      qlo.x = std::min(qlo.x, v.x);
      qlo.y = std::min(qlo.y, v.y);
      qhi.x = std::max(qhi.x, v.x);
      qhi.y = std::max(qhi.y, v.y);
    }
    const int i0 = cell(qlo.x, lo_.x, wx, nx_), i1 = cell(qhi.x, lo_.x, wx, nx_);
    const int j0 = cell(qlo.y, lo_.y, wy, ny_), j1 = cell(qhi.y, lo_.y, wy, ny_);
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) buckets_[static_cast<std::size_t>(j * nx_ + i)].push_back(static_cast<int>(q));
  }
}

bool MeshLocator::inverse_map(int q, Vec2 p, double& xi, double& eta) const {
  const auto& v = mesh_->quads[static_cast<std::size_t>(q)];
  const Vec2 x0 = mesh_->vertices[v[0]], x1 = mesh_->vertices[v[1]], x2 = mesh_->vertices[v[2]],
             x3 = mesh_->vertices[v[3]];
  xi = 0.0;
  eta = 0.0;
  for (int it = 0; it < 30; ++it) {
    const auto n = bilinear_shape(xi, eta);
    const Vec2 x = n[0] * x0 + n[1] * x1 + n[2] * x2 + n[3] * x3;
    const Vec2 dxi = 0.25 * ((1 - eta) * (x1 - x0) + (1 + eta) * (x2 - x3));
    const Vec2 deta = 0.25 * ((1 - xi) * (x3 - x0) + (1 + xi) * (x2 - x1));
    const double det = cross(dxi, deta);
    if (std::abs(det) < 1e-300) return false;
    const Vec2 r = p - x;
    const double dx = cross(r, deta) / det;
    const double de = cross(dxi, r) / det;
    xi += dx;
    eta += de;
    if (std::abs(dx) + std::abs(de) < 1e-14) break;
    if (std::abs(xi) > 10 || std::abs(eta) > 10) return false;
  }
  constexpr double tol = 1e-9;
  if (!(std::abs(xi) <= 1.0 + tol && std::abs(eta) <= 1.0 + tol)) return false;
  const auto n = bilinear_shape(xi, eta);
  const Vec2 x = n[0] * x0 + n[1] * x1 + n[2] * x2 + n[3] * x3;
  return dist(x, p) <= 1e-10 * (dist(x0, x2) + dist(x1, x3));
}

MeshLocator::Hit MeshLocator::locate(Vec2 p) const {
  Hit hit;
  const double wx = std::max(hi_.x - lo_.x, 1e-300), wy = std::max(hi_.y - lo_.y, 1e-300);
  if (p.x >= lo_.x && p.x <= hi_.x && p.y >= lo_.y && p.y <= hi_.y) {
    const int i = std::clamp(static_cast<int>((p.x - lo_.x) / wx * nx_), 0, nx_ - 1);
    const int j = std::clamp(static_cast<int>((p.y - lo_.y) / wy * ny_), 0, ny_ - 1);
    for (int q : buckets_[static_cast<std::size_t>(j * nx_ + i)]) {
      double xi, eta;
      if (inverse_map(q, p, xi, eta)) {
        hit.quad = q;
        hit.xi = std::clamp(xi, -1.0, 1.0);
        hit.eta = std::clamp(eta, -1.0, 1.0);
        hit.exact = true;
        return hit;
      }
    }
  }
  // Nearest element by centroid distance, searching outward ring by ring.
  double best = std::numeric_limits<double>::infinity();
  const int ci = std::clamp(static_cast<int>((p.x - lo_.x) / wx * nx_), 0, nx_ - 1);
  const int cj = std::clamp(static_cast<int>((p.y - lo_.y) / wy * ny_), 0, ny_ - 1);
  const int max_ring = std::max(nx_, ny_);
  for (int ring = 0; ring <= max_ring; ++ring) {
    for (int j = cj - ring; j <= cj + ring; ++j) {
      for (int i = ci - ring; i <= ci + ring; ++i) {
        if (i < 0 || j < 0 || i >= nx_ || j >= ny_) continue;
        if (std::max(std::abs(i - ci), std::abs(j - cj)) != ring) continue;
        for (int q : buckets_[static_cast<std::size_t>(j * nx_ + i)]) {
          const double d = dist(p, mesh_->quad_centroid(static_cast<std::size_t>(q)));
          if (d < best) {
            best = d;
            hit.quad = q;
          }
        }
      }
    }
    // Stop one ring after the first candidate: bucket cells bound the search.
    if (hit.quad >= 0 && ring >= 1) break;
  }
  if (hit.quad >= 0) {
    double xi, eta;
    inverse_map(hit.quad, p, xi, eta);
    hit.xi = std::isfinite(xi) ? std::clamp(xi, -1.0, 1.0) : 0.0;
    hit.eta = std::isfinite(eta) ? std::clamp(eta, -1.0, 1.0) : 0.0;
  }
  return hit;
}

// ---------------------------------------------------------------------------

void write_mesh(std::ostream& os, const QuadMesh& mesh) {
  char buf[96];
  os << "vertices " << mesh.vertices.size() << '\n';
  for (auto v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", v.x, v.y);
    os << buf;
  }
  os << "quads " << mesh.quads.size() << '\n';
  for (const auto& q : mesh.quads) os << q[0] << ' ' << q[1] << ' ' << q[2] << ' ' << q[3] << '\n';
  os << "bedges " << mesh.boundary.size() << '\n';
  for (const auto& e : mesh.boundary) os << e.a << ' ' << e.b << ' ' << to_string(e.tag) << '\n';
  if (mesh.target_size.size() == mesh.quads.size() && !mesh.quads.empty()) {
    os << "sizes " << mesh.target_size.size() << '\n';
    for (double s : mesh.target_size) {
      std::snprintf(buf, sizeof buf, "%.17g\n", s);
      os << buf;
    }
  }
}

QuadMesh read_mesh(std::istream& is) {
  QuadMesh mesh;
  std::string key;
  std::size_t n = 0;
  while (is >> key >> n) {
    if (key == "vertices") {
      mesh.vertices.resize(n);
      for (auto& v : mesh.vertices) is >> v.x >> v.y;
    } else if (key == "quads") {
      mesh.quads.resize(n);
      for (auto& q : mesh.quads) is >> q[0] >> q[1] >> q[2] >> q[3];
    } else if (key == "bedges") {
      mesh.boundary.resize(n);
      for (auto& e : mesh.boundary) {
        std::string tag;
        is >> e.a >> e.b >> tag;
        e.tag = parse_boundary_tag(tag);
      }
    } else if (key == "sizes") {
      mesh.target_size.resize(n);
      for (auto& s : mesh.target_size) is >> s;
    } else {
      throw GeometryError("mesh file: unknown section '" + key + "'");
    }
    if (!is) throw GeometryError("mesh file: truncated section '" + key + "'");
  }
  const auto nv = static_cast<int>(mesh.vertices.size());
  for (const auto& q : mesh.quads)
    for (int i : q)
      if (i < 0 || i >= nv) throw GeometryError("mesh file: vertex index out of range");
  return mesh;
}

void save_mesh(const std::string& path, const QuadMesh& mesh) {
  std::ofstream os(path);
  if (!os) throw GeometryError("cannot write " + path);
  write_mesh(os, mesh);
}

QuadMesh load_mesh(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw GeometryError("cannot read " + path);
  return read_mesh(is);
}

}  // namespace meshdens
