#include <Eigen/IterativeLinearSolvers>
#include <Eigen/LU>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "meshdens/fem.hpp"

namespace meshdens {

Eigen::Matrix3d Material::D() const {
  const double c = E / (1.0 - nu * nu);
  Eigen::Matrix3d d;
  d << c, c * nu, 0.0, c * nu, c, 0.0, 0.0, 0.0, c * (1.0 - nu) / 2.0;
  return d;
}

void Material::validate() const {
  if (!(E > 0.0)) throw FemError("Young's modulus must be positive");
  if (!(nu >= 0.0 && nu < 0.5)) throw FemError("Poisson's ratio must lie in [0, 0.5)");
}

namespace {

const double kGauss = 1.0 / std::sqrt(3.0);
constexpr double kXi[4] = {-1.0, 1.0, 1.0, -1.0};
constexpr double kEta[4] = {-1.0, -1.0, 1.0, 1.0};

std::array<Vec2, 4> element_corners(const QuadMesh& m, std::size_t q) {
  std::array<Vec2, 4> p;
  for (int i = 0; i < 4; ++i) p[i] = m.vertices[static_cast<std::size_t>(m.quads[q][i])];
  return p;
}

struct ShapeEval {
  std::array<double, 4> N;
  std::array<double, 4> dNdx, dNdy;
  double detJ;
  Vec2 x;
};

ShapeEval shape_eval(const std::array<Vec2, 4>& p, double xi, double eta) {
  ShapeEval s;
  s.N = bilinear_shape(xi, eta);
  double dxi[4], deta[4];
  for (int i = 0; i < 4; ++i) {
    dxi[i] = 0.25 * kXi[i] * (1.0 + kEta[i] * eta);
    deta[i] = 0.25 * kEta[i] * (1.0 + kXi[i] * xi);
  }
  double j11 = 0, j12 = 0, j21 = 0, j22 = 0;
  s.x = {};
  for (int i = 0; i < 4; ++i) {
    j11 += dxi[i] * p[i].x;
    j12 += dxi[i] * p[i].y;
    j21 += deta[i] * p[i].x;
    j22 += deta[i] * p[i].y;
    s.x += s.N[i] * p[i];
  }
  s.detJ = j11 * j22 - j12 * j21;
  for (int i = 0; i < 4; ++i) {
    s.dNdx[i] = (j22 * dxi[i] - j12 * deta[i]) / s.detJ;
    s.dNdy[i] = (-j21 * dxi[i] + j11 * deta[i]) / s.detJ;
  }
  return s;
}

Eigen::Matrix<double, 3, 8> strain_matrix(const ShapeEval& s) {
  Eigen::Matrix<double, 3, 8> B = Eigen::Matrix<double, 3, 8>::Zero();
  for (int i = 0; i < 4; ++i) {
    B(0, 2 * i) = s.dNdx[i];
    B(1, 2 * i + 1) = s.dNdy[i];
    B(2, 2 * i) = s.dNdy[i];
    B(2, 2 * i + 1) = s.dNdx[i];
  }
  return B;
}

double energy_density(const Stress& d, const Eigen::Matrix3d& Dinv) {
  const Eigen::Vector3d v(d[0], d[1], d[2]);
  return v.dot(Dinv * v);
}

}  // namespace

LinearSystem assemble(const QuadMesh& mesh, const Material& mat, const BoundaryData& bc, const VectorField& body_force) {
  mat.validate();
  const Eigen::Matrix3d D = mat.D();
  const std::size_t nv = mesh.vertices.size();
  const auto ndof = static_cast<Eigen::Index>(2 * nv);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(mesh.quads.size() * 64);
  Eigen::VectorXd F = Eigen::VectorXd::Zero(ndof);

  for (std::size_t q = 0; q < mesh.quads.size(); ++q) {
    const auto p = element_corners(mesh, q);
    Eigen::Matrix<double, 8, 8> Ke = Eigen::Matrix<double, 8, 8>::Zero();
    Eigen::Matrix<double, 8, 1> Fe = Eigen::Matrix<double, 8, 1>::Zero();
    for (int g = 0; g < 4; ++g) {
      const ShapeEval s = shape_eval(p, kXi[g] * kGauss, kEta[g] * kGauss);
      if (!(s.detJ > 0.0)) throw FemError("element " + std::to_string(q) + " is inverted (non-positive Jacobian)");
      const auto B = strain_matrix(s);
      Ke.noalias() += B.transpose() * D * B * s.detJ;
      if (body_force) {
        const Vec2 f = body_force(s.x);
        for (int i = 0; i < 4; ++i) {
          Fe(2 * i) += s.N[i] * f.x * s.detJ;
          Fe(2 * i + 1) += s.N[i] * f.y * s.detJ;
        }
      }
    }
    for (int i = 0; i < 8; ++i) {
      const int gi = 2 * mesh.quads[q][i / 2] + i % 2;
      F(gi) += Fe(i);
      for (int j = 0; j < 8; ++j) trips.emplace_back(gi, 2 * mesh.quads[q][j / 2] + j % 2, Ke(i, j));
    }
  }

  for (const auto& e : mesh.boundary) {
    if (e.tag != BoundaryTag::neumann) continue;
    const Vec2 a = mesh.vertices[static_cast<std::size_t>(e.a)], b = mesh.vertices[static_cast<std::size_t>(e.b)];
    const Vec2 d = b - a;
    const double len = norm(d);
    if (len == 0.0) continue;
    // Interior lies on the left of a->b, so the outward normal points right.
    const Vec2 n{d.y / len, -d.x / len};
    const Vec2 t = bc.t_mag * n;
    for (int v : {e.a, e.b}) {
      F(2 * v) += 0.5 * len * t.x;
      F(2 * v + 1) += 0.5 * len * t.y;
    }
  }

  LinearSystem sys;
  sys.K_full.resize(ndof, ndof);
  sys.K_full.setFromTriplets(trips.begin(), trips.end());
  sys.F_full = F;

  const auto mask = mesh.dirichlet_mask();
  sys.free_index.assign(static_cast<std::size_t>(ndof), -1);
  sys.lift = Eigen::VectorXd::Zero(ndof);
  int nfree = 0;
  for (std::size_t v = 0; v < nv; ++v) {
    if (mask[v]) {
      const Vec2 g = bc.u0(mesh.vertices[v]);
      sys.lift(static_cast<Eigen::Index>(2 * v)) = g.x;
      sys.lift(static_cast<Eigen::Index>(2 * v + 1)) = g.y;
    } else {
      sys.free_index[2 * v] = nfree++;
      sys.free_index[2 * v + 1] = nfree++;
    }
  }
  sys.F.resize(nfree);
  for (Eigen::Index i = 0; i < ndof; ++i)
    if (sys.free_index[static_cast<std::size_t>(i)] >= 0) sys.F(sys.free_index[static_cast<std::size_t>(i)]) = F(i);
  std::vector<Eigen::Triplet<double>> red;
  red.reserve(static_cast<std::size_t>(sys.K_full.nonZeros()));
  for (Eigen::Index c = 0; c < sys.K_full.outerSize(); ++c) {
    const int fc = sys.free_index[static_cast<std::size_t>(c)];
    for (SparseMatrix::InnerIterator it(sys.K_full, c); it; ++it) {
      const int fr = sys.free_index[static_cast<std::size_t>(it.row())];
      if (fr < 0) continue;
      if (fc >= 0)
        red.emplace_back(fr, fc, it.value());
      else
        sys.F(fr) -= it.value() * sys.lift(c);
    }
  }
  sys.K.resize(nfree, nfree);
  sys.K.setFromTriplets(red.begin(), red.end());
  return sys;
}

Eigen::VectorXd solve(const SparseMatrix& K, const Eigen::VectorXd& F, const SolverOptions& opts, SolveStats* stats) {
  if (K.rows() != K.cols() || K.rows() != F.size()) throw FemError("solve: dimension mismatch");
  if (F.size() == 0) return {};
  const double fnorm = F.norm();
  if (fnorm == 0.0) {
    if (stats) *stats = {};
    return Eigen::VectorXd::Zero(F.size());
  }
  Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
  cg.setTolerance(opts.tolerance);
  cg.setMaxIterations(opts.max_iterations);
  cg.compute(K);
  Eigen::VectorXd u = cg.solve(F);
  const double residual = (F - K * u).norm() / fnorm;
  if (stats) *stats = {static_cast<int>(cg.iterations()), residual};
  if (cg.info() != Eigen::Success || !(residual <= 10.0 * opts.tolerance)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "conjugate gradients did not converge in %d iterations (relative residual %.3e)",
                  static_cast<int>(cg.iterations()), residual);
    throw FemError(buf);
  }
  return u;
}

Eigen::VectorXd solve(const LinearSystem& sys, const SolverOptions& opts, SolveStats* stats) {
  const Eigen::VectorXd uf = solve(sys.K, sys.F, opts, stats);
  Eigen::VectorXd u = sys.lift;
  for (std::size_t i = 0; i < sys.free_index.size(); ++i)
    if (sys.free_index[i] >= 0) u(static_cast<Eigen::Index>(i)) = uf(sys.free_index[i]);
  return u;
}

double von_mises(const Stress& s) {
  return std::sqrt(std::max(0.0, s[0] * s[0] - s[0] * s[1] + s[1] * s[1] + 3.0 * s[2] * s[2]));
}

Stress FemField::element_stress(std::size_t q, double xi, double eta) const {
  const auto n = bilinear_shape(xi, eta);
  Stress s{};
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 3; ++k) s[k] += n[i] * sigma_corner[q][i][k];
  return s;
}

double FemField::vm_at(const MeshLocator::Hit& hit) const {
  if (hit.quad < 0) return 0.0;
  const auto n = bilinear_shape(hit.xi, hit.eta);
  const auto& c = mesh.quads[static_cast<std::size_t>(hit.quad)];
  double v = 0.0;
  for (int i = 0; i < 4; ++i) v += n[i] * vm_nodal[static_cast<std::size_t>(c[i])];
  return v;
}

FemField recover_stress(const QuadMesh& mesh, const Eigen::VectorXd& u, const Material& mat) {
  if (u.size() != static_cast<Eigen::Index>(2 * mesh.vertices.size())) throw FemError("recover_stress: size mismatch");
  const Eigen::Matrix3d D = mat.D();
  FemField f;
  f.mesh = mesh;
  f.u.resize(mesh.vertices.size());
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
    f.u[v] = {u(static_cast<Eigen::Index>(2 * v)), u(static_cast<Eigen::Index>(2 * v + 1))};
  f.sigma_corner.resize(mesh.quads.size());
  std::vector<Stress> sum(mesh.vertices.size(), Stress{});
  std::vector<double> weight(mesh.vertices.size(), 0.0);
  const double r3 = std::sqrt(3.0);

  for (std::size_t q = 0; q < mesh.quads.size(); ++q) {
    const auto p = element_corners(mesh, q);
    Eigen::Matrix<double, 8, 1> ue;
    for (int i = 0; i < 8; ++i) ue(i) = u(2 * mesh.quads[q][i / 2] + i % 2);
    Stress gp[4];
    for (int g = 0; g < 4; ++g) {
      const ShapeEval s = shape_eval(p, kXi[g] * kGauss, kEta[g] * kGauss);
      const Eigen::Vector3d sig = D * (strain_matrix(s) * ue);
      gp[g] = {sig(0), sig(1), sig(2)};
    }
    // Corners sit at +-sqrt(3) in the Gauss-point coordinate system.
    for (int c = 0; c < 4; ++c) {
      const auto n = bilinear_shape(kXi[c] * r3, kEta[c] * r3);
      Stress s{};
      for (int g = 0; g < 4; ++g)
        for (int k = 0; k < 3; ++k) s[k] += n[g] * gp[g][k];
      f.sigma_corner[q][c] = s;
    }
    const double area = mesh.quad_area(q);
    for (int c = 0; c < 4; ++c) {
      const auto v = static_cast<std::size_t>(mesh.quads[q][c]);
      for (int k = 0; k < 3; ++k) sum[v][k] += area * f.sigma_corner[q][c][k];
      weight[v] += area;
    }
  }
  f.sigma_nodal.resize(mesh.vertices.size());
  f.vm_nodal.resize(mesh.vertices.size());
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    for (int k = 0; k < 3; ++k) f.sigma_nodal[v][k] = weight[v] > 0.0 ? sum[v][k] / weight[v] : 0.0;
    f.vm_nodal[v] = von_mises(f.sigma_nodal[v]);
  }
  return f;
}

FemField solve_elasticity(const QuadMesh& mesh, const Material& mat, const BoundaryData& bc, const VectorField& body_force,
                          SolveStats* stats) {
  const LinearSystem sys = assemble(mesh, mat, bc, body_force);
  return recover_stress(mesh, solve(sys, {}, stats), mat);
}

Eigen::VectorXd reactions(const LinearSystem& sys, const Eigen::VectorXd& u_full) { return sys.K_full * u_full - sys.F_full; }

double energy_norm_error(const FemField& coarse, const FemField& reference, const Material& mat) {
  const Eigen::Matrix3d Dinv = mat.D().inverse();
  const MeshLocator loc(coarse.mesh);
  const QuadMesh& ref = reference.mesh;
  double num = 0.0, den = 0.0;
  for (std::size_t q = 0; q < ref.quads.size(); ++q) {
    const auto p = element_corners(ref, q);
    for (int g = 0; g < 4; ++g) {
      const double xi = kXi[g] * kGauss, eta = kEta[g] * kGauss;
      const ShapeEval s = shape_eval(p, xi, eta);
      const Stress sr = reference.element_stress(q, xi, eta);
      const auto hit = loc.locate(s.x);
      const Stress sc = hit.quad >= 0 ? coarse.element_stress(static_cast<std::size_t>(hit.quad), hit.xi, hit.eta) : Stress{};
      const Stress d{sr[0] - sc[0], sr[1] - sc[1], sr[2] - sc[2]};
      num += energy_density(d, Dinv) * s.detJ;
      den += energy_density(sr, Dinv) * s.detJ;
    }
  }
  if (!(den > 0.0)) return num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return std::sqrt(num / den);
}

double energy_norm_error(const FemField& coarse, const std::function<Stress(Vec2)>& exact, const Material& mat) {
  const Eigen::Matrix3d Dinv = mat.D().inverse();
  const QuadMesh& m = coarse.mesh;
  // 3x3 Gauss: the exact field is not polynomial.
  const double gp[3] = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)}, gw[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  double num = 0.0, den = 0.0;
  for (std::size_t q = 0; q < m.quads.size(); ++q) {
    const auto p = element_corners(m, q);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const ShapeEval s = shape_eval(p, gp[i], gp[j]);
        const double w = gw[i] * gw[j] * s.detJ;
        const Stress se = exact(s.x);
        const Stress sh = coarse.element_stress(q, gp[i], gp[j]);
        const Stress d{se[0] - sh[0], se[1] - sh[1], se[2] - sh[2]};
        num += energy_density(d, Dinv) * w;
        den += energy_density(se, Dinv) * w;
      }
    }
  }
  if (!(den > 0.0)) return num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return std::sqrt(num / den);
}

void write_solution(std::ostream& os, const FemField& field) {
  os << "vertex x y ux uy sxx syy sxy vm\n";
  char buf[256];
  for (std::size_t v = 0; v < field.mesh.vertices.size(); ++v) {
    const Vec2 x = field.mesh.vertices[v];
    const auto& s = field.sigma_nodal[v];
    std::snprintf(buf, sizeof buf, "%zu %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", v, x.x, x.y, field.u[v].x,
                  field.u[v].y, s[0], s[1], s[2], field.vm_nodal[v]);
    os << buf;
  }
}

}  // namespace meshdens
