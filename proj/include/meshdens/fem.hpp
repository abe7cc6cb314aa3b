#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <array>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "meshdens/mesh.hpp"

namespace meshdens {

class FemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using SparseMatrix = Eigen::SparseMatrix<double>;

struct Material {
  double E = 1000.0;
  double nu = 0.3;

  double lambda() const { return nu * E / ((1.0 + nu) * (1.0 - 2.0 * nu)); }
  double mu() const { return E / (2.0 * (1.0 + nu)); }
  /// Plane-stress constitutive matrix in Voigt order (xx, yy, xy).
  Eigen::Matrix3d D() const;
  void validate() const;
};

using VectorField = std::function<Vec2(Vec2)>;

struct BoundaryData {
  /// Prescribed displacement on Dirichlet vertices.
  VectorField u0 = [](Vec2) { return Vec2{}; };
  /// Pressure magnitude: traction t = t_mag * n on Neumann edges, n the outward normal.
  double t_mag = 10.0;
};

/// Full and reduced systems. Reduced unknowns are the free DOFs (2 per vertex, x then y).
struct LinearSystem {
  SparseMatrix K_full;
  Eigen::VectorXd F_full;
  SparseMatrix K;
  Eigen::VectorXd F;
  std::vector<int> free_index;  // full DOF -> reduced index, -1 if prescribed
  Eigen::VectorXd lift;         // prescribed values on Dirichlet DOFs, 0 elsewhere

  std::size_t free_dofs() const { return static_cast<std::size_t>(F.size()); }
};

LinearSystem assemble(const QuadMesh& mesh, const Material& mat, const BoundaryData& bc,
                      const VectorField& body_force = nullptr);

struct SolverOptions {
  double tolerance = 1e-10;  // relative residual
  int max_iterations = 20000;
};

struct SolveStats {
  int iterations = 0;
  double residual = 0.0;
};

/// Jacobi-preconditioned conjugate gradients on an SPD system.
Eigen::VectorXd solve(const SparseMatrix& K, const Eigen::VectorXd& F, const SolverOptions& opts = {},
                      SolveStats* stats = nullptr);
/// Full displacement vector (free DOFs solved, prescribed DOFs from the lift).
Eigen::VectorXd solve(const LinearSystem& sys, const SolverOptions& opts = {}, SolveStats* stats = nullptr);

/// Voigt stress (xx, yy, xy).
using Stress = std::array<double, 3>;

double von_mises(const Stress& s);

struct FemField {
  QuadMesh mesh;
  std::vector<Vec2> u;
  std::vector<Stress> sigma_nodal;
  std::vector<double> vm_nodal;
  /// Gauss-point stresses extrapolated to each element's corners.
  std::vector<std::array<Stress, 4>> sigma_corner;

  /// Element stress field (bilinear through the Gauss values) at reference coordinates.
  Stress element_stress(std::size_t q, double xi, double eta) const;
  /// Nodal von Mises interpolated at a located point.
  double vm_at(const MeshLocator::Hit& hit) const;
};

FemField recover_stress(const QuadMesh& mesh, const Eigen::VectorXd& u, const Material& mat);

/// assemble + solve + recover_stress.
FemField solve_elasticity(const QuadMesh& mesh, const Material& mat = {}, const BoundaryData& bc = {},
                          const VectorField& body_force = nullptr, SolveStats* stats = nullptr);

/// Reactions K u - F at every full DOF (nonzero only on prescribed DOFs at convergence).
Eigen::VectorXd reactions(const LinearSystem& sys, const Eigen::VectorXd& u_full);

/// Relative energy-norm error of the coarse element stresses against the
/// reference, integrated with 2x2 Gauss points on the reference mesh.
double energy_norm_error(const FemField& coarse, const FemField& reference, const Material& mat);
/// Same against an analytic stress field, integrated on the coarse mesh.
double energy_norm_error(const FemField& coarse, const std::function<Stress(Vec2)>& exact, const Material& mat);

/// Table "vertex x y ux uy sxx syy sxy vm".
void write_solution(std::ostream& os, const FemField& field);

}  // namespace meshdens
