#include <algorithm>
#include <cmath>

#include "meshdens/adaptive.hpp"
#include "meshdens/imaging.hpp"

namespace meshdens {

void AdaptiveConfig::validate() const {
  if (levels < 1) throw MeshingError("adaptive: levels must be at least 1");
  if (!(reference_h > 0.0 && reference_h < initial_h)) throw MeshingError("adaptive: need 0 < reference_h < initial_h");
  if (!(reference_h >= bounds.h_min && initial_h <= bounds.h_max))
    throw MeshingError("adaptive: reference_h and initial_h must lie within the size bounds");
}

std::vector<double> size_field_values(std::span<const double> h, std::span<const double> eps_avg, double eps_max,
                                      SizeBounds bounds) {
  if (h.size() != eps_avg.size()) throw MeshingError("size_field_values: length mismatch");
  std::vector<double> b(h.size());
  for (std::size_t e = 0; e < h.size(); ++e) {
    const double ratio = eps_max > 0.0 ? eps_avg[e] / eps_max : 0.0;
    b[e] = bounds.clamp(h[e] * (1.0 - ratio / 2.0));
  }
  return b;
}

SizeFieldUpdate size_field_update(const QuadMesh& mesh, std::span<const double> vm_coarse,
                                  std::span<const double> vm_fine_at_vertices, SizeBounds bounds) {
  const std::size_t nv = mesh.vertices.size();
  if (vm_coarse.size() != nv || vm_fine_at_vertices.size() != nv)
    throw MeshingError("size_field_update: one von Mises value per vertex required");
  std::vector<double> err(nv);
  double eps_max = 0.0;
  for (std::size_t v = 0; v < nv; ++v) {
    err[v] = std::abs(vm_coarse[v] - vm_fine_at_vertices[v]);
    eps_max = std::max(eps_max, err[v]);
  }
  std::vector<double> h(mesh.quads.size()), avg(mesh.quads.size());
  for (std::size_t q = 0; q < mesh.quads.size(); ++q) {
    h[q] = mesh.quad_max_edge(q);
    double s = 0.0;
    for (int v : mesh.quads[q]) s += err[static_cast<std::size_t>(v)];
    avg[q] = 0.25 * s;
  }
  SizeFieldUpdate out;
  out.eps_max = eps_max;
  out.values = size_field_values(h, avg, eps_max, bounds);
  out.field = SizingField::from_elements(mesh, out.values, bounds);
  return out;
}

AdaptiveResult run_adaptive(const DomainSpec& domain, const AdaptiveConfig& cfg) {
  cfg.validate();
  AdaptiveResult r;
  auto level_error = [](int level, const std::exception& e) {
    return MeshingError("adaptive level " + std::to_string(level) + ": " + e.what());
  };

  QuadMesh fine = mesh_uniform(domain, cfg.reference_h, cfg.meshing, cfg.bounds);
  fine.label = "reference";
  try {
    r.reference = solve_elasticity(fine, cfg.material, cfg.bc);
  } catch (const std::exception& e) {
    throw MeshingError(std::string("adaptive reference solve: ") + e.what());
  }
  const MeshLocator fine_locator(r.reference.mesh);

  QuadMesh mesh = mesh_uniform(domain, cfg.initial_h, cfg.meshing, cfg.bounds);
  mesh.label = "level 0";
  for (int level = 0;; ++level) {
    FemField sol;
    try {
      sol = solve_elasticity(mesh, cfg.material, cfg.bc);
    } catch (const std::exception& e) {
      throw level_error(level, e);
    }
    r.e_rel.push_back(energy_norm_error(sol, r.reference, cfg.material));
    r.meshes.push_back(mesh);
    if (level == cfg.levels) {
      r.final_solution = std::move(sol);
      break;
    }
    std::vector<double> fine_vm(mesh.vertices.size());
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) fine_vm[v] = r.reference.vm_at(fine_locator.locate(mesh.vertices[v]));
    const SizeFieldUpdate upd = size_field_update(mesh, sol.vm_nodal, fine_vm, cfg.bounds);
    if (upd.eps_max == 0.0) {
      // Coarse and fine agree everywhere: nothing to refine.
      for (int rest = level + 1; rest <= cfg.levels; ++rest) {
        r.meshes.push_back(mesh);
        r.e_rel.push_back(r.e_rel.back());
      }
      r.final_solution = std::move(sol);
      break;
    }
    try {
      mesh = mesh_from_field(domain, upd.field, cfg.meshing);
    } catch (const std::exception& e) {
      throw level_error(level + 1, e);
    }
    mesh.label = "level " + std::to_string(level + 1);
  }
  return r;
}

GrayImage density_from_mesh(const QuadMesh& mesh, const DomainSpec& domain, int res, SizeBounds bounds) {
  GrayImage img(res, res, 1.0f);
  const MeshLocator loc(mesh);
  for (int r = 0; r < res; ++r) {
    for (int c = 0; c < res; ++c) {
      for (Vec2 p : pixel_probes(img, r, c)) {
        if (!point_in_geometry(p, domain.geom)) continue;
        const auto hit = loc.locate(p);
        if (hit.quad < 0) continue;
        img.at(r, c) = static_cast<float>(bounds.to_density(mesh.element_size(static_cast<std::size_t>(hit.quad))));
        break;
      }
    }
  }
  return img;
}

}  // namespace meshdens
