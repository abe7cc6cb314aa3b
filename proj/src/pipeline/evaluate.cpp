#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

#include "meshdens/pipeline.hpp"

namespace meshdens {

Prediction mesh_from_prediction(const GrayImage& raw, const DomainSpec& domain, bool postprocess,
                                const PipelineConfig& cfg) {
  if (raw.width() != cfg.resolution || raw.height() != cfg.resolution)
    throw PipelineError("prediction is " + std::to_string(raw.width()) + "x" + std::to_string(raw.height()) +
                        ", expected " + std::to_string(cfg.resolution) + "x" + std::to_string(cfg.resolution));
  const GrayImage support = rasterize_support(domain, cfg.resolution);
  Prediction p;
  p.raw = raw;
  p.density = preprocess_prediction(postprocess ? postprocess_scale(raw, cfg.post) : raw, support);
  const SizingField field = SizingField::from_image(p.density, support, cfg.bounds());
  p.mesh = mesh_from_field(domain, field, cfg.adaptive.meshing);
  p.mesh.label = postprocess ? "predicted (post-processed)" : "predicted";
  return p;
}

Prediction predict_and_mesh(UNet<float>& model, const DomainSpec& domain, bool postprocess,
                            const PipelineConfig& cfg) {
  const InputStack in = make_input_stack(domain, cfg.resolution);
  return mesh_from_prediction(unet_forward(model, in), domain, postprocess, cfg);
}

SamplePredictor model_predictor(UNet<float>& model) {
  return [&model](const SampleRecord& s) { return unet_forward(model, s.inputs); };
}

SamplePredictor oracle_predictor() {
  return [](const SampleRecord& s) { return s.target; };
}

double ratio_ru(double e_rel_uniform, double e_rel_predicted) {
  if (!(e_rel_predicted > 0.0)) throw PipelineError("R^U undefined: predicted-mesh error is not positive");
  return e_rel_uniform / e_rel_predicted;
}

// ---------------------------------------------------------------------------

double EvalReport::mean_eps_rel() const {
  if (rows.empty()) return std::nan("");
  double s = 0.0;
  for (const auto& r : rows) s += r.eps_rel;
  return s / static_cast<double>(rows.size());
}

double EvalReport::mean_eps_rel_ones() const {
  if (rows.empty()) return std::nan("");
  double s = 0.0;
  for (const auto& r : rows) s += r.eps_rel_ones;
  return s / static_cast<double>(rows.size());
}

std::map<std::string, double> EvalReport::mean_eps_rel_by_class() const {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    auto& a = acc[r.cls.label()];
    a.first += r.eps_rel;
    ++a.second;
  }
  std::map<std::string, double> out;
  for (const auto& [k, a] : acc) out[k] = a.first / a.second;
  return out;
}

std::vector<int> EvalReport::histogram(double lo, double hi, int bins) const {
  if (bins < 1 || !(hi > lo)) throw PipelineError("histogram: need bins >= 1 and hi > lo");
  std::vector<int> h(static_cast<std::size_t>(bins), 0);
  const double w = (hi - lo) / bins;
  for (const auto& r : rows) {
    const int b = std::clamp(static_cast<int>(std::floor((r.r_u - lo) / w)), 0, bins - 1);
    ++h[static_cast<std::size_t>(b)];
  }
  return h;
}

void EvalReport::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw PipelineError("cannot write " + path);
  os << "id,class,eps_rel,eps_rel_ones,e_rel_adaptive,e_rel_pred,e_rel_uniform,r_u,e_rel_post,e_rel_uniform_post,"
        "r_u_post,dofs_adaptive,dofs_pred,dofs_uniform,dofs_post,quads_adaptive,quads_pred,quads_uniform,quads_post,"
        "vm_max_ref,vm_max_pred\n";
  char buf[1024];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf,
                  "%d,\"%s\",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%zu,%zu,%zu,%zu,%zu,%zu,%zu,"
                  "%.17g,%.17g\n",
                  r.id, r.cls.label().c_str(), r.eps_rel, r.eps_rel_ones, r.e_rel_adaptive, r.e_rel_pred,
                  r.e_rel_uniform, r.r_u, r.e_rel_post, r.e_rel_uniform_post, r.r_u_post, r.dofs_adaptive,
                  r.dofs_pred, r.dofs_uniform, r.dofs_post, r.quads_adaptive, r.quads_pred, r.quads_uniform,
                  r.quads_post, r.vm_max_ref, r.vm_max_pred);
    os << buf;
  }
  if (!os) throw PipelineError("failed writing " + path);
}

nlohmann::json EvalReport::summary() const {
  nlohmann::json flagged_j = nlohmann::json::array();
  for (const auto& [id, why] : flagged) flagged_j.push_back({{"id", id}, {"reason", why}});
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json by_class;
  for (const auto& [k, v] : mean_eps_rel_by_class()) by_class[k] = v;
  int wins = 0;
  for (const auto& r : rows) wins += r.r_u > 1.0;
  return {{"rows", rows.size()},
          {"flagged", flagged_j},
          {"mean_eps_rel", num(mean_eps_rel())},
          {"mean_eps_rel_ones", num(mean_eps_rel_ones())},
          {"mean_eps_rel_by_class", by_class},
          {"ru_above_one", wins},
          {"ru_histogram", {{"lo", 0.0}, {"hi", 3.0}, {"counts", histogram()}}},
          {"config", config},
          {"config_hash", config_hash}};
}

void save_histogram_png(const std::string& path, const std::vector<int>& counts) {
  constexpr int bar = 10, gap = 2, margin = 10, height = 200;
  const int n = static_cast<int>(counts.size());
  GrayImage img(2 * margin + n * (bar + gap), height + 2 * margin, 1.0f);
  const int top = std::max(1, counts.empty() ? 1 : *std::max_element(counts.begin(), counts.end()));
  for (int i = 0; i < n; ++i) {
    const int h = counts[static_cast<std::size_t>(i)] * height / top;
    const int x0 = margin + i * (bar + gap);
    for (int y = 0; y < h; ++y)
      for (int x = x0; x < x0 + bar; ++x) img.at(margin + height - 1 - y, x) = 0.15f;
  }
  for (int x = margin; x < img.width() - margin; ++x) img.at(margin + height, x) = 0.0f;
  save_png(path, img);
}

// ---------------------------------------------------------------------------

namespace {

double max_of(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

struct MeshedCase {
  QuadMesh mesh;
  double e_rel;
};

MeshedCase solve_against(const QuadMesh& mesh, const AdaptiveResult& ref, const PipelineConfig& cfg,
                         FemField* keep = nullptr) {
  const auto& a = cfg.adaptive;
  FemField f = solve_elasticity(mesh, a.material, a.bc);
  MeshedCase c{mesh, energy_norm_error(f, ref.reference, a.material)};
  if (keep) *keep = std::move(f);
  return c;
}

MeshedCase uniform_match(const DomainSpec& d, std::size_t dofs, const AdaptiveResult& ref, const PipelineConfig& cfg) {
  const SizingField start = SizingField::constant(cfg.bounds().clamp(uniform_size_for_dofs(d, dofs)), cfg.bounds());
  DofMatchResult m;
  try {
    m = dof_match(d, start, dofs, cfg.dof_tolerance, cfg.adaptive.meshing);
  } catch (const MeshingError& e) {
    throw PipelineError(std::string("DOF match failed: ") + e.what());
  }
  m.mesh.label = "uniform";
  return solve_against(m.mesh, ref, cfg);
}

EvalRow evaluate_one(const SamplePredictor& predictor, const SampleRecord& s, const PipelineConfig& cfg) {
  EvalRow row;
  row.id = s.id;
  row.cls = s.cls;
  const AdaptiveResult ref = run_adaptive(s.domain, cfg.adaptive);
  const GrayImage support = rasterize_support(s.domain, cfg.resolution);
  const GrayImage raw = predictor(s);
  row.eps_rel = epsilon_rel(s.target, raw, support);
  row.eps_rel_ones = epsilon_rel(s.target, GrayImage(cfg.resolution, cfg.resolution, 1.0f), support);
  row.e_rel_adaptive = ref.e_rel.back();
  row.dofs_adaptive = ref.final_mesh().dofs();
  row.quads_adaptive = ref.final_mesh().quads.size();
  row.vm_max_ref = max_of(ref.reference.vm_nodal);

  FemField pred_solution;
  Prediction pred;
  try {
    pred = mesh_from_prediction(raw, s.domain, false, cfg);
  } catch (const MeshingError& e) {
    throw PipelineError(std::string("predicted mesh failed: ") + e.what());
  }
  const MeshedCase p = solve_against(pred.mesh, ref, cfg, &pred_solution);
  row.e_rel_pred = p.e_rel;
  row.dofs_pred = pred.mesh.dofs();
  row.quads_pred = pred.mesh.quads.size();
  row.vm_max_pred = max_of(pred_solution.vm_nodal);
  const MeshedCase u = uniform_match(s.domain, row.dofs_pred, ref, cfg);
  row.e_rel_uniform = u.e_rel;
  row.dofs_uniform = u.mesh.dofs();
  row.quads_uniform = u.mesh.quads.size();
  row.r_u = ratio_ru(row.e_rel_uniform, row.e_rel_pred);

  if (cfg.evaluate_postprocessed) {
    Prediction post;
    try {
      post = mesh_from_prediction(raw, s.domain, true, cfg);
    } catch (const MeshingError& e) {
      throw PipelineError(std::string("post-processed mesh failed: ") + e.what());
    }
    row.e_rel_post = solve_against(post.mesh, ref, cfg).e_rel;
    row.dofs_post = post.mesh.dofs();
    row.quads_post = post.mesh.quads.size();
    row.e_rel_uniform_post = uniform_match(s.domain, row.dofs_post, ref, cfg).e_rel;
    row.r_u_post = ratio_ru(row.e_rel_uniform_post, row.e_rel_post);
  } else {
    row.e_rel_post = row.e_rel_uniform_post = row.r_u_post = std::nan("");
  }
  return row;
}

}  // namespace

EvalReport evaluate(const SamplePredictor& predictor, const std::vector<SampleRecord>& test,
                    const PipelineConfig& cfg, const std::set<std::string>& training_hashes,
                    const Progress& progress) {
  cfg.validate();
  for (const auto& s : test)
    if (training_hashes.count(s.domain_hash))
      throw PipelineError("sample " + std::to_string(s.id) + " was used for training; refusing to evaluate on it");

  EvalReport rep;
  rep.config = cfg.to_json();
  rep.config_hash = cfg.hash();
  std::vector<std::optional<EvalRow>> rows(test.size());
  std::vector<std::string> why(test.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < test.size(); i = next++) {
      try {
        rows[i] = evaluate_one(predictor, test[i], cfg);
      } catch (const std::exception& e) {
        why[i] = e.what();
      }
      if (progress) {
        std::lock_guard lock(mu);
        progress("sample " + std::to_string(test[i].id) + (rows[i] ? " evaluated" : " flagged: " + why[i]));
      }
    }
  };
  const int nw = std::min<int>(cfg.workers, std::max<int>(1, static_cast<int>(test.size())));
  if (nw <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nw; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (rows[i]) rep.rows.push_back(*rows[i]);
    else rep.flagged.emplace_back(test[i].id, why[i]);
  }
  return rep;
}

}  // namespace meshdens
