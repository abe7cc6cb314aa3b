#include <openssl/evp.h>

#include <fstream>
#include <iterator>
#include <memory>

#include "meshdens/pipeline.hpp"

namespace meshdens {

std::string sha256_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    throw PipelineError("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PipelineError("cannot read " + path);
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

void PipelineConfig::validate() const {
  if (resolution < 8) throw PipelineError("resolution must be at least 8");
  if (depth < 1) throw PipelineError("network depth must be positive");
  if (workers < 1) throw PipelineError("workers must be at least 1");
  if (!(dof_tolerance > 0.0 && dof_tolerance < 1.0)) throw PipelineError("dof tolerance must lie in (0, 1)");
  if (!(bounds().h_min > 0.0 && bounds().h_min < bounds().h_max)) throw PipelineError("need 0 < h_min < h_max");
  try {
    adaptive.validate();
    adaptive.material.validate();
  } catch (const std::exception& e) {
    throw PipelineError(e.what());
  }
}

nlohmann::json PipelineConfig::to_json() const {
  const auto& a = adaptive;
  const auto& t = train;
  return {
      {"resolution", resolution},
      {"bounds", {{"h_min", a.bounds.h_min}, {"h_max", a.bounds.h_max}}},
      {"adaptive", {{"levels", a.levels}, {"reference_h", a.reference_h}, {"initial_h", a.initial_h}}},
      {"meshing",
       {{"max_triangles", a.meshing.max_triangles},
        {"min_angle_deg", a.meshing.min_angle_deg},
        {"grading", a.meshing.grading},
        {"smoothing_passes", a.meshing.smoothing_passes}}},
      {"material", {{"E", a.material.E}, {"nu", a.material.nu}}},
      {"traction", a.bc.t_mag},
      {"network", {{"depth", depth}, {"seed", model_seed}}},
      {"train",
       {{"lr", t.adam.lr},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"eps", t.adam.eps},
        {"batch_size", t.batch_size},
        {"max_epochs", t.max_epochs},
        {"max_steps", t.max_steps},
        {"patience", t.patience},
        {"val_fraction", t.val_fraction},
        {"seed", t.seed}}},
      {"post", {{"threshold", post.threshold}, {"factor", post.factor}}},
      {"dof_tolerance", dof_tolerance},
      {"evaluate_postprocessed", evaluate_postprocessed},
      {"workers", workers},
  };
}

namespace {

template <class T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    take(j, "resolution", c.resolution);
    auto& a = c.adaptive;
    if (j.contains("bounds")) {
      take(j["bounds"], "h_min", a.bounds.h_min);
      take(j["bounds"], "h_max", a.bounds.h_max);
    }
    if (j.contains("adaptive")) {
      take(j["adaptive"], "levels", a.levels);
      take(j["adaptive"], "reference_h", a.reference_h);
      take(j["adaptive"], "initial_h", a.initial_h);
    }
    if (j.contains("meshing")) {
      const auto& m = j["meshing"];
      take(m, "max_triangles", a.meshing.max_triangles);
      take(m, "min_angle_deg", a.meshing.min_angle_deg);
      take(m, "grading", a.meshing.grading);
      take(m, "smoothing_passes", a.meshing.smoothing_passes);
    }
    if (j.contains("material")) {
      take(j["material"], "E", a.material.E);
      take(j["material"], "nu", a.material.nu);
    }
    take(j, "traction", a.bc.t_mag);
    if (j.contains("network")) {
      take(j["network"], "depth", c.depth);
      take(j["network"], "seed", c.model_seed);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      take(t, "lr", c.train.adam.lr);
      take(t, "beta1", c.train.adam.beta1);
      take(t, "beta2", c.train.adam.beta2);
      take(t, "eps", c.train.adam.eps);
      take(t, "batch_size", c.train.batch_size);
      take(t, "max_epochs", c.train.max_epochs);
      take(t, "max_steps", c.train.max_steps);
      take(t, "patience", c.train.patience);
      take(t, "val_fraction", c.train.val_fraction);
      take(t, "seed", c.train.seed);
    }
    if (j.contains("post")) {
      take(j["post"], "threshold", c.post.threshold);
      take(j["post"], "factor", c.post.factor);
    }
    take(j, "dof_tolerance", c.dof_tolerance);
    take(j, "evaluate_postprocessed", c.evaluate_postprocessed);
    take(j, "workers", c.workers);
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError(std::string("config: ") + e.what());
  }
  return c;
}

std::string PipelineConfig::hash() const {
  nlohmann::json j = to_json();
  j.erase("workers");  // results do not depend on the pool size
  return sha256_hex(j.dump());
}

}  // namespace meshdens
