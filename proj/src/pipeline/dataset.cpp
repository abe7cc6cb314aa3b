#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "meshdens/pipeline.hpp"

namespace fs = std::filesystem;

namespace meshdens {

nlohmann::json ManifestEntry::to_json() const {
  return {{"id", id},   {"class", cls.label()}, {"seed", seed}, {"attempts", attempts},
          {"dir", dir}, {"files", files},       {"e_rel", e_rel}, {"dofs", dofs}};
}

ManifestEntry ManifestEntry::from_json(const nlohmann::json& j) {
  ManifestEntry e;
  e.id = j.at("id").get<int>();
  e.cls = ComplexityClass::parse(j.at("class").get<std::string>());
  e.seed = j.at("seed").get<std::uint64_t>();
  e.attempts = j.value("attempts", 1);
  e.dir = j.at("dir").get<std::string>();
  e.files = j.at("files").get<std::map<std::string, std::string>>();
  e.e_rel = j.value("e_rel", std::vector<double>{});
  e.dofs = j.value("dofs", std::size_t{0});
  return e;
}

void Manifest::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw PipelineError("cannot write " + path);
  const nlohmann::json head = {{"format", "meshdens-dataset"}, {"class", cls.label()}, {"count", count},
                               {"seed", seed},                 {"skipped", skipped},    {"config", config},
                               {"config_hash", config_hash}};
  os << head.dump() << '\n';
  for (const auto& s : samples) os << s.to_json().dump() << '\n';
  if (!os) throw PipelineError("failed writing " + path);
}

Manifest Manifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw PipelineError("cannot read " + path);
  Manifest m;
  std::string line;
  int lineno = 0;
  try {
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (lineno == 1) {
        if (j.value("format", "") != "meshdens-dataset") throw PipelineError(path + ": not a dataset manifest");
        m.cls = ComplexityClass::parse(j.at("class").get<std::string>());
        m.count = j.at("count").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.skipped = j.value("skipped", 0);
        m.config = j.at("config");
        m.config_hash = j.at("config_hash").get<std::string>();
      } else {
        m.samples.push_back(ManifestEntry::from_json(j));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError(path + ":" + std::to_string(lineno) + ": " + e.what());
  } catch (const GeometryError& e) {
    throw PipelineError(path + ":" + std::to_string(lineno) + ": " + e.what());
  }
  if (lineno == 0) throw PipelineError(path + ": empty manifest");
  return m;
}

GeneratedSample generate_sample(const ComplexityClass& cls, std::uint64_t seed, const PipelineConfig& cfg) {
  GeneratedSample s;
  s.domain = generate_domain(cls, seed);
  s.adaptive = run_adaptive(s.domain, cfg.adaptive);
  for (std::size_t l = 0; l < s.adaptive.meshes.size(); ++l) {
    const MeshReport rep = inspect_mesh(s.adaptive.meshes[l], &s.domain);
    if (!rep.ok()) throw MeshingError("adaptive level " + std::to_string(l) + " mesh fails its invariants");
  }
  s.inputs = make_input_stack(s.domain, cfg.resolution);
  s.target = density_from_mesh(s.adaptive.final_mesh(), s.domain, cfg.resolution, cfg.bounds());
  return s;
}

namespace {

std::string sample_dir_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%06d", id);
  return buf;
}

ManifestEntry write_sample(const GeneratedSample& s, int id, std::uint64_t seed, int attempts,
                           const ComplexityClass& cls, const fs::path& root) {
  ManifestEntry e;
  e.id = id;
  e.cls = cls;
  e.seed = seed;
  e.attempts = attempts;
  e.dir = sample_dir_name(id);
  const fs::path dir = root / e.dir;
  fs::create_directories(dir);
  save_domain((dir / "domain.txt").string(), s.domain);
  save_gimg((dir / "geo.gimg").string(), s.inputs.geometry);
  save_gimg((dir / "dir.gimg").string(), s.inputs.dirichlet);
  save_gimg((dir / "neu.gimg").string(), s.inputs.neumann);
  save_gimg((dir / "target.gimg").string(), s.target);
  save_mesh((dir / "mesh.txt").string(), s.adaptive.final_mesh());
  for (const char* f : {"domain.txt", "geo.gimg", "dir.gimg", "neu.gimg", "target.gimg", "mesh.txt"})
    e.files[f] = sha256_file((dir / f).string());
  e.e_rel = s.adaptive.e_rel;
  e.dofs = s.adaptive.final_mesh().dofs();
  return e;
}

}  // namespace

Manifest gen_dataset(const ComplexityClass& cls, int count, std::uint64_t seed, const std::string& out_dir,
                     const PipelineConfig& cfg, const Progress& progress) {
  if (!cls.valid()) throw PipelineError("unsupported complexity class " + cls.label());
  if (count < 0) throw PipelineError("sample count must be non-negative");
  cfg.validate();
  const fs::path root(out_dir);
  fs::create_directories(root);

  Manifest m;
  m.cls = cls;
  m.count = count;
  m.seed = seed;
  m.config = cfg.to_json();
  m.config_hash = cfg.hash();
  m.samples.resize(static_cast<std::size_t>(count));

  constexpr int kMaxAttempts = 10;
  std::atomic<int> next{0};
  std::atomic<bool> abort{false};
  std::mutex mu;
  int attempts_total = 0, skipped = 0;
  std::string abort_reason;

  auto worker = [&] {
    for (int id = next++; id < count && !abort; id = next++) {
      const std::uint64_t base = Rng::child_seed(seed, static_cast<std::uint64_t>(id));
      bool done = false;
      for (int a = 0; a < kMaxAttempts && !done && !abort; ++a) {
        const std::uint64_t s = a == 0 ? base : Rng::child_seed(base, static_cast<std::uint64_t>(a));
        std::string err;
        try {
          const GeneratedSample g = generate_sample(cls, s, cfg);
          m.samples[static_cast<std::size_t>(id)] = write_sample(g, id, s, a + 1, cls, root);
          done = true;
        } catch (const std::exception& e) {
          err = e.what();
        }
        std::lock_guard lock(mu);
        ++attempts_total;
        if (done) {
          if (progress) progress("sample " + std::to_string(id) + " done (" + std::to_string(a + 1) + " attempt(s))");
          continue;
        }
        ++skipped;
        if (progress) progress("sample " + std::to_string(id) + " attempt " + std::to_string(a) + " skipped: " + err);
        if (attempts_total >= 10 && skipped * 5 > attempts_total) {
          abort = true;
          abort_reason = "generation failure rate " + std::to_string(skipped) + "/" + std::to_string(attempts_total) +
                         " exceeds 20%; last error: " + err;
        } else if (a + 1 == kMaxAttempts) {
          abort = true;
          abort_reason = "sample " + std::to_string(id) + " failed " + std::to_string(kMaxAttempts) +
                         " attempts; last error: " + err;
        }
      }
    }
  };
  const int nw = std::min(cfg.workers, std::max(count, 1));
  if (nw <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nw; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (abort) throw PipelineError("gen_dataset(" + cls.label() + "): " + abort_reason);
  m.skipped = skipped;
  m.save((root / kManifestName).string());
  return m;
}

SampleRecord load_sample(const std::string& dataset_dir, const ManifestEntry& entry) {
  const fs::path dir = fs::path(dataset_dir) / entry.dir;
  SampleRecord r;
  r.id = entry.id;
  r.cls = entry.cls;
  r.seed = entry.seed;
  try {
    r.domain = load_domain((dir / "domain.txt").string());
    r.inputs = InputStack{load_gimg((dir / "geo.gimg").string()), load_gimg((dir / "dir.gimg").string()),
                          load_gimg((dir / "neu.gimg").string())};
    r.target = load_gimg((dir / "target.gimg").string());
  } catch (const std::exception& e) {
    throw PipelineError(dir.string() + ": " + e.what());
  }
  r.domain_hash = sha256_file((dir / "domain.txt").string());
  return r;
}

std::vector<SampleRecord> load_dataset(const std::string& dataset_dir) {
  const Manifest m = Manifest::load((fs::path(dataset_dir) / kManifestName).string());
  std::vector<SampleRecord> out;
  for (const auto& e : m.samples) {
    out.push_back(load_sample(dataset_dir, e));
    out.back().config_hash = m.config_hash;
  }
  return out;
}

std::vector<std::string> verify_dataset(const std::string& dataset_dir) {
  const Manifest m = Manifest::load((fs::path(dataset_dir) / kManifestName).string());
  std::vector<std::string> problems;
  if (static_cast<int>(m.samples.size()) != m.count)
    problems.push_back("manifest lists " + std::to_string(m.samples.size()) + " samples, header says " +
                       std::to_string(m.count));
  for (const auto& e : m.samples) {
    for (const auto& [name, hash] : e.files) {
      const fs::path p = fs::path(dataset_dir) / e.dir / name;
      if (!fs::exists(p)) {
        problems.push_back(p.string() + ": missing");
        continue;
      }
      if (sha256_file(p.string()) != hash) problems.push_back(p.string() + ": hash mismatch");
    }
  }
  return problems;
}

}  // namespace meshdens
