#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "meshdens/pipeline.hpp"

using namespace meshdens;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bad flags, bad config and unsatisfiable requests: exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr const char* kEnvPrefix = "MESHDENS_";

std::string env_name(const std::string& flag) {
  std::string s = kEnvPrefix;
  for (char c : flag) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

const std::map<std::string, std::string>& key_aliases() {
  static const std::map<std::string, std::string> m = {
      {"h_min", "bounds.h_min"},       {"h_max", "bounds.h_max"},     {"levels", "adaptive.levels"},
      {"depth", "network.depth"},      {"model_seed", "network.seed"}, {"lr", "train.lr"},
      {"epochs", "train.max_epochs"},  {"batch_size", "train.batch_size"},
      {"patience", "train.patience"}, {"val_fraction", "train.val_fraction"},
  };
  return m;
}

void set_key(json& j, std::string key, const std::string& value) {
  if (auto it = key_aliases().find(key); it != key_aliases().end()) key = it->second;
  json* node = &j;
  std::istringstream parts(key);
  for (std::string part; std::getline(parts, part, '.');) {
    if (!node->is_object() || !node->contains(part)) throw UsageError("unknown config key '" + key + "'");
    node = &(*node)[part];
  }
  if (node->is_object()) throw UsageError("config key '" + key + "' names a section");
  json v;
  try {
    v = json::parse(value);
  } catch (const json::exception&) {
    throw UsageError("config key '" + key + "': cannot parse value '" + value + "'");
  }
  if (node->is_boolean() != v.is_boolean() || node->is_number() != v.is_number())
    throw UsageError("config key '" + key + "': wrong value type '" + value + "'");
  *node = v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

struct Options {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<int> workers, depth, epochs;
  std::string log_level = "info";

  PipelineConfig build() const {
    json j = PipelineConfig{}.to_json();
    if (!config_file.empty()) {
      std::ifstream is(config_file);
      if (!is) throw UsageError("cannot read config file " + config_file);
      int lineno = 0;
      for (std::string line; std::getline(is, line);) {
        ++lineno;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
          throw UsageError(config_file + ":" + std::to_string(lineno) + ": expected key=value");
        set_key(j, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      }
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      set_key(j, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    PipelineConfig cfg;
    try {
      cfg = PipelineConfig::from_json(j);
      if (workers) cfg.workers = *workers;
      if (depth) cfg.depth = *depth;
      if (epochs) cfg.train.max_epochs = *epochs;
      cfg.validate();
    } catch (const PipelineError& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

ComplexityClass parse_class(const std::string& text) {
  try {
    return ComplexityClass::parse(text);
  } catch (const GeometryError& e) {
    throw UsageError(e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw PipelineError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::istringstream is(item);
    for (std::string s; std::getline(is, s, ',');)
      if (!trim(s).empty()) out.push_back(trim(s));
  }
  return out;
}

struct DataSplit {
  std::vector<SampleRecord> train, test;
};

DataSplit load_split(const std::vector<std::string>& dirs, std::size_t holdout) {
  DataSplit out;
  for (const auto& d : dirs) {
    if (!fs::exists(fs::path(d) / kManifestName)) throw UsageError("no dataset manifest in " + d);
    auto data = load_dataset(d);
    if (holdout > data.size())
      throw UsageError("holdout " + std::to_string(holdout) + " exceeds the " + std::to_string(data.size()) +
                       " samples in " + d);
    auto [train, test] = split_holdout(std::move(data), holdout);
    out.train.insert(out.train.end(), train.begin(), train.end());
    out.test.insert(out.test.end(), test.begin(), test.end());
  }
  return out;
}

fs::path card_path_for(const std::string& model_path) {
  const fs::path p(model_path);
  return p.parent_path() / (p.stem().string() + "_card.json");
}

UNet<float> open_model(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("model file not found: " + path);
  return load_model(path);
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string cls, out;
  int count = 0;
  std::uint64_t seed = 0;
};

int cmd_gen(const GenArgs& a, const PipelineConfig& cfg) {
  const ComplexityClass cls = parse_class(a.cls);
  if (a.count < 0) throw UsageError("--count must be non-negative");
  spdlog::info("generating {} samples of class ({}) seed {} into {} with {} worker(s)", a.count, cls.label(), a.seed,
               a.out, cfg.workers);
  const Manifest m = gen_dataset(cls, a.count, a.seed, a.out, cfg, [](const std::string& msg) {
    spdlog::info("{}", msg);
  });
  spdlog::info("wrote {} samples ({} failed attempts), config {}", m.samples.size(), m.skipped,
               m.config_hash.substr(0, 12));
  return 0;
}

struct AdaptArgs {
  std::string domain, cls, out;
  std::uint64_t seed = 0;
};

int cmd_adapt(const AdaptArgs& a, const PipelineConfig& cfg) {
  DomainSpec domain;
  if (!a.domain.empty()) {
    domain = load_domain(a.domain);
  } else if (!a.cls.empty()) {
    domain = generate_domain(parse_class(a.cls), a.seed);
  } else {
    throw UsageError("adapt needs --domain or --class");
  }
  if (auto err = validate(domain); !err.empty()) throw UsageError("invalid domain: " + err);
  fs::create_directories(a.out);
  const AdaptiveResult r = run_adaptive(domain, cfg.adaptive);
  const GrayImage target = density_from_mesh(r.final_mesh(), domain, cfg.resolution, cfg.bounds());
  save_domain((fs::path(a.out) / "domain.txt").string(), domain);
  json levels = json::array();
  for (std::size_t i = 0; i < r.meshes.size(); ++i) {
    save_mesh((fs::path(a.out) / ("mesh_level" + std::to_string(i) + ".txt")).string(), r.meshes[i]);
    levels.push_back({{"level", i}, {"quads", r.meshes[i].num_quads()}, {"dofs", r.meshes[i].dofs()},
                      {"e_rel", r.e_rel[i]}});
    spdlog::info("level {}: {} quads, {} dofs, e_rel {:.5f}", i, r.meshes[i].num_quads(), r.meshes[i].dofs(),
                 r.e_rel[i]);
  }
  save_gimg((fs::path(a.out) / "target.gimg").string(), target);
  save_png((fs::path(a.out) / "target.png").string(), target);
  write_json(fs::path(a.out) / "adapt.json", {{"levels", levels},
                                              {"reference_dofs", r.reference.mesh.dofs()},
                                              {"config", cfg.to_json()},
                                              {"config_hash", cfg.hash()}});
  return 0;
}

struct TrainArgs {
  std::vector<std::string> cards{"M000"}, data;
  std::string out;
  std::size_t holdout = 0;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, PipelineConfig cfg) {
  if (a.seed) cfg.model_seed = cfg.train.seed = *a.seed;
  std::vector<ModelCard> cards;
  for (const auto& name : split_list(a.cards)) {
    try {
      cards.push_back(ModelCard::named(name));
    } catch (const PipelineError& e) {
      throw UsageError(e.what());
    }
  }
  const auto split = load_split(split_list(a.data), a.holdout);
  spdlog::info("{} training samples ({} held out)", split.train.size(), split.test.size());

  // Refuse before any training starts when a card has no data for one of its classes.
  std::string coverage;
  for (const auto& card : cards) {
    for (const auto& g : card.groups) {
      std::size_t n = 0;
      for (const auto& s : split.train) n += g.matches(s.cls);
      if (n == 0) coverage += "  " + card.name + ": no samples for class (" + g.label() + ")\n";
    }
  }
  if (!coverage.empty()) throw UsageError("missing training data\n" + coverage);

  for (const auto& card : cards) {
    spdlog::info("training {} (depth {}, up to {} epochs)", card.name, cfg.depth, cfg.train.max_epochs);
    const TrainResult r = train_model(card, split.train, cfg, a.out, [&](const EpochLog& e) {
      spdlog::info("{} epoch {}: train {:.6g} val {:.6g}", card.name, e.epoch + 1, e.train_loss, e.val_loss);
    });
    spdlog::info("{}: best epoch {}, val {:.6g}, {} steps -> {}", card.name, r.state.best_epoch + 1,
                 r.state.best_val, r.state.steps, r.model_path);
  }
  return 0;
}

struct PredictArgs {
  std::string model, sample, domain, out;
  std::vector<std::string> inputs;
  bool postprocess = false, mesh = false;
};

int cmd_predict(const PredictArgs& a, const PipelineConfig& cfg) {
  const int sources = !a.sample.empty() + !a.domain.empty() + !a.inputs.empty();
  if (sources != 1) throw UsageError("predict needs exactly one of --sample, --domain, --inputs");
  std::optional<DomainSpec> domain;
  InputStack inputs;
  if (!a.inputs.empty()) {
    const auto files = split_list(a.inputs);
    if (files.size() != 3) throw UsageError("--inputs expects three images: geometry,dirichlet,neumann");
    inputs = {load_image(files[0]), load_image(files[1]), load_image(files[2])};
    if (a.mesh) throw UsageError("--mesh needs a domain (--sample or --domain)");
  } else {
    domain = load_domain(!a.domain.empty() ? a.domain : (fs::path(a.sample) / "domain.txt").string());
    inputs = make_input_stack(*domain, cfg.resolution);
  }
  UNet<float> net = open_model(a.model);
  const GrayImage pred = unet_forward(net, inputs);
  fs::create_directories(a.out);
  const fs::path out(a.out);
  save_gimg((out / "pred.gimg").string(), pred);
  save_png((out / "pred.png").string(), pred);
  json info = {{"model", a.model},
               {"model_sha256", sha256_file(a.model)},
               {"config_hash", cfg.hash()},
               {"pred_sha256", sha256_file((out / "pred.gimg").string())}};
  if (a.mesh) {
    const Prediction p = mesh_from_prediction(pred, *domain, a.postprocess, cfg);
    save_gimg((out / "density.gimg").string(), p.density);
    save_mesh((out / "mesh.txt").string(), p.mesh);
    info["mesh"] = {{"quads", p.mesh.num_quads()}, {"dofs", p.mesh.dofs()}, {"postprocessed", a.postprocess}};
    spdlog::info("predicted mesh: {} quads, {} dofs", p.mesh.num_quads(), p.mesh.dofs());
  }
  write_json(out / "predict.json", info);
  spdlog::info("wrote {}", (out / "pred.gimg").string());
  return 0;
}

struct MeshArgs {
  std::string density, domain, out;
  bool postprocess = false;
};

int cmd_mesh(const MeshArgs& a, const PipelineConfig& cfg) {
  const DomainSpec domain = load_domain(a.domain);
  const GrayImage img = load_image(a.density);
  if (img.width() != cfg.resolution || img.height() != cfg.resolution)
    throw UsageError("density image must be " + std::to_string(cfg.resolution) + "x" +
                     std::to_string(cfg.resolution));
  const Prediction p = mesh_from_prediction(img, domain, a.postprocess, cfg);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_mesh(a.out, p.mesh);
  const MeshReport rep = inspect_mesh(p.mesh, &domain);
  write_json(a.out + ".json", {{"quads", p.mesh.num_quads()},
                               {"dofs", p.mesh.dofs()},
                               {"valid", rep.ok()},
                               {"density_sha256", sha256_file(a.density)},
                               {"config_hash", cfg.hash()}});
  spdlog::info("{} quads, {} dofs, {}", p.mesh.num_quads(), p.mesh.dofs(), rep.ok() ? "valid" : rep.message);
  return 0;
}

struct EvalArgs {
  std::string model, card, out;
  std::vector<std::string> data;
  std::size_t holdout = 0;
  bool oracle = false;
};

int cmd_eval(const EvalArgs& a, const PipelineConfig& cfg) {
  if (a.oracle == !a.model.empty()) throw UsageError("eval needs exactly one of --model, --oracle");
  auto split = load_split(split_list(a.data), a.holdout);
  // With a holdout only the tail is evaluated; without one, every sample.
  std::vector<SampleRecord> test = a.holdout > 0 ? std::move(split.test) : std::move(split.train);
  std::set<std::string> hashes;
  std::optional<UNet<float>> net;
  SamplePredictor predictor = oracle_predictor();
  if (!a.oracle) {
    net.emplace(open_model(a.model));
    const fs::path card = a.card.empty() ? card_path_for(a.model) : fs::path(a.card);
    if (fs::exists(card)) hashes = card_training_hashes(card.string());
    else spdlog::warn("no model card at {}; training-set overlap is not checked", card.string());
    predictor = model_predictor(*net);
  }
  for (const auto& s : test)
    if (hashes.contains(s.domain_hash))
      throw UsageError("sample " + std::to_string(s.id) + " was used to train this model; pass --holdout");
  spdlog::info("evaluating {} samples", test.size());
  const EvalReport rep = evaluate(predictor, test, cfg, hashes, [](const std::string& m) { spdlog::info("{}", m); });
  const fs::path out(a.out);
  fs::create_directories(out);
  rep.write_csv((out / "report.csv").string());
  save_histogram_png((out / "ru_histogram.png").string(), rep.histogram());
  json summary = rep.summary();
  summary["model"] = a.oracle ? json("oracle") : json(a.model);
  write_json(out / "summary.json", summary);
  for (const auto& [id, why] : rep.flagged) spdlog::warn("sample {} flagged: {}", id, why);
  spdlog::info("mean eps_rel {:.4f} (all-ones {:.4f}), {} rows, {} flagged", rep.mean_eps_rel(),
               rep.mean_eps_rel_ones(), rep.rows.size(), rep.flagged.size());
  return 0;
}

int inspect_card(const fs::path& card_path) {
  std::ifstream is(card_path);
  const json card = json::parse(is);
  const fs::path model = card_path.parent_path() / card.at("model_file").get<std::string>();
  const std::string actual = sha256_file(model.string());
  const bool ok = actual == card.at("model_sha256").get<std::string>();
  std::cout << "card " << card.value("card", "?") << ": " << card.value("samples", 0) << " samples, config "
            << card.value("config_hash", "").substr(0, 12) << ", model hash " << (ok ? "ok" : "MISMATCH") << '\n';
  return ok ? 0 : 1;
}

int cmd_inspect(const std::string& path) {
  const fs::path p(path);
  if (!fs::exists(p)) throw UsageError("no such path: " + path);
  if (fs::is_directory(p)) {
    if (!fs::exists(p / kManifestName)) throw UsageError("no dataset manifest in " + path);
    const Manifest m = Manifest::load((p / kManifestName).string());
    std::cout << "dataset class (" << m.cls.label() << "), " << m.samples.size() << " samples, seed " << m.seed
              << ", config " << m.config_hash.substr(0, 12) << '\n';
    const auto problems = verify_dataset(path);
    for (const auto& msg : problems) std::cout << "  " << msg << '\n';
    std::cout << (problems.empty() ? "all file hashes verified" : "hash verification FAILED") << '\n';
    return problems.empty() ? 0 : 1;
  }
  const std::string ext = p.extension().string();
  if (ext == ".unet") {
    std::cout << json::parse(read_model_descriptor(path)).dump(2) << '\n';
    const fs::path card = card_path_for(path);
    return fs::exists(card) ? inspect_card(card) : 0;
  }
  if (ext == ".json" && p.stem().string().ends_with("_card")) return inspect_card(p);
  if (ext == ".gimg" || ext == ".png") {
    const GrayImage img = load_image(path);
    float lo = 1e30f, hi = -1e30f;
    for (float v : img.data()) lo = std::min(lo, v), hi = std::max(hi, v);
    std::cout << img.width() << "x" << img.height() << " min " << lo << " max " << hi << " mean " << img.mean()
              << " sha256 " << sha256_file(path) << '\n';
    return 0;
  }
  if (ext == ".txt") {
    std::ifstream is(path);
    std::string first;
    is >> first;
    if (first == "domain") {
      const DomainSpec d = load_domain(path);
      const std::string err = validate(d);
      std::cout << "domain: " << d.outer().size() << " outer vertices, " << d.holes().size() << " holes, "
                << (err.empty() ? "valid" : err) << '\n';
      return err.empty() ? 0 : 1;
    }
    const QuadMesh mesh = load_mesh(path);
    const MeshReport r = inspect_mesh(mesh);
    std::cout << "mesh: " << mesh.num_quads() << " quads, " << mesh.dofs() << " dofs, min corner jacobian "
              << r.min_corner_jacobian << ", " << (r.ok() ? "valid" : r.message) << '\n';
    return r.ok() ? 0 : 1;
  }
  throw UsageError("don't know how to inspect " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive quad-mesh density prediction for 2D plane-stress elasticity"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  app.add_option("--config", opt.config_file, "key=value configuration file")->envname(env_name("config"));
  app.add_option("--set", opt.sets, "Override one config key (key=value), repeatable");
  app.add_option("--workers", opt.workers, "Sample-level worker threads")->envname(env_name("workers"));
  app.add_option("--depth", opt.depth, "U-net base channel depth")->envname(env_name("depth"));
  app.add_option("--epochs", opt.epochs, "Maximum training epochs")->envname(env_name("epochs"));
  app.add_option("--log-level", opt.log_level, "trace, debug, info, warn, error, off")
      ->envname(env_name("log-level"));

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a dataset for one complexity class");
  g->add_option("--class", gen.cls, "Complexity class c,k,s")->required();
  g->add_option("--count", gen.count, "Number of samples")->required();
  g->add_option("--seed", gen.seed, "Dataset seed")->envname(env_name("seed"));
  g->add_option("--out", gen.out, "Output directory")->required();

  AdaptArgs adapt;
  auto* ad = app.add_subcommand("adapt", "Run the adaptive refinement loop on one domain");
  ad->add_option("--domain", adapt.domain, "Domain file");
  ad->add_option("--class", adapt.cls, "Generate a domain of this class instead");
  ad->add_option("--seed", adapt.seed, "Seed for --class")->envname(env_name("seed"));
  ad->add_option("--out", adapt.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one U-net per model card");
  t->add_option("--cards", tr.cards, "Comma-separated card names")->capture_default_str();
  t->add_option("--data", tr.data, "Dataset directories")->required();
  t->add_option("--out", tr.out, "Model directory")->required();
  t->add_option("--holdout", tr.holdout, "Samples kept back at the end of each dataset")
      ->envname(env_name("holdout"));
  t->add_option("--seed", tr.seed, "Model initialisation and shuffling seed")->envname(env_name("seed"));

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Predict a density image");
  p->add_option("--model", pr.model, "Model file")->required();
  p->add_option("--sample", pr.sample, "Sample directory (uses its domain.txt)");
  p->add_option("--domain", pr.domain, "Domain file");
  p->add_option("--inputs", pr.inputs, "geometry,dirichlet,neumann images (GIMG or PNG)");
  p->add_option("--out", pr.out, "Output directory")->required();
  p->add_flag("--postprocess", pr.postprocess, "Rescale small values before meshing");
  p->add_flag("--mesh", pr.mesh, "Also mesh the predicted density");

  MeshArgs me;
  auto* m = app.add_subcommand("mesh", "Mesh a domain from a density image");
  m->add_option("--density", me.density, "Density image (GIMG or PNG)")->required();
  m->add_option("--domain", me.domain, "Domain file")->required();
  m->add_option("--out", me.out, "Mesh file")->required();
  m->add_flag("--postprocess", me.postprocess, "Rescale small values before meshing");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compare predicted, adaptive and uniform meshes");
  e->add_option("--model", ev.model, "Model file");
  e->add_flag("--oracle", ev.oracle, "Use the ground-truth density as the prediction");
  e->add_option("--card", ev.card, "Model card (default: next to the model)");
  e->add_option("--data", ev.data, "Dataset directories")->required();
  e->add_option("--holdout", ev.holdout, "Evaluate only the last N samples of each dataset")
      ->envname(env_name("holdout"));
  e->add_option("--out", ev.out, "Report directory")->required();

  std::string inspect_path;
  auto* in = app.add_subcommand("inspect", "Describe a dataset, model, mesh or image and verify hashes");
  in->add_option("path", inspect_path, "Path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 2;
  }

  try {
    spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
    spdlog::set_level(spdlog::level::from_str(opt.log_level));
    if (*in) return cmd_inspect(inspect_path);
    const PipelineConfig cfg = opt.build();
    if (*g) return cmd_gen(gen, cfg);
    if (*ad) return cmd_adapt(adapt, cfg);
    if (*t) return cmd_train(tr, cfg);
    if (*p) return cmd_predict(pr, cfg);
    if (*m) return cmd_mesh(me, cfg);
    if (*e) return cmd_eval(ev, cfg);
  } catch (const UsageError& err) {
    spdlog::error("{}", err.what());
    return 2;
  } catch (const std::exception& err) {
    spdlog::error("{}", err.what());
    return 1;
  }
  return 2;
}
