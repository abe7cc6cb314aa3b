#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "meshdens/pipeline.hpp"

using namespace meshdens;
namespace fs = std::filesystem;

namespace {

PipelineConfig quick_config() {
  PipelineConfig cfg;
  cfg.adaptive.reference_h = 0.02;
  cfg.adaptive.levels = 2;
  cfg.train.batch_size = 4;
  cfg.train.max_epochs = 5;
  cfg.evaluate_postprocessed = false;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("meshdens_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

SampleRecord record_of(const GeneratedSample& g, int id, const ComplexityClass& cls) {
  SampleRecord r;
  r.id = id;
  r.cls = cls;
  r.domain = g.domain;
  r.inputs = g.inputs;
  r.target = g.target;
  std::ostringstream os;
  write_domain(os, g.domain);
  r.domain_hash = sha256_hex(os.str());
  return r;
}

}  // namespace

TEST_CASE("sha256 of a known vector") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("pipeline config survives a JSON round trip") {
  PipelineConfig c = quick_config();
  c.depth = 4;
  c.train.adam.lr = 5e-4;
  c.post.factor = 0.5f;
  c.adaptive.bc.t_mag = 3.0;
  const PipelineConfig back = PipelineConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  PipelineConfig w = c;
  w.workers = 4;
  CHECK(w.hash() == c.hash());
  w.depth = 5;
  CHECK(w.hash() != c.hash());
  CHECK(PipelineConfig::from_json(nlohmann::json::object()).to_json() == PipelineConfig{}.to_json());
  CHECK_THROWS_AS(PipelineConfig::from_json({{"resolution", "sixty"}}), PipelineError);
}

TEST_CASE("gen_dataset with zero samples writes a valid empty manifest") {
  TempDir dir("gen_empty");
  const Manifest m = gen_dataset({0, 0, 0}, 0, 1, dir.str(), quick_config());
  CHECK(m.samples.empty());
  const Manifest back = Manifest::load((dir.path / kManifestName).string());
  CHECK(back.count == 0);
  CHECK(back.config_hash == quick_config().hash());
  CHECK(verify_dataset(dir.str()).empty());
  CHECK(load_dataset(dir.str()).empty());
}

TEST_CASE("gen_dataset is deterministic and independent of the worker count") {
  TempDir a("gen_a"), b("gen_b");
  PipelineConfig cfg = quick_config();
  const Manifest ma = gen_dataset({0, 0, 0}, 3, 7, a.str(), cfg);
  cfg.workers = 2;
  const Manifest mb = gen_dataset({0, 0, 0}, 3, 7, b.str(), cfg);
  REQUIRE(ma.samples.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(ma.samples[i].files == mb.samples[i].files);
    CHECK(ma.samples[i].seed == mb.samples[i].seed);
    CHECK(fs::exists(a.path / ma.samples[i].dir / "target.gimg"));
  }
  CHECK(verify_dataset(a.str()).empty());

  const auto data = load_dataset(a.str());
  REQUIRE(data.size() == 3);
  for (const auto& s : data) {
    CHECK(s.cls == ComplexityClass{0, 0, 0});
    CHECK(validate(s.domain).empty());
    CHECK(s.target.in_unit_range());
    CHECK(s.config_hash == ma.config_hash);
  }

  std::ofstream(a.path / ma.samples[1].dir / "target.gimg", std::ios::app) << "x";
  const auto problems = verify_dataset(a.str());
  REQUIRE(problems.size() == 1);
  CHECK(problems[0].find("target.gimg") != std::string::npos);
}

TEST_CASE("gen_dataset for two holes gives two holes everywhere") {
  TempDir dir("gen_holes");
  const Manifest m = gen_dataset({0, 2, 0}, 2, 3, dir.str(), quick_config());
  for (const auto& s : load_dataset(dir.str())) CHECK(s.domain.holes().size() == 2);
  CHECK(m.samples.size() == 2);
  CHECK_THROWS_AS(gen_dataset({0, 3, 0}, 1, 1, dir.str(), quick_config()), PipelineError);
}

TEST_CASE("model cards list their training classes") {
  const ModelCard rt = ModelCard::named("RT"), ct = ModelCard::named("CT");
  CHECK(rt.covers({0, 0, 0}));
  CHECK(rt.covers({1, 0, 0}));
  CHECK(rt.covers({0, 2, 0}));
  CHECK_FALSE(rt.covers({1, 1, 0}));
  CHECK(ct.covers({1, 2, 0}));
  CHECK(ModelCard::named("M0k0").covers({0, 1, 0}));
  CHECK_FALSE(ModelCard::named("M0k0").covers({0, 0, 0}));
  CHECK_THROWS_AS(ModelCard::named("M2k0"), PipelineError);
}

TEST_CASE("split_holdout keeps the tail for testing") {
  std::vector<SampleRecord> v(5);
  for (int i = 0; i < 5; ++i) v[static_cast<std::size_t>(i)].id = i;
  const auto [train, test] = split_holdout(v, 2);
  REQUIRE(train.size() == 3);
  REQUIRE(test.size() == 2);
  CHECK(test[0].id == 3);
  CHECK_THROWS_AS(split_holdout(v, 6), PipelineError);
}

TEST_CASE("training a card: coverage, exclusion and a falling loss") {
  TempDir data_dir("train_data"), model_dir("train_models");
  PipelineConfig cfg = quick_config();
  gen_dataset({0, 0, 0}, 9, 11, data_dir.str(), cfg);
  auto data = load_dataset(data_dir.str());

  CHECK_THROWS_WITH_AS(train_model(ModelCard::named("CT"), data, cfg, model_dir.str()),
                       doctest::Contains("1,k,0"), PipelineError);

  // A foreign (1,1,0) sample is ignored by M000 and would be by RT.
  SampleRecord extra = data[0];
  extra.cls = {1, 1, 0};
  extra.domain_hash = "not-a-training-sample";
  data.push_back(extra);

  cfg.depth = 4;
  const TrainResult r = train_model(ModelCard::named("M000"), data, cfg, model_dir.str());
  CHECK(r.samples == 9);
  CHECK(std::find(r.training_hashes.begin(), r.training_hashes.end(), "not-a-training-sample") ==
        r.training_hashes.end());
  REQUIRE(r.state.history.size() == 5);
  for (std::size_t e = 1; e < 5; ++e) CHECK(r.state.history[e].train_loss < r.state.history[e - 1].train_loss);
  CHECK(fs::exists(model_dir.path / "M000.unet"));
  CHECK(fs::exists(model_dir.path / "M000_train_log.csv"));
  const auto desc = nlohmann::json::parse(read_model_descriptor(r.model_path));
  CHECK(desc["base"] == 4);
  CHECK(desc["meta"]["depth"] == 4);
  CHECK(desc["meta"]["config_hash"] == cfg.hash());
  CHECK(card_training_hashes((model_dir.path / "M000_card.json").string()).size() == 9);

  // Prediction from the trained model beats the all-ones image on a training sample.
  UNet<float> net = load_model(r.model_path);
  const GrayImage support = rasterize_support(data[0].domain, 60);
  const GrayImage pred = unet_forward(net, data[0].inputs);
  CHECK(epsilon_rel(data[0].target, pred, support) < epsilon_rel(data[0].target, GrayImage(60, 60, 1.0f), support));
  const Prediction p = predict_and_mesh(net, data[0].domain, true, cfg);
  CHECK(inspect_mesh(p.mesh, &data[0].domain).ok());

  // Training samples are refused at evaluation.
  const auto hashes = card_training_hashes((model_dir.path / "M000_card.json").string());
  CHECK_THROWS_AS(evaluate(oracle_predictor(), {data[0]}, cfg, hashes), PipelineError);
}

TEST_CASE("constant predictions mesh at the clamp endpoints") {
  const DomainSpec sq = testutil::unit_square();
  const PipelineConfig cfg;
  const Prediction ones = mesh_from_prediction(GrayImage(60, 60, 1.0f), sq, false, cfg);
  const QuadMesh uni = mesh_uniform(sq, cfg.bounds().h_max);
  CHECK(ones.mesh.vertices == uni.vertices);
  CHECK(ones.mesh.quads == uni.quads);

  DomainSpec small = sq;
  small.geom.outer = testutil::rect(0.45, 0.45, 0.55, 0.55);
  const Prediction zeros = mesh_from_prediction(GrayImage(60, 60, 0.0f), small, false, cfg);
  for (std::size_t q = 0; q < zeros.mesh.quads.size(); ++q) CHECK(zeros.mesh.element_size(q) == cfg.bounds().h_min);
  CHECK_THROWS_AS(mesh_from_prediction(GrayImage(30, 30, 1.0f), sq, false, cfg), PipelineError);
}

TEST_CASE("R^U arithmetic") {
  CHECK(ratio_ru(0.2, 0.2) == 1.0);
  CHECK(ratio_ru(0.112577, 0.100510) == doctest::Approx(1.12006).epsilon(1e-5));
  CHECK_THROWS_AS(ratio_ru(0.1, 0.0), PipelineError);
}

TEST_CASE("evaluate with the oracle predictor and a flagged sample") {
  const PipelineConfig cfg = quick_config();
  std::vector<SampleRecord> test;
  for (int i = 0; i < 3; ++i) test.push_back(record_of(generate_sample({0, 0, 0}, 100 + i, cfg), i, {0, 0, 0}));
  const SamplePredictor flaky = [](const SampleRecord& s) {
    if (s.id == 1) throw PipelineError("no prediction");
    return s.target;
  };
  const EvalReport rep = evaluate(flaky, test, cfg);
  REQUIRE(rep.rows.size() == 2);
  REQUIRE(rep.flagged.size() == 1);
  CHECK(rep.flagged[0].first == 1);
  for (const auto& r : rep.rows) {
    CHECK(r.eps_rel == 0.0);
    CHECK(r.eps_rel_ones > 0.0);
    CHECK(r.r_u == r.e_rel_uniform / r.e_rel_pred);
    CHECK(std::abs(r.e_rel_pred - r.e_rel_adaptive) <= 0.15 * r.e_rel_adaptive);
    CHECK(std::abs(static_cast<double>(r.dofs_uniform) - static_cast<double>(r.dofs_pred)) <= 0.05 * r.dofs_pred);
  }
  CHECK(rep.mean_eps_rel() == 0.0);
  CHECK(rep.mean_eps_rel_by_class().at("0,0,0") == 0.0);
  int total = 0;
  for (int c : rep.histogram()) total += c;
  CHECK(total == 2);

  TempDir dir("eval_out");
  fs::create_directories(dir.path);
  rep.write_csv((dir.path / "report.csv").string());
  save_histogram_png((dir.path / "ru.png").string(), rep.histogram());
  std::ifstream is(dir.path / "report.csv");
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) ++lines;
  CHECK(lines == 3);
  CHECK(load_image((dir.path / "ru.png").string()).width() > 0);
  CHECK(rep.summary()["rows"] == 2);
}
