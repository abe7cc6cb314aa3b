#include <filesystem>
#include <fstream>

#include "meshdens/pipeline.hpp"

namespace fs = std::filesystem;

namespace meshdens {

std::string ClassGroup::label() const { return holes ? std::to_string(convexity) + ",k,0" : std::to_string(convexity) + ",0,0"; }

bool ModelCard::covers(const ComplexityClass& c) const {
  for (const auto& g : groups)
    if (g.matches(c)) return true;
  return false;
}

std::vector<std::string> ModelCard::names() { return {"M000", "M100", "M0k0", "M1k0", "RT", "CT"}; }

ModelCard ModelCard::named(const std::string& name) {
  const ClassGroup c00{0, false}, c10{1, false}, c0k{0, true}, c1k{1, true};
  if (name == "M000") return {name, {c00}};
  if (name == "M100") return {name, {c10}};
  if (name == "M0k0") return {name, {c0k}};
  if (name == "M1k0") return {name, {c1k}};
  if (name == "RT") return {name, {c00, c10, c0k}};
  if (name == "CT") return {name, {c00, c10, c0k, c1k}};
  throw PipelineError("unknown model card '" + name + "' (expected M000, M100, M0k0, M1k0, RT or CT)");
}

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split_holdout(std::vector<SampleRecord> data,
                                                                             std::size_t holdout) {
  if (holdout > data.size())
    throw PipelineError("holdout of " + std::to_string(holdout) + " exceeds the " + std::to_string(data.size()) +
                        " available samples");
  std::vector<SampleRecord> tail(std::make_move_iterator(data.end() - static_cast<std::ptrdiff_t>(holdout)),
                                 std::make_move_iterator(data.end()));
  data.resize(data.size() - holdout);
  return {std::move(data), std::move(tail)};
}

TrainResult train_model(const ModelCard& card, const std::vector<SampleRecord>& data, const PipelineConfig& cfg,
                        const std::string& out_dir, const EpochCallback& on_epoch) {
  cfg.validate();
  TrainResult res;
  res.card = card;
  std::vector<TrainingPair> pairs;
  for (const auto& g : card.groups) res.per_group[g.label()] = 0;
  for (const auto& s : data) {
    if (!card.covers(s.cls)) continue;
    for (const auto& g : card.groups)
      if (g.matches(s.cls)) ++res.per_group[g.label()];
    if (s.inputs.geometry.width() != cfg.resolution || s.target.width() != cfg.resolution)
      throw PipelineError("sample " + std::to_string(s.id) + " resolution does not match the configuration");
    pairs.push_back({s.inputs, s.target});
    res.training_hashes.push_back(s.domain_hash);
  }
  std::string missing;
  for (const auto& [label, n] : res.per_group)
    if (n == 0) missing += (missing.empty() ? "" : ", ") + label;
  if (!missing.empty()) {
    std::string report = "model card " + card.name + " lacks training data for class(es) " + missing + "; have";
    for (const auto& [label, n] : res.per_group) report += " " + label + ":" + std::to_string(n);
    throw PipelineError(report);
  }
  res.samples = pairs.size();

  fs::create_directories(out_dir);
  const fs::path base = fs::path(out_dir) / card.name;
  std::ofstream log(base.string() + "_train_log.csv");
  if (!log) throw PipelineError("cannot write " + base.string() + "_train_log.csv");
  log << "epoch,train_mse,val_mse\n";

  UNet<float> net(UNetConfig{cfg.depth, 3, cfg.resolution}, cfg.model_seed);
  res.state = train(net, pairs, cfg.train, [&](const EpochLog& e) {
    char line[128];
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g\n", e.epoch + 1, e.train_loss, e.val_loss);
    log << line << std::flush;
    if (on_epoch) on_epoch(e);
  });

  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : card.groups) groups.push_back(g.label());
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : res.state.history)
    history.push_back({{"epoch", e.epoch + 1}, {"train_mse", e.train_loss},
                       {"val_mse", std::isnan(e.val_loss) ? nlohmann::json(nullptr) : nlohmann::json(e.val_loss)}});
  nlohmann::json meta = {{"card", card.name},
                         {"classes", groups},
                         {"depth", cfg.depth},
                         {"config", cfg.to_json()},
                         {"config_hash", cfg.hash()},
                         {"best_epoch", res.state.best_epoch + 1},
                         {"best_val_mse", std::isfinite(res.state.best_val) ? nlohmann::json(res.state.best_val)
                                                                            : nlohmann::json(nullptr)}};
  res.model_path = base.string() + ".unet";
  save_model(res.model_path, net, meta.dump());

  nlohmann::json card_json = meta;
  card_json["samples"] = res.samples;
  card_json["per_class"] = res.per_group;
  card_json["train_count"] = res.state.train_indices.size();
  card_json["val_count"] = res.state.val_indices.size();
  card_json["steps"] = res.state.steps;
  card_json["stopped_early"] = res.state.stopped_early;
  card_json["history"] = history;
  card_json["training_hashes"] = res.training_hashes;
  card_json["model_file"] = fs::path(res.model_path).filename().string();
  card_json["model_sha256"] = sha256_file(res.model_path);
  std::ofstream cj(base.string() + "_card.json");
  if (!cj) throw PipelineError("cannot write " + base.string() + "_card.json");
  cj << card_json.dump(2) << '\n';
  return res;
}

std::set<std::string> card_training_hashes(const std::string& card_path) {
  std::ifstream is(card_path);
  if (!is) throw PipelineError("cannot read " + card_path);
  try {
    const auto j = nlohmann::json::parse(is);
    const auto v = j.at("training_hashes").get<std::vector<std::string>>();
    return {v.begin(), v.end()};
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError(card_path + ": " + e.what());
  }
}

}  // namespace meshdens
