#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "meshdens/adaptive.hpp"
#include "meshdens/imaging.hpp"
#include "meshdens/nn.hpp"

namespace meshdens {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::string& path);

/// Every knob of the data, training and evaluation stages. Echoed into each
/// manifest, model card and report together with its hash.
struct PipelineConfig {
  int resolution = kDefaultResolution;
  AdaptiveConfig adaptive;
  int depth = 8;
  std::uint64_t model_seed = 0;
  TrainConfig train;
  PostprocessConfig post;
  double dof_tolerance = 0.05;
  bool evaluate_postprocessed = true;
  int workers = 1;

  const SizeBounds& bounds() const { return adaptive.bounds; }
  void validate() const;
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  std::string hash() const;
};

// ---------------------------------------------------------------------------
// Dataset

struct ManifestEntry {
  int id = 0;
  ComplexityClass cls;
  std::uint64_t seed = 0;
  int attempts = 1;
  std::string dir;                            // relative to the dataset root
  std::map<std::string, std::string> files;  // file name -> sha256
  std::vector<double> e_rel;                  // adaptive levels vs M*
  std::size_t dofs = 0;                       // final adaptive mesh

  nlohmann::json to_json() const;
  static ManifestEntry from_json(const nlohmann::json& j);
};

struct Manifest {
  ComplexityClass cls;
  int count = 0;
  std::uint64_t seed = 0;
  int skipped = 0;
  nlohmann::json config;
  std::string config_hash;
  std::vector<ManifestEntry> samples;

  /// JSON lines: a header object, then one object per sample.
  void save(const std::string& path) const;
  static Manifest load(const std::string& path);
};

inline constexpr const char* kManifestName = "manifest.jsonl";

/// One training pair with its domain, as stored on disk.
struct SampleRecord {
  int id = 0;
  ComplexityClass cls;
  std::uint64_t seed = 0;
  DomainSpec domain;
  InputStack inputs;
  GrayImage target;
  std::string domain_hash;
  std::string config_hash;
};

/// Single sample of the data pipeline: domain, adaptive run, density target.
struct GeneratedSample {
  DomainSpec domain;
  AdaptiveResult adaptive;
  InputStack inputs;
  GrayImage target;
};
GeneratedSample generate_sample(const ComplexityClass& cls, std::uint64_t seed, const PipelineConfig& cfg);

using Progress = std::function<void(const std::string&)>;

/// Writes `count` samples under `out_dir`/sample_%06d plus the manifest.
/// Failed samples are regenerated from a derived seed; aborts once more than
/// 20% of attempts fail.
Manifest gen_dataset(const ComplexityClass& cls, int count, std::uint64_t seed, const std::string& out_dir,
                     const PipelineConfig& cfg = {}, const Progress& progress = {});

SampleRecord load_sample(const std::string& dataset_dir, const ManifestEntry& entry);
std::vector<SampleRecord> load_dataset(const std::string& dataset_dir);
/// Re-hashes every file listed in the manifest; returns one message per mismatch.
std::vector<std::string> verify_dataset(const std::string& dataset_dir);

// ---------------------------------------------------------------------------
// Model cards

/// A class family: fixed convexity, and either no holes or one or more.
struct ClassGroup {
  int convexity = 0;
  bool holes = false;

  bool matches(const ComplexityClass& c) const { return c.convexity == convexity && (c.genus > 0) == holes; }
  std::string label() const;
};

struct ModelCard {
  std::string name;
  std::vector<ClassGroup> groups;

  bool covers(const ComplexityClass& c) const;
  static ModelCard named(const std::string& name);
  static std::vector<std::string> names();
};

struct TrainResult {
  ModelCard card;
  TrainState state;
  std::size_t samples = 0;
  std::map<std::string, std::size_t> per_group;
  std::vector<std::string> training_hashes;  // domain.txt hashes, train and validation
  std::string model_path;
};

/// Splits a dataset into its first `count - holdout` samples and the rest.
std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split_holdout(std::vector<SampleRecord> data,
                                                                             std::size_t holdout);

/// Trains one U-net on the samples whose class the card covers. Writes
/// <name>.unet, <name>_train_log.csv and <name>_card.json into out_dir.
TrainResult train_model(const ModelCard& card, const std::vector<SampleRecord>& data, const PipelineConfig& cfg,
                        const std::string& out_dir, const EpochCallback& on_epoch = {});

/// Domain hashes recorded in a model card file.
std::set<std::string> card_training_hashes(const std::string& card_path);

// ---------------------------------------------------------------------------
// Prediction

struct Prediction {
  GrayImage raw;
  GrayImage density;  // post-processed if requested, masked to 1 outside
  QuadMesh mesh;
};

/// Density image -> sizing field -> quad mesh.
Prediction mesh_from_prediction(const GrayImage& raw, const DomainSpec& domain, bool postprocess,
                                const PipelineConfig& cfg = {});
Prediction predict_and_mesh(UNet<float>& model, const DomainSpec& domain, bool postprocess,
                            const PipelineConfig& cfg = {});

// ---------------------------------------------------------------------------
// Evaluation

using SamplePredictor = std::function<GrayImage(const SampleRecord&)>;
SamplePredictor model_predictor(UNet<float>& model);
/// Returns the ground-truth target: the best any network could do.
SamplePredictor oracle_predictor();

/// e_rel(uniform) / e_rel(predicted).
double ratio_ru(double e_rel_uniform, double e_rel_predicted);

struct EvalRow {
  int id = 0;
  ComplexityClass cls;
  double eps_rel = 0.0;
  double eps_rel_ones = 0.0;  // all-ones prediction
  double e_rel_adaptive = 0.0;
  double e_rel_pred = 0.0;
  double e_rel_uniform = 0.0;
  double r_u = 0.0;
  double e_rel_post = 0.0;
  double e_rel_uniform_post = 0.0;
  double r_u_post = 0.0;
  std::size_t dofs_adaptive = 0, dofs_pred = 0, dofs_uniform = 0, dofs_post = 0;
  std::size_t quads_adaptive = 0, quads_pred = 0, quads_uniform = 0, quads_post = 0;
  double vm_max_ref = 0.0, vm_max_pred = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<std::pair<int, std::string>> flagged;  // sample id, reason
  nlohmann::json config;
  std::string config_hash;

  double mean_eps_rel() const;
  double mean_eps_rel_ones() const;
  std::map<std::string, double> mean_eps_rel_by_class() const;
  /// Counts of R^U in [lo + i w, lo + (i+1) w); the ends collect the tails.
  std::vector<int> histogram(double lo = 0.0, double hi = 3.0, int bins = 30) const;

  void write_csv(const std::string& path) const;
  nlohmann::json summary() const;
};

/// Adaptive, predicted and DOF-matched uniform meshes for each sample, with
/// e_rel against the adaptive run's M*. Samples whose domain hash appears in
/// `training_hashes` are refused.
EvalReport evaluate(const SamplePredictor& predictor, const std::vector<SampleRecord>& test,
                    const PipelineConfig& cfg = {}, const std::set<std::string>& training_hashes = {},
                    const Progress& progress = {});

/// Bar chart of the R^U histogram as a grayscale PNG (dark bars, white ground).
void save_histogram_png(const std::string& path, const std::vector<int>& counts);

}  // namespace meshdens
