#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "afloc/afdcgan.hpp"
#include "afloc/csi.hpp"
#include "afloc/featuremap.hpp"
#include "afloc/localization.hpp"
#include "afloc/synth.hpp"

namespace afloc {

struct PipelineConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  bool fixed_reduction = false;

  std::filesystem::path raw = "raw";          // ingest input: <raw>/train/<rp_id>.dat
  std::filesystem::path dataset = "dataset";  // canonical CSV + grid
  std::filesystem::path db = "db";
  std::filesystem::path augmented_db = "db_augmented";
  std::filesystem::path test_db = "db_test";
  std::filesystem::path models = "models";
  std::filesystem::path reports = "reports";

  int grid_nx = 4;
  int grid_ny = 4;
  double grid_spacing = 1.0;
  CaptureMeta capture;

  int samples_per_rp = 5000;
  int test_samples = 1000;      // packets per test point
  SynthConfig synth;

  FeatureMapConfig featuremap;  // amp_max is computed, not configured
  double amp_max_percentile = 99.5;
  int test_maps_per_point = 20;

  HyperParams gan;
  double gan_fraction = 1.5;    // generated maps per RP as a fraction of maps_per_rp

  double noise_fraction = 1.5;
  double noise_sigma_scale = 1.0;

  ClassifierConfig classifier;

  void validate() const;
};

/// Flat `key = value` settings in a fixed order, values formatted so that
/// parsing them back reproduces the config exactly.
std::vector<std::pair<std::string, std::string>> config_settings(const PipelineConfig& cfg);
void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value);
/// Reads `key = value` lines; `#` starts a comment.
void apply_config_text(PipelineConfig& cfg, std::istream& in);
std::string config_text(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);

/// Propagates the global seed into the per-module seeds.
void propagate_seed(PipelineConfig& cfg);

void write_run_manifest(const std::filesystem::path& dir, const std::string& command, const PipelineConfig& cfg);
PipelineConfig read_run_manifest(const std::filesystem::path& dir);

// Commands. Each reads its inputs from and writes its outputs to the
// directories named in the config.
void cmd_synth(const PipelineConfig& cfg);
void cmd_ingest(const PipelineConfig& cfg);
void cmd_featuremaps(const PipelineConfig& cfg);
void cmd_train_gan(const PipelineConfig& cfg);
void cmd_generate(const PipelineConfig& cfg);
void cmd_augment_noise(const PipelineConfig& cfg);
void cmd_train_classifier(const PipelineConfig& cfg, const std::filesystem::path& db_dir);
LocalizationReport cmd_evaluate(const PipelineConfig& cfg);

/// Canonical dataset files.
RpGrid read_points_csv(const std::filesystem::path& path);
void write_points_csv(const std::filesystem::path& path, const RpGrid& grid);

/// Test maps: one db-format directory whose grid holds the test positions.
std::vector<TestSample> load_test_samples(const std::filesystem::path& dir);

}  // namespace afloc
