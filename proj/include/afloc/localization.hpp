#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "afloc/featuremap.hpp"
#include "afloc/nn/network.hpp"

namespace afloc {

struct ClassifierConfig {
  std::vector<int> conv_widths{16, 32, 64};
  int fc_width = 128;
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  int patience = 5;             // epochs without validation improvement
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// AF-CNN: conv(3x3)+relu+maxpool stages, FC+relu, FC to one logit per
/// reference point. Class i is reference point i + 1.
struct AfCnnModel {
  nn::Network<float> net;
  int class_count = 0;
  int image_size = 0;
  std::vector<int> conv_widths;
  int fc_width = 0;
};

std::vector<nn::LayerSpec> classifier_specs(int image_size, int class_count, const ClassifierConfig& config);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
};

struct ClassifierTraining {
  AfCnnModel model;
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

/// Trains on every map in the database. Needs maps for every grid point,
/// at least two each.
ClassifierTraining train_classifier(const FingerprintDb& db, const ClassifierConfig& config);

/// Same, with explicit labels (class index = label). Used for null-model checks.
ClassifierTraining train_classifier(std::span<const FeatureMap* const> maps, std::span<const int> labels,
                                    int class_count, const ClassifierConfig& config);

/// Probability per reference point (index i is rp_id i + 1).
Eigen::VectorXd classify(AfCnnModel& model, const FeatureMap& map);
/// Batched classify; row i belongs to maps[i].
Eigen::MatrixXd classify_batch(AfCnnModel& model, std::span<const FeatureMap* const> maps);

/// rp_ids of the four largest probabilities, ties to the lower id.
std::array<RpId, 4> top4(const Eigen::VectorXd& probs);
/// Unweighted centroid of the top-4 reference points.
Eigen::Vector2d top4_centroid(const Eigen::VectorXd& probs, const RpGrid& grid);

struct LocalizationReport {
  std::vector<double> per_test_errors;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<std::pair<double, double>> cdf;  // (error, cumulative fraction)
  std::array<double, 3> range_probs{};          // P(err <= 1, 2, 3 m)
};

LocalizationReport make_report(std::vector<double> errors);

struct TestSample {
  FeatureMap map;
  Eigen::Vector2d position;
};

LocalizationReport evaluate(AfCnnModel& model, std::span<const TestSample> tests, const RpGrid& grid);

/// Zero-mean Gaussian noise with standard deviation sigma_scale times the
/// per-(link, subcarrier) amplitude spread of the set, added to a freshly
/// drawn amplitude block before rasterisation. Draw j reuses real draw
/// j mod maps_per_rp.
FingerprintDb adnoi_augment(const FingerprintDb& db, std::span<const CsiSampleSet> sets, double fraction,
                            double sigma_scale, std::uint64_t seed);

/// Per-(link, subcarrier) standard deviation of the set's amplitudes.
std::vector<Eigen::RowVectorXd> amplitude_spread(const CsiSampleSet& set);

/// Adds the ADNOI perturbation to `block` in place.
void add_amplitude_noise(AmplitudeBlock& block, const std::vector<Eigen::RowVectorXd>& spread, double sigma_scale,
                         std::uint64_t seed);

void write_errors_csv(std::ostream& out, const LocalizationReport& report);
void write_cdf_csv(std::ostream& out, const LocalizationReport& report);
void write_summary(std::ostream& out, const LocalizationReport& report);

void save_classifier(const AfCnnModel& model, const std::filesystem::path& path);
AfCnnModel load_classifier(const std::filesystem::path& path);

}  // namespace afloc
