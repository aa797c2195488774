#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "afloc/featuremap.hpp"
#include "afloc/nn/network.hpp"
#include "afloc/random.hpp"

namespace afloc {

struct HyperParams {
  double lr = 0.0002;
  double c = 0.01;          // weight clipping bound
  int bs = 49;              // mini-batch size
  int f_d = 2;              // discriminator iterations per generator iteration
  int z_dim = 100;
  int iterations = 1000;    // outer (generator) iterations
  int image_size = 256;
  int base_channels = 0;    // 0 picks 64 at 256 px and 16 below
  double rms_decay = 0.9;
  double rms_epsilon = 1e-8;

  void validate() const;
  int base() const;
};

/// First-batch extrema of the raw critic score. Frozen once set.
class NormCalibration {
 public:
  static constexpr double kMinSpan = 1e-12;

  NormCalibration() = default;

  /// Freezes the anchors to the min/max of `scores`. Throws
  /// DegenerateCalibration if the span is below kMinSpan and
  /// CalibrationFrozen on a second call.
  void freeze(std::span<const double> scores);
  /// Restores previously frozen anchors (checkpoint load).
  static NormCalibration restore(double d_min, double d_max);

  bool frozen() const { return frozen_; }
  double d_min() const { return d_min_; }
  double d_max() const { return d_max_; }

 private:
  double d_min_ = 0.0;
  double d_max_ = 0.0;
  bool frozen_ = false;
};

/// (score - d_min) / (d_max - d_min) clamped to [0, 1].
double d_norm(double score, const NormCalibration& calib);
/// Derivative of d_norm; zero where the clamp is active.
double d_norm_grad(double score, const NormCalibration& calib);

std::vector<nn::LayerSpec> generator_specs(const HyperParams& hp);
std::vector<nn::LayerSpec> discriminator_specs(const HyperParams& hp);

struct GanModel {
  RpId rp_id = 0;
  HyperParams hp;
  nn::Network<float> generator;
  nn::Network<float> discriminator;
  NormCalibration calib;
  long long discriminator_updates = 0;
  long long generator_updates = 0;
};

/// Fresh model with randomly initialised parameters.
GanModel make_gan(const HyperParams& hp, RpId rp_id, std::uint64_t seed);

/// Uniform [-1, 1] noise of shape (n, z_dim).
nn::Tensor<float> sample_noise(int n, int z_dim, Rng& rng);

nn::Tensor<float> generator_forward(GanModel& model, const nn::Tensor<float>& z,
                                    nn::Mode mode = nn::Mode::Inference);
/// Raw critic scores, one per image.
std::vector<double> discriminator_forward(GanModel& model, const nn::Tensor<float>& images,
                                          nn::Mode mode = nn::Mode::Inference);

/// Scores the batch and freezes the model's calibration from it.
NormCalibration calibrate_first_batch(GanModel& model, const nn::Tensor<float>& first_batch,
                                      nn::Mode mode = nn::Mode::Train);

/// Stacks maps into an (n, 3, r, r) tensor in [-1, 1].
nn::Tensor<float> maps_to_tensor(std::span<const FeatureMap> maps);
nn::Tensor<float> maps_to_tensor(std::span<const FeatureMap* const> maps);

struct TelemetryRow {
  int iteration = 0;
  double d_loss = 0.0;          // mean d_norm(real) - mean d_norm(fake), last critic step
  double g_loss = 0.0;          // -mean d_norm(fake) at the generator step
  double clamp_fraction = 0.0;  // scores outside [d_min, d_max] this iteration
  double clip_fraction = 0.0;   // critic weights clipped, averaged over critic steps
};

enum class TrainEventKind { Calibrated, DiscriminatorUpdate, GeneratorUpdate };

struct TrainEvent {
  TrainEventKind kind;
  int iteration;
};

struct TrainOptions {
  std::function<void(const TrainEvent&, GanModel&)> observer;
  /// Written before NonFiniteLoss is raised.
  std::optional<std::filesystem::path> failure_checkpoint;
};

struct TrainResult {
  GanModel model;
  std::vector<TelemetryRow> telemetry;
};

/// Adversarial training of one reference point's model on its maps.
TrainResult train(std::span<const FeatureMap> maps, const HyperParams& hp, std::uint64_t seed,
                  const TrainOptions& options = {});

/// `count` maps labelled with the model's reference point.
std::vector<FeatureMap> generate_maps(GanModel& model, int count, std::uint64_t seed,
                                      int first_draw_index = 0);

/// Fraction of held-out real maps with d_norm >= 0.5 plus generated samples
/// with d_norm < 0.5, over both sets (inference-mode critic).
double discriminator_accuracy(GanModel& model, std::span<const FeatureMap> real, int n_fake,
                              std::uint64_t seed);

// Persistence: <path>.ckpt (tensor container) and <path>.json (metadata).
void save_gan(const GanModel& model, const std::filesystem::path& path);
GanModel load_gan(const std::filesystem::path& path);

void write_telemetry_csv(const std::filesystem::path& path, std::span<const TelemetryRow> rows);

}  // namespace afloc
