#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "afloc/csi.hpp"

namespace afloc {

struct FeatureMapConfig {
  int rows_per_map = 100;
  int maps_per_rp = 200;
  int resolution = 256;
  double amp_max = 1.0;  // frozen vertical-axis ceiling, see compute_amp_max
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const FeatureMapConfig&) const = default;
};

enum class Provenance { Real, Generated, NoiseAugmented };

std::string_view provenance_name(Provenance p);
Provenance parse_provenance(std::string_view s);

inline constexpr int kMapChannels = 3;

/// Interleaved RGB raster, row 0 at the top.
struct FeatureMap {
  RpId rp_id = 0;
  int resolution = 0;
  Provenance provenance = Provenance::Real;
  int draw_index = 0;
  std::vector<std::uint8_t> pixels;  // resolution * resolution * 3

  std::uint8_t at(int row, int col, int channel) const {
    return pixels[(static_cast<std::size_t>(row) * resolution + col) * kMapChannels + channel];
  }
  bool operator==(const FeatureMap&) const = default;
};

/// Amplitudes of the selected records, one (rows x n_sub) matrix per link.
struct AmplitudeBlock {
  std::vector<std::size_t> selected;  // record indices into the sample set
  std::vector<Eigen::MatrixXd> links;
};

struct FingerprintDb {
  RpGrid grid;
  FeatureMapConfig config;
  std::map<RpId, std::vector<FeatureMap>> maps;

  std::size_t total_maps() const;
  void validate() const;
};

/// Sorted selection of `rows` distinct indices out of [0, n), seeded by
/// (seed, rp_id, draw_index).
std::vector<std::size_t> select_rows(std::size_t n, std::size_t rows, std::uint64_t seed,
                                     RpId rp_id, int draw_index);

AmplitudeBlock subsample_rows(const CsiSampleSet& set, const FeatureMapConfig& config,
                              int draw_index);

FeatureMap render_map(const AmplitudeBlock& block, const FeatureMapConfig& config, RpId rp_id,
                      Provenance provenance = Provenance::Real, int draw_index = 0);

/// Row index of amplitude `a` on the vertical axis.
int amplitude_row(double a, double amp_max, int resolution);
/// Column index of 0-based subcarrier `k` out of `n_sub`.
int subcarrier_column(int k, int n_sub, int resolution);

/// 99.5th percentile (linear interpolation) of every amplitude in the sets.
double compute_amp_max(std::span<const CsiSampleSet> sets, double percentile = 99.5);

FingerprintDb build_initial_db(std::span<const CsiSampleSet> sets, const RpGrid& grid,
                               const FeatureMapConfig& config);

FingerprintDb merge(const FingerprintDb& db,
                    const std::map<RpId, std::vector<FeatureMap>>& extra);

// Database directory: <dir>/<rp_id>/<provenance>_<draw_index>.png plus
// <dir>/manifest.json.
void save_db(const FingerprintDb& db, const std::filesystem::path& dir);
FingerprintDb load_db(const std::filesystem::path& dir);

/// Pixels mapped affinely from [0, 255] to [-1, 1], channel-major (CHW).
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> to_unit_chw(const FeatureMap& map) {
  const int r = map.resolution;
  const Eigen::Index plane = static_cast<Eigen::Index>(r) * r;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(plane * kMapChannels);
  for (int c = 0; c < kMapChannels; ++c)
    for (Eigen::Index i = 0; i < plane; ++i)
      out(c * plane + i) = static_cast<Scalar>(map.pixels[i * kMapChannels + c]) / Scalar(127.5) - Scalar(1);
  return out;
}

/// Inverse of to_unit_chw with rounding and clamping.
template <typename Derived>
FeatureMap from_unit_chw(const Eigen::MatrixBase<Derived>& chw, int resolution, RpId rp_id,
                         Provenance provenance, int draw_index) {
  FeatureMap map{rp_id, resolution, provenance, draw_index, {}};
  const Eigen::Index plane = static_cast<Eigen::Index>(resolution) * resolution;
  map.pixels.resize(plane * kMapChannels);
  for (int c = 0; c < kMapChannels; ++c)
    for (Eigen::Index i = 0; i < plane; ++i) {
      double v = (static_cast<double>(chw(c * plane + i)) + 1.0) * 127.5;
      v = std::min(255.0, std::max(0.0, std::round(v)));
      map.pixels[i * kMapChannels + c] = static_cast<std::uint8_t>(v);
    }
  return map;
}

}  // namespace afloc
