#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "afloc/csi.hpp"

namespace afloc {

/// Multipath indoor channel with a person standing at the query position.
///
/// Path 0 is the direct tx->rx path, shadowed when the person is near it.
/// Path 1 is scattered by the person (tx->person->rx). Paths 2..5 are the
/// first-order wall reflections, also shadowed. Further paths are seeded
/// clutter echoes with random excess delay. Each path carries a seeded
/// per-link complex gain, so links see different frequency responses.
struct SynthConfig {
  int paths = 8;
  double room_width = 4.0;   // x extent, meters
  double room_depth = 4.0;   // y extent, meters
  Eigen::Vector2d tx_pos{0.1, 1.0};
  Eigen::Vector2d rx_pos{3.9, 2.4};
  double carrier_spacing = 312.5e3;  // Hz per subcarrier
  double noise_sigma = 0.5;          // complex noise standard deviation
  double phase_jitter = 0.02;        // per-packet path phase jitter, radians
  double amplitude_scale = 20.0;
  double max_excess_delay = 150e-9;  // clutter echoes, seconds
  std::uint64_t seed = 0;

  void validate() const;
};

/// Rooms that enclose `grid` with a half-spacing margin, tx on the left
/// wall at 1/4 depth, rx on the right wall at 3/5 depth.
SynthConfig room_for_grid(const RpGrid& grid, SynthConfig base = {});

CsiRecord synth_record(const Eigen::Vector2d& pos, const CaptureMeta& meta, const SynthConfig& cfg,
                       std::uint64_t packet_index);

/// `count` records at `pos`, packet indices starting at `first_packet`.
CsiSampleSet synth_samples(RpId id, const Eigen::Vector2d& pos, int count, const CaptureMeta& meta,
                           const SynthConfig& cfg, std::uint64_t first_packet = 0);

std::vector<CsiSampleSet> synth_dataset(const RpGrid& grid, int samples_per_rp, const CaptureMeta& meta,
                                        const SynthConfig& cfg);

/// Interior lattice corners of a regular grid (points surrounded by four
/// reference points), ids from 1.
RpGrid interior_test_points(const RpGrid& grid);

}  // namespace afloc
