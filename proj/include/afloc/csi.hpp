#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace afloc {

using RpId = int;

struct CaptureMeta {
  int n_tx = 1;
  int n_rx = 3;
  int n_sub = 30;
  int n_ap = 1;
  double packet_rate = 0.0;  // Hz; 0 when the source does not record it

  int links() const { return n_tx * n_rx; }
  void validate() const;
  bool operator==(const CaptureMeta&) const = default;
};

/// One captured packet. Row m of `h` is link m (tx-major: m = tx * n_rx + rx),
/// column k is subcarrier k.
struct CsiRecord {
  CaptureMeta meta;
  Eigen::MatrixXcd h;
  std::uint64_t timestamp = 0;  // microseconds

  void validate() const;
  bool operator==(const CsiRecord& other) const {
    return meta == other.meta && timestamp == other.timestamp &&
           h.rows() == other.h.rows() && h.cols() == other.h.cols() &&
           h == other.h;
  }
};

struct GridPoint {
  RpId rp_id = 0;
  double x = 0.0;
  double y = 0.0;
};

struct RpGrid {
  std::vector<GridPoint> points;
  double spacing = 1.0;

  /// Regular nx-by-ny lattice with ids assigned row by row starting at 1.
  /// Points sit at cell centres: ((i + 0.5) * spacing, (j + 0.5) * spacing).
  static RpGrid regular(int nx, int ny, double spacing);

  std::size_t size() const { return points.size(); }
  bool contains(RpId id) const;
  const GridPoint& at(RpId id) const;
  void validate() const;
};

struct CsiSampleSet {
  RpId rp_id = 0;
  std::vector<CsiRecord> records;
};

struct LabeledRecord {
  RpId rp_id = 0;
  CsiRecord record;
};

// ---------------------------------------------------------------------------
// Binary log (Linux 802.11n CSI Tool framing)

struct BinaryParseOptions {
  /// Apply the antenna-selection permutation to receive-chain rows.
  bool apply_permutation = true;
  /// Fields the log does not carry.
  int n_ap = 1;
  double packet_rate = 0.0;
};

struct BinaryParseResult {
  std::vector<CsiRecord> records;
  bool truncated = false;  // final frame was cut short and dropped
  std::size_t skipped_frames = 0;
};

inline constexpr std::uint8_t kBeamformingCode = 0xBB;

/// Bytes of bit-packed CSI for the given dimensions.
std::size_t packed_csi_bytes(int n_tx, int n_rx, int n_sub);

BinaryParseResult parse_binary_log(std::span<const std::uint8_t> bytes,
                                   const BinaryParseOptions& opts = {});

struct BinaryWriteOptions {
  /// Receive-chain permutation written to the antenna-selection byte. The
  /// packed rows are arranged so that a permuting parser restores the input.
  std::vector<int> permutation;  // empty = identity
};

/// Complex parts are rounded to the nearest integer and must fit int8.
std::vector<std::uint8_t> write_binary_log(std::span<const CsiRecord> records,
                                           const BinaryWriteOptions& opts = {});

// ---------------------------------------------------------------------------
// Canonical text format: `rp_id,timestamp,link,k,re,im`, 1-based link and k.

void write_canonical(std::ostream& out, std::span<const LabeledRecord> records);
std::vector<LabeledRecord> read_canonical(std::istream& in,
                                          const CaptureMeta& meta_template);

// ---------------------------------------------------------------------------

/// Elementwise |h|.
Eigen::MatrixXd amplitudes(const CsiRecord& record);

/// Stable grouping; output ordered by rp_id.
std::vector<CsiSampleSet> group_by_rp(std::span<const LabeledRecord> records,
                                      const RpGrid& grid);

}  // namespace afloc
