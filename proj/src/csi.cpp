#include "afloc/csi.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "afloc/errors.hpp"

namespace afloc {

void CaptureMeta::validate() const {
  if (n_tx < 1 || n_rx < 1 || n_sub < 1 || n_ap < 1)
    fail(ErrorCode::InvalidArgument, "capture dimensions must be positive");
  if (!std::isfinite(packet_rate))
    fail(ErrorCode::InvalidArgument, "packet rate must be finite");
}

void CsiRecord::validate() const {
  meta.validate();
  if (h.rows() != meta.links() || h.cols() != meta.n_sub)
    fail(ErrorCode::DimensionMismatch, "CSI matrix shape disagrees with metadata");
  if (!h.allFinite()) fail(ErrorCode::ValueOutOfRange, "non-finite CSI entry");
}

RpGrid RpGrid::regular(int nx, int ny, double spacing) {
  if (nx < 1 || ny < 1 || !(spacing > 0))
    fail(ErrorCode::InvalidArgument, "grid dimensions must be positive");
  RpGrid grid;
  grid.spacing = spacing;
  RpId id = 1;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      grid.points.push_back({id++, (i + 0.5) * spacing, (j + 0.5) * spacing});
  return grid;
}

bool RpGrid::contains(RpId id) const {
  return id >= 1 && static_cast<std::size_t>(id) <= points.size() &&
         points[id - 1].rp_id == id;
}

const GridPoint& RpGrid::at(RpId id) const {
  if (!contains(id))
    fail(ErrorCode::UnknownReferencePoint,
         "reference point " + std::to_string(id) + " is not in the grid");
  return points[id - 1];
}

void RpGrid::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (p.rp_id != static_cast<RpId>(i + 1))
      fail(ErrorCode::InvalidArgument, "rp ids must be contiguous from 1");
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      fail(ErrorCode::InvalidArgument, "non-finite grid coordinate");
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kCsiHeaderBytes = 20;

std::uint16_t read_le16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_le16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Signed byte whose least-significant bit sits at `bit` (LSB-first packing).
std::int8_t read_packed(std::span<const std::uint8_t> packed, std::size_t bit) {
  const std::size_t byte = bit / 8;
  const unsigned rem = bit % 8;
  const unsigned lo = byte < packed.size() ? packed[byte] : 0u;
  const unsigned hi = byte + 1 < packed.size() ? packed[byte + 1] : 0u;
  return static_cast<std::int8_t>(static_cast<std::uint8_t>((lo >> rem) | (hi << (8 - rem))));
}

void write_packed(std::span<std::uint8_t> packed, std::size_t bit, std::int8_t value) {
  const auto v = static_cast<std::uint8_t>(value);
  for (unsigned b = 0; b < 8; ++b) {
    if ((v >> b) & 1u) {
      const std::size_t pos = bit + b;
      packed[pos / 8] |= static_cast<std::uint8_t>(1u << (pos % 8));
    }
  }
}

std::vector<int> decode_permutation(std::uint8_t antenna_sel, int n_rx) {
  if (n_rx < 2 || n_rx > 4) return {};
  std::vector<int> perm(n_rx);
  std::vector<bool> seen(n_rx, false);
  for (int j = 0; j < n_rx; ++j) {
    perm[j] = (antenna_sel >> (2 * j)) & 0x3;
    if (perm[j] >= n_rx || seen[perm[j]]) return {};
    seen[perm[j]] = true;
  }
  return perm;
}

CsiRecord parse_beamforming(std::span<const std::uint8_t> payload,
                            const BinaryParseOptions& opts) {
  if (payload.size() < kCsiHeaderBytes)
    fail(ErrorCode::MalformedFrame, "beamforming payload shorter than its header");
  const std::uint8_t* p = payload.data();
  const std::uint32_t timestamp = read_le32(p);
  const int n_rx = p[8];
  const int n_tx = p[9];
  const std::uint8_t antenna_sel = p[15];
  const std::size_t csi_len = read_le16(p + 16);
  if (n_rx < 1 || n_tx < 1)
    fail(ErrorCode::DimensionMismatch, "zero antenna count in CSI header");
  if (kCsiHeaderBytes + csi_len > payload.size())
    fail(ErrorCode::MalformedFrame, "CSI length field exceeds frame payload");

  // Packed size grows by at least two bytes per subcarrier, so the
  // subcarrier count is recoverable from the length field.
  int n_sub = 0;
  for (int n = 1;; ++n) {
    const std::size_t len = packed_csi_bytes(n_tx, n_rx, n);
    if (len == csi_len) {
      n_sub = n;
      break;
    }
    if (len > csi_len) break;
  }
  if (n_sub == 0)
    fail(ErrorCode::DimensionMismatch,
         "CSI length " + std::to_string(csi_len) + " does not match any subcarrier count for " +
             std::to_string(n_tx) + "x" + std::to_string(n_rx));

  std::vector<int> perm;
  if (opts.apply_permutation) perm = decode_permutation(antenna_sel, n_rx);

  CsiRecord rec;
  rec.meta = {n_tx, n_rx, n_sub, opts.n_ap, opts.packet_rate};
  rec.timestamp = timestamp;
  rec.h.resize(n_tx * n_rx, n_sub);
  const auto packed = payload.subspan(kCsiHeaderBytes, csi_len);
  std::size_t bit = 0;
  for (int k = 0; k < n_sub; ++k) {
    bit += 3;
    for (int rx = 0; rx < n_rx; ++rx) {
      const int row_rx = perm.empty() ? rx : perm[rx];
      for (int tx = 0; tx < n_tx; ++tx) {
        const double re = read_packed(packed, bit);
        const double im = read_packed(packed, bit + 8);
        rec.h(tx * n_rx + row_rx, k) = {re, im};
        bit += 16;
      }
    }
  }
  return rec;
}

}  // namespace

std::size_t packed_csi_bytes(int n_tx, int n_rx, int n_sub) {
  const std::size_t bits = static_cast<std::size_t>(n_sub) *
                           (static_cast<std::size_t>(n_tx) * n_rx * 16 + 3);
  return (bits + 7) / 8;
}

BinaryParseResult parse_binary_log(std::span<const std::uint8_t> bytes,
                                   const BinaryParseOptions& opts) {
  BinaryParseResult result;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 3) {
      result.truncated = true;
      break;
    }
    // The big-endian length counts the code byte plus the payload.
    const std::size_t len = (static_cast<std::size_t>(bytes[pos]) << 8) | bytes[pos + 1];
    if (len == 0) fail(ErrorCode::MalformedFrame, "zero-length frame at offset " + std::to_string(pos));
    if (pos + 2 + len > bytes.size()) {
      result.truncated = true;
      break;
    }
    const std::uint8_t code = bytes[pos + 2];
    const auto payload = bytes.subspan(pos + 3, len - 1);
    if (code == kBeamformingCode)
      result.records.push_back(parse_beamforming(payload, opts));
    else
      ++result.skipped_frames;
    pos += 2 + len;
  }
  return result;
}

std::vector<std::uint8_t> write_binary_log(std::span<const CsiRecord> records,
                                           const BinaryWriteOptions& opts) {
  std::vector<std::uint8_t> out;
  std::uint16_t count = 0;
  for (const auto& rec : records) {
    rec.validate();
    const int n_tx = rec.meta.n_tx;
    const int n_rx = rec.meta.n_rx;
    const int n_sub = rec.meta.n_sub;
    if (n_tx > 255 || n_rx > 255)
      fail(ErrorCode::ValueOutOfRange, "antenna count does not fit the header");
    if (rec.timestamp > 0xffffffffULL)
      fail(ErrorCode::ValueOutOfRange, "timestamp does not fit 32 bits");

    std::vector<int> perm = opts.permutation;
    std::uint8_t antenna_sel = 0;
    if (!perm.empty()) {
      if (static_cast<int>(perm.size()) != n_rx)
        fail(ErrorCode::InvalidArgument, "permutation length must equal n_rx");
      for (int j = 0; j < n_rx; ++j) antenna_sel |= static_cast<std::uint8_t>(perm[j] << (2 * j));
      if (decode_permutation(antenna_sel, n_rx) != perm)
        fail(ErrorCode::InvalidArgument, "invalid receive-chain permutation");
    } else {
      for (int j = 0; j < std::min(n_rx, 4); ++j)
        antenna_sel |= static_cast<std::uint8_t>(j << (2 * j));
    }

    const std::size_t csi_len = packed_csi_bytes(n_tx, n_rx, n_sub);
    if (csi_len > 0xffff - kCsiHeaderBytes - 1)
      fail(ErrorCode::ValueOutOfRange, "record too large for a frame");
    std::vector<std::uint8_t> packed(csi_len, 0);
    std::size_t bit = 0;
    auto to_i8 = [](double v) {
      const double r = std::nearbyint(v);
      if (!(r >= -128.0 && r <= 127.0))
        fail(ErrorCode::ValueOutOfRange, "CSI component outside signed 8-bit range");
      return static_cast<std::int8_t>(r);
    };
    for (int k = 0; k < n_sub; ++k) {
      bit += 3;
      for (int rx = 0; rx < n_rx; ++rx) {
        const int row_rx = perm.empty() ? rx : perm[rx];
        for (int tx = 0; tx < n_tx; ++tx) {
          const auto v = rec.h(tx * n_rx + row_rx, k);
          write_packed(packed, bit, to_i8(v.real()));
          write_packed(packed, bit + 8, to_i8(v.imag()));
          bit += 16;
        }
      }
    }

    const std::size_t frame_len = 1 + kCsiHeaderBytes + csi_len;
    out.push_back(static_cast<std::uint8_t>(frame_len >> 8));
    out.push_back(static_cast<std::uint8_t>(frame_len & 0xff));
    out.push_back(kBeamformingCode);
    put_le32(out, static_cast<std::uint32_t>(rec.timestamp));
    put_le16(out, count++);
    put_le16(out, 0);  // reserved
    out.push_back(static_cast<std::uint8_t>(n_rx));
    out.push_back(static_cast<std::uint8_t>(n_tx));
    out.push_back(0);  // rssi a
    out.push_back(0);  // rssi b
    out.push_back(0);  // rssi c
    out.push_back(0);  // noise
    out.push_back(0);  // agc
    out.push_back(antenna_sel);
    put_le16(out, static_cast<std::uint16_t>(csi_len));
    put_le16(out, 0);  // rate
    out.insert(out.end(), packed.begin(), packed.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr const char* kCanonicalHeader = "rp_id,timestamp,link,k,re,im";

template <typename T>
T parse_field(std::string_view s, std::size_t line_no) {
  T value{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc{} || ptr != end)
    fail(ErrorCode::FormatError,
         "line " + std::to_string(line_no) + ": cannot parse '" + std::string(s) + "'");
  return value;
}
}  // namespace

void write_canonical(std::ostream& out, std::span<const LabeledRecord> records) {
  out << kCanonicalHeader << '\n';
  const auto old_precision = out.precision(17);
  for (const auto& lr : records) {
    const auto& h = lr.record.h;
    for (Eigen::Index m = 0; m < h.rows(); ++m)
      for (Eigen::Index k = 0; k < h.cols(); ++k)
        out << lr.rp_id << ',' << lr.record.timestamp << ',' << (m + 1) << ',' << (k + 1)
            << ',' << h(m, k).real() << ',' << h(m, k).imag() << '\n';
  }
  out.precision(old_precision);
}

std::vector<LabeledRecord> read_canonical(std::istream& in, const CaptureMeta& meta) {
  meta.validate();
  std::string line;
  if (!std::getline(in, line)) return {};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCanonicalHeader)
    fail(ErrorCode::FormatError, "missing canonical CSI header line");

  std::vector<LabeledRecord> out;
  std::vector<bool> filled;
  std::size_t filled_count = 0;
  const std::size_t expected = static_cast<std::size_t>(meta.links()) * meta.n_sub;

  auto finish = [&] {
    if (!out.empty() && filled_count != expected)
      fail(ErrorCode::DimensionMismatch,
           "record at timestamp " + std::to_string(out.back().record.timestamp) + " has " +
               std::to_string(filled_count) + " entries, expected " + std::to_string(expected));
  };

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 6)
      fail(ErrorCode::FormatError, "line " + std::to_string(line_no) + ": expected 6 fields");

    const auto rp = parse_field<RpId>(fields[0], line_no);
    const auto ts = parse_field<std::uint64_t>(fields[1], line_no);
    const auto link = parse_field<int>(fields[2], line_no);
    const auto k = parse_field<int>(fields[3], line_no);
    const auto re = parse_field<double>(fields[4], line_no);
    const auto im = parse_field<double>(fields[5], line_no);

    const bool new_record = out.empty() || out.back().rp_id != rp ||
                            out.back().record.timestamp != ts || filled_count == expected;
    if (new_record) {
      finish();
      LabeledRecord lr;
      lr.rp_id = rp;
      lr.record.meta = meta;
      lr.record.timestamp = ts;
      lr.record.h = Eigen::MatrixXcd::Zero(meta.links(), meta.n_sub);
      out.push_back(std::move(lr));
      filled.assign(expected, false);
      filled_count = 0;
    }
    if (link < 1 || link > meta.links() || k < 1 || k > meta.n_sub)
      fail(ErrorCode::DimensionMismatch,
           "line " + std::to_string(line_no) + ": link/subcarrier index out of range");
    const std::size_t slot = static_cast<std::size_t>(link - 1) * meta.n_sub + (k - 1);
    if (filled[slot])
      fail(ErrorCode::DimensionMismatch,
           "line " + std::to_string(line_no) + ": duplicate link/subcarrier entry");
    filled[slot] = true;
    ++filled_count;
    out.back().record.h(link - 1, k - 1) = {re, im};
  }
  finish();
  for (const auto& lr : out) lr.record.validate();
  return out;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd amplitudes(const CsiRecord& record) {
  return record.h.cwiseAbs();
}

std::vector<CsiSampleSet> group_by_rp(std::span<const LabeledRecord> records,
                                      const RpGrid& grid) {
  std::map<RpId, CsiSampleSet> sets;
  for (const auto& lr : records) {
    if (!grid.contains(lr.rp_id))
      fail(ErrorCode::UnknownReferencePoint,
           "reference point " + std::to_string(lr.rp_id) + " is not in the grid");
    auto& set = sets[lr.rp_id];
    set.rp_id = lr.rp_id;
    set.records.push_back(lr.record);
  }
  std::vector<CsiSampleSet> out;
  out.reserve(sets.size());
  for (auto& [id, set] : sets) out.push_back(std::move(set));
  return out;
}

}  // namespace afloc
