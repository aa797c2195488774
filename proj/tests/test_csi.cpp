#include <doctest.h>

#include <complex>
#include <random>
#include <sstream>

#include "afloc/csi.hpp"
#include "afloc/errors.hpp"

using namespace afloc;

namespace {

CsiRecord make_record(int n_tx, int n_rx, int n_sub, std::uint64_t ts = 0) {
  CsiRecord r;
  r.meta = {n_tx, n_rx, n_sub, 1, 0.0};
  r.h = Eigen::MatrixXcd::Zero(n_tx * n_rx, n_sub);
  r.timestamp = ts;
  return r;
}

// Frame around a packed payload: BE16 length, code, 20-byte header.
std::vector<std::uint8_t> frame(int n_tx, int n_rx, std::uint8_t sel, std::uint32_t ts,
                                const std::vector<std::uint8_t>& packed) {
  std::vector<std::uint8_t> f;
  const std::size_t len = 1 + 20 + packed.size();
  f.push_back(static_cast<std::uint8_t>(len >> 8));
  f.push_back(static_cast<std::uint8_t>(len & 0xff));
  f.push_back(0xBB);
  for (int i = 0; i < 4; ++i) f.push_back(static_cast<std::uint8_t>(ts >> (8 * i)));
  f.insert(f.end(), {0, 0, 0, 0});
  f.push_back(static_cast<std::uint8_t>(n_rx));
  f.push_back(static_cast<std::uint8_t>(n_tx));
  f.insert(f.end(), {0, 0, 0, 0, 0});
  f.push_back(sel);
  f.push_back(static_cast<std::uint8_t>(packed.size() & 0xff));
  f.push_back(static_cast<std::uint8_t>(packed.size() >> 8));
  f.insert(f.end(), {0, 0});
  f.insert(f.end(), packed.begin(), packed.end());
  return f;
}

// n_tx=1, n_rx=2, two subcarriers: sc0 rx0=(1,-1) rx1=(2,3); sc1 rx0=(-128,127) rx1=(0,-2).
// Worked out bit by bit, LSB first, 3 pad bits before each subcarrier.
const std::vector<std::uint8_t> kOraclePacked = {0x08, 0xF8, 0x17, 0x18, 0x00, 0xE0, 0x1F, 0x80, 0x3F};

}  // namespace

TEST_CASE("packed length") {
  CHECK(packed_csi_bytes(1, 2, 2) == 9);
  CHECK(packed_csi_bytes(1, 3, 30) == 192);  // (30*51+7)/8
}

TEST_CASE("two-subcarrier bit packing oracle") {
  const auto bytes = frame(1, 2, 0x04, 77, kOraclePacked);  // sel 0b0100 = identity for 2 rx
  const auto res = parse_binary_log(bytes);
  REQUIRE(res.records.size() == 1);
  const auto& h = res.records[0].h;
  REQUIRE(h.rows() == 2);
  REQUIRE(h.cols() == 2);
  CHECK(h(0, 0) == std::complex<double>(1, -1));
  CHECK(h(1, 0) == std::complex<double>(2, 3));
  CHECK(h(0, 1) == std::complex<double>(-128, 127));
  CHECK(h(1, 1) == std::complex<double>(0, -2));
  CHECK(res.records[0].timestamp == 77);

  // Writer produces the same packed bytes.
  CsiRecord r = make_record(1, 2, 2, 77);
  r.h << std::complex<double>(1, -1), std::complex<double>(-128, 127), std::complex<double>(2, 3),
      std::complex<double>(0, -2);
  const auto written = write_binary_log(std::span<const CsiRecord>(&r, 1));
  REQUIRE(written.size() == 3 + 20 + 9);
  CHECK(std::vector<std::uint8_t>(written.begin() + 23, written.end()) == kOraclePacked);
}

TEST_CASE("antenna permutation reorders receive rows") {
  // sel = perm {1, 0}: row 1 receives the first chain.
  const auto bytes = frame(1, 2, 0x01, 0, kOraclePacked);
  const auto permuted = parse_binary_log(bytes);
  CHECK(permuted.records[0].h(1, 0) == std::complex<double>(1, -1));
  CHECK(permuted.records[0].h(0, 0) == std::complex<double>(2, 3));
  BinaryParseOptions raw;
  raw.apply_permutation = false;
  CHECK(parse_binary_log(bytes, raw).records[0].h(0, 0) == std::complex<double>(1, -1));

  CsiRecord r = make_record(1, 3, 4);
  for (int m = 0; m < 3; ++m)
    for (int k = 0; k < 4; ++k) r.h(m, k) = {double(10 * m + k), double(-m)};
  BinaryWriteOptions w;
  w.permutation = {2, 0, 1};
  const auto back = parse_binary_log(write_binary_log(std::span<const CsiRecord>(&r, 1), w));
  CHECK(back.records[0] == r);
}

TEST_CASE("empty and edge streams") {
  CHECK(parse_binary_log({}).records.empty());

  CsiRecord zero = make_record(1, 3, 30);
  auto bytes = write_binary_log(std::span<const CsiRecord>(&zero, 1));
  auto res = parse_binary_log(bytes);
  REQUIRE(res.records.size() == 1);
  CHECK(res.records[0].h.rows() == 3);
  CHECK(res.records[0].h.cols() == 30);
  CHECK(res.records[0] == zero);

  CsiRecord c = make_record(1, 3, 30);
  c.h.setConstant({3, 4});
  CHECK(parse_binary_log(write_binary_log(std::span<const CsiRecord>(&c, 1))).records[0] == c);

  // Cut the final frame: dropped and flagged.
  bytes.pop_back();
  res = parse_binary_log(bytes);
  CHECK(res.truncated);
  CHECK(res.records.empty());

  // Other frame codes are skipped.
  std::vector<std::uint8_t> other = {0x00, 0x02, 0xC1, 0x55};
  res = parse_binary_log(other);
  CHECK(res.skipped_frames == 1);

  const std::vector<std::uint8_t> zero_len = {0x00, 0x00, 0xBB};
  CHECK_THROWS_AS(parse_binary_log(zero_len), Error);

  // csi_len larger than the frame.
  auto bad = frame(1, 2, 0x04, 0, kOraclePacked);
  bad[3 + 16] = 200;
  try {
    parse_binary_log(bad);
    FAIL("expected MalformedFrame");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedFrame);
  }
  // Length that no subcarrier count produces.
  auto odd = frame(1, 2, 0x04, 0, {1, 2, 3});
  try {
    parse_binary_log(odd);
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("writer rejects values outside int8") {
  CsiRecord r = make_record(1, 1, 2);
  r.h(0, 1) = {128.0, 0.0};
  try {
    write_binary_log(std::span<const CsiRecord>(&r, 1));
    FAIL("expected ValueOutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ValueOutOfRange);
  }
}

TEST_CASE("1000 randomized logs round-trip") {
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<int> val(-128, 127), dim(1, 3), sub(1, 30), count(1, 4);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<CsiRecord> recs;
    const int n = count(rng);
    const int n_tx = dim(rng), n_rx = dim(rng), n_sub = sub(rng);
    for (int i = 0; i < n; ++i) {
      CsiRecord r = make_record(n_tx, n_rx, n_sub, static_cast<std::uint64_t>(rng() & 0xffffffff));
      for (Eigen::Index m = 0; m < r.h.rows(); ++m)
        for (Eigen::Index k = 0; k < r.h.cols(); ++k) r.h(m, k) = {double(val(rng)), double(val(rng))};
      recs.push_back(r);
    }
    const auto res = parse_binary_log(write_binary_log(recs));
    REQUIRE(res.records.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) REQUIRE(res.records[i] == recs[i]);
  }
}

TEST_CASE("amplitudes") {
  CsiRecord r = make_record(1, 1, 3);
  r.h(0, 0) = {3, 4};
  r.h(0, 1) = {0, 0};
  r.h(0, 2) = {-1e-3, 2.5e2};
  const auto a = amplitudes(r);
  CHECK(a(0, 0) == 5.0);
  CHECK(a(0, 1) == 0.0);
  const long double re = -1e-3L, im = 2.5e2L;
  CHECK(a(0, 2) == doctest::Approx(static_cast<double>(std::sqrt(re * re + im * im))).epsilon(1e-15));

  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0, 50);
  CsiRecord big = make_record(2, 3, 30);
  for (Eigen::Index m = 0; m < big.h.rows(); ++m)
    for (Eigen::Index k = 0; k < big.h.cols(); ++k) big.h(m, k) = {g(rng), g(rng)};
  const auto b = amplitudes(big);
  for (Eigen::Index m = 0; m < big.h.rows(); ++m)
    for (Eigen::Index k = 0; k < big.h.cols(); ++k) {
      const long double x = big.h(m, k).real(), y = big.h(m, k).imag();
      CHECK(std::abs(b(m, k) - static_cast<double>(std::sqrt(x * x + y * y))) <= 1e-12 * (1 + b(m, k)));
    }
}

TEST_CASE("canonical text round-trip and grouping") {
  std::vector<LabeledRecord> recs;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 10);
  for (int i = 0; i < 6; ++i) {
    CsiRecord r = make_record(1, 3, 30, static_cast<std::uint64_t>(100 + i));
    for (Eigen::Index m = 0; m < 3; ++m)
      for (Eigen::Index k = 0; k < 30; ++k) r.h(m, k) = {g(rng), g(rng)};
    recs.push_back({i % 2 == 0 ? 2 : 1, r});
  }
  std::stringstream ss;
  write_canonical(ss, recs);
  const auto back = read_canonical(ss, CaptureMeta{});
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].rp_id == recs[i].rp_id);
    CHECK(back[i].record == recs[i].record);
  }

  const RpGrid grid = RpGrid::regular(2, 1, 1.0);
  const auto sets = group_by_rp(back, grid);
  REQUIRE(sets.size() == 2);
  CHECK(sets[0].rp_id == 1);
  // Stable partition: relative order preserved.
  CHECK(sets[0].records[0].timestamp == 101);
  CHECK(sets[0].records[2].timestamp == 105);
  CHECK(sets[1].records[1].timestamp == 102);
  CHECK(group_by_rp({}, grid).empty());

  const std::vector<LabeledRecord> stray = {{7, recs[0].record}};
  CHECK_THROWS_AS(group_by_rp(stray, grid), Error);

  std::stringstream bad("rp_id,timestamp,link,k,re,im\n1,0,1,1,x,0\n");
  CHECK_THROWS_AS(read_canonical(bad, CaptureMeta{}), Error);
}

TEST_CASE("grid") {
  const RpGrid g = RpGrid::regular(7, 7, 1.0);
  CHECK(g.size() == 49);
  CHECK(g.at(1).x == 0.5);
  CHECK(g.at(8).y == 1.5);
  CHECK_THROWS_AS(g.at(50), Error);
}
