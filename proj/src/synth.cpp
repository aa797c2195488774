#include "afloc/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <set>

#include "afloc/errors.hpp"
#include "afloc/random.hpp"

namespace afloc {

namespace {

constexpr double kLight = 299792458.0;
constexpr double kShadowDepth = 0.7;
constexpr double kShadowWidth = 0.35;  // meters
constexpr double kMinLeg = 0.3;        // meters

double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

double shadowing(const Eigen::Vector2d& person, std::initializer_list<Eigen::Vector2d> polyline) {
  double d = std::numeric_limits<double>::infinity();
  const Eigen::Vector2d* prev = nullptr;
  for (const auto& v : polyline) {
    if (prev) d = std::min(d, segment_distance(person, *prev, v));
    prev = &v;
  }
  return 1.0 - kShadowDepth * std::exp(-d * d / (2 * kShadowWidth * kShadowWidth));
}

struct Path {
  std::complex<double> gain;
  double delay;
};

// Reflection point on a wall for the image-source path tx -> wall -> rx.
Eigen::Vector2d reflection_point(const Eigen::Vector2d& tx, const Eigen::Vector2d& rx, int wall,
                                 const SynthConfig& cfg) {
  Eigen::Vector2d image = tx;
  switch (wall) {
    case 0: image.x() = -tx.x(); break;
    case 1: image.x() = 2 * cfg.room_width - tx.x(); break;
    case 2: image.y() = -tx.y(); break;
    default: image.y() = 2 * cfg.room_depth - tx.y(); break;
  }
  const Eigen::Vector2d dir = rx - image;
  double t = 0.5;
  if (wall < 2 && std::abs(dir.x()) > 1e-12) t = ((wall == 0 ? 0.0 : cfg.room_width) - image.x()) / dir.x();
  if (wall >= 2 && std::abs(dir.y()) > 1e-12) t = ((wall == 2 ? 0.0 : cfg.room_depth) - image.y()) / dir.y();
  return image + std::clamp(t, 0.0, 1.0) * dir;
}

std::vector<Path> paths_for(const Eigen::Vector2d& pos, int link, const SynthConfig& cfg) {
  const Eigen::Vector2d& tx = cfg.tx_pos;
  const Eigen::Vector2d& rx = cfg.rx_pos;
  const double ref = std::max((rx - tx).norm(), kMinLeg);
  std::vector<Path> out;
  out.reserve(static_cast<std::size_t>(cfg.paths));
  for (int p = 0; p < cfg.paths; ++p) {
    Rng rng(derive_seed({cfg.seed, stream::kSynthPath, static_cast<std::uint64_t>(link), static_cast<std::uint64_t>(p)}));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double gain_jitter = 0.6 + 0.8 * unit(rng);
    const double phase = 2 * std::numbers::pi * unit(rng);
    double mag = 0.0, length = ref, extra_delay = 0.0;
    if (p == 0) {
      mag = shadowing(pos, {tx, rx});
    } else if (p == 1) {
      const double d1 = std::max((pos - tx).norm(), kMinLeg);
      const double d2 = std::max((rx - pos).norm(), kMinLeg);
      length = d1 + d2;
      mag = 0.6 * (ref * ref / 4.0) / (d1 * d2);
    } else if (p <= 5) {
      const Eigen::Vector2d hit = reflection_point(tx, rx, p - 2, cfg);
      length = (hit - tx).norm() + (rx - hit).norm();
      mag = 0.5 * ref / length * shadowing(pos, {tx, hit, rx});
    } else {
      extra_delay = cfg.max_excess_delay * unit(rng);
      length = ref + kLight * extra_delay;
      mag = 0.35 * ref / length;
    }
    out.push_back({cfg.amplitude_scale * gain_jitter * mag * std::polar(1.0, phase), length / kLight});
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (paths < 1) fail(ErrorCode::InvalidArgument, "synthetic channel needs at least one path");
  if (!(room_width > 0) || !(room_depth > 0)) fail(ErrorCode::InvalidArgument, "room dimensions must be positive");
  if (!(noise_sigma >= 0) || !(phase_jitter >= 0)) fail(ErrorCode::InvalidArgument, "noise levels must be >= 0");
  if (!(carrier_spacing > 0)) fail(ErrorCode::InvalidArgument, "carrier spacing must be positive");
}

SynthConfig room_for_grid(const RpGrid& grid, SynthConfig base) {
  if (grid.points.empty()) fail(ErrorCode::InvalidArgument, "empty grid");
  double max_x = 0, max_y = 0;
  for (const auto& p : grid.points) {
    max_x = std::max(max_x, p.x);
    max_y = std::max(max_y, p.y);
  }
  base.room_width = max_x + grid.spacing / 2;
  base.room_depth = max_y + grid.spacing / 2;
  // Off-centre heights: a symmetric placement makes mirrored positions indistinguishable.
  base.tx_pos = {0.1, 0.25 * base.room_depth};
  base.rx_pos = {base.room_width - 0.1, 0.6 * base.room_depth};
  return base;
}

CsiRecord synth_record(const Eigen::Vector2d& pos, const CaptureMeta& meta, const SynthConfig& cfg,
                       std::uint64_t packet_index) {
  cfg.validate();
  meta.validate();
  if (!(pos.x() >= 0 && pos.x() <= cfg.room_width && pos.y() >= 0 && pos.y() <= cfg.room_depth))
    fail(ErrorCode::OutOfRoom, "position (" + std::to_string(pos.x()) + ", " + std::to_string(pos.y()) +
                                   ") is outside the room");
  CsiRecord rec;
  rec.meta = meta;
  rec.timestamp = meta.packet_rate > 0
                      ? static_cast<std::uint64_t>(std::llround(static_cast<double>(packet_index) * 1e6 / meta.packet_rate))
                      : packet_index;
  rec.h.resize(meta.links(), meta.n_sub);
  for (int link = 0; link < meta.links(); ++link) {
    const auto paths = paths_for(pos, link, cfg);
    Rng rng(derive_seed({cfg.seed, stream::kSynthPacket, std::bit_cast<std::uint64_t>(pos.x()),
                         std::bit_cast<std::uint64_t>(pos.y()), packet_index, static_cast<std::uint64_t>(link)}));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> jitter(paths.size());
    for (auto& j : jitter) j = cfg.phase_jitter * normal(rng);
    const double component_sigma = cfg.noise_sigma / std::numbers::sqrt2;
    for (int k = 0; k < meta.n_sub; ++k) {
      const double f = (k + 1) * cfg.carrier_spacing;
      std::complex<double> h = 0.0;
      for (std::size_t p = 0; p < paths.size(); ++p)
        h += paths[p].gain * std::polar(1.0, -2 * std::numbers::pi * f * paths[p].delay + jitter[p]);
      if (cfg.noise_sigma > 0) h += std::complex<double>(component_sigma * normal(rng), component_sigma * normal(rng));
      rec.h(link, k) = h;
    }
  }
  return rec;
}

CsiSampleSet synth_samples(RpId id, const Eigen::Vector2d& pos, int count, const CaptureMeta& meta,
                           const SynthConfig& cfg, std::uint64_t first_packet) {
  CsiSampleSet set;
  set.rp_id = id;
  set.records.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) set.records.push_back(synth_record(pos, meta, cfg, first_packet + static_cast<std::uint64_t>(i)));
  return set;
}

std::vector<CsiSampleSet> synth_dataset(const RpGrid& grid, int samples_per_rp, const CaptureMeta& meta,
                                        const SynthConfig& cfg) {
  if (grid.points.empty()) fail(ErrorCode::InvalidArgument, "empty grid");
  std::vector<CsiSampleSet> out;
  for (const auto& p : grid.points) out.push_back(synth_samples(p.rp_id, {p.x, p.y}, samples_per_rp, meta, cfg));
  return out;
}

RpGrid interior_test_points(const RpGrid& grid) {
  std::set<double> xs, ys;
  for (const auto& p : grid.points) {
    xs.insert(p.x);
    ys.insert(p.y);
  }
  const std::vector<double> vx(xs.begin(), xs.end()), vy(ys.begin(), ys.end());
  RpGrid out;
  out.spacing = grid.spacing;
  RpId id = 1;
  for (std::size_t j = 0; j + 1 < vy.size(); ++j)
    for (std::size_t i = 0; i + 1 < vx.size(); ++i)
      out.points.push_back({id++, (vx[i] + vx[i + 1]) / 2, (vy[j] + vy[j + 1]) / 2});
  return out;
}

}  // namespace afloc
