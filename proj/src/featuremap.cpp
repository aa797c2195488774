#include "afloc/featuremap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "afloc/errors.hpp"
#include "afloc/png_io.hpp"
#include "afloc/random.hpp"

namespace afloc {

void FeatureMapConfig::validate() const {
  if (rows_per_map < 1) fail(ErrorCode::InvalidArgument, "rows_per_map must be >= 1");
  if (maps_per_rp < 0) fail(ErrorCode::InvalidArgument, "maps_per_rp must be >= 0");
  if (resolution < 8) fail(ErrorCode::InvalidArgument, "resolution must be >= 8");
  if (!(amp_max > 0) || !std::isfinite(amp_max))
    fail(ErrorCode::InvalidArgument, "amp_max must be positive and finite");
}

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Real: return "real";
    case Provenance::Generated: return "generated";
    case Provenance::NoiseAugmented: return "noise-augmented";
  }
  return "real";
}

Provenance parse_provenance(std::string_view s) {
  if (s == "real") return Provenance::Real;
  if (s == "generated") return Provenance::Generated;
  if (s == "noise-augmented") return Provenance::NoiseAugmented;
  fail(ErrorCode::FormatError, "unknown provenance '" + std::string(s) + "'");
}

std::size_t FingerprintDb::total_maps() const {
  std::size_t n = 0;
  for (const auto& [id, v] : maps) n += v.size();
  return n;
}

void FingerprintDb::validate() const {
  config.validate();
  grid.validate();
  for (const auto& [id, v] : maps) {
    if (!grid.contains(id))
      fail(ErrorCode::UnknownReferencePoint, "map for unknown reference point " + std::to_string(id));
    for (const auto& m : v) {
      if (m.rp_id != id) fail(ErrorCode::InvalidArgument, "map filed under the wrong reference point");
      if (m.resolution != config.resolution ||
          m.pixels.size() != static_cast<std::size_t>(m.resolution) * m.resolution * kMapChannels)
        fail(ErrorCode::ResolutionMismatch, "map resolution disagrees with database config");
    }
  }
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> select_rows(std::size_t n, std::size_t rows, std::uint64_t seed,
                                     RpId rp_id, int draw_index) {
  if (rows > n)
    fail(ErrorCode::InsufficientSamples, "need " + std::to_string(rows) + " samples, have " +
                                             std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed({seed, stream::kSubsample, static_cast<std::uint64_t>(rp_id),
                       static_cast<std::uint64_t>(draw_index)}));
  // Partial Fisher-Yates over the first `rows` slots.
  for (std::size_t i = 0; i < rows; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(rows);
  std::sort(idx.begin(), idx.end());
  return idx;
}

AmplitudeBlock subsample_rows(const CsiSampleSet& set, const FeatureMapConfig& config,
                              int draw_index) {
  if (set.records.empty())
    fail(ErrorCode::InsufficientSamples, "empty sample set for reference point " + std::to_string(set.rp_id));
  AmplitudeBlock block;
  block.selected = select_rows(set.records.size(), static_cast<std::size_t>(config.rows_per_map),
                               config.seed, set.rp_id, draw_index);
  const auto& meta = set.records.front().meta;
  block.links.assign(meta.links(), Eigen::MatrixXd(config.rows_per_map, meta.n_sub));
  for (std::size_t r = 0; r < block.selected.size(); ++r) {
    const auto& rec = set.records[block.selected[r]];
    if (!(rec.meta == meta)) fail(ErrorCode::DimensionMismatch, "sample set mixes capture layouts");
    const Eigen::MatrixXd amp = amplitudes(rec);
    for (int m = 0; m < meta.links(); ++m) block.links[m].row(r) = amp.row(m);
  }
  return block;
}

int amplitude_row(double a, double amp_max, int resolution) {
  const double clamped = std::clamp(a, 0.0, amp_max);
  const double y = (resolution - 1) * (1.0 - clamped / amp_max);
  return std::clamp(static_cast<int>(std::floor(y)), 0, resolution - 1);
}

int subcarrier_column(int k, int n_sub, int resolution) {
  if (n_sub <= 1) return 0;
  return static_cast<int>((static_cast<long long>(k) * (resolution - 1)) / (n_sub - 1));
}

namespace {

void draw_line(std::vector<std::uint8_t>& px, int res, int channel, int x0, int y0, int x1,
               int y1) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    px[(static_cast<std::size_t>(y0) * res + x0) * kMapChannels + channel] = 255;
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

FeatureMap render_map(const AmplitudeBlock& block, const FeatureMapConfig& config, RpId rp_id,
                      Provenance provenance, int draw_index) {
  config.validate();
  if (block.links.size() > static_cast<std::size_t>(kMapChannels))
    fail(ErrorCode::TooManyLinks, std::to_string(block.links.size()) + " links exceed " +
                                      std::to_string(kMapChannels) + " colour channels");
  const int res = config.resolution;
  FeatureMap map{rp_id, res, provenance, draw_index, {}};
  map.pixels.assign(static_cast<std::size_t>(res) * res * kMapChannels, 0);
  for (std::size_t m = 0; m < block.links.size(); ++m) {
    const auto& amp = block.links[m];
    const int n_sub = static_cast<int>(amp.cols());
    for (Eigen::Index r = 0; r < amp.rows(); ++r) {
      int px = subcarrier_column(0, n_sub, res);
      int py = amplitude_row(amp(r, 0), config.amp_max, res);
      draw_line(map.pixels, res, static_cast<int>(m), px, py, px, py);
      for (int k = 1; k < n_sub; ++k) {
        const int x = subcarrier_column(k, n_sub, res);
        const int y = amplitude_row(amp(r, k), config.amp_max, res);
        draw_line(map.pixels, res, static_cast<int>(m), px, py, x, y);
        px = x;
        py = y;
      }
    }
  }
  return map;
}

double compute_amp_max(std::span<const CsiSampleSet> sets, double percentile) {
  std::vector<double> all;
  for (const auto& s : sets)
    for (const auto& rec : s.records) {
      const Eigen::MatrixXd a = amplitudes(rec);
      all.insert(all.end(), a.data(), a.data() + a.size());
    }
  if (all.empty()) fail(ErrorCode::InsufficientSamples, "no amplitudes to scale");
  std::sort(all.begin(), all.end());
  const double pos = std::clamp(percentile, 0.0, 100.0) / 100.0 * static_cast<double>(all.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, all.size() - 1);
  const double v = all[lo] + (pos - static_cast<double>(lo)) * (all[hi] - all[lo]);
  if (!(v > 0)) fail(ErrorCode::InsufficientSamples, "amplitude scale is zero");
  return v;
}

FingerprintDb build_initial_db(std::span<const CsiSampleSet> sets, const RpGrid& grid,
                               const FeatureMapConfig& config) {
  config.validate();
  FingerprintDb db;
  db.grid = grid;
  db.config = config;
  for (const auto& set : sets) {
    if (!grid.contains(set.rp_id))
      fail(ErrorCode::UnknownReferencePoint, "reference point " + std::to_string(set.rp_id) + " is not in the grid");
    if (set.records.size() < static_cast<std::size_t>(config.rows_per_map))
      fail(ErrorCode::InsufficientSamples,
           "reference point " + std::to_string(set.rp_id) + " has " + std::to_string(set.records.size()) +
               " samples, need " + std::to_string(config.rows_per_map));
    auto& out = db.maps[set.rp_id];
    out.reserve(config.maps_per_rp);
    for (int d = 0; d < config.maps_per_rp; ++d)
      out.push_back(render_map(subsample_rows(set, config, d), config, set.rp_id, Provenance::Real, d));
  }
  return db;
}

FingerprintDb merge(const FingerprintDb& db, const std::map<RpId, std::vector<FeatureMap>>& extra) {
  for (const auto& [id, v] : extra) {
    if (!db.grid.contains(id))
      fail(ErrorCode::UnknownReferencePoint, "reference point " + std::to_string(id) + " is not in the grid");
    for (const auto& m : v)
      if (m.resolution != db.config.resolution)
        fail(ErrorCode::ResolutionMismatch, "extra map resolution " + std::to_string(m.resolution) +
                                                " differs from database " + std::to_string(db.config.resolution));
  }
  FingerprintDb out = db;
  for (const auto& [id, v] : extra) {
    auto& dst = out.maps[id];
    dst.insert(dst.end(), v.begin(), v.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string map_filename(const FeatureMap& m) {
  return std::string(provenance_name(m.provenance)) + "_" + std::to_string(m.draw_index) + ".png";
}

}  // namespace

void save_db(const FingerprintDb& db, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  db.validate();
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "afloc-fingerprint-db";
  manifest["version"] = 1;
  manifest["grid"]["spacing"] = db.grid.spacing;
  for (const auto& p : db.grid.points)
    manifest["grid"]["points"].push_back({{"rp_id", p.rp_id}, {"x", p.x}, {"y", p.y}});
  manifest["config"] = {{"rows_per_map", db.config.rows_per_map},
                        {"maps_per_rp", db.config.maps_per_rp},
                        {"resolution", db.config.resolution},
                        {"amp_max", db.config.amp_max},
                        {"seed", db.config.seed}};
  manifest["maps"] = nlohmann::json::array();
  for (const auto& [id, v] : db.maps) {
    const fs::path sub = dir / std::to_string(id);
    fs::create_directories(sub);
    std::set<std::string> names;
    for (const auto& m : v) {
      const std::string name = map_filename(m);
      if (!names.insert(name).second)
        fail(ErrorCode::FormatError, "duplicate map file " + name + " for reference point " + std::to_string(id));
      write_png(sub / name, RgbImage{m.resolution, m.resolution, m.pixels});
      manifest["maps"].push_back({{"rp_id", id},
                                  {"file", std::to_string(id) + "/" + name},
                                  {"provenance", provenance_name(m.provenance)},
                                  {"draw_index", m.draw_index}});
    }
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) fail(ErrorCode::IoError, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

FingerprintDb load_db(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorCode::IoError, "no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("manifest: ") + e.what());
  }
  FingerprintDb db;
  try {
    db.grid.spacing = manifest.at("grid").at("spacing").get<double>();
    for (const auto& p : manifest.at("grid").at("points"))
      db.grid.points.push_back({p.at("rp_id").get<int>(), p.at("x").get<double>(), p.at("y").get<double>()});
    const auto& c = manifest.at("config");
    db.config.rows_per_map = c.at("rows_per_map").get<int>();
    db.config.maps_per_rp = c.at("maps_per_rp").get<int>();
    db.config.resolution = c.at("resolution").get<int>();
    db.config.amp_max = c.at("amp_max").get<double>();
    db.config.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& e : manifest.at("maps")) {
      const RpId id = e.at("rp_id").get<int>();
      const RgbImage img = read_png(dir / e.at("file").get<std::string>());
      if (img.width != db.config.resolution || img.height != db.config.resolution)
        fail(ErrorCode::ResolutionMismatch, "image " + e.at("file").get<std::string>() + " has wrong size");
      db.maps[id].push_back(FeatureMap{id, img.width, parse_provenance(e.at("provenance").get<std::string>()),
                                       e.at("draw_index").get<int>(), img.pixels});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("manifest: ") + e.what());
  }
  db.validate();
  return db;
}

}  // namespace afloc
