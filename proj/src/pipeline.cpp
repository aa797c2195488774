#include "afloc/pipeline.hpp"

#include <atomic>
#include <charconv>
#include <exception>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "afloc/errors.hpp"
#include "afloc/random.hpp"

namespace afloc {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    fail(ErrorCode::InvalidArgument, "bad value '" + s + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail(ErrorCode::InvalidArgument, "bad value '" + s + "' for " + key);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <typename T>
Field number(std::string key, T& ref) {
  Field f;
  f.key = key;
  f.get = [&ref] {
    if constexpr (std::is_floating_point_v<T>) return fmt(ref);
    else return std::to_string(ref);
  };
  f.set = [&ref, key](const std::string& v) { ref = parse_number<T>(key, v); };
  return f;
}

Field path(std::string key, fs::path& ref) {
  return {key, [&ref] { return ref.generic_string(); }, [&ref](const std::string& v) { ref = v; }};
}

Field boolean(std::string key, bool& ref) {
  return {key, [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref, key](const std::string& v) { ref = parse_bool(key, v); }};
}

Field int_list(std::string key, std::vector<int>& ref) {
  Field f;
  f.key = key;
  f.get = [&ref] {
    std::string s;
    for (std::size_t i = 0; i < ref.size(); ++i) s += (i ? "," : "") + std::to_string(ref[i]);
    return s;
  };
  f.set = [&ref, key](const std::string& v) {
    ref.clear();
    std::stringstream ss(v);
    for (std::string part; std::getline(ss, part, ',');) ref.push_back(parse_number<int>(key, trim(part)));
  };
  return f;
}

// Config keys are fields of a mutable config; const access goes through a copy.
std::vector<Field> fields(PipelineConfig& c) {
  return {
      number("seed", c.seed),
      number("workers", c.workers),
      boolean("fixed_reduction", c.fixed_reduction),
      path("paths.raw", c.raw),
      path("paths.dataset", c.dataset),
      path("paths.db", c.db),
      path("paths.augmented_db", c.augmented_db),
      path("paths.test_db", c.test_db),
      path("paths.models", c.models),
      path("paths.reports", c.reports),
      number("grid.nx", c.grid_nx),
      number("grid.ny", c.grid_ny),
      number("grid.spacing", c.grid_spacing),
      number("capture.n_tx", c.capture.n_tx),
      number("capture.n_rx", c.capture.n_rx),
      number("capture.n_sub", c.capture.n_sub),
      number("capture.n_ap", c.capture.n_ap),
      number("capture.packet_rate", c.capture.packet_rate),
      number("synth.samples_per_rp", c.samples_per_rp),
      number("synth.test_samples", c.test_samples),
      number("synth.paths", c.synth.paths),
      number("synth.noise_sigma", c.synth.noise_sigma),
      number("synth.phase_jitter", c.synth.phase_jitter),
      number("synth.amplitude_scale", c.synth.amplitude_scale),
      number("synth.max_excess_delay", c.synth.max_excess_delay),
      number("synth.carrier_spacing", c.synth.carrier_spacing),
      number("featuremap.rows_per_map", c.featuremap.rows_per_map),
      number("featuremap.maps_per_rp", c.featuremap.maps_per_rp),
      number("featuremap.resolution", c.featuremap.resolution),
      number("featuremap.amp_max_percentile", c.amp_max_percentile),
      number("featuremap.test_maps_per_point", c.test_maps_per_point),
      number("gan.lr", c.gan.lr),
      number("gan.c", c.gan.c),
      number("gan.bs", c.gan.bs),
      number("gan.f_d", c.gan.f_d),
      number("gan.z_dim", c.gan.z_dim),
      number("gan.iterations", c.gan.iterations),
      number("gan.base_channels", c.gan.base_channels),
      number("gan.rms_decay", c.gan.rms_decay),
      number("gan.rms_epsilon", c.gan.rms_epsilon),
      number("gan.fraction", c.gan_fraction),
      number("noise.fraction", c.noise_fraction),
      number("noise.sigma_scale", c.noise_sigma_scale),
      int_list("classifier.conv_widths", c.classifier.conv_widths),
      number("classifier.fc_width", c.classifier.fc_width),
      number("classifier.epochs", c.classifier.epochs),
      number("classifier.batch_size", c.classifier.batch_size),
      number("classifier.lr", c.classifier.lr),
      number("classifier.patience", c.classifier.patience),
      number("classifier.validation_fraction", c.classifier.validation_fraction),
  };
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  return in;
}

RpGrid config_grid(const PipelineConfig& cfg) { return RpGrid::regular(cfg.grid_nx, cfg.grid_ny, cfg.grid_spacing); }

std::vector<CsiSampleSet> read_sets(const fs::path& csv, const RpGrid& grid, const CaptureMeta& meta) {
  auto in = open_in(csv);
  const auto records = read_canonical(in, meta);
  return group_by_rp(records, grid);
}

void write_sets(const fs::path& csv, std::span<const CsiSampleSet> sets) {
  std::vector<LabeledRecord> flat;
  for (const auto& s : sets)
    for (const auto& r : s.records) flat.push_back({s.rp_id, r});
  std::ostringstream out;
  write_canonical(out, flat);
  write_text(csv, out.str());
}

FeatureMapConfig map_config(const PipelineConfig& cfg, double amp_max) {
  FeatureMapConfig fc = cfg.featuremap;
  fc.amp_max = amp_max;
  return fc;
}

fs::path gan_path(const PipelineConfig& cfg, RpId id) { return cfg.models / "gan" / ("rp" + std::to_string(id)); }

}  // namespace

void PipelineConfig::validate() const {
  if (workers < 1) fail(ErrorCode::InvalidArgument, "workers must be >= 1");
  if (grid_nx < 1 || grid_ny < 1 || !(grid_spacing > 0)) fail(ErrorCode::InvalidArgument, "bad grid dimensions");
  capture.validate();
  if (samples_per_rp < 1 || test_samples < 1) fail(ErrorCode::InvalidArgument, "sample counts must be positive");
  if (!(amp_max_percentile > 0 && amp_max_percentile <= 100)) fail(ErrorCode::InvalidArgument, "bad percentile");
  if (test_maps_per_point < 1) fail(ErrorCode::InvalidArgument, "test_maps_per_point must be positive");
  if (!(gan_fraction >= 0) || !(noise_fraction >= 0) || !(noise_sigma_scale >= 0))
    fail(ErrorCode::InvalidArgument, "augmentation fractions must be >= 0");
  synth.validate();
  FeatureMapConfig fc = featuremap;
  fc.validate();
  gan.validate();
  classifier.validate();
}

std::vector<std::pair<std::string, std::string>> config_settings(const PipelineConfig& cfg) {
  PipelineConfig copy = cfg;
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields(copy)) out.emplace_back(f.key, f.get());
  return out;
}

void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  for (auto& f : fields(cfg))
    if (f.key == key) {
      f.set(value);
      return;
    }
  fail(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
}

void apply_config_text(PipelineConfig& cfg, std::istream& in) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::InvalidArgument, "config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(cfg, trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
}

std::string config_text(const PipelineConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : config_settings(cfg)) s += k + " = " + v + "\n";
  return s;
}

std::string config_hash(const PipelineConfig& cfg) {
  // FNV-1a over the canonical text.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_text(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void propagate_seed(PipelineConfig& cfg) {
  cfg.featuremap.seed = cfg.seed;
  cfg.synth.seed = cfg.seed;
  cfg.classifier.seed = cfg.seed;
}

void write_run_manifest(const fs::path& dir, const std::string& command, const PipelineConfig& cfg) {
  fs::create_directories(dir);
  nlohmann::ordered_json m;
  m["command"] = command;
  m["seed"] = cfg.seed;
  m["config_hash"] = config_hash(cfg);
  m["config"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config_settings(cfg)) m["config"][k] = v;
  write_text(dir / "run_manifest.json", m.dump(2) + "\n");
}

PipelineConfig read_run_manifest(const fs::path& dir) {
  auto in = open_in(dir / "run_manifest.json");
  PipelineConfig cfg;
  try {
    nlohmann::json m;
    in >> m;
    for (const auto& [k, v] : m.at("config").items()) apply_setting(cfg, k, v.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("run manifest: ") + e.what());
  }
  return cfg;
}

RpGrid read_points_csv(const fs::path& path) {
  auto in = open_in(path);
  RpGrid grid;
  std::string line;
  std::getline(in, line);
  if (trim(line) != "rp_id,x,y") fail(ErrorCode::FormatError, path.string() + ": expected header rp_id,x,y");
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    grid.points.push_back({parse_number<int>("rp_id", trim(a)), parse_number<double>("x", trim(b)),
                           parse_number<double>("y", trim(c))});
  }
  if (grid.points.size() >= 2) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.points.size(); ++i)
      for (std::size_t j = i + 1; j < grid.points.size(); ++j)
        best = std::min(best, std::hypot(grid.points[i].x - grid.points[j].x, grid.points[i].y - grid.points[j].y));
    if (best > 0 && std::isfinite(best)) grid.spacing = best;
  }
  grid.validate();
  return grid;
}

void write_points_csv(const fs::path& path, const RpGrid& grid) {
  std::string s = "rp_id,x,y\n";
  for (const auto& p : grid.points) s += std::to_string(p.rp_id) + "," + fmt(p.x) + "," + fmt(p.y) + "\n";
  write_text(path, s);
}

std::vector<TestSample> load_test_samples(const fs::path& dir) {
  if (!fs::exists(dir) || fs::is_empty(dir)) fail(ErrorCode::InsufficientData, "no test maps in " + dir.string());
  const FingerprintDb db = load_db(dir);
  std::vector<TestSample> out;
  for (const auto& [id, maps] : db.maps) {
    const auto& p = db.grid.at(id);
    for (const auto& m : maps) out.push_back({m, Eigen::Vector2d(p.x, p.y)});
  }
  if (out.empty()) fail(ErrorCode::InsufficientData, "no test maps in " + dir.string());
  return out;
}

// ---------------------------------------------------------------------------

void cmd_synth(const PipelineConfig& cfg) {
  cfg.validate();
  const RpGrid grid = config_grid(cfg);
  const SynthConfig sc = room_for_grid(grid, cfg.synth);
  const RpGrid tests = interior_test_points(grid);
  fs::create_directories(cfg.dataset);
  write_sets(cfg.dataset / "train.csv", synth_dataset(grid, cfg.samples_per_rp, cfg.capture, sc));
  // Test packets use a disjoint packet-index range so their noise differs.
  std::vector<CsiSampleSet> test_sets;
  for (const auto& p : tests.points)
    test_sets.push_back(synth_samples(p.rp_id, {p.x, p.y}, cfg.test_samples, cfg.capture, sc,
                                      static_cast<std::uint64_t>(1) << 40));
  write_sets(cfg.dataset / "test.csv", test_sets);
  write_points_csv(cfg.dataset / "grid.csv", grid);
  write_points_csv(cfg.dataset / "test_points.csv", tests);
  write_run_manifest(cfg.dataset, "synth", cfg);
}

void cmd_ingest(const PipelineConfig& cfg) {
  cfg.validate();
  const RpGrid grid = fs::exists(cfg.raw / "grid.csv") ? read_points_csv(cfg.raw / "grid.csv") : config_grid(cfg);
  BinaryParseOptions opts;
  opts.n_ap = cfg.capture.n_ap;
  opts.packet_rate = cfg.capture.packet_rate;

  const auto convert = [&](const fs::path& dir, const RpGrid& points) {
    std::vector<LabeledRecord> flat;
    for (const auto& p : points.points) {
      const fs::path file = dir / (std::to_string(p.rp_id) + ".dat");
      if (!fs::exists(file)) fail(ErrorCode::InsufficientData, "missing capture " + file.string());
      auto in = open_in(file);
      const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      auto parsed = parse_binary_log(bytes, opts);
      for (auto& r : parsed.records) flat.push_back({p.rp_id, std::move(r)});
    }
    std::ostringstream out;
    write_canonical(out, flat);
    return out.str();
  };

  fs::create_directories(cfg.dataset);
  write_text(cfg.dataset / "train.csv", convert(cfg.raw / "train", grid));
  write_points_csv(cfg.dataset / "grid.csv", grid);
  if (fs::exists(cfg.raw / "test_points.csv")) {
    const RpGrid tests = read_points_csv(cfg.raw / "test_points.csv");
    write_text(cfg.dataset / "test.csv", convert(cfg.raw / "test", tests));
    write_points_csv(cfg.dataset / "test_points.csv", tests);
  }
  write_run_manifest(cfg.dataset, "ingest", cfg);
}

void cmd_featuremaps(const PipelineConfig& cfg) {
  cfg.validate();
  const RpGrid grid = read_points_csv(cfg.dataset / "grid.csv");
  const auto sets = read_sets(cfg.dataset / "train.csv", grid, cfg.capture);
  // amp_max comes from training data only and is reused for the test maps.
  const double amp_max = compute_amp_max(sets, cfg.amp_max_percentile);
  const FeatureMapConfig fc = map_config(cfg, amp_max);
  const FingerprintDb db = build_initial_db(sets, grid, fc);
  fs::remove_all(cfg.db);
  save_db(db, cfg.db);
  write_run_manifest(cfg.db, "featuremaps", cfg);

  if (fs::exists(cfg.dataset / "test.csv")) {
    const RpGrid tests = read_points_csv(cfg.dataset / "test_points.csv");
    const auto test_sets = read_sets(cfg.dataset / "test.csv", tests, cfg.capture);
    FeatureMapConfig tc = fc;
    tc.maps_per_rp = cfg.test_maps_per_point;
    tc.seed = derive_seed({cfg.seed, 0x54455354ULL});
    FingerprintDb tdb = build_initial_db(test_sets, tests, tc);
    fs::remove_all(cfg.test_db);
    save_db(tdb, cfg.test_db);
    write_run_manifest(cfg.test_db, "featuremaps", cfg);
  }
}

void cmd_train_gan(const PipelineConfig& cfg) {
  cfg.validate();
  const FingerprintDb db = load_db(cfg.db);
  HyperParams hp = cfg.gan;
  hp.image_size = db.config.resolution;
  hp.validate();
  std::vector<RpId> ids;
  for (const auto& [id, maps] : db.maps)
    if (!maps.empty()) ids.push_back(id);
  fs::create_directories(cfg.models / "gan");

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex mu;
  const auto work = [&] {
    for (std::size_t i = next++; i < ids.size(); i = next++) {
      {
        std::lock_guard lock(mu);
        if (first_error) return;
      }
      try {
        const RpId id = ids[i];
        TrainOptions opts;
        opts.failure_checkpoint = gan_path(cfg, id).concat(".failed");
        const auto res = train(db.maps.at(id), hp, derive_seed({cfg.seed, stream::kGanTrain, static_cast<std::uint64_t>(id)}),
                               opts);
        save_gan(res.model, gan_path(cfg, id));
        write_telemetry_csv(gan_path(cfg, id).concat("_telemetry.csv"), res.telemetry);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const int n = std::min<int>(cfg.workers, static_cast<int>(ids.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < n; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  write_run_manifest(cfg.models / "gan", "train-gan", cfg);
}

void cmd_generate(const PipelineConfig& cfg) {
  cfg.validate();
  const FingerprintDb db = load_db(cfg.db);
  const int count = static_cast<int>(std::lround(cfg.gan_fraction * db.config.maps_per_rp));
  std::map<RpId, std::vector<FeatureMap>> extra;
  for (const auto& p : db.grid.points) {
    GanModel model = load_gan(gan_path(cfg, p.rp_id));
    if (model.hp.image_size != db.config.resolution)
      fail(ErrorCode::ResolutionMismatch, "GAN for reference point " + std::to_string(p.rp_id) + " has the wrong size");
    extra[p.rp_id] = generate_maps(model, count, cfg.seed);
  }
  const FingerprintDb out = merge(db, extra);
  fs::remove_all(cfg.augmented_db);
  save_db(out, cfg.augmented_db);
  write_run_manifest(cfg.augmented_db, "generate", cfg);
}

void cmd_augment_noise(const PipelineConfig& cfg) {
  cfg.validate();
  const FingerprintDb db = load_db(cfg.db);
  const auto sets = read_sets(cfg.dataset / "train.csv", db.grid, cfg.capture);
  const FingerprintDb out = adnoi_augment(db, sets, cfg.noise_fraction, cfg.noise_sigma_scale, cfg.seed);
  fs::remove_all(cfg.augmented_db);
  save_db(out, cfg.augmented_db);
  write_run_manifest(cfg.augmented_db, "augment-noise", cfg);
}

void cmd_train_classifier(const PipelineConfig& cfg, const fs::path& db_dir) {
  cfg.validate();
  const FingerprintDb db = load_db(db_dir);
  const auto result = train_classifier(db, cfg.classifier);
  fs::create_directories(cfg.models);
  save_classifier(result.model, cfg.models / "classifier");
  std::string hist = "epoch,train_loss,train_accuracy,validation_accuracy\n";
  for (const auto& e : result.history)
    hist += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.train_accuracy) + "," +
            fmt(e.validation_accuracy) + "\n";
  write_text(cfg.models / "classifier_history.csv", hist);
  write_run_manifest(cfg.models, "train-classifier", cfg);
}

LocalizationReport cmd_evaluate(const PipelineConfig& cfg) {
  cfg.validate();
  const auto tests = load_test_samples(cfg.test_db);
  AfCnnModel model = load_classifier(cfg.models / "classifier");
  const RpGrid grid = read_points_csv(cfg.dataset / "grid.csv");
  const LocalizationReport report = evaluate(model, tests, grid);
  fs::create_directories(cfg.reports);
  std::ostringstream errors, cdf, summary;
  write_errors_csv(errors, report);
  write_cdf_csv(cdf, report);
  write_summary(summary, report);
  write_text(cfg.reports / "errors.csv", errors.str());
  write_text(cfg.reports / "cdf.csv", cdf.str());
  write_text(cfg.reports / "summary.txt", summary.str());
  write_run_manifest(cfg.reports, "evaluate", cfg);
  return report;
}

}  // namespace afloc
