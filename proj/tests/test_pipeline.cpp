#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "afloc/errors.hpp"
#include "afloc/pipeline.hpp"

using namespace afloc;

TEST_CASE("defaults follow the published hyperparameters") {
  const PipelineConfig cfg;
  CHECK(cfg.gan.bs == 49);
  CHECK(cfg.gan.c == 0.01);
  CHECK(cfg.gan.lr == 0.0002);
  CHECK(cfg.gan.f_d == 2);
  CHECK(cfg.gan.z_dim == 100);
  CHECK(cfg.featuremap.rows_per_map == 100);
  CHECK(cfg.featuremap.resolution == 256);
  CHECK(cfg.gan_fraction == 1.5);
  CHECK(cfg.workers == 1);
}

TEST_CASE("config text round trip") {
  PipelineConfig cfg;
  cfg.seed = 12345678901234ULL;
  cfg.gan.lr = 0.1 + 0.2;
  cfg.synth.noise_sigma = 1.0 / 3.0;
  cfg.classifier.conv_widths = {8, 16};
  cfg.featuremap.resolution = 64;
  cfg.gan.image_size = 64;
  cfg.reports = "out dir/reports";
  std::istringstream in(config_text(cfg));
  PipelineConfig back;
  apply_config_text(back, in);
  CHECK(config_settings(back) == config_settings(cfg));
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(back.gan.lr == cfg.gan.lr);
  CHECK(back.synth.noise_sigma == cfg.synth.noise_sigma);
  CHECK(back.classifier.conv_widths == std::vector<int>{8, 16});

  PipelineConfig other = cfg;
  other.gan.f_d = 5;
  CHECK(config_hash(other) != config_hash(cfg));

  std::istringstream comments("# comment\n\nseed = 7  # trailing\ngan.bs=3\n");
  PipelineConfig c2;
  apply_config_text(c2, comments);
  CHECK(c2.seed == 7);
  CHECK(c2.gan.bs == 3);

  try {
    apply_setting(c2, "gan.nope", "1");
    FAIL("unknown key");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidArgument);
  }
  CHECK_THROWS_AS(apply_setting(c2, "gan.bs", "many"), Error);
}

TEST_CASE("seed propagation and manifest") {
  PipelineConfig cfg;
  cfg.seed = 99;
  propagate_seed(cfg);
  CHECK(cfg.featuremap.seed == 99);
  CHECK(cfg.synth.seed == 99);
  CHECK(cfg.classifier.seed == 99);

  const auto dir = std::filesystem::temp_directory_path() / "afloc_manifest_test";
  std::filesystem::create_directories(dir);
  write_run_manifest(dir, "synth", cfg);
  const PipelineConfig back = read_run_manifest(dir);
  CHECK(config_hash(back) == config_hash(cfg));
}

TEST_CASE("points csv") {
  const auto path = std::filesystem::temp_directory_path() / "afloc_points.csv";
  const RpGrid g = RpGrid::regular(3, 2, 1.5);
  write_points_csv(path, g);
  const RpGrid back = read_points_csv(path);
  REQUIRE(back.size() == 6);
  CHECK(back.spacing == doctest::Approx(1.5));
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(back.points[i].rp_id == g.points[i].rp_id);
    CHECK(back.points[i].x == g.points[i].x);
    CHECK(back.points[i].y == g.points[i].y);
  }
  const auto empty = std::filesystem::temp_directory_path() / "afloc_no_tests";
  std::filesystem::remove_all(empty);
  std::filesystem::create_directories(empty);
  try {
    load_test_samples(empty);
    FAIL("expected InsufficientData");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientData);
  }
}
