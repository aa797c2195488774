// afloc: command-line front end for the fingerprinting pipeline.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "afloc/errors.hpp"
#include "afloc/pipeline.hpp"

namespace {

void report_error(std::string_view cls, const std::string& msg) {
  std::cerr << "error " << cls << ": " << msg << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  using namespace afloc;

  CLI::App app{"WiFi CSI amplitude-feature-map localisation with AF-DCGAN augmentation"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  int workers = 0;
  int image_size = 0;
  bool fixed_reduction = false;
  std::vector<std::string> overrides;
  std::string db_override;

  app.add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "global seed");
  auto* workers_opt = app.add_option("--workers", workers, "per-RP training workers")->check(CLI::PositiveNumber);
  auto* size_opt = app.add_option("--image-size", image_size, "feature-map resolution in pixels");
  app.add_flag("--fixed-reduction", fixed_reduction, "serial, order-fixed reductions");
  app.add_option("--set", overrides, "override a config key (key=value), repeatable");

  const std::vector<std::string> names = {"synth",           "ingest",       "featuremaps",      "train-gan",
                                          "generate",        "augment-noise", "train-classifier", "evaluate",
                                          "show-config"};
  for (const auto& n : names) {
    auto* sub = app.add_subcommand(n);
    if (n == "train-classifier") sub->add_option("--db", db_override, "database directory (default paths.db)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  PipelineConfig cfg;
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      apply_config_text(cfg, in);
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) fail(ErrorCode::InvalidArgument, "--set expects key=value, got '" + kv + "'");
      apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    // Flags win over the file.
    if (*seed_opt) cfg.seed = seed;
    if (*workers_opt) cfg.workers = workers;
    if (*size_opt) cfg.featuremap.resolution = image_size;
    if (fixed_reduction) cfg.fixed_reduction = true;
    propagate_seed(cfg);
    cfg.validate();

    if (command == "synth") cmd_synth(cfg);
    else if (command == "ingest") cmd_ingest(cfg);
    else if (command == "featuremaps") cmd_featuremaps(cfg);
    else if (command == "train-gan") cmd_train_gan(cfg);
    else if (command == "generate") cmd_generate(cfg);
    else if (command == "augment-noise") cmd_augment_noise(cfg);
    else if (command == "train-classifier") cmd_train_classifier(cfg, db_override.empty() ? cfg.db : std::filesystem::path(db_override));
    else if (command == "evaluate") {
      const auto r = cmd_evaluate(cfg);
      std::printf("mean_error_m %.4f  p1 %.3f  p2 %.3f  p3 %.3f\n", r.mean, r.range_probs[0], r.range_probs[1],
                  r.range_probs[2]);
    } else if (command == "show-config") {
      std::cout << config_text(cfg) << "# hash " << config_hash(cfg) << '\n';
    }
  } catch (const Error& e) {
    report_error(e.name(), e.what());
    if (e.code() == ErrorCode::InvalidArgument) return 2;
    return is_numeric_error(e.code()) ? 4 : 3;
  } catch (const std::filesystem::filesystem_error& e) {
    report_error("IoError", e.what());
    return 3;
  } catch (const std::exception& e) {
    report_error("InternalError", e.what());
    return 3;
  }
  return 0;
}
