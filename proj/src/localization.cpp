#include "afloc/localization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "afloc/errors.hpp"
#include "afloc/nn/checkpoint.hpp"
#include "afloc/nn/loss.hpp"
#include "afloc/nn/optim.hpp"
#include "afloc/random.hpp"

namespace afloc {

using nn::LayerSpec;
using nn::Tensor;

void ClassifierConfig::validate() const {
  if (conv_widths.empty() || fc_width < 1 || epochs < 1 || batch_size < 1 || !(lr > 0) || patience < 1 ||
      !(validation_fraction >= 0 && validation_fraction < 1))
    fail(ErrorCode::InvalidArgument, "classifier configuration out of range");
  for (int w : conv_widths)
    if (w < 1) fail(ErrorCode::InvalidArgument, "convolution widths must be positive");
}

std::vector<LayerSpec> classifier_specs(int image_size, int class_count, const ClassifierConfig& config) {
  config.validate();
  std::vector<LayerSpec> specs;
  int in = kMapChannels;
  int size = image_size;
  for (int w : config.conv_widths) {
    if (size < 2) fail(ErrorCode::InvalidArgument, "image too small for the pooling stages");
    specs.push_back(LayerSpec::conv2d(in, w, 3, 1, 1));
    specs.push_back(LayerSpec::relu());
    specs.push_back(LayerSpec::max_pool2d(2));
    in = w;
    size /= 2;
  }
  specs.push_back(LayerSpec::fully_connected(static_cast<nn::Index>(in) * size * size, {config.fc_width}));
  specs.push_back(LayerSpec::relu());
  specs.push_back(LayerSpec::fully_connected(config.fc_width, {class_count}));
  return specs;
}

namespace {

Tensor<float> stack(std::span<const FeatureMap* const> maps, std::span<const std::size_t> idx) {
  const int r = maps[idx.front()]->resolution;
  Tensor<float> t({static_cast<nn::Index>(idx.size()), kMapChannels, r, r});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const FeatureMap& m = *maps[idx[i]];
    if (m.resolution != r) fail(ErrorCode::ResolutionMismatch, "maps differ in resolution");
    t.as_matrix().row(static_cast<nn::Index>(i)) = to_unit_chw<float>(m).transpose();
  }
  return t;
}

double accuracy(AfCnnModel& model, std::span<const FeatureMap* const> maps, std::span<const int> labels,
                std::span<const std::size_t> idx, int batch) {
  if (idx.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch)) {
    const auto part = idx.subspan(start, std::min<std::size_t>(static_cast<std::size_t>(batch), idx.size() - start));
    const Tensor<float> logits = model.net.forward(stack(maps, part), nn::Mode::Inference);
    const auto lm = logits.as_matrix();
    for (std::size_t i = 0; i < part.size(); ++i) {
      nn::Index arg = 0;
      lm.row(static_cast<nn::Index>(i)).maxCoeff(&arg);
      correct += arg == labels[part[i]] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace

ClassifierTraining train_classifier(std::span<const FeatureMap* const> maps, std::span<const int> labels,
                                    int class_count, const ClassifierConfig& config) {
  config.validate();
  if (maps.size() != labels.size()) fail(ErrorCode::InvalidArgument, "one label per map required");
  if (maps.empty() || class_count < 1) fail(ErrorCode::InsufficientData, "no training maps");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(class_count));
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count) fail(ErrorCode::InvalidArgument, "label out of range");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  for (int c = 0; c < class_count; ++c)
    if (by_class[static_cast<std::size_t>(c)].size() < 2)
      fail(ErrorCode::InsufficientData, "class " + std::to_string(c) + " has fewer than two maps");

  const int image_size = maps.front()->resolution;
  Rng rng(derive_seed({config.seed, stream::kClassifier}));

  // Stratified split.
  std::vector<std::size_t> train_idx, val_idx;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t n_val = 0;
    if (config.validation_fraction > 0)
      n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(config.validation_fraction * members.size())));
    n_val = std::min(n_val, members.size() - 1);
    val_idx.insert(val_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.insert(train_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }

  ClassifierTraining out;
  out.model.class_count = class_count;
  out.model.image_size = image_size;
  out.model.conv_widths = config.conv_widths;
  out.model.fc_width = config.fc_width;
  out.model.net = nn::Network<float>(classifier_specs(image_size, class_count, config));
  nn::initialize(out.model.net, derive_seed({config.seed, stream::kClassifier, 1}), nn::InitScheme::He);

  nn::RmsPropState<float> state;
  const auto params = out.model.net.params();
  nn::Network<float> best = out.model.net;
  double best_score = -1.0;
  int stale = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    EpochStats stats;
    stats.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto part = std::span<const std::size_t>(train_idx).subspan(
          start, std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), train_idx.size() - start));
      std::vector<int> y;
      for (auto i : part) y.push_back(labels[i]);
      out.model.net.zero_grad();
      const Tensor<float> logits = out.model.net.forward(stack(maps, part), nn::Mode::Train);
      const auto lm = logits.as_matrix();
      for (std::size_t i = 0; i < part.size(); ++i) {
        nn::Index arg = 0;
        lm.row(static_cast<nn::Index>(i)).maxCoeff(&arg);
        correct += arg == y[i] ? 1 : 0;
      }
      auto loss = nn::softmax_cross_entropy(logits, std::span<const int>(y));
      if (!std::isfinite(loss.loss)) fail(ErrorCode::NonFiniteLoss, "classifier loss diverged");
      stats.train_loss += loss.loss * static_cast<double>(part.size());
      out.model.net.backward(std::move(loss.grad));
      nn::rmsprop_step(params, state, static_cast<float>(config.lr), nn::StepDirection::Descend);
    }
    stats.train_loss /= static_cast<double>(train_idx.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_idx.size());
    stats.validation_accuracy =
        val_idx.empty() ? stats.train_accuracy : accuracy(out.model, maps, labels, val_idx, config.batch_size);
    out.history.push_back(stats);
    if (stats.validation_accuracy > best_score) {
      best_score = stats.validation_accuracy;
      best = out.model.net;
      out.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  out.model.net = std::move(best);
  return out;
}

ClassifierTraining train_classifier(const FingerprintDb& db, const ClassifierConfig& config) {
  db.validate();
  const int m = static_cast<int>(db.grid.size());
  std::vector<const FeatureMap*> maps;
  std::vector<int> labels;
  for (const auto& p : db.grid.points) {
    const auto it = db.maps.find(p.rp_id);
    if (it == db.maps.end() || it->second.size() < 2)
      fail(ErrorCode::InsufficientData, "reference point " + std::to_string(p.rp_id) + " has fewer than two maps");
    for (const auto& fm : it->second) {
      maps.push_back(&fm);
      labels.push_back(p.rp_id - 1);
    }
  }
  return train_classifier(maps, labels, m, config);
}

Eigen::MatrixXd classify_batch(AfCnnModel& model, std::span<const FeatureMap* const> maps) {
  Eigen::MatrixXd out(static_cast<nn::Index>(maps.size()), model.class_count);
  if (maps.empty()) return out;
  for (const auto* m : maps)
    if (m->resolution != model.image_size)
      fail(ErrorCode::ResolutionMismatch, "map resolution " + std::to_string(m->resolution) +
                                              " differs from classifier input " + std::to_string(model.image_size));
  std::vector<std::size_t> idx(maps.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < idx.size(); start += kChunk) {
    const auto part = std::span<const std::size_t>(idx).subspan(start, std::min(kChunk, idx.size() - start));
    const Tensor<double> logits = model.net.forward(stack(maps, part), nn::Mode::Inference).cast<double>();
    const Tensor<double> p = nn::softmax(logits);
    out.middleRows(static_cast<nn::Index>(start), static_cast<nn::Index>(part.size())) = p.as_matrix();
  }
  return out;
}

Eigen::VectorXd classify(AfCnnModel& model, const FeatureMap& map) {
  const FeatureMap* one[] = {&map};
  return classify_batch(model, one).row(0).transpose();
}

std::array<RpId, 4> top4(const Eigen::VectorXd& probs) {
  if (probs.size() < 4) fail(ErrorCode::TooFewClasses, "top-4 localisation needs at least four reference points");
  std::vector<nn::Index> order(static_cast<std::size_t>(probs.size()));
  std::iota(order.begin(), order.end(), nn::Index{0});
  std::partial_sort(order.begin(), order.begin() + 4, order.end(), [&](nn::Index a, nn::Index b) {
    return probs(a) != probs(b) ? probs(a) > probs(b) : a < b;
  });
  return {static_cast<RpId>(order[0] + 1), static_cast<RpId>(order[1] + 1), static_cast<RpId>(order[2] + 1),
          static_cast<RpId>(order[3] + 1)};
}

Eigen::Vector2d top4_centroid(const Eigen::VectorXd& probs, const RpGrid& grid) {
  if (static_cast<std::size_t>(probs.size()) != grid.size())
    fail(ErrorCode::DimensionMismatch, "probability vector length differs from grid size");
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (RpId id : top4(probs)) {
    const auto& p = grid.at(id);
    c += Eigen::Vector2d(p.x, p.y);
  }
  return c / 4.0;
}

LocalizationReport make_report(std::vector<double> errors) {
  if (errors.empty()) fail(ErrorCode::InsufficientData, "no localisation errors to summarise");
  LocalizationReport r;
  r.per_test_errors = std::move(errors);
  std::vector<double> sorted = r.per_test_errors;
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  r.min = sorted.front();
  r.max = sorted.back();
  // Summation in sorted order keeps the mean independent of test order.
  r.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  r.mean = std::clamp(r.mean, r.min, r.max);
  for (std::size_t i = 0; i < sorted.size(); ++i) r.cdf.emplace_back(sorted[i], static_cast<double>(i + 1) / n);
  const double thresholds[3] = {1.0, 2.0, 3.0};
  for (int t = 0; t < 3; ++t) {
    const auto count = std::upper_bound(sorted.begin(), sorted.end(), thresholds[t]) - sorted.begin();
    r.range_probs[static_cast<std::size_t>(t)] = static_cast<double>(count) / n;
  }
  return r;
}

LocalizationReport evaluate(AfCnnModel& model, std::span<const TestSample> tests, const RpGrid& grid) {
  if (tests.empty()) fail(ErrorCode::InsufficientData, "no test samples");
  if (static_cast<std::size_t>(model.class_count) != grid.size())
    fail(ErrorCode::DimensionMismatch, "classifier class count differs from grid size");
  std::vector<const FeatureMap*> maps;
  for (const auto& t : tests) maps.push_back(&t.map);
  const Eigen::MatrixXd probs = classify_batch(model, maps);
  std::vector<double> errors;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const Eigen::Vector2d est = top4_centroid(probs.row(static_cast<nn::Index>(i)).transpose(), grid);
    errors.push_back((est - tests[i].position).norm());
  }
  return make_report(std::move(errors));
}

// ---------------------------------------------------------------------------

std::vector<Eigen::RowVectorXd> amplitude_spread(const CsiSampleSet& set) {
  if (set.records.empty()) fail(ErrorCode::InsufficientSamples, "empty sample set");
  const auto& meta = set.records.front().meta;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(meta.links(), meta.n_sub);
  Eigen::MatrixXd sq = sum;
  for (const auto& rec : set.records) {
    const Eigen::MatrixXd a = amplitudes(rec);
    sum += a;
    sq += a.cwiseProduct(a);
  }
  const auto n = static_cast<double>(set.records.size());
  const Eigen::MatrixXd mean = sum / n;
  const Eigen::MatrixXd var = (sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0);
  std::vector<Eigen::RowVectorXd> out;
  for (int m = 0; m < meta.links(); ++m) out.push_back(var.row(m).cwiseSqrt());
  return out;
}

void add_amplitude_noise(AmplitudeBlock& block, const std::vector<Eigen::RowVectorXd>& spread, double sigma_scale,
                         std::uint64_t seed) {
  if (sigma_scale == 0.0) return;
  if (spread.size() != block.links.size()) fail(ErrorCode::DimensionMismatch, "spread does not match block links");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t m = 0; m < block.links.size(); ++m) {
    auto& a = block.links[m];
    for (Eigen::Index r = 0; r < a.rows(); ++r)
      for (Eigen::Index k = 0; k < a.cols(); ++k) a(r, k) += sigma_scale * spread[m](k) * normal(rng);
  }
}

FingerprintDb adnoi_augment(const FingerprintDb& db, std::span<const CsiSampleSet> sets, double fraction,
                            double sigma_scale, std::uint64_t seed) {
  if (!(fraction >= 0) || !(sigma_scale >= 0)) fail(ErrorCode::InvalidArgument, "fraction and sigma_scale must be >= 0");
  const int per_rp = db.config.maps_per_rp;
  const int extra = static_cast<int>(std::lround(fraction * per_rp));
  std::map<RpId, std::vector<FeatureMap>> added;
  if (extra == 0 || per_rp == 0) return merge(db, added);
  for (const auto& set : sets) {
    if (!db.grid.contains(set.rp_id))
      fail(ErrorCode::UnknownReferencePoint, "reference point " + std::to_string(set.rp_id) + " is not in the grid");
    const auto spread = amplitude_spread(set);
    auto& out = added[set.rp_id];
    for (int j = 0; j < extra; ++j) {
      AmplitudeBlock block = subsample_rows(set, db.config, j % per_rp);
      add_amplitude_noise(block, spread, sigma_scale,
                          derive_seed({seed, stream::kNoise, static_cast<std::uint64_t>(set.rp_id),
                                       static_cast<std::uint64_t>(j)}));
      out.push_back(render_map(block, db.config, set.rp_id, Provenance::NoiseAugmented, j));
    }
  }
  return merge(db, added);
}

// ---------------------------------------------------------------------------

void write_errors_csv(std::ostream& out, const LocalizationReport& report) {
  const auto p = out.precision(10);
  out << "test_index,error_m\n";
  for (std::size_t i = 0; i < report.per_test_errors.size(); ++i) out << i << ',' << report.per_test_errors[i] << '\n';
  out.precision(p);
}

void write_cdf_csv(std::ostream& out, const LocalizationReport& report) {
  const auto p = out.precision(10);
  out << "error_m,cumulative_fraction\n";
  for (const auto& [e, f] : report.cdf) out << e << ',' << f << '\n';
  out.precision(p);
}

void write_summary(std::ostream& out, const LocalizationReport& report) {
  const auto p = out.precision(6);
  out << "tests: " << report.per_test_errors.size() << '\n'
      << "mean_error_m: " << report.mean << '\n'
      << "min_error_m: " << report.min << '\n'
      << "max_error_m: " << report.max << '\n'
      << "p_within_1m: " << report.range_probs[0] << '\n'
      << "p_within_2m: " << report.range_probs[1] << '\n'
      << "p_within_3m: " << report.range_probs[2] << '\n';
  out.precision(p);
}

void save_classifier(const AfCnnModel& model, const std::filesystem::path& path) {
  AfCnnModel copy = model;
  std::vector<nn::NamedTensor> tensors;
  nn::export_state(copy.net, "classifier.", tensors);
  nn::save_checkpoint(std::filesystem::path(path).concat(".ckpt"), tensors);
  const nlohmann::json meta = {{"format", "afloc-classifier"},
                               {"version", 1},
                               {"class_count", model.class_count},
                               {"image_size", model.image_size},
                               {"conv_widths", model.conv_widths},
                               {"fc_width", model.fc_width}};
  std::ofstream out(std::filesystem::path(path).concat(".json"));
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string() + ".json");
  out << meta.dump(2) << '\n';
}

AfCnnModel load_classifier(const std::filesystem::path& path) {
  std::ifstream in(std::filesystem::path(path).concat(".json"));
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string() + ".json");
  AfCnnModel model;
  try {
    nlohmann::json meta;
    in >> meta;
    model.class_count = meta.at("class_count");
    model.image_size = meta.at("image_size");
    model.conv_widths = meta.at("conv_widths").get<std::vector<int>>();
    model.fc_width = meta.at("fc_width");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("classifier metadata: ") + e.what());
  }
  ClassifierConfig cfg;
  cfg.conv_widths = model.conv_widths;
  cfg.fc_width = model.fc_width;
  model.net = nn::Network<float>(classifier_specs(model.image_size, model.class_count, cfg));
  nn::import_state(model.net, "classifier.", nn::load_checkpoint(std::filesystem::path(path).concat(".ckpt")));
  return model;
}

}  // namespace afloc
