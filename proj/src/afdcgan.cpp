#include "afloc/afdcgan.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "afloc/errors.hpp"
#include "afloc/nn/checkpoint.hpp"
#include "afloc/nn/optim.hpp"

namespace afloc {

using nn::LayerSpec;
using nn::Mode;
using nn::Tensor;

void HyperParams::validate() const {
  if (!(lr > 0) || !(c > 0) || bs < 1 || f_d < 1 || z_dim < 1 || iterations < 0)
    fail(ErrorCode::InvalidArgument, "hyperparameters out of range");
  if (image_size < 8 || !std::has_single_bit(static_cast<unsigned>(image_size)))
    fail(ErrorCode::InvalidArgument, "GAN image size must be a power of two >= 8");
  if (base_channels < 0) fail(ErrorCode::InvalidArgument, "base channel count must be >= 0");
}

int HyperParams::base() const {
  if (base_channels > 0) return base_channels;
  return image_size >= 256 ? 64 : 16;
}

// ---------------------------------------------------------------------------

void NormCalibration::freeze(std::span<const double> scores) {
  if (frozen_) fail(ErrorCode::CalibrationFrozen, "calibration is already frozen");
  if (scores.size() < 2) fail(ErrorCode::DegenerateCalibration, "calibration needs at least two scores");
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  if (!std::isfinite(*lo) || !std::isfinite(*hi))
    fail(ErrorCode::NonFiniteLoss, "non-finite critic score during calibration");
  if (*hi - *lo < kMinSpan)
    fail(ErrorCode::DegenerateCalibration, "first-batch critic scores span less than 1e-12");
  d_min_ = *lo;
  d_max_ = *hi;
  frozen_ = true;
}

NormCalibration NormCalibration::restore(double d_min, double d_max) {
  NormCalibration c;
  if (!(d_max - d_min >= kMinSpan)) fail(ErrorCode::DegenerateCalibration, "restored calibration is degenerate");
  c.d_min_ = d_min;
  c.d_max_ = d_max;
  c.frozen_ = true;
  return c;
}

double d_norm(double score, const NormCalibration& calib) {
  if (!calib.frozen()) fail(ErrorCode::DegenerateCalibration, "d_norm before calibration");
  if (score <= calib.d_min()) return 0.0;
  if (score >= calib.d_max()) return 1.0;
  return std::clamp((score - calib.d_min()) / (calib.d_max() - calib.d_min()), 0.0, 1.0);
}

double d_norm_grad(double score, const NormCalibration& calib) {
  if (!calib.frozen()) fail(ErrorCode::DegenerateCalibration, "d_norm before calibration");
  if (score < calib.d_min() || score > calib.d_max()) return 0.0;
  return 1.0 / (calib.d_max() - calib.d_min());
}

// ---------------------------------------------------------------------------

namespace {

int upsampling_stages(int image_size) { return std::countr_zero(static_cast<unsigned>(image_size)) - 2; }

}  // namespace

std::vector<LayerSpec> generator_specs(const HyperParams& hp) {
  hp.validate();
  const int stages = upsampling_stages(hp.image_size);
  int ch = 8 * hp.base();
  std::vector<LayerSpec> specs;
  specs.push_back(LayerSpec::fully_connected(hp.z_dim, {ch, 4, 4}));
  specs.push_back(LayerSpec::batch_norm(ch));
  specs.push_back(LayerSpec::relu());
  for (int s = 0; s < stages; ++s) {
    const bool last = s + 1 == stages;
    const int out = last ? kMapChannels : std::max(1, ch / 2);
    specs.push_back(LayerSpec::conv2d_transpose(ch, out, 4, 2, 1));
    if (last) {
      specs.push_back(LayerSpec::tanh());
    } else {
      specs.push_back(LayerSpec::batch_norm(out));
      specs.push_back(LayerSpec::relu());
    }
    ch = out;
  }
  return specs;
}

std::vector<LayerSpec> discriminator_specs(const HyperParams& hp) {
  hp.validate();
  const int stages = upsampling_stages(hp.image_size);
  const int top = 8 * hp.base();
  int in = kMapChannels;
  std::vector<LayerSpec> specs;
  for (int s = 0; s < stages; ++s) {
    const int out = std::max(1, top >> (stages - 1 - s));
    specs.push_back(LayerSpec::conv2d(in, out, 4, 2, 1));
    if (s > 0) specs.push_back(LayerSpec::batch_norm(out));
    specs.push_back(LayerSpec::leaky_relu(0.2));
    in = out;
  }
  specs.push_back(LayerSpec::fully_connected(in * 4 * 4, {1}));
  return specs;
}

GanModel make_gan(const HyperParams& hp, RpId rp_id, std::uint64_t seed) {
  GanModel m;
  m.rp_id = rp_id;
  m.hp = hp;
  m.generator = nn::Network<float>(generator_specs(hp));
  m.discriminator = nn::Network<float>(discriminator_specs(hp));
  nn::initialize(m.generator, derive_seed({seed, stream::kGanInit, 0}));
  nn::initialize(m.discriminator, derive_seed({seed, stream::kGanInit, 1}));
  return m;
}

Tensor<float> sample_noise(int n, int z_dim, Rng& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor<float> z({n, z_dim});
  for (nn::Index i = 0; i < z.size(); ++i) z[i] = u(rng);
  return z;
}

Tensor<float> generator_forward(GanModel& model, const Tensor<float>& z, Mode mode) {
  if (z.rank() != 2 || z.dim(1) != model.hp.z_dim)
    fail(ErrorCode::ShapeMismatch, "noise must have shape (n, " + std::to_string(model.hp.z_dim) + ")");
  return model.generator.forward(z, mode);
}

std::vector<double> discriminator_forward(GanModel& model, const Tensor<float>& images, Mode mode) {
  const int r = model.hp.image_size;
  if (images.rank() != 4 || images.dim(1) != kMapChannels || images.dim(2) != r || images.dim(3) != r)
    fail(ErrorCode::ShapeMismatch, "critic expects (n, 3, " + std::to_string(r) + ", " + std::to_string(r) +
                                       ") images, got " + nn::shape_string(images.shape()));
  const Tensor<float> s = model.discriminator.forward(images, mode);
  std::vector<double> out(static_cast<std::size_t>(s.size()));
  for (nn::Index i = 0; i < s.size(); ++i) out[static_cast<std::size_t>(i)] = s[i];
  return out;
}

NormCalibration calibrate_first_batch(GanModel& model, const Tensor<float>& first_batch, Mode mode) {
  if (model.calib.frozen()) fail(ErrorCode::CalibrationFrozen, "calibration is already frozen");
  if (first_batch.batch() < 2) fail(ErrorCode::DegenerateCalibration, "calibration batch needs >= 2 images");
  const auto scores = discriminator_forward(model, first_batch, mode);
  model.calib.freeze(scores);
  return model.calib;
}

Tensor<float> maps_to_tensor(std::span<const FeatureMap* const> maps) {
  if (maps.empty()) fail(ErrorCode::InsufficientData, "no maps to stack");
  const int r = maps.front()->resolution;
  Tensor<float> t({static_cast<nn::Index>(maps.size()), kMapChannels, r, r});
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i]->resolution != r) fail(ErrorCode::ResolutionMismatch, "maps differ in resolution");
    t.as_matrix().row(static_cast<nn::Index>(i)) = to_unit_chw<float>(*maps[i]).transpose();
  }
  return t;
}

Tensor<float> maps_to_tensor(std::span<const FeatureMap> maps) {
  std::vector<const FeatureMap*> ptrs;
  for (const auto& m : maps) ptrs.push_back(&m);
  return maps_to_tensor(std::span<const FeatureMap* const>(ptrs));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> sample_batch(std::size_t n, int bs, Rng& rng) {
  std::vector<std::size_t> idx;
  if (n < static_cast<std::size_t>(bs)) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (int i = 0; i < bs; ++i) idx.push_back(pick(rng));
    return idx;
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (int i = 0; i < bs; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), n - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[pick(rng)]);
  }
  all.resize(static_cast<std::size_t>(bs));
  return all;
}

Tensor<float> gather(const Tensor<float>& all, const std::vector<std::size_t>& idx) {
  nn::Shape shape = all.shape();
  shape[0] = static_cast<nn::Index>(idx.size());
  Tensor<float> out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.as_matrix().row(static_cast<nn::Index>(i)) = all.as_matrix().row(static_cast<nn::Index>(idx[i]));
  return out;
}

/// Gradient seed of sign * mean(d_norm(scores)) w.r.t. raw scores; also
/// returns the mean normalised score and counts clamped entries.
struct SeedInfo {
  Tensor<float> seed;
  double mean_norm = 0.0;
  int clamped = 0;
  bool finite = true;
};

SeedInfo normalised_seed(const std::vector<double>& scores, const NormCalibration& calib, double sign) {
  SeedInfo info{Tensor<float>({static_cast<nn::Index>(scores.size()), 1}), 0.0, 0, true};
  const double inv_n = 1.0 / static_cast<double>(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    if (!std::isfinite(s)) info.finite = false;
    info.mean_norm += d_norm(s, calib) * inv_n;
    if (s < calib.d_min() || s > calib.d_max()) ++info.clamped;
    info.seed[static_cast<nn::Index>(i)] = static_cast<float>(sign * inv_n * d_norm_grad(s, calib));
  }
  return info;
}

void abort_non_finite(GanModel& model, const TrainOptions& options, int iteration) {
  if (options.failure_checkpoint) {
    try {
      save_gan(model, *options.failure_checkpoint);
    } catch (const Error&) {
    }
  }
  fail(ErrorCode::NonFiniteLoss, "non-finite critic output at iteration " + std::to_string(iteration));
}

}  // namespace

TrainResult train(std::span<const FeatureMap> maps, const HyperParams& hp, std::uint64_t seed,
                  const TrainOptions& options) {
  hp.validate();
  if (maps.empty()) fail(ErrorCode::InsufficientData, "no maps to train on");
  for (const auto& m : maps)
    if (m.resolution != hp.image_size)
      fail(ErrorCode::ResolutionMismatch, "map resolution " + std::to_string(m.resolution) +
                                              " differs from GAN image size " + std::to_string(hp.image_size));

  TrainResult result{make_gan(hp, maps.front().rp_id, seed), {}};
  GanModel& model = result.model;
  const Tensor<float> real_all = maps_to_tensor(maps);
  Rng rng(derive_seed({seed, stream::kGanTrain}));

  nn::RmsPropState<float> d_state(static_cast<float>(hp.rms_decay), static_cast<float>(hp.rms_epsilon));
  nn::RmsPropState<float> g_state(static_cast<float>(hp.rms_decay), static_cast<float>(hp.rms_epsilon));
  const auto d_params = model.discriminator.params();
  const auto g_params = model.generator.params();
  const auto d_count = static_cast<double>(model.discriminator.parameter_count());
  const auto lr = static_cast<float>(hp.lr);
  const auto clip = static_cast<float>(hp.c);
  auto notify = [&](TrainEventKind kind, int it) {
    if (options.observer) options.observer(TrainEvent{kind, it}, model);
  };

  for (int it = 0; it < hp.iterations; ++it) {
    TelemetryRow row;
    row.iteration = it;
    int clamped = 0, scored = 0;

    for (int t = 0; t < hp.f_d; ++t) {
      model.discriminator.zero_grad();
      const Tensor<float> x = gather(real_all, sample_batch(maps.size(), hp.bs, rng));
      const Tensor<float> z = sample_noise(hp.bs, hp.z_dim, rng);

      const auto real_scores = discriminator_forward(model, x, Mode::Train);
      if (!model.calib.frozen()) {
        for (double s : real_scores)
          if (!std::isfinite(s)) abort_non_finite(model, options, it);
        model.calib.freeze(real_scores);
        notify(TrainEventKind::Calibrated, it);
      }
      const SeedInfo real = normalised_seed(real_scores, model.calib, +1.0);
      if (!real.finite) abort_non_finite(model, options, it);
      model.discriminator.backward(real.seed);

      const Tensor<float> fake = model.generator.forward(z, Mode::Train);
      const auto fake_scores = discriminator_forward(model, fake, Mode::Train);
      const SeedInfo gen = normalised_seed(fake_scores, model.calib, -1.0);
      if (!gen.finite) abort_non_finite(model, options, it);
      model.discriminator.backward(gen.seed);

      // w <- w + LR * RMSProp(w, d_w); w <- clip(w, -c, c)
      nn::rmsprop_step(d_params, d_state, lr, nn::StepDirection::Ascend);
      const auto n_clipped = nn::clip_weights(d_params, clip);
      ++model.discriminator_updates;

      row.d_loss = real.mean_norm - gen.mean_norm;
      row.clip_fraction += static_cast<double>(n_clipped) / d_count / hp.f_d;
      clamped += real.clamped + gen.clamped;
      scored += 2 * hp.bs;
      notify(TrainEventKind::DiscriminatorUpdate, it);
    }

    // g_theta <- -grad_theta mean f(g_theta(z)); theta <- theta - LR * RMSProp(theta, g_theta)
    model.generator.zero_grad();
    const Tensor<float> z = sample_noise(hp.bs, hp.z_dim, rng);
    const Tensor<float> fake = model.generator.forward(z, Mode::Train);
    const auto scores = discriminator_forward(model, fake, Mode::Train);
    const SeedInfo gen = normalised_seed(scores, model.calib, +1.0);
    if (!gen.finite) abort_non_finite(model, options, it);
    Tensor<float> grad_fake = model.discriminator.backward(gen.seed);
    grad_fake.data() = -grad_fake.data();
    model.generator.backward(grad_fake);
    nn::rmsprop_step(g_params, g_state, lr, nn::StepDirection::Descend);
    ++model.generator_updates;

    const double gen_mean = gen.mean_norm;
    clamped += gen.clamped;
    scored += hp.bs;
    row.g_loss = -gen_mean;
    row.clamp_fraction = static_cast<double>(clamped) / scored;
    if (!std::isfinite(row.d_loss) || !std::isfinite(row.g_loss)) abort_non_finite(model, options, it);
    result.telemetry.push_back(row);
    notify(TrainEventKind::GeneratorUpdate, it);
  }
  model.discriminator.zero_grad();
  model.generator.zero_grad();
  return result;
}

std::vector<FeatureMap> generate_maps(GanModel& model, int count, std::uint64_t seed, int first_draw_index) {
  std::vector<FeatureMap> out;
  if (count <= 0) return out;
  Rng rng(derive_seed({seed, stream::kGanGenerate, static_cast<std::uint64_t>(model.rp_id)}));
  const int r = model.hp.image_size;
  const int chunk = std::max(1, model.hp.bs);
  for (int done = 0; done < count; done += chunk) {
    const int n = std::min(chunk, count - done);
    const Tensor<float> z = sample_noise(n, model.hp.z_dim, rng);
    const Tensor<float> img = generator_forward(model, z, Mode::Inference);
    for (int i = 0; i < n; ++i)
      out.push_back(from_unit_chw(img.as_matrix().row(i).transpose(), r, model.rp_id, Provenance::Generated,
                                  first_draw_index + done + i));
  }
  return out;
}

double discriminator_accuracy(GanModel& model, std::span<const FeatureMap> real, int n_fake, std::uint64_t seed) {
  if (real.empty() || n_fake < 1) fail(ErrorCode::InsufficientData, "accuracy needs real and generated samples");
  int correct = 0;
  for (double s : discriminator_forward(model, maps_to_tensor(real), Mode::Inference))
    correct += d_norm(s, model.calib) >= 0.5 ? 1 : 0;
  Rng rng(derive_seed({seed, stream::kGanGenerate, 0xacc}));
  const Tensor<float> fake = generator_forward(model, sample_noise(n_fake, model.hp.z_dim, rng), Mode::Inference);
  for (double s : discriminator_forward(model, fake, Mode::Inference))
    correct += d_norm(s, model.calib) < 0.5 ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(real.size() + static_cast<std::size_t>(n_fake));
}

// ---------------------------------------------------------------------------

void save_gan(const GanModel& model, const std::filesystem::path& path) {
  GanModel copy = model;
  std::vector<nn::NamedTensor> tensors;
  nn::export_state(copy.generator, "generator.", tensors);
  nn::export_state(copy.discriminator, "discriminator.", tensors);
  nn::save_checkpoint(std::filesystem::path(path).concat(".ckpt"), tensors);

  const auto& hp = model.hp;
  nlohmann::json meta = {
      {"format", "afloc-gan"},
      {"version", 1},
      {"rp_id", model.rp_id},
      {"hyperparams",
       {{"lr", hp.lr}, {"c", hp.c}, {"bs", hp.bs}, {"f_d", hp.f_d}, {"z_dim", hp.z_dim},
        {"iterations", hp.iterations}, {"image_size", hp.image_size}, {"base_channels", hp.base()},
        {"rms_decay", hp.rms_decay}, {"rms_epsilon", hp.rms_epsilon}}},
      {"calibration", {{"frozen", model.calib.frozen()}, {"d_min", model.calib.d_min()}, {"d_max", model.calib.d_max()}}},
      {"discriminator_updates", model.discriminator_updates},
      {"generator_updates", model.generator_updates},
  };
  std::ofstream out(std::filesystem::path(path).concat(".json"));
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string() + ".json");
  out << meta.dump(2) << '\n';
}

GanModel load_gan(const std::filesystem::path& path) {
  std::ifstream in(std::filesystem::path(path).concat(".json"));
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string() + ".json");
  GanModel model;
  try {
    nlohmann::json meta;
    in >> meta;
    const auto& h = meta.at("hyperparams");
    HyperParams hp;
    hp.lr = h.at("lr");
    hp.c = h.at("c");
    hp.bs = h.at("bs");
    hp.f_d = h.at("f_d");
    hp.z_dim = h.at("z_dim");
    hp.iterations = h.at("iterations");
    hp.image_size = h.at("image_size");
    hp.base_channels = h.at("base_channels");
    hp.rms_decay = h.at("rms_decay");
    hp.rms_epsilon = h.at("rms_epsilon");
    model = make_gan(hp, meta.at("rp_id").get<int>(), 0);
    const auto& c = meta.at("calibration");
    if (c.at("frozen").get<bool>())
      model.calib = NormCalibration::restore(c.at("d_min").get<double>(), c.at("d_max").get<double>());
    model.discriminator_updates = meta.at("discriminator_updates");
    model.generator_updates = meta.at("generator_updates");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("GAN metadata: ") + e.what());
  }
  const auto tensors = nn::load_checkpoint(std::filesystem::path(path).concat(".ckpt"));
  nn::import_state(model.generator, "generator.", tensors);
  nn::import_state(model.discriminator, "discriminator.", tensors);
  return model;
}

void write_telemetry_csv(const std::filesystem::path& path, std::span<const TelemetryRow> rows) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.precision(9);
  out << "iteration,d_loss,g_loss,clamp_fraction,clip_fraction\n";
  for (const auto& r : rows)
    out << r.iteration << ',' << r.d_loss << ',' << r.g_loss << ',' << r.clamp_fraction << ',' << r.clip_fraction << '\n';
}

}  // namespace afloc
