#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "afloc/afdcgan.hpp"
#include "afloc/errors.hpp"

using namespace afloc;

namespace {

std::vector<FeatureMap> random_maps(int n, int res, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<FeatureMap> out;
  for (int i = 0; i < n; ++i) {
    FeatureMap m{7, res, Provenance::Real, i, std::vector<std::uint8_t>(static_cast<std::size_t>(res * res * 3))};
    for (auto& p : m.pixels) p = (rng() % 5 == 0) ? 255 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

HyperParams small_hp() {
  HyperParams hp;
  hp.image_size = 8;
  hp.base_channels = 2;
  hp.bs = 4;
  hp.z_dim = 6;
  hp.iterations = 5;
  hp.f_d = 3;
  return hp;
}

double max_abs(const std::vector<nn::Param<float>*>& ps) {
  double m = 0;
  for (auto* p : ps) m = std::max(m, static_cast<double>(p->value.data().cwiseAbs().maxCoeff()));
  return m;
}

}  // namespace

TEST_CASE("d_norm") {
  const auto c = NormCalibration::restore(-2, 3);
  CHECK(d_norm(-2, c) == 0.0);
  CHECK(d_norm(3, c) == 1.0);
  CHECK(d_norm(0.5, c) == 0.5);
  CHECK(d_norm(7, c) == 1.0);
  CHECK(d_norm(-9, c) == 0.0);
  CHECK(d_norm(0, c) == doctest::Approx(0.4));
  CHECK(d_norm_grad(0, c) == doctest::Approx(0.2));
  CHECK(d_norm_grad(3.5, c) == 0.0);
  CHECK(d_norm_grad(-2.5, c) == 0.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10, 10);
  double prev = -1;
  std::vector<double> xs(1000);
  for (auto& x : xs) x = u(rng);
  std::sort(xs.begin(), xs.end());
  for (double x : xs) {
    const double v = d_norm(x, c);
    REQUIRE(v >= prev);
    REQUIRE(v >= 0);
    REQUIRE(v <= 1);
    prev = v;
  }

  NormCalibration f;
  CHECK_THROWS_AS(d_norm(0, f), Error);
  const std::vector<double> s = {-2, 0, 3};
  f.freeze(s);
  CHECK(f.d_min() == -2);
  CHECK(f.d_max() == 3);
  try {
    f.freeze(s);
    FAIL("second freeze");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CalibrationFrozen);
  }
  NormCalibration g;
  const std::vector<double> flat = {1, 1, 1};
  try {
    g.freeze(flat);
    FAIL("degenerate");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateCalibration);
  }
}

TEST_CASE("network shapes") {
  HyperParams hp;
  hp.image_size = 32;
  hp.base_channels = 4;
  GanModel m = make_gan(hp, 3, 1);
  Rng rng(2);
  const auto z = sample_noise(49, hp.z_dim, rng);
  CHECK(z.data().minCoeff() >= -1);
  CHECK(z.data().maxCoeff() <= 1);
  const auto x = generator_forward(m, z);
  CHECK(x.shape() == nn::Shape{49, 3, 32, 32});
  CHECK(x.data().cwiseAbs().maxCoeff() <= 1.0f);
  CHECK(discriminator_forward(m, x).size() == 49);

  // Final deconvolution maps 16x16 to 32x32; at 256 px it is 128 -> 256.
  auto final_deconv_input = [](const HyperParams& h) {
    nn::Index side = 4;
    nn::Index last = 0;
    for (const auto& s : generator_specs(h))
      if (s.kind == nn::LayerKind::Conv2dTranspose) {
        last = side;
        side = s.stride * (side - 1) + s.kernel - 2 * s.padding;
      }
    return std::pair{last, side};
  };
  CHECK(final_deconv_input(hp) == std::pair<nn::Index, nn::Index>{16, 32});
  HyperParams big;
  CHECK(big.image_size == 256);
  CHECK(final_deconv_input(big) == std::pair<nn::Index, nn::Index>{128, 256});
  CHECK(big.base() == 64);

  CHECK_THROWS_AS(generator_forward(m, nn::Tensor<float>({2, 5})), Error);
  CHECK_THROWS_AS(discriminator_forward(m, nn::Tensor<float>({2, 3, 16, 16})), Error);
  HyperParams bad = hp;
  bad.image_size = 48;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("critic behaviour") {
  HyperParams hp = small_hp();
  GanModel m = make_gan(hp, 1, 4);
  nn::Tensor<float> zeros({3, 3, 8, 8});
  for (double s : discriminator_forward(m, zeros)) CHECK(std::isfinite(s));

  const auto maps = random_maps(6, 8, 3);
  const auto x = maps_to_tensor(maps);
  const auto s = discriminator_forward(m, x);
  std::vector<FeatureMap> rev(maps.rbegin(), maps.rend());
  const auto sr = discriminator_forward(m, maps_to_tensor(rev));
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(sr[s.size() - 1 - i] == doctest::Approx(s[i]).epsilon(1e-6));

  const auto c = calibrate_first_batch(m, x, nn::Mode::Inference);
  CHECK(c.d_min() == *std::min_element(s.begin(), s.end()));
  CHECK(c.d_max() == *std::max_element(s.begin(), s.end()));
  CHECK_THROWS_AS(calibrate_first_batch(m, x), Error);
}

TEST_CASE("hand-computed two-layer critic") {
  // conv 2x2 stride 2 (3 -> 1 channel) on 4x4, leaky relu, linear to one score.
  nn::Network<double> net({nn::LayerSpec::conv2d(3, 1, 2, 2, 0), nn::LayerSpec::leaky_relu(0.2),
                           nn::LayerSpec::fully_connected(4, {1})});
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (std::size_t i = 0; i < net.depth(); ++i)
    for (auto* p : net.layer(i).params())
      for (nn::Index j = 0; j < p->value.size(); ++j) p->value[j] = g(rng);
  auto cw = net.layer(0).params();
  auto fw = net.layer(2).params();
  nn::Tensor<double> x({2, 3, 4, 4});
  for (nn::Index j = 0; j < x.size(); ++j) x[j] = g(rng);
  const auto y = net.forward(x, nn::Mode::Inference);
  for (int n = 0; n < 2; ++n) {
    double score = fw[1]->value[0];
    for (int oy = 0; oy < 2; ++oy)
      for (int ox = 0; ox < 2; ++ox) {
        double a = cw[1]->value[0];
        for (int c = 0; c < 3; ++c)
          for (int ky = 0; ky < 2; ++ky)
            for (int kx = 0; kx < 2; ++kx)
              a += cw[0]->value[((0 * 3 + c) * 2 + ky) * 2 + kx] *
                   x[((n * 3 + c) * 4 + oy * 2 + ky) * 4 + ox * 2 + kx];
        if (a < 0) a *= 0.2;
        score += fw[0]->value[oy * 2 + ox] * a;
      }
    CHECK(y[n] == doctest::Approx(score).epsilon(1e-12));
  }
}

TEST_CASE("training follows the schedule") {
  const HyperParams hp = small_hp();
  const auto maps = random_maps(10, 8, 1);
  std::vector<TrainEventKind> events;
  int calibrations = 0;
  double d_min = 0, d_max = 0;
  bool clip_ok = true, anchors_ok = true;
  TrainOptions opt;
  opt.observer = [&](const TrainEvent& e, GanModel& m) {
    events.push_back(e.kind);
    if (e.kind == TrainEventKind::Calibrated) {
      ++calibrations;
      d_min = m.calib.d_min();
      d_max = m.calib.d_max();
    }
    if (e.kind == TrainEventKind::DiscriminatorUpdate && max_abs(m.discriminator.params()) > hp.c * (1 + 1e-7))
      clip_ok = false;
    if (m.calib.frozen() && (m.calib.d_min() != d_min || m.calib.d_max() != d_max)) anchors_ok = false;
  };
  auto res = train(maps, hp, 9, opt);
  CHECK(calibrations == 1);
  CHECK(clip_ok);
  CHECK(anchors_ok);
  CHECK(d_norm(d_min, res.model.calib) == 0.0);
  CHECK(d_norm(d_max, res.model.calib) == 1.0);
  std::vector<TrainEventKind> expect = {TrainEventKind::Calibrated};
  for (int it = 0; it < hp.iterations; ++it) {
    for (int t = 0; t < hp.f_d; ++t) expect.push_back(TrainEventKind::DiscriminatorUpdate);
    expect.push_back(TrainEventKind::GeneratorUpdate);
  }
  CHECK(events.size() == expect.size());
  // Calibration fires between the first real forward and the first update.
  CHECK(std::equal(expect.begin(), expect.end(), events.begin(), events.end()));
  CHECK(res.model.discriminator_updates == hp.iterations * hp.f_d);
  CHECK(res.model.generator_updates == hp.iterations);
  REQUIRE(res.telemetry.size() == static_cast<std::size_t>(hp.iterations));
  for (const auto& row : res.telemetry) {
    CHECK(row.clamp_fraction >= 0);
    CHECK(row.clamp_fraction <= 1);
    CHECK(row.clip_fraction >= 0);
    CHECK(row.clip_fraction <= 1);
  }

  // Deterministic given the seed; another seed differs.
  auto again = train(maps, hp, 9);
  auto other = train(maps, hp, 10);
  const auto a = generate_maps(res.model, 3, 1);
  CHECK(a == generate_maps(again.model, 3, 1));
  CHECK(a != generate_maps(other.model, 3, 1));

  CHECK_THROWS_AS(train(std::span<const FeatureMap>{}, hp, 1), Error);
  CHECK_THROWS_AS(train(random_maps(4, 16, 1), hp, 1), Error);
}

TEST_CASE("generation and persistence") {
  const HyperParams hp = small_hp();
  auto res = train(random_maps(10, 8, 2), hp, 3);
  GanModel& m = res.model;
  CHECK(generate_maps(m, 0, 1).empty());
  const auto a = generate_maps(m, 5, 1, 10);
  REQUIRE(a.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(a[static_cast<std::size_t>(i)].rp_id == 7);
    CHECK(a[static_cast<std::size_t>(i)].provenance == Provenance::Generated);
    CHECK(a[static_cast<std::size_t>(i)].draw_index == 10 + i);
    CHECK(a[static_cast<std::size_t>(i)].resolution == 8);
  }
  CHECK(a == generate_maps(m, 5, 1, 10));
  CHECK(a != generate_maps(m, 5, 2, 10));

  const auto dir = std::filesystem::temp_directory_path() / "afloc_gan_test";
  std::filesystem::create_directories(dir);
  save_gan(m, dir / "rp7");
  GanModel back = load_gan(dir / "rp7");
  CHECK(back.rp_id == 7);
  CHECK(back.calib.d_min() == m.calib.d_min());
  CHECK(back.calib.d_max() == m.calib.d_max());
  CHECK(back.hp.f_d == hp.f_d);
  CHECK(generate_maps(back, 5, 1, 10) == a);

  const double acc = discriminator_accuracy(m, random_maps(6, 8, 4), 6, 1);
  CHECK(acc >= 0);
  CHECK(acc <= 1);
}
