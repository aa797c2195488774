#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "afloc/errors.hpp"
#include "afloc/localization.hpp"

using namespace afloc;

namespace {

RpGrid unit_square_grid() {
  RpGrid g;
  g.spacing = 1.0;
  g.points = {{1, 0, 0}, {2, 0, 1}, {3, 1, 0}, {4, 1, 1}, {5, 2, 0}, {6, 2, 1}};
  return g;
}

// Convex hull by monotone chain; `p` inside (or on) it.
bool in_hull(std::vector<Eigen::Vector2d> pts, const Eigen::Vector2d& p) {
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.x() != b.x() ? a.x() < b.x() : a.y() < b.y(); });
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a - o).x() * (b - o).y() - (a - o).y() * (b - o).x();
  };
  std::vector<Eigen::Vector2d> h;
  for (int pass = 0; pass < 2; ++pass) {
    const std::size_t start = h.size();
    for (const auto& q : pts) {
      while (h.size() >= start + 2 && cross(h[h.size() - 2], h.back(), q) <= 0) h.pop_back();
      h.push_back(q);
    }
    h.pop_back();
    std::reverse(pts.begin(), pts.end());
  }
  if (h.size() < 3) {
    // Degenerate hull: segment containment.
    const auto& a = pts.front();
    const auto& b = pts.back();
    return std::abs(cross(a, b, p)) < 1e-9 && (p - a).dot(p - b) <= 1e-9;
  }
  for (std::size_t i = 0; i < h.size(); ++i)
    if (cross(h[i], h[(i + 1) % h.size()], p) < -1e-9) return false;
  return true;
}

CsiSampleSet flat_set(RpId id, int n, double amp, double jitter, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, jitter);
  CsiSampleSet s{id, {}};
  for (int i = 0; i < n; ++i) {
    CsiRecord r;
    r.meta = {1, 3, 30, 1, 0.0};
    r.h.resize(3, 30);
    for (Eigen::Index m = 0; m < 3; ++m)
      for (Eigen::Index k = 0; k < 30; ++k) r.h(m, k) = {amp * (1 + 0.3 * m) + g(rng), 0.0};
    s.records.push_back(r);
  }
  return s;
}

}  // namespace

TEST_CASE("top-4 centroid") {
  const RpGrid g = unit_square_grid();
  Eigen::VectorXd p(6);
  p << 0.3, 0.25, 0.2, 0.15, 0.05, 0.05;
  const Eigen::Vector2d c = top4_centroid(p, g);
  CHECK(c.x() == 0.5);
  CHECK(c.y() == 0.5);

  // All mass on one RP: the three zero-probability picks are the lowest ids.
  Eigen::VectorXd one = Eigen::VectorXd::Zero(6);
  one(5) = 1.0;
  const auto ids = top4(one);
  CHECK(ids == std::array<RpId, 4>{6, 1, 2, 3});
  const Eigen::Vector2d c6 = top4_centroid(one, g);
  CHECK(c6.x() == doctest::Approx((2 + 0 + 0 + 1) / 4.0));
  CHECK(c6.y() == doctest::Approx((1 + 0 + 1 + 0) / 4.0));

  CHECK_THROWS_AS(top4(Eigen::VectorXd::Constant(3, 1.0 / 3)), Error);
}

TEST_CASE("top-4 centroid stays in the hull of its picks") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0, 1);
  const RpGrid g = RpGrid::regular(7, 7, 1.0);
  for (int t = 0; t < 10000; ++t) {
    Eigen::VectorXd p(49);
    for (int i = 0; i < 49; ++i) p(i) = u(rng);
    if (t % 10 == 0) p(t % 49) = p((t + 1) % 49);  // some ties
    p /= p.sum();
    // Independent pick: sort ids by (-p, id).
    std::vector<int> order(49);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p(a) > p(b); });
    const auto ids = top4(p);
    std::vector<Eigen::Vector2d> pts;
    for (int i = 0; i < 4; ++i) {
      REQUIRE(ids[static_cast<std::size_t>(i)] == order[static_cast<std::size_t>(i)] + 1);
      const auto& q = g.at(ids[static_cast<std::size_t>(i)]);
      pts.emplace_back(q.x, q.y);
    }
    REQUIRE(in_hull(pts, top4_centroid(p, g)));
  }
}

TEST_CASE("report arithmetic and invariants") {
  auto r = make_report({1, 1, 2});
  CHECK(r.mean == doctest::Approx(4.0 / 3.0));
  CHECK(r.min == 1);
  CHECK(r.max == 2);
  r = make_report({0.0});
  CHECK(r.mean == 0.0);
  for (double q : r.range_probs) CHECK(q == 1.0);
  CHECK_THROWS_AS(make_report({}), Error);

  std::mt19937_64 rng(3);
  std::exponential_distribution<double> e(0.8);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> errs(1 + rng() % 60);
    for (auto& x : errs) x = e(rng);
    const auto rep = make_report(errs);
    for (std::size_t i = 1; i < rep.cdf.size(); ++i) {
      REQUIRE(rep.cdf[i].first >= rep.cdf[i - 1].first);
      REQUIRE(rep.cdf[i].second > rep.cdf[i - 1].second);
    }
    REQUIRE(rep.cdf.back().second == 1.0);
    REQUIRE(rep.range_probs[0] <= rep.range_probs[1]);
    REQUIRE(rep.range_probs[1] <= rep.range_probs[2]);
    for (int k = 0; k < 3; ++k) {
      const auto cnt = std::count_if(errs.begin(), errs.end(), [&](double x) { return x <= k + 1.0; });
      REQUIRE(rep.range_probs[static_cast<std::size_t>(k)] == doctest::Approx(double(cnt) / errs.size()));
    }
    REQUIRE(rep.min <= rep.mean);
    REQUIRE(rep.mean <= rep.max);
  }
}

TEST_CASE("ADNOI noise moments") {
  AmplitudeBlock block;
  block.links = {Eigen::MatrixXd::Zero(1000, 100)};
  const std::vector<Eigen::RowVectorXd> spread = {Eigen::RowVectorXd::Constant(100, 2.0)};
  add_amplitude_noise(block, spread, 1.5, 42);
  const auto& v = block.links[0];
  const double sigma = 3.0;
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().sum() / (v.size() - 1));
  CHECK(std::abs(mean) < 0.01 * sigma);
  CHECK(sd / sigma > 0.99);
  CHECK(sd / sigma < 1.01);
}

TEST_CASE("ADNOI augmentation counts and zero-noise identity") {
  const RpGrid g = RpGrid::regular(2, 1, 1.0);
  std::vector<CsiSampleSet> sets = {flat_set(1, 150, 5, 1, 1), flat_set(2, 150, 9, 1, 2)};
  FeatureMapConfig cfg;
  cfg.resolution = 32;
  cfg.maps_per_rp = 10;
  cfg.amp_max = compute_amp_max(sets);
  const FingerprintDb db = build_initial_db(sets, g, cfg);

  const auto same = adnoi_augment(db, sets, 1.0, 0.0, 5);
  CHECK(same.maps.at(1).size() == 20);
  for (RpId id : {1, 2})
    for (int j = 0; j < 10; ++j) {
      const auto& a = same.maps.at(id)[static_cast<std::size_t>(10 + j)];
      CHECK(a.provenance == Provenance::NoiseAugmented);
      CHECK(a.pixels == db.maps.at(id)[static_cast<std::size_t>(j)].pixels);
    }
  const auto twice = adnoi_augment(db, sets, 2.0, 1.0, 5);
  CHECK(twice.maps.at(2).size() == 30);
  CHECK(twice.maps.at(2)[10].pixels != db.maps.at(2)[0].pixels);
  // Spread oracle for one entry.
  const auto sp = amplitude_spread(sets[0]);
  double s = 0, s2 = 0;
  for (const auto& r : sets[0].records) {
    s += std::abs(r.h(1, 4));
    s2 += std::norm(r.h(1, 4));
  }
  const double n = 150;
  CHECK(sp[1](4) == doctest::Approx(std::sqrt(s2 / n - (s / n) * (s / n))).epsilon(1e-9));
}

TEST_CASE("classifier on a separable toy set") {
  const RpGrid g = RpGrid::regular(2, 1, 1.0);
  std::vector<CsiSampleSet> sets = {flat_set(1, 150, 3, 0.3, 1), flat_set(2, 150, 8, 0.3, 2)};
  FeatureMapConfig cfg;
  cfg.resolution = 32;
  cfg.maps_per_rp = 30;
  cfg.rows_per_map = 20;
  cfg.amp_max = compute_amp_max(sets);
  const FingerprintDb db = build_initial_db(sets, g, cfg);
  ClassifierConfig cc;
  cc.conv_widths = {4, 8};
  cc.fc_width = 16;
  cc.epochs = 50;
  cc.patience = 50;
  cc.seed = 3;
  auto res = train_classifier(db, cc);
  double best_train = 0;
  for (const auto& e : res.history) best_train = std::max(best_train, e.train_accuracy);
  CHECK(best_train == 1.0);
  CHECK(res.model.class_count == 2);
  for (RpId id : {1, 2}) {
    const Eigen::VectorXd p = classify(res.model, db.maps.at(id)[0]);
    CHECK(p.sum() == doctest::Approx(1.0));
    Eigen::Index arg;
    p.maxCoeff(&arg);
    CHECK(arg + 1 == id);
  }
  FeatureMap noise{1, 32, Provenance::Real, 0, std::vector<std::uint8_t>(32 * 32 * 3)};
  std::mt19937_64 rng(1);
  for (auto& px : noise.pixels) px = static_cast<std::uint8_t>(rng() & 0xff);
  const Eigen::VectorXd pn = classify(res.model, noise);
  CHECK(pn.allFinite());
  CHECK((pn.array() >= 0).all());
  CHECK(pn.sum() == doctest::Approx(1.0));

  FeatureMap wrong = noise;
  wrong.resolution = 16;
  CHECK_THROWS_AS(classify(res.model, wrong), Error);

  // Persistence keeps predictions.
  const auto path = std::filesystem::temp_directory_path() / "afloc_cls";
  save_classifier(res.model, path);
  AfCnnModel back = load_classifier(path);
  CHECK((classify(back, noise) - pn).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("shuffled labels give chance-level validation accuracy") {
  const int m = 4;
  const RpGrid g = RpGrid::regular(m, 1, 1.0);
  std::vector<CsiSampleSet> sets;
  for (int i = 0; i < m; ++i) sets.push_back(flat_set(i + 1, 150, 2 + 2.0 * i, 0.5, 10 + i));
  FeatureMapConfig cfg;
  cfg.resolution = 32;
  cfg.maps_per_rp = 100;
  cfg.rows_per_map = 20;
  cfg.amp_max = compute_amp_max(sets);
  const FingerprintDb db = build_initial_db(sets, g, cfg);
  std::vector<const FeatureMap*> maps;
  std::vector<int> labels;
  for (const auto& [id, v] : db.maps)
    for (const auto& fm : v) {
      maps.push_back(&fm);
      labels.push_back(id - 1);
    }
  std::mt19937_64 rng(8);
  std::shuffle(labels.begin(), labels.end(), rng);
  ClassifierConfig cc;
  cc.conv_widths = {4, 8};
  cc.fc_width = 16;
  cc.epochs = 8;
  cc.patience = 8;
  cc.validation_fraction = 0.5;
  const auto res = train_classifier(maps, labels, m, cc);
  const double last = res.history.back().validation_accuracy;
  CHECK(last > 1.0 / m - 0.1);
  CHECK(last < 1.0 / m + 0.1);
}

TEST_CASE("evaluate guards") {
  AfCnnModel model;
  model.class_count = 4;
  CHECK_THROWS_AS(evaluate(model, {}, RpGrid::regular(2, 2, 1.0)), Error);
}
