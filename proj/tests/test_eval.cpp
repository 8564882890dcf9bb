#include <doctest.h>

#include <random>
#include <sstream>

#include "uamd/eval.hpp"

using namespace uamd;

TEST_CASE("metric hand fixtures") {
  SUBCASE("MAE 500 mm / RMSE 707.107 mm") {
    DepthMap gt = DepthMap::zeros(1, 2);
    gt.meters = {10.f, 10.f};
    DepthMap pred = DepthMap::zeros(1, 2);
    pred.meters = {10.f, 11.f};  // errors 0 m and 1 m
    auto m = compute_metrics(pred, gt);
    CHECK(m.mae_mm == doctest::Approx(500.0).epsilon(1e-6));
    CHECK(m.rmse_mm == doctest::Approx(707.10678).epsilon(1e-6));
    CHECK(m.n_valid == 2);
  }
  SUBCASE("iMAE 10 per km") {
    DepthMap gt = DepthMap::zeros(1, 1);
    gt.meters = {100.f};
    DepthMap pred = DepthMap::zeros(1, 1);
    pred.meters = {50.f};  // 1000/100 - 1000/50 = -10 per km
    auto m = compute_metrics(pred, gt);
    CHECK(m.imae_per_km == doctest::Approx(10.0).epsilon(1e-6));
    CHECK(m.irmse_per_km == doctest::Approx(10.0).epsilon(1e-6));
  }
  SUBCASE("perfect prediction scores zero") {
    DepthMap gt = DepthMap::zeros(2, 2);
    gt.meters = {1.f, 2.f, 0.f, 4.f};
    auto m = compute_metrics(gt, gt);
    CHECK(m.mae_mm == 0.0);
    CHECK(m.rmse_mm == 0.0);
    CHECK(m.imae_per_km == 0.0);
    CHECK(m.irmse_per_km == 0.0);
    CHECK(m.n_valid == 3);  // the invalid pixel is excluded
  }
  SUBCASE("all-invalid gt rejected") {
    DepthMap gt = DepthMap::zeros(2, 2);
    CHECK_THROWS_AS(compute_metrics(gt, gt), std::invalid_argument);
  }
  SUBCASE("extent mismatch rejected") {
    DepthMap gt = DepthMap::zeros(2, 2);
    DepthMap pred = DepthMap::zeros(2, 3);
    CHECK_THROWS_AS(compute_metrics(pred, gt), std::invalid_argument);
  }
}

TEST_CASE("RMSE dominates MAE on random fixtures") {
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> d(0.5f, 90.f);
  for (int t = 0; t < 100; ++t) {
    DepthMap gt = DepthMap::zeros(4, 4);
    DepthMap pred = DepthMap::zeros(4, 4);
    for (size_t i = 0; i < 16; ++i) {
      gt.meters[i] = d(rng);
      pred.meters[i] = d(rng);
    }
    auto m = compute_metrics(pred, gt);
    CHECK(m.rmse_mm >= m.mae_mm);
    CHECK(m.irmse_per_km >= m.imae_per_km);
  }
}

TEST_CASE("accumulator merge equals one-pass accumulation") {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> d(1.0, 50.0);
  MetricsAccum whole, a, b;
  for (int i = 0; i < 40; ++i) {
    double gt = d(rng), pred = d(rng);
    whole.add(gt, pred);
    (i < 17 ? a : b).add(gt, pred);
  }
  a.merge(b);
  CHECK(a.report().rmse_mm == doctest::Approx(whole.report().rmse_mm));
  CHECK(a.report().n_valid == whole.report().n_valid);
}

TEST_CASE("failure simulation") {
  auto scene = synth_scene(16, 32, 2, 6, 77, 0.3);
  const auto& s = scene.sample;

  SUBCASE("ImageFull zeroes the right image only, idempotently") {
    auto f = apply_failure(s, {FailureType::ImageFull});
    for (float v : f.right.chw) CHECK(v == 0.f);
    CHECK(f.left.chw == s.left.chw);
    CHECK(f.sparse_left.meters == s.sparse_left.meters);
    CHECK(f.gt.meters == s.gt.meters);
    auto g = apply_failure(f, {FailureType::ImageFull});
    CHECK(g.right.chw == f.right.chw);
  }
  SUBCASE("half failures zero half the image") {
    auto h = apply_failure(s, {FailureType::ImageHalfH});
    CHECK(h.right.at(0, 0, 31) == 0.f);
    CHECK(h.right.at(0, 0, 0) == s.right.at(0, 0, 0));
    auto v = apply_failure(s, {FailureType::ImageHalfV});
    CHECK(v.right.at(0, 15, 0) == 0.f);
    CHECK(v.right.at(0, 0, 0) == s.right.at(0, 0, 0));
  }
  SUBCASE("Rotation by 0 degrees is the identity") {
    auto f = apply_failure(s, {FailureType::Rotation, 0.0});
    CHECK(f.sparse_left.meters == s.sparse_left.meters);
    CHECK(f.sparse_right.meters == s.sparse_right.meters);
    CHECK(f.right.chw == s.right.chw);
  }
  SUBCASE("Rotation moves points without inventing new depths") {
    auto f = apply_failure(s, {FailureType::Rotation, 5.0});
    CHECK(f.sparse_left.meters != s.sparse_left.meters);
    CHECK(f.sparse_left.valid_count() <= s.sparse_left.valid_count());
    CHECK(f.sparse_left.valid_count() > 0);
  }
  SUBCASE("LidarDropout empties both sparse maps") {
    auto f = apply_failure(s, {FailureType::LidarDropout});
    CHECK(f.sparse_left.valid_count() == 0);
    CHECK(f.sparse_right.valid_count() == 0);
    CHECK(f.left.chw == s.left.chw);
    CHECK(f.right.chw == s.right.chw);
  }
}

TEST_CASE("fallback combo mapping") {
  CHECK(fallback_combo({FailureType::ImageHalfH}) == ModalCombo::MonoLidar);
  CHECK(fallback_combo({FailureType::ImageHalfV}) == ModalCombo::MonoLidar);
  CHECK(fallback_combo({FailureType::ImageFull}) == ModalCombo::MonoLidar);
  CHECK(fallback_combo({FailureType::Rotation}) == ModalCombo::Dual);
  CHECK(fallback_combo({FailureType::LidarDropout}) == ModalCombo::Dual);
}

TEST_CASE("failure names round-trip") {
  for (FailureType t : {FailureType::ImageHalfH, FailureType::ImageHalfV, FailureType::ImageFull,
                        FailureType::Rotation, FailureType::LidarDropout}) {
    auto back = failure_from_name(failure_name(t));
    REQUIRE(back.has_value());
    CHECK(*back == t);
  }
  CHECK_FALSE(failure_from_name("meteor").has_value());
}

TEST_CASE("evaluate") {
  NetworkConfig cfg;
  cfg.max_disparity = 8;
  cfg.feature_scale = 2;
  cfg.branch_channels = {2, 2, 2};
  cfg.aggregated_channels = 2;
  auto params = init_params<float>(cfg, 4);

  std::vector<StereoSample> ds;
  for (uint64_t i = 0; i < 2; ++i) {
    auto sc = synth_scene(16, 32, 2, 6, 800 + i, 0.3);
    sc.sample.id = "e" + std::to_string(i);
    ds.push_back(sc.sample);
  }

  SUBCASE("runs per combo and aggregates over all samples") {
    auto m = evaluate(params, cfg, ds, ModalCombo::DualLidar);
    CHECK(m.n_valid == 2 * 16 * 32);
    CHECK(m.rmse_mm > 0.0);
    CHECK(std::isfinite(m.rmse_mm));
  }
  SUBCASE("LidarDropout + Dual equals plain Dual bit-exactly") {
    auto plain = evaluate(params, cfg, ds, ModalCombo::Dual);
    auto failed = evaluate(params, cfg, ds, ModalCombo::Dual,
                           FailureKind{FailureType::LidarDropout});
    CHECK(plain.rmse_mm == failed.rmse_mm);
    CHECK(plain.mae_mm == failed.mae_mm);
    CHECK(plain.irmse_per_km == failed.irmse_per_km);
  }
  SUBCASE("failure without combo uses the fallback") {
    auto by_fallback = evaluate(params, cfg, ds, std::nullopt,
                                FailureKind{FailureType::ImageFull});
    auto explicit_combo = evaluate(params, cfg, ds, ModalCombo::MonoLidar,
                                   FailureKind{FailureType::ImageFull});
    CHECK(by_fallback.rmse_mm == explicit_combo.rmse_mm);
  }
  SUBCASE("empty dataset rejected") {
    CHECK_THROWS_AS(evaluate(params, cfg, {}, ModalCombo::Dual), std::invalid_argument);
  }
}

TEST_CASE("report CSV layout") {
  std::ostringstream os;
  write_report_csv({{"dual", "lidar", {707.1, 500.0, 2.0, 1.0, 42}}}, os);
  auto text = os.str();
  CHECK(text.find("combo,failure,rmse_mm,mae_mm,irmse_per_km,imae_per_km,n_valid\n") == 0);
  CHECK(text.find("dual,lidar,707.1,500,2,1,42\n") != std::string::npos);
}
