#include <doctest.h>

#include <map>

#include "uamd/training.hpp"

using namespace uamd;

namespace {

NetworkConfig tiny_net() {
  NetworkConfig cfg;
  cfg.max_disparity = 8;
  cfg.feature_scale = 2;
  cfg.branch_channels = {2, 2, 2};
  cfg.aggregated_channels = 2;
  return cfg;
}

std::vector<StereoSample> tiny_dataset(size_t n, uint64_t seed0) {
  std::vector<StereoSample> out;
  for (size_t i = 0; i < n; ++i) {
    auto sc = synth_scene(16, 32, 2, 6, seed0 + i, 0.2);
    sc.sample.id = "t" + std::to_string(i);
    out.push_back(sc.sample);
  }
  return out;
}

}  // namespace

TEST_CASE("lr_at schedule fixtures") {
  SUBCASE("supervised decays by epoch") {
    CHECK(lr_at(TrainMode::Supervised, 0, 0, 1e-4) == 1e-4);
    CHECK(lr_at(TrainMode::Supervised, 9, 1000000, 1e-4) == 1e-4);
    CHECK(lr_at(TrainMode::Supervised, 10, 0, 1e-4) == doctest::Approx(5e-5));
    CHECK(lr_at(TrainMode::Supervised, 13, 0, 1e-4) == doctest::Approx(5e-5));
    CHECK(lr_at(TrainMode::Supervised, 14, 0, 1e-4) == doctest::Approx(1e-5));
    CHECK(lr_at(TrainMode::Supervised, 17, 0, 1e-4) == doctest::Approx(1e-6));
    CHECK(lr_at(TrainMode::Supervised, 40, 0, 1e-4) == doctest::Approx(1e-6));
  }
  SUBCASE("custom breakpoints shift the decay") {
    std::array<size_t, 3> ep{100, 140, 170};
    CHECK(lr_at(TrainMode::Supervised, 99, 0, 1e-4, ep) == 1e-4);
    CHECK(lr_at(TrainMode::Supervised, 100, 0, 1e-4, ep) == doctest::Approx(5e-5));
    CHECK(lr_at(TrainMode::Semi, 0, 50, 1e-4, {10, 14, 17}, {40, 60}) == doctest::Approx(1e-5));
  }
  SUBCASE("semi decays by iteration and holds") {
    CHECK(lr_at(TrainMode::Semi, 99, 9999, 1e-4) == 1e-4);
    CHECK(lr_at(TrainMode::Semi, 0, 10000, 1e-4) == doctest::Approx(1e-5));
    CHECK(lr_at(TrainMode::Semi, 0, 13999, 1e-4) == doctest::Approx(1e-5));
    CHECK(lr_at(TrainMode::Semi, 0, 14000, 1e-4) == doctest::Approx(1e-6));
    CHECK(lr_at(TrainMode::Semi, 0, 1000000, 1e-4) == doctest::Approx(1e-6));
  }
}

TEST_CASE("modal dropout distribution") {
  SUBCASE("supervised draws are near-uniform over three combos") {
    MdtState mdt(TrainMode::Supervised, 0);
    std::map<ModalCombo, int> counts;
    for (int i = 0; i < 3000; ++i) ++counts[mdt_sample(mdt)];
    REQUIRE(counts.size() == 3);
    for (auto [combo, n] : counts) {
      CHECK(n >= 900);
      CHECK(n <= 1100);
    }
  }
  SUBCASE("semi universe never emits mono_lidar") {
    MdtState mdt(TrainMode::Semi, 0);
    std::map<ModalCombo, int> counts;
    for (int i = 0; i < 3000; ++i) ++counts[mdt_sample(mdt)];
    CHECK(counts.count(ModalCombo::MonoLidar) == 0);
    CHECK(counts[ModalCombo::DualLidar] > 1200);
    CHECK(counts[ModalCombo::Dual] > 1200);
  }
  SUBCASE("seeded reproducibility") {
    MdtState a(TrainMode::Supervised, 7), b(TrainMode::Supervised, 7);
    for (int i = 0; i < 100; ++i) CHECK(mdt_sample(a) == mdt_sample(b));
  }
}

TEST_CASE("Adam optimizer") {
  SUBCASE("minimizes a quadratic") {
    ParamStore<double> params;
    params.add("w", Tensor<double>::from({1}, {0.0}, true));
    Adam<double> opt;
    for (int i = 0; i < 300; ++i) {
      params.zero_grad();
      auto loss = square(add_scalar(params.at("w"), -3.0));
      loss.backward();
      opt.step(params, 0.1);
    }
    CHECK(params.at("w").item() == doctest::Approx(3.0).epsilon(1e-3));
  }
  SUBCASE("lr = 0 leaves parameters untouched") {
    ParamStore<double> params;
    params.add("w", Tensor<double>::from({2}, {1.5, -2.0}, true));
    auto before = params.at("w").values();
    params.zero_grad();
    sum(square(params.at("w"))).backward();
    Adam<double> opt;
    opt.step(params, 0.0);
    CHECK(params.at("w").values() == before);
  }
  SUBCASE("parameters without gradients are skipped") {
    ParamStore<double> params;
    params.add("used", Tensor<double>::from({1}, {1.0}, true));
    params.add("unused", Tensor<double>::from({1}, {5.0}, true));
    params.zero_grad();
    square(params.at("used")).backward();
    Adam<double> opt;
    opt.step(params, 0.1);
    CHECK(params.at("unused").item() == 5.0);
    CHECK(params.at("used").item() != 1.0);
  }
}

TEST_CASE("TrainConfig validation") {
  TrainConfig cfg;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);  // no stop condition
  cfg.max_steps = 10;
  cfg.validate();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.max_steps = 1;
  cfg.weights.w_p = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("supervised overfit reduces the loss") {
  auto net = tiny_net();
  auto ds = tiny_dataset(2, 400);
  TrainConfig cfg;
  cfg.mode = TrainMode::Supervised;
  cfg.fixed_combo = ModalCombo::DualLidar;
  cfg.lr0 = 2e-3;
  cfg.batch_size = 2;
  cfg.seed = 1;
  cfg.max_steps = 60;
  // one batch per epoch here; stretch the decay so the run stays at lr0
  cfg.sup_decay_epochs = {1000, 1400, 1700};

  auto result = fit<float>(ds, net, cfg);
  REQUIRE(result.trace.size() == 60);
  for (const auto& r : result.trace) {
    CHECK(std::isfinite(r.loss));
    CHECK(r.combo == std::string("dual_lidar"));
  }
  double first = 0, last = 0;
  for (size_t i = 0; i < 5; ++i) {
    first += result.trace[i].loss;
    last += result.trace[result.trace.size() - 1 - i].loss;
  }
  CHECK(last < 0.5 * first);
}

TEST_CASE("training is bitwise reproducible under a fixed seed") {
  auto net = tiny_net();
  auto ds = tiny_dataset(2, 500);
  TrainConfig cfg;
  cfg.mode = TrainMode::Supervised;
  cfg.modal_dropout = true;
  cfg.lr0 = 1e-3;
  cfg.batch_size = 1;
  cfg.seed = 9;
  cfg.max_steps = 8;

  auto a = fit<float>(ds, net, cfg);
  auto b = fit<float>(ds, net, cfg);
  REQUIRE(a.trace.size() == b.trace.size());
  for (size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].loss == b.trace[i].loss);
    CHECK(a.trace[i].combo == b.trace[i].combo);
    CHECK(a.trace[i].lr == b.trace[i].lr);
  }
  for (const auto& name : a.params.order)
    CHECK(a.params.at(name).values() == b.params.at(name).values());
}

TEST_CASE("semi-supervised training") {
  auto net = tiny_net();
  auto ds = tiny_dataset(2, 600);
  // attach noise labels so the fourth term participates
  for (auto& s : ds) s.noise = s.sparse_left;

  TrainConfig cfg;
  cfg.mode = TrainMode::Semi;
  cfg.modal_dropout = true;
  cfg.lr0 = 1e-3;
  cfg.batch_size = 1;
  cfg.seed = 2;
  cfg.max_steps = 6;

  auto result = fit<float>(ds, net, cfg);
  REQUIRE(result.trace.size() == 6);
  for (const auto& r : result.trace) {
    CHECK(std::isfinite(r.loss));
    CHECK(r.combo != std::string("mono_lidar"));
    CHECK(r.l_lidar > 0.0);
    CHECK(r.l_photo > 0.0);
    CHECK(r.l_grad > 0.0);
    CHECK(r.l_noise > 0.0);
    // the weighted parts recompose the total
    CHECK(r.loss == doctest::Approx(1.0 * r.l_lidar + 1.3 * r.l_photo + 0.01 * r.l_grad +
                                    0.1 * r.l_noise)
                        .epsilon(1e-3));
  }

  SUBCASE("mono_lidar is rejected as a fixed semi combo") {
    TrainConfig bad = cfg;
    bad.modal_dropout = false;
    bad.fixed_combo = ModalCombo::MonoLidar;
    CHECK_THROWS_AS(fit<float>(ds, net, bad), std::invalid_argument);
  }
}

TEST_CASE("fit input validation") {
  auto net = tiny_net();
  TrainConfig cfg;
  cfg.max_steps = 1;
  CHECK_THROWS_AS(fit<float>({}, net, cfg), std::invalid_argument);
}
