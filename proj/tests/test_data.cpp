#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "uamd/data.hpp"
#include "uamd/png_io.hpp"

using namespace uamd;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("uamd_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("depth PNG round-trip") {
  DepthMap m = DepthMap::zeros(5, 7);
  std::mt19937 rng(1);
  std::uniform_int_distribution<int> stored(1, 255 * 256);
  for (size_t i = 0; i < m.meters.size(); ++i)
    if (i % 3 != 0) m.meters[i] = static_cast<float>(stored(rng)) / 256.f;

  auto bytes = encode_depth_png(m);
  DepthMap back = decode_depth_png(bytes);
  REQUIRE(back.height == 5);
  REQUIRE(back.width == 7);
  for (size_t i = 0; i < m.meters.size(); ++i)
    CHECK(back.meters[i] == doctest::Approx(m.meters[i]).epsilon(1e-6));
  // invalid stays invalid
  for (size_t i = 0; i < m.meters.size(); i += 3) CHECK(back.meters[i] == 0.f);
}

TEST_CASE("depth PNG edge cases") {
  SUBCASE("tiny valid depth survives quantization") {
    DepthMap m = DepthMap::zeros(1, 2);
    m.meters[0] = 1e-4f;  // would quantize to stored 0
    auto back = decode_depth_png(encode_depth_png(m));
    CHECK(back.meters[0] > 0.f);
    CHECK(back.meters[1] == 0.f);
  }
  SUBCASE("out-of-range depth rejected") {
    DepthMap m = DepthMap::zeros(1, 1);
    m.meters[0] = 256.f;
    CHECK_THROWS_AS(encode_depth_png(m), PngError);
  }
  SUBCASE("non-16-bit-gray input rejected") {
    auto rgb = encode_rgb_png(Image::zeros(4, 4));
    CHECK_THROWS_AS(decode_depth_png(rgb), PngError);
  }
  SUBCASE("garbage bytes rejected") {
    std::vector<uint8_t> junk{1, 2, 3, 4};
    CHECK_THROWS_AS(decode_depth_png(junk), PngError);
  }
}

TEST_CASE("rgb PNG round-trip") {
  Image im = Image::zeros(3, 4);
  std::mt19937 rng(2);
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& v : im.chw) v = static_cast<float>(byte(rng)) / 255.f;
  Image back = decode_rgb_png(encode_rgb_png(im));
  REQUIRE(back.height == 3);
  REQUIRE(back.width == 4);
  for (size_t i = 0; i < im.chw.size(); ++i)
    CHECK(back.chw[i] == doctest::Approx(im.chw[i]).epsilon(1e-6));
}

TEST_CASE("sparsify") {
  DepthMap gt = DepthMap::zeros(40, 50);
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> depth(1.f, 90.f);
  for (size_t i = 0; i < gt.meters.size(); ++i)
    if (i % 4 != 0) gt.meters[i] = depth(rng);
  size_t n_valid = gt.valid_count();

  SUBCASE("deterministic and a subset of the valid pixels") {
    auto a = sparsify(gt, 0.1, 42);
    auto b = sparsify(gt, 0.1, 42);
    CHECK(a.meters == b.meters);
    for (size_t i = 0; i < a.meters.size(); ++i) {
      if (a.meters[i] > 0.f) CHECK(a.meters[i] == gt.meters[i]);
      if (gt.meters[i] == 0.f) CHECK(a.meters[i] == 0.f);
    }
  }
  SUBCASE("keep fraction is honored approximately") {
    auto a = sparsify(gt, 0.1, 7);
    double frac = static_cast<double>(a.valid_count()) / static_cast<double>(n_valid);
    CHECK(frac > 0.05);
    CHECK(frac < 0.16);
  }
  SUBCASE("extremes") {
    CHECK(sparsify(gt, 1.0, 5).valid_count() == n_valid);
    CHECK_THROWS_AS(sparsify(gt, 0.0, 5), std::invalid_argument);
    CHECK_THROWS_AS(sparsify(gt, 1.5, 5), std::invalid_argument);
  }
  SUBCASE("different seeds differ") {
    CHECK(sparsify(gt, 0.5, 1).meters != sparsify(gt, 0.5, 2).meters);
  }
}

TEST_CASE("synth_scene geometry") {
  auto scene = synth_scene(32, 64, 3, 12, 9);
  const auto& s = scene.sample;
  REQUIRE(s.left.height == 32);
  REQUIRE(s.left.width == 64);
  REQUIRE(scene.true_disparity.size() == 32 * 64);

  SUBCASE("disparities lie in [1, max_disp]") {
    for (float d : scene.true_disparity) {
      CHECK(d >= 1.f);
      CHECK(d <= 12.f);
    }
  }
  SUBCASE("non-occluded pixels reconstruct the right view exactly") {
    size_t checked = 0;
    for (size_t y = 0; y < 32; ++y)
      for (size_t x = 0; x < 64; ++x) {
        if (!scene.non_occluded[y * 64 + x]) continue;
        long long xr = static_cast<long long>(x) -
                       static_cast<long long>(scene.true_disparity[y * 64 + x]);
        REQUIRE(xr >= 0);
        for (size_t c = 0; c < 3; ++c)
          CHECK(s.left.at(c, y, x) == s.right.at(c, y, static_cast<size_t>(xr)));
        ++checked;
      }
    CHECK(checked > 32 * 64 / 2);  // occlusions are a small minority
  }
  SUBCASE("gt depth matches calibration over true disparity") {
    for (size_t i = 0; i < scene.true_disparity.size(); ++i)
      CHECK(s.gt.meters[i] ==
            doctest::Approx(s.calib.focal_px * s.calib.baseline_m / scene.true_disparity[i]));
  }
  SUBCASE("sparse maps are subsets") {
    CHECK(s.sparse_left.valid_count() > 0);
    CHECK(s.sparse_left.valid_count() < s.gt.valid_count());
    for (size_t i = 0; i < s.sparse_left.meters.size(); ++i)
      if (s.sparse_left.meters[i] > 0.f) CHECK(s.sparse_left.meters[i] == s.gt.meters[i]);
  }
  SUBCASE("seeded reproducibility") {
    auto again = synth_scene(32, 64, 3, 12, 9);
    CHECK(again.sample.left.chw == s.left.chw);
    CHECK(again.sample.right.chw == s.right.chw);
    CHECK(again.true_disparity == scene.true_disparity);
  }
}

TEST_CASE("save_sample / load_dataset round-trip") {
  auto dir = fresh_dir("data_roundtrip");
  auto split = dir / "train";
  fs::create_directories(split);
  std::vector<SynthScene> scenes;
  for (uint64_t i = 0; i < 3; ++i) {
    auto sc = synth_scene(16, 32, 2, 6, 100 + i);
    sc.sample.id = "s" + std::to_string(i);
    save_sample(sc.sample, split.string());
    scenes.push_back(std::move(sc));
  }

  auto loaded = load_dataset(dir.string(), "train");
  REQUIRE(loaded.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(loaded[i].id == "s" + std::to_string(i));
    CHECK(loaded[i].left.chw == scenes[i].sample.left.chw);
    CHECK(loaded[i].right.chw == scenes[i].sample.right.chw);
    CHECK(loaded[i].calib.focal_px == scenes[i].sample.calib.focal_px);
    CHECK(loaded[i].calib.baseline_m == scenes[i].sample.calib.baseline_m);
    CHECK_FALSE(loaded[i].noise.has_value());
    // depth quantization is 1/256 m
    for (size_t p = 0; p < loaded[i].gt.meters.size(); ++p)
      CHECK(std::abs(loaded[i].gt.meters[p] - scenes[i].sample.gt.meters[p]) <= 1.f / 256.f);
  }

  SUBCASE("noise sidecar is picked up when present") {
    auto noise = scenes[1].sample.sparse_left;
    write_file((split / "s1_noise.png").string(), encode_depth_png(noise));
    auto with_noise = load_dataset(dir.string(), "train");
    CHECK_FALSE(with_noise[0].noise.has_value());
    REQUIRE(with_noise[1].noise.has_value());
    CHECK(with_noise[1].noise->valid_count() == noise.valid_count());
  }

  SUBCASE("incomplete samples are skipped") {
    fs::remove(split / "s2_right.png");
    auto partial = load_dataset(dir.string(), "train");
    REQUIRE(partial.size() == 2);
    CHECK(partial[0].id == "s0");
    CHECK(partial[1].id == "s1");
  }
}

TEST_CASE("load_dataset failure modes") {
  auto dir = fresh_dir("data_empty");
  CHECK_THROWS(load_dataset(dir.string(), ""));
  CHECK_THROWS(load_dataset((dir / "missing").string(), ""));
}
