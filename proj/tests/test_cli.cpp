#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "uamd/checkpoint.hpp"
#include "uamd/cli.hpp"
#include "uamd/data.hpp"
#include "uamd/png_io.hpp"

using namespace uamd;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("uamd_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

const char* kTinyConfig =
    "# desk-scale run configuration\n"
    "[model]\n"
    "max_disparity = 8\n"
    "feature_scale = 4\n"
    "branch_channels = 2,2,2\n"
    "aggregated_channels = 2\n"
    "[train]\n"
    "lr0 = 1e-3\n"
    "batch_size = 2\n";

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(cli_run({"frobnicate"}) == 2);
  CHECK(cli_run({}) == 2);
  CHECK(cli_run({"gen-data"}) == 2);                       // --out is required
  CHECK(cli_run({"train", "--data", "x"}) == 2);           // --out is required
  CHECK(cli_run({"eval", "--ckpt", "x", "--data", "y"}) == 2);  // no combo/failure
  CHECK(cli_run({"train", "--mode", "sideways", "--data", "x", "--out", "y"}) == 2);
}

TEST_CASE("gen-data") {
  auto dir = fresh_dir("gendata");
  std::vector<std::string> args{"gen-data", "--out",      dir.string(), "--count", "2",
                                "--height", "16",         "--width",    "32",      "--max-disp",
                                "6",        "--seed",     "11"};
  REQUIRE(cli_run(args) == 0);

  SUBCASE("writes the full per-sample file set") {
    for (const char* id : {"000", "001"})
      for (const char* suffix : {"_left.png", "_right.png", "_sparse_left.png",
                                 "_sparse_right.png", "_gt.png", "_disp.png"})
        CHECK(fs::exists(dir / (std::string(id) + suffix)));
    CHECK(load_dataset(dir.string(), "").size() == 2);
  }
  SUBCASE("is deterministic under a fixed seed") {
    auto dir2 = fresh_dir("gendata2");
    auto args2 = args;
    args2[2] = dir2.string();
    REQUIRE(cli_run(args2) == 0);
    for (const auto& e : fs::directory_iterator(dir)) {
      auto a = read_file(e.path().string());
      auto b = read_file((dir2 / e.path().filename()).string());
      CHECK(a == b);
    }
  }
  SUBCASE("rejects extents the feature pyramid cannot divide") {
    CHECK(cli_run({"gen-data", "--out", dir.string(), "--height", "15", "--width", "32"}) == 2);
  }
}

TEST_CASE("gen-noise writes one label per sample") {
  auto data = fresh_dir("noise_data");
  REQUIRE(cli_run({"gen-data", "--out", data.string(), "--count", "2", "--height", "16",
                   "--width", "32", "--max-disp", "4", "--seed", "3"}) == 0);
  CHECK(cli_run({"gen-noise", "--data", data.string(), "--out", data.string(), "--max-disp",
                 "8"}) == 0);
  CHECK(fs::exists(data / "000_noise.png"));
  CHECK(fs::exists(data / "001_noise.png"));
  // once the sidecars sit next to the samples, loading picks them up
  auto ds = load_dataset(data.string(), "");
  REQUIRE(ds.size() == 2);
  for (const auto& s : ds) CHECK(s.noise.has_value());
}

TEST_CASE("checkpoint round-trip") {
  auto dir = fresh_dir("ckpt");
  NetworkConfig cfg;
  cfg.max_disparity = 8;
  cfg.feature_scale = 2;
  cfg.branch_channels = {2, 3, 3};
  cfg.aggregated_channels = 2;
  auto params = init_params<float>(cfg, 7);
  auto path = (dir / "model.ckpt").string();
  save_checkpoint(path, cfg, params);

  SUBCASE("restores config and parameters bitwise") {
    auto ckpt = load_checkpoint(path);
    CHECK(ckpt.config.max_disparity == 8);
    CHECK(ckpt.config.feature_scale == 2);
    CHECK(ckpt.config.branch_channels == std::array<size_t, 3>{2, 3, 3});
    REQUIRE(ckpt.params.order == params.order);
    for (const auto& name : params.order) {
      CHECK(ckpt.params.at(name).shape() == params.at(name).shape());
      CHECK(ckpt.params.at(name).values() == params.at(name).values());
    }
  }
  SUBCASE("rejects a truncated file") {
    auto bytes = read_file(path);
    bytes.resize(bytes.size() / 2);
    auto bad = (dir / "truncated.ckpt").string();
    write_file(bad, bytes);
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
  }
  SUBCASE("rejects a wrong magic") {
    auto bytes = read_file(path);
    bytes[0] ^= 0xff;
    auto bad = (dir / "magic.ckpt").string();
    write_file(bad, bytes);
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
  }
  SUBCASE("missing file throws") { CHECK_THROWS(load_checkpoint((dir / "nope.ckpt").string())); }
}

TEST_CASE("train / eval / infer round-trip") {
  auto data = fresh_dir("pipe_data");
  auto work = fresh_dir("pipe_work");
  REQUIRE(cli_run({"gen-data", "--out", data.string(), "--count", "2", "--height", "16",
                   "--width", "32", "--max-disp", "6", "--seed", "5"}) == 0);
  auto cfg_path = work / "run.cfg";
  write_text(cfg_path, kTinyConfig);
  auto ckpt = (work / "model.ckpt").string();

  REQUIRE(cli_run({"train", "--config", cfg_path.string(), "--data", data.string(), "--out",
                   ckpt, "--steps", "4", "--seed", "1"}) == 0);
  CHECK(fs::exists(ckpt));

  SUBCASE("trace CSV has the expected layout") {
    std::ifstream tf(ckpt + ".trace.csv");
    REQUIRE(tf.good());
    std::string header;
    std::getline(tf, header);
    CHECK(header == "step,epoch,combo,lr,loss,l_lidar,l_photo,l_grad,l_noise");
    size_t rows = 0;
    for (std::string line; std::getline(tf, line);)
      if (!line.empty()) ++rows;
    CHECK(rows == 4);
  }

  SUBCASE("identical seeds reproduce checkpoint and trace bytes") {
    auto ckpt2 = (work / "model2.ckpt").string();
    REQUIRE(cli_run({"train", "--config", cfg_path.string(), "--data", data.string(), "--out",
                     ckpt2, "--steps", "4", "--seed", "1"}) == 0);
    CHECK(read_file(ckpt) == read_file(ckpt2));
    CHECK(read_file(ckpt + ".trace.csv") == read_file(ckpt2 + ".trace.csv"));
  }

  SUBCASE("eval writes a report") {
    auto report = (work / "report.csv").string();
    REQUIRE(cli_run({"eval", "--ckpt", ckpt, "--data", data.string(), "--combo", "dual",
                     "--report", report}) == 0);
    std::ifstream rf(report);
    std::string header, row;
    std::getline(rf, header);
    std::getline(rf, row);
    CHECK(header == "combo,failure,rmse_mm,mae_mm,irmse_per_km,imae_per_km,n_valid");
    CHECK(row.rfind("dual,", 0) == 0);
  }

  SUBCASE("eval with a failure alone picks the fallback combo") {
    auto report = (work / "fb.csv").string();
    REQUIRE(cli_run({"eval", "--ckpt", ckpt, "--data", data.string(), "--failure", "full",
                     "--report", report}) == 0);
    std::ifstream rf(report);
    std::string header, row;
    std::getline(rf, header);
    std::getline(rf, row);
    CHECK(row.rfind("mono_lidar,full,", 0) == 0);
  }

  SUBCASE("infer produces a decodable positive depth map") {
    auto out = (work / "depth.png").string();
    REQUIRE(cli_run({"infer", "--ckpt", ckpt, "--left", (data / "000_left.png").string(),
                     "--right", (data / "000_right.png").string(), "--lidar",
                     (data / "000_sparse_left.png").string(), "--combo", "dual_lidar", "--out",
                     out}) == 0);
    auto depth = decode_depth_png(read_file(out));
    CHECK(depth.height == 16);
    CHECK(depth.width == 32);
    CHECK(depth.valid_count() == depth.meters.size());
  }

  SUBCASE("infer without a right image needs mono_lidar") {
    auto out = (work / "mono.png").string();
    CHECK(cli_run({"infer", "--ckpt", ckpt, "--left", (data / "000_left.png").string(), "--out",
                   out, "--combo", "dual"}) == 2);
    CHECK(cli_run({"infer", "--ckpt", ckpt, "--left", (data / "000_left.png").string(),
                   "--lidar", (data / "000_sparse_left.png").string(), "--combo", "mono_lidar",
                   "--out", out}) == 0);
  }

  SUBCASE("I/O failures exit with code 3") {
    CHECK(cli_run({"eval", "--ckpt", (work / "missing.ckpt").string(), "--data", data.string(),
                   "--combo", "dual"}) == 3);
    CHECK(cli_run({"train", "--config", cfg_path.string(), "--data",
                   (work / "no_such_dir").string(), "--out", ckpt, "--steps", "1"}) == 3);
  }
}

TEST_CASE("config file validation") {
  auto dir = fresh_dir("cfg");
  auto data = dir / "d";
  fs::create_directories(data);

  SUBCASE("unknown keys are rejected as usage errors") {
    auto bad = dir / "bad.cfg";
    write_text(bad, "[model]\nwarp_factor = 9\n");
    CHECK(cli_run({"train", "--config", bad.string(), "--data", data.string(), "--out",
                   (dir / "m.ckpt").string(), "--steps", "1"}) == 2);
  }
  SUBCASE("unknown sections are rejected") {
    auto bad = dir / "sec.cfg";
    write_text(bad, "[universe]\nanswer = 42\n");
    CHECK(cli_run({"train", "--config", bad.string(), "--data", data.string(), "--out",
                   (dir / "m.ckpt").string(), "--steps", "1"}) == 2);
  }
  SUBCASE("missing config file is an I/O error") {
    CHECK(cli_run({"train", "--config", (dir / "nope.cfg").string(), "--data", data.string(),
                   "--out", (dir / "m.ckpt").string(), "--steps", "1"}) == 3);
  }
}

TEST_CASE("worker_count respects UAMD_THREADS") {
  // the suite runs with the variable unset; the default is a single worker
  if (!std::getenv("UAMD_THREADS")) CHECK(worker_count() == 1);
}
