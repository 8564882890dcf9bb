#include "uamd/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <stdexcept>

#include "uamd/png_io.hpp"

namespace fs = std::filesystem;

namespace uamd {

DepthMap sparsify(const DepthMap& gt, double keep_fraction, uint64_t seed) {
  if (keep_fraction <= 0.0 || keep_fraction > 1.0)
    throw std::invalid_argument("sparsify: keep_fraction must be in (0,1]");
  DepthMap out = DepthMap::zeros(gt.height, gt.width);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (size_t i = 0; i < gt.meters.size(); ++i) {
    double r = u(rng);  // one draw per pixel keeps the stream position-stable
    if (gt.meters[i] > 0.f && r < keep_fraction) out.meters[i] = gt.meters[i];
  }
  return out;
}

SynthScene synth_scene(size_t height, size_t width, size_t n_planes, size_t max_disp,
                       uint64_t seed, double sparse_keep_fraction) {
  if (max_disp >= width / 4)
    throw std::invalid_argument("synth_scene: max_disp must be < width/4");
  if (n_planes < 1) throw std::invalid_argument("synth_scene: n_planes must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // distinct integer plane disparities, ascending; background gets the smallest
  std::vector<size_t> cand(max_disp);
  for (size_t i = 0; i < max_disp; ++i) cand[i] = i + 1;
  std::shuffle(cand.begin(), cand.end(), rng);
  size_t np = std::min(n_planes, max_disp);
  std::vector<size_t> plane_disp(cand.begin(), cand.begin() + np);
  std::sort(plane_disp.begin(), plane_disp.end());

  SynthScene scene;
  scene.true_disparity.assign(height * width, static_cast<float>(plane_disp[0]));
  // nearer rectangles painted over the background, near-to-far disparity order
  for (size_t k = 1; k < np; ++k) {
    size_t rw = width / 4 + static_cast<size_t>(u(rng) * (width / 3));
    size_t rh = height / 4 + static_cast<size_t>(u(rng) * (height / 3));
    size_t x0 = static_cast<size_t>(u(rng) * (width - rw));
    size_t y0 = static_cast<size_t>(u(rng) * (height - rh));
    for (size_t y = y0; y < y0 + rh; ++y)
      for (size_t x = x0; x < x0 + rw; ++x)
        scene.true_disparity[y * width + x] = static_cast<float>(plane_disp[k]);
  }

  // intensities on the 8-bit grid so PNG round-trips are exact
  auto dot = [&]() { return std::round(u(rng) * 255.0f) / 255.f; };
  Image left = Image::zeros(height, width);
  for (float& v : left.chw) v = static_cast<float>(dot());

  // project left pixels into the right view; larger disparity (nearer) wins
  Image right = Image::zeros(height, width);
  std::vector<float> right_disp(height * width, 0.f);
  std::vector<uint8_t> right_filled(height * width, 0);
  scene.non_occluded.assign(height * width, 0);
  std::vector<long long> winner(height * width, -1);
  for (size_t y = 0; y < height; ++y)
    for (size_t x = 0; x < width; ++x) {
      long long d = static_cast<long long>(scene.true_disparity[y * width + x]);
      long long xr = static_cast<long long>(x) - d;
      if (xr < 0) continue;
      size_t ir = y * width + static_cast<size_t>(xr);
      if (right_filled[ir] && right_disp[ir] >= static_cast<float>(d)) continue;
      right_filled[ir] = 1;
      right_disp[ir] = static_cast<float>(d);
      winner[ir] = static_cast<long long>(x);
    }
  for (size_t y = 0; y < height; ++y)
    for (size_t xr = 0; xr < width; ++xr) {
      size_t ir = y * width + xr;
      if (winner[ir] >= 0) {
        size_t xl = static_cast<size_t>(winner[ir]);
        for (size_t c = 0; c < 3; ++c) right.at(c, y, xr) = left.at(c, y, xl);
        scene.non_occluded[y * width + xl] = 1;
      } else {
        for (size_t c = 0; c < 3; ++c) right.at(c, y, xr) = static_cast<float>(dot());
      }
    }

  Calibration calib{100.f, 0.5f};
  DepthMap gt = DepthMap::zeros(height, width);
  for (size_t i = 0; i < gt.meters.size(); ++i)
    gt.meters[i] = calib.focal_px * calib.baseline_m / scene.true_disparity[i];
  DepthMap gt_right = DepthMap::zeros(height, width);
  for (size_t i = 0; i < gt_right.meters.size(); ++i)
    if (right_filled[i]) gt_right.meters[i] = calib.focal_px * calib.baseline_m / right_disp[i];

  StereoSample s;
  s.left = std::move(left);
  s.right = std::move(right);
  s.gt = std::move(gt);
  s.sparse_left = sparsify(s.gt, sparse_keep_fraction, seed ^ 0x5eedu);
  s.sparse_right = sparsify(gt_right, sparse_keep_fraction, seed ^ 0xba5eu);
  s.calib = calib;
  scene.sample = std::move(s);
  return scene;
}

namespace {

Calibration load_calib(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  Calibration c;
  std::string key;
  while (f >> key) {
    if (key == "focal_px")
      f >> c.focal_px;
    else if (key == "baseline_m")
      f >> c.baseline_m;
    else
      throw std::runtime_error("unknown calibration key '" + key + "' in " + path);
  }
  if (c.focal_px <= 0.f || c.baseline_m <= 0.f)
    throw std::runtime_error("calibration in " + path + " must be strictly positive");
  return c;
}

}  // namespace

std::vector<StereoSample> load_dataset(const std::string& root_dir, const std::string& split) {
  fs::path dir = split.empty() ? fs::path(root_dir) : fs::path(root_dir) / split;
  if (!fs::is_directory(dir))
    throw std::runtime_error("dataset split directory missing: " + dir.string());

  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    const std::string suffix = "_left.png";
    if (name.size() > suffix.size() && name.ends_with(suffix) &&
        !name.ends_with("_sparse_left.png"))
      ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());

  std::vector<StereoSample> out;
  for (const std::string& id : ids) {
    auto p = [&](const std::string& suffix) { return (dir / (id + suffix)).string(); };
    bool complete = true;
    for (const char* suffix : {"_right.png", "_sparse_left.png", "_sparse_right.png", "_gt.png",
                               "_calib.txt"}) {
      if (!fs::exists(dir / (id + suffix))) {
        std::cerr << "warning: sample " << id << " missing " << suffix << ", skipped\n";
        complete = false;
      }
    }
    if (!complete) continue;
    StereoSample s;
    s.id = id;
    s.left = decode_rgb_png(read_file(p("_left.png")));
    s.right = decode_rgb_png(read_file(p("_right.png")));
    s.sparse_left = decode_depth_png(read_file(p("_sparse_left.png")));
    s.sparse_right = decode_depth_png(read_file(p("_sparse_right.png")));
    s.gt = decode_depth_png(read_file(p("_gt.png")));
    s.calib = load_calib(p("_calib.txt"));
    if (fs::exists(dir / (id + "_noise.png")))
      s.noise = decode_depth_png(read_file(p("_noise.png")));
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error("no complete samples under " + dir.string());
  return out;
}

void save_sample(const StereoSample& s, const std::string& dir) {
  fs::create_directories(dir);
  auto p = [&](const std::string& suffix) { return (fs::path(dir) / (s.id + suffix)).string(); };
  write_file(p("_left.png"), encode_rgb_png(s.left));
  write_file(p("_right.png"), encode_rgb_png(s.right));
  write_file(p("_sparse_left.png"), encode_depth_png(s.sparse_left));
  write_file(p("_sparse_right.png"), encode_depth_png(s.sparse_right));
  write_file(p("_gt.png"), encode_depth_png(s.gt));
  std::ofstream calib(p("_calib.txt"), std::ios::trunc);
  calib << "focal_px " << s.calib.focal_px << "\nbaseline_m " << s.calib.baseline_m << "\n";
  if (!calib) throw std::runtime_error("cannot write " + p("_calib.txt"));
}

void save_disparity_sidecar(const std::vector<float>& disp, size_t h, size_t w,
                            const std::string& path) {
  DepthMap as_map{h, w, disp};  // reuse the 1/256 quantized 16-bit encoding
  write_file(path, encode_depth_png(as_map));
}

}  // namespace uamd
