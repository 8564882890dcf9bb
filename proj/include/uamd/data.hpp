#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace uamd {

struct Calibration {
  float focal_px = 0.f;
  float baseline_m = 0.f;
};

/// 3-channel image, CHW layout, values in [0,1].
struct Image {
  size_t height = 0, width = 0;
  std::vector<float> chw;  // 3*height*width

  float at(size_t c, size_t y, size_t x) const { return chw[(c * height + y) * width + x]; }
  float& at(size_t c, size_t y, size_t x) { return chw[(c * height + y) * width + x]; }
  static Image zeros(size_t h, size_t w) { return Image{h, w, std::vector<float>(3 * h * w, 0.f)}; }
};

/// Depth raster in meters; 0 encodes an invalid pixel. Used both for sparse
/// LiDAR projections and dense ground truth / predictions.
struct DepthMap {
  size_t height = 0, width = 0;
  std::vector<float> meters;  // height*width

  float at(size_t y, size_t x) const { return meters[y * width + x]; }
  float& at(size_t y, size_t x) { return meters[y * width + x]; }
  size_t valid_count() const {
    size_t n = 0;
    for (float v : meters)
      if (v > 0.f) ++n;
    return n;
  }
  static DepthMap zeros(size_t h, size_t w) { return DepthMap{h, w, std::vector<float>(h * w, 0.f)}; }
};

struct StereoSample {
  std::string id;
  Image left, right;
  DepthMap sparse_left, sparse_right;
  DepthMap gt;
  Calibration calib;
  std::optional<DepthMap> noise;  // SGM labels, loaded when present
};

constexpr float kMaxDepthM = 100.f;

/// Retains a uniformly random keep_fraction of the valid pixels; deterministic
/// under seed.
DepthMap sparsify(const DepthMap& gt, double keep_fraction, uint64_t seed);

struct SynthScene {
  StereoSample sample;
  std::vector<float> true_disparity;    // height*width, pixels
  std::vector<uint8_t> non_occluded;    // right-view warp of these pixels is exact
};

/// Random-dot stereogram over n_planes fronto-parallel layers with integer
/// disparities in [1, max_disp]. Calibration is fixed at focal 100 px,
/// baseline 0.5 m.
SynthScene synth_scene(size_t height, size_t width, size_t n_planes, size_t max_disp,
                       uint64_t seed, double sparse_keep_fraction = 0.05);

/// Loads `<root>/<split>` samples; deterministic lexicographic order. Samples
/// with missing companion files are skipped with a warning on stderr.
std::vector<StereoSample> load_dataset(const std::string& root_dir, const std::string& split);

/// Writes one sample in the on-disk layout (left/right/sparse/gt/calib files).
void save_sample(const StereoSample& s, const std::string& dir);

/// Writes the true-disparity sidecar (`<id>_disp.png`, 1/256 px quantization).
void save_disparity_sidecar(const std::vector<float>& disp, size_t h, size_t w,
                            const std::string& path);

}  // namespace uamd
