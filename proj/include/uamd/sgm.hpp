#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uamd/data.hpp"

namespace uamd {

enum class SgmCostKind { Census5x5, Sad3x3 };
enum class SgmView { Left, Right };

struct SgmConfig {
  size_t max_disp = 64;
  float p1 = 10.f;
  float p2 = 120.f;
  int num_paths = 8;  // 4 or 8
  SgmCostKind cost_kind = SgmCostKind::Census5x5;
  float lr_check_tol = 1.f;

  void validate() const;
};

/// Per-pixel per-disparity matching cost, [D,H,W].
struct CostGrid {
  size_t disp = 0, height = 0, width = 0;
  std::vector<float> cost;

  float at(size_t d, size_t y, size_t x) const {
    return cost[(d * height + y) * width + x];
  }
};

/// Census Hamming or SAD cost for the requested reference view. Out-of-range
/// shifts get the maximal cost of the chosen kind.
CostGrid matching_cost(const Image& left, const Image& right, const SgmConfig& cfg, SgmView view);

/// Scanline aggregation over num_paths directions with P1/P2 jump penalties.
CostGrid aggregate_paths(const CostGrid& cost, const SgmConfig& cfg);

/// Winner-take-all disparities (ties broken toward the smaller disparity) from
/// both aggregated volumes, left-right consistency check, then depth
/// conversion. Returns labels for the requested view.
DepthMap wta_and_check(const CostGrid& aggregated_left, const CostGrid& aggregated_right,
                       const SgmConfig& cfg, const Calibration& calib,
                       SgmView view = SgmView::Left);

/// Raw WTA disparities of one aggregated volume (no check), 0-invalid.
std::vector<float> wta_disparity(const CostGrid& aggregated);

/// Full pipeline for one stereo pair.
DepthMap sgm_depth(const StereoSample& sample, const SgmConfig& cfg, SgmView view = SgmView::Left);

/// One `<id>_noise.png` per sample under out_dir; per-sample failures are
/// reported on stderr and the run continues. Samples are independent and
/// shard across `workers` threads. Returns the number written.
size_t generate_noise_labels(const std::vector<StereoSample>& dataset, const SgmConfig& cfg,
                             const std::string& out_dir, SgmView view = SgmView::Left,
                             size_t workers = 1);

}  // namespace uamd
