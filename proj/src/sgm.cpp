#include "uamd/sgm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <thread>

#include "uamd/png_io.hpp"

namespace uamd {

void SgmConfig::validate() const {
  if (max_disp < 1) throw std::invalid_argument("SgmConfig: max_disp must be >= 1");
  if (!(p1 > 0.f) || p1 > p2) throw std::invalid_argument("SgmConfig: require 0 < p1 <= p2");
  if (num_paths != 4 && num_paths != 8)
    throw std::invalid_argument("SgmConfig: num_paths must be 4 or 8");
}

namespace {

std::vector<float> to_gray(const Image& img) {
  std::vector<float> g(img.height * img.width);
  for (size_t y = 0; y < img.height; ++y)
    for (size_t x = 0; x < img.width; ++x)
      g[y * img.width + x] = (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.f;
  return g;
}

// 5x5 census transform; out-of-bound neighbors read as 0 intensity.
std::vector<uint32_t> census5(const std::vector<float>& gray, size_t h, size_t w) {
  std::vector<uint32_t> out(h * w, 0);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      float center = gray[y * w + x];
      uint32_t bits = 0;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          if (dy == 0 && dx == 0) continue;
          long long yy = static_cast<long long>(y) + dy;
          long long xx = static_cast<long long>(x) + dx;
          float v = 0.f;
          if (yy >= 0 && yy < static_cast<long long>(h) && xx >= 0 &&
              xx < static_cast<long long>(w))
            v = gray[static_cast<size_t>(yy) * w + static_cast<size_t>(xx)];
          bits = (bits << 1) | (v < center ? 1u : 0u);
        }
      out[y * w + x] = bits;
    }
  return out;
}

}  // namespace

CostGrid matching_cost(const Image& left, const Image& right, const SgmConfig& cfg, SgmView view) {
  cfg.validate();
  if (left.height != right.height || left.width != right.width)
    throw std::invalid_argument("matching_cost: pair extents differ");
  const size_t h = left.height, w = left.width, nd = cfg.max_disp;
  if (nd > w) throw std::invalid_argument("matching_cost: max_disp exceeds image width");
  CostGrid grid{nd, h, w, std::vector<float>(nd * h * w, 0.f)};
  // reference view samples the other image shifted by d: left ref looks at
  // right(x-d), right ref looks at left(x+d)
  const int sign = view == SgmView::Left ? 1 : -1;

  if (cfg.cost_kind == SgmCostKind::Census5x5) {
    auto gl = to_gray(left), gr = to_gray(right);
    auto census_ref = census5(view == SgmView::Left ? gl : gr, h, w);
    auto census_oth = census5(view == SgmView::Left ? gr : gl, h, w);
    const float max_cost = 24.f;
    for (size_t d = 0; d < nd; ++d)
      for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x) {
          long long xs = static_cast<long long>(x) - sign * static_cast<long long>(d);
          float c = max_cost;
          if (xs >= 0 && xs < static_cast<long long>(w))
            c = static_cast<float>(
                std::popcount(census_ref[y * w + x] ^ census_oth[y * w + static_cast<size_t>(xs)]));
          grid.cost[(d * h + y) * w + x] = c;
        }
  } else {
    const Image& ref = view == SgmView::Left ? left : right;
    const Image& oth = view == SgmView::Left ? right : left;
    const float max_cost = 9.f;  // 3x3 window, 3 channels, unit range -> 27/3
    for (size_t d = 0; d < nd; ++d)
      for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x) {
          long long xs = static_cast<long long>(x) - sign * static_cast<long long>(d);
          float c = max_cost;
          if (xs >= 0 && xs < static_cast<long long>(w)) {
            c = 0.f;
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                long long ry = static_cast<long long>(y) + dy;
                long long rx = static_cast<long long>(x) + dx;
                long long ox = xs + dx;
                if (ry < 0 || ry >= static_cast<long long>(h) || rx < 0 ||
                    rx >= static_cast<long long>(w) || ox < 0 || ox >= static_cast<long long>(w))
                  continue;
                for (size_t ch = 0; ch < 3; ++ch)
                  c += std::abs(ref.at(ch, static_cast<size_t>(ry), static_cast<size_t>(rx)) -
                                oth.at(ch, static_cast<size_t>(ry), static_cast<size_t>(ox)));
              }
            c /= 3.f;
          }
          grid.cost[(d * h + y) * w + x] = c;
        }
  }
  return grid;
}

CostGrid aggregate_paths(const CostGrid& cost, const SgmConfig& cfg) {
  cfg.validate();
  const size_t nd = cost.disp, h = cost.height, w = cost.width;
  static const int dirs8[8][2] = {{0, 1},  {0, -1}, {1, 0},  {-1, 0},
                                  {1, 1},  {1, -1}, {-1, 1}, {-1, -1}};
  CostGrid out{nd, h, w, std::vector<float>(nd * h * w, 0.f)};
  std::vector<float> path(nd * h * w);
  std::vector<float> prev(nd), cur(nd);

  for (int p = 0; p < cfg.num_paths; ++p) {
    const int dy = dirs8[p][0], dx = dirs8[p][1];
    // traverse so that (y-dy, x-dx) is already done
    for (size_t yi = 0; yi < h; ++yi) {
      size_t y = dy >= 0 ? yi : h - 1 - yi;
      for (size_t xi = 0; xi < w; ++xi) {
        size_t x = dx >= 0 ? xi : w - 1 - xi;
        long long py = static_cast<long long>(y) - dy;
        long long px = static_cast<long long>(x) - dx;
        bool has_prev = py >= 0 && py < static_cast<long long>(h) && px >= 0 &&
                        px < static_cast<long long>(w);
        if (!has_prev) {
          for (size_t d = 0; d < nd; ++d)
            path[(d * h + y) * w + x] = cost.cost[(d * h + y) * w + x];
          continue;
        }
        float min_prev = std::numeric_limits<float>::max();
        for (size_t d = 0; d < nd; ++d) {
          prev[d] = path[(d * h + static_cast<size_t>(py)) * w + static_cast<size_t>(px)];
          min_prev = std::min(min_prev, prev[d]);
        }
        for (size_t d = 0; d < nd; ++d) {
          float best = prev[d];
          if (d > 0) best = std::min(best, prev[d - 1] + cfg.p1);
          if (d + 1 < nd) best = std::min(best, prev[d + 1] + cfg.p1);
          best = std::min(best, min_prev + cfg.p2);
          cur[d] = cost.cost[(d * h + y) * w + x] + best - min_prev;
        }
        for (size_t d = 0; d < nd; ++d) path[(d * h + y) * w + x] = cur[d];
      }
    }
    for (size_t i = 0; i < out.cost.size(); ++i) out.cost[i] += path[i];
  }
  return out;
}

std::vector<float> wta_disparity(const CostGrid& aggregated) {
  const size_t nd = aggregated.disp, h = aggregated.height, w = aggregated.width;
  std::vector<float> disp(h * w, 0.f);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      size_t best = 0;
      float best_cost = aggregated.at(0, y, x);
      for (size_t d = 1; d < nd; ++d) {
        float c = aggregated.at(d, y, x);
        if (c < best_cost) {  // strict: ties keep the smaller disparity
          best_cost = c;
          best = d;
        }
      }
      disp[y * w + x] = static_cast<float>(best);
    }
  return disp;
}

DepthMap wta_and_check(const CostGrid& aggregated_left, const CostGrid& aggregated_right,
                       const SgmConfig& cfg, const Calibration& calib, SgmView view) {
  const size_t h = aggregated_left.height, w = aggregated_left.width;
  auto disp_l = wta_disparity(aggregated_left);
  auto disp_r = wta_disparity(aggregated_right);
  const auto& disp_ref = view == SgmView::Left ? disp_l : disp_r;
  const auto& disp_oth = view == SgmView::Left ? disp_r : disp_l;
  const int sign = view == SgmView::Left ? 1 : -1;

  DepthMap out = DepthMap::zeros(h, w);
  size_t survivors = 0;
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      float d = disp_ref[y * w + x];
      if (d <= 0.f) continue;  // zero disparity cannot be converted to depth
      long long xo = static_cast<long long>(x) - sign * static_cast<long long>(d);
      if (xo < 0 || xo >= static_cast<long long>(w)) continue;
      if (std::abs(d - disp_oth[y * w + static_cast<size_t>(xo)]) > cfg.lr_check_tol) continue;
      out.at(y, x) = calib.focal_px * calib.baseline_m / d;
      ++survivors;
    }
  if (survivors == 0)
    throw std::runtime_error("wta_and_check: the consistency check invalidated every pixel");
  return out;
}

DepthMap sgm_depth(const StereoSample& sample, const SgmConfig& cfg, SgmView view) {
  auto cost_l = matching_cost(sample.left, sample.right, cfg, SgmView::Left);
  auto cost_r = matching_cost(sample.left, sample.right, cfg, SgmView::Right);
  auto agg_l = aggregate_paths(cost_l, cfg);
  auto agg_r = aggregate_paths(cost_r, cfg);
  return wta_and_check(agg_l, agg_r, cfg, sample.calib, view);
}

size_t generate_noise_labels(const std::vector<StereoSample>& dataset, const SgmConfig& cfg,
                             const std::string& out_dir, SgmView view, size_t workers) {
  std::filesystem::create_directories(out_dir);
  workers = std::clamp<size_t>(workers, 1, dataset.size() > 0 ? dataset.size() : 1);
  std::vector<uint8_t> ok(dataset.size(), 0);
  auto run_range = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      const auto& s = dataset[i];
      try {
        DepthMap labels = sgm_depth(s, cfg, view);
        auto path = (std::filesystem::path(out_dir) / (s.id + "_noise.png")).string();
        write_file(path, encode_depth_png(labels));
        ok[i] = 1;
      } catch (const std::exception& e) {
        std::cerr << "warning: noise labels for sample " << s.id << " failed: " << e.what()
                  << "\n";
      }
    }
  };
  if (workers == 1) {
    run_range(0, dataset.size());
  } else {
    std::vector<std::thread> pool;
    size_t chunk = (dataset.size() + workers - 1) / workers;
    for (size_t w = 0; w < workers; ++w)
      pool.emplace_back(run_range, w * chunk, std::min(dataset.size(), (w + 1) * chunk));
    for (auto& t : pool) t.join();
  }
  size_t written = 0;
  for (uint8_t v : ok) written += v;
  return written;
}

}  // namespace uamd
