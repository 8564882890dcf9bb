#include "uamd/eval.hpp"

#include <cmath>
#include <stdexcept>

namespace uamd {

void MetricsAccum::add(double gt_m, double pred_m) {
  double err_mm = (gt_m - pred_m) * 1000.0;
  sum_sq += err_mm * err_mm;
  sum_abs += std::abs(err_mm);
  double ierr = 1000.0 / gt_m - 1000.0 / pred_m;  // 1/km
  sum_isq += ierr * ierr;
  sum_iabs += std::abs(ierr);
  ++n;
}

void MetricsAccum::merge(const MetricsAccum& other) {
  sum_sq += other.sum_sq;
  sum_abs += other.sum_abs;
  sum_isq += other.sum_isq;
  sum_iabs += other.sum_iabs;
  n += other.n;
}

MetricsReport MetricsAccum::report() const {
  if (n == 0) throw std::invalid_argument("metrics: no valid pixels");
  MetricsReport r;
  r.n_valid = n;
  r.rmse_mm = std::sqrt(sum_sq / static_cast<double>(n));
  r.mae_mm = sum_abs / static_cast<double>(n);
  r.irmse_per_km = std::sqrt(sum_isq / static_cast<double>(n));
  r.imae_per_km = sum_iabs / static_cast<double>(n);
  return r;
}

MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("compute_metrics: extent mismatch");
  MetricsAccum acc;
  for (size_t i = 0; i < gt.meters.size(); ++i)
    if (gt.meters[i] > 0.f) acc.add(gt.meters[i], pred.meters[i]);
  return acc.report();
}

namespace {

void rotate_sparse(DepthMap& map, double angle_deg) {
  const double rad = angle_deg * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (static_cast<double>(map.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(map.width) - 1.0) / 2.0;
  DepthMap out = DepthMap::zeros(map.height, map.width);
  for (size_t y = 0; y < map.height; ++y)
    for (size_t x = 0; x < map.width; ++x) {
      float d = map.at(y, x);
      if (d <= 0.f) continue;
      double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      long long nx = std::llround(cx + c * dx - s * dy);
      long long ny = std::llround(cy + s * dx + c * dy);
      if (nx < 0 || ny < 0 || nx >= static_cast<long long>(map.width) ||
          ny >= static_cast<long long>(map.height))
        continue;
      float& slot = out.at(static_cast<size_t>(ny), static_cast<size_t>(nx));
      if (slot == 0.f || d < slot) slot = d;  // collisions keep the nearer depth
    }
  map = std::move(out);
}

}  // namespace

StereoSample apply_failure(const StereoSample& sample, const FailureKind& kind) {
  StereoSample out = sample;
  const size_t h = out.right.height, w = out.right.width;
  switch (kind.type) {
    case FailureType::ImageHalfH:
      for (size_t c = 0; c < 3; ++c)
        for (size_t y = 0; y < h; ++y)
          for (size_t x = w / 2; x < w; ++x) out.right.at(c, y, x) = 0.f;
      break;
    case FailureType::ImageHalfV:
      for (size_t c = 0; c < 3; ++c)
        for (size_t y = h / 2; y < h; ++y)
          for (size_t x = 0; x < w; ++x) out.right.at(c, y, x) = 0.f;
      break;
    case FailureType::ImageFull:
      std::fill(out.right.chw.begin(), out.right.chw.end(), 0.f);
      break;
    case FailureType::Rotation:
      rotate_sparse(out.sparse_left, kind.angle_deg);
      rotate_sparse(out.sparse_right, kind.angle_deg);
      break;
    case FailureType::LidarDropout:
      std::fill(out.sparse_left.meters.begin(), out.sparse_left.meters.end(), 0.f);
      std::fill(out.sparse_right.meters.begin(), out.sparse_right.meters.end(), 0.f);
      break;
  }
  return out;
}

ModalCombo fallback_combo(const FailureKind& kind) {
  switch (kind.type) {
    case FailureType::ImageHalfH:
    case FailureType::ImageHalfV:
    case FailureType::ImageFull:
      return ModalCombo::MonoLidar;
    case FailureType::Rotation:
    case FailureType::LidarDropout:
      return ModalCombo::Dual;
  }
  return ModalCombo::Dual;
}

MetricsReport evaluate(ParamStore<float>& params, const NetworkConfig& cfg,
                       const std::vector<StereoSample>& dataset,
                       std::optional<ModalCombo> combo, std::optional<FailureKind> failure) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  ModalCombo active = combo ? *combo
                            : (failure ? fallback_combo(*failure) : ModalCombo::DualLidar);
  MetricsAccum total;
  for (const auto& raw : dataset) {
    const StereoSample sample = failure ? apply_failure(raw, *failure) : raw;
    auto reg = forward(sample, active, params, cfg, Side::Left);
    MetricsAccum acc;
    const auto& pred = reg.depth.values();
    for (size_t i = 0; i < sample.gt.meters.size(); ++i)
      if (sample.gt.meters[i] > 0.f) acc.add(sample.gt.meters[i], pred[i]);
    total.merge(acc);
  }
  return total.report();
}

void write_report_csv(const std::vector<ReportRow>& rows, std::ostream& os) {
  os << "combo,failure,rmse_mm,mae_mm,irmse_per_km,imae_per_km,n_valid\n";
  for (const auto& r : rows)
    os << r.combo << ',' << r.failure << ',' << r.metrics.rmse_mm << ',' << r.metrics.mae_mm
       << ',' << r.metrics.irmse_per_km << ',' << r.metrics.imae_per_km << ','
       << r.metrics.n_valid << '\n';
}

const char* failure_name(FailureType t) {
  switch (t) {
    case FailureType::ImageHalfH: return "half_h";
    case FailureType::ImageHalfV: return "half_v";
    case FailureType::ImageFull: return "full";
    case FailureType::Rotation: return "rotation";
    case FailureType::LidarDropout: return "lidar";
  }
  return "?";
}

std::optional<FailureType> failure_from_name(const std::string& name) {
  if (name == "half_h") return FailureType::ImageHalfH;
  if (name == "half_v") return FailureType::ImageHalfV;
  if (name == "full") return FailureType::ImageFull;
  if (name == "rotation") return FailureType::Rotation;
  if (name == "lidar") return FailureType::LidarDropout;
  return std::nullopt;
}

}  // namespace uamd
