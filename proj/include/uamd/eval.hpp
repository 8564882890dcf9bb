#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "uamd/data.hpp"
#include "uamd/network.hpp"

namespace uamd {

struct MetricsReport {
  double rmse_mm = 0, mae_mm = 0;
  double irmse_per_km = 0, imae_per_km = 0;
  size_t n_valid = 0;
};

/// Streaming accumulator over valid pixels; commutative up to the usual
/// floating-point reassociation, so reduction order is kept fixed.
struct MetricsAccum {
  double sum_sq = 0, sum_abs = 0, sum_isq = 0, sum_iabs = 0;
  size_t n = 0;

  void add(double gt_m, double pred_m);
  void merge(const MetricsAccum& other);
  MetricsReport report() const;
};

/// RMSE/MAE in mm and iRMSE/iMAE in 1/km over the gt-valid pixels.
MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt);

enum class FailureType { ImageHalfH, ImageHalfV, ImageFull, Rotation, LidarDropout };

struct FailureKind {
  FailureType type = FailureType::ImageFull;
  double angle_deg = 5.0;  // Rotation only
};

/// Simulates a modal failure. Image failures corrupt the right image; Rotation
/// re-projects both sparse maps through an in-plane rotation about the image
/// center (collisions keep the nearer depth); LidarDropout empties both sparse
/// maps.
StereoSample apply_failure(const StereoSample& sample, const FailureKind& kind);

/// The combo the network falls back to under each failure.
ModalCombo fallback_combo(const FailureKind& kind);

/// Runs forward(side=Left) per sample (after the optional failure) and
/// aggregates metrics over the pixel union of the dataset. When `combo` is
/// unset and a failure is given, fallback_combo picks the combo.
MetricsReport evaluate(ParamStore<float>& params, const NetworkConfig& cfg,
                       const std::vector<StereoSample>& dataset,
                       std::optional<ModalCombo> combo = std::nullopt,
                       std::optional<FailureKind> failure = std::nullopt);

struct ReportRow {
  std::string combo;
  std::string failure;  // empty when none
  MetricsReport metrics;
};

void write_report_csv(const std::vector<ReportRow>& rows, std::ostream& os);

const char* failure_name(FailureType t);
std::optional<FailureType> failure_from_name(const std::string& name);

}  // namespace uamd
