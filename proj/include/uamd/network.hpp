#pragma once

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "uamd/data.hpp"
#include "uamd/tensor.hpp"

namespace uamd {

/// Which sensor inputs the forward pass consumes.
enum class ModalCombo { DualLidar, MonoLidar, Dual };

inline const char* combo_name(ModalCombo c) {
  switch (c) {
    case ModalCombo::DualLidar: return "dual_lidar";
    case ModalCombo::MonoLidar: return "mono_lidar";
    case ModalCombo::Dual: return "dual";
  }
  return "?";
}

enum class Side { Left, Right };

struct NetworkConfig {
  size_t max_disparity = 192;
  size_t feature_scale = 4;  // 1, 2 or 4
  std::array<size_t, 3> branch_channels{16, 32, 32};
  size_t aggregated_channels = 16;
  float min_disparity_eps = 0.1f;

  void validate() const {
    if (max_disparity % feature_scale != 0)
      throw std::invalid_argument("NetworkConfig: max_disparity must be divisible by feature_scale");
    if (feature_scale != 1 && feature_scale != 2 && feature_scale != 4)
      throw std::invalid_argument("NetworkConfig: feature_scale must be 1, 2 or 4");
    for (size_t c : branch_channels)
      if (c < 1) throw std::invalid_argument("NetworkConfig: channel widths must be >= 1");
    if (aggregated_channels < 1)
      throw std::invalid_argument("NetworkConfig: aggregated_channels must be >= 1");
  }

  // stereo features carry the mid-layer concat
  size_t stereo_feat_channels() const { return branch_channels[1] + branch_channels[2]; }
  size_t mono_feat_channels() const { return branch_channels[2]; }

  size_t cffl_channels(ModalCombo combo) const {
    size_t stereo = 1 + stereo_feat_channels();
    size_t lidar = mono_feat_channels();
    size_t image = mono_feat_channels();
    switch (combo) {
      case ModalCombo::DualLidar: return lidar + image + stereo;
      case ModalCombo::MonoLidar: return lidar + image;
      case ModalCombo::Dual: return image + stereo;
    }
    return 0;
  }
};

/// Named learnable parameters with a stable registration order.
template <typename T>
struct ParamStore {
  std::vector<std::string> order;
  std::unordered_map<std::string, Tensor<T>> by_name;

  void add(const std::string& name, Tensor<T> t) {
    if (by_name.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    order.push_back(name);
    by_name.emplace(name, std::move(t));
  }
  Tensor<T>& at(const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::invalid_argument("unknown parameter " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::invalid_argument("unknown parameter " + name);
    return it->second;
  }
  void zero_grad() {
    for (auto& name : order) by_name.at(name).clear_grad();
  }
};

namespace detail {

inline void branch_strides(size_t feature_scale, size_t& s1, size_t& s2) {
  s1 = feature_scale >= 2 ? 2 : 1;
  s2 = feature_scale >= 4 ? 2 : 1;
}

template <typename T>
void add_conv2d(ParamStore<T>& p, const std::string& prefix, size_t in_ch, size_t out_ch,
                std::mt19937& rng) {
  p.add(prefix + ".weight", kaiming_uniform<T>({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
  p.add(prefix + ".bias", Tensor<T>::zeros({out_ch}, true));
}

template <typename T>
void add_conv3d(ParamStore<T>& p, const std::string& prefix, size_t in_ch, size_t out_ch,
                std::mt19937& rng) {
  p.add(prefix + ".weight", kaiming_uniform<T>({out_ch, in_ch, 3, 3, 3}, in_ch * 27, rng));
  p.add(prefix + ".bias", Tensor<T>::zeros({out_ch}, true));
}

}  // namespace detail

template <typename T>
ParamStore<T> init_params(const NetworkConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937 rng(static_cast<uint32_t>(seed));
  ParamStore<T> p;
  const auto [b0, b1, b2] = cfg.branch_channels;
  for (const char* branch : {"stereo", "depth", "image"}) {
    size_t in_ch = std::string(branch) == "depth" ? 4 : 3;
    detail::add_conv2d(p, std::string("mfe.") + branch + ".conv1", in_ch, b0, rng);
    detail::add_conv2d(p, std::string("mfe.") + branch + ".conv2", b0, b1, rng);
    detail::add_conv2d(p, std::string("mfe.") + branch + ".conv3", b1, b2, rng);
  }
  for (ModalCombo combo : {ModalCombo::DualLidar, ModalCombo::MonoLidar, ModalCombo::Dual}) {
    std::string prefix = std::string("cfal.") + combo_name(combo);
    detail::add_conv3d(p, prefix + ".conv1", cfg.cffl_channels(combo), cfg.aggregated_channels,
                       rng);
    detail::add_conv3d(p, prefix + ".conv2", cfg.aggregated_channels, cfg.aggregated_channels,
                       rng);
  }
  for (int i = 1; i <= 5; ++i)
    detail::add_conv3d(p, "mfa.conv" + std::to_string(i), cfg.aggregated_channels,
                       cfg.aggregated_channels, rng);
  detail::add_conv3d(p, "mfa.conv6", cfg.aggregated_channels, 1, rng);
  return p;
}

// ---------------------------------------------------------------------------
// MFE branches
// ---------------------------------------------------------------------------

/// Three conv+ReLU layers; returns the final features, optionally with the
/// mid-layer features concatenated on the channel axis.
template <typename T>
Tensor<T> mfe_encode(const Tensor<T>& input, ParamStore<T>& params, const std::string& branch,
                     const NetworkConfig& cfg, bool concat_mid) {
  const auto [b0, b1, b2] = cfg.branch_channels;
  size_t in_ch = input.shape()[0];
  size_t s1, s2;
  detail::branch_strides(cfg.feature_scale, s1, s2);
  if (input.shape()[1] % cfg.feature_scale != 0 || input.shape()[2] % cfg.feature_scale != 0)
    throw std::invalid_argument("mfe_encode: extents " + shape_str(input.shape()) +
                                " not divisible by feature_scale");
  auto conv = [&](const Tensor<T>& x, const std::string& name, size_t ic, size_t oc, size_t s) {
    auto spec = ConvSpec::conv2d(ic, oc, 3, s, 1);
    return relu(conv2d(x, spec, params.at("mfe." + branch + "." + name + ".weight"),
                       params.at("mfe." + branch + "." + name + ".bias")));
  };
  auto h1 = conv(input, "conv1", in_ch, b0, s1);
  auto h2 = conv(h1, "conv2", b0, b1, s2);
  auto h3 = conv(h2, "conv3", b1, b2, 1);
  return concat_mid ? concat<T>({h2, h3}, 0) : h3;
}

template <typename T>
struct StereoFeatures {
  Tensor<T> ref_feat;    // features of the disparity reference view
  Tensor<T> other_feat;  // features of the opposite view
  Tensor<T> corr;        // [D/fs, h, w]
};

/// Shared-weight stereo feature extraction + 1D correlation. `shift_sign` is
/// +1 when ref is the left view, -1 when ref is the right view.
template <typename T>
StereoFeatures<T> mfe_stereo_branch(const Tensor<T>& ref_img, const Tensor<T>& other_img,
                                    ParamStore<T>& params, const NetworkConfig& cfg,
                                    int shift_sign) {
  if (ref_img.shape() != other_img.shape())
    throw std::invalid_argument("mfe_stereo_branch: image extents differ");
  StereoFeatures<T> out;
  out.ref_feat = mfe_encode(ref_img, params, "stereo", cfg, true);
  out.other_feat = mfe_encode(other_img, params, "stereo", cfg, true);
  out.corr = correlation1d(out.ref_feat, out.other_feat,
                           cfg.max_disparity / cfg.feature_scale, shift_sign);
  return out;
}

/// RGB + normalized sparse depth (invalid = 0) -> features.
template <typename T>
Tensor<T> mfe_depth_branch(const Tensor<T>& image, const Tensor<T>& sparse_norm,
                           ParamStore<T>& params, const NetworkConfig& cfg) {
  if (image.shape()[1] != sparse_norm.shape()[0] || image.shape()[2] != sparse_norm.shape()[1])
    throw std::invalid_argument("mfe_depth_branch: image/depth extent mismatch");
  auto depth_ch = reshape(sparse_norm, {1, sparse_norm.shape()[0], sparse_norm.shape()[1]});
  auto input = concat<T>({image, depth_ch}, 0);
  return mfe_encode(input, params, "depth", cfg, false);
}

template <typename T>
Tensor<T> mfe_image_branch(const Tensor<T>& image, ParamStore<T>& params,
                           const NetworkConfig& cfg) {
  return mfe_encode(image, params, "image", cfg, false);
}

// ---------------------------------------------------------------------------
// CFFL / CFAL / MFA / DRL
// ---------------------------------------------------------------------------

template <typename T>
struct BranchOutputs {
  std::optional<StereoFeatures<T>> stereo;
  std::optional<Tensor<T>> depth_feat;
  std::optional<Tensor<T>> image_feat;
  int shift_sign = 1;
};

/// Builds the 4D cost volume for the given combo. Non-disparity features are
/// replicated across the disparity axis; stereo features contribute the
/// correlation channel plus shifted opposite-view features.
template <typename T>
Tensor<T> cffl_fuse(const BranchOutputs<T>& outs, ModalCombo combo, const NetworkConfig& cfg) {
  const size_t dc = cfg.max_disparity / cfg.feature_scale;
  auto need = [&](bool present, const char* what) {
    if (!present)
      throw std::invalid_argument(std::string("cffl_fuse: combo ") + combo_name(combo) +
                                  " requires the " + what + " branch output");
  };
  std::vector<Tensor<T>> parts;
  if (combo == ModalCombo::DualLidar || combo == ModalCombo::MonoLidar) {
    need(outs.depth_feat.has_value(), "depth");
    parts.push_back(broadcast_disparity(*outs.depth_feat, dc));
  }
  need(outs.image_feat.has_value(), "image");
  parts.push_back(broadcast_disparity(*outs.image_feat, dc));
  if (combo == ModalCombo::DualLidar || combo == ModalCombo::Dual) {
    need(outs.stereo.has_value(), "stereo");
    const auto& st = *outs.stereo;
    const Shape& cs = st.corr.shape();
    parts.push_back(reshape(st.corr, {1, cs[0], cs[1], cs[2]}));
    parts.push_back(shift_stack(st.other_feat, dc, outs.shift_sign));
  }
  auto cv = concat(parts, 0);
  if (cv.shape()[0] != cfg.cffl_channels(combo))
    throw std::logic_error("cffl_fuse: channel accounting mismatch");
  return cv;
}

/// Two 3D conv + ReLU layers with combo-selected weights; variable input
/// width, fixed output width.
template <typename T>
Tensor<T> cfal_aggregate(const Tensor<T>& cv, ModalCombo combo, ParamStore<T>& params,
                         const NetworkConfig& cfg) {
  if (cv.shape()[0] != cfg.cffl_channels(combo))
    throw std::invalid_argument("cfal_aggregate: volume has " + std::to_string(cv.shape()[0]) +
                                " channels, combo " + combo_name(combo) + " expects " +
                                std::to_string(cfg.cffl_channels(combo)));
  std::string prefix = std::string("cfal.") + combo_name(combo);
  auto spec1 = ConvSpec::conv3d(cv.shape()[0], cfg.aggregated_channels, 3, 1, 1);
  auto spec2 = ConvSpec::conv3d(cfg.aggregated_channels, cfg.aggregated_channels, 3, 1, 1);
  auto h = relu(conv3d(cv, spec1, params.at(prefix + ".conv1.weight"),
                       params.at(prefix + ".conv1.bias")));
  return relu(conv3d(h, spec2, params.at(prefix + ".conv2.weight"),
                     params.at(prefix + ".conv2.bias")));
}

/// Six 3x3x3 conv layers with three residual skip-adds; final 1-channel cost.
template <typename T>
Tensor<T> mfa(const Tensor<T>& cv, ParamStore<T>& params, const NetworkConfig& cfg) {
  const size_t c = cfg.aggregated_channels;
  if (cv.shape()[0] != c)
    throw std::invalid_argument("mfa: expected " + std::to_string(c) + " channels");
  auto spec = ConvSpec::conv3d(c, c, 3, 1, 1);
  auto conv = [&](const Tensor<T>& x, int i, const ConvSpec& s) {
    return conv3d(x, s, params.at("mfa.conv" + std::to_string(i) + ".weight"),
                  params.at("mfa.conv" + std::to_string(i) + ".bias"));
  };
  auto h1 = relu(conv(cv, 1, spec));
  auto h2 = relu(add(conv(h1, 2, spec), h1));
  auto h3 = relu(conv(h2, 3, spec));
  auto h4 = relu(add(conv(h3, 4, spec), h3));
  auto h5 = relu(add(conv(h4, 5, spec), h4));
  return conv(h5, 6, ConvSpec::conv3d(c, 1, 3, 1, 1));
}

/// Converts soft-argmax disparity to depth: fb / max(disp, eps).
template <typename T>
Tensor<T> disparity_to_depth(const Tensor<T>& disp, const Calibration& calib, T eps) {
  T fb = static_cast<T>(calib.focal_px) * static_cast<T>(calib.baseline_m);
  std::vector<T> out(disp.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fb / std::max(disp.values()[i], eps);
  auto dn = disp.node();
  return make_op<T>(disp.shape(), std::move(out), {disp}, [dn, fb, eps](auto& n) {
    auto& g = ensure_grad<T>(*dn);
    for (size_t i = 0; i < g.size(); ++i) {
      T d = dn->values[i];
      if (d > eps) g[i] -= n.grad[i] * fb / (d * d);
    }
  });
}

template <typename T>
struct Regression {
  Tensor<T> disparity;  // [H,W] pixels
  Tensor<T> depth;      // [H,W] meters
  Tensor<T> probabilities;  // [D,H,W]
};

/// Trilinear upsample to full resolution, softmax over negated cost along the
/// disparity axis, expectation, then depth conversion.
template <typename T>
Regression<T> drl(const Tensor<T>& cost, const Calibration& calib, const NetworkConfig& cfg,
                  size_t full_h, size_t full_w) {
  if (cost.shape().size() != 4 || cost.shape()[0] != 1)
    throw std::invalid_argument("drl: cost must be [1,D',H',W']");
  auto up = trilinear_upsample(cost, cfg.max_disparity, full_h, full_w);
  auto vol = reshape(up, {cfg.max_disparity, full_h, full_w});
  Regression<T> out;
  out.probabilities = softmax(scale(vol, T(-1)), 0);
  out.disparity = expected_index(out.probabilities);
  out.depth = disparity_to_depth(out.disparity, calib, static_cast<T>(cfg.min_disparity_eps));
  return out;
}

// ---------------------------------------------------------------------------
// full forward
// ---------------------------------------------------------------------------

template <typename T>
struct ForwardInputs {
  Tensor<T> left, right;              // [3,H,W]
  Tensor<T> sparse_left, sparse_right;  // [H,W], meters (0 = invalid)
  Calibration calib;
};

template <typename T>
ForwardInputs<T> to_forward_inputs(const StereoSample& s) {
  auto img = [](const Image& im) {
    std::vector<T> v(im.chw.begin(), im.chw.end());
    return Tensor<T>::from({3, im.height, im.width}, std::move(v));
  };
  auto dep = [](const DepthMap& m) {
    std::vector<T> v(m.meters.begin(), m.meters.end());
    return Tensor<T>::from({m.height, m.width}, std::move(v));
  };
  return ForwardInputs<T>{img(s.left), img(s.right), dep(s.sparse_left), dep(s.sparse_right),
                          s.calib};
}

/// Composes the branches the combo consumes; inputs outside the combo's
/// signature are never read. side=Right regresses right-view disparity by
/// referencing the right image and flipping the correlation direction.
template <typename T>
Regression<T> forward(const ForwardInputs<T>& in, ModalCombo combo, ParamStore<T>& params,
                      const NetworkConfig& cfg, Side side = Side::Left) {
  cfg.validate();
  if (combo == ModalCombo::MonoLidar && side == Side::Right)
    throw std::invalid_argument("forward: mono_lidar has no stereo features for a right-view pass");
  const size_t H = in.left.shape()[1], W = in.left.shape()[2];

  const Tensor<T>& ref_img = side == Side::Left ? in.left : in.right;
  const Tensor<T>& other_img = side == Side::Left ? in.right : in.left;
  const Tensor<T>& ref_sparse = side == Side::Left ? in.sparse_left : in.sparse_right;
  const int sign = side == Side::Left ? 1 : -1;

  BranchOutputs<T> outs;
  outs.shift_sign = sign;
  if (combo != ModalCombo::MonoLidar)
    outs.stereo = mfe_stereo_branch(ref_img, other_img, params, cfg, sign);
  if (combo != ModalCombo::Dual) {
    auto norm = scale(ref_sparse, T(1) / static_cast<T>(kMaxDepthM));
    outs.depth_feat = mfe_depth_branch(ref_img, norm, params, cfg);
  }
  outs.image_feat = mfe_image_branch(ref_img, params, cfg);

  auto cv = cffl_fuse(outs, combo, cfg);
  auto agg = cfal_aggregate(cv, combo, params, cfg);
  auto cost = mfa(agg, params, cfg);
  return drl(cost, in.calib, cfg, H, W);
}

template <typename T>
Regression<T> forward(const StereoSample& sample, ModalCombo combo, ParamStore<T>& params,
                      const NetworkConfig& cfg, Side side = Side::Left) {
  auto in = to_forward_inputs<T>(sample);
  return forward(in, combo, params, cfg, side);
}

}  // namespace uamd
