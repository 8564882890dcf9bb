#pragma once

#include <cmath>
#include <optional>

#include "uamd/data.hpp"
#include "uamd/tensor.hpp"

namespace uamd {

struct LossWeights {
  double w_l = 1.0;
  double w_p = 1.3;
  double w_g = 0.01;
  double w_n = 0.1;
};

struct PhotometricConfig {
  double alpha = 0.85;  // SSIM vs L1 mix on a 3x3 block filter
};

struct ValidMask {
  std::vector<uint8_t> mask;
  size_t count = 0;
};

inline ValidMask valid_mask(const DepthMap& m) {
  ValidMask out;
  out.mask.resize(m.meters.size());
  for (size_t i = 0; i < m.meters.size(); ++i) {
    out.mask[i] = m.meters[i] > 0.f ? 1 : 0;
    out.count += out.mask[i];
  }
  return out;
}

template <typename T>
Tensor<T> depth_as_tensor(const DepthMap& m) {
  std::vector<T> v(m.meters.begin(), m.meters.end());
  return Tensor<T>::from({m.height, m.width}, std::move(v));
}

template <typename T>
Tensor<T> image_as_tensor(const Image& im) {
  std::vector<T> v(im.chw.begin(), im.chw.end());
  return Tensor<T>::from({3, im.height, im.width}, std::move(v));
}

/// Mean squared depth error over the gt-valid pixels (supervised objective).
template <typename T>
Tensor<T> loss_sup(const Tensor<T>& pred, const DepthMap& gt) {
  auto vm = valid_mask(gt);
  if (vm.count == 0) throw std::invalid_argument("loss_sup: no valid ground-truth pixels");
  return masked_mean(square(sub(depth_as_tensor<T>(gt), pred)), vm.mask);
}

/// Mean absolute depth error over the sparse-valid pixels.
template <typename T>
Tensor<T> loss_lidar(const Tensor<T>& pred, const DepthMap& sparse_gt) {
  auto vm = valid_mask(sparse_gt);
  if (vm.count == 0) throw std::invalid_argument("loss_lidar: no valid sparse pixels");
  return masked_mean(abs_t(sub(depth_as_tensor<T>(sparse_gt), pred)), vm.mask);
}

/// L1 against SGM-generated labels; identical contract to loss_lidar.
template <typename T>
Tensor<T> loss_noise(const Tensor<T>& pred, const DepthMap& noise_depth) {
  auto vm = valid_mask(noise_depth);
  if (vm.count == 0) throw std::invalid_argument("loss_noise: no valid noise-label pixels");
  return masked_mean(abs_t(sub(depth_as_tensor<T>(noise_depth), pred)), vm.mask);
}

enum class WarpDirection {
  FromRight,  // reconstruct the left view: sample source at x - d(x)
  FromLeft,   // reconstruct the right view: sample source at x + d(x)
};

template <typename T>
struct Warped {
  Tensor<T> image;              // [3,H,W]
  std::vector<uint8_t> valid;   // H*W, 1 where the sample stayed in range
};

/// Horizontal view-synthesis warp with linear interpolation, differentiable
/// w.r.t. both the source image and the disparity map.
template <typename T>
Warped<T> warp_image(const Tensor<T>& source, const Tensor<T>& disparity, WarpDirection dir) {
  if (source.shape().size() != 3 || source.shape()[0] != 3)
    throw std::invalid_argument("warp_image: source must be [3,H,W]");
  const size_t H = source.shape()[1], W = source.shape()[2];
  if (disparity.shape() != Shape{H, W})
    throw std::invalid_argument("warp_image: disparity extent mismatch");
  const T s = dir == WarpDirection::FromRight ? T(-1) : T(1);

  std::vector<T> out(3 * H * W, T(0));
  Warped<T> result;
  result.valid.assign(H * W, 0);
  const T* src = source.values().data();
  const T* dsp = disparity.values().data();
  std::vector<size_t> x0s(H * W, 0);
  std::vector<T> fracs(H * W, T(0));
  for (size_t y = 0; y < H; ++y)
    for (size_t x = 0; x < W; ++x) {
      T xs = static_cast<T>(x) + s * dsp[y * W + x];
      if (!(xs >= T(0)) || !(xs <= static_cast<T>(W - 1))) continue;
      size_t x0 = static_cast<size_t>(xs);
      if (x0 >= W - 1) x0 = W - 2;
      T f = xs - static_cast<T>(x0);
      result.valid[y * W + x] = 1;
      x0s[y * W + x] = x0;
      fracs[y * W + x] = f;
      for (size_t c = 0; c < 3; ++c) {
        const T* row = src + (c * H + y) * W;
        out[(c * H + y) * W + x] = row[x0] * (T(1) - f) + row[x0 + 1] * f;
      }
    }

  auto src_n = source.node();
  auto dsp_n = disparity.node();
  auto valid = result.valid;
  result.image = make_op<T>(
      {3, H, W}, std::move(out), {source, disparity},
      [src_n, dsp_n, valid, x0s, fracs, s, H, W](auto& n) {
        for (size_t y = 0; y < H; ++y)
          for (size_t x = 0; x < W; ++x) {
            size_t i = y * W + x;
            if (!valid[i]) continue;
            size_t x0 = x0s[i];
            T f = fracs[i];
            for (size_t c = 0; c < 3; ++c) {
              T go = n.grad[(c * H + y) * W + x];
              if (go == T(0)) continue;
              const T* row = src_n->values.data() + (c * H + y) * W;
              if (src_n->requires_grad) {
                auto& gs = ensure_grad<T>(*src_n);
                gs[(c * H + y) * W + x0] += go * (T(1) - f);
                gs[(c * H + y) * W + x0 + 1] += go * f;
              }
              if (dsp_n->requires_grad)
                ensure_grad<T>(*dsp_n)[i] += go * s * (row[x0 + 1] - row[x0]);
            }
          }
      });
  return result;
}

namespace detail {

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& chw) {
  const size_t H = chw.shape()[1], W = chw.shape()[2];
  auto acc = reshape(slice(chw, 0, 0, 1), {H, W});
  for (size_t c = 1; c < chw.shape()[0]; ++c)
    acc = add(acc, reshape(slice(chw, 0, c, 1), {H, W}));
  return scale(acc, T(1) / static_cast<T>(chw.shape()[0]));
}

}  // namespace detail

/// Per-pixel SSIM with 3x3 uniform windows and (0.01, 0.03) stabilizers on the
/// [0,1] range, averaged over channels -> [H,W].
template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "ssim");
  const T c1 = T(0.01) * T(0.01);
  const T c2 = T(0.03) * T(0.03);
  auto mu_a = box_filter3(a);
  auto mu_b = box_filter3(b);
  auto sigma_a = sub(box_filter3(mul(a, a)), mul(mu_a, mu_a));
  auto sigma_b = sub(box_filter3(mul(b, b)), mul(mu_b, mu_b));
  auto sigma_ab = sub(box_filter3(mul(a, b)), mul(mu_a, mu_b));
  auto num = mul(add_scalar(scale(mul(mu_a, mu_b), T(2)), c1),
                 add_scalar(scale(sigma_ab, T(2)), c2));
  auto den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1),
                 add_scalar(add(sigma_a, sigma_b), c2));
  return detail::channel_mean(div(num, den));
}

/// alpha*(1-SSIM)/2 + (1-alpha)*L1, averaged over the validity mask.
template <typename T>
Tensor<T> loss_photometric(const Tensor<T>& image, const Tensor<T>& reconstruction,
                           const std::vector<uint8_t>& validity, const PhotometricConfig& cfg) {
  check_same_shape(image, reconstruction, "loss_photometric");
  size_t n = 0;
  for (uint8_t v : validity) n += v;
  if (n == 0) throw std::invalid_argument("loss_photometric: empty validity mask");
  auto dssim = scale(add_scalar(scale(ssim(image, reconstruction), T(-1)), T(1)), T(0.5));
  auto l1 = detail::channel_mean(abs_t(sub(image, reconstruction)));
  auto per_pixel = add(scale(dssim, static_cast<T>(cfg.alpha)),
                       scale(l1, static_cast<T>(1.0 - cfg.alpha)));
  return masked_mean(per_pixel, validity);
}

/// Edge-aware smoothness: |dx d|*exp(-||dx I||) + |dy d|*exp(-||dy I||) with
/// forward differences; each direction is averaged over the pixels where the
/// difference is defined.
template <typename T>
Tensor<T> loss_gradient(const Tensor<T>& disparity_or_depth, const Image& image) {
  const size_t H = disparity_or_depth.shape()[0], W = disparity_or_depth.shape()[1];
  if (image.height != H || image.width != W)
    throw std::invalid_argument("loss_gradient: image extent mismatch");

  // image-gradient attenuation, channel-L1 norm; constants w.r.t. the graph
  std::vector<T> wx(H * W, T(0)), wy(H * W, T(0));
  std::vector<uint8_t> mx(H * W, 0), my(H * W, 0);
  for (size_t y = 0; y < H; ++y)
    for (size_t x = 0; x < W; ++x) {
      if (x + 1 < W) {
        T g = 0;
        for (size_t c = 0; c < 3; ++c)
          g += std::abs(static_cast<T>(image.at(c, y, x + 1)) - static_cast<T>(image.at(c, y, x)));
        wx[y * W + x] = std::exp(-g);
        mx[y * W + x] = 1;
      }
      if (y + 1 < H) {
        T g = 0;
        for (size_t c = 0; c < 3; ++c)
          g += std::abs(static_cast<T>(image.at(c, y + 1, x)) - static_cast<T>(image.at(c, y, x)));
        wy[y * W + x] = std::exp(-g);
        my[y * W + x] = 1;
      }
    }
  auto term_x = masked_mean(mul(abs_t(finite_diff(disparity_or_depth, 0)),
                                Tensor<T>::from({H, W}, std::move(wx))),
                            mx);
  auto term_y = masked_mean(mul(abs_t(finite_diff(disparity_or_depth, 1)),
                                Tensor<T>::from({H, W}, std::move(wy))),
                            my);
  return add(term_x, term_y);
}

template <typename T>
struct SemiComponents {
  Tensor<T> lidar;
  Tensor<T> photometric;
  Tensor<T> gradient;
  std::optional<Tensor<T>> noise;
};

/// Weighted multi-task total of the semi-supervised objective.
template <typename T>
Tensor<T> loss_semi(const SemiComponents<T>& c, const LossWeights& w) {
  auto total = add(add(scale(c.lidar, static_cast<T>(w.w_l)),
                       scale(c.photometric, static_cast<T>(w.w_p))),
                   scale(c.gradient, static_cast<T>(w.w_g)));
  if (c.noise) total = add(total, scale(*c.noise, static_cast<T>(w.w_n)));
  return total;
}

}  // namespace uamd
