#pragma once

#include <array>
#include <cmath>
#include <iostream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "uamd/losses.hpp"
#include "uamd/network.hpp"

namespace uamd {

enum class TrainMode { Supervised, Semi };

struct TrainConfig {
  TrainMode mode = TrainMode::Supervised;
  bool modal_dropout = false;
  ModalCombo fixed_combo = ModalCombo::DualLidar;
  LossWeights weights;
  PhotometricConfig photometric;
  double lr0 = 1e-4;
  size_t batch_size = 4;
  uint64_t seed = 0;
  size_t max_epochs = 0;  // 0 = unbounded, stop on max_steps
  size_t max_steps = 0;   // 0 = unbounded, stop on max_epochs
  // schedule breakpoints (multipliers are fixed: x0.5/x0.1/x0.01 supervised,
  // x0.1/x0.01 semi); small-dataset runs may stretch the epoch breakpoints
  std::array<size_t, 3> sup_decay_epochs{10, 14, 17};
  std::array<size_t, 2> semi_decay_iters{10000, 14000};

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (max_epochs == 0 && max_steps == 0)
      throw std::invalid_argument("TrainConfig: set max_epochs or max_steps");
    if (weights.w_l < 0 || weights.w_p < 0 || weights.w_g < 0 || weights.w_n < 0)
      throw std::invalid_argument("TrainConfig: loss weights must be nonnegative");
    if (sup_decay_epochs[0] > sup_decay_epochs[1] || sup_decay_epochs[1] > sup_decay_epochs[2] ||
        semi_decay_iters[0] > semi_decay_iters[1])
      throw std::invalid_argument("TrainConfig: decay breakpoints must be nondecreasing");
  }
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Piecewise-constant learning rate. Supervised decays by epoch
/// (x0.5 @10, x0.1 @14, x0.01 @17); semi by iteration (x0.1 @10e3, x0.01
/// @14e3, held thereafter).
inline double lr_at(TrainMode mode, size_t epoch, size_t iteration, double lr0,
                    const std::array<size_t, 3>& sup_epochs = {10, 14, 17},
                    const std::array<size_t, 2>& semi_iters = {10000, 14000}) {
  if (mode == TrainMode::Supervised) {
    if (epoch >= sup_epochs[2]) return lr0 * 0.01;
    if (epoch >= sup_epochs[1]) return lr0 * 0.1;
    if (epoch >= sup_epochs[0]) return lr0 * 0.5;
    return lr0;
  }
  if (iteration >= semi_iters[1]) return lr0 * 0.01;
  if (iteration >= semi_iters[0]) return lr0 * 0.1;
  return lr0;
}

/// Modal-dropout trigger: a seeded uniform draw over the mode's combo
/// universe (three combos supervised, two semi-supervised).
struct MdtState {
  TrainMode mode = TrainMode::Supervised;
  std::mt19937_64 rng;

  MdtState(TrainMode m, uint64_t seed) : mode(m), rng(seed) {}
};

inline ModalCombo mdt_sample(MdtState& state) {
  if (state.mode == TrainMode::Supervised) {
    std::uniform_int_distribution<int> d(0, 2);
    switch (d(state.rng)) {
      case 0: return ModalCombo::DualLidar;
      case 1: return ModalCombo::MonoLidar;
      default: return ModalCombo::Dual;
    }
  }
  std::uniform_int_distribution<int> d(0, 1);
  return d(state.rng) == 0 ? ModalCombo::DualLidar : ModalCombo::Dual;
}

template <typename T>
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  size_t t = 0;
  std::unordered_map<std::string, std::pair<std::vector<T>, std::vector<T>>> state;

  void step(ParamStore<T>& params, double lr) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (const auto& name : params.order) {
      auto& p = params.at(name);
      if (p.node()->grad.empty()) continue;
      auto& [m, v] = state[name];
      if (m.empty()) {
        m.assign(p.size(), T(0));
        v.assign(p.size(), T(0));
      }
      auto& vals = p.mutable_values();
      const auto& g = p.grad();
      for (size_t i = 0; i < vals.size(); ++i) {
        double gi = static_cast<double>(g[i]);
        m[i] = static_cast<T>(beta1 * m[i] + (1.0 - beta1) * gi);
        v[i] = static_cast<T>(beta2 * v[i] + (1.0 - beta2) * gi * gi);
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        vals[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }
};

template <typename T>
struct StepResult {
  double loss = 0.0;
  double l_lidar = 0.0, l_photo = 0.0, l_grad = 0.0, l_noise = 0.0;
  bool skipped = false;
};

/// One supervised step: left-view forward, L2 against dense gt, Adam update.
/// Returns the pre-update loss; skips (no update) when every sample in the
/// batch has an empty valid mask.
template <typename T>
StepResult<T> train_step_supervised(std::span<const StereoSample> batch, ModalCombo combo,
                                    ParamStore<T>& params, const NetworkConfig& net_cfg,
                                    const TrainConfig& cfg, Adam<T>& opt, double lr) {
  std::vector<Tensor<T>> losses;
  for (const auto& s : batch) {
    if (valid_mask(s.gt).count == 0) {
      std::cerr << "warning: sample " << s.id << " has no valid gt pixels, skipped\n";
      continue;
    }
    auto reg = forward(s, combo, params, net_cfg, Side::Left);
    losses.push_back(loss_sup(reg.depth, s.gt));
  }
  StepResult<T> out;
  if (losses.empty()) {
    std::cerr << "warning: entire batch lacked supervision, step skipped\n";
    out.skipped = true;
    return out;
  }
  auto total = losses[0];
  for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  total = scale(total, T(1) / static_cast<T>(losses.size()));
  out.loss = static_cast<double>(total.item());
  params.zero_grad();
  total.backward();
  opt.step(params, lr);
  return out;
}

/// One semi-supervised step: right-view forward, right-image reconstruction
/// from the left image, weighted multi-task total, Adam update. The sparse
/// right map supervises the lidar term even when the combo excludes LiDAR
/// from the network input.
template <typename T>
StepResult<T> train_step_semi(std::span<const StereoSample> batch, ModalCombo combo,
                              ParamStore<T>& params, const NetworkConfig& net_cfg,
                              const TrainConfig& cfg, Adam<T>& opt, double lr) {
  if (combo == ModalCombo::MonoLidar)
    throw std::invalid_argument(
        "train_step_semi: the semi-supervised universe is {dual_lidar, dual}; mono_lidar has no "
        "right-view pass");
  std::vector<Tensor<T>> totals;
  StepResult<T> out;
  size_t used = 0;
  for (const auto& s : batch) {
    auto in = to_forward_inputs<T>(s);
    auto reg = forward(in, combo, params, net_cfg, Side::Right);

    auto warped = warp_image(in.left, reg.disparity, WarpDirection::FromLeft);
    SemiComponents<T> comps;
    comps.photometric = loss_photometric(in.right, warped.image, warped.valid, cfg.photometric);
    comps.gradient = loss_gradient(reg.disparity, s.right);
    if (valid_mask(s.sparse_right).count == 0) {
      std::cerr << "warning: sample " << s.id << " has no sparse supervision, skipped\n";
      continue;
    }
    comps.lidar = loss_lidar(reg.depth, s.sparse_right);
    if (s.noise && cfg.weights.w_n > 0 && valid_mask(*s.noise).count > 0)
      comps.noise = loss_noise(reg.depth, *s.noise);
    out.l_lidar += static_cast<double>(comps.lidar.item());
    out.l_photo += static_cast<double>(comps.photometric.item());
    out.l_grad += static_cast<double>(comps.gradient.item());
    if (comps.noise) out.l_noise += static_cast<double>(comps.noise->item());
    totals.push_back(loss_semi(comps, cfg.weights));
    ++used;
  }
  if (totals.empty()) {
    std::cerr << "warning: entire batch lacked supervision, step skipped\n";
    out.skipped = true;
    return out;
  }
  auto total = totals[0];
  for (size_t i = 1; i < totals.size(); ++i) total = add(total, totals[i]);
  total = scale(total, T(1) / static_cast<T>(used));
  out.loss = static_cast<double>(total.item());
  out.l_lidar /= static_cast<double>(used);
  out.l_photo /= static_cast<double>(used);
  out.l_grad /= static_cast<double>(used);
  out.l_noise /= static_cast<double>(used);
  params.zero_grad();
  total.backward();
  opt.step(params, lr);
  return out;
}

struct TraceRow {
  size_t step = 0, epoch = 0;
  std::string combo;
  double lr = 0, loss = 0;
  double l_lidar = 0, l_photo = 0, l_grad = 0, l_noise = 0;
};

template <typename T>
struct FitResult {
  ParamStore<T> params;
  std::vector<TraceRow> trace;
};

/// Full optimization loop: per-batch combo draw (modal dropout or fixed),
/// mode-specific step and LR schedule, divergence guard after 10 consecutive
/// non-finite losses.
template <typename T>
FitResult<T> fit(const std::vector<StereoSample>& dataset, const NetworkConfig& net_cfg,
                 const TrainConfig& cfg) {
  cfg.validate();
  net_cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("fit: empty dataset");
  FitResult<T> result;
  result.params = init_params<T>(net_cfg, cfg.seed);
  Adam<T> opt;
  MdtState mdt(cfg.mode, cfg.seed ^ 0x6d647475ull);

  size_t step = 0, bad_streak = 0;
  for (size_t epoch = 0;; ++epoch) {
    if (cfg.max_epochs > 0 && epoch >= cfg.max_epochs) break;
    if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
    for (size_t start = 0; start < dataset.size(); start += cfg.batch_size) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
      size_t count = std::min(cfg.batch_size, dataset.size() - start);
      std::span<const StereoSample> batch(dataset.data() + start, count);
      ModalCombo combo = cfg.modal_dropout ? mdt_sample(mdt) : cfg.fixed_combo;
      double lr = lr_at(cfg.mode, epoch, step, cfg.lr0, cfg.sup_decay_epochs,
                        cfg.semi_decay_iters);
      StepResult<T> r = cfg.mode == TrainMode::Supervised
                            ? train_step_supervised(batch, combo, result.params, net_cfg, cfg,
                                                    opt, lr)
                            : train_step_semi(batch, combo, result.params, net_cfg, cfg, opt, lr);
      if (r.skipped) continue;
      if (!std::isfinite(r.loss)) {
        if (++bad_streak >= 10)
          throw DivergenceError("fit: loss non-finite for 10 consecutive steps");
      } else {
        bad_streak = 0;
      }
      result.trace.push_back({step, epoch, combo_name(combo), lr, r.loss, r.l_lidar, r.l_photo,
                              r.l_grad, r.l_noise});
      ++step;
    }
  }
  return result;
}

inline void write_trace_csv(const std::vector<TraceRow>& trace, std::ostream& os) {
  os << "step,epoch,combo,lr,loss,l_lidar,l_photo,l_grad,l_noise\n";
  for (const auto& r : trace)
    os << r.step << ',' << r.epoch << ',' << r.combo << ',' << r.lr << ',' << r.loss << ','
       << r.l_lidar << ',' << r.l_photo << ',' << r.l_grad << ',' << r.l_noise << '\n';
}

}  // namespace uamd
