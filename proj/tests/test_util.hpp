#pragma once

#include <cmath>
#include <random>

#include "uamd/tensor.hpp"

namespace uamd::testutil {

inline Tensor<double> rand_tensor(const Shape& shape, std::mt19937& rng, double lo = -1.0,
                                  double hi = 1.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor<double>::from(shape, std::move(v), requires_grad);
}

/// Central finite-difference check of d(loss)/d(leaf). `make_loss` must build
/// a fresh graph from the leaf's current values on every call. Returns the
/// worst relative error across elements.
template <typename LossFn>
double max_fd_rel_error(Tensor<double>& leaf, LossFn make_loss) {
  leaf.clear_grad();
  auto loss = make_loss();
  loss.backward();
  std::vector<double> analytic = leaf.grad();

  double worst = 0.0;
  auto& vals = leaf.mutable_values();
  for (size_t i = 0; i < vals.size(); ++i) {
    double x = vals[i];
    auto probe = [&](double h) {
      vals[i] = x + h;
      double f1 = make_loss().item();
      vals[i] = x - h;
      double f2 = make_loss().item();
      vals[i] = x;
      double fd = (f1 - f2) / (2.0 * h);
      if (std::abs(analytic[i] - fd) < 1e-8) return 0.0;  // below FD noise floor
      double denom = std::max(std::abs(analytic[i]), std::abs(fd));
      return denom < 1e-7 ? std::abs(analytic[i] - fd)
                          : std::abs(analytic[i] - fd) / denom;
    };
    double scale = std::max(1.0, std::abs(x));
    double err = probe(1e-5 * scale);
    // a ReLU kink inside the probe interval makes the secant disagree with the
    // one-sided analytic derivative, and very flat directions drown in
    // cancellation; vary the step before concluding
    if (err > 1e-4) err = std::min(err, probe(1e-4 * scale));
    if (err > 1e-4) err = std::min(err, probe(1e-6 * scale));
    if (err > 1e-4) err = std::min(err, probe(1e-7 * scale));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace uamd::testutil
