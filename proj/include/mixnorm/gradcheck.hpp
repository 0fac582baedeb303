#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "mixnorm/tensor.hpp"

// Central-difference gradient oracle. All backward passes in the repository
// are verified against this; it must stay independent of them. Always 64-bit.

namespace mixnorm {

template <typename F>
TensorD finite_diff_grad(F&& f, const TensorD& x, double h = 1e-5) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  TensorD grad(x.shape());
  TensorD probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double fp = f(std::as_const(probe));
    probe[i] = saved - h;
    const double fm = f(std::as_const(probe));
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error(
          "finite_diff_grad: non-finite evaluation at coordinate " +
          std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// Worst absolute deviation scaled by the largest gradient magnitude of
// either side. Zero when both gradients vanish.
inline double max_rel_error(const TensorD& got, const TensorD& want) {
  if (!got.same_shape(want))
    throw std::invalid_argument("max_rel_error: shape mismatch");
  double scale = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i)
    scale = std::max({scale, std::abs(got[i]), std::abs(want[i])});
  if (scale == 0.0) return 0.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i)
    worst = std::max(worst, std::abs(got[i] - want[i]));
  return worst / scale;
}

}  // namespace mixnorm
