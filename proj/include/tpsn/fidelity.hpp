#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "tpsn/core.hpp"

namespace tpsn {

/// A scalar loss and its gradient with respect to the predicted mask values.
struct MaskLoss {
  double value = 0.0;
  std::vector<double> gradient;
};

inline constexpr double kDiceSmoothing = 1e-6;

/// Soft Dice loss 1 - (2 sum(p l) + eps) / (sum p + sum l + eps).
inline MaskLoss dice_loss(const SoftMask& pred, const SoftMask& label, double eps = kDiceSmoothing) {
  require_same_grid(pred.grid(), label.grid(), "dice_loss");
  const std::size_t n = pred.size();
  std::vector<double> prod(n);
  for (std::size_t i = 0; i < n; ++i) prod[i] = pred[i] * label[i];
  const double num = 2.0 * pairwise_sum(prod) + eps;
  const double den = pred.mass() + label.mass() + eps;

  MaskLoss r{1.0 - num / den, std::vector<double>(n)};
  const double inv_den2 = 1.0 / (den * den);
  for (std::size_t i = 0; i < n; ++i) r.gradient[i] = -(2.0 * label[i] * den - num) * inv_den2;
  return r;
}

/// Region means of the image inside (c1) and outside (c2) a soft mask.
struct ChanVeseStats {
  double c1 = 0.0;
  double c2 = 0.0;
  double foreground_mass = 0.0;
  double background_mass = 0.0;
};

inline constexpr double kDegenerateMass = 1e-8;

inline ChanVeseStats chan_vese_stats(const Image& img, const SoftMask& pred) {
  require_same_grid(img.grid(), pred.grid(), "chan_vese_stats");
  const std::size_t n = img.size();
  std::vector<double> fg(n), bg(n), bg_mass(n);
  for (std::size_t i = 0; i < n; ++i) {
    fg[i] = img[i] * pred[i];
    bg[i] = img[i] * (1.0 - pred[i]);
    bg_mass[i] = 1.0 - pred[i];
  }
  ChanVeseStats s;
  s.foreground_mass = pred.mass();
  s.background_mass = pairwise_sum(bg_mass);
  const double mean = pairwise_sum(img.values()) / static_cast<double>(n);
  s.c1 = s.foreground_mass < kDegenerateMass ? mean : pairwise_sum(fg) / s.foreground_mass;
  s.c2 = s.background_mass < kDegenerateMass ? mean : pairwise_sum(bg) / s.background_mass;
  return s;
}

struct ChanVeseOptions {
  /// Also differentiate through c1 and c2. At the exact region means those
  /// terms vanish, so this only matters for round-off and degenerate masks.
  bool differentiate_means = false;
};

/// mean((I - c1)^2 p + (I - c2)^2 (1 - p)) with c1, c2 from chan_vese_stats.
///
/// The gradient treats c1 and c2 as constants (one step of the classical
/// alternating scheme) unless `differentiate_means` is set.
inline MaskLoss chan_vese_loss(const Image& img, const SoftMask& pred, const ChanVeseOptions& opt = {}) {
  const ChanVeseStats s = chan_vese_stats(img, pred);
  const std::size_t n = img.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> parts(n);
  MaskLoss r{0.0, std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double d1 = (img[i] - s.c1) * (img[i] - s.c1);
    const double d2 = (img[i] - s.c2) * (img[i] - s.c2);
    parts[i] = d1 * pred[i] + d2 * (1.0 - pred[i]);
    r.gradient[i] = (d1 - d2) * inv_n;
  }
  r.value = pairwise_sum(parts) * inv_n;

  if (opt.differentiate_means) {
    // dL/dc1 = -2/N sum (I - c1) p,  dc1/dp_i = (I_i - c1) / mass_fg; likewise for c2 with (1 - p).
    std::vector<double> r1(n), r2(n);
    for (std::size_t i = 0; i < n; ++i) {
      r1[i] = (img[i] - s.c1) * pred[i];
      r2[i] = (img[i] - s.c2) * (1.0 - pred[i]);
    }
    const double dl_dc1 = -2.0 * inv_n * pairwise_sum(r1);
    const double dl_dc2 = -2.0 * inv_n * pairwise_sum(r2);
    for (std::size_t i = 0; i < n; ++i) {
      if (s.foreground_mass >= kDegenerateMass) r.gradient[i] += dl_dc1 * (img[i] - s.c1) / s.foreground_mass;
      if (s.background_mass >= kDegenerateMass) r.gradient[i] -= dl_dc2 * (img[i] - s.c2) / s.background_mass;
    }
  }
  return r;
}

}  // namespace tpsn
