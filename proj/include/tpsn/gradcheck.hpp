#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tpsn/core.hpp"
#include "tpsn/fidelity.hpp"
#include "tpsn/regularizers.hpp"
#include "tpsn/sampler.hpp"

namespace tpsn {

struct GradCheckEntry {
  std::string loss;
  int instances = 0;
  /// Random draws rejected for landing within `margin` of a kink.
  int rejected = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  bool passed(double tol = 1e-5) const {
    return std::all_of(entries.begin(), entries.end(), [&](const auto& e) { return e.max_rel_error < tol; });
  }
};

struct GradCheckOptions {
  int instances_per_grid = 50;
  double step = 1e-6;
  /// The fidelity losses have gradients ~1/N against values ~0.1, so round-off
  /// dominates at 1e-6; they are smooth enough for a larger step.
  double fidelity_step = 1e-4;
  std::vector<std::vector<std::size_t>> grids{{9, 9}, {7, 7, 7}};
};

namespace detail {

/// max |analytic - central difference| / max |central difference|.
inline double fd_rel_error(std::vector<double> x, const std::vector<double>& analytic,
                           const std::function<double(const std::vector<double>&)>& f, double step) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f(x);
    x[i] = keep - step;
    const double dn = f(x);
    x[i] = keep;
    const double fd = (up - dn) / (2.0 * step);
    num = std::max(num, std::abs(analytic[i] - fd));
    den = std::max(den, std::abs(fd));
  }
  return den > 0.0 ? num / den : num;
}

inline double frac_distance(double u) { return std::abs(u - std::round(u)); }

}  // namespace detail

/// Central finite differences against every analytic gradient in the library.
/// Draws are rejected (and redrawn) when a sample sits within reach of a kink:
/// warp targets near a node plane, cells with |det| small, Laplacian residuals
/// near zero.
inline GradCheckReport run_gradcheck(std::uint64_t seed, const GradCheckOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double step = opt.step;

  GradCheckEntry warp_coords{"warp_coords"}, warp_source{"warp_source"}, jac{"relu_jacobian"}, lap{"laplacian"},
      dice{"dice"}, cv{"chan_vese"};

  for (const auto& dims : opt.grids) {
    const GridSpec g(dims);
    const std::size_t N = g.size();
    const int rank = g.rank();
    auto random_values = [&](std::size_t n, double lo, double hi) {
      std::vector<double> v(n);
      for (double& x : v) x = lo + (hi - lo) * U(rng);
      return v;
    };

    for (int inst = 0; inst < opt.instances_per_grid; ++inst) {
      // Warp chain: L(V) = sum_n w_n * (src o f)(x_n), in both out-of-bounds modes.
      for (;;) {
        const double h = g.spacing(0);
        DisplacementField v(g, random_values(N * rank, -1.5 * h, 1.5 * h));
        const auto map = to_deformation(v);
        bool near_kink = false;
        for (std::size_t n = 0; n < N && !near_kink; ++n) {
          for (int a = 0; a < rank; ++a) near_kink = near_kink || detail::frac_distance(map.target_index(a, n)) < 1e-4;
        }
        if (near_kink) {
          ++warp_coords.rejected;
          continue;
        }
        const SamplerOptions so{inst % 2 ? OutOfBounds::zero : OutOfBounds::clamp};
        const auto src = random_values(N, 0.0, 1.0);
        const auto w = random_values(N, -1.0, 1.0);
        auto loss_v = [&](const std::vector<double>& x) {
          DisplacementField f(g, x);
          const auto out = warp_values(g, src, to_deformation(f), so);
          double s = 0.0;
          for (std::size_t n = 0; n < N; ++n) s += w[n] * out[n];
          return s;
        };
        const DisplacementField ga = grad_wrt_coords(g, src, map, w, so);
        warp_coords.max_rel_error = std::max(
            warp_coords.max_rel_error,
            detail::fd_rel_error(std::vector<double>(v.data().begin(), v.data().end()),
                                 std::vector<double>(ga.data().begin(), ga.data().end()), loss_v, step));
        ++warp_coords.instances;

        auto loss_s = [&](const std::vector<double>& s) {
          const auto out = warp_values(g, s, map, so);
          double acc = 0.0;
          for (std::size_t n = 0; n < N; ++n) acc += w[n] * out[n];
          return acc;
        };
        warp_source.max_rel_error =
            std::max(warp_source.max_rel_error, detail::fd_rel_error(src, grad_wrt_source(map, w, so), loss_s, step));
        ++warp_source.instances;
        break;
      }

      // ReLU Jacobian on a field large enough to fold some cells.
      for (;;) {
        const double h = g.spacing(0);
        DisplacementField v(g, random_values(N * rank, -0.9 * h, 0.9 * h));
        const auto dets = jacobian_field(to_deformation(v));
        const bool near_zero = std::any_of(dets.values.begin(), dets.values.end(),
                                           [](double d) { return std::abs(d) < 1e-4; });
        const bool folded = std::any_of(dets.values.begin(), dets.values.end(), [](double d) { return d < 0.0; });
        if (near_zero || !folded) {
          ++jac.rejected;
          continue;
        }
        auto loss = [&](const std::vector<double>& x) {
          DisplacementField f(g, x);
          return relu_jacobian_loss(to_deformation(f)).value;
        };
        const auto ga = relu_jacobian_loss(to_deformation(v)).gradient;
        jac.max_rel_error =
            std::max(jac.max_rel_error, detail::fd_rel_error(std::vector<double>(v.data().begin(), v.data().end()),
                                                             std::vector<double>(ga.data().begin(), ga.data().end()),
                                                             loss, step));
        ++jac.instances;
        break;
      }

      // Laplacian.
      for (;;) {
        DisplacementField v(g, random_values(N * rank, -0.1, 0.1));
        // a residual of 1e-3 is far beyond what one step can flip
        bool near_zero = false;
        for (int c = 0; c < rank && !near_zero; ++c) {
          const auto u = v.component(c);
          for (std::size_t n = 0; n < N && !near_zero; ++n) {
            const auto idx = g.node_index(n);
            bool interior = true;
            for (int a = 0; a < rank; ++a) interior = interior && idx[a] > 0 && idx[a] + 1 < g.extent(a);
            if (!interior) continue;
            double l = 0.0;
            for (int a = 0; a < rank; ++a) {
              l += (u[n + g.stride(a)] - 2.0 * u[n] + u[n - g.stride(a)]) / (g.spacing(a) * g.spacing(a));
            }
            near_zero = std::abs(l) < 1e-3;
          }
        }
        if (near_zero) {
          ++lap.rejected;
          continue;
        }
        auto loss = [&](const std::vector<double>& x) { return laplacian_loss(DisplacementField(g, x)).value; };
        const auto ga = laplacian_loss(v).gradient;
        lap.max_rel_error =
            std::max(lap.max_rel_error, detail::fd_rel_error(std::vector<double>(v.data().begin(), v.data().end()),
                                                             std::vector<double>(ga.data().begin(), ga.data().end()),
                                                             loss, step));
        ++lap.instances;
        break;
      }

      // Dice and Chan-Vese on interior soft predictions (the clamp to [0, 1]
      // is never active).
      {
        const auto p = random_values(N, 0.05, 0.95);
        const SoftMask label(g, random_values(N, 0.0, 1.0));
        auto dl = [&](const std::vector<double>& x) { return dice_loss(SoftMask(g, x), label).value; };
        dice.max_rel_error =
            std::max(dice.max_rel_error, detail::fd_rel_error(p, dice_loss(SoftMask(g, p), label).gradient, dl, opt.fidelity_step));
        ++dice.instances;

        const Image img(g, random_values(N, 0.0, 1.0));
        auto cl = [&](const std::vector<double>& x) { return chan_vese_loss(img, SoftMask(g, x)).value; };
        cv.max_rel_error =
            std::max(cv.max_rel_error, detail::fd_rel_error(p, chan_vese_loss(img, SoftMask(g, p)).gradient, cl, opt.fidelity_step));
        ++cv.instances;
      }
    }
  }
  return {{warp_coords, warp_source, jac, lap, dice, cv}};
}

}  // namespace tpsn
