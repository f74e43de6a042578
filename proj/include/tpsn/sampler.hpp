#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "tpsn/core.hpp"

namespace tpsn {

/// What happens to target points that leave [-1, 1]^rank.
enum class OutOfBounds {
  clamp,  ///< clamp the target into the domain (edge replication), zero gradient outside
  zero,   ///< plain multilinear sum over grid nodes; fades to zero outside the domain
};

struct SamplerOptions {
  OutOfBounds out_of_bounds = OutOfBounds::clamp;
};

/// Interpolation stencil of one output node: the lower cell corner and the
/// fractional offsets inside that cell, both in node-index units.
struct CellSample {
  std::array<std::ptrdiff_t, kMaxRank> lower{0, 0, 0};
  std::array<double, kMaxRank> offset{0.0, 0.0, 0.0};
  /// Zero along axes where the clamp was active.
  std::array<double, kMaxRank> slope_gate{1.0, 1.0, 1.0};
};

namespace detail {

inline CellSample locate(const GridSpec& grid, std::span<const double, kMaxRank> u_in, OutOfBounds oob) {
  CellSample s;
  for (int a = 0; a < grid.rank(); ++a) {
    double u = u_in[a];
    const double last = static_cast<double>(grid.extent(a) - 1);
    if (oob == OutOfBounds::clamp) {
      if (u < 0.0) {
        u = 0.0;
        s.slope_gate[a] = 0.0;
      } else if (u > last) {
        u = last;
        s.slope_gate[a] = 0.0;
      }
    } else {
      // Anything beyond one cell outside has no support; keep the cast below in range.
      u = std::clamp(u, -2.0, last + 2.0);
    }
    const double fl = std::floor(u);
    s.lower[a] = static_cast<std::ptrdiff_t>(fl);
    s.offset[a] = u - fl;
  }
  return s;
}

/// Visits the 2^rank corners of a cell sample. fn(linear_index, weight, corner_bits).
/// Under the clamp policy a corner past the last node is replicated onto it;
/// under the zero policy corners off the grid are skipped.
template <class Fn>
void for_each_corner(const GridSpec& grid, const CellSample& s, OutOfBounds oob, Fn&& fn) {
  const int rank = grid.rank();
  for (unsigned corner = 0; corner < (1u << rank); ++corner) {
    std::size_t n = 0;
    double w = 1.0;
    bool valid = true;
    for (int a = rank - 1; a >= 0; --a) {
      const bool hi = (corner >> a) & 1u;
      const auto extent = static_cast<std::ptrdiff_t>(grid.extent(a));
      std::ptrdiff_t i = s.lower[a] + (hi ? 1 : 0);
      const double wa = hi ? s.offset[a] : 1.0 - s.offset[a];
      if (i < 0 || i >= extent) {
        if (oob == OutOfBounds::zero) {
          valid = false;
          break;
        }
        i = extent - 1;
      }
      n = n * grid.extent(a) + static_cast<std::size_t>(i);
      w *= wa;
    }
    if (valid) fn(n, w, corner);
  }
}

inline std::array<double, kMaxRank> target_indices(const DeformationMap& map, std::size_t n) {
  std::array<double, kMaxRank> u{0.0, 0.0, 0.0};
  for (int a = 0; a < map.grid().rank(); ++a) u[a] = map.target_index(a, n);
  return u;
}

}  // namespace detail

/// Multilinear interpolation of `values` (on `grid`) at a point given in
/// continuous node-index units.
inline double sample_at(const GridSpec& grid, std::span<const double> values, std::span<const double, kMaxRank> u,
                        const SamplerOptions& opt = {}) {
  const CellSample s = detail::locate(grid, u, opt.out_of_bounds);
  double acc = 0.0;
  detail::for_each_corner(grid, s, opt.out_of_bounds, [&](std::size_t n, double w, unsigned) { acc += w * values[n]; });
  return acc;
}

/// Pull-back resampling J = I o f on raw node values.
inline std::vector<double> warp_values(const GridSpec& grid, std::span<const double> src, const DeformationMap& map,
                                       const SamplerOptions& opt = {},
                                       std::vector<CellSample>* cache = nullptr) {
  require_same_grid(grid, map.grid(), "warp");
  if (src.size() != grid.size()) throw ShapeMismatchError("warp: source value count does not match grid");
  std::vector<double> out(grid.size());
  if (cache) cache->resize(grid.size());
  for (std::size_t n = 0; n < out.size(); ++n) {
    const auto u = detail::target_indices(map, n);
    const CellSample s = detail::locate(grid, u, opt.out_of_bounds);
    double acc = 0.0;
    detail::for_each_corner(grid, s, opt.out_of_bounds, [&](std::size_t m, double w, unsigned) { acc += w * src[m]; });
    out[n] = acc;
    if (cache) (*cache)[n] = s;
  }
  return out;
}

template <class Field>
struct WarpResult {
  Field output;
  std::optional<std::vector<CellSample>> cells;
};

/// Warps an Image or SoftMask through `map`. Masks stay in [0, 1] because each
/// output is a convex combination of source values.
template <class Field>
  requires std::is_same_v<Field, Image> || std::is_same_v<Field, SoftMask>
WarpResult<Field> warp(const Field& src, const DeformationMap& map, const SamplerOptions& opt = {},
                       bool keep_cells = false) {
  std::vector<CellSample> cells;
  auto out = warp_values(src.grid(), src.values(), map, opt, keep_cells ? &cells : nullptr);
  WarpResult<Field> r{[&] {
    if constexpr (std::is_same_v<Field, SoftMask>) {
      return SoftMask::clamped(src.grid(), std::move(out));
    } else {
      return Image(src.grid(), std::move(out));
    }
  }(), std::nullopt};
  if (keep_cells) r.cells = std::move(cells);
  return r;
}

/// Adjoint of warp with respect to the source values: every source node
/// accumulates upstream times its interpolation weight.
inline std::vector<double> grad_wrt_source(const DeformationMap& map, std::span<const double> upstream,
                                           const SamplerOptions& opt = {}) {
  const GridSpec& grid = map.grid();
  if (upstream.size() != grid.size()) throw ShapeMismatchError("grad_wrt_source: upstream size does not match grid");
  std::vector<double> g(grid.size(), 0.0);
  for (std::size_t n = 0; n < grid.size(); ++n) {
    if (upstream[n] == 0.0) continue;
    const CellSample s = detail::locate(grid, detail::target_indices(map, n), opt.out_of_bounds);
    detail::for_each_corner(grid, s, opt.out_of_bounds, [&](std::size_t m, double w, unsigned) { g[m] += upstream[n] * w; });
  }
  return g;
}

/// dL/d(target coordinate) per node, which equals dL/dV since x^t = x^s + v.
///
/// Uses the one-sided slope of the cell the target falls in (cell chosen by
/// floor), so points exactly on a node take the slope of the cell to their
/// right. Away from cell boundaries this is the piecewise slope +-1/h of the
/// hat kernel.
inline DisplacementField grad_wrt_coords(const GridSpec& grid, std::span<const double> src, const DeformationMap& map,
                                         std::span<const double> upstream, const SamplerOptions& opt = {}) {
  require_same_grid(grid, map.grid(), "grad_wrt_coords");
  if (src.size() != grid.size() || upstream.size() != grid.size()) {
    throw ShapeMismatchError("grad_wrt_coords: value count does not match grid");
  }
  const int rank = grid.rank();
  DisplacementField g(grid);
  std::array<double, kMaxRank> inv_h{};
  for (int a = 0; a < rank; ++a) inv_h[a] = 1.0 / grid.spacing(a);

  for (std::size_t n = 0; n < grid.size(); ++n) {
    if (upstream[n] == 0.0) continue;
    const CellSample s = detail::locate(grid, detail::target_indices(map, n), opt.out_of_bounds);
    std::array<double, kMaxRank> d{0.0, 0.0, 0.0};
    detail::for_each_corner(grid, s, opt.out_of_bounds, [&](std::size_t m, double, unsigned corner) {
      for (int a = 0; a < rank; ++a) {
        double w = 1.0;
        for (int b = 0; b < rank; ++b) {
          if (b == a) continue;
          w *= ((corner >> b) & 1u) ? s.offset[b] : 1.0 - s.offset[b];
        }
        d[a] += (((corner >> a) & 1u) ? w : -w) * src[m];
      }
    });
    for (int a = 0; a < rank; ++a) g.component(a)[n] = upstream[n] * d[a] * inv_h[a] * s.slope_gate[a];
  }
  return g;
}

template <class Field>
DisplacementField grad_wrt_coords(const Field& src, const DeformationMap& map, std::span<const double> upstream,
                                  const SamplerOptions& opt = {}) {
  return grad_wrt_coords(src.grid(), src.values(), map, upstream, opt);
}

}  // namespace tpsn
