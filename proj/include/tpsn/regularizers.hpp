#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "tpsn/core.hpp"

namespace tpsn {

/// How ||.||_1 reductions are normalized.
enum class Reduction {
  mean,  ///< divide by the number of terms (resolution independent weights)
  sum,
};

/// Finite-difference scheme for det(grad f) on a cell.
enum class JacobianScheme {
  forward,      ///< one stencil per cell, anchored at the lower corner
  all_corners,  ///< 2^rank stencils per cell, one anchored at each corner
};

struct RegularizerOptions {
  Reduction jacobian_reduction = Reduction::mean;
  Reduction laplacian_reduction = Reduction::mean;
  JacobianScheme scheme = JacobianScheme::forward;
};

/// One determinant per grid cell, cells indexed like nodes of a grid one
/// smaller along every axis. With the all-corner scheme each entry is the
/// smallest of the cell's corner determinants.
struct JacobianField {
  std::vector<std::size_t> cell_dims;
  std::vector<double> values;

  double min() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : values) m = std::min(m, v);
    return m;
  }
};

struct RegularizerReport {
  double relu_jacobian = 0.0;
  double laplacian = 0.0;
  std::size_t negative_cell_count = 0;
  double min_determinant = 0.0;
};

struct LossWithGradient {
  double value = 0.0;
  DisplacementField gradient;
};

struct LaplacianLoss {
  double value = 0.0;
  DisplacementField gradient;
  /// Set when some extent is below 3, so the loss is defined as zero.
  bool no_interior = false;
};

namespace detail {

inline double det(const std::array<std::array<double, 3>, 3>& m, int rank) {
  if (rank == 2) return m[0][0] * m[1][1] - m[0][1] * m[1][0];
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

/// d det / d m[r][c].
inline std::array<std::array<double, 3>, 3> cofactors(const std::array<std::array<double, 3>, 3>& m, int rank) {
  std::array<std::array<double, 3>, 3> c{};
  if (rank == 2) {
    c[0][0] = m[1][1];
    c[0][1] = -m[1][0];
    c[1][0] = -m[0][1];
    c[1][1] = m[0][0];
    return c;
  }
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) {
      const int r1 = (r + 1) % 3, r2 = (r + 2) % 3;
      const int k1 = (k + 1) % 3, k2 = (k + 2) % 3;
      c[r][k] = m[r1][k1] * m[r2][k2] - m[r1][k2] * m[r2][k1];
    }
  }
  return c;
}

/// Walks the cells of a grid; fn(node index of the lower corner).
template <class Fn>
void for_each_cell(const GridSpec& grid, Fn&& fn) {
  const std::size_t nz = grid.rank() == 3 ? grid.extent(2) - 1 : 1;
  for (std::size_t k = 0; k < nz; ++k) {
    for (std::size_t j = 0; j + 1 < grid.extent(1); ++j) {
      for (std::size_t i = 0; i + 1 < grid.extent(0); ++i) {
        fn(grid.linear_index(std::array<std::size_t, 3>{i, j, k}));
      }
    }
  }
}

/// Jacobian matrix of f on the stencil anchored at `corner` of the cell whose
/// lower node is `base`: m[b][a] = delta_ab + (v_b(hi_a) - v_b(lo_a)) / h_a.
/// lo/hi receive the node pair used for each column.
struct CornerStencil {
  std::array<std::array<double, 3>, 3> m{};
  std::array<std::size_t, 3> lo{};
  std::array<std::size_t, 3> hi{};
};

inline CornerStencil corner_stencil(const DisplacementField& v, std::size_t base, unsigned corner) {
  const GridSpec& g = v.grid();
  const int rank = g.rank();
  CornerStencil s;
  std::size_t anchor = base;
  for (int a = 0; a < rank; ++a) {
    if ((corner >> a) & 1u) anchor += g.stride(a);
  }
  for (int a = 0; a < rank; ++a) {
    const std::size_t stride = g.stride(a);
    const bool hi_bit = (corner >> a) & 1u;
    s.lo[a] = hi_bit ? anchor - stride : anchor;
    s.hi[a] = s.lo[a] + stride;
    const double inv_h = 1.0 / g.spacing(a);
    for (int b = 0; b < rank; ++b) {
      const auto comp = v.component(b);
      s.m[b][a] = (a == b ? 1.0 : 0.0) + (comp[s.hi[a]] - comp[s.lo[a]]) * inv_h;
    }
  }
  return s;
}

inline unsigned corner_count(const GridSpec& g, JacobianScheme scheme) {
  return scheme == JacobianScheme::forward ? 1u : (1u << g.rank());
}

inline std::size_t cell_count(const GridSpec& g) {
  std::size_t n = 1;
  for (int a = 0; a < g.rank(); ++a) n *= g.extent(a) - 1;
  return n;
}

}  // namespace detail

/// det(grad f) per cell from forward differences scaled by the spacings, so
/// the identity map gives exactly 1.
inline JacobianField jacobian_field(const DeformationMap& map, JacobianScheme scheme = JacobianScheme::forward) {
  const DisplacementField& v = map.displacement();
  const GridSpec& g = v.grid();
  JacobianField out;
  for (int a = 0; a < g.rank(); ++a) out.cell_dims.push_back(g.extent(a) - 1);
  out.values.reserve(detail::cell_count(g));
  const unsigned corners = detail::corner_count(g, scheme);
  detail::for_each_cell(g, [&](std::size_t base) {
    double d = std::numeric_limits<double>::infinity();
    for (unsigned c = 0; c < corners; ++c) d = std::min(d, detail::det(detail::corner_stencil(v, base, c).m, g.rank()));
    out.values.push_back(d);
  });
  return out;
}

/// ||ReLU(-det grad f)||_1 with its exact gradient with respect to V.
/// The subgradient is zero on cells with det >= 0.
inline LossWithGradient relu_jacobian_loss(const DeformationMap& map, const RegularizerOptions& opt = {}) {
  const DisplacementField& v = map.displacement();
  const GridSpec& g = v.grid();
  const int rank = g.rank();
  const unsigned corners = detail::corner_count(g, opt.scheme);
  const double terms = static_cast<double>(detail::cell_count(g) * corners);
  const double scale = opt.jacobian_reduction == Reduction::mean ? 1.0 / terms : 1.0;

  LossWithGradient r{0.0, DisplacementField(g)};
  std::vector<double> parts;
  parts.reserve(detail::cell_count(g) * corners);
  detail::for_each_cell(g, [&](std::size_t base) {
    for (unsigned c = 0; c < corners; ++c) {
      const auto s = detail::corner_stencil(v, base, c);
      const double d = detail::det(s.m, rank);
      if (!(d < 0.0)) continue;
      parts.push_back(-d);
      const auto cof = detail::cofactors(s.m, rank);
      for (int a = 0; a < rank; ++a) {
        const double inv_h = 1.0 / g.spacing(a);
        for (int b = 0; b < rank; ++b) {
          const double coef = -cof[b][a] * inv_h * scale;
          r.gradient.component(b)[s.hi[a]] += coef;
          r.gradient.component(b)[s.lo[a]] -= coef;
        }
      }
    }
  });
  r.value = pairwise_sum(parts) * scale;
  return r;
}

/// Mean (or sum) over interior nodes and components of |Delta v|, using the
/// 5-point / 7-point stencil with per-axis spacings.
inline LaplacianLoss laplacian_loss(const DisplacementField& v, const RegularizerOptions& opt = {}) {
  const GridSpec& g = v.grid();
  const int rank = g.rank();
  LaplacianLoss r{0.0, DisplacementField(g), false};
  for (int a = 0; a < rank; ++a) {
    if (g.extent(a) < 3) {
      r.no_interior = true;
      return r;
    }
  }

  std::size_t interior = 1;
  for (int a = 0; a < rank; ++a) interior *= g.extent(a) - 2;
  const double terms = static_cast<double>(interior * static_cast<std::size_t>(rank));
  const double scale = opt.laplacian_reduction == Reduction::mean ? 1.0 / terms : 1.0;

  std::array<double, 3> inv_h2{};
  std::array<std::size_t, 3> stride{};
  for (int a = 0; a < rank; ++a) {
    inv_h2[a] = 1.0 / (g.spacing(a) * g.spacing(a));
    stride[a] = g.stride(a);
  }

  std::vector<double> parts;
  parts.reserve(interior * rank);
  const std::size_t nz = rank == 3 ? g.extent(2) - 1 : 2;
  for (int c = 0; c < rank; ++c) {
    const auto u = v.component(c);
    auto gc = r.gradient.component(c);
    for (std::size_t k = 1; k < nz; ++k) {
      for (std::size_t j = 1; j + 1 < g.extent(1); ++j) {
        for (std::size_t i = 1; i + 1 < g.extent(0); ++i) {
          const std::size_t n = g.linear_index(std::array<std::size_t, 3>{i, j, rank == 3 ? k : 0});
          double lap = 0.0;
          for (int a = 0; a < rank; ++a) lap += (u[n + stride[a]] - 2.0 * u[n] + u[n - stride[a]]) * inv_h2[a];
          parts.push_back(std::abs(lap));
          if (lap == 0.0) continue;
          const double sgn = (lap > 0.0 ? 1.0 : -1.0) * scale;
          for (int a = 0; a < rank; ++a) {
            gc[n + stride[a]] += sgn * inv_h2[a];
            gc[n - stride[a]] += sgn * inv_h2[a];
            gc[n] -= 2.0 * sgn * inv_h2[a];
          }
        }
      }
    }
  }
  r.value = pairwise_sum(parts) * scale;
  return r;
}

inline RegularizerReport regularizer_report(const DisplacementField& v, const RegularizerOptions& opt = {}) {
  const auto map = to_deformation(v);
  const JacobianField jac = jacobian_field(map, opt.scheme);
  RegularizerReport rep;
  rep.relu_jacobian = relu_jacobian_loss(map, opt).value;
  rep.laplacian = laplacian_loss(v, opt).value;
  for (double d : jac.values) rep.negative_cell_count += d < 0.0 ? 1 : 0;
  rep.min_determinant = jac.min();
  return rep;
}

}  // namespace tpsn
