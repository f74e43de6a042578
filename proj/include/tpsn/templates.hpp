#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

#include "tpsn/core.hpp"

namespace tpsn {

enum class ShapeKind { disk, ellipse, square, annulus, ball, box, mean_shape };

inline std::string_view to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::square: return "square";
    case ShapeKind::annulus: return "annulus";
    case ShapeKind::ball: return "ball";
    case ShapeKind::box: return "box";
    case ShapeKind::mean_shape: return "mean_shape";
  }
  return "?";
}

/// Parametric template shape in normalized coordinates.
///
/// `radii` holds the per-axis radius (disk, ball, ellipse, annulus outer) or
/// half-width (square, box). `softness` is the width of a linear ramp across
/// the boundary; 0 gives a hard mask.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::disk;
  std::array<double, kMaxRank> center{0.0, 0.0, 0.0};
  std::array<double, kMaxRank> radii{0.5, 0.5, 0.5};
  double inner_radius = 0.0;
  double softness = 0.0;

  static ShapeSpec disk(double r, double cx = 0.0, double cy = 0.0) {
    return {ShapeKind::disk, {cx, cy, 0.0}, {r, r, r}, 0.0, 0.0};
  }
  static ShapeSpec ellipse(double rx, double ry, double cx = 0.0, double cy = 0.0) {
    return {ShapeKind::ellipse, {cx, cy, 0.0}, {rx, ry, rx}, 0.0, 0.0};
  }
  static ShapeSpec square(double half, double cx = 0.0, double cy = 0.0) {
    return {ShapeKind::square, {cx, cy, 0.0}, {half, half, half}, 0.0, 0.0};
  }
  static ShapeSpec annulus(double outer, double inner, double cx = 0.0, double cy = 0.0) {
    return {ShapeKind::annulus, {cx, cy, 0.0}, {outer, outer, outer}, inner, 0.0};
  }
  static ShapeSpec ball(double r, double cx = 0.0, double cy = 0.0, double cz = 0.0) {
    return {ShapeKind::ball, {cx, cy, cz}, {r, r, r}, 0.0, 0.0};
  }
  static ShapeSpec box(std::array<double, kMaxRank> half, std::array<double, kMaxRank> c = {0.0, 0.0, 0.0}) {
    return {ShapeKind::box, c, half, 0.0, 0.0};
  }
};

namespace detail {

inline void check_shape(const ShapeSpec& s, const GridSpec& g) {
  const int rank = g.rank();
  switch (s.kind) {
    case ShapeKind::disk:
    case ShapeKind::square:
    case ShapeKind::annulus:
      if (rank != 2) throw InvalidParameterError(std::string(to_string(s.kind)) + " templates are 2D");
      break;
    case ShapeKind::ball:
      if (rank != 3) throw InvalidParameterError("ball templates are 3D");
      break;
    case ShapeKind::mean_shape:
      throw InvalidParameterError("mean_shape templates are built from masks with mean_shape()");
    default:
      break;
  }
  if (!(s.softness >= 0.0) || !std::isfinite(s.softness)) throw InvalidParameterError("softness must be >= 0");
  for (int a = 0; a < rank; ++a) {
    const double r = s.radii[a];
    if (!(r > 0.0) || !std::isfinite(r)) throw InvalidParameterError("template radii must be positive");
    const double h = g.spacing(a);
    const double margin = 1e-12;
    if (s.center[a] - r < -1.0 + h - margin || s.center[a] + r > 1.0 - h + margin) {
      throw InvalidParameterError(std::string(to_string(s.kind)) + " does not fit inside the domain along axis " +
                                  std::to_string(a));
    }
  }
  if (s.kind == ShapeKind::annulus && !(s.inner_radius > 0.0 && s.inner_radius < s.radii[0])) {
    throw InvalidParameterError("annulus needs 0 < inner radius < outer radius");
  }
}

/// Signed distance-like level: <= 0 inside, positive outside, in normalized units.
inline double shape_level(const ShapeSpec& s, const std::array<double, kMaxRank>& x, int rank) {
  switch (s.kind) {
    case ShapeKind::disk:
    case ShapeKind::ball: {
      double d2 = 0.0;
      for (int a = 0; a < rank; ++a) d2 += (x[a] - s.center[a]) * (x[a] - s.center[a]);
      return std::sqrt(d2) - s.radii[0];
    }
    case ShapeKind::ellipse: {
      double q = 0.0, rmin = s.radii[0];
      for (int a = 0; a < rank; ++a) {
        const double t = (x[a] - s.center[a]) / s.radii[a];
        q += t * t;
        rmin = std::min(rmin, s.radii[a]);
      }
      return (std::sqrt(q) - 1.0) * rmin;
    }
    case ShapeKind::square:
    case ShapeKind::box: {
      double m = -1e300;
      for (int a = 0; a < rank; ++a) m = std::max(m, std::abs(x[a] - s.center[a]) - s.radii[a]);
      return m;
    }
    case ShapeKind::annulus: {
      double d2 = 0.0;
      for (int a = 0; a < rank; ++a) d2 += (x[a] - s.center[a]) * (x[a] - s.center[a]);
      const double d = std::sqrt(d2);
      return std::max(d - s.radii[0], s.inner_radius - d);
    }
    case ShapeKind::mean_shape:
      break;
  }
  return 1.0;
}

}  // namespace detail

/// Samples a shape at node centres: a node is foreground iff its coordinate
/// satisfies the shape inequality.
inline SoftMask rasterize(const ShapeSpec& spec, const GridSpec& grid) {
  detail::check_shape(spec, grid);
  std::vector<double> out(grid.size());
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const auto idx = grid.node_index(n);
    std::array<double, kMaxRank> x{0.0, 0.0, 0.0};
    for (int a = 0; a < grid.rank(); ++a) x[a] = grid.coordinate(a, idx[a]);
    const double level = detail::shape_level(spec, x, grid.rank());
    if (spec.softness == 0.0) {
      out[n] = level <= 0.0 ? 1.0 : 0.0;
    } else {
      out[n] = std::clamp(0.5 - level / spec.softness, 0.0, 1.0);
    }
  }
  return SoftMask(grid, std::move(out));
}

/// Nodewise mean of a set of masks.
inline SoftMask mean_shape(const std::vector<SoftMask>& masks) {
  if (masks.empty()) throw InvalidParameterError("mean_shape needs at least one mask");
  const GridSpec& g = masks.front().grid();
  std::vector<double> acc(g.size(), 0.0);
  for (const auto& m : masks) {
    require_same_grid(g, m.grid(), "mean_shape");
    for (std::size_t n = 0; n < acc.size(); ++n) acc[n] += m[n];
  }
  const double inv = 1.0 / static_cast<double>(masks.size());
  for (double& v : acc) v *= inv;
  return SoftMask::clamped(g, std::move(acc));
}

/// Parses `kind:key=value,...`, e.g. `disk:r=0.5`, `annulus:r=0.6,inner=0.3`,
/// `box:hx=0.2,hy=0.3,hz=0.1,cx=0.1`. Keys: r, rx, ry, rz, a (square
/// half-width), hx, hy, hz, inner, cx, cy, cz, soft.
inline ShapeSpec parse_shape_spec(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view kind = text.substr(0, colon);
  ShapeSpec s;
  if (kind == "disk") s.kind = ShapeKind::disk;
  else if (kind == "ellipse") s.kind = ShapeKind::ellipse;
  else if (kind == "square") s.kind = ShapeKind::square;
  else if (kind == "annulus") s.kind = ShapeKind::annulus;
  else if (kind == "ball") s.kind = ShapeKind::ball;
  else if (kind == "box") s.kind = ShapeKind::box;
  else if (kind == "mean_shape") s.kind = ShapeKind::mean_shape;
  else throw InvalidParameterError("unknown shape kind '" + std::string(kind) + "'");

  std::string_view rest = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string_view item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw InvalidParameterError("shape parameter '" + std::string(item) + "' lacks '='");
    const std::string key(item.substr(0, eq));
    const std::string val(item.substr(eq + 1));
    char* end = nullptr;
    const double v = std::strtod(val.c_str(), &end);
    if (end == val.c_str() || *end != '\0') throw InvalidParameterError("bad number '" + val + "' for " + key);
    if (key == "r" || key == "a") s.radii = {v, v, v};
    else if (key == "rx" || key == "hx") s.radii[0] = v;
    else if (key == "ry" || key == "hy") s.radii[1] = v;
    else if (key == "rz" || key == "hz") s.radii[2] = v;
    else if (key == "inner") s.inner_radius = v;
    else if (key == "cx") s.center[0] = v;
    else if (key == "cy") s.center[1] = v;
    else if (key == "cz") s.center[2] = v;
    else if (key == "soft") s.softness = v;
    else throw InvalidParameterError("unknown shape parameter '" + key + "'");
  }
  return s;
}

}  // namespace tpsn
