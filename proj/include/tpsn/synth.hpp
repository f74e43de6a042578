#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tpsn/core.hpp"
#include "tpsn/templates.hpp"

namespace tpsn {

enum class SynthKind { disk, annulus, bean, two_organs };

inline SynthKind parse_synth_kind(std::string_view s) {
  if (s == "disk") return SynthKind::disk;
  if (s == "annulus") return SynthKind::annulus;
  if (s == "bean") return SynthKind::bean;
  if (s == "two-organs") return SynthKind::two_organs;
  throw InvalidParameterError("unknown synthetic case '" + std::string(s) + "'");
}

struct SynthOptions {
  SynthKind kind = SynthKind::disk;
  std::vector<std::size_t> dims{64, 64};
  std::uint64_t seed = 0;
  double noise = 0.02;
  double background = 0.1;
  double contrast = 0.8;
};

/// A generated image with its ground truth and a suggested template.
///
/// For annulus cases `filled_label` / `filled_template` hold the hole-filled
/// pair used by the first FFDS phase. For two-organ cases `labels` and
/// `templates` hold one mask per organ and `label` is their union.
struct SyntheticCase {
  Image image;
  SoftMask label;
  SoftMask template_mask;
  std::optional<SoftMask> filled_label;
  std::optional<SoftMask> filled_template;
  std::vector<SoftMask> labels;
  std::vector<SoftMask> templates;
};

namespace detail {

inline SoftMask rasterize_predicate(const GridSpec& g, const std::function<bool(const std::array<double, 3>&)>& inside) {
  std::vector<double> v(g.size());
  for (std::size_t n = 0; n < g.size(); ++n) {
    const auto idx = g.node_index(n);
    std::array<double, 3> x{0.0, 0.0, 0.0};
    for (int a = 0; a < g.rank(); ++a) x[a] = g.coordinate(a, idx[a]);
    v[n] = inside(x) ? 1.0 : 0.0;
  }
  return SoftMask(g, std::move(v));
}

inline double sq(double x) { return x * x; }

/// Ellipse with a circular bite taken out of one side.
inline SoftMask bean_mask(const GridSpec& g, std::array<double, 2> c, double rx, double ry, int side, double bite_r,
                          double bite_depth) {
  const int axis = side / 2;
  const double sign = (side % 2) ? 1.0 : -1.0;
  std::array<double, 2> bc = c;
  const double reach = axis == 0 ? rx : ry;
  bc[axis] += sign * (reach + bite_r - bite_depth);
  return rasterize_predicate(g, [=](const std::array<double, 3>& x) {
    const bool in_ellipse = sq((x[0] - c[0]) / rx) + sq((x[1] - c[1]) / ry) <= 1.0;
    const bool in_bite = sq(x[0] - bc[0]) + sq(x[1] - bc[1]) < sq(bite_r);
    return in_ellipse && !in_bite;
  });
}

}  // namespace detail

/// Two-level image from a label: background + contrast * label + noise, clamped to [0, 1].
inline Image render_two_level(const SoftMask& label, double background, double contrast, double noise,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(label.size());
  for (std::size_t n = 0; n < v.size(); ++n) {
    const double e = noise > 0.0 ? noise * gauss(rng) : 0.0;
    v[n] = std::clamp(background + contrast * label[n] + e, 0.0, 1.0);
  }
  return Image(label.grid(), std::move(v));
}

/// Seeded synthetic case generator for the 2D kinds; `disk` also accepts a 3D
/// grid (ball target, ball template).
inline SyntheticCase make_synthetic(const SynthOptions& opt) {
  const GridSpec g(opt.dims);
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * U(rng); };
  if (g.rank() == 3 && opt.kind != SynthKind::disk) {
    throw InvalidParameterError("only the disk case has a 3D variant");
  }

  std::optional<SyntheticCase> out;
  switch (opt.kind) {
    case SynthKind::disk: {
      if (g.rank() == 3) {
        const double r = uni(0.3, 0.45);
        const SoftMask label =
            rasterize(ShapeSpec::ball(r, uni(-0.15, 0.15), uni(-0.15, 0.15), uni(-0.15, 0.15)), g);
        out = SyntheticCase{Image::constant(g, 0.0), label, rasterize(ShapeSpec::ball(0.35), g), {}, {}, {}, {}};
        break;
      }
      const double rx = uni(0.3, 0.45);
      const double ry = rx * uni(0.8, 1.25);
      const SoftMask label = rasterize(ShapeSpec::ellipse(rx, std::min(ry, 0.5), uni(-0.2, 0.2), uni(-0.2, 0.2)), g);
      out = SyntheticCase{Image::constant(g, 0.0), label, rasterize(ShapeSpec::disk(0.35), g), {}, {}, {}, {}};
      break;
    }
    case SynthKind::annulus: {
      const double outer = uni(0.5, 0.65);
      const double inner = outer * uni(0.45, 0.6);
      const double cx = uni(-0.12, 0.12), cy = uni(-0.12, 0.12);
      const SoftMask label = rasterize(ShapeSpec::annulus(outer, inner, cx, cy), g);
      const SoftMask filled = rasterize(ShapeSpec::disk(outer, cx, cy), g);
      const SoftMask t_filled = rasterize(ShapeSpec::disk(0.55), g);
      const SoftMask t_holed = rasterize(ShapeSpec::annulus(0.55, 0.3), g);
      out = SyntheticCase{Image::constant(g, 0.0), label, t_holed, filled, t_filled, {}, {}};
      break;
    }
    case SynthKind::bean: {
      const double rx = uni(0.45, 0.6), ry = uni(0.3, 0.4);
      const int side = static_cast<int>(U(rng) * 4.0) % 4;
      const double bite = uni(0.2, 0.28);
      const double depth = (side / 2 == 0 ? rx : ry) * uni(0.35, 0.5);
      const SoftMask label = detail::bean_mask(g, {uni(-0.1, 0.1), uni(-0.1, 0.1)}, rx, ry, side, bite, depth);
      out = SyntheticCase{Image::constant(g, 0.0), label, rasterize(ShapeSpec::disk(0.4), g), {}, {}, {}, {}};
      break;
    }
    case SynthKind::two_organs: {
      const SoftMask a = rasterize(
          ShapeSpec::ellipse(uni(0.2, 0.28), uni(0.3, 0.4), uni(-0.55, -0.45), uni(-0.15, 0.15)), g);
      const SoftMask b = rasterize(ShapeSpec::disk(uni(0.22, 0.3), uni(0.45, 0.55), uni(-0.15, 0.15)), g);
      std::vector<double> u(g.size());
      for (std::size_t n = 0; n < u.size(); ++n) u[n] = std::max(a[n], b[n]);
      std::vector<SoftMask> templates{rasterize(ShapeSpec::disk(0.25, -0.5, 0.0), g),
                                      rasterize(ShapeSpec::disk(0.25, 0.5, 0.0), g)};
      out = SyntheticCase{Image::constant(g, 0.0), SoftMask(g, std::move(u)), templates[0], {}, {}, {a, b},
                          templates};
      break;
    }
  }
  out->image = render_two_level(out->label, opt.background, opt.contrast, opt.noise, rng);
  return std::move(*out);
}

}  // namespace tpsn
