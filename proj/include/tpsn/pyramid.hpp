#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "tpsn/core.hpp"
#include "tpsn/engine.hpp"
#include "tpsn/sampler.hpp"

namespace tpsn {

namespace detail {

inline std::vector<double> box_reduce(const GridSpec& in, std::span<const double> v, GridSpec& out_grid) {
  std::vector<std::size_t> dims;
  for (int a = 0; a < in.rank(); ++a) {
    if (in.extent(a) < 4) {
      throw InvalidGridError("downsample needs every extent >= 4, got " + in.to_string());
    }
    dims.push_back((in.extent(a) + 1) / 2);
  }
  out_grid = GridSpec(dims);
  std::vector<double> sum(out_grid.size(), 0.0), count(out_grid.size(), 0.0);
  for (std::size_t n = 0; n < in.size(); ++n) {
    auto idx = in.node_index(n);
    for (int a = 0; a < in.rank(); ++a) idx[a] /= 2;
    const std::size_t m = out_grid.linear_index(idx);
    sum[m] += v[n];
    count[m] += 1.0;
  }
  for (std::size_t m = 0; m < sum.size(); ++m) sum[m] /= count[m];
  return sum;
}

}  // namespace detail

/// 2x box-mean reduction per axis; output extents are ceil(n / 2), and a
/// trailing odd node averages alone.
template <class Field>
  requires std::is_same_v<Field, Image> || std::is_same_v<Field, SoftMask>
Field downsample(const Field& f) {
  GridSpec out;
  auto v = detail::box_reduce(f.grid(), f.values(), out);
  if constexpr (std::is_same_v<Field, SoftMask>) {
    return SoftMask::clamped(out, std::move(v));
  } else {
    return Image(out, std::move(v));
  }
}

/// Multilinear interpolation of `mask` onto a finer grid covering the same
/// normalized domain. Not thresholded.
inline SoftMask upsample_mask(const SoftMask& mask, const GridSpec& target) {
  const GridSpec& src = mask.grid();
  if (target.rank() != src.rank()) throw ShapeMismatchError("upsample_mask: rank mismatch");
  for (int a = 0; a < src.rank(); ++a) {
    if (target.extent(a) < src.extent(a)) {
      throw InvalidGridError("upsample_mask: target " + target.to_string() + " is smaller than " + src.to_string());
    }
  }
  std::vector<double> out(target.size());
  for (std::size_t n = 0; n < target.size(); ++n) {
    const auto idx = target.node_index(n);
    std::array<double, kMaxRank> u{0.0, 0.0, 0.0};
    for (int a = 0; a < src.rank(); ++a) {
      u[a] = static_cast<double>(idx[a]) * static_cast<double>(src.extent(a) - 1) /
             static_cast<double>(target.extent(a) - 1);
    }
    out[n] = sample_at(src, mask.values(), u);
  }
  return SoftMask::clamped(target, std::move(out));
}

struct PyramidConfig {
  int levels = 3;
  /// Optional optimizer settings per level, coarsest first. Empty means the
  /// base configuration is used at every level.
  std::vector<OptimizerConfig> per_level;
  /// Threshold each level's prediction at 0.5 before handing it on.
  bool binarize_between_levels = false;

  void validate(const GridSpec& g) const {
    if (levels < 1 || levels > 4) throw InvalidParameterError("pyramid levels must lie in [1, 4]");
    if (!per_level.empty() && per_level.size() != static_cast<std::size_t>(levels)) {
      throw InvalidParameterError("per-level optimizer overrides must match the level count");
    }
    for (int a = 0; a < g.rank(); ++a) {
      std::size_t e = g.extent(a);
      for (int l = 1; l < levels; ++l) e = (e + 1) / 2;
      if (levels > 1 && e < 4) {
        throw InvalidParameterError("coarsest pyramid level would have extent " + std::to_string(e) + " < 4");
      }
    }
  }
};

/// Coarse-to-fine segmentation: each level's prediction, upsampled, becomes
/// the template of the next finer level. Fields restart at zero per level.
/// Supervised when `label` is given, Chan-Vese otherwise.
inline SegmentationResult segment_multilevel(const Image& img, const SoftMask& templ, const SoftMask* label,
                                             const LossWeights& w, const PyramidConfig& pcfg,
                                             const OptimizerConfig& cfg = {}) {
  require_same_grid(img.grid(), templ.grid(), "segment_multilevel");
  if (label) require_same_grid(img.grid(), label->grid(), "segment_multilevel");
  pcfg.validate(img.grid());

  const auto L = static_cast<std::size_t>(pcfg.levels);
  std::vector<Image> images{img};
  std::vector<SoftMask> labels;
  if (label) labels.push_back(*label);
  SoftMask current = templ;
  for (std::size_t l = 1; l < L; ++l) {
    images.push_back(downsample(images.back()));
    if (label) labels.push_back(downsample(labels.back()));
    current = downsample(current);
  }

  SegmentationResult result;
  std::vector<LossTerms> trace;
  for (std::size_t step = 0; step < L; ++step) {
    const std::size_t level = L - 1 - step;  // 0 is the finest
    const OptimizerConfig& lc = pcfg.per_level.empty() ? cfg : pcfg.per_level[step];
    try {
      result = label ? segment_supervised(images[level], current, labels[level], w, lc)
                     : segment_unsupervised(images[level], current, w, lc);
    } catch (const DivergenceError& e) {
      throw DivergenceError("level " + std::to_string(level) + ": " + e.what(), e.last_fields(), e.iteration());
    } catch (const Error& e) {
      throw Error("level " + std::to_string(level) + ": " + e.what());
    }
    trace.insert(trace.end(), result.loss_trace.begin(), result.loss_trace.end());
    if (level > 0) {
      SoftMask next = upsample_mask(result.pred_mask(), images[level - 1].grid());
      current = pcfg.binarize_between_levels ? binarize(next, 0.5) : std::move(next);
    }
  }
  result.loss_trace = std::move(trace);
  result.iterations_run = static_cast<int>(result.loss_trace.size());
  return result;
}

}  // namespace tpsn
