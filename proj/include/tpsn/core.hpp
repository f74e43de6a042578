#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tpsn/error.hpp"

namespace tpsn {

inline constexpr int kMaxRank = 3;

/// Regular node grid over the normalized domain [-1, 1]^rank.
///
/// Axis 0 (x, extent H) is the fastest-varying axis of every node array, so
/// node (i, j, k) lives at linear index i + H * (j + W * k). Node i along an
/// axis of extent N sits at coordinate i * h - 1 with h = 2 / (N - 1).
class GridSpec {
 public:
  GridSpec() = default;

  explicit GridSpec(std::span<const std::size_t> dims) {
    if (dims.size() != 2 && dims.size() != 3) {
      throw InvalidGridError("grid rank must be 2 or 3, got " + std::to_string(dims.size()));
    }
    rank_ = static_cast<int>(dims.size());
    for (int a = 0; a < rank_; ++a) {
      if (dims[a] < 2) {
        throw InvalidGridError("grid extent along axis " + std::to_string(a) + " must be >= 2, got " +
                               std::to_string(dims[a]));
      }
      dims_[a] = dims[a];
    }
  }

  GridSpec(std::initializer_list<std::size_t> dims)
      : GridSpec(std::span<const std::size_t>(dims.begin(), dims.size())) {}

  int rank() const noexcept { return rank_; }
  std::size_t extent(int axis) const noexcept { return dims_[axis]; }
  std::vector<std::size_t> dims() const { return {dims_.begin(), dims_.begin() + rank_}; }

  /// h = 2 / (N - 1); recomputed on every call.
  double spacing(int axis) const noexcept { return 2.0 / static_cast<double>(dims_[axis] - 1); }

  /// Unused trailing extents are 1.
  std::size_t size() const noexcept { return dims_[0] * dims_[1] * dims_[2]; }

  std::size_t stride(int axis) const noexcept {
    std::size_t s = 1;
    for (int a = 0; a < axis; ++a) s *= dims_[a];
    return s;
  }

  double coordinate(int axis, std::size_t i) const noexcept {
    return static_cast<double>(i) * spacing(axis) - 1.0;
  }

  std::size_t nearest_index(int axis, double coord) const noexcept {
    const double u = std::round((coord + 1.0) / spacing(axis));
    return static_cast<std::size_t>(std::clamp(u, 0.0, static_cast<double>(dims_[axis] - 1)));
  }

  std::size_t linear_index(std::span<const std::size_t> idx) const noexcept {
    std::size_t n = 0;
    for (int a = rank_ - 1; a >= 0; --a) n = n * dims_[a] + idx[a];
    return n;
  }

  /// Inverse of linear_index; unused trailing entries are zero.
  std::array<std::size_t, kMaxRank> node_index(std::size_t n) const noexcept {
    std::array<std::size_t, kMaxRank> idx{0, 0, 0};
    for (int a = 0; a < rank_; ++a) {
      idx[a] = n % dims_[a];
      n /= dims_[a];
    }
    return idx;
  }

  std::string to_string() const {
    std::string s;
    for (int a = 0; a < rank_; ++a) {
      if (a) s += 'x';
      s += std::to_string(dims_[a]);
    }
    return s;
  }

  friend bool operator==(const GridSpec& l, const GridSpec& r) noexcept {
    return l.rank_ == r.rank_ && l.dims_ == r.dims_;
  }

 private:
  int rank_ = 0;
  std::array<std::size_t, kMaxRank> dims_{1, 1, 1};
};

inline GridSpec make_grid(std::span<const std::size_t> dims) { return GridSpec(dims); }
inline GridSpec make_grid(std::initializer_list<std::size_t> dims) { return GridSpec(dims); }

inline void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
  if (!(a == b)) {
    throw ShapeMismatchError(std::string(what) + ": grid " + a.to_string() + " does not match " + b.to_string());
  }
}

/// Deterministic pairwise (tree) summation.
inline double pairwise_sum(std::span<const double> v) {
  constexpr std::size_t kBlock = 64;
  if (v.size() <= kBlock) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

namespace detail {

template <class Derived>
class NodeValues {
 public:
  const GridSpec& grid() const noexcept { return grid_; }
  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t n) const noexcept { return values_[n]; }

  friend bool operator==(const NodeValues& l, const NodeValues& r) {
    return l.grid_ == r.grid_ && l.values_ == r.values_;
  }

 protected:
  NodeValues(GridSpec grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.size()) {
      throw ShapeMismatchError("value count " + std::to_string(values_.size()) + " does not match grid " +
                               grid_.to_string());
    }
  }

  GridSpec grid_;
  std::vector<double> values_;
};

}  // namespace detail

/// Scalar intensity per node.
class Image : public detail::NodeValues<Image> {
 public:
  Image(GridSpec grid, std::vector<double> values) : NodeValues(std::move(grid), std::move(values)) {
    for (double v : values_) {
      if (!std::isfinite(v)) throw InvalidParameterError("image values must be finite");
    }
  }

  static Image constant(const GridSpec& grid, double value) {
    return Image(grid, std::vector<double>(grid.size(), value));
  }

  /// Affine rescale to [0, 1]; a constant image maps to all zeros.
  Image normalized() const {
    const auto [lo, hi] = std::minmax_element(values_.begin(), values_.end());
    const double span = *hi - *lo;
    std::vector<double> out(values_.size(), 0.0);
    if (span > 0.0) {
      for (std::size_t n = 0; n < out.size(); ++n) out[n] = (values_[n] - *lo) / span;
    }
    return Image(grid_, std::move(out));
  }
};

/// Real-valued mask with every value in [0, 1].
class SoftMask : public detail::NodeValues<SoftMask> {
 public:
  SoftMask(GridSpec grid, std::vector<double> values) : NodeValues(std::move(grid), std::move(values)) {
    for (double v : values_) {
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidParameterError("mask values must lie in [0, 1]");
    }
  }

  static SoftMask zeros(const GridSpec& grid) { return SoftMask(grid, std::vector<double>(grid.size(), 0.0)); }

  /// Clamps into [0, 1] instead of rejecting; for values produced by interpolation round-off.
  static SoftMask clamped(GridSpec grid, std::vector<double> values) {
    for (double& v : values) v = std::clamp(v, 0.0, 1.0);
    return SoftMask(std::move(grid), std::move(values));
  }

  double mass() const { return pairwise_sum(values_); }

  bool is_binary() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0 || v == 1.0; });
  }

  Image as_image() const { return Image(grid_, values_); }
};

/// Value 1 iff the input is strictly greater than `threshold`.
inline SoftMask binarize(const SoftMask& m, double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw InvalidParameterError("binarize threshold must lie in (0, 1)");
  }
  std::vector<double> out(m.size());
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = m[n] > threshold ? 1.0 : 0.0;
  return SoftMask(m.grid(), std::move(out));
}

/// Per-node displacement vectors in normalized units, stored component-major:
/// component c of node n is data()[c * node_count + n].
class DisplacementField {
 public:
  DisplacementField() = default;

  explicit DisplacementField(GridSpec grid)
      : grid_(std::move(grid)), data_(static_cast<std::size_t>(grid_.rank()) * grid_.size(), 0.0) {}

  DisplacementField(GridSpec grid, std::vector<double> data) : grid_(std::move(grid)), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(grid_.rank()) * grid_.size()) {
      throw ShapeMismatchError("displacement component count does not match rank x node count");
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw InvalidParameterError("displacement components must be finite");
    }
  }

  const GridSpec& grid() const noexcept { return grid_; }
  int rank() const noexcept { return grid_.rank(); }
  std::size_t node_count() const noexcept { return grid_.size(); }

  std::span<double> component(int c) noexcept { return {data_.data() + c * node_count(), node_count()}; }
  std::span<const double> component(int c) const noexcept {
    return {data_.data() + c * node_count(), node_count()};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  DisplacementField& operator+=(const DisplacementField& o) {
    require_same_grid(grid_, o.grid_, "DisplacementField +=");
    for (std::size_t n = 0; n < data_.size(); ++n) data_[n] += o.data_[n];
    return *this;
  }

  DisplacementField& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend DisplacementField operator+(DisplacementField a, const DisplacementField& b) { return a += b; }
  friend DisplacementField operator*(double s, DisplacementField a) { return a *= s; }

  friend bool operator==(const DisplacementField& l, const DisplacementField& r) {
    return l.grid_ == r.grid_ && l.data_ == r.data_;
  }

 private:
  GridSpec grid_;
  std::vector<double> data_;
};

/// Non-owning view of f = id + V. The field must outlive the map.
class DeformationMap {
 public:
  explicit DeformationMap(const DisplacementField& field) : field_(&field) {}

  const GridSpec& grid() const noexcept { return field_->grid(); }
  const DisplacementField& displacement() const noexcept { return *field_; }

  /// Target coordinate along `axis` of node n: x^s + v.
  double target(int axis, std::size_t n) const noexcept {
    const auto idx = grid().node_index(n);
    return grid().coordinate(axis, idx[axis]) + field_->component(axis)[n];
  }

  /// Same point in continuous node-index units: i + v / h. Exact for v = 0.
  double target_index(int axis, std::size_t n) const noexcept {
    const auto idx = grid().node_index(n);
    return static_cast<double>(idx[axis]) + field_->component(axis)[n] / grid().spacing(axis);
  }

 private:
  const DisplacementField* field_;
};

inline DeformationMap to_deformation(const DisplacementField& v) { return DeformationMap(v); }
DeformationMap to_deformation(DisplacementField&&) = delete;

/// Set of q templates and their q displacement fields on one grid.
struct MultiObjectSet {
  std::vector<SoftMask> templates;
  std::vector<DisplacementField> fields;

  explicit MultiObjectSet(std::vector<SoftMask> t) : templates(std::move(t)) {
    if (templates.empty()) throw InvalidParameterError("multi-object set needs at least one template");
    for (const auto& m : templates) require_same_grid(templates.front().grid(), m.grid(), "MultiObjectSet");
    fields.assign(templates.size(), DisplacementField(templates.front().grid()));
  }

  std::size_t count() const noexcept { return templates.size(); }
  const GridSpec& grid() const noexcept { return templates.front().grid(); }
};

}  // namespace tpsn
