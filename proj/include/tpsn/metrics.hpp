#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tpsn/core.hpp"
#include "tpsn/regularizers.hpp"

namespace tpsn {

struct DiceScore {
  double value = 0.0;
  /// Both masks empty; value is defined as 1.
  bool degenerate = false;
};

/// 2|a & b| / (|a| + |b|) on binary masks.
inline DiceScore dice_score(const SoftMask& a, const SoftMask& b) {
  require_same_grid(a.grid(), b.grid(), "dice_score");
  if (!a.is_binary() || !b.is_binary()) throw InvalidParameterError("dice_score expects binary masks");
  double inter = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    inter += a[n] * b[n];
    sa += a[n];
    sb += b[n];
  }
  if (sa + sb == 0.0) return {1.0, true};
  return {2.0 * inter / (sa + sb), false};
}

/// Foreground nodes with at least one background face neighbour. Nodes on
/// the grid border count as boundary (outside the grid is background).
inline std::vector<bool> boundary_nodes(const SoftMask& m) {
  const GridSpec& g = m.grid();
  std::vector<bool> out(g.size(), false);
  for (std::size_t n = 0; n < g.size(); ++n) {
    if (m[n] <= 0.5) continue;
    const auto idx = g.node_index(n);
    for (int a = 0; a < g.rank() && !out[n]; ++a) {
      const std::size_t s = g.stride(a);
      if (idx[a] == 0 || idx[a] + 1 == g.extent(a) || m[n - s] <= 0.5 || m[n + s] <= 0.5) out[n] = true;
    }
  }
  return out;
}

namespace detail {

inline constexpr double kFar = 1e12;  // no-site value; far above any squared grid distance
inline constexpr double kEnvelopeEnd = 1e30;

/// 1D squared distance transform (lower envelope of parabolas), in place over
/// a strided line.
inline void edt_1d(double* f, std::size_t n, std::size_t stride, std::vector<double>& d, std::vector<std::size_t>& v,
                   std::vector<double>& z) {
  d.resize(n);
  v.resize(n);
  z.resize(n + 1);
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -kEnvelopeEnd;
  z[1] = kEnvelopeEnd;
  auto fv = [&](std::size_t q) { return f[q * stride]; };
  for (std::size_t q = 1; q < n; ++q) {
    double s;
    while (true) {
      const double p = static_cast<double>(v[k]);
      const double qq = static_cast<double>(q);
      s = ((fv(q) + qq * qq) - (fv(v[k]) + p * p)) / (2.0 * qq - 2.0 * p);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kEnvelopeEnd;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = diff * diff + fv(v[k]);
  }
  for (std::size_t q = 0; q < n; ++q) f[q * stride] = d[q];
}

}  // namespace detail

/// Exact squared Euclidean distance (node units) from every node to the
/// nearest site; separable Felzenszwalb-Huttenlocher transform.
inline std::vector<double> squared_distance_transform(const GridSpec& g, const std::vector<bool>& sites) {
  std::vector<double> f(g.size());
  for (std::size_t n = 0; n < g.size(); ++n) f[n] = sites[n] ? 0.0 : detail::kFar;
  std::vector<double> d;
  std::vector<std::size_t> v;
  std::vector<double> z;
  for (int a = 0; a < g.rank(); ++a) {
    const std::size_t stride = g.stride(a);
    const std::size_t len = g.extent(a);
    for (std::size_t n = 0; n < g.size(); ++n) {
      if (g.node_index(n)[a] != 0) continue;
      detail::edt_1d(f.data() + n, len, stride, d, v, z);
    }
  }
  return f;
}

/// Symmetric Hausdorff distance between the boundaries of two binary masks,
/// in node units.
inline double hausdorff(const SoftMask& a, const SoftMask& b) {
  require_same_grid(a.grid(), b.grid(), "hausdorff");
  const auto ba = boundary_nodes(a);
  const auto bb = boundary_nodes(b);
  const bool empty_a = std::none_of(ba.begin(), ba.end(), [](bool x) { return x; });
  const bool empty_b = std::none_of(bb.begin(), bb.end(), [](bool x) { return x; });
  if (empty_a || empty_b) throw UndefinedMetricError("hausdorff distance is undefined for an empty mask");
  const auto da = squared_distance_transform(a.grid(), ba);
  const auto db = squared_distance_transform(b.grid(), bb);
  double worst = 0.0;
  for (std::size_t n = 0; n < ba.size(); ++n) {
    if (ba[n]) worst = std::max(worst, db[n]);
    if (bb[n]) worst = std::max(worst, da[n]);
  }
  return std::sqrt(worst);
}

struct TopologyReport {
  int b0 = 0;
  /// Holes; always 0 for 3D masks.
  int b1 = 0;
  int betti_error = 0;
};

namespace detail {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

/// Components of nodes where `in[n]` holds; full = 8/26 neighbourhood,
/// otherwise face (4/6) neighbourhood.
inline int count_components(const GridSpec& g, const std::vector<bool>& in, bool full) {
  const int rank = g.rank();
  // Half of the neighbourhood offsets: those that precede the node in scan order.
  std::vector<std::array<int, 3>> offsets;
  for (int dz = (rank == 3 ? -1 : 0); dz <= (rank == 3 ? 1 : 0); ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int nonzero = (dx != 0) + (dy != 0) + (dz != 0);
        if (nonzero == 0 || (!full && nonzero > 1)) continue;
        const long lin = dx + 3L * (dy + 3L * dz);
        if (lin < 0) offsets.push_back({dx, dy, dz});
      }
    }
  }
  DisjointSets sets(g.size());
  for (std::size_t n = 0; n < g.size(); ++n) {
    if (!in[n]) continue;
    const auto idx = g.node_index(n);
    for (const auto& o : offsets) {
      std::array<std::size_t, 3> nb{};
      bool inside = true;
      for (int a = 0; a < rank; ++a) {
        const long c = static_cast<long>(idx[a]) + o[a];
        if (c < 0 || c >= static_cast<long>(g.extent(a))) {
          inside = false;
          break;
        }
        nb[a] = static_cast<std::size_t>(c);
      }
      if (!inside) continue;
      const std::size_t m = g.linear_index(nb);
      if (in[m]) sets.unite(n, m);
    }
  }
  int count = 0;
  for (std::size_t n = 0; n < g.size(); ++n) count += (in[n] && sets.find(n) == n) ? 1 : 0;
  return count;
}

}  // namespace detail

/// Betti numbers of a binary mask. Foreground uses 8 (2D) / 26 (3D)
/// connectivity; holes are background components under 4-connectivity that
/// do not reach the outside.
inline TopologyReport betti(const SoftMask& mask) {
  const GridSpec& g = mask.grid();
  std::vector<bool> fg(g.size());
  for (std::size_t n = 0; n < g.size(); ++n) fg[n] = mask[n] > 0.5;
  TopologyReport r;
  r.b0 = detail::count_components(g, fg, true);
  if (g.rank() == 2) {
    // Pad with one background ring so the unbounded component is a single one.
    const GridSpec padded{g.extent(0) + 2, g.extent(1) + 2};
    std::vector<bool> bg(padded.size(), true);
    for (std::size_t j = 0; j < g.extent(1); ++j) {
      for (std::size_t i = 0; i < g.extent(0); ++i) {
        bg[(i + 1) + padded.extent(0) * (j + 1)] = !fg[i + g.extent(0) * j];
      }
    }
    r.b1 = detail::count_components(padded, bg, false) - 1;
  }
  return r;
}

inline TopologyReport betti(const SoftMask& mask, const SoftMask& reference) {
  TopologyReport r = betti(mask);
  const TopologyReport ref = betti(reference);
  r.betti_error = std::abs(r.b0 - ref.b0) + std::abs(r.b1 - ref.b1);
  return r;
}

struct MetricRow {
  double dice = 0.0;
  double hausdorff = 0.0;
  TopologyReport betti;
  std::optional<double> relu_jacobian;
};

/// Binarizes `pred` at 0.5 and computes every reported metric against `ref`.
inline MetricRow evaluate(const SoftMask& pred, const SoftMask& ref, const DeformationMap* map = nullptr) {
  require_same_grid(pred.grid(), ref.grid(), "evaluate");
  const SoftMask p = binarize(pred, 0.5);
  const SoftMask r = binarize(ref, 0.5);
  MetricRow row;
  row.dice = dice_score(p, r).value;
  row.hausdorff = hausdorff(p, r);
  row.betti = betti(p, r);
  if (map) row.relu_jacobian = relu_jacobian_loss(*map).value;
  return row;
}

inline constexpr const char* kMetricCsvHeader = "case,dice,hausdorff,b0,b1,betti_error,relu_jacobian";

/// Locale-independent CSV row; relu_jacobian is left empty when absent.
inline std::string metric_csv_row(const std::string& case_name, const MetricRow& row) {
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    // snprintf honours LC_NUMERIC; force '.'.
    std::replace(s.begin(), s.end(), ',', '.');
    return s;
  };
  std::string s = case_name + ',' + num(row.dice) + ',' + num(row.hausdorff) + ',' + std::to_string(row.betti.b0) +
                  ',' + std::to_string(row.betti.b1) + ',' + std::to_string(row.betti.betti_error) + ',';
  if (row.relu_jacobian) s += num(*row.relu_jacobian);
  return s;
}

}  // namespace tpsn
