#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tpsn/core.hpp"
#include "tpsn/metrics.hpp"

namespace tpsn {

enum class DType : std::uint8_t { f32 = 0, u8 = 1 };

/// In-memory form of the TPWV volume format:
///
///   "TPWV" | version u8 = 1 | rank u8 (2|3) | dims u32 LE x rank | dtype u8 | payload
///
/// Payload is x-fastest, little-endian. Exactly one of f32 / u8 is populated.
struct Volume {
  std::vector<std::uint32_t> dims;
  DType dtype = DType::f32;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  friend bool operator==(const Volume& a, const Volume& b) {
    if (a.dims != b.dims || a.dtype != b.dtype || a.u8 != b.u8 || a.f32.size() != b.f32.size()) return false;
    return a.f32.empty() || std::memcmp(a.f32.data(), b.f32.data(), a.f32.size() * sizeof(float)) == 0;
  }
};

inline constexpr std::array<char, 4> kVolumeMagic{'T', 'P', 'W', 'V'};
inline constexpr std::uint8_t kVolumeVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(in[at + b]) << (8 * b);
  return v;
}

inline std::vector<std::uint8_t> read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::string& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to '" + path + "'");
}

}  // namespace detail

inline std::string encode_volume(const Volume& v) {
  if (v.dims.size() != 2 && v.dims.size() != 3) throw InvalidParameterError("volume rank must be 2 or 3");
  const std::size_t n = v.count();
  if ((v.dtype == DType::f32 ? v.f32.size() : v.u8.size()) != n) {
    throw ShapeMismatchError("volume payload does not match its dimensions");
  }
  std::string out(kVolumeMagic.begin(), kVolumeMagic.end());
  out.push_back(static_cast<char>(kVolumeVersion));
  out.push_back(static_cast<char>(v.dims.size()));
  for (auto d : v.dims) detail::put_u32(out, d);
  out.push_back(static_cast<char>(v.dtype));
  if (v.dtype == DType::u8) {
    out.append(reinterpret_cast<const char*>(v.u8.data()), n);
  } else {
    out.reserve(out.size() + 4 * n);
    for (float x : v.f32) detail::put_u32(out, std::bit_cast<std::uint32_t>(x));
  }
  return out;
}

inline Volume decode_volume(std::span<const std::uint8_t> in) {
  auto need = [&](std::size_t at, std::size_t len, const char* what) {
    if (in.size() < at + len) {
      throw ParseError(std::string("truncated volume header: missing ") + what, in.size());
    }
  };
  need(0, 4, "magic");
  if (!std::equal(kVolumeMagic.begin(), kVolumeMagic.end(), in.begin())) throw ParseError("bad volume magic", 0);
  need(4, 1, "version");
  if (in[4] != kVolumeVersion) throw ParseError("unsupported volume version " + std::to_string(in[4]), 4);
  need(5, 1, "rank");
  const unsigned rank = in[5];
  if (rank != 2 && rank != 3) throw ParseError("volume rank must be 2 or 3, got " + std::to_string(rank), 5);
  Volume v;
  std::size_t at = 6;
  for (unsigned a = 0; a < rank; ++a, at += 4) {
    need(at, 4, "dimensions");
    v.dims.push_back(detail::get_u32(in, at));
  }
  need(at, 1, "dtype");
  if (in[at] > 1) throw ParseError("unknown volume dtype " + std::to_string(in[at]), at);
  v.dtype = static_cast<DType>(in[at]);
  ++at;

  const std::size_t width = v.dtype == DType::f32 ? 4 : 1;
  std::size_t n = 1;
  for (auto d : v.dims) {
    if (d != 0 && n > (in.size() / width) / d) {
      throw ParseError("volume dimensions exceed the file size", 6);
    }
    n *= d;
  }
  const std::size_t expected = n * width;
  if (in.size() - at != expected) {
    throw ParseError("volume payload has " + std::to_string(in.size() - at) + " bytes, expected " +
                         std::to_string(expected),
                     at);
  }
  if (v.dtype == DType::u8) {
    v.u8.assign(in.begin() + static_cast<std::ptrdiff_t>(at), in.end());
  } else {
    v.f32.resize(n);
    for (std::size_t i = 0; i < n; ++i) v.f32[i] = std::bit_cast<float>(detail::get_u32(in, at + 4 * i));
  }
  return v;
}

inline Volume read_volume(const std::string& path) {
  const auto bytes = detail::read_all(path);
  try {
    return decode_volume(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.offset());
  }
}

inline void write_volume(const std::string& path, const Volume& v) { detail::write_all(path, encode_volume(v)); }

inline GridSpec volume_grid(const Volume& v) {
  std::vector<std::size_t> d(v.dims.begin(), v.dims.end());
  return GridSpec(d);
}

inline Volume to_volume(const GridSpec& g, std::span<const double> values) {
  Volume v;
  for (int a = 0; a < g.rank(); ++a) v.dims.push_back(static_cast<std::uint32_t>(g.extent(a)));
  v.f32.assign(values.begin(), values.end());
  return v;
}

/// Binary mask as u8 0/1.
inline Volume to_u8_volume(const SoftMask& m) {
  Volume v;
  for (int a = 0; a < m.grid().rank(); ++a) v.dims.push_back(static_cast<std::uint32_t>(m.grid().extent(a)));
  v.dtype = DType::u8;
  v.u8.resize(m.size());
  for (std::size_t n = 0; n < m.size(); ++n) v.u8[n] = m[n] > 0.5 ? 1 : 0;
  return v;
}

/// u8 payloads scale by 1/255 for images.
inline Image volume_to_image(const Volume& v) {
  const GridSpec g = volume_grid(v);
  std::vector<double> out(v.count());
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = v.dtype == DType::f32 ? v.f32[n] : v.u8[n] / 255.0;
  return Image(g, std::move(out));
}

/// u8 payloads are labels: nonzero is foreground. f32 payloads must lie in [0, 1].
inline SoftMask volume_to_mask(const Volume& v) {
  const GridSpec g = volume_grid(v);
  std::vector<double> out(v.count());
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = v.dtype == DType::f32 ? v.f32[n] : (v.u8[n] ? 1.0 : 0.0);
  return SoftMask(g, std::move(out));
}

/// Displacement fields are stored as one rank-3 f32 volume with the
/// components stacked along the last axis: e0 x e1 x 2 for 2D grids and
/// e0 x e1 x (3 * e2) for 3D grids. Values are narrowed to f32.
inline Volume field_to_volume(const DisplacementField& f) {
  const GridSpec& g = f.grid();
  Volume v;
  v.dims = {static_cast<std::uint32_t>(g.extent(0)), static_cast<std::uint32_t>(g.extent(1)),
            static_cast<std::uint32_t>(g.rank() == 2 ? 2 : 3 * g.extent(2))};
  v.f32.assign(f.data().begin(), f.data().end());
  return v;
}

inline DisplacementField volume_to_field(const Volume& v, const GridSpec& g) {
  const std::size_t depth = g.rank() == 2 ? 2 : 3 * g.extent(2);
  if (v.dtype != DType::f32 || v.dims.size() != 3 || v.dims[0] != g.extent(0) || v.dims[1] != g.extent(1) ||
      v.dims[2] != depth) {
    throw ShapeMismatchError("displacement volume does not match grid " + g.to_string());
  }
  return DisplacementField(g, std::vector<double>(v.f32.begin(), v.f32.end()));
}

inline bool has_extension(const std::string& path, std::string_view ext) {
  return path.size() >= ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0;
}

// ---------------------------------------------------------------------------
// Netpbm

namespace detail {

struct PnmCursor {
  std::span<const std::uint8_t> in;
  std::size_t at = 0;

  void skip_space() {
    while (at < in.size()) {
      if (in[at] == '#') {
        while (at < in.size() && in[at] != '\n') ++at;
      } else if (std::isspace(in[at])) {
        ++at;
      } else {
        break;
      }
    }
  }

  unsigned long number(const char* what) {
    skip_space();
    const std::size_t start = at;
    unsigned long v = 0;
    while (at < in.size() && in[at] >= '0' && in[at] <= '9') {
      v = v * 10 + (in[at] - '0');
      if (v > 0xFFFFFFFFul) throw ParseError(std::string("PGM ") + what + " is too large", start);
      ++at;
    }
    if (at == start) throw ParseError(std::string("PGM header: expected ") + what, start);
    return v;
  }
};

}  // namespace detail

/// Binary greymap (P5), 8- or 16-bit (big-endian) samples, scaled by 1/maxval.
inline Image decode_pgm(std::span<const std::uint8_t> in) {
  detail::PnmCursor c{in};
  if (in.size() < 2 || in[0] != 'P' || in[1] != '5') throw ParseError("not a binary PGM (P5)", 0);
  c.at = 2;
  const unsigned long w = c.number("width");
  const unsigned long h = c.number("height");
  const std::size_t maxval_at = c.at;
  const unsigned long maxval = c.number("maxval");
  if (maxval == 0 || maxval > 65535) throw ParseError("unsupported PGM maxval " + std::to_string(maxval), maxval_at);
  if (c.at >= in.size() || !std::isspace(in[c.at])) throw ParseError("PGM header must end in whitespace", c.at);
  ++c.at;
  const std::size_t width = maxval > 255 ? 2 : 1;
  const std::size_t expected = static_cast<std::size_t>(w) * h * width;
  if (in.size() - c.at < expected) {
    throw ParseError("PGM payload has " + std::to_string(in.size() - c.at) + " bytes, expected " +
                         std::to_string(expected),
                     c.at);
  }
  const GridSpec g{static_cast<std::size_t>(w), static_cast<std::size_t>(h)};
  std::vector<double> v(g.size());
  for (std::size_t n = 0; n < v.size(); ++n) {
    const std::size_t p = c.at + n * width;
    const unsigned s = width == 2 ? (static_cast<unsigned>(in[p]) << 8) | in[p + 1] : in[p];
    if (s > maxval) throw ParseError("PGM sample exceeds maxval", p);
    v[n] = static_cast<double>(s) / static_cast<double>(maxval);
  }
  return Image(g, std::move(v));
}

inline Image read_pgm(const std::string& path) {
  const auto bytes = detail::read_all(path);
  try {
    return decode_pgm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.offset());
  }
}

/// Values are clamped to [0, 1] and scaled to maxval (255 or 65535).
inline std::string encode_pgm(const GridSpec& g, std::span<const double> values, unsigned maxval = 255) {
  if (g.rank() != 2) throw InvalidParameterError("PGM output is 2D only");
  if (maxval != 255 && maxval != 65535) throw InvalidParameterError("PGM maxval must be 255 or 65535");
  std::string out = "P5\n" + std::to_string(g.extent(0)) + ' ' + std::to_string(g.extent(1)) + '\n' +
                    std::to_string(maxval) + '\n';
  for (double x : values) {
    const auto s = static_cast<unsigned>(std::lround(std::clamp(x, 0.0, 1.0) * maxval));
    if (maxval > 255) out.push_back(static_cast<char>(s >> 8));
    out.push_back(static_cast<char>(s & 0xFFu));
  }
  return out;
}

inline void write_pgm(const std::string& path, const GridSpec& g, std::span<const double> values,
                      unsigned maxval = 255) {
  detail::write_all(path, encode_pgm(g, values, maxval));
}

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

struct OverlayColors {
  Rgb templ{0, 120, 255};
  Rgb pred{255, 40, 40};
  Rgb label{40, 220, 40};
};

/// Greyscale image with boundary nodes of up to three masks painted on top,
/// in the order template, label, prediction. 3D inputs render the middle
/// z slice.
inline std::string encode_overlay(const Image& img, const SoftMask* templ, const SoftMask* pred,
                                  const SoftMask* label, const OverlayColors& colors = {}) {
  const GridSpec& g = img.grid();
  const std::size_t W = g.extent(0), H = g.extent(1);
  const std::size_t z = g.rank() == 3 ? g.extent(2) / 2 : 0;
  const std::size_t base = z * W * H;
  std::vector<Rgb> px(W * H);
  for (std::size_t n = 0; n < px.size(); ++n) {
    const auto s = static_cast<std::uint8_t>(std::lround(std::clamp(img[base + n], 0.0, 1.0) * 255.0));
    px[n] = {s, s, s};
  }
  auto paint = [&](const SoftMask* m, Rgb c) {
    if (!m) return;
    require_same_grid(g, m->grid(), "overlay");
    const std::vector<bool> edge = boundary_nodes(binarize(*m));
    for (std::size_t n = 0; n < px.size(); ++n) {
      if (edge[base + n]) px[n] = c;
    }
  };
  paint(templ, colors.templ);
  paint(label, colors.label);
  paint(pred, colors.pred);
  std::string out = "P6\n" + std::to_string(W) + ' ' + std::to_string(H) + "\n255\n";
  for (const Rgb& p : px) {
    out.push_back(static_cast<char>(p.r));
    out.push_back(static_cast<char>(p.g));
    out.push_back(static_cast<char>(p.b));
  }
  return out;
}

inline void write_overlay(const std::string& path, const Image& img, const SoftMask* templ, const SoftMask* pred,
                          const SoftMask* label, const OverlayColors& colors = {}) {
  detail::write_all(path, encode_overlay(img, templ, pred, label, colors));
}

/// Loads an image from a .pgm file or a TPWV volume.
inline Image load_image(const std::string& path) {
  return has_extension(path, ".pgm") ? read_pgm(path) : volume_to_image(read_volume(path));
}

/// Loads a mask; PGM masks are thresholded at half of maxval.
inline SoftMask load_mask(const std::string& path) {
  if (has_extension(path, ".pgm")) {
    const Image img = read_pgm(path);
    std::vector<double> v(img.size());
    for (std::size_t n = 0; n < v.size(); ++n) v[n] = img[n] >= 0.5 ? 1.0 : 0.0;
    return SoftMask(img.grid(), std::move(v));
  }
  return volume_to_mask(read_volume(path));
}

/// Writes a soft mask as f32 TPWV, or as PGM when the path ends in .pgm.
inline void save_mask(const std::string& path, const SoftMask& m) {
  if (has_extension(path, ".pgm")) {
    write_pgm(path, m.grid(), m.values());
  } else {
    write_volume(path, to_volume(m.grid(), m.values()));
  }
}

inline void save_image(const std::string& path, const Image& img) {
  if (has_extension(path, ".pgm")) {
    write_pgm(path, img.grid(), img.values(), 65535);
  } else {
    write_volume(path, to_volume(img.grid(), img.values()));
  }
}

}  // namespace tpsn
