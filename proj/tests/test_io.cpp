#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "tpsn/io.hpp"
#include "tpsn/templates.hpp"

using namespace tpsn;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tpsn_io_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(VolumeFile, HeaderLayout) {
  Volume v;
  v.dims = {3, 2};
  v.dtype = DType::u8;
  v.u8 = {1, 2, 3, 4, 5, 6};
  const std::string b = encode_volume(v);
  ASSERT_EQ(b.size(), 4u + 1 + 1 + 8 + 1 + 6);
  EXPECT_EQ(b.substr(0, 4), "TPWV");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 2);
  EXPECT_EQ(static_cast<unsigned char>(b[6]), 3);  // little-endian u32
  EXPECT_EQ(b[7], 0);
  EXPECT_EQ(static_cast<unsigned char>(b[10]), 2);
  EXPECT_EQ(b[14], 1);
  EXPECT_EQ(b[15], 1);
  EXPECT_EQ(b.back(), 6);
}

TEST(VolumeFile, F32LittleEndian) {
  Volume v;
  v.dims = {2, 2};
  v.f32 = {1.0f, -2.5f, 0.0f, 3.25f};
  const std::string b = encode_volume(v);
  // 1.0f is 0x3F800000
  EXPECT_EQ(static_cast<unsigned char>(b[15]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(b[18]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(b[17]), 0x80);
  EXPECT_EQ(decode_volume(bytes_of(b)), v);
}

TEST(VolumeFile, RoundTripGrid) {
  const GridSpec g{7, 5, 3};
  std::vector<double> vals(g.size());
  for (std::size_t n = 0; n < vals.size(); ++n) vals[n] = 0.25 * static_cast<double>(n);
  const auto dir = scratch_dir("roundtrip");
  const std::string path = (dir / "v.tpwv").string();
  write_volume(path, to_volume(g, vals));
  const Image back = volume_to_image(read_volume(path));
  EXPECT_EQ(back.grid(), g);
  for (std::size_t n = 0; n < vals.size(); ++n) EXPECT_EQ(back.values()[n], vals[n]);
  // x-fastest: node (1, 0, 0) is the second payload value
  EXPECT_EQ(back.values()[g.linear_index(std::array<std::size_t, 3>{1, 0, 0})], 0.25);
}

TEST(VolumeFile, RandomRoundTrips) {
  std::mt19937_64 rng(71);
  for (int rep = 0; rep < 300; ++rep) {
    Volume v;
    const int rank = 2 + static_cast<int>(rng() % 2);
    for (int a = 0; a < rank; ++a) v.dims.push_back(1 + static_cast<std::uint32_t>(rng() % 9));
    v.dtype = (rng() % 2) ? DType::u8 : DType::f32;
    for (std::size_t n = 0; n < v.count(); ++n) {
      if (v.dtype == DType::u8) {
        v.u8.push_back(static_cast<std::uint8_t>(rng()));
      } else {
        v.f32.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(rng() & 0x7F7FFFFFu)));
      }
    }
    EXPECT_EQ(decode_volume(bytes_of(encode_volume(v))), v);
  }
}

TEST(VolumeFile, Errors) {
  Volume v;
  v.dims = {4, 4};
  v.dtype = DType::u8;
  v.u8.assign(16, 1);
  const auto good = bytes_of(encode_volume(v));

  auto expect_parse = [](std::vector<std::uint8_t> b, std::size_t offset) {
    try {
      decode_volume(b);
      ADD_FAILURE() << "expected ParseError";
    } catch (const ParseError& e) {
      EXPECT_EQ(e.offset(), offset) << e.what();
    }
  };
  auto bad = good;
  bad[0] = 'X';
  expect_parse(bad, 0);
  bad = good;
  bad[4] = 2;
  expect_parse(bad, 4);
  bad = good;
  bad[5] = 4;
  expect_parse(bad, 5);
  bad = good;
  bad[14] = 9;
  expect_parse(bad, 14);
  expect_parse({good.begin(), good.begin() + 9}, 9);
  expect_parse({good.begin(), good.end() - 1}, 15);
  bad = good;
  bad.push_back(0);
  expect_parse(bad, 15);
  bad = good;
  bad[6] = bad[7] = bad[8] = bad[9] = 0xFF;
  EXPECT_THROW(decode_volume(bad), ParseError);
  EXPECT_THROW(read_volume("/nonexistent/tpsn/x.tpwv"), IoError);
}

TEST(VolumeFile, MaskAndFieldConversions) {
  const GridSpec g{9, 7};
  const SoftMask m = rasterize(ShapeSpec::disk(0.6), g);
  EXPECT_EQ(volume_to_mask(decode_volume(bytes_of(encode_volume(to_u8_volume(m))))), m);

  DisplacementField f(GridSpec{4, 3, 2});
  for (std::size_t i = 0; i < f.data().size(); ++i) f.data()[i] = 0.125 * static_cast<double>(i);
  const Volume fv = field_to_volume(f);
  EXPECT_EQ(fv.dims, (std::vector<std::uint32_t>{4, 3, 6}));
  EXPECT_EQ(volume_to_field(fv, f.grid()), f);
  EXPECT_THROW(volume_to_field(fv, GridSpec{4, 3}), ShapeMismatchError);
}

TEST(Pgm, EightBit) {
  const std::string p = "P5\n# comment\n2 2\n255\n" + std::string("\x00\xff\x80\x01", 4);
  const Image img = decode_pgm(bytes_of(p));
  EXPECT_EQ(img.grid(), (GridSpec{2, 2}));
  EXPECT_EQ(img.values()[0], 0.0);
  EXPECT_EQ(img.values()[1], 1.0);
  EXPECT_DOUBLE_EQ(img.values()[2], 128.0 / 255.0);
}

TEST(Pgm, SixteenBitBigEndian) {
  const std::string p = "P5 2 2 65535\n" + std::string("\xff\xff\x00\x01\x00\x00\x80\x00", 8);
  const Image img = decode_pgm(bytes_of(p));
  EXPECT_EQ(img.values()[0], 1.0);
  EXPECT_DOUBLE_EQ(img.values()[1], 1.0 / 65535.0);
}

TEST(Pgm, RoundTripAndErrors) {
  const GridSpec g{5, 3};
  std::vector<double> v(g.size());
  for (std::size_t n = 0; n < v.size(); ++n) v[n] = static_cast<double>(n) / 14.0;
  const Image back = decode_pgm(bytes_of(encode_pgm(g, v, 65535)));
  for (std::size_t n = 0; n < v.size(); ++n) EXPECT_NEAR(back.values()[n], v[n], 1.0 / 65535.0);

  EXPECT_THROW(decode_pgm(bytes_of("P2\n2 2\n255\n")), ParseError);
  EXPECT_THROW(decode_pgm(bytes_of("P5\n2 2\n255\n\x01")), ParseError);
  EXPECT_THROW(decode_pgm(bytes_of("P5\n2 2\n0\n")), ParseError);
  EXPECT_THROW(decode_pgm(bytes_of("P5\n2 x\n255\n")), ParseError);
}

TEST(Overlay, HeaderAndSize) {
  const GridSpec g{8, 6};
  const SoftMask m = rasterize(ShapeSpec::disk(0.6), g);
  const std::string ppm = encode_overlay(m.as_image(), &m, &m, nullptr);
  const std::string head = "P6\n8 6\n255\n";
  ASSERT_EQ(ppm.substr(0, head.size()), head);
  EXPECT_EQ(ppm.size(), head.size() + 3 * g.size());
}

TEST(Loaders, DispatchOnExtension) {
  const auto dir = scratch_dir("loaders");
  const GridSpec g{9, 7};
  const SoftMask m = rasterize(ShapeSpec::disk(0.6), g);
  save_mask((dir / "m.pgm").string(), m);
  save_mask((dir / "m.tpwv").string(), m);
  EXPECT_EQ(load_mask((dir / "m.pgm").string()), m);
  EXPECT_EQ(load_mask((dir / "m.tpwv").string()), m);
  save_image((dir / "i.pgm").string(), m.as_image());
  EXPECT_EQ(load_image((dir / "i.pgm").string()).values()[40], m[40]);
}
