#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stainqc/errors.hpp"
#include "stainqc/image.hpp"
#include "stainqc/png_io.hpp"
#include "stainqc/rng.hpp"
#include "stainqc/tiff.hpp"

using namespace stainqc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "stainqc_test_core";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

} // namespace

TEST_CASE("rng streams are deterministic and seed-sensitive") {
  Rng a(42), b(42), c(43);
  bool diverged = false;
  for (int i = 0; i < 64; ++i) {
    const uint64_t va = a.next();
    CHECK(va == b.next());
    if (va != c.next()) diverged = true;
  }
  CHECK(diverged);

  CHECK(derive_seed(7, uint64_t(0)) != derive_seed(7, uint64_t(1)));
  CHECK(derive_seed(7, "split") != derive_seed(7, "fold"));
  CHECK(derive_seed(7, "split") == derive_seed(7, "split"));
}

TEST_CASE("rng below is in range and uniform-ish") {
  Rng r(1);
  std::array<int, 7> hist{};
  for (int i = 0; i < 7000; ++i) {
    const uint64_t v = r.below(7);
    REQUIRE(v < 7);
    hist[v]++;
  }
  for (int h : hist) CHECK(std::abs(h - 1000) < 150);
  CHECK_THROWS_AS(r.below(0), ArgumentError);
}

TEST_CASE("rng shuffle is a permutation; sampling is sorted and distinct") {
  Rng r(9);
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  r.shuffle(v);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) CHECK(sorted[i] == i);

  auto s = r.sample_without_replacement(50, 10);
  REQUIRE(s.size() == 10);
  for (size_t i = 1; i < s.size(); ++i) CHECK(s[i] > s[i - 1]);
  CHECK(s.back() < 50);
  CHECK(r.sample_without_replacement(5, 99).size() == 5);
}

TEST_CASE("rng normal has sane moments") {
  Rng r(3);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("resize_area identity is bit-exact") {
  ImageU8 img(5, 4, 3);
  Rng r(11);
  for (auto& b : img.data) b = static_cast<uint8_t>(r.below(256));
  const ImageU8 out = resize_area(img, 5, 4);
  CHECK(out.data == img.data);
}

TEST_CASE("resize_area 2x box average matches hand computation") {
  // 4x2 single-channel -> 2x1: each output pixel averages a 2x2 block.
  ImageU8 img(4, 2, 1);
  const uint8_t px[] = {10, 20, 30, 40, 50, 60, 70, 80};
  std::copy(std::begin(px), std::end(px), img.data.begin());
  const ImageU8 out = resize_area(img, 2, 1);
  REQUIRE(out.width == 2);
  REQUIRE(out.height == 1);
  CHECK(out.at(0, 0) == 35); // (10+20+50+60)/4
  CHECK(out.at(1, 0) == 55); // (30+40+70+80)/4
}

TEST_CASE("resize_area fractional ratio preserves constant images") {
  ImageU8 img(7, 5, 3, 137);
  const ImageU8 out = resize_area(img, 3, 2);
  for (uint8_t b : out.data) CHECK(b == 137);
}

TEST_CASE("rotate90_cw geometry") {
  // 3x2 image, distinct values; (x,y) -> (h-1-y, x) with h=2.
  ImageU8 img(3, 2, 1);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) img.at(x, y) = static_cast<uint8_t>(10 * y + x);
  const ImageU8 rot = rotate90_cw(img);
  REQUIRE(rot.width == 2);
  REQUIRE(rot.height == 3);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) CHECK(rot.at(2 - 1 - y, x) == img.at(x, y));

  ImageU8 four = rotate90_cw(rotate90_cw(rotate90_cw(rotate90_cw(img))));
  CHECK(four.data == img.data);
}

TEST_CASE("pad_to centers content and reports the box") {
  ImageU8 img(4, 2, 3, 9);
  PadBox box;
  const ImageU8 out = pad_to(img, 8, 6, 255, &box);
  CHECK(box.x == 2);
  CHECK(box.y == 2);
  CHECK(box.width == 4);
  CHECK(box.height == 2);
  CHECK(out.at(0, 0, 0) == 255);
  CHECK(out.at(2, 2, 0) == 9);
  CHECK(out.at(5, 3, 2) == 9);
  CHECK(out.at(6, 2, 0) == 255);
  CHECK_THROWS_AS(pad_to(img, 3, 6, 0, nullptr), ArgumentError);
}

TEST_CASE("crop bounds are enforced") {
  ImageU8 img(4, 4, 1);
  for (int i = 0; i < 16; ++i) img.data[i] = static_cast<uint8_t>(i);
  const ImageU8 c = crop(img, 1, 2, 2, 2);
  CHECK(c.at(0, 0) == 9);
  CHECK(c.at(1, 1) == 14);
  CHECK_THROWS_AS(crop(img, 3, 3, 2, 2), BoundsError);
}

TEST_CASE("saturation_map basics") {
  ImageU8 img(3, 1, 3);
  // white, pure red, mid gray
  const uint8_t px[] = {255, 255, 255, 255, 0, 0, 128, 128, 128};
  std::copy(std::begin(px), std::end(px), img.data.begin());
  const auto sat = saturation_map(img);
  CHECK(sat[0] == 0);
  CHECK(sat[1] == 255);
  CHECK(sat[2] == 0);
}

TEST_CASE("png rgb round trip") {
  ImageU8 img(33, 17, 3);
  Rng r(5);
  for (auto& b : img.data) b = static_cast<uint8_t>(r.below(256));
  const fs::path p = temp_dir() / "rt.png";
  write_png_rgb(p, img);
  const ImageU8 back = read_png(p);
  REQUIRE(back.same_shape(img));
  CHECK(back.data == img.data);
}

TEST_CASE("png bitmap writes 1-bit and reads back as 0/255 gray") {
  ImageU8 mask(19, 7, 1);
  Rng r(6);
  for (auto& b : mask.data) b = r.bernoulli(0.5) ? 1 : 0;
  const fs::path p = temp_dir() / "mask.png";
  write_png_bitmap(p, mask);
  const ImageU8 back = read_png(p);
  REQUIRE(back.width == 19);
  REQUIRE(back.height == 7);
  REQUIRE(back.channels == 1);
  for (size_t i = 0; i < mask.data.size(); ++i)
    CHECK(back.data[i] == (mask.data[i] ? 255 : 0));
  // 1-bit content should be far smaller than 8-bit would be.
  CHECK(fs::file_size(p) < 200);
}

TEST_CASE("png read failure throws IoError") {
  const fs::path p = temp_dir() / "nope.png";
  std::ofstream(p) << "not a png";
  CHECK_THROWS_AS(read_png(p), IoError);
  CHECK_THROWS_AS(read_png(temp_dir() / "missing.png"), IoError);
}

namespace {

// Deterministic tile content keyed by global pixel position.
uint8_t pix(int level, int64_t gx, int64_t gy, int c) {
  return static_cast<uint8_t>((gx * 3 + gy * 7 + level * 31 + c * 11) & 0xFF);
}

TileProvider gradient_provider(int tile) {
  return [tile](int level, int64_t tx, int64_t ty) {
    ImageU8 img(tile, tile, 3);
    for (int y = 0; y < tile; ++y)
      for (int x = 0; x < tile; ++x)
        for (int c = 0; c < 3; ++c)
          img.at(x, y, c) = pix(level, tx * tile + x, ty * tile + y, c);
    return img;
  };
}

} // namespace

TEST_CASE("tiff pyramid round trip with per-level mpp") {
  // The canonical 4-level geometry: downsamples 1,2,4,8.
  const std::vector<std::pair<int64_t, int64_t>> dims = {
      {8192, 4096}, {4096, 2048}, {2048, 1024}, {1024, 512}};
  const double base_mpp = 0.2525;
  const fs::path p = temp_dir() / "pyr.tiff";

  // Constant-per-level tiles keep this file tiny thanks to dedup.
  write_tiled_pyramid(p, dims, base_mpp, [](int level, int64_t, int64_t) {
    return ImageU8(512, 512, 3, static_cast<uint8_t>(40 * level + 5));
  });

  TiffReader rd(p);
  REQUIRE(rd.levels().size() == 4);
  const double want_mpp[] = {0.2525, 0.505, 1.01, 2.02};
  for (int i = 0; i < 4; ++i) {
    CHECK(rd.levels()[i].width == dims[i].first);
    CHECK(rd.levels()[i].height == dims[i].second);
    CHECK(rd.levels()[i].tile_width == 512);
    CHECK(rd.levels()[i].mpp == doctest::Approx(want_mpp[i]).epsilon(1e-9));
  }
  const ImageU8 r0 = rd.read_region(0, 100, 100, 8, 8);
  CHECK(r0.at(0, 0, 0) == 5);
  const ImageU8 r3 = rd.read_region(3, 1000, 500, 24, 12);
  CHECK(r3.at(23, 11, 2) == 125);
  CHECK_THROWS_AS(rd.read_region(0, 8190, 0, 8, 8), BoundsError);
  CHECK_THROWS_AS(rd.read_region(4, 0, 0, 1, 1), BoundsError);

  // Dedup: 4 distinct tiles of 786 KiB each, so well under the naive 133 MiB.
  CHECK(fs::file_size(p) < 4 * 786432 + 65536);
}

TEST_CASE("tiff read_region crosses tile boundaries correctly") {
  const fs::path p = temp_dir() / "grad.tiff";
  TiffWriteOptions opts;
  opts.tile_size = 16;
  opts.compression = TiffCompression::deflate;
  write_tiled_pyramid(p, {{64, 48}, {32, 24}}, 1.0, gradient_provider(16), opts);

  TiffReader rd(p);
  const ImageU8 r = rd.read_region(0, 5, 7, 40, 30);
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x)
      for (int c = 0; c < 3; ++c)
        REQUIRE(r.at(x, y, c) == pix(0, 5 + x, 7 + y, c));
  const ImageU8 r1 = rd.read_region(1, 10, 10, 20, 14);
  CHECK(r1.at(0, 0, 1) == pix(1, 10, 10, 1));
  CHECK(r1.at(19, 13, 2) == pix(1, 29, 23, 2));
}

TEST_CASE("tiff dedup shrinks files with repeated content") {
  const auto provider = [](int, int64_t, int64_t) { return ImageU8(512, 512, 3, 77); };
  const fs::path pd = temp_dir() / "dedup.tiff";
  const fs::path pn = temp_dir() / "nodedup.tiff";
  TiffWriteOptions no_dedup;
  no_dedup.dedup_tiles = false;
  write_tiled_pyramid(pd, {{1024, 1024}, {512, 512}}, 0.5, provider);
  write_tiled_pyramid(pn, {{1024, 1024}, {512, 512}}, 0.5, provider, no_dedup);
  CHECK(fs::file_size(pn) > 5 * 786432);
  CHECK(fs::file_size(pd) < 2 * 786432);

  TiffReader rd(pd);
  CHECK(rd.read_region(0, 1000, 1000, 4, 4).at(3, 3, 0) == 77);
}

TEST_CASE("tiff corrupted header raises IoError") {
  const fs::path p = temp_dir() / "garbage.tiff";
  std::ofstream(p, std::ios::binary) << "MMXX not a tiff at all";
  CHECK_THROWS_AS(TiffReader{p}, IoError);
}

TEST_CASE("tiff non-centimeter resolution raises MetadataError") {
  const fs::path p = temp_dir() / "inch.tiff";
  write_tiled_pyramid(p, {{32, 32}}, 1.0, gradient_provider(16),
                      TiffWriteOptions{.tile_size = 16});

  // Patch ResolutionUnit (tag 296) from centimeter (3) to inch (2).
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)),
                          std::istreambuf_iterator<char>());
  const char needle[] = {0x28, 0x01, 0x03, 0x00, 0x01, 0x00,
                         0x00, 0x00, 0x03, 0x00, 0x00, 0x00};
  auto it = std::search(bytes.begin(), bytes.end(), std::begin(needle), std::end(needle));
  REQUIRE(it != bytes.end());
  const auto pos = std::distance(bytes.begin(), it);
  f.seekp(pos + 8);
  const char inch = 0x02;
  f.write(&inch, 1);
  f.close();

  CHECK_THROWS_AS(TiffReader{p}, MetadataError);
}

TEST_CASE("tiff sparse tile (offset zero) reads as white") {
  const fs::path p = temp_dir() / "sparse.tiff";
  TiffWriteOptions opts;
  opts.tile_size = 16;
  opts.dedup_tiles = false;
  write_tiled_pyramid(p, {{32, 16}}, 1.0,
                      [](int, int64_t, int64_t) { return ImageU8(16, 16, 3, 50); },
                      opts);

  // Two tiles at offsets 8 and 8+768; zero the first entry of the offsets
  // array to simulate a sparse writer.
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)),
                          std::istreambuf_iterator<char>());
  const uint32_t first_off = 8, second_off = 8 + 16 * 16 * 3;
  std::vector<char> needle(8);
  std::memcpy(needle.data(), &first_off, 4);
  std::memcpy(needle.data() + 4, &second_off, 4);
  auto it = std::search(bytes.begin(), bytes.end(), needle.begin(), needle.end());
  REQUIRE(it != bytes.end());
  f.seekp(std::distance(bytes.begin(), it));
  const uint32_t zero = 0;
  f.write(reinterpret_cast<const char*>(&zero), 4);
  f.close();

  TiffReader rd(p);
  CHECK(rd.read_region(0, 0, 0, 1, 1).at(0, 0, 0) == 255);   // sparse -> white
  CHECK(rd.read_region(0, 20, 0, 1, 1).at(0, 0, 0) == 50);   // real tile intact
}
