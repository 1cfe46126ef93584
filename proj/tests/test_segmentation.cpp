#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "stainqc/errors.hpp"
#include "stainqc/png_io.hpp"
#include "stainqc/segmentation.hpp"

using namespace stainqc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "stainqc_test_seg";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Thumbnail make_thumb(ImageU8 pixels, bool rotated = false) {
  Thumbnail t;
  t.content = {0, 0, pixels.width, pixels.height};
  t.pixels = std::move(pixels);
  t.effective_mpp = 8.0;
  t.rotated = rotated;
  return t;
}

void draw_disc(ImageU8& img, double cx, double cy, double r, uint8_t cr, uint8_t cg,
               uint8_t cb) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= r * r) {
        img.at(x, y, 0) = cr;
        img.at(x, y, 1) = cg;
        img.at(x, y, 2) = cb;
      }
}

ImageU8 disc_truth(int w, int h, std::initializer_list<std::array<double, 3>> discs) {
  ImageU8 m(w, h, 1);
  for (const auto& d : discs)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((x + 0.5 - d[0]) * (x + 0.5 - d[0]) + (y + 0.5 - d[1]) * (y + 0.5 - d[1]) <=
            d[2] * d[2])
          m.at(x, y) = 1;
  return m;
}

} // namespace

TEST_CASE("segment_tissue recovers saturated discs with high IoU") {
  ImageU8 img(400, 200, 3, 255);
  draw_disc(img, 120, 100, 45, 170, 40, 60);
  draw_disc(img, 290, 80, 30, 60, 60, 160);
  const Thumbnail t = make_thumb(std::move(img));
  const TissueMask mask = segment_tissue(t);
  CHECK_FALSE(mask.blank_warning);
  CHECK(mask.source == MaskSource::auto_);
  CHECK(mask.mask_mpp == doctest::Approx(8.0));

  const ImageU8 truth =
      disc_truth(400, 200, {{{120, 100, 45}}, {{290, 80, 30}}});
  CHECK(mask_iou(mask.bitmap, truth) >= 0.98);
}

TEST_CASE("segment_tissue blank and saturated extremes") {
  const TissueMask blank = segment_tissue(make_thumb(ImageU8(64, 32, 3, 255)));
  CHECK(blank.blank_warning);
  CHECK(blank.tissue_pixels() == 0);

  ImageU8 sat(64, 32, 3);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 64; ++x) {
      sat.at(x, y, 0) = 200;
      sat.at(x, y, 1) = 0;
      sat.at(x, y, 2) = 0;
    }
  const TissueMask full = segment_tissue(make_thumb(std::move(sat)));
  CHECK_FALSE(full.blank_warning);
  CHECK(full.tissue_pixels() == 64 * 32);
}

TEST_CASE("segment_tissue is deterministic") {
  ImageU8 img(120, 90, 3, 255);
  draw_disc(img, 60, 45, 25, 150, 70, 50);
  const TissueMask a = segment_tissue(make_thumb(img));
  const TissueMask b = segment_tissue(make_thumb(img));
  CHECK(a.bitmap.data == b.bitmap.data);
}

TEST_CASE("segmentation commutes with rotation") {
  ImageU8 img(160, 90, 3, 255);
  draw_disc(img, 50, 30, 22, 170, 40, 60);
  draw_disc(img, 120, 60, 18, 60, 140, 60);
  const TissueMask plain = segment_tissue(make_thumb(img));
  const TissueMask rot = segment_tissue(make_thumb(rotate90_cw(img), true));
  CHECK(rot.rotated);
  CHECK(rotate90_cw(plain.bitmap).data == rot.bitmap.data);
}

TEST_CASE("small components are removed by the area filter") {
  SegmentationParams params;
  params.open_radius = 0; // isolate the component filter from opening
  ImageU8 img(400, 200, 3, 255);
  draw_disc(img, 200, 100, 50, 170, 40, 60);
  // 3x3 speckle: area 9 < 0.05% of 400*200 = 40 px.
  for (int y = 10; y < 13; ++y)
    for (int x = 10; x < 13; ++x) {
      img.at(x, y, 0) = 170;
      img.at(x, y, 1) = 40;
      img.at(x, y, 2) = 60;
    }
  const TissueMask mask = segment_tissue(make_thumb(std::move(img)), params);
  CHECK(mask.bitmap.at(11, 11) == 0);   // speckle gone
  CHECK(mask.bitmap.at(200, 100) == 1); // disc stays
}

TEST_CASE("apply_override swaps the mask and flips the source") {
  ImageU8 img(100, 60, 3, 255);
  draw_disc(img, 50, 30, 20, 170, 40, 60);
  const TissueMask autom = segment_tissue(make_thumb(std::move(img)));

  SUBCASE("identity override") {
    const fs::path p = temp_dir() / "same.png";
    write_png_bitmap(p, autom.bitmap);
    const TissueMask over = apply_override(autom, p);
    CHECK(over.source == MaskSource::manual_override);
    CHECK(over.bitmap.data == autom.bitmap.data);
    CHECK(over.mask_mpp == autom.mask_mpp);
    CHECK_FALSE(over.blank_warning);
  }
  SUBCASE("empty override warns") {
    const fs::path p = temp_dir() / "empty.png";
    write_png_bitmap(p, ImageU8(100, 60, 1, 0));
    const TissueMask over = apply_override(autom, p);
    CHECK(over.blank_warning);
    CHECK(over.tissue_pixels() == 0);
  }
  SUBCASE("off-by-one dims raise OverrideShapeError") {
    const fs::path p = temp_dir() / "off.png";
    write_png_bitmap(p, ImageU8(101, 60, 1, 1));
    CHECK_THROWS_AS(apply_override(autom, p), OverrideShapeError);
  }
}

TEST_CASE("mask save/load round trip") {
  ImageU8 img(90, 50, 3, 255);
  draw_disc(img, 45, 25, 15, 170, 40, 60);
  const TissueMask mask = segment_tissue(make_thumb(std::move(img), true));
  const fs::path p = temp_dir() / "mask.png";
  save_mask(p, mask);
  const TissueMask back = load_mask(p);
  CHECK(back.bitmap.data == mask.bitmap.data);
  CHECK(back.mask_mpp == doctest::Approx(mask.mask_mpp));
  CHECK(back.rotated == mask.rotated);
  CHECK(back.source == MaskSource::auto_);
}

TEST_CASE("mask_iou sanity") {
  ImageU8 a(4, 1, 1);
  ImageU8 b(4, 1, 1);
  a.data = {1, 1, 0, 0};
  b.data = {0, 1, 1, 0};
  CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3));
  CHECK(mask_iou(a, a) == 1.0);
  ImageU8 z(4, 1, 1, 0);
  CHECK(mask_iou(z, z) == 1.0);
  CHECK_THROWS_AS(mask_iou(a, ImageU8(5, 1, 1)), ShapeError);
}
