#include "stainqc/slide.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "stainqc/errors.hpp"
#include "stainqc/png_io.hpp"
#include "stainqc/segmentation.hpp"

namespace stainqc {

using nlohmann::json;

SlidePyramid::SlidePyramid(const std::filesystem::path& path)
    : path_(path), reader_(path) {
  const auto& lvls = reader_.levels();
  const double w0 = static_cast<double>(lvls[0].width);
  for (const TiffLevel& l : lvls)
    levels_.push_back({l.width, l.height, w0 / static_cast<double>(l.width), l.mpp});
  for (size_t i = 1; i < levels_.size(); ++i)
    if (levels_[i].downsample <= levels_[i - 1].downsample)
      throw MetadataError("pyramid levels are not strictly shrinking: " + path.string());
  if (levels_[0].mpp <= 0)
    throw MetadataError("slide base mpp must be positive: " + path.string());
}

ImageU8 SlidePyramid::read_region(int level, int64_t x, int64_t y, int64_t w,
                                  int64_t h) const {
  return reader_.read_region(level, x, y, w, h);
}

SlidePyramid open_slide(const std::filesystem::path& path) { return SlidePyramid(path); }

Thumbnail extract_thumbnail(const SlidePyramid& slide, int target_w, int target_h) {
  if (target_w <= 0 || target_h <= 0 || target_w < target_h)
    throw ArgumentError("thumbnail target must be landscape (w >= h > 0)");

  const auto& levels = slide.levels();
  const bool rotated = levels[0].height > levels[0].width;
  auto oriented = [&](const SlideLevel& l) {
    return rotated ? std::pair<int64_t, int64_t>{l.height, l.width}
                   : std::pair<int64_t, int64_t>{l.width, l.height};
  };

  const auto [w0, h0] = oriented(levels[0]);
  if (w0 < target_w || h0 < target_h)
    throw UpsampleRefusedError("thumbnail target " + std::to_string(target_w) + "x" +
                               std::to_string(target_h) + " exceeds slide " +
                               std::to_string(w0) + "x" + std::to_string(h0));

  // Smallest level still covering the target in both axes.
  int level = 0;
  for (int i = 1; i < static_cast<int>(levels.size()); ++i) {
    const auto [lw, lh] = oriented(levels[i]);
    if (lw >= target_w && lh >= target_h) level = i;
  }

  const auto [lw, lh] = oriented(levels[level]);
  ImageU8 raw = slide.read_region(level, 0, 0, levels[level].width, levels[level].height);
  if (rotated) raw = rotate90_cw(raw);

  const double scale =
      std::min(static_cast<double>(target_w) / lw, static_cast<double>(target_h) / lh);
  const int content_w =
      std::max<int>(1, std::min<int64_t>(target_w, std::llround(lw * scale)));
  const int content_h =
      std::max<int>(1, std::min<int64_t>(target_h, std::llround(lh * scale)));

  Thumbnail thumb;
  thumb.rotated = rotated;
  thumb.pixels = pad_to(resize_area(raw, content_w, content_h), target_w, target_h, 255,
                        &thumb.content);
  thumb.effective_mpp =
      slide.base_mpp() * static_cast<double>(w0) / static_cast<double>(content_w);
  return thumb;
}

void save_thumbnail(const std::filesystem::path& png_path, const Thumbnail& thumb) {
  write_png_rgb(png_path, thumb.pixels);
  json side = {
      {"effective_mpp", thumb.effective_mpp},
      {"rotated", thumb.rotated},
      {"pad_box",
       {{"x", thumb.content.x},
        {"y", thumb.content.y},
        {"width", thumb.content.width},
        {"height", thumb.content.height}}},
  };
  std::ofstream out(png_path.string() + ".json");
  out << side.dump(2) << "\n";
  if (!out) throw IoError("cannot write sidecar: " + png_path.string() + ".json");
}

Thumbnail load_thumbnail(const std::filesystem::path& png_path) {
  Thumbnail thumb;
  thumb.pixels = read_png(png_path);
  std::ifstream in(png_path.string() + ".json");
  if (!in) throw IoError("missing thumbnail sidecar: " + png_path.string() + ".json");
  json side;
  try {
    in >> side;
    thumb.effective_mpp = side.at("effective_mpp").get<double>();
    thumb.rotated = side.at("rotated").get<bool>();
    const json& box = side.at("pad_box");
    thumb.content = {box.at("x").get<int>(), box.at("y").get<int>(),
                     box.at("width").get<int>(), box.at("height").get<int>()};
  } catch (const json::exception& e) {
    throw MetadataError("bad thumbnail sidecar " + png_path.string() + ".json: " +
                        e.what());
  }
  return thumb;
}

namespace {

// Prefix-sum table for O(1) rectangle sums over the mask bitmap.
struct IntegralMask {
  int w, h;
  std::vector<int64_t> sums; // (w+1) x (h+1)

  explicit IntegralMask(const ImageU8& mask)
      : w(mask.width), h(mask.height), sums(static_cast<size_t>(w + 1) * (h + 1), 0) {
    for (int y = 0; y < h; ++y) {
      const uint8_t* row = mask.row(y);
      int64_t run = 0;
      for (int x = 0; x < w; ++x) {
        run += row[x] != 0;
        sums[static_cast<size_t>(y + 1) * (w + 1) + x + 1] =
            sums[static_cast<size_t>(y) * (w + 1) + x + 1] + run;
      }
    }
  }

  int64_t rect(int x0, int y0, int x1, int y1) const {
    x0 = std::clamp(x0, 0, w);
    x1 = std::clamp(x1, 0, w);
    y0 = std::clamp(y0, 0, h);
    y1 = std::clamp(y1, 0, h);
    if (x1 <= x0 || y1 <= y0) return 0;
    auto at = [&](int x, int y) { return sums[static_cast<size_t>(y) * (w + 1) + x]; };
    return at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0);
  }
};

} // namespace

PatchGrid tessellate(const SlidePyramid& slide, const TissueMask& mask,
                     int patch_size_px, double target_mpp, double coverage_threshold) {
  if (patch_size_px <= 0) throw ArgumentError("patch size must be positive");
  if (target_mpp < slide.base_mpp() - 1e-9)
    throw ArgumentError("target mpp finer than slide base mpp");

  PatchGrid grid;
  grid.patch_size_px = patch_size_px;
  grid.target_mpp = target_mpp;

  // Level whose mpp is nearest without exceeding the target.
  const auto& levels = slide.levels();
  int level = 0;
  for (int i = 1; i < static_cast<int>(levels.size()); ++i)
    if (levels[i].mpp <= target_mpp + 1e-9) level = i;
  grid.level_used = level;

  if (mask.tissue_pixels() == 0) {
    grid.blank_warning = true;
    return grid;
  }

  // Footprint of one patch in level-0 pixels. A non-integral footprint is
  // strided up so patches never overlap.
  const double step = patch_size_px * target_mpp / slide.base_mpp();
  const int64_t stride = static_cast<int64_t>(std::ceil(step - 1e-9));
  const int64_t w0 = levels[0].width;
  const int64_t h0 = levels[0].height;
  if (stride > w0 || stride > h0) return grid;

  const IntegralMask integral(mask.bitmap);
  const double scale = mask.mask_mpp / slide.base_mpp(); // level-0 px per mask px

  const int64_t nx = w0 / stride;
  const int64_t ny = h0 / stride;
  for (int64_t iy = 0; iy < ny; ++iy) {
    for (int64_t ix = 0; ix < nx; ++ix) {
      const int64_t x = ix * stride;
      const int64_t y = iy * stride;
      // Patch rectangle in the mask's (possibly rotated) frame.
      double rx0, ry0, rx1, ry1;
      if (mask.rotated) {
        rx0 = static_cast<double>(h0 - (y + stride));
        ry0 = static_cast<double>(x);
        rx1 = static_cast<double>(h0 - y);
        ry1 = static_cast<double>(x + stride);
      } else {
        rx0 = static_cast<double>(x);
        ry0 = static_cast<double>(y);
        rx1 = static_cast<double>(x + stride);
        ry1 = static_cast<double>(y + stride);
      }
      const int mx0 = static_cast<int>(std::llround(rx0 / scale));
      const int my0 = static_cast<int>(std::llround(ry0 / scale));
      const int mx1 = static_cast<int>(std::llround(rx1 / scale));
      const int my1 = static_cast<int>(std::llround(ry1 / scale));
      const int64_t area =
          static_cast<int64_t>(std::max(mx1 - mx0, 1)) * std::max(my1 - my0, 1);
      const double coverage =
          static_cast<double>(integral.rect(mx0, my0, mx1, my1)) / static_cast<double>(area);
      if (coverage >= coverage_threshold) grid.coords.emplace_back(x, y);
    }
  }
  if (grid.coords.empty()) grid.blank_warning = true;
  return grid;
}

ImageU8 read_patch(const SlidePyramid& slide, int64_t x, int64_t y, int patch_size_px,
                   double target_mpp) {
  const auto& levels = slide.levels();
  int level = 0;
  for (int i = 1; i < static_cast<int>(levels.size()); ++i)
    if (levels[i].mpp <= target_mpp + 1e-9) level = i;

  const SlideLevel& l = levels[level];
  const int64_t lx = std::llround(static_cast<double>(x) / l.downsample);
  const int64_t ly = std::llround(static_cast<double>(y) / l.downsample);
  const int64_t span =
      std::max<int64_t>(1, std::llround(patch_size_px * target_mpp / l.mpp));
  if (lx < 0 || ly < 0 || lx + span > l.width || ly + span > l.height)
    throw BoundsError("patch at (" + std::to_string(x) + "," + std::to_string(y) +
                      ") spills outside the slide");
  return resize_area(slide.read_region(level, lx, ly, span, span), patch_size_px,
                     patch_size_px);
}

} // namespace stainqc
