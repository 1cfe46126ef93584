#include "stainqc/segmentation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "stainqc/errors.hpp"
#include "stainqc/png_io.hpp"

namespace stainqc {

using nlohmann::json;

namespace {

/// Otsu's threshold over a 256-bin histogram; -1 when the histogram is
/// degenerate (all mass in one bin).
int otsu_threshold(const std::array<int64_t, 256>& hist) {
  int64_t total = 0;
  double sum_all = 0;
  int nonzero_bins = 0;
  for (int i = 0; i < 256; ++i) {
    total += hist[i];
    sum_all += static_cast<double>(i) * hist[i];
    nonzero_bins += hist[i] > 0;
  }
  if (total == 0 || nonzero_bins < 2) return -1;

  double sum_bg = 0;
  int64_t weight_bg = 0;
  double best_var = -1;
  int best_t = -1;
  for (int t = 0; t < 255; ++t) {
    weight_bg += hist[t];
    if (weight_bg == 0) continue;
    const int64_t weight_fg = total - weight_bg;
    if (weight_fg == 0) break;
    sum_bg += static_cast<double>(t) * hist[t];
    const double mean_bg = sum_bg / weight_bg;
    const double mean_fg = (sum_all - sum_bg) / weight_fg;
    const double var = static_cast<double>(weight_bg) * weight_fg *
                       (mean_bg - mean_fg) * (mean_bg - mean_fg);
    if (var > best_var) {
      best_var = var;
      best_t = t;
    }
  }
  return best_t;
}

/// Disk structuring element offsets for a given radius.
std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> offs;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) offs.emplace_back(dx, dy);
  return offs;
}

/// Out-of-bounds reads as `border`: 0 for dilation (nothing grows in from
/// outside), 1 for erosion (the image edge does not eat the mask).
ImageU8 morph(const ImageU8& in, int radius, bool dilate) {
  if (radius <= 0) return in;
  const auto offs = disk_offsets(radius);
  ImageU8 out(in.width, in.height, 1);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      uint8_t v = dilate ? 0 : 1;
      for (const auto& [dx, dy] : offs) {
        const int sx = x + dx;
        const int sy = y + dy;
        uint8_t s;
        if (sx < 0 || sy < 0 || sx >= in.width || sy >= in.height)
          s = dilate ? 0 : 1;
        else
          s = in.at(sx, sy) != 0;
        if (dilate ? s : !s) {
          v = dilate ? 1 : 0;
          break;
        }
      }
      out.at(x, y) = v;
    }
  }
  return out;
}

/// 4-connected components below `min_area` pixels are cleared.
void remove_small_components(ImageU8& mask, int64_t min_area) {
  if (min_area <= 1) return;
  const int w = mask.width;
  const int h = mask.height;
  std::vector<uint8_t> visited(static_cast<size_t>(w) * h, 0);
  std::vector<int> stack;
  std::vector<int> component;
  for (int start = 0; start < w * h; ++start) {
    if (!mask.data[start] || visited[start]) continue;
    stack.assign(1, start);
    component.clear();
    visited[start] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      component.push_back(p);
      const int x = p % w;
      const int y = p / w;
      const int neigh[4] = {p - 1, p + 1, p - w, p + w};
      const bool ok[4] = {x > 0, x < w - 1, y > 0, y < h - 1};
      for (int i = 0; i < 4; ++i) {
        if (!ok[i]) continue;
        const int q = neigh[i];
        if (mask.data[q] && !visited[q]) {
          visited[q] = 1;
          stack.push_back(q);
        }
      }
    }
    if (static_cast<int64_t>(component.size()) < min_area)
      for (int p : component) mask.data[p] = 0;
  }
}

} // namespace

TissueMask segment_tissue(const Thumbnail& thumb, const SegmentationParams& params) {
  if (thumb.pixels.channels != 3)
    throw ArgumentError("segment_tissue: thumbnail must be RGB");

  const ImageU8 content = crop(thumb.pixels, thumb.content.x, thumb.content.y,
                               thumb.content.width, thumb.content.height);
  const std::vector<uint8_t> sat = saturation_map(content);

  std::array<int64_t, 256> hist{};
  for (uint8_t s : sat) hist[s]++;
  int threshold = otsu_threshold(hist);
  if (threshold < 0)
    threshold = static_cast<int>(std::lround(params.fallback_saturation * 255.0));

  TissueMask mask;
  mask.mask_mpp = thumb.effective_mpp;
  mask.rotated = thumb.rotated;
  mask.source = MaskSource::auto_;
  mask.bitmap = ImageU8(content.width, content.height, 1);
  for (size_t i = 0; i < sat.size(); ++i) mask.bitmap.data[i] = sat[i] > threshold;

  mask.bitmap = morph(morph(mask.bitmap, params.close_radius, true),
                      params.close_radius, false); // close
  mask.bitmap = morph(morph(mask.bitmap, params.open_radius, false),
                      params.open_radius, true); // open
  const int64_t min_area = static_cast<int64_t>(
      params.min_component_frac * static_cast<double>(content.width) * content.height);
  remove_small_components(mask.bitmap, min_area);

  mask.blank_warning = mask.tissue_pixels() == 0;
  return mask;
}

TissueMask apply_override(const TissueMask& auto_mask,
                          const std::filesystem::path& override_png) {
  ImageU8 over = read_png(override_png);
  if (over.channels != 1)
    throw OverrideShapeError("override mask must be a bitmap PNG: " +
                             override_png.string());
  if (over.width != auto_mask.bitmap.width || over.height != auto_mask.bitmap.height)
    throw OverrideShapeError(
        "override mask is " + std::to_string(over.width) + "x" +
        std::to_string(over.height) + " but the slide mask grid is " +
        std::to_string(auto_mask.bitmap.width) + "x" +
        std::to_string(auto_mask.bitmap.height));

  TissueMask mask;
  mask.mask_mpp = auto_mask.mask_mpp;
  mask.rotated = auto_mask.rotated;
  mask.source = MaskSource::manual_override;
  mask.bitmap = ImageU8(over.width, over.height, 1);
  for (size_t i = 0; i < over.data.size(); ++i) mask.bitmap.data[i] = over.data[i] != 0;
  mask.blank_warning = mask.tissue_pixels() == 0;
  return mask;
}

void save_mask(const std::filesystem::path& png_path, const TissueMask& mask) {
  write_png_bitmap(png_path, mask.bitmap);
  json side = {
      {"mask_mpp", mask.mask_mpp},
      {"source", mask.source == MaskSource::auto_ ? "auto" : "manual_override"},
      {"rotated", mask.rotated},
  };
  std::ofstream out(png_path.string() + ".json");
  out << side.dump(2) << "\n";
  if (!out) throw IoError("cannot write sidecar: " + png_path.string() + ".json");
}

TissueMask load_mask(const std::filesystem::path& png_path) {
  TissueMask mask;
  ImageU8 img = read_png(png_path);
  if (img.channels != 1)
    throw MetadataError("mask PNG is not a bitmap: " + png_path.string());
  mask.bitmap = ImageU8(img.width, img.height, 1);
  for (size_t i = 0; i < img.data.size(); ++i) mask.bitmap.data[i] = img.data[i] != 0;

  std::ifstream in(png_path.string() + ".json");
  if (!in) throw IoError("missing mask sidecar: " + png_path.string() + ".json");
  json side;
  try {
    in >> side;
    mask.mask_mpp = side.at("mask_mpp").get<double>();
    mask.rotated = side.at("rotated").get<bool>();
    mask.source = side.at("source").get<std::string>() == "manual_override"
                      ? MaskSource::manual_override
                      : MaskSource::auto_;
  } catch (const json::exception& e) {
    throw MetadataError("bad mask sidecar " + png_path.string() + ".json: " + e.what());
  }
  mask.blank_warning = mask.tissue_pixels() == 0;
  return mask;
}

double mask_iou(const ImageU8& a, const ImageU8& b) {
  if (!a.same_shape(b)) throw ShapeError("mask_iou: shape mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const bool pa = a.data[i] != 0;
    const bool pb = b.data[i] != 0;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace stainqc
