#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stainqc/image.hpp"
#include "stainqc/tiff.hpp"

namespace stainqc {

struct TissueMask; // segmentation.hpp

struct SlideLevel {
  int64_t width = 0;
  int64_t height = 0;
  double downsample = 1.0;
  double mpp = 0.0;
};

/// Pyramid metadata plus a lazy reader handle. Not shareable across
/// concurrent readers; each worker opens its own.
class SlidePyramid {
public:
  explicit SlidePyramid(const std::filesystem::path& path);

  const std::vector<SlideLevel>& levels() const { return levels_; }
  double base_mpp() const { return levels_[0].mpp; }
  const std::filesystem::path& path() const { return path_; }

  ImageU8 read_region(int level, int64_t x, int64_t y, int64_t w, int64_t h) const;

private:
  std::filesystem::path path_;
  mutable TiffReader reader_;
  std::vector<SlideLevel> levels_;
};

SlidePyramid open_slide(const std::filesystem::path& path);

struct Thumbnail {
  ImageU8 pixels;          // exactly the requested target, white-padded
  double effective_mpp = 0; // of the content pixels
  bool rotated = false;    // 90 deg cw applied so width >= height
  PadBox content;          // where real pixels sit inside `pixels`
};

/// The paper's thumbnail convention: rotate portrait slides so width is the
/// longer side, pick the smallest pyramid level covering the target, box
/// downscale to fit, pad with white to the exact target.
Thumbnail extract_thumbnail(const SlidePyramid& slide, int target_w, int target_h);

/// PNG + JSON sidecar ({effective_mpp, rotated, pad_box}). `png_path` names
/// the image; the sidecar lives next to it with ".json" appended.
void save_thumbnail(const std::filesystem::path& png_path, const Thumbnail& thumb);
Thumbnail load_thumbnail(const std::filesystem::path& png_path);

struct PatchGrid {
  int patch_size_px = 0;
  double target_mpp = 0;
  int level_used = 0;
  std::vector<std::pair<int64_t, int64_t>> coords; // level-0 top-left, slide frame
  bool blank_warning = false;
};

/// Regular non-overlapping grid over tissue. Patches whose mask coverage is
/// below `coverage_threshold` are dropped; an empty mask yields an empty grid
/// with the warning flag set.
PatchGrid tessellate(const SlidePyramid& slide, const TissueMask& mask,
                     int patch_size_px, double target_mpp,
                     double coverage_threshold = 0.25);

/// Reads patch pixels for one grid coordinate at target_mpp.
ImageU8 read_patch(const SlidePyramid& slide, int64_t x, int64_t y,
                   int patch_size_px, double target_mpp);

} // namespace stainqc
