#pragma once

#include <filesystem>

#include "stainqc/slide.hpp"

namespace stainqc {

enum class MaskSource { auto_, manual_override };

/// Tissue/background mask over the thumbnail's content box (padding
/// removed), in the thumbnail's orientation. bitmap pixels are 0/1.
struct TissueMask {
  ImageU8 bitmap; // channels == 1
  double mask_mpp = 0;
  MaskSource source = MaskSource::auto_;
  bool rotated = false;     // matches the thumbnail it was derived from
  bool blank_warning = false;

  int64_t tissue_pixels() const {
    int64_t n = 0;
    for (uint8_t b : bitmap.data) n += b != 0;
    return n;
  }
};

struct SegmentationParams {
  int close_radius = 3;
  int open_radius = 2;
  double min_component_frac = 0.0005; // of mask area
  double fallback_saturation = 0.05;  // when Otsu is degenerate
};

/// Otsu threshold over the saturation channel, morphological close/open,
/// small-component removal. Deterministic; a blank slide sets the warning.
TissueMask segment_tissue(const Thumbnail& thumb, const SegmentationParams& params = {});

/// Swaps in a reviewer-provided mask of identical geometry.
TissueMask apply_override(const TissueMask& auto_mask,
                          const std::filesystem::path& override_png);

/// 1-bit PNG + JSON sidecar ({mask_mpp, source, rotated}).
void save_mask(const std::filesystem::path& png_path, const TissueMask& mask);
TissueMask load_mask(const std::filesystem::path& png_path);

/// Intersection-over-union of two same-shape bitmaps.
double mask_iou(const ImageU8& a, const ImageU8& b);

} // namespace stainqc
