#pragma once

#include <cstdint>
#include <vector>

namespace stainqc {

/// Interleaved 8-bit image, row-major. channels is 1 (mask/gray) or 3 (RGB).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> data;

  ImageU8() = default;
  ImageU8(int w, int h, int c, uint8_t fill = 0)
      : width(w), height(h), channels(c),
        data(static_cast<size_t>(w) * h * c, fill) {}

  uint8_t* row(int y) { return data.data() + static_cast<size_t>(y) * width * channels; }
  const uint8_t* row(int y) const {
    return data.data() + static_cast<size_t>(y) * width * channels;
  }
  uint8_t& at(int x, int y, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t byte_count() const { return data.size(); }
  bool same_shape(const ImageU8& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

/// Content placement after aspect-preserving fit + padding.
struct PadBox {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

/// Box (area-average) resampling. Exact copy when dimensions already match.
ImageU8 resize_area(const ImageU8& src, int out_w, int out_h);

/// Clockwise quarter turn. A source point (x, y) lands at
/// (src_height - 1 - y, x) in the rotated frame.
ImageU8 rotate90_cw(const ImageU8& src);

ImageU8 flip_horizontal(const ImageU8& src);
ImageU8 flip_vertical(const ImageU8& src);

inline void rotate90_cw_point(double x, double y, double src_h, double* rx, double* ry) {
  *rx = src_h - y;
  *ry = x;
}

/// Pads src to exactly (out_w, out_h) with `fill`, content centered.
ImageU8 pad_to(const ImageU8& src, int out_w, int out_h, uint8_t fill, PadBox* box);

/// Crop; the rectangle must lie inside the image.
ImageU8 crop(const ImageU8& src, int x, int y, int w, int h);

/// HSV-style saturation (max-min)/max per pixel, scaled to [0, 255].
std::vector<uint8_t> saturation_map(const ImageU8& rgb);

} // namespace stainqc
