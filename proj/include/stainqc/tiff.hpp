#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "stainqc/image.hpp"

namespace stainqc {

/// Geometry of one pyramid level inside a tiled TIFF.
struct TiffLevel {
  int64_t width = 0;
  int64_t height = 0;
  int tile_width = 0;
  int tile_height = 0;
  double mpp = 0.0; // microns per pixel at this level
};

enum class TiffCompression { none, deflate };

/// Supplies RGB tile pixels for the writer. Tiles are always full
/// tile_size x tile_size; content past the level edge is padding.
using TileProvider = std::function<ImageU8(int level, int64_t tile_x, int64_t tile_y)>;

struct TiffWriteOptions {
  int tile_size = 512;
  TiffCompression compression = TiffCompression::none;
  /// Identical tile payloads share file storage. Valid TIFF (offsets may
  /// point anywhere) and keeps large synthetic slides with repeating
  /// content small on disk.
  bool dedup_tiles = true;
};

/// Writes a classic little-endian tiled multi-page TIFF, one IFD per pyramid
/// level, with resolution tags carrying microns-per-pixel.
void write_tiled_pyramid(const std::filesystem::path& path,
                         const std::vector<std::pair<int64_t, int64_t>>& level_dims,
                         double base_mpp, const TileProvider& provider,
                         const TiffWriteOptions& opts = {});

/// Reads the subset of TIFF this project emits and consumes: tiled, 8-bit
/// RGB, chunky planar layout, compression none or deflate. Levels are the
/// IFD chain in file order.
class TiffReader {
public:
  explicit TiffReader(const std::filesystem::path& path);
  ~TiffReader();
  TiffReader(TiffReader&&) noexcept;
  TiffReader& operator=(TiffReader&&) noexcept;
  TiffReader(const TiffReader&) = delete;
  TiffReader& operator=(const TiffReader&) = delete;

  const std::vector<TiffLevel>& levels() const;

  /// RGB pixels of a rectangle fully inside the level. Tiles with a zero
  /// offset (sparse files) read as white.
  ImageU8 read_region(int level, int64_t x, int64_t y, int64_t w, int64_t h);

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace stainqc
