#include "stainqc/tiff.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <unordered_map>

#include "stainqc/errors.hpp"

namespace stainqc {

namespace {

constexpr uint16_t kTypeShort = 3;
constexpr uint16_t kTypeLong = 4;
constexpr uint16_t kTypeRational = 5;

constexpr uint16_t kTagNewSubfileType = 254;
constexpr uint16_t kTagImageWidth = 256;
constexpr uint16_t kTagImageLength = 257;
constexpr uint16_t kTagBitsPerSample = 258;
constexpr uint16_t kTagCompression = 259;
constexpr uint16_t kTagPhotometric = 262;
constexpr uint16_t kTagSamplesPerPixel = 277;
constexpr uint16_t kTagXResolution = 282;
constexpr uint16_t kTagYResolution = 283;
constexpr uint16_t kTagPlanarConfig = 284;
constexpr uint16_t kTagResolutionUnit = 296;
constexpr uint16_t kTagTileWidth = 322;
constexpr uint16_t kTagTileLength = 323;
constexpr uint16_t kTagTileOffsets = 324;
constexpr uint16_t kTagTileByteCounts = 325;

constexpr uint64_t kMaxFileSize = 0xFFFFFFF0ULL;

uint64_t fnv1a(const uint8_t* p, size_t n) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Entry {
  uint16_t tag;
  uint16_t type;
  uint32_t count;
  uint32_t value;
};

// Resolution stored as pixels-per-cm with denominator round(mpp * 1e4), so
// four decimal digits of mpp survive the round trip exactly.
std::pair<uint32_t, uint32_t> mpp_to_rational(double mpp) {
  const uint32_t den = static_cast<uint32_t>(std::llround(mpp * 1e4));
  return {100000000u, den == 0 ? 1u : den};
}

std::vector<uint8_t> deflate_bytes(const uint8_t* src, size_t n) {
  uLongf bound = compressBound(static_cast<uLong>(n));
  std::vector<uint8_t> out(bound);
  if (compress2(out.data(), &bound, src, static_cast<uLong>(n), 6) != Z_OK)
    throw IoError("deflate failed");
  out.resize(bound);
  return out;
}

class Writer {
public:
  explicit Writer(const std::filesystem::path& path) : path_(path) {
    f_ = std::fopen(path.c_str(), "wb");
    if (!f_) throw IoError("cannot create: " + path.string());
  }
  ~Writer() {
    if (f_) std::fclose(f_);
  }

  void put_bytes(const void* p, size_t n) {
    if (pos_ + n > kMaxFileSize) throw IoError("TIFF would exceed 4 GiB: " + path_.string());
    if (std::fwrite(p, 1, n, f_) != n) throw IoError("short write: " + path_.string());
    pos_ += n;
  }
  template <class T>
  void put(T v) {
    put_bytes(&v, sizeof(T)); // little-endian host
  }
  void align2() {
    if (pos_ & 1) put<uint8_t>(0);
  }
  uint64_t pos() const { return pos_; }
  void patch_u32(uint64_t at, uint32_t v) {
    std::fflush(f_);
    if (fseeko(f_, static_cast<off_t>(at), SEEK_SET) != 0)
      throw IoError("seek failed: " + path_.string());
    if (std::fwrite(&v, 1, 4, f_) != 4) throw IoError("short write: " + path_.string());
    if (fseeko(f_, static_cast<off_t>(pos_), SEEK_SET) != 0)
      throw IoError("seek failed: " + path_.string());
  }

private:
  std::filesystem::path path_;
  FILE* f_ = nullptr;
  uint64_t pos_ = 0;
};

} // namespace

void write_tiled_pyramid(const std::filesystem::path& path,
                         const std::vector<std::pair<int64_t, int64_t>>& level_dims,
                         double base_mpp, const TileProvider& provider,
                         const TiffWriteOptions& opts) {
  if (level_dims.empty()) throw ArgumentError("write_tiled_pyramid: no levels");
  if (base_mpp <= 0) throw ArgumentError("write_tiled_pyramid: base_mpp must be positive");
  const int ts = opts.tile_size;

  Writer w(path);
  w.put_bytes("II", 2);
  w.put<uint16_t>(42);
  w.put<uint32_t>(0); // first IFD offset, patched at the end

  struct LevelTiles {
    std::vector<uint32_t> offsets;
    std::vector<uint32_t> counts;
  };
  std::vector<LevelTiles> tiles(level_dims.size());

  // Dedup map keeps payload copies for exact comparison, capped so corpora
  // with non-repeating content cannot balloon memory.
  struct Seen {
    std::vector<uint8_t> payload;
    uint32_t offset;
  };
  std::unordered_map<uint64_t, std::vector<Seen>> seen;
  size_t seen_bytes = 0;
  constexpr size_t kSeenCap = 512ull << 20;

  const size_t raw_tile_bytes = static_cast<size_t>(ts) * ts * 3;
  for (size_t lvl = 0; lvl < level_dims.size(); ++lvl) {
    const auto [lw, lh] = level_dims[lvl];
    const int64_t nx = (lw + ts - 1) / ts;
    const int64_t ny = (lh + ts - 1) / ts;
    tiles[lvl].offsets.reserve(nx * ny);
    tiles[lvl].counts.reserve(nx * ny);
    for (int64_t tyi = 0; tyi < ny; ++tyi) {
      for (int64_t txi = 0; txi < nx; ++txi) {
        ImageU8 img = provider(static_cast<int>(lvl), txi, tyi);
        if (img.width != ts || img.height != ts || img.channels != 3)
          throw ArgumentError("tile provider returned wrong shape");
        std::vector<uint8_t> payload;
        const uint8_t* bytes = img.data.data();
        size_t nbytes = raw_tile_bytes;
        if (opts.compression == TiffCompression::deflate) {
          payload = deflate_bytes(img.data.data(), raw_tile_bytes);
          bytes = payload.data();
          nbytes = payload.size();
        } else {
          payload = std::move(img.data);
          bytes = payload.data();
        }

        uint32_t offset = 0;
        if (opts.dedup_tiles) {
          const uint64_t h = fnv1a(bytes, nbytes);
          auto it = seen.find(h);
          if (it != seen.end()) {
            for (const Seen& s : it->second) {
              if (s.payload.size() == nbytes &&
                  std::memcmp(s.payload.data(), bytes, nbytes) == 0) {
                offset = s.offset;
                break;
              }
            }
          }
          if (offset == 0) {
            w.align2();
            offset = static_cast<uint32_t>(w.pos());
            w.put_bytes(bytes, nbytes);
            if (seen_bytes + nbytes <= kSeenCap) {
              seen_bytes += nbytes;
              seen[h].push_back({std::move(payload), offset});
            }
          }
        } else {
          w.align2();
          offset = static_cast<uint32_t>(w.pos());
          w.put_bytes(bytes, nbytes);
        }
        tiles[lvl].offsets.push_back(offset);
        tiles[lvl].counts.push_back(static_cast<uint32_t>(nbytes));
      }
    }
  }

  // External value arrays, then the IFD chain.
  struct Aux {
    uint32_t bps, xres, yres, offsets, counts;
  };
  std::vector<Aux> aux(level_dims.size());
  const auto [rnum, rden_base] = mpp_to_rational(base_mpp);
  for (size_t lvl = 0; lvl < level_dims.size(); ++lvl) {
    const double ds = static_cast<double>(level_dims[0].first) / level_dims[lvl].first;
    const auto [num, den] = mpp_to_rational(base_mpp * ds);
    (void)rnum;
    (void)rden_base;
    w.align2();
    aux[lvl].bps = static_cast<uint32_t>(w.pos());
    for (int i = 0; i < 3; ++i) w.put<uint16_t>(8);
    w.align2();
    aux[lvl].xres = static_cast<uint32_t>(w.pos());
    w.put<uint32_t>(num);
    w.put<uint32_t>(den);
    aux[lvl].yres = static_cast<uint32_t>(w.pos());
    w.put<uint32_t>(num);
    w.put<uint32_t>(den);
    const auto& t = tiles[lvl];
    if (t.offsets.size() > 1) {
      aux[lvl].offsets = static_cast<uint32_t>(w.pos());
      w.put_bytes(t.offsets.data(), t.offsets.size() * 4);
      aux[lvl].counts = static_cast<uint32_t>(w.pos());
      w.put_bytes(t.counts.data(), t.counts.size() * 4);
    } else {
      aux[lvl].offsets = t.offsets[0];
      aux[lvl].counts = t.counts[0];
    }
  }

  w.align2();
  const uint32_t first_ifd = static_cast<uint32_t>(w.pos());
  constexpr int kEntries = 15;
  const uint32_t ifd_size = 2 + kEntries * 12 + 4;
  for (size_t lvl = 0; lvl < level_dims.size(); ++lvl) {
    const auto [lw, lh] = level_dims[lvl];
    const uint32_t n = static_cast<uint32_t>(tiles[lvl].offsets.size());
    const uint16_t comp = opts.compression == TiffCompression::deflate ? 8 : 1;
    const std::array<Entry, kEntries> entries = {{
        {kTagNewSubfileType, kTypeLong, 1, lvl == 0 ? 0u : 1u},
        {kTagImageWidth, kTypeLong, 1, static_cast<uint32_t>(lw)},
        {kTagImageLength, kTypeLong, 1, static_cast<uint32_t>(lh)},
        {kTagBitsPerSample, kTypeShort, 3, aux[lvl].bps},
        {kTagCompression, kTypeShort, 1, comp},
        {kTagPhotometric, kTypeShort, 1, 2},
        {kTagSamplesPerPixel, kTypeShort, 1, 3},
        {kTagXResolution, kTypeRational, 1, aux[lvl].xres},
        {kTagYResolution, kTypeRational, 1, aux[lvl].yres},
        {kTagPlanarConfig, kTypeShort, 1, 1},
        {kTagResolutionUnit, kTypeShort, 1, 3},
        {kTagTileWidth, kTypeLong, 1, static_cast<uint32_t>(ts)},
        {kTagTileLength, kTypeLong, 1, static_cast<uint32_t>(ts)},
        {kTagTileOffsets, kTypeLong, n, aux[lvl].offsets},
        {kTagTileByteCounts, kTypeLong, n, aux[lvl].counts},
    }};
    w.put<uint16_t>(kEntries);
    for (const Entry& e : entries) {
      w.put<uint16_t>(e.tag);
      w.put<uint16_t>(e.type);
      w.put<uint32_t>(e.count);
      w.put<uint32_t>(e.value);
    }
    const bool last = lvl + 1 == level_dims.size();
    w.put<uint32_t>(last ? 0 : first_ifd + static_cast<uint32_t>(lvl + 1) * ifd_size);
  }
  w.patch_u32(4, first_ifd);
}

// ---------------------------------------------------------------------------

struct TiffReader::Impl {
  FILE* f = nullptr;
  std::filesystem::path path;
  std::vector<TiffLevel> levels;
  struct LevelData {
    std::vector<uint64_t> offsets;
    std::vector<uint64_t> counts;
    uint16_t compression = 1;
    int64_t tiles_x = 0;
  };
  std::vector<LevelData> data;

  struct CachedTile {
    uint64_t key;
    ImageU8 img;
  };
  std::deque<CachedTile> cache;

  ~Impl() {
    if (f) std::fclose(f);
  }

  void read_at(uint64_t off, void* dst, size_t n) {
    if (fseeko(f, static_cast<off_t>(off), SEEK_SET) != 0 ||
        std::fread(dst, 1, n, f) != n)
      throw IoError("truncated or unreadable TIFF: " + path.string());
  }
  template <class T>
  T read_val(uint64_t off) {
    T v;
    read_at(off, &v, sizeof(T));
    return v;
  }

  struct RawEntry {
    uint16_t type = 0;
    uint32_t count = 0;
    uint32_t value = 0;
    bool present = false;
  };

  // SHORT/LONG arrays may be inline (when they fit in 4 bytes) or external.
  std::vector<uint64_t> entry_values(const RawEntry& e) {
    std::vector<uint64_t> out;
    const size_t unit = e.type == kTypeShort ? 2 : 4;
    const size_t total = unit * e.count;
    std::vector<uint8_t> buf(total);
    if (total <= 4) {
      std::memcpy(buf.data(), &e.value, total);
    } else {
      read_at(e.value, buf.data(), total);
    }
    for (uint32_t i = 0; i < e.count; ++i) {
      if (e.type == kTypeShort) {
        uint16_t v;
        std::memcpy(&v, buf.data() + i * 2, 2);
        out.push_back(v);
      } else {
        uint32_t v;
        std::memcpy(&v, buf.data() + i * 4, 4);
        out.push_back(v);
      }
    }
    return out;
  }
};

TiffReader::TiffReader(const std::filesystem::path& path) : impl_(new Impl) {
  impl_->path = path;
  impl_->f = std::fopen(path.c_str(), "rb");
  if (!impl_->f) throw IoError("cannot open slide: " + path.string());

  uint8_t header[8];
  impl_->read_at(0, header, 8);
  if (header[0] != 'I' || header[1] != 'I' || header[2] != 42 || header[3] != 0)
    throw IoError("corrupted or unsupported TIFF header: " + path.string());
  uint32_t ifd;
  std::memcpy(&ifd, header + 4, 4);

  int guard = 0;
  while (ifd != 0) {
    if (++guard > 64) throw IoError("IFD chain too long: " + path.string());
    const uint16_t count = impl_->read_val<uint16_t>(ifd);
    std::vector<uint8_t> entries(static_cast<size_t>(count) * 12);
    impl_->read_at(ifd + 2, entries.data(), entries.size());
    const uint32_t next = impl_->read_val<uint32_t>(ifd + 2 + count * 12);

    std::unordered_map<uint16_t, Impl::RawEntry> tagmap;
    for (uint16_t i = 0; i < count; ++i) {
      const uint8_t* p = entries.data() + i * 12;
      uint16_t tag, type;
      uint32_t cnt, val;
      std::memcpy(&tag, p, 2);
      std::memcpy(&type, p + 2, 2);
      std::memcpy(&cnt, p + 4, 4);
      std::memcpy(&val, p + 8, 4);
      tagmap[tag] = {type, cnt, val, true};
    }

    auto get1 = [&](uint16_t tag, const char* what) -> uint64_t {
      auto it = tagmap.find(tag);
      if (it == tagmap.end() || it->second.count < 1)
        throw IoError(std::string("TIFF missing required tag: ") + what + ": " +
                      path.string());
      return impl_->entry_values(it->second)[0];
    };

    TiffLevel lvl;
    Impl::LevelData data;
    lvl.width = static_cast<int64_t>(get1(kTagImageWidth, "ImageWidth"));
    lvl.height = static_cast<int64_t>(get1(kTagImageLength, "ImageLength"));
    if (!tagmap.count(kTagTileWidth) || !tagmap.count(kTagTileLength))
      throw IoError("only tiled TIFF is supported: " + path.string());
    lvl.tile_width = static_cast<int>(get1(kTagTileWidth, "TileWidth"));
    lvl.tile_height = static_cast<int>(get1(kTagTileLength, "TileLength"));
    data.compression = static_cast<uint16_t>(
        tagmap.count(kTagCompression) ? get1(kTagCompression, "Compression") : 1);
    if (data.compression != 1 && data.compression != 8)
      throw IoError("unsupported TIFF compression: " + path.string());
    if (get1(kTagPhotometric, "Photometric") != 2 ||
        (tagmap.count(kTagSamplesPerPixel) && get1(kTagSamplesPerPixel, "SamplesPerPixel") != 3))
      throw IoError("only 8-bit RGB slides are supported: " + path.string());

    // mpp from the resolution tags; absent or non-centimeter metadata is an
    // explicit error rather than a silent default.
    if (!tagmap.count(kTagXResolution) || !tagmap.count(kTagResolutionUnit))
      throw MetadataError("slide has no microns-per-pixel metadata (XResolution/"
                          "ResolutionUnit tags): " + path.string());
    if (get1(kTagResolutionUnit, "ResolutionUnit") != 3)
      throw MetadataError("slide resolution unit is not centimeter; cannot derive "
                          "microns-per-pixel: " + path.string());
    const Impl::RawEntry& xres = tagmap[kTagXResolution];
    if (xres.type != kTypeRational)
      throw MetadataError("malformed XResolution: " + path.string());
    uint32_t rat[2];
    impl_->read_at(xres.value, rat, 8);
    if (rat[0] == 0) throw MetadataError("zero XResolution: " + path.string());
    lvl.mpp = 1e4 * static_cast<double>(rat[1]) / static_cast<double>(rat[0]);

    auto offs = tagmap.find(kTagTileOffsets);
    auto cnts = tagmap.find(kTagTileByteCounts);
    if (offs == tagmap.end() || cnts == tagmap.end())
      throw IoError("TIFF missing tile offset tables: " + path.string());
    data.offsets = impl_->entry_values(offs->second);
    data.counts = impl_->entry_values(cnts->second);
    data.tiles_x = (lvl.width + lvl.tile_width - 1) / lvl.tile_width;
    const int64_t tiles_y = (lvl.height + lvl.tile_height - 1) / lvl.tile_height;
    if (static_cast<int64_t>(data.offsets.size()) != data.tiles_x * tiles_y ||
        data.counts.size() != data.offsets.size())
      throw IoError("tile table size mismatch: " + path.string());

    impl_->levels.push_back(lvl);
    impl_->data.push_back(std::move(data));
    ifd = next;
  }
  if (impl_->levels.empty()) throw IoError("TIFF contains no images: " + path.string());
}

TiffReader::~TiffReader() = default;
TiffReader::TiffReader(TiffReader&&) noexcept = default;
TiffReader& TiffReader::operator=(TiffReader&&) noexcept = default;

const std::vector<TiffLevel>& TiffReader::levels() const { return impl_->levels; }

ImageU8 TiffReader::read_region(int level, int64_t x, int64_t y, int64_t w, int64_t h) {
  if (level < 0 || level >= static_cast<int>(impl_->levels.size()))
    throw BoundsError("read_region: level out of range");
  const TiffLevel& lvl = impl_->levels[level];
  auto& data = impl_->data[level];
  if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > lvl.width || y + h > lvl.height)
    throw BoundsError("read_region: rectangle outside level bounds");

  ImageU8 out(static_cast<int>(w), static_cast<int>(h), 3);
  const int tw = lvl.tile_width;
  const int th = lvl.tile_height;
  const size_t raw_bytes = static_cast<size_t>(tw) * th * 3;

  for (int64_t ty = y / th; ty <= (y + h - 1) / th; ++ty) {
    for (int64_t tx = x / tw; tx <= (x + w - 1) / tw; ++tx) {
      const int64_t tile_index = ty * data.tiles_x + tx;
      const uint64_t key =
          (static_cast<uint64_t>(level) << 48) ^ static_cast<uint64_t>(tile_index);

      const ImageU8* tile = nullptr;
      for (auto& c : impl_->cache)
        if (c.key == key) {
          tile = &c.img;
          break;
        }
      ImageU8 fresh;
      if (!tile) {
        const uint64_t off = data.offsets[tile_index];
        if (off == 0) {
          fresh = ImageU8(tw, th, 3, 255); // sparse tile: background
        } else if (data.compression == 1) {
          fresh = ImageU8(tw, th, 3);
          if (data.counts[tile_index] != raw_bytes)
            throw IoError("tile byte count mismatch: " + impl_->path.string());
          impl_->read_at(off, fresh.data.data(), raw_bytes);
        } else {
          std::vector<uint8_t> comp(data.counts[tile_index]);
          impl_->read_at(off, comp.data(), comp.size());
          fresh = ImageU8(tw, th, 3);
          uLongf dst_len = static_cast<uLongf>(raw_bytes);
          if (uncompress(fresh.data.data(), &dst_len, comp.data(),
                         static_cast<uLong>(comp.size())) != Z_OK ||
              dst_len != raw_bytes)
            throw IoError("tile inflate failed: " + impl_->path.string());
        }
        impl_->cache.push_front({key, std::move(fresh)});
        if (impl_->cache.size() > 8) impl_->cache.pop_back();
        tile = &impl_->cache.front().img;
      }

      // Copy the intersection of this tile with the request window.
      const int64_t sx0 = std::max(x, tx * tw);
      const int64_t sy0 = std::max(y, ty * th);
      const int64_t sx1 = std::min(x + w, (tx + 1) * static_cast<int64_t>(tw));
      const int64_t sy1 = std::min(y + h, (ty + 1) * static_cast<int64_t>(th));
      for (int64_t sy = sy0; sy < sy1; ++sy) {
        const uint8_t* src =
            tile->row(static_cast<int>(sy - ty * th)) + (sx0 - tx * tw) * 3;
        uint8_t* dst = out.row(static_cast<int>(sy - y)) + (sx0 - x) * 3;
        std::memcpy(dst, src, static_cast<size_t>(sx1 - sx0) * 3);
      }
    }
  }
  return out;
}

} // namespace stainqc
