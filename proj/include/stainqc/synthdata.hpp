#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stainqc/image.hpp"
#include "stainqc/manifest.hpp"
#include "stainqc/tiff.hpp"

namespace stainqc {

enum class TextureKind { speckle, fiber, ring, blob };

/// High-frequency stain deposit pattern. `scale_px` is the feature pitch at
/// the base level (0.295 mpp); `density` is the fraction of texture cells
/// (speckle/ring), stripe duty (fiber), or field coverage (blob) the stain
/// occupies, so coverage — and hence mean color — is scale-independent.
struct TextureSpec {
  TextureKind kind = TextureKind::speckle;
  double scale_px = 8.0;
  double density = 0.5;
};

using Rgb = std::array<uint8_t, 3>;

struct StainSignature {
  std::string class_id;
  std::vector<Rgb> palette; // 2-3 anchor colors, dominant deposit first
  TextureSpec texture;
  std::optional<Rgb> counterstain; // tissue ground color; absent -> near-white
};

/// One signature per fine class, in canonical fine order. Merged pairs share
/// palette, counterstain, texture kind and density and differ only in
/// scale_px (both members <= 2.4 um), so they separate at patch scale and
/// collapse at thumbnail scale.
const std::vector<StainSignature>& stain_signatures();
const StainSignature& signature_for(const std::string& class_id);

struct CorpusGeometry {
  int64_t width0 = 8192;
  int64_t height0 = 4096;
  double base_mpp = 0.295;
  int min_top_px = 1024;    // halve pyramid levels while max(w, h) exceeds this
  int mask_downsample = 16; // ground-truth mask resolution relative to level 0
  TiffCompression compression = TiffCompression::none;
  int workers = 1; // slides are independent; any count gives identical bytes
};

/// Writes slides/<id>.tiff, gt_masks/<id>.png, manifest.csv and corpus.json
/// under out_dir. Deterministic per seed (per-slide derived seeds). Refuses a
/// non-empty out_dir unless force, which replaces only corpus artifacts.
std::vector<ManifestEntry> generate_corpus(const std::map<std::string, int>& n_per_class,
                                           uint64_t seed,
                                           const std::filesystem::path& out_dir,
                                           const CorpusGeometry& geom = {},
                                           bool force = false);

/// Borderless tissue texture at the base scale, for palette/texture analysis.
ImageU8 render_swatch(const StainSignature& sig, int width, int height, uint64_t seed);

struct PairCheck {
  std::string class_a;
  std::string class_b;
  bool expect_confusable = false; // merged pair (true) vs contrast pair (false)
  double palette_delta_e = 0;     // CIELAB distance of mean tissue color
  double texture_distance = 0;    // normalized high-frequency energy gap
  bool ok = false;
};

struct ConfusabilityReport {
  double palette_threshold = 0;
  double texture_threshold = 0;
  std::vector<PairCheck> checks;
  bool pass = true;
};

/// Samples tissue from generated slides and verifies that merged pairs sit
/// below the palette threshold but above the texture threshold, while
/// pas/reticulin stay apart in color. Pairs with a member missing from the
/// corpus are skipped, so a single-class corpus trivially passes.
ConfusabilityReport confusable_pair_check(const std::filesystem::path& manifest_csv,
                                          double palette_threshold = 8.0,
                                          double texture_threshold = 0.2);

struct BenchmarkSlideInfo {
  std::filesystem::path path;
  int64_t width0 = 0;
  int64_t height0 = 0;
  int grid_x = 0;
  int grid_y = 0;
  int64_t expected_patches = 0;
};

/// Fully-tissue slide with periodic texture, sized so a patch_size_px grid at
/// patch_mpp tessellates to ~target_patches: n_y = round(sqrt(target / 2)),
/// n_x = round(target / n_y). Tile deduplication keeps the file small.
BenchmarkSlideInfo make_benchmark_slide(const std::filesystem::path& path,
                                        int64_t target_patches, int patch_size_px,
                                        double patch_mpp, const std::string& class_id,
                                        uint64_t seed, double base_mpp = 0.295);

/// sRGB (0-255) to CIELAB under D65.
std::array<double, 3> rgb_to_lab(double r, double g, double b);
inline std::array<double, 3> rgb_to_lab(const Rgb& c) {
  return rgb_to_lab(c[0], c[1], c[2]);
}
double delta_e(const std::array<double, 3>& rgb_a, const std::array<double, 3>& rgb_b);
inline double delta_e(const Rgb& a, const Rgb& b) {
  return delta_e(std::array<double, 3>{double(a[0]), double(a[1]), double(a[2])},
                 std::array<double, 3>{double(b[0]), double(b[1]), double(b[2])});
}

/// Mean squared deviation from the local (2*radius+1)^2 box mean, averaged
/// over pixels and channels, normalized by 255^2. The spectral energy proxy
/// behind the texture checks.
double high_frequency_energy(const ImageU8& img, int radius = 2);

} // namespace stainqc
