#include "stainqc/synthdata.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "stainqc/errors.hpp"
#include "stainqc/png_io.hpp"
#include "stainqc/rng.hpp"
#include "stainqc/slide.hpp"
#include "stainqc/taxonomy.hpp"

namespace stainqc {
namespace {

// Stateless per-pixel hashing so rendering is chunking-independent.
uint64_t fin64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t hash2(uint64_t seed, int64_t a, int64_t b) {
  return fin64(seed ^ fin64(uint64_t(a) * 0x9e3779b97f4a7c15ULL + 0x165667b19e3779f9ULL) ^
               fin64(uint64_t(b) * 0xd1b54a32d192ed03ULL + 0x2545f4914f6cdd1dULL));
}

double u01(uint64_t h) { return double(h >> 11) * 0x1.0p-53; }

// Bilinear value noise over a hashed lattice, roughly uniform in [0, 1].
double vnoise(double x, double y, double inv_scale, uint64_t seed) {
  const double fx = x * inv_scale;
  const double fy = y * inv_scale;
  const int64_t x0 = int64_t(std::floor(fx));
  const int64_t y0 = int64_t(std::floor(fy));
  double tx = fx - double(x0);
  double ty = fy - double(y0);
  tx = tx * tx * (3.0 - 2.0 * tx);
  ty = ty * ty * (3.0 - 2.0 * ty);
  const double c00 = u01(hash2(seed, x0, y0));
  const double c10 = u01(hash2(seed, x0 + 1, y0));
  const double c01 = u01(hash2(seed, x0, y0 + 1));
  const double c11 = u01(hash2(seed, x0 + 1, y0 + 1));
  const double top = c00 + (c10 - c00) * tx;
  const double bot = c01 + (c11 - c01) * tx;
  return top + (bot - top) * ty;
}

std::vector<StainSignature> build_signatures() {
  auto sig = [](const char* id, std::vector<Rgb> palette, TextureKind kind, double scale,
                double density, Rgb counter) {
    return StainSignature{id, std::move(palette), {kind, scale, density}, counter};
  };
  // Merged pairs share palette/counterstain/kind/density and differ only in
  // scale_px; both scales stay below 2.4 um at the 0.295 mpp base so the
  // difference dies at thumbnail magnification.
  return {
      sig("alcian_blue", {{{22, 108, 142}}, {{58, 148, 168}}}, TextureKind::speckle, 8.0, 0.9,
          {{238, 208, 216}}),
      sig("alcian_blue_pas", {{{22, 108, 142}}, {{58, 148, 168}}}, TextureKind::speckle, 4.0,
          0.9, {{238, 208, 216}}),
      sig("prussian_blue", {{{8, 30, 140}}, {{30, 70, 180}}}, TextureKind::speckle, 12.0,
          0.85, {{242, 186, 200}}),
      sig("giemsa", {{{96, 88, 186}}, {{150, 144, 218}}}, TextureKind::blob, 16.0, 0.4,
          {{236, 238, 250}}),
      sig("gms", {{{30, 38, 30}}, {{88, 98, 78}}}, TextureKind::ring, 16.0, 0.7,
          {{186, 222, 172}}),
      sig("congo_red", {{{240, 120, 120}}, {{248, 164, 156}}}, TextureKind::blob, 20.0, 0.5,
          {{250, 228, 218}}),
      sig("von_kossa", {{{18, 16, 14}}, {{60, 56, 52}}}, TextureKind::speckle, 14.0, 0.5,
          {{244, 232, 216}}),
      sig("rhodanine", {{{160, 72, 12}}, {{192, 108, 32}}}, TextureKind::speckle, 10.0, 0.85,
          {{240, 228, 200}}),
      sig("pas", {{{208, 36, 120}}, {{236, 96, 164}}}, TextureKind::speckle, 7.0, 0.9,
          {{246, 212, 222}}),
      sig("pas_d", {{{208, 36, 120}}, {{236, 96, 164}}}, TextureKind::speckle, 3.5, 0.9,
          {{246, 212, 222}}),
      sig("reticulin", {{{26, 24, 32}}, {{78, 72, 84}}}, TextureKind::fiber, 8.0, 0.5,
          {{222, 212, 204}}),
      sig("van_gieson", {{{196, 32, 60}}, {{236, 210, 48}}}, TextureKind::fiber, 12.0, 0.5,
          {{246, 236, 130}}),
      sig("warthin_starry", {{{34, 26, 18}}, {{118, 88, 48}}}, TextureKind::speckle, 10.0, 0.7,
          {{206, 166, 112}}),
      sig("ziehl_neelsen", {{{196, 28, 52}}, {{230, 92, 108}}}, TextureKind::speckle, 6.0,
          0.6, {{176, 196, 240}}),
      sig("he_ffpe", {{{108, 48, 138}}, {{204, 104, 156}}}, TextureKind::blob, 24.0, 0.6,
          {{246, 224, 234}}),
      sig("he_fs", {{{196, 130, 176}}, {{246, 184, 198}}}, TextureKind::fiber, 20.0, 0.35,
          {{250, 232, 236}}),
  };
}

const char* merged_partner(const std::string& class_id) {
  if (class_id == "alcian_blue") return "alcian_blue_pas";
  if (class_id == "alcian_blue_pas") return "alcian_blue";
  if (class_id == "pas") return "pas_d";
  if (class_id == "pas_d") return "pas";
  return nullptr;
}

// Analytic slide: wobbled elliptical tissue sections filled with the class
// texture. Every pixel is a pure function of (signature, seed, x, y), so any
// region at any chunking renders the same bytes.
class SlideScene {
public:
  SlideScene(const StainSignature& sig, int64_t w0, int64_t h0, uint64_t seed,
             bool full_tissue)
      : sig_(sig), w0_(w0), h0_(h0), full_(full_tissue) {
    const uint64_t s_tissue = derive_seed(seed, "tissue");
    const uint64_t s_tex = derive_seed(seed, "texture");
    tex_seed_ = s_tex;
    mod_seed_ = derive_seed(seed, "modulation");
    bg_seed_ = derive_seed(seed, "background");
    // Per-slide staining-intensity mottle: a coarse tone field plus a fine
    // 32 px grain whose random amplitude dwarfs the residual high-frequency
    // energy gap between merged-pair members at thumbnail scale, so texture
    // amplitude carries no pair signal there.
    Rng rm(derive_seed(seed, "modulation_amp"));
    mod_amp_ = rm.uniform(0.02, 0.05);
    grain_amp_ = rm.uniform(0.02, 0.16);
    grain_scale_ = rm.uniform(24.0, 48.0);
    grain_seed_ = derive_seed(seed, "grain");

    Rgb counter = sig.counterstain.value_or(Rgb{{245, 242, 243}});
    if (sig.class_id == "von_kossa") {
      // Half the Von Kossa slides borrow the Prussian-Blue pink counterstain.
      Rng r(derive_seed(seed, "counterstain"));
      if (r.bernoulli(0.5)) counter = signature_for("prussian_blue").counterstain.value();
    }

    Rng rp(derive_seed(seed, "palette_jitter"));
    double f[3];
    for (double& fc : f) fc = rp.uniform(0.97, 1.03);
    for (int c = 0; c < 3; ++c) counter_[c] = counter[c] * f[c];
    for (const Rgb& a : sig.palette) {
      std::array<double, 3> ja{};
      for (int c = 0; c < 3; ++c) ja[c] = a[c] * f[c];
      anchors_.push_back(ja);
    }

    pitch_ = sig.texture.scale_px;
    subgrid_ = 1;
    const char* partner = merged_partner(sig.class_id);
    if (partner && sig.texture.kind == TextureKind::speckle) {
      pitch_ = std::max(sig.texture.scale_px, signature_for(partner).texture.scale_px);
      subgrid_ = int(std::lround(pitch_ / sig.texture.scale_px));
    }

    Rng rt(s_tissue);
    fiber_dir_ = rt.uniform(0.0, 3.14159265358979323846);
    if (!full_) {
      const int n_sections = rt.bernoulli(1.0 / 3.0) ? 2 : 1;
      const double shrink = n_sections == 2 ? 0.62 : 1.0;
      for (int s = 0; s < n_sections; ++s) {
        Section sec;
        const double cx_frac =
            n_sections == 2 ? (s == 0 ? rt.uniform(0.26, 0.34) : rt.uniform(0.66, 0.74))
                            : rt.uniform(0.44, 0.56);
        sec.cx = cx_frac * double(w0);
        sec.cy = rt.uniform(0.44, 0.56) * double(h0);
        sec.rx = rt.uniform(0.30, 0.38) * double(w0) * shrink;
        sec.ry = rt.uniform(0.28, 0.36) * double(h0) * shrink;
        const double rot = rt.uniform(-0.3, 0.3);
        sec.cr = std::cos(rot);
        sec.sr = std::sin(rot);
        sec.a3 = rt.uniform(0.03, 0.07);
        sec.p3 = rt.uniform(0.0, 6.2831853);
        sec.a5 = rt.uniform(0.02, 0.05);
        sec.p5 = rt.uniform(0.0, 6.2831853);
        sec.a8 = rt.uniform(0.01, 0.03);
        sec.p8 = rt.uniform(0.0, 6.2831853);
        sections_.push_back(sec);
      }
    }
  }

  bool inside_tissue(double x, double y) const {
    if (full_) return true;
    for (const Section& s : sections_) {
      const double u = x - s.cx;
      const double v = y - s.cy;
      const double a = (u * s.cr + v * s.sr) / s.rx;
      const double b = (-u * s.sr + v * s.cr) / s.ry;
      const double rho2 = a * a + b * b;
      if (rho2 > 1.3225) continue; // beyond max wobble (1.15^2)
      if (rho2 < 0.7225) return true; // within min wobble (0.85^2)
      const double phi = std::atan2(b, a);
      const double wob = 1.0 + s.a3 * std::sin(3 * phi + s.p3) +
                         s.a5 * std::sin(5 * phi + s.p5) + s.a8 * std::sin(8 * phi + s.p8);
      if (rho2 < wob * wob) return true;
    }
    return false;
  }

  void shade(double x, double y, int64_t xi, int64_t yi, uint8_t* out) const {
    if (!inside_tissue(x, y)) {
      const uint8_t b = uint8_t(244 + (hash2(bg_seed_, xi, yi) & 7));
      out[0] = out[1] = out[2] = b;
      return;
    }
    const auto [t, anchor] = texture_at(x, y);
    const std::array<double, 3>& pc = anchors_[anchor];
    const double m = 1.0 + mod_amp_ * (2.0 * vnoise(x, y, 1.0 / 256.0, mod_seed_) - 1.0) +
                     grain_amp_ * (2.0 * vnoise(x, y, 1.0 / grain_scale_, grain_seed_) - 1.0);
    for (int c = 0; c < 3; ++c) {
      const double v = (counter_[c] + (pc[c] - counter_[c]) * t) * m;
      out[c] = uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }

  ImageU8 render_base() const {
    if (w0_ > 1 << 30 || h0_ > 1 << 30)
      throw ArgumentError("slide geometry too large to materialize");
    ImageU8 img(int(w0_), int(h0_), 3);
    for (int64_t y = 0; y < h0_; ++y) {
      uint8_t* row = img.row(int(y));
      const double yc = double(y) + 0.5;
      for (int64_t x = 0; x < w0_; ++x) shade(double(x) + 0.5, yc, x, y, row + x * 3);
    }
    return img;
  }

  ImageU8 render_mask(int downsample) const {
    const int mw = int((w0_ + downsample - 1) / downsample);
    const int mh = int((h0_ + downsample - 1) / downsample);
    ImageU8 mask(mw, mh, 1);
    for (int y = 0; y < mh; ++y) {
      uint8_t* row = mask.row(y);
      for (int x = 0; x < mw; ++x) {
        const double cx = (double(x) + 0.5) * downsample;
        const double cy = (double(y) + 0.5) * downsample;
        row[x] = inside_tissue(cx, cy) ? 255 : 0;
      }
    }
    return mask;
  }

private:
  struct Section {
    double cx, cy, rx, ry, cr, sr;
    double a3, p3, a5, p5, a8, p8;
  };

  // Returns stain opacity at (x, y) plus the palette anchor it uses. Hard
  // speckle/ring/fiber hits keep coverage equal to `density` regardless of
  // scale, which is what keeps merged-pair mean colors identical.
  std::pair<double, int> texture_at(double x, double y) const {
    const TextureSpec& tex = sig_.texture;
    const double S = tex.scale_px;
    const int n = int(anchors_.size());
    switch (tex.kind) {
      case TextureKind::speckle: {
        // Cells tick at the pair-shared pitch; the finer pair member splits
        // each deposit into a g x g sub-grid of area-conserving dots. Jitter
        // is tight enough that dots never overlap, so realized coverage (and
        // hence mean color) depends on density alone, not on scale.
        const double P = pitch_;
        const int g = subgrid_;
        const double r = 0.40 * P / g;
        const int64_t cx = int64_t(std::floor(x / P));
        const int64_t cy = int64_t(std::floor(y / P));
        for (int64_t dy = -1; dy <= 1; ++dy) {
          for (int64_t dx = -1; dx <= 1; ++dx) {
            const uint64_t h = hash2(tex_seed_, cx + dx, cy + dy);
            if (double(h & 0xFFFFF) / 1048576.0 >= tex.density) continue;
            for (int q = 0; q < g * g; ++q) {
              const uint64_t hq = fin64(h ^ (uint64_t(q) + 1) * 0x9e3779b97f4a7c15ULL);
              const double jx = (u01(hq) - 0.5) * 0.2 / g;
              const double jy = (u01(fin64(hq + 1)) - 0.5) * 0.2 / g;
              const double ox = (double(q % g) + 0.5) / g + jx;
              const double oy = (double(q / g) + 0.5) / g + jy;
              const double ddx = x - (double(cx + dx) + ox) * P;
              const double ddy = y - (double(cy + dy) + oy) * P;
              if (ddx * ddx + ddy * ddy < r * r) return {1.0, int((h >> 61) % uint64_t(n))};
            }
          }
        }
        return {0.0, 0};
      }
      case TextureKind::ring: {
        const int64_t cx = int64_t(std::floor(x / S));
        const int64_t cy = int64_t(std::floor(y / S));
        for (int64_t dy = -1; dy <= 1; ++dy) {
          for (int64_t dx = -1; dx <= 1; ++dx) {
            const uint64_t h = hash2(tex_seed_, cx + dx, cy + dy);
            if (double(h & 0xFFFFF) / 1048576.0 >= tex.density) continue;
            const double ox = 0.25 + 0.5 * double((h >> 20) & 0xFFFFF) / 1048576.0;
            const double oy = 0.25 + 0.5 * double((h >> 40) & 0xFFFFF) / 1048576.0;
            const double ddx = x - (double(cx + dx) + ox) * S;
            const double ddy = y - (double(cy + dy) + oy) * S;
            const double d2 = ddx * ddx + ddy * ddy;
            if (d2 > 0.27 * 0.27 * S * S && d2 < 0.45 * 0.45 * S * S)
              return {1.0, int((h >> 61) % uint64_t(n))};
          }
        }
        return {0.0, 0};
      }
      case TextureKind::fiber: {
        const double wave =
            (vnoise(x, y, 1.0 / (6.0 * S), derive_seed(tex_seed_, "wave")) - 0.5) * 2.5 * S;
        const double d = x * std::cos(fiber_dir_) + y * std::sin(fiber_dir_) + wave;
        const double band = std::floor(d / S);
        const double frac = d / S - band;
        if (frac < std::min(0.92, tex.density))
          return {1.0, int(hash2(tex_seed_, int64_t(band), 7) % uint64_t(n))};
        return {0.0, 0};
      }
      case TextureKind::blob: {
        const double v = 0.65 * vnoise(x, y, 1.0 / S, tex_seed_) +
                         0.35 * vnoise(x, y, 2.0 / S, derive_seed(tex_seed_, "octave"));
        const double c = 0.5 + (0.5 - tex.density) * 0.62;
        const double t = std::clamp((v - (c - 0.09)) / 0.18, 0.0, 1.0);
        if (t <= 0.0) return {0.0, 0};
        const int anchor =
            vnoise(x, y, 1.0 / (2.5 * S), derive_seed(tex_seed_, "anchor")) > 0.52 ? 1 : 0;
        return {t, std::min(anchor, n - 1)};
      }
    }
    return {0.0, 0};
  }

  const StainSignature sig_;
  int64_t w0_, h0_;
  bool full_;
  std::vector<Section> sections_;
  std::vector<std::array<double, 3>> anchors_;
  double counter_[3] = {245, 245, 245};
  double fiber_dir_ = 0;
  double pitch_ = 8.0;
  double mod_amp_ = 0.04;
  double grain_amp_ = 0.03;
  double grain_scale_ = 32.0;
  int subgrid_ = 1;
  uint64_t tex_seed_ = 0, mod_seed_ = 0, bg_seed_ = 0, grain_seed_ = 0;
};

std::vector<std::pair<int64_t, int64_t>> plan_levels(int64_t w0, int64_t h0, int min_top) {
  std::vector<std::pair<int64_t, int64_t>> dims{{w0, h0}};
  while (std::max(dims.back().first, dims.back().second) > min_top) {
    const int64_t w = std::max<int64_t>(1, dims.back().first / 2);
    const int64_t h = std::max<int64_t>(1, dims.back().second / 2);
    dims.emplace_back(w, h);
    if (w == 1 && h == 1) break;
  }
  return dims;
}

ImageU8 tile_from(const ImageU8& level, int64_t tx, int64_t ty, int tile_size) {
  ImageU8 tile(tile_size, tile_size, 3, 255);
  const int64_t x0 = tx * tile_size;
  const int64_t y0 = ty * tile_size;
  const int64_t w = std::min<int64_t>(tile_size, level.width - x0);
  const int64_t h = std::min<int64_t>(tile_size, level.height - y0);
  for (int64_t y = 0; y < h; ++y)
    std::copy_n(level.row(int(y0 + y)) + x0 * 3, size_t(w) * 3, tile.row(int(y)));
  return tile;
}

void write_one_slide(const SlideScene& scene, const CorpusGeometry& geom,
                     const std::filesystem::path& slide_path,
                     const std::filesystem::path& mask_path) {
  std::vector<std::pair<int64_t, int64_t>> dims =
      plan_levels(geom.width0, geom.height0, geom.min_top_px);
  std::vector<ImageU8> levels;
  levels.push_back(scene.render_base());
  for (size_t k = 1; k < dims.size(); ++k)
    levels.push_back(resize_area(levels.back(), int(dims[k].first), int(dims[k].second)));

  TiffWriteOptions opts;
  opts.compression = geom.compression;
  auto provider = [&](int level, int64_t tx, int64_t ty) {
    return tile_from(levels[size_t(level)], tx, ty, opts.tile_size);
  };
  write_tiled_pyramid(slide_path, dims, geom.base_mpp, provider, opts);
  write_png_bitmap(mask_path, scene.render_mask(geom.mask_downsample));
}

} // namespace

const std::vector<StainSignature>& stain_signatures() {
  static const std::vector<StainSignature> table = build_signatures();
  return table;
}

const StainSignature& signature_for(const std::string& class_id) {
  for (const StainSignature& s : stain_signatures())
    if (s.class_id == class_id) return s;
  throw InvalidLabelError("no stain signature for class '" + class_id + "'");
}

ImageU8 render_swatch(const StainSignature& sig, int width, int height, uint64_t seed) {
  if (width < 1 || height < 1) throw ArgumentError("swatch dimensions must be positive");
  return SlideScene(sig, width, height, seed, /*full_tissue=*/true).render_base();
}

std::vector<ManifestEntry> generate_corpus(const std::map<std::string, int>& n_per_class,
                                           uint64_t seed,
                                           const std::filesystem::path& out_dir,
                                           const CorpusGeometry& geom, bool force) {
  namespace fs = std::filesystem;
  const ClassSet& fine = ClassSet::fine();
  for (const auto& [label, count] : n_per_class) {
    if (!fine.contains(label))
      throw InvalidLabelError("unknown stain class id '" + label + "'");
    if (count < 0)
      throw ArgumentError("negative slide count for class '" + label + "'");
  }
  if (geom.width0 < 64 || geom.height0 < 64)
    throw ArgumentError("corpus slide geometry must be at least 64x64");
  if (geom.base_mpp <= 0) throw ArgumentError("base_mpp must be positive");

  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!force)
      throw IoError("output directory " + out_dir.string() +
                    " is not empty; pass force to regenerate");
    fs::remove_all(out_dir / "slides");
    fs::remove_all(out_dir / "gt_masks");
    fs::remove(out_dir / "manifest.csv");
    fs::remove(out_dir / "corpus.json");
  }
  fs::create_directories(out_dir / "slides");
  fs::create_directories(out_dir / "gt_masks");

  struct Job {
    std::string slide_id;
    std::string label;
    uint64_t slide_seed;
  };
  std::vector<Job> jobs;
  std::vector<ManifestEntry> entries;
  for (const StainClass& sc : fine_classes()) {
    const auto it = n_per_class.find(sc.id);
    if (it == n_per_class.end() || it->second == 0) continue;
    for (int i = 0; i < it->second; ++i) {
      char idx[16];
      std::snprintf(idx, sizeof idx, "%03d", i);
      const std::string slide_id = sc.id + "_" + idx;
      jobs.push_back({slide_id, sc.id, derive_seed(seed, slide_id)});
      entries.push_back(
          {slide_id, fs::path("slides") / (slide_id + ".tiff"), sc.id, ""});
    }
  }

  std::atomic<size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (first_error) return;
      }
      try {
        const Job& job = jobs[i];
        SlideScene scene(signature_for(job.label), geom.width0, geom.height0, job.slide_seed,
                         /*full_tissue=*/false);
        write_one_slide(scene, geom, out_dir / "slides" / (job.slide_id + ".tiff"),
                        out_dir / "gt_masks" / (job.slide_id + ".png"));
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const int n_workers = std::max(1, geom.workers);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  save_manifest(out_dir / "manifest.csv", entries);

  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [label, count] : n_per_class)
    if (count > 0) counts[label] = count;
  const nlohmann::json info{{"schema", "stainqc-corpus-v1"},
                            {"seed", seed},
                            {"base_mpp", geom.base_mpp},
                            {"width0", geom.width0},
                            {"height0", geom.height0},
                            {"min_top_px", geom.min_top_px},
                            {"mask_downsample", geom.mask_downsample},
                            {"n_slides", entries.size()},
                            {"counts", counts}};
  std::ofstream out(out_dir / "corpus.json");
  out << info.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + (out_dir / "corpus.json").string());
  return entries;
}

BenchmarkSlideInfo make_benchmark_slide(const std::filesystem::path& path,
                                        int64_t target_patches, int patch_size_px,
                                        double patch_mpp, const std::string& class_id,
                                        uint64_t seed, double base_mpp) {
  if (target_patches < 0) throw ArgumentError("target_patches must be nonnegative");
  if (patch_size_px < 1) throw ArgumentError("patch_size_px must be positive");
  if (patch_mpp < base_mpp || base_mpp <= 0)
    throw ArgumentError("patch_mpp must be at least base_mpp");
  const StainSignature& sig = signature_for(class_id);

  const int64_t stride0 = std::llround(patch_size_px * patch_mpp / base_mpp);
  const bool blank = target_patches == 0;
  const int64_t n_y =
      blank ? 0 : std::max<int64_t>(1, std::llround(std::sqrt(double(target_patches) / 2.0)));
  const int64_t n_x =
      blank ? 0 : std::max<int64_t>(1, std::llround(double(target_patches) / double(n_y)));
  const int64_t w0 = std::max<int64_t>(n_x, 1) * stride0;
  const int64_t h0 = std::max<int64_t>(n_y, 1) * stride0;

  TiffWriteOptions opts; // dedup keeps the periodic content to one stored tile per level
  const int period = opts.tile_size;
  std::vector<std::pair<int64_t, int64_t>> dims = plan_levels(w0, h0, 1024);
  std::vector<ImageU8> tiles;
  // target 0 asks for a slide with no tissue at all: bare background
  ImageU8 cycle = blank ? ImageU8(period, period, 3, 244)
                        : render_swatch(sig, period, period, derive_seed(seed, class_id));
  for (size_t k = 0; k < dims.size(); ++k) {
    if (k > 0)
      cycle = resize_area(cycle, std::max(1, cycle.width / 2), std::max(1, cycle.height / 2));
    ImageU8 tile(period, period, 3);
    for (int y = 0; y < period; ++y) {
      const uint8_t* src = cycle.row(y % cycle.height);
      uint8_t* dst = tile.row(y);
      for (int x = 0; x < period; ++x)
        std::copy_n(src + size_t(x % cycle.width) * 3, 3, dst + size_t(x) * 3);
    }
    tiles.push_back(std::move(tile));
  }
  auto provider = [&](int level, int64_t, int64_t) { return tiles[size_t(level)]; };
  write_tiled_pyramid(path, dims, base_mpp, provider, opts);

  BenchmarkSlideInfo info;
  info.path = path;
  info.width0 = w0;
  info.height0 = h0;
  info.grid_x = int(n_x);
  info.grid_y = int(n_y);
  info.expected_patches = n_x * n_y;
  return info;
}

ConfusabilityReport confusable_pair_check(const std::filesystem::path& manifest_csv,
                                          double palette_threshold,
                                          double texture_threshold) {
  namespace fs = std::filesystem;
  const std::vector<ManifestEntry> entries = load_manifest(manifest_csv);
  const fs::path dir = manifest_csv.parent_path();
  std::map<std::string, fs::path> first_slide;
  for (const ManifestEntry& e : entries) {
    const fs::path p = e.path.is_absolute() ? e.path : dir / e.path;
    first_slide.try_emplace(e.fine_label, p);
  }

  struct Sample {
    std::array<double, 3> mean;
    double hf;
  };
  std::map<std::string, Sample> cache;
  auto measure = [&](const std::string& label) -> const Sample& {
    auto hit = cache.find(label);
    if (hit != cache.end()) return hit->second;
    SlidePyramid slide = open_slide(first_slide.at(label));
    const int top = int(slide.levels().size()) - 1;
    const SlideLevel& tl = slide.levels()[top];
    const ImageU8 overview = slide.read_region(top, 0, 0, tl.width, tl.height);

    // The most saturated coarse block is interior tissue.
    const int B = 24;
    double best_sat = -1;
    double cx = double(tl.width) / 2, cy = double(tl.height) / 2;
    for (int by = 0; by + B <= overview.height; by += B) {
      for (int bx = 0; bx + B <= overview.width; bx += B) {
        double acc[3] = {0, 0, 0};
        for (int y = by; y < by + B; ++y) {
          const uint8_t* row = overview.row(y);
          for (int x = bx; x < bx + B; ++x)
            for (int c = 0; c < 3; ++c) acc[c] += row[x * 3 + c];
        }
        for (double& a : acc) a /= double(B) * B;
        const double mx = std::max({acc[0], acc[1], acc[2]});
        const double mn = std::min({acc[0], acc[1], acc[2]});
        const double sat = mx > 0 ? (mx - mn) / mx : 0;
        if (sat > best_sat) {
          best_sat = sat;
          cx = bx + B / 2.0;
          cy = by + B / 2.0;
        }
      }
    }
    const SlideLevel& l0 = slide.levels()[0];
    const int64_t R = std::min<int64_t>({384, l0.width, l0.height});
    const int64_t x0 =
        std::clamp<int64_t>(std::llround(cx * tl.downsample - double(R) / 2), 0, l0.width - R);
    const int64_t y0 =
        std::clamp<int64_t>(std::llround(cy * tl.downsample - double(R) / 2), 0, l0.height - R);
    const ImageU8 region = slide.read_region(0, x0, y0, R, R);
    Sample s{{0, 0, 0}, 0};
    for (int y = 0; y < region.height; ++y) {
      const uint8_t* row = region.row(y);
      for (int x = 0; x < region.width; ++x)
        for (int c = 0; c < 3; ++c) s.mean[c] += row[x * 3 + c];
    }
    for (double& m : s.mean) m /= double(region.width) * region.height;
    s.hf = high_frequency_energy(region);
    return cache.emplace(label, s).first->second;
  };

  ConfusabilityReport report;
  report.palette_threshold = palette_threshold;
  report.texture_threshold = texture_threshold;
  const std::tuple<const char*, const char*, bool> plan[] = {
      {"alcian_blue", "alcian_blue_pas", true},
      {"pas", "pas_d", true},
      {"pas", "reticulin", false},
  };
  for (const auto& [a, b, confusable] : plan) {
    if (!first_slide.count(a) || !first_slide.count(b)) continue;
    const Sample& sa = measure(a);
    const Sample& sb = measure(b);
    PairCheck check;
    check.class_a = a;
    check.class_b = b;
    check.expect_confusable = confusable;
    check.palette_delta_e = delta_e(sa.mean, sb.mean);
    check.texture_distance = std::abs(sa.hf - sb.hf) / std::max(sa.hf + sb.hf, 1e-12);
    check.ok = confusable ? check.palette_delta_e < palette_threshold &&
                                check.texture_distance > texture_threshold
                          : check.palette_delta_e > palette_threshold;
    report.pass = report.pass && check.ok;
    report.checks.push_back(check);
  }
  return report;
}

std::array<double, 3> rgb_to_lab(double r, double g, double b) {
  auto linear = [](double c) {
    c /= 255.0;
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
  };
  const double rl = linear(r), gl = linear(g), bl = linear(b);
  const double x = (0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl) / 0.95047;
  const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double z = (0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl) / 1.08883;
  auto f = [](double t) {
    constexpr double d = 6.0 / 29.0;
    return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
  };
  const double fx = f(x), fy = f(y), fz = f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

double delta_e(const std::array<double, 3>& rgb_a, const std::array<double, 3>& rgb_b) {
  const auto la = rgb_to_lab(rgb_a[0], rgb_a[1], rgb_a[2]);
  const auto lb = rgb_to_lab(rgb_b[0], rgb_b[1], rgb_b[2]);
  const double dl = la[0] - lb[0], da = la[1] - lb[1], db = la[2] - lb[2];
  return std::sqrt(dl * dl + da * da + db * db);
}

double high_frequency_energy(const ImageU8& img, int radius) {
  if (img.width < 1 || img.height < 1) throw ArgumentError("empty image");
  if (radius < 1) throw ArgumentError("radius must be positive");
  const int W = img.width, H = img.height, C = img.channels;
  std::vector<double> integral(size_t(W + 1) * (H + 1));
  double acc = 0;
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      const uint8_t* row = img.row(y);
      double rowsum = 0;
      for (int x = 0; x < W; ++x) {
        rowsum += row[size_t(x) * C + c];
        integral[size_t(y + 1) * (W + 1) + x + 1] =
            integral[size_t(y) * (W + 1) + x + 1] + rowsum;
      }
    }
    for (int y = 0; y < H; ++y) {
      const int y0 = std::max(0, y - radius), y1 = std::min(H - 1, y + radius);
      const uint8_t* row = img.row(y);
      for (int x = 0; x < W; ++x) {
        const int x0 = std::max(0, x - radius), x1 = std::min(W - 1, x + radius);
        const double sum = integral[size_t(y1 + 1) * (W + 1) + x1 + 1] -
                           integral[size_t(y0) * (W + 1) + x1 + 1] -
                           integral[size_t(y1 + 1) * (W + 1) + x0] +
                           integral[size_t(y0) * (W + 1) + x0];
        const double mean = sum / (double(x1 - x0 + 1) * (y1 - y0 + 1));
        const double d = row[size_t(x) * C + c] - mean;
        acc += d * d;
      }
    }
  }
  return acc / (double(W) * H * C * 255.0 * 255.0);
}

} // namespace stainqc
