#include "stainqc/interpretability.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "stainqc/png_io.hpp"

namespace stainqc {

namespace {

// Maps level-0 patch footprints into thumbnail pixel rects, handling the
// portrait rotation and white padding applied by extract_thumbnail.
struct FootprintMapper {
  double scale = 0;     // thumbnail px per level-0 px
  double span = 0;      // footprint side in thumbnail px
  PadBox content;
  bool rotated = false;
  int64_t slide_h0 = 0;

  FootprintMapper(const Thumbnail& thumb, int64_t w0, int64_t h0, int patch_size_px,
                  double target_mpp)
      : content(thumb.content), rotated(thumb.rotated), slide_h0(h0) {
    if (w0 <= 0 || h0 <= 0) throw ArgumentError("slide dims must be positive");
    if (patch_size_px <= 0) throw ArgumentError("patch size must be positive");
    if (target_mpp <= 0) throw ArgumentError("target mpp must be positive");
    if (thumb.effective_mpp <= 0)
      throw ArgumentError("thumbnail carries no effective mpp");
    scale = double(content.width) / double(rotated ? h0 : w0);
    span = double(patch_size_px) * target_mpp / thumb.effective_mpp;
  }

  // clamped pixel rect {x0, y0, x1, y1}, half-open, at least one pixel wide
  std::array<int, 4> rect(int64_t x0_l0, int64_t y0_l0) const {
    double u, v;
    if (!rotated) {
      u = double(x0_l0) * scale;
      v = double(y0_l0) * scale;
    } else {
      u = (double(slide_h0) - double(y0_l0)) * scale - span;
      v = double(x0_l0) * scale;
    }
    u += content.x;
    v += content.y;
    int x0 = int(std::floor(u + 0.5));
    int y0 = int(std::floor(v + 0.5));
    int x1 = std::max(x0 + 1, int(std::floor(u + span + 0.5)));
    int y1 = std::max(y0 + 1, int(std::floor(v + span + 0.5)));
    x0 = std::clamp(x0, content.x, content.x + content.width);
    x1 = std::clamp(x1, content.x, content.x + content.width);
    y0 = std::clamp(y0, content.y, content.y + content.height);
    y1 = std::clamp(y1, content.y, content.y + content.height);
    return {x0, y0, x1, y1};
  }
};

void max_normalize(nn::MatX<float>& m) {
  const float mx = m.size() ? m.maxCoeff() : 0.0f;
  if (mx > 0.0f) m /= mx;
}

std::array<uint8_t, 3> inferno(float t) {
  static constexpr std::array<std::array<double, 3>, 5> stops = {{
      {0, 0, 4}, {87, 16, 110}, {188, 55, 84}, {249, 142, 9}, {252, 255, 164}}};
  t = std::clamp(t, 0.0f, 1.0f);
  const double pos = t * (stops.size() - 1);
  const int i = std::min(int(pos), int(stops.size()) - 2);
  const double f = pos - i;
  std::array<uint8_t, 3> out;
  for (int c = 0; c < 3; ++c)
    out[c] = uint8_t(std::lround(stops[i][c] * (1 - f) + stops[i + 1][c] * f));
  return out;
}

std::array<uint8_t, 3> class_color(int idx) {
  static constexpr std::array<std::array<uint8_t, 3>, 16> palette = {{
      {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
      {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
      {188, 189, 34}, {23, 190, 207}, {174, 199, 232}, {255, 187, 120},
      {152, 223, 138}, {255, 152, 150}, {197, 176, 213}, {196, 156, 148}}};
  return palette[static_cast<size_t>(idx) % palette.size()];
}

} // namespace

HeatmapOverlay gradcam_thumbnail(ThumbnailModel& model, const Thumbnail& thumb,
                                 const ClassSet& classes, int target_class) {
  if (thumb.pixels.width != model.backbone.input_w() ||
      thumb.pixels.height != model.backbone.input_h())
    throw ShapeError("thumbnail is " + std::to_string(thumb.pixels.width) + "x" +
                     std::to_string(thumb.pixels.height) + " but the model is configured for " +
                     std::to_string(model.backbone.input_w()) + "x" +
                     std::to_string(model.backbone.input_h()));
  if (classes.size() != model.head.num_classes())
    throw ArgumentError("class set " + classes.name() + " has " +
                        std::to_string(classes.size()) + " classes but the head has " +
                        std::to_string(model.head.num_classes()));
  if (target_class >= classes.size())
    throw ArgumentError("target class " + std::to_string(target_class) + " out of range");

  const auto img = normalize_image<float>(thumb.pixels, model.normalizer);
  VisionTransformer<float>::Cache cache;
  const nn::MatX<float> tokens = model.backbone.forward_tokens_cached(img, cache);
  ThumbnailHead<float>::Cache head_cache;
  const nn::MatX<float> logits = model.head.forward_eval(tokens.topRows(1), head_cache);

  int target = target_class;
  if (target < 0) {
    Eigen::Index am = 0;
    logits.row(0).maxCoeff(&am);
    target = int(am);
  }
  nn::MatX<float> dlogits = nn::MatX<float>::Zero(1, logits.cols());
  dlogits(0, target) = 1.0f;
  const nn::MatX<float> dcls = model.head.backward_input(dlogits, head_cache);
  nn::MatX<float> dtokens = nn::MatX<float>::Zero(tokens.rows(), tokens.cols());
  dtokens.row(0) = dcls.row(0);
  model.backbone.backward_tokens(dtokens, cache);

  const auto& last = cache.blocks.back();
  const Eigen::Index n_tok = last.x_in.rows() - 1;
  const nn::VecX<float> weights =
      last.dx_in.bottomRows(n_tok).colwise().mean().transpose();
  const nn::VecX<float> raw = (last.x_in.bottomRows(n_tok) * weights).cwiseMax(0.0f);

  // backward_tokens accumulates parameter grads; they are scratch here
  nn::ParamList<float> params;
  model.params(params);
  nn::zero_grads(params);

  const int rows = model.backbone.grid_rows();
  const int cols = model.backbone.grid_cols();
  const int p = model.backbone.spec().token_patch_size;

  HeatmapOverlay out;
  out.base = thumb.pixels;
  out.kind = "gradcam";
  out.target_class = classes.classes()[target];
  out.legend = "gradcam target " + out.target_class;
  out.token_heat.resize(rows, cols);
  for (int ty = 0; ty < rows; ++ty)
    for (int tx = 0; tx < cols; ++tx)
      out.token_heat(ty, tx) = raw[static_cast<Eigen::Index>(ty) * cols + tx];

  out.heat.resize(thumb.pixels.height, thumb.pixels.width);
  for (int y = 0; y < thumb.pixels.height; ++y) {
    const double v = std::clamp((y + 0.5) / p - 0.5, 0.0, double(rows - 1));
    const int y0 = std::min(int(v), rows - 1);
    const int y1 = std::min(y0 + 1, rows - 1);
    const float fy = float(v - y0);
    for (int x = 0; x < thumb.pixels.width; ++x) {
      const double u = std::clamp((x + 0.5) / p - 0.5, 0.0, double(cols - 1));
      const int x0 = std::min(int(u), cols - 1);
      const int x1 = std::min(x0 + 1, cols - 1);
      const float fx = float(u - x0);
      out.heat(y, x) = out.token_heat(y0, x0) * (1 - fy) * (1 - fx) +
                       out.token_heat(y0, x1) * (1 - fy) * fx +
                       out.token_heat(y1, x0) * fy * (1 - fx) +
                       out.token_heat(y1, x1) * fy * fx;
    }
  }
  max_normalize(out.heat);
  max_normalize(out.token_heat);
  return out;
}

HeatmapOverlay attention_overlay(const FeatureBag& bag, const SlidePrediction& prediction,
                                 const Thumbnail& thumb, int64_t slide_w0, int64_t slide_h0,
                                 int patch_size_px) {
  const Eigen::Index n = bag.coords.rows();
  if (n == 0) throw EmptyBagError("attention overlay over an empty bag");
  if (prediction.attention.size() != n)
    throw ShapeError("prediction carries " + std::to_string(prediction.attention.size()) +
                     " attention weights for a bag of " + std::to_string(n));
  const FootprintMapper map(thumb, slide_w0, slide_h0, patch_size_px, bag.target_mpp);

  HeatmapOverlay out;
  out.base = thumb.pixels;
  out.kind = "attention";
  if (prediction.argmax >= 0) {
    const ClassSet& set = ClassSet::by_name(prediction.class_set);
    out.target_class = set.classes()[prediction.argmax];
  }
  out.legend = "attention, prediction " + out.target_class;
  out.heat = nn::MatX<float>::Zero(thumb.pixels.height, thumb.pixels.width);

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [x0, y0, x1, y1] = map.rect(bag.coords(i, 0), bag.coords(i, 1));
    const int64_t n_px = int64_t(x1 - x0) * (y1 - y0);
    if (n_px <= 0) continue;
    const float add = prediction.attention[i] / float(n_px);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) out.heat(y, x) += add;
  }
  out.splat_mass = out.heat.cast<double>().sum();
  max_normalize(out.heat);
  return out;
}

HeatmapOverlay vote_map(const nn::MatX<float>& patch_votes,
                        const Eigen::Matrix<int32_t, Eigen::Dynamic, 2, Eigen::RowMajor>& coords,
                        double target_mpp, const Thumbnail& thumb, int64_t slide_w0,
                        int64_t slide_h0, int patch_size_px, const ClassSet& classes) {
  if (patch_votes.rows() == 0) throw EmptyBagError("vote map over an empty vote matrix");
  if (patch_votes.rows() != coords.rows())
    throw ShapeError("vote rows " + std::to_string(patch_votes.rows()) +
                     " != coord rows " + std::to_string(coords.rows()));
  if (patch_votes.cols() != classes.size())
    throw ShapeError("vote columns " + std::to_string(patch_votes.cols()) +
                     " != class set size " + std::to_string(classes.size()));
  const FootprintMapper map(thumb, slide_w0, slide_h0, patch_size_px, target_mpp);

  HeatmapOverlay out;
  out.base = thumb.pixels;
  out.kind = "votes";
  out.heat = nn::MatX<float>::Zero(thumb.pixels.height, thumb.pixels.width);
  out.pixel_class = Eigen::MatrixXi::Constant(thumb.pixels.height, thumb.pixels.width, -1);

  std::vector<int64_t> counts(classes.size(), 0);
  for (Eigen::Index i = 0; i < patch_votes.rows(); ++i) {
    Eigen::Index am = 0;
    const float conf = patch_votes.row(i).maxCoeff(&am);
    ++counts[am];
    const auto [x0, y0, x1, y1] = map.rect(coords(i, 0), coords(i, 1));
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        out.heat(y, x) = conf;
        out.pixel_class(y, x) = int(am);
      }
  }
  max_normalize(out.heat);

  std::string legend = "votes:";
  for (size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) continue;
    const double share = double(counts[c]) / double(patch_votes.rows());
    out.proportions[classes.classes()[c]] = share;
    legend += " " + classes.classes()[c] + " " +
              std::to_string(int(std::lround(share * 100))) + "%";
  }
  out.legend = legend;
  return out;
}

std::filesystem::path write_overlay(const HeatmapOverlay& overlay,
                                    const std::filesystem::path& maps_root,
                                    const std::string& slide_id) {
  if (overlay.heat.rows() != overlay.base.height || overlay.heat.cols() != overlay.base.width)
    throw ShapeError("heat field does not match the base thumbnail");
  const std::filesystem::path dir = maps_root / slide_id;
  std::filesystem::create_directories(dir);

  ImageU8 img = overlay.base;
  const bool votes = overlay.kind == "votes";
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double alpha = 0;
      std::array<uint8_t, 3> color{};
      if (votes) {
        const int cls = overlay.pixel_class(y, x);
        if (cls < 0) continue;
        color = class_color(cls);
        alpha = 0.55;
      } else {
        const float t = overlay.heat(y, x);
        if (t <= 1e-6f) continue;
        color = inferno(t);
        alpha = 0.6 * t;
      }
      for (int c = 0; c < 3; ++c) {
        const double mixed = (1 - alpha) * img.at(x, y, c) + alpha * color[c];
        img.at(x, y, c) = uint8_t(std::lround(std::clamp(mixed, 0.0, 255.0)));
      }
    }
  }
  const std::filesystem::path png_path = dir / (overlay.kind + ".png");
  write_png_rgb(png_path, img);

  nlohmann::json meta;
  meta["kind"] = overlay.kind;
  if (overlay.target_class.empty())
    meta["target_class"] = nullptr;
  else
    meta["target_class"] = overlay.target_class;
  if (!overlay.proportions.empty()) meta["proportions"] = overlay.proportions;
  meta["legend"] = overlay.legend;
  std::ofstream out(dir / (overlay.kind + ".json"), std::ios::binary);
  if (!out) throw IoError("cannot write overlay sidecar under " + dir.string());
  out << meta.dump(2) << '\n';
  return png_path;
}

} // namespace stainqc
