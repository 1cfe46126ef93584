#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "stainqc/errors.hpp"
#include "stainqc/interpretability.hpp"
#include "stainqc/png_io.hpp"
#include "stainqc/rng.hpp"

using namespace stainqc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "stainqc_test_interp";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// 64x32 thumbnail of a 640x320 slide: scale 0.1, patch footprints 8x8 px
// (patch 64 px at 1.25 mpp over 10 mpp thumbnail pixels).
Thumbnail flat_thumb() {
  Thumbnail t;
  t.pixels = ImageU8(64, 32, 3, 255);
  t.content = {0, 0, 64, 32};
  t.effective_mpp = 10.0;
  t.rotated = false;
  return t;
}

Eigen::Matrix<int32_t, Eigen::Dynamic, 2, Eigen::RowMajor> grid_coords(int n) {
  Eigen::Matrix<int32_t, Eigen::Dynamic, 2, Eigen::RowMajor> c(n, 2);
  for (int i = 0; i < n; ++i) {
    c(i, 0) = (i % 3) * 80; // 80 level-0 px = one 8 px footprint in the thumb
    c(i, 1) = (i / 3) * 80;
  }
  return c;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

} // namespace

TEST_CASE("thumbnail head eval gradient matches finite differences") {
  const Eigen::Index dim = 16, n_classes = 5;
  ThumbnailHead<double> head(dim, n_classes, 77, /*dropout=*/0.3);

  // non-trivial running statistics so the BN affine path is exercised
  std::vector<std::pair<std::string, nn::MatX<double>*>> bufs;
  head.buffers(bufs);
  Rng rng(123);
  for (auto& [name, mat] : bufs)
    for (Eigen::Index i = 0; i < mat->size(); ++i)
      mat->data()[i] = name.find("var") != std::string::npos ? rng.uniform(0.5, 2.0)
                                                             : rng.uniform(-0.5, 0.5);

  nn::MatX<double> x(1, dim);
  for (Eigen::Index i = 0; i < dim; ++i) x(0, i) = rng.uniform(-2.0, 2.0);

  ThumbnailHead<double>::Cache cache;
  (void)head.forward_eval(x, cache);
  for (Eigen::Index target = 0; target < n_classes; ++target) {
    nn::MatX<double> dlogits = nn::MatX<double>::Zero(1, n_classes);
    dlogits(0, target) = 1.0;
    const nn::MatX<double> grad = head.backward_input(dlogits, cache);

    const double h = 1e-6;
    for (Eigen::Index i = 0; i < dim; ++i) {
      nn::MatX<double> xp = x, xm = x;
      xp(0, i) += h;
      xm(0, i) -= h;
      ThumbnailHead<double>::Cache scratch;
      const double fd = (head.forward_eval(xp, scratch)(0, target) -
                         head.forward_eval(xm, scratch)(0, target)) /
                        (2 * h);
      CHECK(grad(0, i) == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("gradcam contract on an untrained model") {
  BackboneSpec spec;
  spec.embed_dim = 32;
  spec.depth = 2;
  spec.heads = 2;
  spec.mlp_ratio = 2;
  spec.dropout = 0.4; // must be ignored by the attribution path
  spec.drop_path = 0.2;
  spec.attn_drop = 0.3;
  const ClassSet& classes = ClassSet::fixation_binary();
  ThumbnailModel model(spec, 28, 56, classes.size(), 9);

  Thumbnail thumb;
  thumb.pixels = ImageU8(56, 28, 3, 255);
  thumb.content = {0, 0, 56, 28};
  thumb.effective_mpp = 8.0;

  const HeatmapOverlay a = gradcam_thumbnail(model, thumb, classes);
  CHECK(a.kind == "gradcam");
  CHECK((a.target_class == "he_ffpe" || a.target_class == "he_fs"));
  // token grid is input / token_patch_size ahead of upsampling
  CHECK(a.token_heat.rows() == 2);
  CHECK(a.token_heat.cols() == 4);
  CHECK(a.heat.rows() == 28);
  CHECK(a.heat.cols() == 56);
  CHECK(a.heat.minCoeff() >= 0.0f);
  CHECK(a.heat.maxCoeff() <= 1.0f + 1e-6f);
  const bool zero_field = a.heat.maxCoeff() == 0.0f;
  CHECK((zero_field || a.heat.maxCoeff() == doctest::Approx(1.0f)));

  // dropout rates in the spec must not make attribution stochastic
  const HeatmapOverlay b = gradcam_thumbnail(model, thumb, classes);
  CHECK(a.heat == b.heat);

  // scratch parameter grads are zeroed before returning
  nn::ParamList<float> params;
  model.params(params);
  for (const auto& p : params) CHECK(p.grad->cwiseAbs().maxCoeff() == 0.0f);

  // explicit target agrees with the default argmax target
  const int target = classes.index_of(a.target_class);
  const HeatmapOverlay c = gradcam_thumbnail(model, thumb, classes, target);
  CHECK(c.heat == a.heat);

  CHECK_THROWS_AS(gradcam_thumbnail(model, thumb, classes, 7), ArgumentError);
  CHECK_THROWS_AS(gradcam_thumbnail(model, thumb, ClassSet::fine()), ArgumentError);
  Thumbnail wrong = thumb;
  wrong.pixels = ImageU8(28, 28, 3, 255);
  CHECK_THROWS_AS(gradcam_thumbnail(model, wrong, classes), ShapeError);
}

TEST_CASE("attention overlay splats unit mass over footprints") {
  const Thumbnail thumb = flat_thumb();
  const int n = 6;
  FeatureBag bag;
  bag.slide_id = "s";
  bag.coords = grid_coords(n);
  bag.target_mpp = 1.25;

  SlidePrediction pred;
  pred.method = "mil";
  pred.class_set = "fine";
  pred.argmax = 3;
  pred.attention = nn::VecX<float>::Constant(n, 1.0f / n);

  const HeatmapOverlay o = attention_overlay(bag, pred, thumb, 640, 320, 64);
  CHECK(o.kind == "attention");
  CHECK(o.target_class == "giemsa");
  CHECK(o.splat_mass == doctest::Approx(1.0).epsilon(1e-5));
  // uniform attention: every footprint pixel normalizes to exactly 1
  for (int i = 0; i < n; ++i) {
    const int fx = (i % 3) * 8, fy = (i / 3) * 8;
    CHECK(o.heat(fy + 4, fx + 4) == doctest::Approx(1.0f));
  }
  CHECK(o.heat(30, 60) == 0.0f); // outside all footprints

  // singleton bag: one hot footprint carrying all the mass
  FeatureBag one;
  one.coords = grid_coords(1);
  one.target_mpp = 1.25;
  SlidePrediction pone = pred;
  pone.attention = nn::VecX<float>::Constant(1, 1.0f);
  const HeatmapOverlay s = attention_overlay(one, pone, thumb, 640, 320, 64);
  CHECK(s.splat_mass == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(s.heat(4, 4) == doctest::Approx(1.0f));
  CHECK(s.heat(4, 12) == 0.0f);

  SlidePrediction bad = pred;
  bad.attention = nn::VecX<float>::Constant(n - 1, 1.0f / (n - 1));
  CHECK_THROWS_AS(attention_overlay(bag, bad, thumb, 640, 320, 64), ShapeError);
  FeatureBag empty;
  empty.target_mpp = 1.25;
  empty.coords.resize(0, 2);
  CHECK_THROWS_AS(attention_overlay(empty, pred, thumb, 640, 320, 64), EmptyBagError);
}

TEST_CASE("attention overlay respects the portrait rotation") {
  Thumbnail thumb = flat_thumb();
  thumb.rotated = true; // portrait 320x640 slide rotated into a 64x32 thumb

  FeatureBag bag;
  bag.coords.resize(1, 2);
  bag.coords << 0, 0; // top-left in slide frame -> top-right after rotation
  bag.target_mpp = 1.25;
  SlidePrediction pred;
  pred.class_set = "fine";
  pred.argmax = 0;
  pred.attention = nn::VecX<float>::Constant(1, 1.0f);

  const HeatmapOverlay o = attention_overlay(bag, pred, thumb, 320, 640, 64);
  CHECK(o.heat(4, 60) == doctest::Approx(1.0f));
  CHECK(o.heat(4, 4) == 0.0f);
  CHECK(o.splat_mass == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("vote map proportions count argmax classes") {
  const Thumbnail thumb = flat_thumb();
  const ClassSet& fine = ClassSet::fine();

  nn::MatX<float> votes = nn::MatX<float>::Zero(4, fine.size());
  votes(0, 0) = 0.9f;
  votes(1, 0) = 0.6f;
  votes(2, 1) = 0.8f;
  votes(3, 2) = 0.7f;
  const auto coords = grid_coords(4);

  const HeatmapOverlay o = vote_map(votes, coords, 1.25, thumb, 640, 320, 64, fine);
  CHECK(o.kind == "votes");
  REQUIRE(o.proportions.size() == 3);
  CHECK(o.proportions.at("alcian_blue") == doctest::Approx(0.5));
  CHECK(o.proportions.at("alcian_blue_pas") == doctest::Approx(0.25));
  CHECK(o.proportions.at("prussian_blue") == doctest::Approx(0.25));
  CHECK(o.heat.maxCoeff() == doctest::Approx(1.0f)); // 0.9 normalizes to 1
  CHECK(o.pixel_class(4, 4) == 0);
  CHECK(o.pixel_class(4, 12) == 0);
  CHECK(o.pixel_class(4, 20) == 1);
  CHECK(o.pixel_class(12, 4) == 2);
  CHECK(o.pixel_class(30, 60) == -1);

  nn::MatX<float> same = nn::MatX<float>::Zero(4, fine.size());
  same.col(5).setConstant(1.0f);
  const HeatmapOverlay all = vote_map(same, coords, 1.25, thumb, 640, 320, 64, fine);
  REQUIRE(all.proportions.size() == 1);
  CHECK(all.proportions.at("congo_red") == doctest::Approx(1.0));

  // property: proportions always match an independent argmax count
  Rng rng(4242);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + int(rng.below(12));
    nn::MatX<float> v(n, fine.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = float(rng.uniform(0.0, 1.0));
    Eigen::Matrix<int32_t, Eigen::Dynamic, 2, Eigen::RowMajor> c(n, 2);
    for (int i = 0; i < n; ++i) {
      c(i, 0) = (i % 4) * 80;
      c(i, 1) = (i / 4) * 80;
    }
    const HeatmapOverlay r = vote_map(v, c, 1.25, thumb, 640, 320, 64, fine);
    std::map<std::string, double> oracle;
    for (int i = 0; i < n; ++i) {
      Eigen::Index am = 0;
      v.row(i).maxCoeff(&am);
      oracle[fine.classes()[am]] += 1.0 / n;
    }
    REQUIRE(r.proportions.size() == oracle.size());
    double total = 0;
    for (const auto& [id, share] : oracle) {
      CHECK(r.proportions.at(id) == doctest::Approx(share));
      total += r.proportions.at(id);
    }
    CHECK(total == doctest::Approx(1.0));
  }

  nn::MatX<float> bad(4, 3);
  CHECK_THROWS_AS(vote_map(bad, coords, 1.25, thumb, 640, 320, 64, fine), ShapeError);
  nn::MatX<float> none(0, fine.size());
  Eigen::Matrix<int32_t, Eigen::Dynamic, 2, Eigen::RowMajor> no_coords(0, 2);
  CHECK_THROWS_AS(vote_map(none, no_coords, 1.25, thumb, 640, 320, 64, fine), EmptyBagError);
}

TEST_CASE("write_overlay renders PNG plus sidecar") {
  const Thumbnail thumb = flat_thumb();
  const ClassSet& fine = ClassSet::fine();
  nn::MatX<float> votes = nn::MatX<float>::Zero(2, fine.size());
  votes(0, 0) = 1.0f;
  votes(1, 8) = 1.0f;
  const HeatmapOverlay vm = vote_map(votes, grid_coords(2), 1.25, thumb, 640, 320, 64, fine);

  const fs::path maps = temp_dir() / "maps";
  const fs::path png = write_overlay(vm, maps, "slide_07");
  CHECK(png == maps / "slide_07" / "votes.png");
  const ImageU8 img = read_png(png);
  CHECK(img.width == 64);
  CHECK(img.height == 32);
  const std::string sidecar = read_text(maps / "slide_07" / "votes.json");
  CHECK(sidecar.find("\"kind\": \"votes\"") != std::string::npos);
  CHECK(sidecar.find("\"pas\"") != std::string::npos);
  CHECK(sidecar.find("proportions") != std::string::npos);

  FeatureBag bag;
  bag.coords = grid_coords(3);
  bag.target_mpp = 1.25;
  SlidePrediction pred;
  pred.class_set = "fine";
  pred.argmax = 2;
  pred.attention = nn::VecX<float>::Constant(3, 1.0f / 3);
  const HeatmapOverlay att = attention_overlay(bag, pred, thumb, 640, 320, 64);
  const fs::path att_png = write_overlay(att, maps, "slide_07");
  CHECK(fs::exists(att_png));
  const std::string att_json = read_text(maps / "slide_07" / "attention.json");
  CHECK(att_json.find("\"target_class\": \"prussian_blue\"") != std::string::npos);
}
