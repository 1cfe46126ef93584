#include "stainqc/features.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "stainqc/errors.hpp"
#include "stainqc/rng.hpp"

namespace stainqc {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int64_t> budget_indices(int64_t n, int64_t k, uint64_t seed) {
  std::vector<int64_t> idx;
  if (k < 0 || k >= n) {
    idx.resize(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), int64_t{0});
    return idx;
  }
  Rng rng(seed);
  const auto picked = rng.sample_without_replacement(static_cast<uint64_t>(n),
                                                     static_cast<uint64_t>(k));
  idx.reserve(picked.size());
  for (uint64_t v : picked) idx.push_back(static_cast<int64_t>(v));
  return idx;
}

namespace {

nn::VecX<float> encode_patch(SlidePyramid& slide, const PatchGrid& grid,
                             const VisionTransformer<float>& backbone, const Normalizer& nrm,
                             int64_t x, int64_t y) {
  ImageU8 patch = read_patch(slide, x, y, grid.patch_size_px, grid.target_mpp);
  if (patch.width != backbone.input_w() || patch.height != backbone.input_h())
    patch = resize_area(patch, backbone.input_w(), backbone.input_h());
  return backbone.encode(normalize_image<float>(patch, nrm), EncodeMode::patch_features);
}

} // namespace

FeatureBag extract_features(SlidePyramid& slide, const PatchGrid& grid,
                            const VisionTransformer<float>& backbone,
                            const std::string& backbone_stage, const FeatureBudget& budget,
                            const Normalizer& nrm) {
  FeatureBag bag;
  bag.slide_id = slide.path().stem().string();
  bag.target_mpp = grid.target_mpp;
  bag.backbone_stage = backbone_stage;
  bag.budget_k = budget.k;

  const int64_t total = static_cast<int64_t>(grid.coords.size());
  const auto idx = budget_indices(total, budget.k, budget.seed);
  const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
  const Eigen::Index dim = backbone.feature_dim(EncodeMode::patch_features);
  bag.features.resize(n, dim);
  bag.coords.resize(n, 2);
  bag.blank = n == 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [x, y] = grid.coords[static_cast<size_t>(idx[static_cast<size_t>(i)])];
    bag.features.row(i) = encode_patch(slide, grid, backbone, nrm, x, y).transpose();
    bag.coords(i, 0) = static_cast<int32_t>(x);
    bag.coords(i, 1) = static_cast<int32_t>(y);
  }
  return bag;
}

FeatureBag subsample_bag(const FeatureBag& full, int64_t k, uint64_t seed) {
  FeatureBag out;
  out.slide_id = full.slide_id;
  out.target_mpp = full.target_mpp;
  out.backbone_stage = full.backbone_stage;
  out.budget_k = k;
  const auto idx = budget_indices(full.size(), k, seed);
  const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
  out.features.resize(n, full.features.cols());
  out.coords.resize(n, 2);
  out.blank = n == 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = static_cast<Eigen::Index>(idx[static_cast<size_t>(i)]);
    out.features.row(i) = full.features.row(src);
    out.coords.row(i) = full.coords.row(src);
  }
  return out;
}

std::vector<FeatureBag> resample_rounds(SlidePyramid& slide, const PatchGrid& grid,
                                        const VisionTransformer<float>& backbone,
                                        const std::string& backbone_stage, int64_t k,
                                        int64_t rounds, uint64_t seed, const Normalizer& nrm) {
  if (rounds < 1) throw ArgumentError("resample_rounds requires rounds >= 1");
  const FeatureBag full = extract_features(slide, grid, backbone, backbone_stage, {}, nrm);
  std::vector<FeatureBag> out;
  out.reserve(static_cast<size_t>(rounds));
  for (int64_t r = 0; r < rounds; ++r) {
    const uint64_t round_seed = r == 0 ? seed : derive_seed(seed, static_cast<uint64_t>(r));
    out.push_back(subsample_bag(full, k, round_seed));
  }
  return out;
}

fs::path bag_path(const fs::path& bags_dir, const std::string& stage,
                  const std::string& slide_id) {
  return bags_dir / stage / (slide_id + ".bin");
}

void save_bag(const fs::path& bags_dir, const std::string& stage, const FeatureBag& bag) {
  const fs::path bin = bag_path(bags_dir, stage, bag.slide_id);
  fs::create_directories(bin.parent_path());

  json header;
  header["slide_id"] = bag.slide_id;
  header["rows"] = bag.features.rows();
  header["dim"] = bag.features.cols();
  header["target_mpp"] = bag.target_mpp;
  header["backbone_stage"] = bag.backbone_stage;
  if (bag.budget_k < 0)
    header["budget"] = "all";
  else
    header["budget"] = bag.budget_k;
  header["blank"] = bag.blank;

  fs::path sidecar = bin;
  sidecar += ".json";
  {
    std::ofstream js(sidecar);
    if (!js) throw IoError("cannot write " + sidecar.string());
    js << header.dump(2) << "\n";
  }
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw IoError("cannot write " + bin.string());
  out.write(reinterpret_cast<const char*>(bag.features.data()),
            static_cast<std::streamsize>(sizeof(float) * bag.features.size()));
  out.write(reinterpret_cast<const char*>(bag.coords.data()),
            static_cast<std::streamsize>(sizeof(int32_t) * bag.coords.size()));
  if (!out) throw IoError("short write to " + bin.string());
}

FeatureBag load_bag(const fs::path& bags_dir, const std::string& stage,
                    const std::string& slide_id) {
  const fs::path bin = bag_path(bags_dir, stage, slide_id);
  fs::path sidecar = bin;
  sidecar += ".json";
  std::ifstream js(sidecar);
  if (!js) throw IoError("missing bag sidecar " + sidecar.string());
  json header = json::parse(js, nullptr, true);

  FeatureBag bag;
  bag.slide_id = header.at("slide_id").get<std::string>();
  bag.target_mpp = header.at("target_mpp").get<double>();
  bag.backbone_stage = header.at("backbone_stage").get<std::string>();
  if (header.at("budget").is_string())
    bag.budget_k = -1;
  else
    bag.budget_k = header.at("budget").get<int64_t>();
  bag.blank = header.at("blank").get<bool>();
  const Eigen::Index rows = header.at("rows").get<Eigen::Index>();
  const Eigen::Index dim = header.at("dim").get<Eigen::Index>();

  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError("missing bag " + bin.string());
  const size_t expect = sizeof(float) * static_cast<size_t>(rows) * static_cast<size_t>(dim) +
                        sizeof(int32_t) * static_cast<size_t>(rows) * 2;
  in.seekg(0, std::ios::end);
  if (static_cast<size_t>(in.tellg()) != expect)
    throw IoError("bag " + bin.string() + " size does not match its header");
  in.seekg(0);
  bag.features.resize(rows, dim);
  bag.coords.resize(rows, 2);
  in.read(reinterpret_cast<char*>(bag.features.data()),
          static_cast<std::streamsize>(sizeof(float) * bag.features.size()));
  in.read(reinterpret_cast<char*>(bag.coords.data()),
          static_cast<std::streamsize>(sizeof(int32_t) * bag.coords.size()));
  if (!in) throw IoError("short read from " + bin.string());
  return bag;
}

} // namespace stainqc
