#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stainqc/nn.hpp"
#include "stainqc/slide.hpp"
#include "stainqc/vit.hpp"

namespace stainqc {

struct FeatureBudget {
  int64_t k = -1; // -1: encode the full grid
  uint64_t seed = 0;
};

struct FeatureBag {
  std::string slide_id;
  nn::MatX<float> features; // N x D, D = 2 * embed_dim
  Eigen::Matrix<int32_t, Eigen::Dynamic, 2, Eigen::RowMajor> coords; // level-0 (x, y)
  double target_mpp = 0.0;
  std::string backbone_stage;
  int64_t budget_k = -1; // -1: all
  bool blank = false;

  Eigen::Index size() const { return features.rows(); }
};

/// Sample row indices for a budgeted bag; k < 0 or k >= n selects everything.
std::vector<int64_t> budget_indices(int64_t n, int64_t k, uint64_t seed);

FeatureBag extract_features(SlidePyramid& slide, const PatchGrid& grid,
                            const VisionTransformer<float>& backbone,
                            const std::string& backbone_stage, const FeatureBudget& budget = {},
                            const Normalizer& nrm = {});

/// Budget-k rounds sampled from one full-grid encoding. Round 0 uses the base
/// seed (so a single round reduces to extract_features); later rounds derive.
std::vector<FeatureBag> resample_rounds(SlidePyramid& slide, const PatchGrid& grid,
                                        const VisionTransformer<float>& backbone,
                                        const std::string& backbone_stage, int64_t k,
                                        int64_t rounds, uint64_t seed,
                                        const Normalizer& nrm = {});

/// Slice a budgeted bag out of a precomputed full bag; identical to
/// re-extracting because encoding is deterministic in eval state.
FeatureBag subsample_bag(const FeatureBag& full, int64_t k, uint64_t seed);

std::filesystem::path bag_path(const std::filesystem::path& bags_dir, const std::string& stage,
                               const std::string& slide_id);
void save_bag(const std::filesystem::path& bags_dir, const std::string& stage,
              const FeatureBag& bag);
FeatureBag load_bag(const std::filesystem::path& bags_dir, const std::string& stage,
                    const std::string& slide_id);

} // namespace stainqc
