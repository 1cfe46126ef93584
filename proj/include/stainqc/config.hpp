#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "stainqc/training.hpp"
#include "stainqc/vit.hpp"

namespace stainqc {

struct PathsConfig {
  std::filesystem::path data = "data";        // slides, manifest.csv, gt_masks
  std::filesystem::path bags = "work";        // masks, grids, thumbs, feature bags
  std::filesystem::path checkpoints = "checkpoints";
  std::filesystem::path reports = "reports";
};

struct PatchConfig {
  int size_px = 512; // 512x512 px at 0.59 mpp
  double mpp = 0.59;
};

struct ThumbnailConfig {
  int height = 896; // model input, standardized 896x1792
  int width = 1792;
  int source_height = 1792; // cached source; ablation targets resize from it
  int source_width = 3584;
};

struct BudgetConfig {
  int64_t k = 20;       // efficient patch budget
  int64_t rounds = 200; // resampling rounds per budgeted slide
};

struct Seeds {
  uint64_t corpus = 7;
  uint64_t split = 11;
  uint64_t train = 13;
  uint64_t sampling = 17; // patch sampling for training and budgets
};

struct RunConfig {
  PathsConfig paths;
  std::string class_set = "fine";
  BackboneSpec backbone;
  PatchConfig patch;
  ThumbnailConfig thumbnail;
  BudgetConfig budgets;
  Seeds seeds;
  TrainRecipe patch_train = patch_recipe();
  TrainRecipe mil_train = mil_recipe();
  TrainRecipe thumbnail_train = thumbnail_recipe();
  TrainRecipe fixation_train = thumbnail_recipe();
  int patches_per_slide = 32; // training patches sampled per slide
};

nlohmann::json config_to_json(const RunConfig& cfg);

/// Strict: unknown keys are a ConfigError so typos never silently fall back
/// to defaults. Missing keys keep their defaults.
RunConfig config_from_json(const nlohmann::json& j);

void save_config(const std::filesystem::path& path, const RunConfig& cfg);

/// Relative paths in the file resolve against the file's directory.
RunConfig load_config(const std::filesystem::path& path);

/// Basic sanity: positive sizes, mpp, budgets; thumbnail dims divisible by
/// the token patch size; known class set.
void validate_config(const RunConfig& cfg);

// Workspace layout under the configured roots.
inline std::filesystem::path manifest_path(const RunConfig& c) {
  return c.paths.data / "manifest.csv";
}
inline std::filesystem::path masks_dir(const RunConfig& c) { return c.paths.bags / "masks"; }
inline std::filesystem::path grids_dir(const RunConfig& c) { return c.paths.bags / "grids"; }
inline std::filesystem::path thumbs_dir(const RunConfig& c) { return c.paths.bags / "thumbs"; }
inline std::filesystem::path features_dir(const RunConfig& c) {
  return c.paths.bags / "features";
}
inline std::filesystem::path splits_path(const RunConfig& c) {
  return c.paths.checkpoints / "splits.json";
}
inline std::filesystem::path checkpoint_path(const RunConfig& c, const std::string& stage) {
  return c.paths.checkpoints / (stage + ".ckpt");
}
inline std::filesystem::path predictions_path(const RunConfig& c, const std::string& tag) {
  return c.paths.reports / "predictions" / (tag + ".json");
}

/// Merged-config snapshot recorded by every subcommand run.
std::filesystem::path write_config_snapshot(const RunConfig& cfg, const std::string& command);

} // namespace stainqc
