#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stainqc/checkpoint.hpp"
#include "stainqc/features.hpp"
#include "stainqc/manifest.hpp"
#include "stainqc/thumbnail_classifier.hpp"
#include "stainqc/vit.hpp"

namespace stainqc {

// ---------------------------------------------------------------------------
// Split protocol

struct SplitPlan {
  uint64_t seed = 0;
  std::map<std::string, std::vector<std::string>> holdout; // fine label -> slide ids
  std::vector<std::vector<std::string>> folds;             // disjoint, stratified
  std::vector<std::string> warnings;

  std::vector<std::string> holdout_ids() const;
  std::vector<std::string> train_ids() const; // all fold members
};

/// Per-class 20% holdout (rounded), then stratified folds over the rest.
SplitPlan make_splits(const std::vector<ManifestEntry>& manifest, uint64_t seed,
                      int n_folds = 5);

void save_splits(const std::filesystem::path& path, const SplitPlan& plan);
SplitPlan load_splits(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Recipes

struct OptimizerSpec {
  double lr = 1e-4;
  double weight_decay = 0.0;
};

struct EarlyStopSpec {
  bool enabled = true;
  int patience = 5;
  double min_delta = 0.001; // reset requires improvement strictly above this
};

struct TrainRecipe {
  OptimizerSpec optimizer;
  int batch_size = 256;
  int max_epochs = 15;
  double label_smoothing = 0.05;
  double warmup_frac = 0.05; // of total steps
  double dropout = 0.0;
  double drop_path = 0.0;
  double attn_drop = 0.0;
  bool flip_augment = false; // horizontal/vertical flips (patch level only)
  EarlyStopSpec early_stop;
};

TrainRecipe patch_recipe();     // AdamW 5e-5 / wd 0.01, drops 0.5, batch 256, 15 epochs
TrainRecipe mil_recipe();       // AdamW 1e-5 / wd 5e-2, batch 256, 15 epochs
TrainRecipe thumbnail_recipe(); // AdamW 1e-5 / wd 5e-2, drops 0.3, batch 128, 20 epochs

/// Patience counts epochs since the last improvement > min_delta.
class EarlyStopper {
public:
  explicit EarlyStopper(const EarlyStopSpec& spec) : spec_(spec) {}

  /// Feed one epoch's metric; true means stop after this epoch.
  bool update(double metric);
  bool improved_last() const { return improved_last_; } // any strict improvement
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }

private:
  EarlyStopSpec spec_;
  double best_ = -1e300;
  double best_for_patience_ = -1e300;
  int epoch_ = -1;
  int best_epoch_ = -1;
  int since_improvement_ = 0;
  bool improved_last_ = false;
};

/// Line-JSON per epoch: {epoch, train_loss, val_macro_f1, lr}.
class MetricsLogger {
public:
  explicit MetricsLogger(const std::filesystem::path& path); // empty path disables
  void log(int epoch, double train_loss, double val_macro_f1, double lr);

private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Datasets

/// Lazy labeled image source; images arrive already sized for the model.
class ImageSource {
public:
  virtual ~ImageSource() = default;
  virtual Eigen::Index size() const = 0;
  virtual int label(Eigen::Index i) const = 0;
  virtual ImageU8 image(Eigen::Index i) const = 0;
};

/// In-memory source, used by tests and small corpora.
class VectorImageSource : public ImageSource {
public:
  VectorImageSource(std::vector<ImageU8> images, std::vector<int> labels);
  Eigen::Index size() const override { return static_cast<Eigen::Index>(images_.size()); }
  int label(Eigen::Index i) const override { return labels_[static_cast<size_t>(i)]; }
  ImageU8 image(Eigen::Index i) const override { return images_[static_cast<size_t>(i)]; }

private:
  std::vector<ImageU8> images_;
  std::vector<int> labels_;
};

// ---------------------------------------------------------------------------
// Training loops

struct TrainResult {
  Checkpoint checkpoint;
  double best_val_metric = 0;
  int best_epoch = -1;
  int epochs_run = 0;
  double final_train_loss = 0;
};

/// Backbone + linear head over CLS(+)mean tokens, weak slide labels on
/// patches. Stage `patch_finetuned`.
TrainResult train_patch_level(const ImageSource& train, const ImageSource& val,
                              const BackboneSpec& spec, int input_h, int input_w, int n_classes,
                              const std::string& class_set, const TrainRecipe& recipe,
                              uint64_t seed, const std::filesystem::path& metrics_log);

/// Gated-attention head over frozen features. `k` < 0 trains on full bags;
/// otherwise bags are re-sampled each epoch unless `freeze_bags`.
TrainResult train_mil(const std::vector<FeatureBag>& train_bags,
                      const std::vector<int>& train_labels,
                      const std::vector<FeatureBag>& val_bags, const std::vector<int>& val_labels,
                      int n_classes, const std::string& class_set, const TrainRecipe& recipe,
                      int64_t k, bool freeze_bags, uint64_t seed,
                      const std::filesystem::path& metrics_log,
                      const std::string& stage = "mil_head");

/// End-to-end thumbnail fine-tune, CLS-only, MLP head. `init` must be a
/// patch_finetuned checkpoint; pass nullptr for the binary-fixation variant
/// which starts from the base backbone.
TrainResult train_thumbnail(const ImageSource& train, const ImageSource& val,
                            const Checkpoint* init, const BackboneSpec& spec, int input_h,
                            int input_w, int n_classes, const std::string& class_set,
                            const TrainRecipe& recipe, uint64_t seed,
                            const std::filesystem::path& metrics_log,
                            const std::string& stage = "thumbnail_finetuned");

// ---------------------------------------------------------------------------
// Model assembly from checkpoints

struct PatchModel {
  VisionTransformer<float> backbone;
  nn::Linear<float> head; // 2*embed -> C
  Normalizer normalizer;

  PatchModel(const BackboneSpec& spec, int input_h, int input_w, int n_classes, uint64_t seed);
  nn::VecX<float> logits(const Tensor3<float>& img) const;
  nn::VecX<float> probs(const Tensor3<float>& img) const;
};

/// Rebuilds a patch model at the checkpoint's native grid (or an override).
PatchModel load_patch_model(const Checkpoint& ck, int input_h = 0, int input_w = 0);

/// Rebuilds a thumbnail model, adapting positions to the requested grid.
ThumbnailModel load_thumbnail_model(const Checkpoint& ck, int input_h, int input_w);

void store_thumbnail_model(Checkpoint& ck, ThumbnailModel& model);

MilHead<float> load_mil_head(const Checkpoint& ck);
void store_mil_head(Checkpoint& ck, MilHead<float>& head);

} // namespace stainqc
