#include "stainqc/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <utility>

#include <json.hpp>

#include "stainqc/aggregation.hpp"
#include "stainqc/errors.hpp"
#include "stainqc/evaluation.hpp"
#include "stainqc/model_io.hpp"
#include "stainqc/optim.hpp"
#include "stainqc/rng.hpp"

namespace stainqc {

// ---------------------------------------------------------------------------
// Splits

std::vector<std::string> SplitPlan::holdout_ids() const {
  std::vector<std::string> out;
  for (const auto& [label, ids] : holdout) out.insert(out.end(), ids.begin(), ids.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> SplitPlan::train_ids() const {
  std::vector<std::string> out;
  for (const auto& fold : folds) out.insert(out.end(), fold.begin(), fold.end());
  std::sort(out.begin(), out.end());
  return out;
}

SplitPlan make_splits(const std::vector<ManifestEntry>& manifest, uint64_t seed, int n_folds) {
  if (n_folds < 1) throw ArgumentError("make_splits needs n_folds >= 1");
  if (manifest.empty()) throw ManifestError("cannot split an empty manifest");

  SplitPlan plan;
  plan.seed = seed;
  plan.folds.assign(static_cast<size_t>(n_folds), {});

  std::map<std::string, std::vector<std::string>> by_label;
  for (const auto& e : manifest) by_label[e.fine_label].push_back(e.slide_id);

  int class_idx = 0;
  for (auto& [label, ids] : by_label) {
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, "split_" + label));
    rng.shuffle(ids);

    const auto n = static_cast<int64_t>(ids.size());
    const auto n_hold = static_cast<int64_t>(std::llround(0.2 * static_cast<double>(n)));
    auto& hold = plan.holdout[label];
    hold.assign(ids.begin(), ids.begin() + n_hold);
    std::sort(hold.begin(), hold.end());

    const int64_t remaining = n - n_hold;
    if (remaining < n_folds)
      plan.warnings.push_back("class " + label + " has only " + std::to_string(remaining) +
                              " training slides for " + std::to_string(n_folds) +
                              " folds; some folds will not see it");
    // Staggered round-robin keeps per-class fold counts within one of each
    // other without biasing which fold absorbs every class's remainder.
    for (int64_t i = 0; i < remaining; ++i)
      plan.folds[static_cast<size_t>((class_idx + i) % n_folds)].push_back(ids[n_hold + i]);
    ++class_idx;
  }
  for (auto& fold : plan.folds) std::sort(fold.begin(), fold.end());
  return plan;
}

void save_splits(const std::filesystem::path& path, const SplitPlan& plan) {
  nlohmann::json j;
  j["seed"] = plan.seed;
  j["holdout"] = nlohmann::json::object();
  for (const auto& [label, ids] : plan.holdout) j["holdout"][label] = ids;
  j["folds"] = plan.folds;
  j["warnings"] = plan.warnings;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write splits file: " + path.string());
  out << j.dump(2) << "\n";
}

SplitPlan load_splits(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read splits file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed splits file " + path.string() + ": " + e.what());
  }
  SplitPlan plan;
  try {
    plan.seed = j.at("seed").get<uint64_t>();
    for (const auto& [label, ids] : j.at("holdout").items())
      plan.holdout[label] = ids.get<std::vector<std::string>>();
    plan.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
    plan.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("splits file " + path.string() + " is missing fields: " + e.what());
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Recipes

TrainRecipe patch_recipe() {
  TrainRecipe r;
  r.optimizer = {5e-5, 0.01};
  r.batch_size = 256;
  r.max_epochs = 15;
  r.dropout = 0.5;
  r.drop_path = 0.5;
  r.attn_drop = 0.5;
  r.flip_augment = true;
  return r;
}

TrainRecipe mil_recipe() {
  TrainRecipe r;
  r.optimizer = {1e-5, 5e-2};
  r.batch_size = 256;
  r.max_epochs = 15;
  return r;
}

TrainRecipe thumbnail_recipe() {
  TrainRecipe r;
  r.optimizer = {1e-5, 5e-2};
  r.batch_size = 128;
  r.max_epochs = 20;
  r.dropout = 0.3;
  r.drop_path = 0.3;
  r.attn_drop = 0.3;
  return r;
}

bool EarlyStopper::update(double metric) {
  ++epoch_;
  improved_last_ = metric > best_;
  if (improved_last_) {
    best_ = metric;
    best_epoch_ = epoch_;
  }
  if (metric > best_for_patience_ + spec_.min_delta) {
    best_for_patience_ = metric;
    since_improvement_ = 0;
  } else {
    ++since_improvement_;
  }
  return spec_.enabled && since_improvement_ >= spec_.patience &&
         epoch_ - best_epoch_ >= spec_.patience;
}

MetricsLogger::MetricsLogger(const std::filesystem::path& path) : path_(path) {
  if (path_.empty()) return;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open metrics log: " + path_.string());
}

void MetricsLogger::log(int epoch, double train_loss, double val_macro_f1, double lr) {
  if (path_.empty()) return;
  nlohmann::json j{{"epoch", epoch},
                   {"train_loss", train_loss},
                   {"val_macro_f1", val_macro_f1},
                   {"lr", lr}};
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to metrics log: " + path_.string());
  out << j.dump() << "\n";
}

VectorImageSource::VectorImageSource(std::vector<ImageU8> images, std::vector<int> labels)
    : images_(std::move(images)), labels_(std::move(labels)) {
  if (images_.size() != labels_.size())
    throw ArgumentError("image source needs one label per image");
}

// ---------------------------------------------------------------------------
// Shared epoch machinery

namespace {

uint64_t stream_seed(uint64_t seed, std::string_view tag, int epoch, int64_t item) {
  return derive_seed(derive_seed(derive_seed(seed, tag), static_cast<uint64_t>(epoch)),
                     static_cast<uint64_t>(item));
}

std::vector<Eigen::Index> epoch_order(Eigen::Index n, uint64_t seed, int epoch) {
  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  Rng rng(derive_seed(derive_seed(seed, "epoch_order"), static_cast<uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

Tensor3<float> sample_tensor(const ImageSource& src, Eigen::Index idx,
                             const std::array<bool, 2>& flips, const Normalizer& nrm) {
  ImageU8 img = src.image(idx);
  if (flips[0]) img = flip_horizontal(img);
  if (flips[1]) img = flip_vertical(img);
  return normalize_image<float>(img, nrm);
}

/// Runs the shared skeleton: shuffled batches, cosine lr with warmup, epoch
/// metrics, early stopping, and a snapshot of the best weights. run_batch
/// must accumulate mean-of-batch gradients and return the summed loss.
template <class BatchFn, class ValFn, class SnapFn>
void drive_epochs(Eigen::Index n, const TrainRecipe& recipe, uint64_t seed,
                  const std::filesystem::path& metrics_path, nn::AdamW<float>& opt,
                  bool min_batch_two, BatchFn&& run_batch, ValFn&& validate, SnapFn&& snapshot,
                  TrainResult& result) {
  MetricsLogger logger(metrics_path);
  if (recipe.max_epochs <= 0) {
    snapshot();
    return;
  }
  if (recipe.batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (min_batch_two && n < 2)
    throw ArgumentError("this trainer batch-normalizes and needs at least 2 samples");

  std::vector<std::pair<int64_t, int64_t>> ranges;
  for (int64_t b0 = 0; b0 < n; b0 += recipe.batch_size)
    ranges.emplace_back(b0, std::min<int64_t>(n, b0 + recipe.batch_size));
  if (min_batch_two && ranges.size() > 1 && ranges.back().second - ranges.back().first < 2) {
    ranges[ranges.size() - 2].second = ranges.back().second;
    ranges.pop_back();
  }

  const auto total_steps = static_cast<int64_t>(ranges.size()) * recipe.max_epochs;
  const auto warmup = std::max<int64_t>(
      1, std::llround(recipe.warmup_frac * static_cast<double>(total_steps)));
  nn::CosineWarmup sched(recipe.optimizer.lr, std::min(warmup, total_steps), total_steps);
  EarlyStopper stopper(recipe.early_stop);

  int64_t step = 0;
  for (int epoch = 0; epoch < recipe.max_epochs; ++epoch) {
    const std::vector<Eigen::Index> order = epoch_order(n, seed, epoch);
    double loss_sum = 0;
    for (size_t bi = 0; bi < ranges.size(); ++bi) {
      opt.zero_grad();
      opt.set_lr(sched.lr_at(step));
      loss_sum += run_batch(order, ranges[bi].first, ranges[bi].second, epoch,
                            static_cast<int64_t>(bi));
      opt.step();
      ++step;
    }
    const double train_loss = loss_sum / static_cast<double>(n);
    const double val_f1 = validate();
    logger.log(epoch, train_loss, val_f1, sched.lr_at(step - 1));

    result.final_train_loss = train_loss;
    result.epochs_run = epoch + 1;
    const bool stop = stopper.update(val_f1);
    if (stopper.improved_last()) snapshot();
    result.best_val_metric = stopper.best();
    result.best_epoch = stopper.best_epoch();
    if (stop) break;
  }
}

void finish_meta(TrainResult& result, const std::string& stage, const std::string& class_set,
                 int n_classes, uint64_t seed) {
  auto& m = result.checkpoint.meta;
  m["training_stage"] = stage;
  m["class_set"] = class_set;
  m["n_classes"] = n_classes;
  m["seed"] = seed;
  m["best_epoch"] = result.best_epoch;
  m["best_val_macro_f1"] = result.best_val_metric;
  m["epochs_run"] = result.epochs_run;
}

BackboneSpec with_drops(const BackboneSpec& spec, const TrainRecipe& recipe) {
  BackboneSpec s = spec;
  s.dropout = recipe.dropout;
  s.drop_path = recipe.drop_path;
  s.attn_drop = recipe.attn_drop;
  return s;
}

void require_val(const ImageSource& val, const TrainRecipe& recipe) {
  if (recipe.max_epochs > 0 && val.size() == 0)
    throw ArgumentError("early stopping needs a non-empty validation set");
}

} // namespace

// ---------------------------------------------------------------------------
// Patch-level fine-tune

TrainResult train_patch_level(const ImageSource& train, const ImageSource& val,
                              const BackboneSpec& spec, int input_h, int input_w, int n_classes,
                              const std::string& class_set, const TrainRecipe& recipe,
                              uint64_t seed, const std::filesystem::path& metrics_log) {
  if (train.size() == 0) throw ArgumentError("patch training set is empty");
  if (n_classes < 2) throw ArgumentError("classification needs at least 2 classes");
  require_val(val, recipe);

  const BackboneSpec s = with_drops(spec, recipe);
  VisionTransformer<float> vit(s, input_h, input_w, seed);
  nn::Linear<float> head;
  {
    Rng rng(derive_seed(seed, "patch_head"));
    head.init(2 * s.embed_dim, n_classes, rng);
  }
  nn::ParamList<float> params;
  vit.params(params);
  head.params("patch_head", params);
  nn::AdamW<float> opt(params, recipe.optimizer.lr, recipe.optimizer.weight_decay);

  const Normalizer nrm;
  const Eigen::Index e = s.embed_dim;

  auto run_batch = [&](const std::vector<Eigen::Index>& order, int64_t b0, int64_t b1, int epoch,
                       int64_t batch) -> double {
    Rng aug(stream_seed(seed, "augment", epoch, batch));
    Rng drop(stream_seed(seed, "dropout", epoch, batch));
    double sum = 0;
    for (int64_t i = b0; i < b1; ++i) {
      const Eigen::Index idx = order[static_cast<size_t>(i)];
      std::array<bool, 2> flips{false, false};
      if (recipe.flip_augment) {
        flips[0] = aug.below(2) != 0;
        flips[1] = aug.below(2) != 0;
      }
      const Tensor3<float> x = sample_tensor(train, idx, flips, nrm);

      typename VisionTransformer<float>::Cache cache;
      const nn::MatX<float> tokens = vit.forward_tokens_train(x, cache, drop);
      const nn::VecX<float> pooled = vit.pool(tokens, EncodeMode::patch_features);

      typename nn::Linear<float>::Cache hc;
      const nn::MatX<float> logits = head.forward_train(pooled.transpose(), hc);
      nn::VecX<float> dlogits;
      sum += nn::smoothed_ce<float>(logits.row(0).transpose(), train.label(idx),
                                    recipe.label_smoothing, &dlogits);

      const nn::MatX<float> dpooled = head.backward(dlogits.transpose(), hc);
      nn::MatX<float> dtokens = nn::MatX<float>::Zero(tokens.rows(), tokens.cols());
      dtokens.row(0) = dpooled.row(0).head(e);
      const auto t = static_cast<float>(tokens.rows() - 1);
      dtokens.bottomRows(tokens.rows() - 1).rowwise() += (dpooled.row(0).tail(e) / t).eval();
      vit.backward_tokens(dtokens, cache);
    }
    const float inv = 1.0f / static_cast<float>(b1 - b0);
    for (auto& p : params) *p.grad *= inv;
    return sum;
  };

  auto validate = [&]() -> double {
    std::vector<int> pred, truth;
    pred.reserve(static_cast<size_t>(val.size()));
    for (Eigen::Index i = 0; i < val.size(); ++i) {
      const Tensor3<float> x = normalize_image<float>(val.image(i), nrm);
      const nn::VecX<float> f = vit.encode(x, EncodeMode::patch_features);
      const nn::MatX<float> logits = head.forward(f.transpose());
      pred.push_back(argmax_index(logits.row(0).transpose()));
      truth.push_back(val.label(i));
    }
    return macro_f1(pred, truth, n_classes, nullptr);
  };

  TrainResult result;
  auto snapshot = [&]() {
    result.checkpoint.tensors.clear();
    store_backbone(result.checkpoint, vit);
    nn::ParamList<float> hp;
    head.params("patch_head", hp);
    store_params(result.checkpoint, hp);
  };

  drive_epochs(train.size(), recipe, seed, metrics_log, opt, false, run_batch, validate,
               snapshot, result);
  finish_meta(result, "patch_finetuned", class_set, n_classes, seed);
  return result;
}

// ---------------------------------------------------------------------------
// MIL head over frozen features

TrainResult train_mil(const std::vector<FeatureBag>& train_bags,
                      const std::vector<int>& train_labels,
                      const std::vector<FeatureBag>& val_bags, const std::vector<int>& val_labels,
                      int n_classes, const std::string& class_set, const TrainRecipe& recipe,
                      int64_t k, bool freeze_bags, uint64_t seed,
                      const std::filesystem::path& metrics_log, const std::string& stage) {
  if (train_bags.empty()) throw ArgumentError("mil training set is empty");
  if (train_bags.size() != train_labels.size() || val_bags.size() != val_labels.size())
    throw ArgumentError("bag and label counts must match");
  if (recipe.max_epochs > 0 && val_bags.empty())
    throw ArgumentError("early stopping needs a non-empty validation set");

  const Eigen::Index d_in = train_bags[0].features.cols();
  for (const auto& bag : train_bags) {
    if (bag.size() == 0) throw EmptyBagError("training bag " + bag.slide_id + " is empty");
    if (bag.features.cols() != d_in)
      throw ShapeError("bag " + bag.slide_id + " feature dim " +
                       std::to_string(bag.features.cols()) + " does not match " +
                       std::to_string(d_in));
  }

  MilHead<float> head(d_in, n_classes, seed);
  nn::ParamList<float> params;
  head.params(params);
  nn::AdamW<float> opt(params, recipe.optimizer.lr, recipe.optimizer.weight_decay);

  auto run_batch = [&](const std::vector<Eigen::Index>& order, int64_t b0, int64_t b1, int epoch,
                       int64_t) -> double {
    double sum = 0;
    for (int64_t i = b0; i < b1; ++i) {
      const Eigen::Index idx = order[static_cast<size_t>(i)];
      nn::MatX<float> h;
      if (k < 0) {
        h = train_bags[static_cast<size_t>(idx)].features;
      } else {
        // Bags are re-sampled per epoch; freezing pins every epoch to the
        // epoch-0 draw so ablations can isolate the re-sampling effect.
        const uint64_t bag_seed = stream_seed(seed, "bags", freeze_bags ? 0 : epoch, idx);
        h = subsample_bag(train_bags[static_cast<size_t>(idx)], k, bag_seed).features;
      }
      typename MilHead<float>::Cache c;
      const nn::VecX<float> logits = head.logits_train(h, c);
      nn::VecX<float> dlogits;
      sum += nn::smoothed_ce<float>(logits, train_labels[static_cast<size_t>(idx)],
                                    recipe.label_smoothing, &dlogits);
      head.backward(dlogits, c);
    }
    const float inv = 1.0f / static_cast<float>(b1 - b0);
    for (auto& p : params) *p.grad *= inv;
    return sum;
  };

  // Validation always scores full bags: the budget is a training-time
  // efficiency lever, not part of the model.
  auto validate = [&]() -> double {
    std::vector<int> pred, truth;
    pred.reserve(val_bags.size());
    for (size_t i = 0; i < val_bags.size(); ++i) {
      pred.push_back(argmax_index(head.logits(val_bags[i].features)));
      truth.push_back(val_labels[i]);
    }
    return macro_f1(pred, truth, n_classes, nullptr);
  };

  TrainResult result;
  auto snapshot = [&]() {
    result.checkpoint.tensors.clear();
    store_mil_head(result.checkpoint, head);
  };

  drive_epochs(static_cast<Eigen::Index>(train_bags.size()), recipe, seed, metrics_log, opt,
               false, run_batch, validate, snapshot, result);
  finish_meta(result, stage, class_set, n_classes, seed);
  result.checkpoint.meta["budget_k"] = k;
  return result;
}

// ---------------------------------------------------------------------------
// Thumbnail fine-tune

TrainResult train_thumbnail(const ImageSource& train, const ImageSource& val,
                            const Checkpoint* init, const BackboneSpec& spec, int input_h,
                            int input_w, int n_classes, const std::string& class_set,
                            const TrainRecipe& recipe, uint64_t seed,
                            const std::filesystem::path& metrics_log, const std::string& stage) {
  if (train.size() == 0) throw ArgumentError("thumbnail training set is empty");
  if (n_classes < 2) throw ArgumentError("classification needs at least 2 classes");
  require_val(val, recipe);
  if (init) {
    const std::string got =
        init->meta.is_object() ? init->meta.value("training_stage", "") : "";
    if (got != "patch_finetuned")
      throw StageError("thumbnail fine-tune initializes from a patch_finetuned checkpoint, got "
                       "stage '" +
                       got + "'");
  }

  const BackboneSpec s = with_drops(spec, recipe);
  ThumbnailModel model(s, input_h, input_w, n_classes, seed, recipe.dropout);
  if (init) load_backbone(*init, model.backbone);

  nn::ParamList<float> params;
  model.params(params);
  nn::AdamW<float> opt(params, recipe.optimizer.lr, recipe.optimizer.weight_decay);

  const Normalizer nrm;
  const Eigen::Index e = s.embed_dim;

  // Two passes per batch keep only one backbone cache alive at a time: the
  // first collects CLS embeddings, the head trains batched (batch norm), the
  // second replays each forward with identical dropout draws and backprops.
  auto run_batch = [&](const std::vector<Eigen::Index>& order, int64_t b0, int64_t b1, int epoch,
                       int64_t batch) -> double {
    const int64_t bsz = b1 - b0;
    Rng aug(stream_seed(seed, "augment", epoch, batch));
    std::vector<std::array<bool, 2>> flips(static_cast<size_t>(bsz), {false, false});
    if (recipe.flip_augment)
      for (auto& f : flips) {
        f[0] = aug.below(2) != 0;
        f[1] = aug.below(2) != 0;
      }

    nn::MatX<float> emb(bsz, e);
    for (int64_t i = b0; i < b1; ++i) {
      const Tensor3<float> x =
          sample_tensor(train, order[static_cast<size_t>(i)], flips[static_cast<size_t>(i - b0)],
                        nrm);
      typename VisionTransformer<float>::Cache scratch;
      Rng drop(stream_seed(seed, "backbone_drop", epoch, i));
      emb.row(i - b0) = model.backbone.forward_tokens_train(x, scratch, drop).row(0);
    }

    typename ThumbnailHead<float>::Cache hc;
    Rng head_drop(stream_seed(seed, "head_drop", epoch, batch));
    const nn::MatX<float> logits = model.head.forward_train(emb, hc, head_drop);
    nn::MatX<float> dlogits(bsz, n_classes);
    double sum = 0;
    for (int64_t r = 0; r < bsz; ++r) {
      nn::VecX<float> drow;
      sum += nn::smoothed_ce<float>(logits.row(r).transpose(),
                                    train.label(order[static_cast<size_t>(b0 + r)]),
                                    recipe.label_smoothing, &drow);
      dlogits.row(r) = drow.transpose() / static_cast<float>(bsz);
    }
    const nn::MatX<float> demb = model.head.backward(dlogits, hc);

    for (int64_t i = b0; i < b1; ++i) {
      const Tensor3<float> x =
          sample_tensor(train, order[static_cast<size_t>(i)], flips[static_cast<size_t>(i - b0)],
                        nrm);
      typename VisionTransformer<float>::Cache cache;
      Rng drop(stream_seed(seed, "backbone_drop", epoch, i));
      const nn::MatX<float> tokens = model.backbone.forward_tokens_train(x, cache, drop);
      nn::MatX<float> dtokens = nn::MatX<float>::Zero(tokens.rows(), tokens.cols());
      dtokens.row(0) = demb.row(i - b0);
      model.backbone.backward_tokens(dtokens, cache);
    }
    return sum;
  };

  auto validate = [&]() -> double {
    std::vector<int> pred, truth;
    pred.reserve(static_cast<size_t>(val.size()));
    for (Eigen::Index i = 0; i < val.size(); ++i) {
      const Tensor3<float> x = normalize_image<float>(val.image(i), nrm);
      const nn::VecX<float> emb = model.backbone.encode(x, EncodeMode::thumbnail);
      const nn::MatX<float> logits = model.head.forward(emb.transpose());
      pred.push_back(argmax_index(logits.row(0).transpose()));
      truth.push_back(val.label(i));
    }
    return macro_f1(pred, truth, n_classes, nullptr);
  };

  TrainResult result;
  auto snapshot = [&]() {
    result.checkpoint.tensors.clear();
    store_thumbnail_model(result.checkpoint, model);
  };

  drive_epochs(train.size(), recipe, seed, metrics_log, opt, true, run_batch, validate, snapshot,
               result);
  finish_meta(result, stage, class_set, n_classes, seed);
  return result;
}

// ---------------------------------------------------------------------------
// Model assembly

PatchModel::PatchModel(const BackboneSpec& spec, int input_h, int input_w, int n_classes,
                       uint64_t seed)
    : backbone(spec, input_h, input_w, seed) {
  Rng rng(derive_seed(seed, "patch_head"));
  head.init(2 * spec.embed_dim, n_classes, rng);
}

nn::VecX<float> PatchModel::logits(const Tensor3<float>& img) const {
  const nn::VecX<float> f = backbone.encode(img, EncodeMode::patch_features);
  return head.forward(f.transpose()).row(0).transpose();
}

nn::VecX<float> PatchModel::probs(const Tensor3<float>& img) const {
  const nn::VecX<float> l = logits(img);
  nn::VecX<float> p = (l.array() - l.maxCoeff()).exp().matrix();
  p /= p.sum();
  return p;
}

namespace {

int checkpoint_classes(const Checkpoint& ck) {
  if (!ck.meta.contains("n_classes"))
    throw MetadataError("checkpoint metadata is missing n_classes");
  return ck.meta["n_classes"].get<int>();
}

} // namespace

PatchModel load_patch_model(const Checkpoint& ck, int input_h, int input_w) {
  const BackboneSpec spec = backbone_spec_from_meta(ck.meta);
  if (input_h <= 0 || input_w <= 0) {
    const auto& b = ck.meta.at("backbone");
    input_h = b.at("grid_rows").get<int>() * spec.token_patch_size;
    input_w = b.at("grid_cols").get<int>() * spec.token_patch_size;
  }
  PatchModel model(spec, input_h, input_w, checkpoint_classes(ck), 0);
  load_backbone(ck, model.backbone);
  nn::ParamList<float> hp;
  model.head.params("patch_head", hp);
  load_params(ck, hp);
  return model;
}

ThumbnailModel load_thumbnail_model(const Checkpoint& ck, int input_h, int input_w) {
  const BackboneSpec spec = backbone_spec_from_meta(ck.meta);
  ThumbnailModel model(spec, input_h, input_w, checkpoint_classes(ck), 0);
  load_backbone(ck, model.backbone);
  nn::ParamList<float> hp;
  model.head.params(hp);
  load_params(ck, hp);
  std::vector<std::pair<std::string, nn::MatX<float>*>> bufs;
  model.head.buffers(bufs);
  for (auto& [name, mat] : bufs) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw StageError("checkpoint is missing tensor: " + name);
    if (it->second.rows() != mat->rows() || it->second.cols() != mat->cols())
      throw ShapeError("checkpoint tensor " + name + " has the wrong shape");
    *mat = it->second;
  }
  return model;
}

void store_thumbnail_model(Checkpoint& ck, ThumbnailModel& model) {
  store_backbone(ck, model.backbone);
  nn::ParamList<float> hp;
  model.head.params(hp);
  store_params(ck, hp);
  std::vector<std::pair<std::string, nn::MatX<float>*>> bufs;
  model.head.buffers(bufs);
  for (auto& [name, mat] : bufs) ck.tensors[name] = *mat;
  ck.meta["n_classes"] = static_cast<int64_t>(model.head.num_classes());
}

MilHead<float> load_mil_head(const Checkpoint& ck) {
  if (!ck.meta.contains("mil")) throw MetadataError("checkpoint metadata is missing mil dims");
  const auto& m = ck.meta["mil"];
  MilHead<float> head(m.at("d_in").get<Eigen::Index>(), m.at("n_classes").get<Eigen::Index>(),
                      0, m.at("attn_dim").get<Eigen::Index>(),
                      m.at("embed_dim").get<Eigen::Index>(), m.at("hidden").get<Eigen::Index>());
  nn::ParamList<float> params;
  head.params(params);
  load_params(ck, params);
  return head;
}

void store_mil_head(Checkpoint& ck, MilHead<float>& head) {
  nn::ParamList<float> params;
  head.params(params);
  store_params(ck, params);
  ck.meta["mil"] = {{"d_in", head.input_dim()},
                    {"n_classes", head.num_classes()},
                    {"attn_dim", head.attn_dim()},
                    {"embed_dim", head.embed_dim()},
                    {"hidden", head.hidden_dim()}};
}

} // namespace stainqc
