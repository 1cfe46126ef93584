#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "stainqc/aggregation.hpp"
#include "stainqc/features.hpp"
#include "stainqc/nn.hpp"
#include "stainqc/slide.hpp"
#include "stainqc/taxonomy.hpp"
#include "stainqc/thumbnail_classifier.hpp"

namespace stainqc {

/// One attribution map over a thumbnail. `heat` lives in thumbnail pixel
/// space, max-normalized to [0,1] (an all-zero field stays zero).
struct HeatmapOverlay {
  ImageU8 base;         // thumbnail RGB
  nn::MatX<float> heat; // height x width in [0,1]
  std::string kind;     // gradcam | attention | votes
  std::string legend;
  std::string target_class;

  nn::MatX<float> token_heat;  // gradcam: pre-upsample token grid
  Eigen::MatrixXi pixel_class; // votes: argmax class per pixel, -1 = none
  double splat_mass = 0;       // attention: total mass before normalization
  std::map<std::string, double> proportions; // votes: argmax share per class
};

/// Grad-CAM over the thumbnail ViT. Activations and target-logit gradients
/// are read at the last block's input (the standard ViT target layer; the
/// CLS row is excluded — final-norm tokens carry no gradient there), channel
/// weights are token-averaged gradients. `target_class` < 0 targets the
/// predicted class. Exclusive model access: parameter gradient buffers are
/// scratch during the call and re-zeroed before returning.
HeatmapOverlay gradcam_thumbnail(ThumbnailModel& model, const Thumbnail& thumb,
                                 const ClassSet& classes, int target_class = -1);

/// Splats each patch's attention uniformly over its footprint in thumbnail
/// space. Total splatted mass equals the attention sum (= 1) before
/// max-normalization; footprints cannot overlap (grid stride = patch span).
HeatmapOverlay attention_overlay(const FeatureBag& bag, const SlidePrediction& prediction,
                                 const Thumbnail& thumb, int64_t slide_w0, int64_t slide_h0,
                                 int patch_size_px);

/// Patch-level prediction map: each footprint takes its argmax class and the
/// heat carries the winning probability. Proportions count argmax shares.
HeatmapOverlay vote_map(const nn::MatX<float>& patch_votes,
                        const Eigen::Matrix<int32_t, Eigen::Dynamic, 2, Eigen::RowMajor>& coords,
                        double target_mpp, const Thumbnail& thumb, int64_t slide_w0,
                        int64_t slide_h0, int patch_size_px, const ClassSet& classes);

/// Blends the map onto its base thumbnail and writes
/// maps/<slide_id>/<kind>.png plus a JSON sidecar
/// {kind, target_class, proportions?}. Returns the PNG path.
std::filesystem::path write_overlay(const HeatmapOverlay& overlay,
                                    const std::filesystem::path& maps_root,
                                    const std::string& slide_id);

} // namespace stainqc
