#pragma once

#include "stainqc/checkpoint.hpp"
#include "stainqc/vit.hpp"

namespace stainqc {

/// Records backbone tensors plus the spec/grid metadata needed to reload
/// at a different input resolution.
void store_backbone(Checkpoint& ck, VisionTransformer<float>& vit);

/// Loads backbone tensors; the positional table is bilinearly adapted when
/// the checkpoint was saved at a different token grid.
void load_backbone(const Checkpoint& ck, VisionTransformer<float>& vit);

BackboneSpec backbone_spec_from_meta(const nlohmann::json& meta);

} // namespace stainqc
