#include "stainqc/model_io.hpp"

#include "stainqc/errors.hpp"

namespace stainqc {

using nlohmann::json;

void store_backbone(Checkpoint& ck, VisionTransformer<float>& vit) {
  nn::ParamList<float> params;
  vit.params(params);
  store_params(ck, params);
  const BackboneSpec& s = vit.spec();
  ck.meta["backbone"] = {{"token_patch_size", s.token_patch_size},
                         {"embed_dim", s.embed_dim},
                         {"depth", s.depth},
                         {"heads", s.heads},
                         {"mlp_ratio", s.mlp_ratio},
                         {"grid_rows", vit.grid_rows()},
                         {"grid_cols", vit.grid_cols()}};
}

BackboneSpec backbone_spec_from_meta(const json& meta) {
  if (!meta.contains("backbone"))
    throw MetadataError("checkpoint has no backbone metadata");
  const json& b = meta.at("backbone");
  BackboneSpec s;
  s.token_patch_size = b.at("token_patch_size").get<int>();
  s.embed_dim = b.at("embed_dim").get<int>();
  s.depth = b.at("depth").get<int>();
  s.heads = b.at("heads").get<int>();
  s.mlp_ratio = b.at("mlp_ratio").get<int>();
  return s;
}

void load_backbone(const Checkpoint& ck, VisionTransformer<float>& vit) {
  const BackboneSpec saved = backbone_spec_from_meta(ck.meta);
  const BackboneSpec& s = vit.spec();
  if (saved.token_patch_size != s.token_patch_size || saved.embed_dim != s.embed_dim ||
      saved.depth != s.depth || saved.heads != s.heads || saved.mlp_ratio != s.mlp_ratio)
    throw ShapeError("checkpoint backbone spec does not match the constructed backbone");

  const json& b = ck.meta.at("backbone");
  const int from_rows = b.at("grid_rows").get<int>();
  const int from_cols = b.at("grid_cols").get<int>();

  nn::ParamList<float> params;
  vit.params(params);
  for (auto& p : params) {
    const auto it = ck.tensors.find(p.name);
    if (it == ck.tensors.end())
      throw StageError("checkpoint is missing tensor " + p.name);
    if (p.name == "backbone.pos" &&
        (from_rows != vit.grid_rows() || from_cols != vit.grid_cols())) {
      *p.value = adapt_positions<float>(it->second, from_rows, from_cols, vit.grid_rows(),
                                        vit.grid_cols());
      continue;
    }
    if (it->second.rows() != p.value->rows() || it->second.cols() != p.value->cols())
      throw ShapeError("checkpoint tensor " + p.name + " has shape " +
                       std::to_string(it->second.rows()) + "x" +
                       std::to_string(it->second.cols()) + ", expected " +
                       std::to_string(p.value->rows()) + "x" +
                       std::to_string(p.value->cols()));
    *p.value = it->second;
  }
}

} // namespace stainqc
