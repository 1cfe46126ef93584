#pragma once

#include <filesystem>
#include <map>

#include <json.hpp>

#include "stainqc/nn.hpp"

namespace stainqc {

/// Flat named-tensor container with a JSON meta header. Tensors are float32
/// on disk, keyed by name in sorted order (so equal content means equal
/// bytes). meta carries {spec, training_stage, class_set, ...}.
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, nn::MatX<float>> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies the registry's current values into the container (casting to f32).
template <class Scalar>
void store_params(Checkpoint& ck, const nn::ParamList<Scalar>& params) {
  for (const auto& p : params) ck.tensors[p.name] = p.value->template cast<float>();
}

/// Loads named tensors back into the registry; unknown or misshapen names
/// are an error so checkpoints and models can never silently drift.
template <class Scalar>
void load_params(const Checkpoint& ck, nn::ParamList<Scalar>& params) {
  for (auto& p : params) {
    auto it = ck.tensors.find(p.name);
    if (it == ck.tensors.end())
      throw StageError("checkpoint is missing tensor: " + p.name);
    if (it->second.rows() != p.value->rows() || it->second.cols() != p.value->cols())
      throw ShapeError("checkpoint tensor " + p.name + " is " +
                       std::to_string(it->second.rows()) + "x" +
                       std::to_string(it->second.cols()) + ", expected " +
                       std::to_string(p.value->rows()) + "x" +
                       std::to_string(p.value->cols()));
    *p.value = it->second.template cast<Scalar>();
  }
}

} // namespace stainqc
