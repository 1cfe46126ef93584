#include "stainqc/aggregation.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace stainqc {

using nlohmann::json;

int argmax_index(const nn::VecX<float>& probs) {
  int best = 0;
  for (int i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

namespace {

nn::VecX<float> softmax(const nn::VecX<float>& logits) {
  const float m = logits.maxCoeff();
  nn::VecX<float> p = (logits.array() - m).exp().matrix();
  p /= p.sum();
  return p;
}

void require_distribution_rows(const nn::MatX<float>& probs) {
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (probs.row(i).minCoeff() < -1e-6f || std::abs(probs.row(i).sum() - 1.0f) > 1e-4f)
      throw InvalidDistributionError("patch_probs row " + std::to_string(i) +
                                     " is not a probability distribution");
  }
}

} // namespace

SlidePrediction mil_predict(const FeatureBag& bag, const MilHead<float>& head,
                            const std::string& class_set) {
  if (bag.size() == 0) throw EmptyBagError("mil_predict on an empty bag: " + bag.slide_id);
  SlidePrediction pred;
  pred.slide_id = bag.slide_id;
  pred.method = "mil";
  pred.class_set = class_set;
  nn::VecX<float> attn;
  pred.probs = softmax(head.logits(bag.features, &attn));
  pred.attention = attn;
  pred.argmax = argmax_index(pred.probs);
  return pred;
}

SlidePrediction vote_predict(const nn::MatX<float>& patch_probs,
                             const std::vector<std::vector<int64_t>>* round_subsets) {
  if (patch_probs.rows() == 0) throw EmptyBagError("vote_predict over zero patches");
  require_distribution_rows(patch_probs);

  SlidePrediction pred;
  pred.method = "voting";
  pred.patch_votes = patch_probs;
  if (round_subsets == nullptr) {
    pred.probs = patch_probs.colwise().mean().transpose();
  } else {
    if (round_subsets->empty()) throw ArgumentError("vote_predict with zero rounds");
    nn::VecX<float> acc = nn::VecX<float>::Zero(patch_probs.cols());
    for (const auto& subset : *round_subsets) {
      if (subset.empty()) throw EmptyBagError("vote_predict round with no patches");
      nn::VecX<float> round_mean = nn::VecX<float>::Zero(patch_probs.cols());
      for (int64_t idx : subset) {
        if (idx < 0 || idx >= patch_probs.rows())
          throw BoundsError("vote round index " + std::to_string(idx) + " out of range");
        round_mean += patch_probs.row(idx).transpose();
      }
      acc += round_mean / static_cast<float>(subset.size());
    }
    pred.probs = acc / static_cast<float>(round_subsets->size());
  }
  pred.argmax = argmax_index(pred.probs);
  return pred;
}

void save_predictions(const std::filesystem::path& path,
                      const std::vector<SlidePrediction>& preds) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write predictions to " + path.string());
  for (const auto& p : preds) {
    json line;
    line["slide_id"] = p.slide_id;
    line["method"] = p.method;
    line["class_set"] = p.class_set;
    line["probs"] = std::vector<float>(p.probs.data(), p.probs.data() + p.probs.size());
    line["argmax"] = p.argmax;
    if (!p.attention_path.empty()) line["attention_path"] = p.attention_path;
    out << line.dump() << "\n";
  }
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<SlidePrediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing predictions file " + path.string());
  std::vector<SlidePrediction> preds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    SlidePrediction p;
    p.slide_id = j.at("slide_id").get<std::string>();
    p.method = j.at("method").get<std::string>();
    p.class_set = j.at("class_set").get<std::string>();
    const auto probs = j.at("probs").get<std::vector<float>>();
    p.probs = Eigen::Map<const nn::VecX<float>>(probs.data(),
                                                static_cast<Eigen::Index>(probs.size()));
    p.argmax = j.at("argmax").get<int>();
    if (j.contains("attention_path")) p.attention_path = j.at("attention_path").get<std::string>();
    preds.push_back(std::move(p));
  }
  return preds;
}

} // namespace stainqc
