#include "stainqc/taxonomy.hpp"

#include <cmath>

#include "stainqc/errors.hpp"

namespace stainqc {

const std::vector<StainClass>& fine_classes() {
  static const std::vector<StainClass> classes = {
      {"alcian_blue", "Alcian Blue"},
      {"alcian_blue_pas", "Alcian Blue PAS"},
      {"prussian_blue", "Prussian Blue"},
      {"giemsa", "Giemsa"},
      {"gms", "GMS"},
      {"congo_red", "Congo Red"},
      {"von_kossa", "Von Kossa"},
      {"rhodanine", "Rhodanine"},
      {"pas", "PAS"},
      {"pas_d", "PAS-D"},
      {"reticulin", "Reticulin"},
      {"van_gieson", "Van Gieson"},
      {"warthin_starry", "Warthin-Starry"},
      {"ziehl_neelsen", "Ziehl-Neelsen"},
      {"he_ffpe", "H&E (FFPE)"},
      {"he_fs", "H&E (frozen section)"},
  };
  return classes;
}

ClassSet::ClassSet(std::string name, std::vector<std::string> classes,
                   std::unordered_map<std::string, std::string> merge_map)
    : name_(std::move(name)), classes_(std::move(classes)) {
  for (int i = 0; i < static_cast<int>(classes_.size()); ++i) index_[classes_[i]] = i;
  const bool has_other = index_.count("other") != 0;
  fine_to_set_.reserve(fine_classes().size());
  for (const StainClass& sc : fine_classes()) {
    auto merged = merge_map.find(sc.id);
    const std::string& id = merged == merge_map.end() ? sc.id : merged->second;
    auto it = index_.find(id);
    if (it != index_.end()) {
      fine_to_set_.push_back(it->second);
    } else if (has_other) {
      fine_to_set_.push_back(index_.at("other"));
    } else {
      fine_to_set_.push_back(-1);
    }
  }
}

const ClassSet& ClassSet::fine() {
  static const ClassSet set = [] {
    std::vector<std::string> ids;
    for (const StainClass& sc : fine_classes()) ids.push_back(sc.id);
    return ClassSet("fine", std::move(ids), {});
  }();
  return set;
}

const ClassSet& ClassSet::coarse() {
  // Merges the two confusable pairs the paper collapses: Alcian Blue with
  // Alcian Blue PAS, and PAS with PAS-D. Identity elsewhere.
  static const ClassSet set = [] {
    std::unordered_map<std::string, std::string> merge = {
        {"alcian_blue", "alcian_blue_group"},
        {"alcian_blue_pas", "alcian_blue_group"},
        {"pas", "pas_group"},
        {"pas_d", "pas_group"},
    };
    std::vector<std::string> ids;
    for (const StainClass& sc : fine_classes()) {
      auto it = merge.find(sc.id);
      const std::string& id = it == merge.end() ? sc.id : it->second;
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
    return ClassSet("coarse", std::move(ids), std::move(merge));
  }();
  return set;
}

const ClassSet& ClassSet::fixation_binary() {
  static const ClassSet set("fixation_binary", {"he_ffpe", "he_fs"}, {});
  return set;
}

const ClassSet& ClassSet::external_tcga() {
  static const ClassSet set("external_tcga", {"he_ffpe", "he_fs", "other"}, {});
  return set;
}

const ClassSet& ClassSet::by_name(std::string_view name) {
  if (name == "fine") return fine();
  if (name == "coarse") return coarse();
  if (name == "fixation_binary") return fixation_binary();
  if (name == "external_tcga") return external_tcga();
  throw ArgumentError("unknown class set: " + std::string(name));
}

int ClassSet::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end())
    throw InvalidLabelError("label '" + std::string(id) + "' is not in class set " + name_);
  return it->second;
}

bool ClassSet::contains(std::string_view id) const {
  return index_.count(std::string(id)) != 0;
}

std::string project(std::string_view label, const ClassSet& target) {
  const int fine_idx = ClassSet::fine().index_of(label); // validates the id
  const int t = target.fine_projection()[fine_idx];
  if (t < 0)
    throw ProjectionError("label '" + std::string(label) + "' has no bucket in class set " +
                          target.name() + " (and the set has no 'other')");
  return target.classes()[t];
}

template <class Scalar>
Eigen::Vector<Scalar, Eigen::Dynamic> project_probs(
    const Eigen::Ref<const Eigen::Vector<Scalar, Eigen::Dynamic>>& probs,
    const ClassSet& target) {
  const int n_fine = static_cast<int>(fine_classes().size());
  if (probs.size() != n_fine)
    throw InvalidDistributionError("project_probs: expected 16 entries, got " +
                                   std::to_string(probs.size()));
  Scalar total = 0;
  for (int i = 0; i < n_fine; ++i) {
    if (probs[i] < Scalar(0))
      throw InvalidDistributionError("project_probs: negative probability");
    total += probs[i];
  }
  if (std::abs(static_cast<double>(total) - 1.0) > 1e-6)
    throw InvalidDistributionError("project_probs: probabilities sum to " +
                                   std::to_string(static_cast<double>(total)));

  Eigen::Vector<Scalar, Eigen::Dynamic> out =
      Eigen::Vector<Scalar, Eigen::Dynamic>::Zero(target.size());
  for (int i = 0; i < n_fine; ++i) {
    const int t = target.fine_projection()[i];
    if (t < 0)
      throw ProjectionError("class set " + target.name() +
                            " cannot absorb all fine classes");
    out[t] += probs[i];
  }
  return out;
}

template Eigen::VectorXf project_probs<float>(
    const Eigen::Ref<const Eigen::VectorXf>&, const ClassSet&);
template Eigen::VectorXd project_probs<double>(
    const Eigen::Ref<const Eigen::VectorXd>&, const ClassSet&);

} // namespace stainqc
