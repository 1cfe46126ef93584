#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace stainqc {

/// One of the 16 stains (fixation variants of H&E count as stains).
struct StainClass {
  std::string id;
  std::string display_name;
};

/// The 16 fine stain ids, in canonical order. All label indices in the
/// project refer to positions in a ClassSet's `classes` list.
const std::vector<StainClass>& fine_classes();

/// A label space: the fine 16, the merged coarse 14, the H&E fixation pair,
/// or the external TCGA set with its `other` bucket.
class ClassSet {
public:
  static const ClassSet& fine();
  static const ClassSet& coarse();
  static const ClassSet& fixation_binary();
  static const ClassSet& external_tcga();
  static const ClassSet& by_name(std::string_view name);

  const std::string& name() const { return name_; }
  const std::vector<std::string>& classes() const { return classes_; }
  int size() const { return static_cast<int>(classes_.size()); }

  /// Index of `id` within this set; InvalidLabelError if absent.
  int index_of(std::string_view id) const;
  bool contains(std::string_view id) const;

  /// Where each fine class lands in this set (fine index -> set index).
  const std::vector<int>& fine_projection() const { return fine_to_set_; }

private:
  ClassSet(std::string name, std::vector<std::string> classes,
           std::unordered_map<std::string, std::string> merge_map);

  std::string name_;
  std::vector<std::string> classes_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> fine_to_set_;
};

/// Projects a fine label id into `target`. Unknown ids raise
/// InvalidLabelError; labels outside a target with no `other` bucket raise
/// ProjectionError.
std::string project(std::string_view label, const ClassSet& target);

/// Sums fine-class probability mass into `target` buckets. `probs` must have
/// 16 nonnegative entries summing to 1 within 1e-6.
template <class Scalar>
Eigen::Vector<Scalar, Eigen::Dynamic> project_probs(
    const Eigen::Ref<const Eigen::Vector<Scalar, Eigen::Dynamic>>& probs,
    const ClassSet& target);

} // namespace stainqc
