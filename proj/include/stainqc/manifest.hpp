#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace stainqc {

struct ManifestEntry {
  std::string slide_id;
  std::filesystem::path path; // relative paths resolve against the manifest dir
  std::string fine_label;
  std::string split_hint; // optional: holdout | train | (empty)
};

/// CSV columns: slide_id, path, fine_label, split_hint(optional).
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& csv);
void save_manifest(const std::filesystem::path& csv, const std::vector<ManifestEntry>& entries);

/// slide_id -> fine label, for evaluation.
std::map<std::string, std::string> manifest_labels(const std::vector<ManifestEntry>& entries);

} // namespace stainqc
