#include "stainqc/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "stainqc/errors.hpp"
#include "stainqc/taxonomy.hpp"

namespace stainqc {

namespace fs = std::filesystem;

std::vector<ManifestEntry> load_manifest(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot open manifest " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw ManifestError("manifest " + csv.string() + " is empty");
  if (line.rfind("slide_id,path,fine_label", 0) != 0)
    throw ManifestError("manifest header must start with slide_id,path,fine_label");

  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  const fs::path base = csv.parent_path();
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    ManifestEntry e;
    std::string path_str;
    if (!std::getline(ss, e.slide_id, ',') || !std::getline(ss, path_str, ',') ||
        !std::getline(ss, e.fine_label, ','))
      throw ManifestError("manifest line " + std::to_string(line_no) + " is malformed");
    std::getline(ss, e.split_hint, ',');
    if (!ClassSet::fine().contains(e.fine_label))
      throw ManifestError("manifest line " + std::to_string(line_no) + ": unknown fine label '" +
                          e.fine_label + "'");
    if (!seen.insert(e.slide_id).second)
      throw ManifestError("duplicate slide_id '" + e.slide_id + "' in manifest");
    fs::path p(path_str);
    e.path = p.is_absolute() ? p : base / p;
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_manifest(const fs::path& csv, const std::vector<ManifestEntry>& entries) {
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  std::ofstream out(csv);
  if (!out) throw IoError("cannot write manifest " + csv.string());
  out << "slide_id,path,fine_label,split_hint\n";
  for (const auto& e : entries)
    out << e.slide_id << "," << e.path.generic_string() << "," << e.fine_label << ","
        << e.split_hint << "\n";
  if (!out) throw IoError("short write to " + csv.string());
}

std::map<std::string, std::string> manifest_labels(const std::vector<ManifestEntry>& entries) {
  std::map<std::string, std::string> labels;
  for (const auto& e : entries) labels[e.slide_id] = e.fine_label;
  return labels;
}

} // namespace stainqc
