#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stainqc/aggregation.hpp"
#include "stainqc/thumbnail_classifier.hpp"

namespace stainqc {

enum class BenchMethod { thumbnail, mil_k20, mil_all };

std::string bench_method_name(BenchMethod method);

/// Per-slide wall-clock protocol: repeated measurements from slide init
/// through inference, one-off model loading excluded.
struct ThroughputReport {
  std::string method;
  int repetitions = 0;
  std::vector<double> per_rep_seconds;
  double mean_slides_per_second = 0; // repetitions / sum(seconds)
  std::vector<std::string> included_stages;
  std::vector<std::string> excluded;
  std::string environment;
};

struct BenchConfig {
  int repetitions = 25;
  int patch_size_px = 512;
  double patch_mpp = 0.59;
  int thumb_width = 1792;
  int thumb_height = 896;
  int64_t budget_k = 20; // mil_k20 bag size, single draw
  uint64_t seed = 0;
};

/// Times one full per-slide pipeline with pre-loaded models. thumbnail needs
/// `thumbnail_model`; the mil methods need `backbone` + `mil_head`; a missing
/// or mismatched checkpoint raises StageError. Runs single-stream — the
/// protocol defines per-slide latency, not parallel throughput.
ThroughputReport time_pipeline(BenchMethod method, const std::filesystem::path& slide_path,
                               const ThumbnailModel* thumbnail_model,
                               const VisionTransformer<float>* backbone,
                               const MilHead<float>* mil_head, const BenchConfig& cfg = {});

void save_report_json(const std::filesystem::path& path,
                      const std::vector<ThroughputReport>& reports);

/// One row per repetition: method,repetition,seconds,slides_per_second.
void save_report_csv(const std::filesystem::path& path,
                     const std::vector<ThroughputReport>& reports);

} // namespace stainqc
