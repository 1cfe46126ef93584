#include "stainqc/benchmark.hpp"

#include <chrono>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "stainqc/features.hpp"
#include "stainqc/segmentation.hpp"

namespace stainqc {

std::string bench_method_name(BenchMethod method) {
  switch (method) {
    case BenchMethod::thumbnail: return "thumbnail";
    case BenchMethod::mil_k20: return "mil_k20";
    case BenchMethod::mil_all: return "mil_all";
  }
  throw ArgumentError("unknown bench method");
}

ThroughputReport time_pipeline(BenchMethod method, const std::filesystem::path& slide_path,
                               const ThumbnailModel* thumbnail_model,
                               const VisionTransformer<float>* backbone,
                               const MilHead<float>* mil_head, const BenchConfig& cfg) {
  if (cfg.repetitions < 1) throw ArgumentError("repetitions must be positive");

  ThroughputReport report;
  report.method = bench_method_name(method);
  report.repetitions = cfg.repetitions;
  report.excluded = {"model_loading", "visualization"};
  report.environment =
      "single-stream cpu; hardware_concurrency=" +
      std::to_string(std::thread::hardware_concurrency());

  const bool is_thumbnail = method == BenchMethod::thumbnail;
  if (is_thumbnail) {
    if (!thumbnail_model)
      throw StageError("thumbnail benchmark needs a loaded thumbnail model");
    if (thumbnail_model->backbone.input_w() != cfg.thumb_width ||
        thumbnail_model->backbone.input_h() != cfg.thumb_height)
      throw StageError("thumbnail model expects " +
                       std::to_string(thumbnail_model->backbone.input_w()) + "x" +
                       std::to_string(thumbnail_model->backbone.input_h()) +
                       " but the benchmark is configured for " +
                       std::to_string(cfg.thumb_width) + "x" +
                       std::to_string(cfg.thumb_height));
    report.included_stages = {"slide_init", "thumbnail_extraction", "preprocess", "forward"};
  } else {
    if (!backbone || !mil_head)
      throw StageError("mil benchmark needs loaded backbone and mil models");
    if (mil_head->input_dim() != backbone->feature_dim(EncodeMode::patch_features))
      throw StageError("mil head input dim " + std::to_string(mil_head->input_dim()) +
                       " does not match backbone feature dim " +
                       std::to_string(backbone->feature_dim(EncodeMode::patch_features)));
    report.included_stages = {"slide_init", "segmentation", "tessellation",
                              "feature_encoding", "aggregation"};
  }

  for (int r = 0; r < cfg.repetitions; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    SlidePyramid slide = open_slide(slide_path);
    if (is_thumbnail) {
      const Thumbnail thumb = extract_thumbnail(slide, cfg.thumb_width, cfg.thumb_height);
      (void)thumbnail_predict(thumb, *thumbnail_model, "fine", "bench");
    } else {
      const Thumbnail thumb = extract_thumbnail(slide, cfg.thumb_width, cfg.thumb_height);
      const TissueMask mask = segment_tissue(thumb);
      const PatchGrid grid = tessellate(slide, mask, cfg.patch_size_px, cfg.patch_mpp);
      FeatureBudget budget;
      budget.k = method == BenchMethod::mil_k20 ? cfg.budget_k : -1;
      budget.seed = derive_seed(cfg.seed, static_cast<uint64_t>(r));
      const FeatureBag bag = extract_features(slide, grid, *backbone, "bench", budget);
      (void)mil_predict(bag, *mil_head, "fine");
    }
    const auto t1 = std::chrono::steady_clock::now();
    report.per_rep_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
  }

  const double total =
      std::accumulate(report.per_rep_seconds.begin(), report.per_rep_seconds.end(), 0.0);
  report.mean_slides_per_second = cfg.repetitions / total;
  return report;
}

namespace {

nlohmann::json report_to_json(const ThroughputReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["repetitions"] = r.repetitions;
  j["per_rep_seconds"] = r.per_rep_seconds;
  j["mean_slides_per_second"] = r.mean_slides_per_second;
  j["included_stages"] = r.included_stages;
  j["excluded"] = r.excluded;
  j["environment"] = r.environment;
  return j;
}

} // namespace

void save_report_json(const std::filesystem::path& path,
                      const std::vector<ThroughputReport>& reports) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports) j.push_back(report_to_json(r));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void save_report_csv(const std::filesystem::path& path,
                     const std::vector<ThroughputReport>& reports) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "method,repetition,seconds,slides_per_second\n";
  for (const auto& r : reports)
    for (size_t i = 0; i < r.per_rep_seconds.size(); ++i)
      out << r.method << ',' << i << ',' << r.per_rep_seconds[i] << ','
          << 1.0 / r.per_rep_seconds[i] << '\n';
}

} // namespace stainqc
