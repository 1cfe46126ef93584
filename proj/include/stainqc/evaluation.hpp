#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "stainqc/aggregation.hpp"
#include "stainqc/taxonomy.hpp"

namespace stainqc {

struct PerClassMetrics {
  std::string class_id;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  int64_t support = 0;
};

struct EvalReport {
  std::string class_set;
  std::vector<PerClassMetrics> per_class;
  double macro_f1 = 0;    // unweighted mean over classes with support
  double weighted_f1 = 0; // support-weighted mean
  double auroc = 0;       // macro one-vs-rest over valid classes
  Eigen::Matrix<int64_t, Eigen::Dynamic, Eigen::Dynamic> confusion; // rows: truth
  Eigen::MatrixXd confusion_norm;                                   // row-normalized
  int64_t n = 0;
  std::vector<std::string> warnings;
};

/// Macro F1 over hard label pairs; zero-support classes are skipped (and
/// reported through `warnings` when given).
double macro_f1(const std::vector<int>& predicted, const std::vector<int>& truth, int n_classes,
                std::vector<std::string>* warnings = nullptr);

/// Rank-based (Mann-Whitney) AUROC with average ranks on ties.
double binary_auroc(const std::vector<double>& scores, const std::vector<bool>& positive);

/// Labels map fine ids by slide. Predictions carry fine probs (projected
/// internally) or probs already over `class_set`.
EvalReport evaluate(const std::vector<SlidePrediction>& predictions,
                    const std::map<std::string, std::string>& fine_labels,
                    const std::string& class_set);

/// External protocol: 3-way {he_ffpe, he_fs, other}; `other` never appears
/// as a label, only as a prediction bucket.
EvalReport evaluate_external(const std::vector<SlidePrediction>& predictions,
                             const std::map<std::string, std::string>& labels);

struct FoldComparison {
  std::vector<double> deltas; // a - b per fold
  double mean = 0;
  double stddev = 0; // population
};

FoldComparison compare_folds(const std::vector<EvalReport>& a, const std::vector<EvalReport>& b);

void save_report_json(const std::filesystem::path& path, const EvalReport& report);

/// Row-normalized confusion matrix image; cell values below 0.01 are omitted.
void render_confusion_png(const std::filesystem::path& path, const EvalReport& report);

/// One summary row per report, Table-1 style columns.
void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, EvalReport>>& rows);

/// 5x7 bitmap text, used by confusion renders and ablation plots.
void draw_text(ImageU8& img, int x, int y, const std::string& text,
               const std::array<uint8_t, 3>& color, int scale = 1);
int text_width(const std::string& text, int scale = 1);

} // namespace stainqc
