#include "stainqc/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "stainqc/errors.hpp"
#include "stainqc/png_io.hpp"

namespace stainqc {

using nlohmann::json;

namespace {

void fill_metrics(EvalReport& rep, const ClassSet& set) {
  const int c = set.size();
  rep.per_class.resize(static_cast<size_t>(c));
  rep.confusion_norm = Eigen::MatrixXd::Zero(c, c);
  double macro_sum = 0, weighted_sum = 0;
  int64_t macro_n = 0, total = 0;
  for (int i = 0; i < c; ++i) {
    PerClassMetrics& m = rep.per_class[static_cast<size_t>(i)];
    m.class_id = set.classes()[static_cast<size_t>(i)];
    const int64_t tp = rep.confusion(i, i);
    const int64_t row = rep.confusion.row(i).sum();
    const int64_t col = rep.confusion.col(i).sum();
    m.support = row;
    m.precision = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    m.recall = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    m.f1 = (m.precision + m.recall) > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall)
                                        : 0.0;
    if (row > 0) {
      macro_sum += m.f1;
      macro_n++;
      weighted_sum += m.f1 * static_cast<double>(row);
      total += row;
      rep.confusion_norm.row(i) =
          rep.confusion.row(i).cast<double>() / static_cast<double>(row);
    } else {
      rep.warnings.push_back("class " + m.class_id + " has zero support; excluded from macro F1");
    }
  }
  rep.macro_f1 = macro_n > 0 ? macro_sum / static_cast<double>(macro_n) : 0.0;
  rep.weighted_f1 = total > 0 ? weighted_sum / static_cast<double>(total) : 0.0;
  rep.n = rep.confusion.sum();
}

} // namespace

double macro_f1(const std::vector<int>& predicted, const std::vector<int>& truth, int n_classes,
                std::vector<std::string>* warnings) {
  if (predicted.size() != truth.size())
    throw ArgumentError("macro_f1: prediction/label count mismatch");
  Eigen::Matrix<int64_t, Eigen::Dynamic, Eigen::Dynamic> conf =
      Eigen::Matrix<int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(n_classes, n_classes);
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= n_classes || predicted[i] < 0 || predicted[i] >= n_classes)
      throw LabelError("macro_f1: index outside class range");
    conf(truth[i], predicted[i])++;
  }
  double sum = 0;
  int64_t n = 0;
  for (int c = 0; c < n_classes; ++c) {
    const int64_t tp = conf(c, c);
    const int64_t row = conf.row(c).sum();
    const int64_t col = conf.col(c).sum();
    if (row == 0) {
      if (warnings)
        warnings->push_back("class index " + std::to_string(c) + " has zero support");
      continue;
    }
    const double p = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    const double r = static_cast<double>(tp) / static_cast<double>(row);
    sum += (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
    n++;
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

double binary_auroc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size() || scores.empty())
    throw ArgumentError("binary_auroc: bad inputs");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos_ranks = 0;
  int64_t np = 0, nn = 0;
  for (size_t k = 0; k < scores.size(); ++k) {
    if (positive[k]) {
      pos_ranks += rank[k];
      np++;
    } else {
      nn++;
    }
  }
  if (np == 0 || nn == 0) throw ArgumentError("binary_auroc: needs both classes present");
  return (pos_ranks - static_cast<double>(np) * (static_cast<double>(np) + 1) / 2.0) /
         (static_cast<double>(np) * static_cast<double>(nn));
}

EvalReport evaluate(const std::vector<SlidePrediction>& predictions,
                    const std::map<std::string, std::string>& fine_labels,
                    const std::string& class_set) {
  if (predictions.empty()) throw ManifestError("no predictions to evaluate");
  const ClassSet& target = ClassSet::by_name(class_set);
  const int c = target.size();

  EvalReport rep;
  rep.class_set = class_set;
  rep.confusion = Eigen::Matrix<int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(c, c);

  std::vector<int> truths;
  nn::MatX<float> probs(static_cast<Eigen::Index>(predictions.size()), c);
  Eigen::Index row = 0;
  for (const auto& pred : predictions) {
    const auto it = fine_labels.find(pred.slide_id);
    if (it == fine_labels.end())
      throw ManifestError("slide " + pred.slide_id + " has no label in the manifest");
    const int truth = target.index_of(project(it->second, target));

    nn::VecX<float> p;
    if (pred.class_set == target.name()) {
      if (pred.probs.size() != c)
        throw ShapeError("prediction for " + pred.slide_id + " has " +
                         std::to_string(pred.probs.size()) + " probs, expected " +
                         std::to_string(c));
      p = pred.probs;
    } else if (pred.class_set == "fine") {
      p = project_probs<float>(pred.probs, target);
    } else {
      throw ProjectionError("cannot evaluate " + pred.class_set + " predictions on " +
                            class_set);
    }
    const int am = argmax_index(p);
    rep.confusion(truth, am)++;
    truths.push_back(truth);
    probs.row(row++) = p.transpose();
  }
  fill_metrics(rep, target);

  // Macro one-vs-rest AUROC over classes with both positives and negatives.
  double auroc_sum = 0;
  int auroc_n = 0;
  for (int cls = 0; cls < c; ++cls) {
    std::vector<double> scores;
    std::vector<bool> pos;
    int64_t np = 0;
    for (size_t k = 0; k < truths.size(); ++k) {
      scores.push_back(static_cast<double>(probs(static_cast<Eigen::Index>(k), cls)));
      pos.push_back(truths[k] == cls);
      np += truths[k] == cls;
    }
    if (np == 0 || np == static_cast<int64_t>(truths.size())) continue;
    auroc_sum += binary_auroc(scores, pos);
    auroc_n++;
  }
  if (auroc_n > 0) {
    rep.auroc = auroc_sum / auroc_n;
  } else {
    rep.warnings.push_back("auroc undefined: no class has both positives and negatives");
  }
  return rep;
}

EvalReport evaluate_external(const std::vector<SlidePrediction>& predictions,
                             const std::map<std::string, std::string>& labels) {
  if (predictions.empty()) throw ManifestError("no predictions to evaluate");
  for (const auto& [slide, label] : labels)
    if (label != "he_ffpe" && label != "he_fs")
      throw LabelError("external label for " + slide + " must be he_ffpe or he_fs, got " + label);
  return evaluate(predictions, labels, "external_tcga");
}

FoldComparison compare_folds(const std::vector<EvalReport>& a, const std::vector<EvalReport>& b) {
  if (a.size() != b.size() || a.empty())
    throw ArgumentError("compare_folds: fold lists must be equal-length and non-empty");
  FoldComparison cmp;
  for (size_t i = 0; i < a.size(); ++i) cmp.deltas.push_back(a[i].macro_f1 - b[i].macro_f1);
  cmp.mean = std::accumulate(cmp.deltas.begin(), cmp.deltas.end(), 0.0) /
             static_cast<double>(cmp.deltas.size());
  double var = 0;
  for (double d : cmp.deltas) var += (d - cmp.mean) * (d - cmp.mean);
  cmp.stddev = std::sqrt(var / static_cast<double>(cmp.deltas.size()));
  return cmp;
}

void save_report_json(const std::filesystem::path& path, const EvalReport& rep) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  json j;
  j["class_set"] = rep.class_set;
  j["n"] = rep.n;
  j["macro_f1"] = rep.macro_f1;
  j["weighted_f1"] = rep.weighted_f1;
  j["auroc"] = rep.auroc;
  j["warnings"] = rep.warnings;
  json per = json::array();
  for (const auto& m : rep.per_class)
    per.push_back({{"class", m.class_id},
                   {"precision", m.precision},
                   {"recall", m.recall},
                   {"f1", m.f1},
                   {"support", m.support}});
  j["per_class"] = per;
  json conf = json::array();
  for (Eigen::Index r = 0; r < rep.confusion.rows(); ++r) {
    json row_json = json::array();
    for (Eigen::Index cc = 0; cc < rep.confusion.cols(); ++cc)
      row_json.push_back(rep.confusion(r, cc));
    conf.push_back(row_json);
  }
  j["confusion"] = conf;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report to " + path.string());
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// 5x7 bitmap font

namespace {

struct Glyph {
  char ch;
  std::array<uint8_t, 7> rows; // low 5 bits, bit 4 = leftmost
};

const Glyph kFont[] = {
    {' ', {0, 0, 0, 0, 0, 0, 0}},
    {'.', {0, 0, 0, 0, 0, 0x0C, 0x0C}},
    {'-', {0, 0, 0, 0x1F, 0, 0, 0}},
    {'_', {0, 0, 0, 0, 0, 0, 0x1F}},
    {':', {0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {'=', {0, 0, 0x1F, 0, 0x1F, 0, 0}},
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
};

const std::array<uint8_t, 7>* find_glyph(char c) {
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  for (const Glyph& g : kFont)
    if (g.ch == c) return &g.rows;
  return nullptr;
}

} // namespace

int text_width(const std::string& text, int scale) {
  return static_cast<int>(text.size()) * 6 * scale;
}

void draw_text(ImageU8& img, int x, int y, const std::string& text,
               const std::array<uint8_t, 3>& color, int scale) {
  int cx = x;
  for (char ch : text) {
    const auto* rows = find_glyph(ch);
    if (rows) {
      for (int r = 0; r < 7; ++r)
        for (int cbit = 0; cbit < 5; ++cbit) {
          if (((*rows)[static_cast<size_t>(r)] >> (4 - cbit) & 1) == 0) continue;
          for (int sy = 0; sy < scale; ++sy)
            for (int sx = 0; sx < scale; ++sx) {
              const int px = cx + cbit * scale + sx;
              const int py = y + r * scale + sy;
              if (px < 0 || py < 0 || px >= img.width || py >= img.height) continue;
              for (int c = 0; c < 3; ++c) img.at(px, py, c) = color[static_cast<size_t>(c)];
            }
        }
    }
    cx += 6 * scale;
  }
}

void render_confusion_png(const std::filesystem::path& path, const EvalReport& rep) {
  const int c = static_cast<int>(rep.per_class.size());
  const int cell = 34;
  int label_w = 0;
  for (const auto& m : rep.per_class)
    label_w = std::max(label_w, text_width(std::to_string(&m - rep.per_class.data()) + " " +
                                           m.class_id));
  label_w += 8;
  const int top = 16;
  const int w = label_w + c * cell + 4;
  const int h = top + c * cell + 4;
  ImageU8 img(w, h, 3, 255);

  for (int col = 0; col < c; ++col)
    draw_text(img, label_w + col * cell + cell / 2 - text_width(std::to_string(col)) / 2, 4,
              std::to_string(col), {0, 0, 0});
  for (int row = 0; row < c; ++row) {
    const std::string name = std::to_string(row) + " " + rep.per_class[static_cast<size_t>(row)].class_id;
    draw_text(img, 4, top + row * cell + cell / 2 - 3, name, {0, 0, 0});
    for (int col = 0; col < c; ++col) {
      const double v = rep.confusion_norm(row, col);
      const int x0 = label_w + col * cell;
      const int y0 = top + row * cell;
      const uint8_t rr = static_cast<uint8_t>(255 - std::lround(205 * v));
      const uint8_t gg = static_cast<uint8_t>(255 - std::lround(160 * v));
      const uint8_t bb = static_cast<uint8_t>(255 - std::lround(30 * v));
      for (int y = y0; y < y0 + cell; ++y)
        for (int x = x0; x < x0 + cell; ++x) {
          const bool border = x == x0 || y == y0;
          img.at(x, y, 0) = border ? 210 : rr;
          img.at(x, y, 1) = border ? 210 : gg;
          img.at(x, y, 2) = border ? 210 : bb;
        }
      if (v >= 0.01) { // Fig. 2 rule: omit values below 0.01
        char buf[8];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        const std::array<uint8_t, 3> tc =
            v > 0.5 ? std::array<uint8_t, 3>{255, 255, 255} : std::array<uint8_t, 3>{40, 40, 40};
        draw_text(img, x0 + cell / 2 - text_width(buf) / 2, y0 + cell / 2 - 3, buf, tc);
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_png_rgb(path, img);
}

void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, EvalReport>>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write summary to " + path.string());
  out << "name,class_set,n,macro_f1,weighted_f1,auroc\n";
  char buf[64];
  for (const auto& [name, rep] : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f", rep.macro_f1, rep.weighted_f1, rep.auroc);
    out << name << "," << rep.class_set << "," << rep.n << "," << buf << "\n";
  }
}

} // namespace stainqc
