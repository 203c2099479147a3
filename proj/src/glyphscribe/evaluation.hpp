#pragma once

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace glyphscribe::eval {

/// Mean per-class recall over the classes present in y_true.
double balanced_accuracy(const std::vector<std::string> &y_true,
                         const std::vector<std::string> &y_pred);

struct ClassMetrics {
  std::string code;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t support = 0;
  bool precision_undefined = false; // never predicted
  bool recall_undefined = false;    // never true
};

struct ClassReport {
  std::vector<ClassMetrics> classes; // sorted by code, union of true and predicted
  double balanced_accuracy = 0;
  double macro_f1 = 0;
  double micro_f1 = 0;
  std::size_t total = 0;

  const ClassMetrics &at(const std::string &code) const;
};

ClassReport per_class_report(const std::vector<std::string> &y_true,
                             const std::vector<std::string> &y_pred);

using Grouping = std::map<std::string, std::string>;

/// code -> alphabetic prefix ("Aa1" -> "Aa"), or first letter only.
Grouping prefix_grouping(const ClassReport &report, bool first_letter_only = false);

/// Support-weighted mean F1 per group.
std::map<std::string, double> group_report(const ClassReport &report, const Grouping &grouping);

struct ScoredPrediction {
  std::string code;
  double confidence = 0;
};

struct AccuracyPoint {
  double threshold = 0;
  std::optional<double> accuracy; // empty when nothing is accepted
  double coverage = 0;
};

struct PrPoint {
  double threshold = 0;
  double recall = 0;
  std::optional<double> precision; // empty when nothing is predicted positive
};

struct PrCurve {
  std::string code; // "macro" for the averaged curve
  std::vector<PrPoint> points;
};

struct OperatingCurves {
  std::vector<AccuracyPoint> accuracy_vs_threshold;
  std::vector<PrCurve> per_class; // thresholds: the class's own distinct scores
  PrCurve macro;                  // thresholds: the supplied grid
};

OperatingCurves operating_curves(const std::vector<ScoredPrediction> &scores,
                                 const std::vector<std::string> &y_true,
                                 const std::vector<double> &thresholds);

/// One-vs-rest PR point for `code` at threshold tau.
PrPoint pr_point(const std::vector<ScoredPrediction> &scores,
                 const std::vector<std::string> &y_true, const std::string &code, double tau);

struct ClassBlob {
  std::string code;
  std::size_t count = 0;
  double mean_x = 0, mean_y = 0;
  double cov_xx = 0, cov_xy = 0, cov_yy = 0;
  bool has_ellipse = false; // needs >= 3 points
  double semi_major = 0, semi_minor = 0, angle = 0; // 2-sigma, radians
};

struct EmbeddingMap {
  std::vector<std::array<double, 2>> points;
  std::vector<std::string> codes;
  std::vector<ClassBlob> classes; // sorted by code
};

struct TsneParams {
  double perplexity = 30.0;
  int iterations = 1000;
  std::uint64_t seed = 42;
  double learning_rate = 200.0;
  int exaggeration_iterations = 250;
  double exaggeration = 12.0;
};

/// Exact t-SNE to 2-D plus per-class centroids and covariance ellipses.
EmbeddingMap embedding_map(const std::vector<std::vector<float>> &embeddings,
                           const std::vector<std::string> &codes, const TsneParams &params = {});

/// Per-class statistics for arbitrary 2-D points.
std::vector<ClassBlob> class_blobs(const std::vector<std::array<double, 2>> &points,
                                   const std::vector<std::string> &codes);

// Exports.
std::string report_csv(const ClassReport &report);
nlohmann::json report_json(const ClassReport &report, const OperatingCurves *curves = nullptr);
nlohmann::json map_json(const EmbeddingMap &map);
std::string map_svg(const EmbeddingMap &map, int size = 800);

void write_text(const std::filesystem::path &path, const std::string &text);

} // namespace glyphscribe::eval
