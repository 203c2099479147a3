#pragma once

#include "glyphscribe/corpus.hpp"
#include "glyphscribe/image.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

// Handcrafted features (HOG + projection profiles) and a class-weighted
// one-vs-rest linear SVM.
namespace glyphscribe::classic {

struct HogParams {
  int bins = 12;
  int cell = 5;
  int cells_per_block = 1;

  friend bool operator==(const HogParams &, const HogParams &) = default;
};

struct FeatureConfig {
  int image_size = 100;
  HogParams hog;
  // Projections sum ink (255 - intensity) rather than raw brightness.
  bool ink_projections = true;

  friend bool operator==(const FeatureConfig &, const FeatureConfig &) = default;
};

void to_json(nlohmann::json &j, const FeatureConfig &c);
void from_json(const nlohmann::json &j, FeatureConfig &c);

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const Segment &, const Segment &) = default;
};

using FeatureLayout = std::vector<Segment>;

struct FeatureVector {
  std::vector<double> values;
  FeatureLayout layout;
};

/// Unsigned-orientation HOG with central differences, L1-sqrt block
/// normalisation, then the whole descriptor divided by its max |value|.
std::vector<double> hog_descriptor(const Image &gray, const HogParams &params = {});

struct Projections {
  std::vector<double> proj_x;    // column sums, length W
  std::vector<double> proj_y;    // row sums, length H
  std::vector<double> diag_main; // x - y = k, k = -(H-1) .. W-1
  std::vector<double> diag_anti; // x + y = k, k = 0 .. W+H-2
};

/// Axis sums and per-diagonal means of the given intensities, each vector
/// divided by its own maximum.
Projections projection_features(const Image &gray);

FeatureLayout feature_layout(const FeatureConfig &config);
FeatureVector extract_features(const Image &image, const FeatureConfig &config = {});

struct SvmParams {
  std::vector<double> c_grid = {0.01, 0.1, 1.0, 10.0};
  double tolerance = 0.1;
  int max_iterations = 1000;
  std::uint64_t seed = 1;
};

struct LinearClassifierModel {
  std::vector<std::string> classes; // sorted
  std::vector<std::vector<double>> weights;
  std::vector<double> biases;
  FeatureConfig features;
  FeatureLayout layout;
  double c = 1.0;
};

struct SweepPoint {
  double c = 0;
  double validation_balanced_accuracy = 0;
};

struct SvmTrainResult {
  LinearClassifierModel model;
  std::vector<SweepPoint> sweep;
};

struct LabeledFeatures {
  std::vector<FeatureVector> features;
  std::vector<std::string> labels;
};

/// Trains one model per C in the grid and keeps the one with the best
/// validation balanced accuracy (ties to the smaller C). Without a validation
/// set only the first grid value is trained.
SvmTrainResult train_svm(const LabeledFeatures &train, const corpus::ClassWeightTable &weights,
                         const SvmParams &params,
                         const std::optional<LabeledFeatures> &validation = std::nullopt,
                         const FeatureConfig &config = {});

struct SvmPrediction {
  std::string code;
  double margin = 0;           // winning decision value
  std::string runner_up;
  double runner_up_margin = 0;
};

/// Argmax of decision values; equal values go to the lexicographically
/// smallest code.
SvmPrediction predict_svm(const LinearClassifierModel &model, const FeatureVector &feature);

nlohmann::json model_to_json(const LinearClassifierModel &model);
LinearClassifierModel model_from_json(const nlohmann::json &doc);
void save_model(const LinearClassifierModel &model, const std::filesystem::path &path);
/// Refuses a model whose stored layout does not match `expected`, when given.
LinearClassifierModel load_model(const std::filesystem::path &path,
                                 const std::optional<FeatureConfig> &expected = std::nullopt);

} // namespace glyphscribe::classic
