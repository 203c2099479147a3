#pragma once

#include "glyphscribe/corpus.hpp"
#include "glyphscribe/nn.hpp"
#include "glyphscribe/training.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

namespace glyphscribe::cnn {

constexpr double kProbabilityFloor = 1e-12;

/// -(1/N) sum_i sum_c w_c y_ic log(max(p_ic, eps)).
double weighted_cross_entropy(const Eigen::MatrixXd &probs, const Eigen::MatrixXd &one_hot,
                              const Eigen::VectorXd &weights);

/// Row-wise numerically stable softmax.
Eigen::MatrixXd softmax(const Eigen::MatrixXd &logits);

struct LogitLoss {
  double loss = 0;
  Eigen::MatrixXd grad; // dL/dlogits
};

/// Weighted cross entropy of softmax(logits) with its logit gradient
/// (1/N) w_{y_i} (p_i - y_i).
LogitLoss weighted_cross_entropy_logits(const Eigen::MatrixXd &logits,
                                        const std::vector<int> &labels,
                                        const Eigen::VectorXd &weights);

struct ClassifierConfig {
  nn::BackboneConfig backbone;
  int hidden = 512;
  std::uint64_t seed = 11;
  train::Schedule schedule;

  void validate() const;
};

void to_json(nlohmann::json &j, const ClassifierConfig &c);
void from_json(const nlohmann::json &j, ClassifierConfig &c);

/// Backbone -> flatten -> dense(512, ReLU) -> dense(C) -> softmax.
class SoftmaxClassifierModel {
public:
  SoftmaxClassifierModel() = default;
  SoftmaxClassifierModel(const ClassifierConfig &config, std::vector<std::string> classes);

  const ClassifierConfig &config() const { return config_; }
  const std::vector<std::string> &classes() const { return classes_; }
  int input_size() const { return config_.backbone.input_size; }
  nn::Matrix preprocess(const Image &image) const { return nn::to_input(image, input_size()); }

  struct Trace {
    nn::Backbone::Trace backbone;
    nn::Vector flat, hidden;
  };
  nn::Vector logits(const nn::Matrix &input, Trace *trace) const;
  void backward(const nn::Vector &grad_logits, const Trace &trace);

  std::vector<nn::Parameter *> parameters();
  std::vector<const nn::Parameter *> parameters() const;

private:
  ClassifierConfig config_;
  std::vector<std::string> classes_;
  nn::Backbone backbone_;
  nn::Dense fc1_, fc2_;
};

struct ClassifierTrainResult {
  SoftmaxClassifierModel model;
  train::History history;
};

ClassifierTrainResult train_classifier(SoftmaxClassifierModel model,
                                       const std::vector<corpus::LabeledSample> &train,
                                       const std::vector<corpus::LabeledSample> &validation,
                                       const corpus::ClassWeightTable &weights);

struct ClassifierPrediction {
  std::string code;
  double confidence = 0;
  std::vector<double> distribution; // aligned with model.classes()
  std::string runner_up;
  double runner_up_confidence = 0;
};

ClassifierPrediction predict_input(const SoftmaxClassifierModel &model, const nn::Matrix &input);
ClassifierPrediction predict_classifier(const SoftmaxClassifierModel &model, const Image &image);

void save_classifier(const SoftmaxClassifierModel &model, const std::filesystem::path &path);
SoftmaxClassifierModel load_classifier(const std::filesystem::path &path);

} // namespace glyphscribe::cnn
