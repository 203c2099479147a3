#include "glyphscribe/cnn.hpp"

#include "glyphscribe/error.hpp"
#include "glyphscribe/gardiner.hpp"
#include "glyphscribe/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

namespace glyphscribe::cnn {

double weighted_cross_entropy(const Eigen::MatrixXd &probs, const Eigen::MatrixXd &one_hot,
                              const Eigen::VectorXd &weights) {
  require(probs.rows() == one_hot.rows() && probs.cols() == one_hot.cols(),
          "probability and label matrices differ in shape");
  require(weights.size() == probs.cols(), "class weight vector has the wrong length");
  require(probs.rows() > 0, "empty batch");
  double total = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index c = 0; c < probs.cols(); ++c)
      if (one_hot(i, c) != 0)
        total += weights[c] * one_hot(i, c) * std::log(std::max(probs(i, c), kProbabilityFloor));
  return -total / static_cast<double>(probs.rows());
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd &logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - top).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

LogitLoss weighted_cross_entropy_logits(const Eigen::MatrixXd &logits,
                                        const std::vector<int> &labels,
                                        const Eigen::VectorXd &weights) {
  require(static_cast<Eigen::Index>(labels.size()) == logits.rows(),
          "label count does not match the batch");
  require(weights.size() == logits.cols(), "class weight vector has the wrong length");
  const Eigen::MatrixXd p = softmax(logits);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < logits.cols(), "label out of range");
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  LogitLoss out;
  out.loss = weighted_cross_entropy(p, y, weights);
  out.grad = p - y;
  const double n = static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out.grad.row(static_cast<Eigen::Index>(i)) *= weights[labels[i]] / n;
  return out;
}

void ClassifierConfig::validate() const {
  backbone.validate();
  require(hidden >= 1, "hidden width must be >= 1");
  schedule.validate();
}

void to_json(nlohmann::json &j, const ClassifierConfig &c) {
  j = {{"backbone", c.backbone}, {"hidden", c.hidden}, {"seed", c.seed}, {"schedule", c.schedule}};
}

void from_json(const nlohmann::json &j, ClassifierConfig &c) {
  if (j.contains("backbone"))
    c.backbone = j.at("backbone").get<nn::BackboneConfig>();
  c.hidden = j.value("hidden", c.hidden);
  c.seed = j.value("seed", c.seed);
  if (j.contains("schedule"))
    c.schedule = j.at("schedule").get<train::Schedule>();
}

SoftmaxClassifierModel::SoftmaxClassifierModel(const ClassifierConfig &config,
                                               std::vector<std::string> classes)
    : config_(config), classes_(std::move(classes)) {
  config_.validate();
  require(!classes_.empty(), "classifier needs at least one class");
  std::sort(classes_.begin(), classes_.end());
  require(std::adjacent_find(classes_.begin(), classes_.end()) == classes_.end(),
          "duplicate class in classifier class list");
  for (const auto &c : classes_)
    validate_code(c, "class code");
  std::mt19937_64 rng(config_.seed);
  backbone_ = nn::Backbone(config_.backbone, rng);
  fc1_ = nn::Dense(config_.backbone.output_dim(), config_.hidden, rng, true);
  fc2_ = nn::Dense(config_.hidden, static_cast<int>(classes_.size()), rng, false);
}

nn::Vector SoftmaxClassifierModel::logits(const nn::Matrix &input, Trace *trace) const {
  require(!classes_.empty(), "classifier has an empty class list");
  nn::Vector flat = backbone_.forward(input, trace ? &trace->backbone : nullptr);
  nn::Vector hidden = fc1_.forward(flat).cwiseMax(0.0f);
  nn::Vector out = fc2_.forward(hidden);
  if (trace) {
    trace->flat = std::move(flat);
    trace->hidden = std::move(hidden);
  }
  return out;
}

void SoftmaxClassifierModel::backward(const nn::Vector &grad_logits, const Trace &trace) {
  nn::Vector gh = fc2_.backward(grad_logits, trace.hidden);
  gh = (trace.hidden.array() > 0.0f).select(gh, 0.0f);
  backbone_.backward(fc1_.backward(gh, trace.flat), trace.backbone);
}

std::vector<nn::Parameter *> SoftmaxClassifierModel::parameters() {
  auto p = backbone_.parameters();
  for (auto *d : {&fc1_, &fc2_}) {
    p.push_back(&d->weight);
    p.push_back(&d->bias);
  }
  return p;
}

std::vector<const nn::Parameter *> SoftmaxClassifierModel::parameters() const {
  auto p = backbone_.parameters();
  for (const auto *d : {&fc1_, &fc2_}) {
    p.push_back(&d->weight);
    p.push_back(&d->bias);
  }
  return p;
}

namespace {

struct Encoded {
  std::vector<nn::Matrix> inputs;
  std::vector<int> labels;
};

Encoded encode(const SoftmaxClassifierModel &model,
               const std::vector<corpus::LabeledSample> &samples, const char *what) {
  const auto &classes = model.classes();
  Encoded e;
  for (const auto &s : samples) {
    const auto it = std::lower_bound(classes.begin(), classes.end(), s.code);
    if (it == classes.end() || *it != s.code)
      fail(ErrorCode::InvalidArgument,
           std::string(what) + " label " + s.code + " is not in the model's class list");
    e.inputs.push_back(model.preprocess(s.image));
    e.labels.push_back(static_cast<int>(it - classes.begin()));
  }
  return e;
}

Eigen::VectorXd weight_vector(const SoftmaxClassifierModel &model,
                              const corpus::ClassWeightTable &weights) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(model.classes().size()));
  for (std::size_t c = 0; c < model.classes().size(); ++c) {
    const auto it = weights.find(model.classes()[c]);
    w[static_cast<Eigen::Index>(c)] = it == weights.end() ? 1.0 : it->second;
  }
  return w;
}

} // namespace

ClassifierTrainResult train_classifier(SoftmaxClassifierModel model,
                                       const std::vector<corpus::LabeledSample> &train,
                                       const std::vector<corpus::LabeledSample> &validation,
                                       const corpus::ClassWeightTable &weights) {
  require(!train.empty(), "training set is empty");
  require(!validation.empty(), "validation set is empty");
  const auto &schedule = model.config().schedule;
  const Encoded tr = encode(model, train, "training");
  const Encoded va = encode(model, validation, "validation");
  for (const auto &s : train)
    if (!weights.count(s.code))
      fail(ErrorCode::InvalidArgument, "no class weight for " + s.code);
  const Eigen::VectorXd w = weight_vector(model, weights);
  const auto C = static_cast<Eigen::Index>(model.classes().size());

  std::mt19937_64 rng(schedule.seed);
  auto params = model.parameters();
  std::vector<std::size_t> order(tr.inputs.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(schedule.batch_size);

  auto run_epoch = [&](nn::Adam &adam, int epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const auto n = static_cast<Eigen::Index>(end - start);
      std::vector<SoftmaxClassifierModel::Trace> traces(static_cast<std::size_t>(n));
      Eigen::MatrixXd logits(n, C);
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        const auto row = static_cast<Eigen::Index>(k - start);
        logits.row(row) = model.logits(tr.inputs[order[k]], &traces[k - start]).cast<double>().transpose();
        labels.push_back(tr.labels[order[k]]);
      }
      const LogitLoss l = weighted_cross_entropy_logits(logits, labels, w);
      train::check_finite(l.loss, epoch, start / batch, adam.learning_rate());
      for (Eigen::Index r = 0; r < n; ++r)
        model.backward(l.grad.row(r).transpose().cast<float>(), traces[static_cast<std::size_t>(r)]);
      adam.step(params); // grad already carries 1/N
      total += l.loss * static_cast<double>(n);
    }
    return total / static_cast<double>(order.size());
  };
  auto validate = [&] {
    Eigen::MatrixXd logits(static_cast<Eigen::Index>(va.inputs.size()), C);
    for (std::size_t i = 0; i < va.inputs.size(); ++i)
      logits.row(static_cast<Eigen::Index>(i)) = model.logits(va.inputs[i], nullptr).cast<double>().transpose();
    return weighted_cross_entropy_logits(logits, va.labels, w).loss;
  };

  ClassifierTrainResult result;
  result.history = train::fit(schedule, params, run_epoch, validate);
  if (!nn::all_finite(std::as_const(model).parameters()))
    fail(ErrorCode::Numerical, "classifier weights became non-finite during training");
  result.model = std::move(model);
  return result;
}

ClassifierPrediction predict_input(const SoftmaxClassifierModel &model, const nn::Matrix &input) {
  require(!model.classes().empty(), "classifier has an empty class list");
  const Eigen::MatrixXd p = softmax(model.logits(input, nullptr).cast<double>().transpose());
  ClassifierPrediction out;
  out.distribution.assign(p.data(), p.data() + p.size());
  // classes are sorted, so the first maximum is the lexicographic tie-break
  std::size_t best = 0, second = out.distribution.size() > 1 ? 1 : 0;
  for (std::size_t c = 1; c < out.distribution.size(); ++c)
    if (out.distribution[c] > out.distribution[best])
      best = c;
  for (std::size_t c = 0; c < out.distribution.size(); ++c)
    if (c != best && (second == best || out.distribution[c] > out.distribution[second]))
      second = c;
  out.code = model.classes()[best];
  out.confidence = out.distribution[best];
  if (second != best) {
    out.runner_up = model.classes()[second];
    out.runner_up_confidence = out.distribution[second];
  }
  return out;
}

ClassifierPrediction predict_classifier(const SoftmaxClassifierModel &model, const Image &image) {
  return predict_input(model, model.preprocess(image));
}

void save_classifier(const SoftmaxClassifierModel &model, const std::filesystem::path &path) {
  io::write_json(path, {{"format", "glyphscribe.softmax_cnn"},
                        {"version", 1},
                        {"config", model.config()},
                        {"classes", model.classes()},
                        {"fingerprint", nn::fingerprint(model.parameters())},
                        {"params", nn::params_to_json(model.parameters())}});
}

SoftmaxClassifierModel load_classifier(const std::filesystem::path &path) {
  const auto doc = io::read_json(path);
  io::check_header(doc, "glyphscribe.softmax_cnn", 1, path.string());
  const auto classes = doc.at("classes").get<std::vector<std::string>>();
  if (classes.empty())
    fail(ErrorCode::Format, path.string() + " has an empty class list");
  SoftmaxClassifierModel model(doc.at("config").get<ClassifierConfig>(), classes);
  if (model.classes() != classes)
    fail(ErrorCode::Format, path.string() + " class list is not sorted and unique");
  nn::params_from_json(model.parameters(), doc.at("params"));
  if (nn::fingerprint(std::as_const(model).parameters()) != doc.value("fingerprint", std::string{}))
    fail(ErrorCode::Format, path.string() + ": weight fingerprint does not match its contents");
  return model;
}

} // namespace glyphscribe::cnn
