#include "support.hpp"

#include "glyphscribe/cnn.hpp"
#include "glyphscribe/evaluation.hpp"
#include "glyphscribe/synthetic.hpp"

#include <cmath>

using namespace glyphscribe;
using namespace glyphscribe::cnn;

namespace {

Eigen::MatrixXd random_stochastic(std::mt19937_64 &rng, int n, int c) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Eigen::MatrixXd p(n, c);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < c; ++k)
      p(i, k) = u(rng);
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Eigen::MatrixXd one_hot(const std::vector<int> &labels, int c) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), c);
  for (std::size_t i = 0; i < labels.size(); ++i)
    y(static_cast<Eigen::Index>(i), labels[i]) = 1;
  return y;
}

ClassifierConfig small_config() {
  ClassifierConfig c;
  c.backbone.input_size = 16;
  c.backbone.channels = {8, 16};
  c.hidden = 32;
  c.schedule.max_epochs = 3;
  return c;
}

} // namespace

TEST_CASE("weighted_cross_entropy hand cases") {
  Eigen::MatrixXd p(1, 2), y(1, 2);
  p << 1.0, 0.0;
  y << 1.0, 0.0;
  CHECK(weighted_cross_entropy(p, y, Eigen::VectorXd::Ones(2)) == 0.0);

  p << 0.5, 0.5;
  CHECK(std::abs(weighted_cross_entropy(p, y, Eigen::VectorXd::Ones(2)) - std::log(2.0)) < 1e-9);

  Eigen::VectorXd w(2);
  w << 3.0, 0.5;
  CHECK(std::abs(weighted_cross_entropy(p, y, w) - 3.0 * std::log(2.0)) < 1e-9);

  Eigen::MatrixXd p2(2, 3), y2(2, 3);
  p2 << 0.2, 0.3, 0.5, 0.25, 0.25, 0.5;
  y2 << 0, 0, 1, 1, 0, 0;
  Eigen::VectorXd w3(3);
  w3 << 2.0, 1.0, 0.5;
  const double expected = -(0.5 * std::log(0.5) + 2.0 * std::log(0.25)) / 2;
  CHECK(std::abs(weighted_cross_entropy(p2, y2, w3) - expected) < 1e-9);

  p << 0.0, 1.0; // floored at 1e-12
  CHECK(std::abs(weighted_cross_entropy(p, y, Eigen::VectorXd::Ones(2)) + std::log(1e-12)) < 1e-9);

  CHECK_ERROR(weighted_cross_entropy(p2, y, w3), ErrorCode::InvalidArgument);
  CHECK_ERROR(weighted_cross_entropy(p2, y2, w), ErrorCode::InvalidArgument);
}

TEST_CASE("weighted_cross_entropy properties") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + t % 8, c = 2 + t % 5;
    const auto p = random_stochastic(rng, n, c);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i)
      labels.push_back(static_cast<int>(rng() % c));
    const auto y = one_hot(labels, c);

    double plain = 0;
    for (int i = 0; i < n; ++i)
      plain -= std::log(p(i, labels[i]));
    plain /= n;
    const double l1 = weighted_cross_entropy(p, y, Eigen::VectorXd::Ones(c));
    CHECK(std::abs(l1 - plain) < 1e-9);
    CHECK(l1 > 0);

    const double k = scale(rng);
    Eigen::VectorXd w = Eigen::VectorXd::Random(c).array().abs() + 0.1;
    CHECK(weighted_cross_entropy(p, y, k * w) ==
          doctest::Approx(k * weighted_cross_entropy(p, y, w)).epsilon(1e-12));
  }
}

TEST_CASE("logit gradient matches central differences") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01(0.0, 1.5);
  for (int t = 0; t < 100; ++t) {
    const int n = 1 + t % 4, c = 2 + t % 6;
    Eigen::MatrixXd logits(n, c);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k)
        logits(i, k) = n01(rng);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i)
      labels.push_back(static_cast<int>(rng() % c));
    Eigen::VectorXd w = Eigen::VectorXd::Random(c).array().abs() + 0.2;
    const auto r = weighted_cross_entropy_logits(logits, labels, w);
    CHECK(r.loss == doctest::Approx(weighted_cross_entropy(softmax(logits), one_hot(labels, c), w)));
    const double h = 1e-6;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k) {
        Eigen::MatrixXd up = logits, down = logits;
        up(i, k) += h;
        down(i, k) -= h;
        const double numeric = (weighted_cross_entropy_logits(up, labels, w).loss -
                                weighted_cross_entropy_logits(down, labels, w).loss) /
                               (2 * h);
        const double analytic = r.grad(i, k);
        const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
        CHECK((rel < 1e-4 || std::abs(analytic - numeric) < 1e-9));
      }
  }
}

TEST_CASE("softmax rows sum to one and tolerate large logits") {
  Eigen::MatrixXd l(2, 3);
  l << 1000, 1001, 999, -5, 0, 5;
  const auto p = softmax(l);
  for (int i = 0; i < 2; ++i)
    CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.allFinite());
}

TEST_CASE("classifier model shape and prediction contract") {
  SoftmaxClassifierModel m(small_config(), {"B1", "A1", "C1"});
  CHECK(m.classes() == std::vector<std::string>{"A1", "B1", "C1"});
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    const auto img = testing::random_image(16, 16, rng);
    const auto p = predict_classifier(m, img);
    CHECK(p.distribution.size() == 3);
    double s = 0;
    for (double v : p.distribution)
      s += v;
    CHECK(std::abs(s - 1.0) < 1e-6);
    CHECK(p.confidence >= p.runner_up_confidence);
    const auto q = predict_classifier(m, img);
    CHECK(q.distribution == p.distribution);
    CHECK(q.code == p.code);
  }
  CHECK_ERROR(predict_input(m, nn::Matrix::Zero(1, 7)), ErrorCode::InvalidArgument);
  CHECK_ERROR(predict_classifier(SoftmaxClassifierModel{}, Image(16, 16, 1, 0)),
              ErrorCode::InvalidArgument);
  CHECK_ERROR(SoftmaxClassifierModel(small_config(), {}), ErrorCode::InvalidArgument);
  CHECK_ERROR(SoftmaxClassifierModel(small_config(), {"A1", "B1", "A1"}), ErrorCode::InvalidArgument);
}

TEST_CASE("train_classifier on three synthetic classes") {
  synth::GlyphFamily family(3, 21);
  const auto train = synth::make_samples(family, {0, 1, 2}, {50, 50, 50}, 32, 5);
  const auto val = synth::make_samples(family, {0, 1, 2}, {15, 15, 15}, 32, 6, {}, "v");
  auto cfg = small_config();
  cfg.backbone.input_size = 32;
  cfg.schedule.max_epochs = 6;
  std::vector<std::string> classes = {family.code(0), family.code(1), family.code(2)};
  const auto weights = corpus::class_weights(corpus::class_frequencies(train));
  const auto result = train_classifier(SoftmaxClassifierModel(cfg, classes), train, val, weights);

  std::vector<std::string> truth, pred;
  for (const auto &s : val) {
    truth.push_back(s.code);
    pred.push_back(predict_classifier(result.model, s.image).code);
  }
  CHECK(eval::balanced_accuracy(truth, pred) >= 0.9);

  const auto p = predict_classifier(result.model, train[0].image);
  CHECK(p.code == train[0].code);
  CHECK(p.confidence > 1.0 / 3);

  SUBCASE("deterministic") {
    const auto again = train_classifier(SoftmaxClassifierModel(cfg, classes), train, val, weights);
    CHECK(again.history == result.history);
  }
  SUBCASE("labels outside the class list are rejected") {
    auto extra = train;
    extra[0].code = "Z99";
    CHECK_ERROR(train_classifier(SoftmaxClassifierModel(cfg, classes), extra, val, weights),
                ErrorCode::InvalidArgument);
  }
  SUBCASE("persistence") {
    testing::TempDir dir("cnn");
    save_classifier(result.model, dir / "m.json");
    const auto back = load_classifier(dir / "m.json");
    CHECK(back.classes() == result.model.classes());
    CHECK(predict_classifier(back, val[0].image).distribution ==
          predict_classifier(result.model, val[0].image).distribution);
  }
}
