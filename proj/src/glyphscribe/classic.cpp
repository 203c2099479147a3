#include "glyphscribe/classic.hpp"

#include "glyphscribe/error.hpp"
#include "glyphscribe/evaluation.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace glyphscribe::classic {

void to_json(nlohmann::json &j, const FeatureConfig &c) {
  j = {{"image_size", c.image_size},
       {"hog_bins", c.hog.bins},
       {"hog_cell", c.hog.cell},
       {"hog_cells_per_block", c.hog.cells_per_block},
       {"ink_projections", c.ink_projections}};
}

void from_json(const nlohmann::json &j, FeatureConfig &c) {
  c.image_size = j.value("image_size", c.image_size);
  c.hog.bins = j.value("hog_bins", c.hog.bins);
  c.hog.cell = j.value("hog_cell", c.hog.cell);
  c.hog.cells_per_block = j.value("hog_cells_per_block", c.hog.cells_per_block);
  c.ink_projections = j.value("ink_projections", c.ink_projections);
}

namespace {

void normalize_by_max_abs(std::vector<double> &v) {
  double peak = 0;
  for (double x : v)
    peak = std::max(peak, std::abs(x));
  if (peak > 0)
    for (double &x : v)
      x /= peak;
}

} // namespace

std::vector<double> hog_descriptor(const Image &gray, const HogParams &p) {
  require(gray.channels == 1, "HOG expects a single-channel image");
  require(p.bins > 0 && p.cell > 0 && p.cells_per_block > 0, "HOG parameters must be positive");
  const int w = gray.width, h = gray.height;
  if (w % p.cell != 0 || h % p.cell != 0) {
    const int pad_x = (p.cell - w % p.cell) % p.cell;
    const int pad_y = (p.cell - h % p.cell) % p.cell;
    fail(ErrorCode::InvalidArgument,
         "image " + std::to_string(w) + "x" + std::to_string(h) +
             " is not divisible by the HOG cell size " + std::to_string(p.cell) +
             "; pad by " + std::to_string(pad_x) + " column(s) and " +
             std::to_string(pad_y) + " row(s)");
  }
  const int cells_x = w / p.cell, cells_y = h / p.cell;
  require(cells_x >= p.cells_per_block && cells_y >= p.cells_per_block,
          "image too small for one HOG block");

  // Per-cell orientation histograms.
  std::vector<double> hist(static_cast<std::size_t>(cells_x) * cells_y * p.bins, 0.0);
  const double bin_width = 180.0 / p.bins;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // central differences, zero on the border of each axis
      const double gx = (x > 0 && x < w - 1) ? double(gray.at(x + 1, y)) - gray.at(x - 1, y) : 0.0;
      const double gy = (y > 0 && y < h - 1) ? double(gray.at(x, y + 1)) - gray.at(x, y - 1) : 0.0;
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0)
        continue;
      double angle = std::atan2(gy, gx) * 180.0 / M_PI;
      if (angle < 0)
        angle += 180.0;
      if (angle >= 180.0)
        angle -= 180.0;
      const int bin = std::min(p.bins - 1, static_cast<int>(angle / bin_width));
      const std::size_t cell = static_cast<std::size_t>(y / p.cell) * cells_x + x / p.cell;
      hist[cell * p.bins + bin] += mag;
    }
  }

  // Blocks slide one cell at a time; each is L1-sqrt normalised.
  const int blocks_x = cells_x - p.cells_per_block + 1;
  const int blocks_y = cells_y - p.cells_per_block + 1;
  const std::size_t block_len = static_cast<std::size_t>(p.cells_per_block) * p.cells_per_block * p.bins;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(blocks_x) * blocks_y * block_len);
  std::vector<double> block(block_len);
  constexpr double eps = 1e-5;
  for (int by = 0; by < blocks_y; ++by) {
    for (int bx = 0; bx < blocks_x; ++bx) {
      std::size_t k = 0;
      for (int cy = by; cy < by + p.cells_per_block; ++cy)
        for (int cx = bx; cx < bx + p.cells_per_block; ++cx)
          for (int b = 0; b < p.bins; ++b)
            block[k++] = hist[(static_cast<std::size_t>(cy) * cells_x + cx) * p.bins + b];
      const double l1 = std::accumulate(block.begin(), block.end(), 0.0);
      for (double v : block)
        out.push_back(std::sqrt(v / (l1 + eps)));
    }
  }
  normalize_by_max_abs(out);
  return out;
}

Projections projection_features(const Image &gray) {
  require(gray.channels == 1, "projections expect a single-channel image");
  const int w = gray.width, h = gray.height;
  Projections p;
  p.proj_x.assign(w, 0.0);
  p.proj_y.assign(h, 0.0);
  p.diag_main.assign(static_cast<std::size_t>(std::max(0, w + h - 1)), 0.0);
  p.diag_anti.assign(static_cast<std::size_t>(std::max(0, w + h - 1)), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = gray.at(x, y);
      p.proj_x[x] += v;
      p.proj_y[y] += v;
      p.diag_main[x - y + h - 1] += v;
      p.diag_anti[x + y] += v;
    }
  // Diagonals are averaged over their length so that short corner diagonals
  // are comparable with the long central ones.
  for (int k = 0; k < w + h - 1; ++k) {
    const int d = k - (h - 1); // x - y
    const int main_len = std::min(w, h + d) - std::max(0, d);
    const int anti_len = std::min(k, w - 1) - std::max(0, k - (h - 1)) + 1;
    p.diag_main[k] /= main_len;
    p.diag_anti[k] /= anti_len;
  }
  normalize_by_max_abs(p.proj_x);
  normalize_by_max_abs(p.proj_y);
  normalize_by_max_abs(p.diag_main);
  normalize_by_max_abs(p.diag_anti);
  return p;
}

FeatureLayout feature_layout(const FeatureConfig &config) {
  const int s = config.image_size;
  const auto &hp = config.hog;
  const std::size_t cells = static_cast<std::size_t>(s / hp.cell);
  const std::size_t blocks = cells - hp.cells_per_block + 1;
  const std::size_t hog_len = blocks * blocks * hp.cells_per_block * hp.cells_per_block * hp.bins;
  const std::size_t diag = static_cast<std::size_t>(2 * s - 1);
  FeatureLayout layout;
  std::size_t offset = 0;
  for (auto [name, len] : {std::pair<const char *, std::size_t>{"hog", hog_len},
                           {"proj_x", static_cast<std::size_t>(s)},
                           {"proj_y", static_cast<std::size_t>(s)},
                           {"diag_main", diag},
                           {"diag_anti", diag}}) {
    layout.push_back({name, offset, len});
    offset += len;
  }
  return layout;
}

FeatureVector extract_features(const Image &image, const FeatureConfig &config) {
  require(image.width == config.image_size && image.height == config.image_size,
          "feature extraction expects a " + std::to_string(config.image_size) + "x" +
              std::to_string(config.image_size) + " image, got " + std::to_string(image.width) +
              "x" + std::to_string(image.height));
  const Image gray = to_gray(image);
  FeatureVector fv;
  fv.values = hog_descriptor(gray, config.hog);
  Image ink = gray;
  if (config.ink_projections)
    for (auto &v : ink.pixels)
      v = static_cast<std::uint8_t>(255 - v);
  const Projections p = projection_features(ink);
  for (const auto *part : {&p.proj_x, &p.proj_y, &p.diag_main, &p.diag_anti})
    fv.values.insert(fv.values.end(), part->begin(), part->end());
  fv.layout = feature_layout(config);
  return fv;
}

namespace {

double dot(const std::vector<double> &w, const std::vector<double> &x) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    s += w[i] * x[i];
  return s;
}

// Dual coordinate descent for the L1-loss (hinge) linear SVM with per-sample
// upper bounds; the bias is an extra constant feature. Returns (w, b).
std::pair<std::vector<double>, double>
solve_binary(const std::vector<const std::vector<double> *> &x, const std::vector<int> &y,
             const std::vector<double> &upper, const SvmParams &params, std::mt19937_64 &rng) {
  const std::size_t n = x.size();
  const std::size_t dim = x.front()->size();
  std::vector<double> w(dim, 0.0);
  double b = 0;
  std::vector<double> alpha(n, 0.0), qii(n);
  for (std::size_t i = 0; i < n; ++i)
    qii[i] = dot(*x[i], *x[i]) + 1.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int iter = 0; iter < params.max_iterations; ++iter) {
    std::shuffle(order.begin(), order.end(), rng);
    double pg_max = -std::numeric_limits<double>::infinity();
    double pg_min = std::numeric_limits<double>::infinity();
    for (std::size_t i : order) {
      const double g = y[i] * (dot(w, *x[i]) + b) - 1.0;
      double pg = g;
      if (alpha[i] == 0.0)
        pg = std::min(g, 0.0);
      else if (alpha[i] == upper[i])
        pg = std::max(g, 0.0);
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (std::abs(pg) > 1e-12) {
        const double old = alpha[i];
        alpha[i] = std::clamp(old - g / qii[i], 0.0, upper[i]);
        const double delta = (alpha[i] - old) * y[i];
        const auto &xi = *x[i];
        for (std::size_t d = 0; d < dim; ++d)
          w[d] += delta * xi[d];
        b += delta;
      }
    }
    if (pg_max - pg_min < params.tolerance)
      break;
  }
  return {std::move(w), b};
}

LinearClassifierModel fit(const LabeledFeatures &train, const corpus::ClassWeightTable &weights,
                          double c, const SvmParams &params, const FeatureConfig &config) {
  LinearClassifierModel model;
  model.classes = train.labels;
  std::sort(model.classes.begin(), model.classes.end());
  model.classes.erase(std::unique(model.classes.begin(), model.classes.end()), model.classes.end());
  model.features = config;
  model.layout = train.features.front().layout;
  model.c = c;

  std::vector<const std::vector<double> *> x;
  std::vector<double> upper;
  for (std::size_t i = 0; i < train.features.size(); ++i) {
    x.push_back(&train.features[i].values);
    upper.push_back(c * weights.at(train.labels[i]));
  }
  std::mt19937_64 rng(params.seed);
  for (const auto &cls : model.classes) {
    std::vector<int> y;
    for (const auto &label : train.labels)
      y.push_back(label == cls ? 1 : -1);
    auto [w, b] = solve_binary(x, y, upper, params, rng);
    model.weights.push_back(std::move(w));
    model.biases.push_back(b);
  }
  return model;
}

} // namespace

SvmTrainResult train_svm(const LabeledFeatures &train, const corpus::ClassWeightTable &weights,
                         const SvmParams &params, const std::optional<LabeledFeatures> &validation,
                         const FeatureConfig &config) {
  require(train.features.size() == train.labels.size(), "features and labels differ in length");
  require(!train.features.empty(), "no training samples");
  require(!params.c_grid.empty(), "empty regularisation grid");
  const std::size_t dim = train.features.front().values.size();
  for (const auto &f : train.features)
    if (f.values.size() != dim)
      fail(ErrorCode::InvalidArgument, "feature dimensionality mismatch: " +
                                           std::to_string(f.values.size()) + " vs " +
                                           std::to_string(dim));
  std::set<std::string> classes(train.labels.begin(), train.labels.end());
  if (classes.size() < 2)
    fail(ErrorCode::InvalidArgument, "SVM training needs at least two classes");
  for (const auto &c : classes)
    if (!weights.count(c))
      fail(ErrorCode::InvalidArgument, "no class weight for " + c);
  const bool all_identical = std::all_of(train.features.begin(), train.features.end(),
                                         [&](const FeatureVector &f) {
                                           return f.values == train.features.front().values;
                                         });
  if (all_identical)
    fail(ErrorCode::Degenerate,
         "all training feature vectors are identical; no separating direction exists");

  SvmTrainResult result;
  if (!validation || validation->features.empty()) {
    result.model = fit(train, weights, params.c_grid.front(), params, config);
    return result;
  }
  double best = -1;
  for (double c : params.c_grid) {
    auto model = fit(train, weights, c, params, config);
    std::vector<std::string> predicted;
    for (const auto &f : validation->features)
      predicted.push_back(predict_svm(model, f).code);
    const double acc = eval::balanced_accuracy(validation->labels, predicted);
    result.sweep.push_back({c, acc});
    spdlog::debug("svm C={} validation balanced accuracy {:.4f}", c, acc);
    if (acc > best) {
      best = acc;
      result.model = std::move(model);
    }
  }
  return result;
}

SvmPrediction predict_svm(const LinearClassifierModel &model, const FeatureVector &feature) {
  require(!model.classes.empty(), "model has no classes");
  if (feature.values.size() != model.weights.front().size())
    fail(ErrorCode::InvalidArgument,
         "feature dimensionality " + std::to_string(feature.values.size()) +
             " does not match model dimensionality " +
             std::to_string(model.weights.front().size()));
  struct Scored {
    double value;
    const std::string *code;
  };
  auto better = [](const Scored &a, const Scored &b) {
    return a.value > b.value || (a.value == b.value && *a.code < *b.code);
  };
  std::vector<Scored> scores;
  for (std::size_t k = 0; k < model.classes.size(); ++k)
    scores.push_back({dot(model.weights[k], feature.values) + model.biases[k], &model.classes[k]});
  std::sort(scores.begin(), scores.end(), better);
  SvmPrediction p;
  p.code = *scores[0].code;
  p.margin = scores[0].value;
  if (scores.size() > 1) {
    p.runner_up = *scores[1].code;
    p.runner_up_margin = scores[1].value;
  }
  return p;
}

namespace {
constexpr const char *kFormat = "glyphscribe.linear_svm";
constexpr int kVersion = 1;
} // namespace

nlohmann::json model_to_json(const LinearClassifierModel &model) {
  nlohmann::json layout = nlohmann::json::array();
  for (const auto &s : model.layout)
    layout.push_back({{"name", s.name}, {"offset", s.offset}, {"length", s.length}});
  return {{"format", kFormat},     {"version", kVersion},       {"classes", model.classes},
          {"weights", model.weights}, {"biases", model.biases}, {"features", model.features},
          {"layout", layout},       {"c", model.c}};
}

LinearClassifierModel model_from_json(const nlohmann::json &doc) {
  try {
    if (doc.at("format") != kFormat)
      fail(ErrorCode::Format, "not a linear SVM model document");
    if (doc.at("version").get<int>() != kVersion)
      fail(ErrorCode::Format, "unsupported SVM model version");
    LinearClassifierModel m;
    m.classes = doc.at("classes").get<std::vector<std::string>>();
    m.weights = doc.at("weights").get<std::vector<std::vector<double>>>();
    m.biases = doc.at("biases").get<std::vector<double>>();
    m.features = doc.at("features").get<FeatureConfig>();
    for (const auto &s : doc.at("layout"))
      m.layout.push_back({s.at("name"), s.at("offset"), s.at("length")});
    m.c = doc.at("c");
    if (m.weights.size() != m.classes.size() || m.biases.size() != m.classes.size())
      fail(ErrorCode::Format, "SVM model has inconsistent class count");
    return m;
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorCode::Format, std::string("malformed SVM model: ") + e.what());
  }
}

void save_model(const LinearClassifierModel &model, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  out << model_to_json(model).dump() << '\n';
}

LinearClassifierModel load_model(const std::filesystem::path &path,
                                 const std::optional<FeatureConfig> &expected) {
  std::ifstream in(path);
  if (!in)
    fail(ErrorCode::NotFound, "cannot read SVM model " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorCode::Format, path.string() + ": " + e.what());
  }
  auto model = model_from_json(doc);
  if (model.layout != feature_layout(model.features))
    fail(ErrorCode::Conflict, path.string() + ": stored feature layout is inconsistent");
  if (expected && feature_layout(*expected) != model.layout)
    fail(ErrorCode::Conflict,
         path.string() + ": feature layout does not match the extractor configuration");
  return model;
}

} // namespace glyphscribe::classic
