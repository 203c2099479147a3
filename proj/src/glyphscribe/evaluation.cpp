#include "glyphscribe/evaluation.hpp"

#include "glyphscribe/csv.hpp"
#include "glyphscribe/error.hpp"
#include "glyphscribe/gardiner.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace glyphscribe::eval {

namespace {

void check_labels(const std::vector<std::string> &y_true, const std::vector<std::string> &y_pred) {
  require(y_true.size() == y_pred.size(), "label sequences differ in length");
  require(!y_true.empty(), "cannot evaluate an empty label sequence");
}

} // namespace

double balanced_accuracy(const std::vector<std::string> &y_true,
                         const std::vector<std::string> &y_pred) {
  check_labels(y_true, y_pred);
  std::map<std::string, std::pair<std::size_t, std::size_t>> hits; // correct, support
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    auto &h = hits[y_true[i]];
    ++h.second;
    h.first += y_true[i] == y_pred[i];
  }
  double sum = 0;
  for (const auto &[code, h] : hits)
    sum += static_cast<double>(h.first) / static_cast<double>(h.second);
  return sum / static_cast<double>(hits.size());
}

const ClassMetrics &ClassReport::at(const std::string &code) const {
  for (const auto &c : classes)
    if (c.code == code)
      return c;
  fail(ErrorCode::NotFound, "no class " + code + " in report");
}

ClassReport per_class_report(const std::vector<std::string> &y_true,
                             const std::vector<std::string> &y_pred) {
  check_labels(y_true, y_pred);
  std::set<std::string> codes(y_true.begin(), y_true.end());
  codes.insert(y_pred.begin(), y_pred.end());
  std::map<std::string, std::size_t> tp, predicted, support;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    ++support[y_true[i]];
    ++predicted[y_pred[i]];
    if (y_true[i] == y_pred[i]) {
      ++tp[y_true[i]];
      ++correct;
    }
  }
  ClassReport report;
  report.total = y_true.size();
  double recall_sum = 0, f1_sum = 0;
  std::size_t with_support = 0;
  for (const auto &code : codes) {
    ClassMetrics m;
    m.code = code;
    m.support = support[code];
    const double t = static_cast<double>(tp[code]);
    if (predicted[code] == 0)
      m.precision_undefined = true;
    else
      m.precision = t / static_cast<double>(predicted[code]);
    if (m.support == 0)
      m.recall_undefined = true;
    else
      m.recall = t / static_cast<double>(m.support);
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    if (m.support > 0) {
      recall_sum += m.recall;
      ++with_support;
    }
    f1_sum += m.f1;
    report.classes.push_back(m);
  }
  report.balanced_accuracy = recall_sum / static_cast<double>(with_support);
  report.macro_f1 = f1_sum / static_cast<double>(report.classes.size());
  // single-label multiclass: micro P = micro R = accuracy
  report.micro_f1 = static_cast<double>(correct) / static_cast<double>(report.total);
  return report;
}

Grouping prefix_grouping(const ClassReport &report, bool first_letter_only) {
  Grouping g;
  for (const auto &c : report.classes)
    g[c.code] = code_group(c.code, first_letter_only);
  return g;
}

std::map<std::string, double> group_report(const ClassReport &report, const Grouping &grouping) {
  std::map<std::string, std::vector<const ClassMetrics *>> members;
  for (const auto &c : report.classes) {
    auto it = grouping.find(c.code);
    if (it == grouping.end())
      fail(ErrorCode::InvalidArgument, "code " + c.code + " has no group");
    members[it->second].push_back(&c);
  }
  std::map<std::string, double> out;
  for (const auto &[group, list] : members) {
    if (list.size() == 1) {
      out[group] = list.front()->f1;
      continue;
    }
    double weighted = 0, total = 0;
    for (const auto *m : list) {
      weighted += m->f1 * static_cast<double>(m->support);
      total += static_cast<double>(m->support);
    }
    if (total > 0) {
      out[group] = weighted / total;
    } else {
      double sum = 0;
      for (const auto *m : list)
        sum += m->f1;
      out[group] = sum / static_cast<double>(list.size());
    }
  }
  return out;
}

PrPoint pr_point(const std::vector<ScoredPrediction> &scores,
                 const std::vector<std::string> &y_true, const std::string &code, double tau) {
  std::size_t tp = 0, fp = 0, positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool is_true = y_true[i] == code;
    positives += is_true;
    if (scores[i].code == code && scores[i].confidence >= tau)
      (is_true ? tp : fp) += 1;
  }
  PrPoint p;
  p.threshold = tau;
  p.recall = positives ? static_cast<double>(tp) / static_cast<double>(positives) : 0.0;
  if (tp + fp > 0)
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  return p;
}

OperatingCurves operating_curves(const std::vector<ScoredPrediction> &scores,
                                 const std::vector<std::string> &y_true,
                                 const std::vector<double> &thresholds) {
  require(scores.size() == y_true.size(), "scores and labels differ in length");
  require(!scores.empty(), "cannot build curves from no samples");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    require(thresholds[i] > thresholds[i - 1], "thresholds must be strictly increasing");

  OperatingCurves out;
  const double n = static_cast<double>(scores.size());
  for (double tau : thresholds) {
    std::size_t accepted = 0, correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i].confidence >= tau) {
        ++accepted;
        correct += scores[i].code == y_true[i];
      }
    AccuracyPoint p;
    p.threshold = tau;
    p.coverage = static_cast<double>(accepted) / n;
    if (accepted)
      p.accuracy = static_cast<double>(correct) / static_cast<double>(accepted);
    out.accuracy_vs_threshold.push_back(p);
  }

  const std::set<std::string> classes(y_true.begin(), y_true.end());
  for (const auto &code : classes) {
    std::set<double> own;
    for (const auto &s : scores)
      if (s.code == code)
        own.insert(s.confidence);
    PrCurve curve;
    curve.code = code;
    for (double tau : own)
      curve.points.push_back(pr_point(scores, y_true, code, tau));
    out.per_class.push_back(std::move(curve));
  }

  out.macro.code = "macro";
  for (double tau : thresholds) {
    double recall = 0, precision = 0;
    std::size_t defined = 0;
    for (const auto &code : classes) {
      const PrPoint p = pr_point(scores, y_true, code, tau);
      recall += p.recall;
      if (p.precision) {
        precision += *p.precision;
        ++defined;
      }
    }
    PrPoint m;
    m.threshold = tau;
    m.recall = recall / static_cast<double>(classes.size());
    if (defined)
      m.precision = precision / static_cast<double>(defined);
    out.macro.points.push_back(m);
  }
  return out;
}

std::vector<ClassBlob> class_blobs(const std::vector<std::array<double, 2>> &points,
                                   const std::vector<std::string> &codes) {
  require(points.size() == codes.size(), "points and codes differ in length");
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < codes.size(); ++i)
    members[codes[i]].push_back(i);
  std::vector<ClassBlob> out;
  for (const auto &[code, idx] : members) {
    ClassBlob b;
    b.code = code;
    b.count = idx.size();
    for (auto i : idx) {
      b.mean_x += points[i][0];
      b.mean_y += points[i][1];
    }
    b.mean_x /= static_cast<double>(b.count);
    b.mean_y /= static_cast<double>(b.count);
    if (b.count >= 3) {
      for (auto i : idx) {
        const double dx = points[i][0] - b.mean_x, dy = points[i][1] - b.mean_y;
        b.cov_xx += dx * dx;
        b.cov_xy += dx * dy;
        b.cov_yy += dy * dy;
      }
      const double d = static_cast<double>(b.count - 1);
      b.cov_xx /= d;
      b.cov_xy /= d;
      b.cov_yy /= d;
      // eigen-decomposition of the symmetric 2x2 covariance
      const double tr = b.cov_xx + b.cov_yy;
      const double disc = std::sqrt(std::max(0.0, (b.cov_xx - b.cov_yy) * (b.cov_xx - b.cov_yy) / 4 +
                                                     b.cov_xy * b.cov_xy));
      const double l1 = tr / 2 + disc, l2 = std::max(0.0, tr / 2 - disc);
      b.semi_major = 2 * std::sqrt(l1);
      b.semi_minor = 2 * std::sqrt(l2);
      b.angle = 0.5 * std::atan2(2 * b.cov_xy, b.cov_xx - b.cov_yy);
      b.has_ellipse = true;
    }
    out.push_back(b);
  }
  return out;
}

namespace {

// Row-wise conditional probabilities matching the target perplexity.
std::vector<double> conditional_affinities(const std::vector<double> &dist2, std::size_t n,
                                           double perplexity) {
  std::vector<double> p(n * n, 0.0);
  const double target = std::log(perplexity);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    const double *row = &dist2[i * n];
    for (int it = 0; it < 200; ++it) {
      double sum = 0, weighted = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i)
          continue;
        const double e = std::exp(-beta * row[j]);
        p[i * n + j] = e;
        sum += e;
        weighted += e * row[j];
      }
      if (sum <= 0) {
        // all neighbours underflowed: beta too large
        hi = beta;
        beta = (lo + hi) / 2;
        continue;
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      for (std::size_t j = 0; j < n; ++j)
        p[i * n + j] /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5)
        break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (lo + hi) / 2;
      } else {
        hi = beta;
        beta = (lo + hi) / 2;
      }
    }
  }
  return p;
}

} // namespace

EmbeddingMap embedding_map(const std::vector<std::vector<float>> &embeddings,
                           const std::vector<std::string> &codes, const TsneParams &params) {
  const std::size_t n = embeddings.size();
  require(codes.size() == n, "embeddings and codes differ in length");
  require(params.perplexity > 0, "perplexity must be positive");
  if (static_cast<double>(n) <= 3.0 * params.perplexity)
    fail(ErrorCode::InvalidArgument,
         "t-SNE needs more than 3 * perplexity points (" + std::to_string(n) + " given, perplexity " +
             std::to_string(params.perplexity) + ")");
  const std::size_t dim = embeddings.front().size();

  std::vector<double> dist2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double t = double(embeddings[i][k]) - embeddings[j][k];
        d += t * t;
      }
      dist2[i * n + j] = dist2[j * n + i] = d;
    }
  auto p = conditional_affinities(dist2, n, params.perplexity);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * n), 1e-12);
      p[i * n + j] = p[j * n + i] = s;
    }

  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> gauss(0.0, 1e-4);
  std::vector<double> y(2 * n), velocity(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n);
  for (auto &v : y)
    v = gauss(rng);
  std::vector<double> num(n * n);

  for (int iter = 0; iter < params.iterations; ++iter) {
    const double exaggeration = iter < params.exaggeration_iterations ? params.exaggeration : 1.0;
    const double momentum = iter < params.exaggeration_iterations ? 0.5 : 0.8;
    double qsum = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * n + j] = num[j * n + i] = v;
        qsum += 2 * v;
      }
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j)
          continue;
        const double q = std::max(num[i * n + j] / qsum, 1e-12);
        const double mult = 4.0 * (exaggeration * p[i * n + j] - q) * num[i * n + j];
        grad[2 * i] += mult * (y[2 * i] - y[2 * j]);
        grad[2 * i + 1] += mult * (y[2 * i + 1] - y[2 * j + 1]);
      }
    for (std::size_t k = 0; k < 2 * n; ++k) {
      gains[k] = (grad[k] > 0) != (velocity[k] > 0) ? gains[k] + 0.2 : std::max(0.01, gains[k] * 0.8);
      velocity[k] = momentum * velocity[k] - params.learning_rate * gains[k] * grad[k];
      y[k] += velocity[k];
    }
    // keep the map centred
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
  }

  EmbeddingMap map;
  map.codes = codes;
  for (std::size_t i = 0; i < n; ++i)
    map.points.push_back({y[2 * i], y[2 * i + 1]});
  map.classes = class_blobs(map.points, codes);
  return map;
}

std::string report_csv(const ClassReport &report) {
  std::string out = "code,precision,recall,f1,support,precision_undefined,recall_undefined\n";
  char buf[160];
  for (const auto &c : report.classes) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%zu,%d,%d\n", c.precision, c.recall, c.f1,
                  c.support, int(c.precision_undefined), int(c.recall_undefined));
    out += csv::escape(c.code) + buf;
  }
  return out;
}

nlohmann::json report_json(const ClassReport &report, const OperatingCurves *curves) {
  nlohmann::json j = {{"balanced_accuracy", report.balanced_accuracy},
                      {"macro_f1", report.macro_f1},
                      {"micro_f1", report.micro_f1},
                      {"total", report.total}};
  j["groups"] = group_report(report, prefix_grouping(report));
  j["groups_first_letter"] = group_report(report, prefix_grouping(report, true));
  if (curves) {
    auto opt = [](const std::optional<double> &v) -> nlohmann::json {
      return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    auto pr = [&](const PrCurve &c) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto &p : c.points)
        pts.push_back({{"threshold", p.threshold}, {"recall", p.recall}, {"precision", opt(p.precision)}});
      return nlohmann::json{{"code", c.code}, {"points", pts}};
    };
    nlohmann::json acc = nlohmann::json::array();
    for (const auto &p : curves->accuracy_vs_threshold)
      acc.push_back({{"threshold", p.threshold}, {"accuracy", opt(p.accuracy)}, {"coverage", p.coverage}});
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto &c : curves->per_class)
      per_class.push_back(pr(c));
    j["curves"] = {{"acc_vs_threshold", acc}, {"pr_ovr", per_class}, {"pr_macro", pr(curves->macro)}};
  }
  return j;
}

nlohmann::json map_json(const EmbeddingMap &map) {
  nlohmann::json pts = nlohmann::json::array();
  for (std::size_t i = 0; i < map.points.size(); ++i)
    pts.push_back({{"x", map.points[i][0]}, {"y", map.points[i][1]}, {"code", map.codes[i]}});
  nlohmann::json classes = nlohmann::json::array();
  for (const auto &b : map.classes) {
    nlohmann::json c = {{"code", b.code},     {"count", b.count},   {"mean_x", b.mean_x},
                        {"mean_y", b.mean_y}, {"has_ellipse", b.has_ellipse}};
    if (b.has_ellipse) {
      c["cov"] = {b.cov_xx, b.cov_xy, b.cov_yy};
      c["semi_major"] = b.semi_major;
      c["semi_minor"] = b.semi_minor;
      c["angle"] = b.angle;
    }
    classes.push_back(c);
  }
  return {{"points", pts}, {"classes", classes}};
}

std::string map_svg(const EmbeddingMap &map, int size) {
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto &p : map.points) {
    xmin = std::min(xmin, p[0]);
    xmax = std::max(xmax, p[0]);
    ymin = std::min(ymin, p[1]);
    ymax = std::max(ymax, p[1]);
  }
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-9});
  const double pad = 20, scale = (size - 2 * pad) / span;
  auto sx = [&](double x) { return pad + (x - xmin) * scale; };
  auto sy = [&](double y) { return pad + (y - ymin) * scale; };
  std::map<std::string, std::size_t> index;
  for (const auto &b : map.classes)
    index.emplace(b.code, index.size());
  auto colour = [&](const std::string &code) {
    const double hue = std::fmod(static_cast<double>(index[code]) * 137.508, 360.0);
    char buf[32];
    std::snprintf(buf, sizeof buf, "hsl(%.0f,65%%,45%%)", hue);
    return std::string(buf);
  };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << ' ' << size << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < map.points.size(); ++i)
    svg << "<circle cx=\"" << sx(map.points[i][0]) << "\" cy=\"" << sy(map.points[i][1])
        << "\" r=\"2.5\" fill=\"" << colour(map.codes[i]) << "\" fill-opacity=\"0.7\"/>\n";
  for (const auto &b : map.classes) {
    if (b.has_ellipse)
      svg << "<ellipse cx=\"" << sx(b.mean_x) << "\" cy=\"" << sy(b.mean_y) << "\" rx=\""
          << b.semi_major * scale << "\" ry=\"" << b.semi_minor * scale << "\" transform=\"rotate("
          << b.angle * 180.0 / M_PI << ' ' << sx(b.mean_x) << ' ' << sy(b.mean_y)
          << ")\" fill=\"none\" stroke=\"" << colour(b.code) << "\"/>\n";
    svg << "<text x=\"" << sx(b.mean_x) + 4 << "\" y=\"" << sy(b.mean_y) - 4
        << "\" font-size=\"11\" font-family=\"sans-serif\">" << b.code << "</text>\n"
        << "<path d=\"M" << sx(b.mean_x) - 4 << ' ' << sy(b.mean_y) << "h8M" << sx(b.mean_x) << ' '
        << sy(b.mean_y) - 4 << "v8\" stroke=\"black\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_text(const std::filesystem::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out)
    fail(ErrorCode::Io, "short write to " + path.string());
}

} // namespace glyphscribe::eval
