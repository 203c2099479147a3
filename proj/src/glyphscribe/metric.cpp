#include "glyphscribe/metric.hpp"

#include "glyphscribe/csv.hpp"
#include "glyphscribe/error.hpp"
#include "glyphscribe/gardiner.hpp"
#include "glyphscribe/io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace glyphscribe::metric {

double contrastive_loss(double s, int y, double margin) {
  if (y == 0)
    return (1.0 - s) * (1.0 - s);
  const double over = std::max(s - margin, 0.0);
  return over * over;
}

PairGradient cosine_contrastive(const std::vector<double> &a, const std::vector<double> &b, int y,
                                double margin) {
  require(a.size() == b.size() && !a.empty(), "pair vectors must have equal nonzero length");
  double dot = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  require(na > 0 && nb > 0, "cannot take the cosine of a zero vector", ErrorCode::Numerical);
  PairGradient out;
  const double s = dot / (na * nb);
  out.similarity = s;
  out.loss = contrastive_loss(s, y, margin);
  const double dlds = y == 0 ? -2.0 * (1.0 - s) : (s > margin ? 2.0 * (s - margin) : 0.0);
  out.grad_a.resize(a.size());
  out.grad_b.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.grad_a[i] = dlds * (b[i] / (na * nb) - s * a[i] / aa);
    out.grad_b[i] = dlds * (a[i] / (na * nb) - s * b[i] / bb);
  }
  return out;
}

void AugmentConfig::validate() const {
  require(probability >= 0 && probability <= 1, "augment probability must be in [0, 1]");
  require(mirror_axis == MirrorAxis::Horizontal,
          "only horizontal-axis mirroring (left-right flip) is allowed; vertical flips would "
          "change sign identity");
  require(rotation_degrees >= 0 && rotation_degrees <= 180, "rotation bound must be in [0, 180]");
  require(shift_fraction >= 0 && shift_fraction < 0.5, "shift fraction must be in [0, 0.5)");
  require(band_max_fraction >= 0 && band_max_fraction < 0.5, "band fraction must be in [0, 0.5)");
  require(occlusion_max_radius >= 0 && occlusion_max_radius < 0.5,
          "occlusion radius must be in [0, 0.5)");
  require(max_occlusions >= 1, "max_occlusions must be >= 1");
}

void MetricTrainConfig::validate() const {
  require(margin >= 0 && margin < 1, "margin must be in [0, 1)");
  augment.validate();
  schedule.validate();
  require(pairs_per_epoch >= 1, "pairs_per_epoch must be >= 1");
  require(validation_pairs >= 1, "validation_pairs must be >= 1");
  require(positive_fraction >= 0 && positive_fraction <= 1, "positive_fraction must be in [0, 1]");
}

void to_json(nlohmann::json &j, const MetricTrainConfig &c) {
  j = {{"margin", c.margin},
       {"augment",
        {{"probability", c.augment.probability},
         {"rotation_degrees", c.augment.rotation_degrees},
         {"shift_fraction", c.augment.shift_fraction},
         {"mirror_axis", c.augment.mirror_axis == MirrorAxis::Horizontal ? "horizontal" : "vertical"},
         {"band_max_fraction", c.augment.band_max_fraction},
         {"occlusion_max_radius", c.augment.occlusion_max_radius},
         {"max_occlusions", c.augment.max_occlusions}}},
       {"schedule", c.schedule},
       {"pairs_per_epoch", c.pairs_per_epoch},
       {"validation_pairs", c.validation_pairs},
       {"positive_fraction", c.positive_fraction}};
}

void from_json(const nlohmann::json &j, MetricTrainConfig &c) {
  c.margin = j.value("margin", c.margin);
  if (j.contains("augment")) {
    const auto &a = j.at("augment");
    auto &ac = c.augment;
    ac.probability = a.value("probability", ac.probability);
    ac.rotation_degrees = a.value("rotation_degrees", ac.rotation_degrees);
    ac.shift_fraction = a.value("shift_fraction", ac.shift_fraction);
    const std::string axis = a.value("mirror_axis", std::string("horizontal"));
    if (axis == "horizontal")
      ac.mirror_axis = MirrorAxis::Horizontal;
    else if (axis == "vertical")
      ac.mirror_axis = MirrorAxis::Vertical; // rejected by validate()
    else
      fail(ErrorCode::InvalidArgument, "unknown mirror axis '" + axis + "'");
    ac.band_max_fraction = a.value("band_max_fraction", ac.band_max_fraction);
    ac.occlusion_max_radius = a.value("occlusion_max_radius", ac.occlusion_max_radius);
    ac.max_occlusions = a.value("max_occlusions", ac.max_occlusions);
  }
  if (j.contains("schedule"))
    c.schedule = j.at("schedule").get<train::Schedule>();
  c.pairs_per_epoch = j.value("pairs_per_epoch", c.pairs_per_epoch);
  c.validation_pairs = j.value("validation_pairs", c.validation_pairs);
  c.positive_fraction = j.value("positive_fraction", c.positive_fraction);
}

namespace {

void fill_pixel(Image &img, int x, int y, std::uint8_t v) {
  for (int c = 0; c < img.channels; ++c)
    img.at(x, y, c) = v;
}

} // namespace

Image augment(const Image &image, const AugmentConfig &config, std::mt19937_64 &rng) {
  config.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (config.probability <= 0 || unit(rng) >= config.probability)
    return image;

  // bits: rotation, shift, mirror, band, occlusion; never empty
  const int ops = std::uniform_int_distribution<int>(1, 31)(rng);
  const int w = image.width, h = image.height;
  const int side = std::min(w, h);
  Image out = image;

  double angle = 0, dx = 0, dy = 0;
  if (ops & 1)
    angle = (2 * unit(rng) - 1) * config.rotation_degrees;
  if (ops & 2) {
    dx = (2 * unit(rng) - 1) * config.shift_fraction * w;
    dy = (2 * unit(rng) - 1) * config.shift_fraction * h;
  }
  if (ops & 3)
    out = warp_rotate_shift(out, angle, dx, dy, kBackground);
  if (ops & 4)
    out = flip_left_right(out);
  if (ops & 8) {
    const int edge = std::uniform_int_distribution<int>(0, 3)(rng);
    const int thick =
        1 + static_cast<int>(unit(rng) * std::max(0.0, config.band_max_fraction * side - 1));
    const auto value = static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, 90)(rng));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const bool hit = (edge == 0 && y < thick) || (edge == 1 && y >= h - thick) ||
                         (edge == 2 && x < thick) || (edge == 3 && x >= w - thick);
        if (hit)
          fill_pixel(out, x, y, value);
      }
  }
  if (ops & 16) {
    const int n = std::uniform_int_distribution<int>(1, config.max_occlusions)(rng);
    for (int k = 0; k < n; ++k) {
      const double r = std::max(1.0, (0.03 + unit(rng) * std::max(0.0, config.occlusion_max_radius -
                                                                         0.03)) * side);
      const double cx = unit(rng) * w, cy = unit(rng) * h;
      const std::uint8_t value = unit(rng) < 0.5 ? kBackground : kInk;
      for (int y = std::max(0, static_cast<int>(cy - r)); y < std::min(h, static_cast<int>(cy + r) + 1); ++y)
        for (int x = std::max(0, static_cast<int>(cx - r)); x < std::min(w, static_cast<int>(cx + r) + 1); ++x)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
            fill_pixel(out, x, y, value);
    }
  }
  return out;
}

std::vector<PairSample> sample_pairs(const std::vector<corpus::LabeledSample> &samples,
                                     std::size_t count, double positive_fraction,
                                     std::mt19937_64 &rng) {
  require(positive_fraction >= 0 && positive_fraction <= 1, "positive_fraction must be in [0, 1]");
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i)
    by_class[samples[i].code].push_back(i);
  std::vector<const std::vector<std::size_t> *> classes, anchors;
  for (const auto &[code, idx] : by_class) {
    classes.push_back(&idx);
    if (idx.size() >= 2)
      anchors.push_back(&idx);
  }
  if (count == 0)
    return {};
  if (positive_fraction < 1)
    require(classes.size() >= 2, "negative pairs need at least two classes");
  if (positive_fraction > 0)
    require(!anchors.empty(), "positive pairs need a class with at least two samples");

  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  std::bernoulli_distribution positive(positive_fraction);
  std::vector<PairSample> pairs;
  pairs.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    if (positive(rng)) {
      const auto &idx = *anchors[pick(anchors.size())];
      const std::size_t i = pick(idx.size());
      std::size_t j = pick(idx.size() - 1);
      if (j >= i)
        ++j;
      pairs.push_back({idx[i], idx[j], 0});
    } else {
      const std::size_t ci = pick(classes.size());
      std::size_t cj = pick(classes.size() - 1);
      if (cj >= ci)
        ++cj;
      const auto &a = *classes[ci], &b = *classes[cj];
      pairs.push_back({a[pick(a.size())], b[pick(b.size())], 1});
    }
  }
  return pairs;
}

void EncoderConfig::validate() const {
  backbone.validate();
  require(embedding_dim >= 1, "embedding dimension must be >= 1");
}

void to_json(nlohmann::json &j, const EncoderConfig &c) {
  j = {{"backbone", c.backbone}, {"embedding_dim", c.embedding_dim}, {"seed", c.seed}};
}

void from_json(const nlohmann::json &j, EncoderConfig &c) {
  if (j.contains("backbone"))
    c.backbone = j.at("backbone").get<nn::BackboneConfig>();
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.seed = j.value("seed", c.seed);
}

EncoderModel::EncoderModel(const EncoderConfig &config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  backbone_ = nn::Backbone(config_.backbone, rng);
  head_ = nn::Dense(config_.backbone.output_dim(), config_.embedding_dim, rng, false);
}

nn::Vector EncoderModel::forward_raw(const nn::Matrix &input, Trace *trace) const {
  require(!config_.backbone.channels.empty() && head_.weight.value.size() > 0,
          "encoder is not initialized");
  nn::Vector flat = backbone_.forward(input, trace ? &trace->backbone : nullptr);
  nn::Vector out = head_.forward(flat);
  if (trace)
    trace->flat = std::move(flat);
  return out;
}

void EncoderModel::backward_raw(const nn::Vector &grad, const Trace &trace) {
  backbone_.backward(head_.backward(grad, trace.flat), trace.backbone);
}

namespace {

std::vector<float> normalize(const nn::Vector &raw) {
  double n2 = 0;
  for (Eigen::Index i = 0; i < raw.size(); ++i)
    n2 += static_cast<double>(raw[i]) * raw[i];
  std::vector<float> z(static_cast<std::size_t>(raw.size()), 0.0f);
  if (n2 < 1e-24) {
    z[0] = 1.0f; // all-zero projection: fixed unit direction
    return z;
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = static_cast<float>(raw[static_cast<Eigen::Index>(i)] * inv);
  return z;
}

std::vector<double> to_double(const nn::Vector &v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

} // namespace

std::vector<float> EncoderModel::embed_input(const nn::Matrix &input) const {
  return normalize(forward_raw(input, nullptr));
}

std::vector<nn::Parameter *> EncoderModel::parameters() {
  auto p = backbone_.parameters();
  p.push_back(&head_.weight);
  p.push_back(&head_.bias);
  return p;
}

std::vector<const nn::Parameter *> EncoderModel::parameters() const {
  auto p = backbone_.parameters();
  p.push_back(&head_.weight);
  p.push_back(&head_.bias);
  return p;
}

std::vector<float> embed(const EncoderModel &encoder, const Image &image) {
  return encoder.embed_input(encoder.preprocess(image));
}

namespace {

// Mean loss over fixed pairs using one forward pass per distinct image.
double pair_loss(const EncoderModel &encoder, const std::vector<nn::Matrix> &inputs,
                 const std::vector<PairSample> &pairs, double margin) {
  std::vector<std::vector<double>> raw(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i)
    raw[i] = to_double(encoder.forward_raw(inputs[i], nullptr));
  double total = 0;
  for (const auto &p : pairs)
    total += cosine_contrastive(raw[p.a], raw[p.b], p.y, margin).loss;
  return total / static_cast<double>(pairs.size());
}

} // namespace

MetricTrainResult train_encoder(EncoderModel encoder,
                                const std::vector<corpus::LabeledSample> &train,
                                const std::vector<corpus::LabeledSample> &validation,
                                const MetricTrainConfig &config) {
  config.validate();
  require(!train.empty(), "training set is empty");
  require(!validation.empty(), "validation set is empty");

  std::mt19937_64 rng(config.schedule.seed);
  std::mt19937_64 val_rng(config.schedule.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto val_pairs =
      sample_pairs(validation, config.validation_pairs, config.positive_fraction, val_rng);
  std::vector<nn::Matrix> val_inputs;
  val_inputs.reserve(validation.size());
  for (const auto &s : validation)
    val_inputs.push_back(encoder.preprocess(s.image));

  auto params = encoder.parameters();
  const auto batch = static_cast<std::size_t>(config.schedule.batch_size);

  auto run_epoch = [&](nn::Adam &adam, int epoch) {
    const auto pairs = sample_pairs(train, config.pairs_per_epoch, config.positive_fraction, rng);
    double total = 0;
    for (std::size_t start = 0; start < pairs.size(); start += batch) {
      const std::size_t end = std::min(pairs.size(), start + batch);
      double batch_loss = 0;
      for (std::size_t k = start; k < end; ++k) {
        const auto &p = pairs[k];
        const nn::Matrix xa = encoder.preprocess(augment(train[p.a].image, config.augment, rng));
        const nn::Matrix xb = encoder.preprocess(augment(train[p.b].image, config.augment, rng));
        EncoderModel::Trace ta, tb;
        const auto ua = to_double(encoder.forward_raw(xa, &ta));
        const auto ub = to_double(encoder.forward_raw(xb, &tb));
        const auto g = cosine_contrastive(ua, ub, p.y, config.margin);
        batch_loss += g.loss;
        encoder.backward_raw(Eigen::Map<const Eigen::VectorXd>(g.grad_a.data(),
                                                               static_cast<Eigen::Index>(g.grad_a.size()))
                                 .cast<float>(),
                             ta);
        encoder.backward_raw(Eigen::Map<const Eigen::VectorXd>(g.grad_b.data(),
                                                               static_cast<Eigen::Index>(g.grad_b.size()))
                                 .cast<float>(),
                             tb);
      }
      train::check_finite(batch_loss, epoch, start / batch, adam.learning_rate());
      adam.step(params, 1.0f / static_cast<float>(end - start));
      total += batch_loss;
    }
    return total / static_cast<double>(pairs.size());
  };
  auto validate = [&] { return pair_loss(encoder, val_inputs, val_pairs, config.margin); };

  MetricTrainResult result;
  result.history = train::fit(config.schedule, params, run_epoch, validate);
  if (!nn::all_finite(std::as_const(encoder).parameters()))
    fail(ErrorCode::Numerical, "encoder weights became non-finite during training");
  result.encoder = std::move(encoder);
  return result;
}

CentroidTable centroids_from_embeddings(const std::vector<std::vector<float>> &embeddings,
                                        const std::vector<std::string> &codes,
                                        const std::string &fingerprint) {
  require(embeddings.size() == codes.size(), "embeddings and codes differ in length");
  require(!embeddings.empty(), "cannot build centroids from an empty class set");
  CentroidTable table;
  table.encoder_fingerprint = fingerprint;
  table.dim = static_cast<int>(embeddings.front().size());
  require(table.dim > 0, "embeddings are empty");
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    require(static_cast<int>(embeddings[i].size()) == table.dim, "embedding dimensions differ");
    validate_code(codes[i], "class code");
    auto &e = table.entries[codes[i]];
    if (e.centroid.empty())
      e.centroid.assign(static_cast<std::size_t>(table.dim), 0.0);
    for (int d = 0; d < table.dim; ++d)
      e.centroid[static_cast<std::size_t>(d)] += embeddings[i][static_cast<std::size_t>(d)];
    ++e.support;
  }
  for (auto &[code, e] : table.entries) {
    double n2 = 0;
    for (auto &v : e.centroid) {
      v /= static_cast<double>(e.support);
      n2 += v * v;
    }
    e.degenerate = std::sqrt(n2) < kDegenerateNorm;
    if (e.degenerate)
      spdlog::warn("class {} has a degenerate centroid (norm {:.2e})", code, std::sqrt(n2));
  }
  return table;
}

CentroidTable compute_centroids(const EncoderModel &encoder,
                                const std::vector<corpus::LabeledSample> &samples) {
  require(!samples.empty(), "cannot build centroids from an empty class set");
  std::vector<std::vector<float>> emb;
  std::vector<std::string> codes;
  for (const auto &s : samples) {
    emb.push_back(embed(encoder, s.image));
    codes.push_back(s.code);
  }
  return centroids_from_embeddings(emb, codes, encoder.fingerprint());
}

MetricPrediction classify_nearest_centroid(const std::vector<float> &embedding,
                                           const CentroidTable &table,
                                           std::optional<double> similarity_floor) {
  require(!table.entries.empty(), "centroid table is empty");
  require(static_cast<int>(embedding.size()) == table.dim,
          "embedding has dimension " + std::to_string(embedding.size()) + ", table expects " +
              std::to_string(table.dim));
  constexpr double kTie = 1e-12;
  std::vector<std::pair<const std::string *, double>> sims; // code order
  for (const auto &[code, e] : table.entries) {
    if (e.degenerate)
      continue;
    double dot = 0, n2 = 0;
    for (std::size_t d = 0; d < embedding.size(); ++d) {
      dot += embedding[d] * e.centroid[d];
      n2 += e.centroid[d] * e.centroid[d];
    }
    sims.emplace_back(&code, dot / std::sqrt(n2));
  }
  if (sims.empty())
    fail(ErrorCode::Degenerate, "all centroids are degenerate");

  // Highest similarity; among near-exact ties the first (smallest) code wins.
  auto best_of = [&](const std::string *skip) {
    double top = -std::numeric_limits<double>::infinity();
    for (const auto &[code, s] : sims)
      if (code != skip)
        top = std::max(top, s);
    for (const auto &entry : sims)
      if (entry.first != skip && entry.second >= top - kTie)
        return entry;
    return std::pair<const std::string *, double>{nullptr, 0.0};
  };

  MetricPrediction out;
  const auto best = best_of(nullptr);
  out.code = *best.first;
  out.similarity = best.second;
  if (sims.size() > 1) {
    const auto second = best_of(best.first);
    out.runner_up = *second.first;
    out.runner_up_similarity = second.second;
  }
  if (similarity_floor && out.similarity < *similarity_floor) {
    out.runner_up = out.code;
    out.runner_up_similarity = out.similarity;
    out.code = kUnknownCode;
    out.rejected = true;
  }
  return out;
}

CentroidTable register_class(const CentroidTable &table, const std::string &code,
                             const std::vector<Image> &images, const EncoderModel &encoder,
                             bool overwrite) {
  validate_code(code, "class code");
  require(!images.empty(), "registering a class needs at least one image");
  require(table.dim == 0 || table.dim == encoder.dim(),
          "encoder dimension does not match the centroid table");
  const std::string fp = encoder.fingerprint();
  if (!table.encoder_fingerprint.empty() && table.encoder_fingerprint != fp)
    fail(ErrorCode::Conflict, "centroid table was built with a different encoder");
  if (table.entries.count(code) && !overwrite)
    fail(ErrorCode::Conflict, "class " + code + " is already registered");

  std::vector<std::vector<float>> emb;
  for (const auto &img : images)
    emb.push_back(embed(encoder, img));
  const CentroidTable single =
      centroids_from_embeddings(emb, std::vector<std::string>(emb.size(), code), fp);

  CentroidTable out = table;
  out.dim = encoder.dim();
  out.encoder_fingerprint = fp;
  out.entries[code] = single.entries.at(code);
  return out;
}

void save_encoder(const EncoderModel &encoder, const std::filesystem::path &path) {
  io::write_json(path, {{"format", "glyphscribe.encoder"},
                        {"version", 1},
                        {"config", encoder.config()},
                        {"fingerprint", encoder.fingerprint()},
                        {"params", nn::params_to_json(encoder.parameters())}});
}

EncoderModel load_encoder(const std::filesystem::path &path) {
  const auto doc = io::read_json(path);
  io::check_header(doc, "glyphscribe.encoder", 1, path.string());
  EncoderModel model(doc.at("config").get<EncoderConfig>());
  nn::params_from_json(model.parameters(), doc.at("params"));
  if (model.fingerprint() != doc.value("fingerprint", std::string{}))
    fail(ErrorCode::Format, path.string() + ": weight fingerprint does not match its contents");
  return model;
}

nlohmann::json centroids_to_json(const CentroidTable &table) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto &[code, e] : table.entries)
    entries.push_back({{"code", code}, {"support", e.support}, {"centroid", e.centroid}});
  return {{"format", "glyphscribe.centroids"},
          {"version", 1},
          {"encoder_fingerprint", table.encoder_fingerprint},
          {"dim", table.dim},
          {"entries", entries}};
}

CentroidTable centroids_from_json(const nlohmann::json &j) {
  io::check_header(j, "glyphscribe.centroids", 1, "centroid table");
  CentroidTable t;
  t.encoder_fingerprint = j.value("encoder_fingerprint", std::string{});
  t.dim = j.at("dim").get<int>();
  for (const auto &e : j.at("entries")) {
    CentroidEntry entry;
    entry.centroid = e.at("centroid").get<std::vector<double>>();
    entry.support = e.at("support").get<std::size_t>();
    if (static_cast<int>(entry.centroid.size()) != t.dim || entry.support == 0)
      fail(ErrorCode::Format, "malformed centroid entry");
    double n2 = 0;
    for (double v : entry.centroid)
      n2 += v * v;
    entry.degenerate = std::sqrt(n2) < kDegenerateNorm;
    const auto code = e.at("code").get<std::string>();
    validate_code(code, "centroid code");
    t.entries[code] = std::move(entry);
  }
  return t;
}

void save_centroids(const CentroidTable &table, const std::filesystem::path &path) {
  io::write_json(path, centroids_to_json(table));
}

CentroidTable load_centroids(const std::filesystem::path &path, const EncoderModel &encoder) {
  CentroidTable t = centroids_from_json(io::read_json(path));
  if (t.encoder_fingerprint != encoder.fingerprint())
    fail(ErrorCode::Conflict, path.string() + " was built with encoder " + t.encoder_fingerprint +
                                  ", loaded encoder is " + encoder.fingerprint());
  if (t.dim != encoder.dim())
    fail(ErrorCode::Conflict, path.string() + " has the wrong embedding dimension");
  return t;
}

std::string centroids_csv(const CentroidTable &table) {
  std::vector<std::string> header = {"code", "support"};
  for (int d = 0; d < table.dim; ++d)
    header.push_back("c" + std::to_string(d));
  std::string out = csv::format_row(header) + "\n";
  for (const auto &[code, e] : table.entries) {
    std::vector<std::string> row = {code, std::to_string(e.support)};
    for (double v : e.centroid) {
      std::ostringstream ss;
      ss.precision(17);
      ss << v;
      row.push_back(ss.str());
    }
    out += csv::format_row(row) + "\n";
  }
  return out;
}

} // namespace glyphscribe::metric
