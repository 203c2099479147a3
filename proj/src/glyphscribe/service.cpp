#include "glyphscribe/service.hpp"

#include "glyphscribe/error.hpp"
#include "glyphscribe/gardiner.hpp"
#include "glyphscribe/io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>

namespace glyphscribe::service {

std::string to_string(Backend b) {
  switch (b) {
  case Backend::DeepMml:
    return "deep_mml";
  case Backend::TradMl:
    return "trad_ml";
  case Backend::CnnEnd2End:
    return "cnn_end2end";
  }
  return "deep_mml";
}

Backend backend_from_string(const std::string &s) {
  if (s == "deep_mml")
    return Backend::DeepMml;
  if (s == "trad_ml")
    return Backend::TradMl;
  if (s == "cnn_end2end")
    return Backend::CnnEnd2End;
  fail(ErrorCode::InvalidArgument,
       "unknown backend '" + s + "' (expected deep_mml, trad_ml or cnn_end2end)");
}

MetricClassifier::MetricClassifier(metric::EncoderModel encoder, metric::CentroidTable table,
                                   std::optional<double> similarity_floor)
    : encoder_(std::move(encoder)),
      table_(std::make_shared<const metric::CentroidTable>(std::move(table))),
      floor_(similarity_floor) {}

std::shared_ptr<const metric::CentroidTable> MetricClassifier::table() const {
  std::lock_guard lock(table_mutex_);
  return table_;
}

GlyphPrediction MetricClassifier::classify(const Image &glyph) const {
  const auto table = this->table();
  const auto p = metric::classify_nearest_centroid(metric::embed(encoder_, glyph), *table, floor_);
  return {p.code, p.similarity, p.runner_up.value_or(""), p.runner_up_similarity};
}

std::vector<std::string> MetricClassifier::classes() const {
  std::vector<std::string> out;
  for (const auto &[code, e] : table()->entries)
    out.push_back(code);
  return out;
}

void MetricClassifier::register_class(const std::string &code, const std::vector<Image> &images,
                                      bool overwrite) {
  std::lock_guard lock(table_mutex_);
  table_ = std::make_shared<const metric::CentroidTable>(
      metric::register_class(*table_, code, images, encoder_, overwrite));
}

GlyphPrediction CnnClassifier::classify(const Image &glyph) const {
  const auto p = cnn::predict_classifier(model_, glyph);
  return {p.code, p.confidence, p.runner_up, p.runner_up_confidence};
}

GlyphPrediction SvmClassifier::classify(const Image &glyph) const {
  const auto p = classic::predict_svm(model_, classic::extract_features(glyph, model_.features));
  return {p.code, p.margin, p.runner_up, p.runner_up_margin};
}

void ServiceConfig::validate() const {
  require(port >= 0 && port <= 65535, "port must be in [0, 65535]");
  require(max_upload_bytes > 0, "max_upload_bytes must be positive");
  require(max_pixels > 0, "max_pixels must be positive");
  require(threads >= 1, "threads must be >= 1");
  segmentation.validate();
  geometry.validate();
}

nlohmann::json config_to_json(const ServiceConfig &c) {
  nlohmann::json j = {{"host", c.host},
                      {"port", c.port},
                      {"max_upload_bytes", c.max_upload_bytes},
                      {"max_pixels", c.max_pixels},
                      {"encoder_path", c.encoder_path.string()},
                      {"centroids_path", c.centroids_path.string()},
                      {"cnn_path", c.cnn_path.string()},
                      {"svm_path", c.svm_path.string()},
                      {"session_dir", c.session_dir.string()},
                      {"segmentation", c.segmentation},
                      {"geometry",
                       {{"stack_gap", c.geometry.stack_gap},
                        {"token_gap", c.geometry.token_gap},
                        {"min_x_overlap", c.geometry.min_x_overlap},
                        {"band_overlap", c.geometry.band_overlap},
                        {"excluded", c.geometry.excluded}}},
                      {"threads", c.threads}};
  j["similarity_floor"] = c.similarity_floor ? nlohmann::json(*c.similarity_floor) : nullptr;
  return j;
}

ServiceConfig config_from_json(const nlohmann::json &j) {
  ServiceConfig c;
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
  c.max_pixels = j.value("max_pixels", c.max_pixels);
  c.encoder_path = j.value("encoder_path", std::string{});
  c.centroids_path = j.value("centroids_path", std::string{});
  c.cnn_path = j.value("cnn_path", std::string{});
  c.svm_path = j.value("svm_path", std::string{});
  c.session_dir = j.value("session_dir", std::string{});
  if (j.contains("similarity_floor") && !j.at("similarity_floor").is_null())
    c.similarity_floor = j.at("similarity_floor").get<double>();
  if (j.contains("segmentation"))
    c.segmentation = j.at("segmentation").get<seg::SegmentationConfig>();
  if (j.contains("geometry")) {
    const auto &g = j.at("geometry");
    c.geometry.stack_gap = g.value("stack_gap", c.geometry.stack_gap);
    c.geometry.token_gap = g.value("token_gap", c.geometry.token_gap);
    c.geometry.min_x_overlap = g.value("min_x_overlap", c.geometry.min_x_overlap);
    c.geometry.band_overlap = g.value("band_overlap", c.geometry.band_overlap);
    if (g.contains("excluded"))
      c.geometry.excluded = g.at("excluded").get<std::set<std::string>>();
  }
  c.threads = j.value("threads", c.threads);
  return c;
}

namespace {

std::optional<std::string> env(const char *name) {
  if (const char *v = std::getenv(name); v && *v)
    return std::string(v);
  return std::nullopt;
}

template <typename T> T parse_number(const std::string &text, const char *name) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size())
      throw std::invalid_argument(text);
    return static_cast<T>(v);
  } catch (const std::exception &) {
    fail(ErrorCode::InvalidArgument, std::string(name) + " is not a number: '" + text + "'");
  }
}

} // namespace

void apply_env_overrides(ServiceConfig &c) {
  if (auto v = env("GLYPHSCRIBE_HOST"))
    c.host = *v;
  if (auto v = env("GLYPHSCRIBE_PORT"))
    c.port = parse_number<int>(*v, "GLYPHSCRIBE_PORT");
  if (auto v = env("GLYPHSCRIBE_MAX_UPLOAD_BYTES"))
    c.max_upload_bytes = parse_number<std::size_t>(*v, "GLYPHSCRIBE_MAX_UPLOAD_BYTES");
  if (auto v = env("GLYPHSCRIBE_ENCODER"))
    c.encoder_path = *v;
  if (auto v = env("GLYPHSCRIBE_CENTROIDS"))
    c.centroids_path = *v;
  if (auto v = env("GLYPHSCRIBE_CNN"))
    c.cnn_path = *v;
  if (auto v = env("GLYPHSCRIBE_SVM"))
    c.svm_path = *v;
  if (auto v = env("GLYPHSCRIBE_SESSION_DIR"))
    c.session_dir = *v;
  if (auto v = env("GLYPHSCRIBE_SIMILARITY_FLOOR"))
    c.similarity_floor = parse_number<double>(*v, "GLYPHSCRIBE_SIMILARITY_FLOOR");
}

ServiceConfig load_config(const std::optional<std::filesystem::path> &file) {
  ServiceConfig c = file ? config_from_json(io::read_json(*file)) : ServiceConfig{};
  apply_env_overrides(c);
  c.validate();
  return c;
}

std::shared_ptr<ModelRegistry> ModelRegistry::load(const ServiceConfig &config) {
  auto reg = std::make_shared<ModelRegistry>();
  auto attempt = [&](Backend b, const std::vector<std::pair<const char *, std::filesystem::path>> &files,
                     auto &&loader) {
    for (const auto &[key, path] : files)
      if (path.empty()) {
        reg->set_unavailable(b, std::string("no model file configured (") + key + ")");
        return;
      }
    try {
      reg->set(b, loader());
      spdlog::info("loaded {} backend", to_string(b));
    } catch (const std::exception &e) {
      reg->set_unavailable(b, e.what());
      spdlog::warn("{} backend unavailable: {}", to_string(b), e.what());
    }
  };
  attempt(Backend::DeepMml,
          {{"encoder_path", config.encoder_path}, {"centroids_path", config.centroids_path}}, [&] {
            auto encoder = metric::load_encoder(config.encoder_path);
            auto table = metric::load_centroids(config.centroids_path, encoder);
            return std::make_shared<MetricClassifier>(std::move(encoder), std::move(table),
                                                      config.similarity_floor);
          });
  attempt(Backend::CnnEnd2End, {{"cnn_path", config.cnn_path}}, [&] {
    return std::make_shared<CnnClassifier>(cnn::load_classifier(config.cnn_path));
  });
  attempt(Backend::TradMl, {{"svm_path", config.svm_path}}, [&] {
    return std::make_shared<SvmClassifier>(classic::load_model(config.svm_path));
  });
  return reg;
}

void ModelRegistry::set(Backend b, std::shared_ptr<Classifier> classifier) {
  require(classifier && classifier->backend() == b, "classifier does not match its backend slot");
  std::unique_lock lock(mutex_);
  loaded_[b] = std::move(classifier);
  missing_.erase(b);
}

void ModelRegistry::set_unavailable(Backend b, std::string reason) {
  std::unique_lock lock(mutex_);
  loaded_.erase(b);
  missing_[b] = std::move(reason);
}

std::shared_ptr<Classifier> ModelRegistry::get_mutable(Backend b) const {
  std::shared_lock lock(mutex_);
  if (auto it = loaded_.find(b); it != loaded_.end())
    return it->second;
  const auto it = missing_.find(b);
  fail(ErrorCode::Unavailable, "backend " + to_string(b) + " has no model loaded: " +
                                   (it == missing_.end() ? "not configured" : it->second));
}

std::shared_ptr<const Classifier> ModelRegistry::get(Backend b) const { return get_mutable(b); }

nlohmann::json ModelRegistry::status() const {
  std::shared_lock lock(mutex_);
  nlohmann::json out = nlohmann::json::object();
  for (Backend b : {Backend::DeepMml, Backend::TradMl, Backend::CnnEnd2End}) {
    if (auto it = loaded_.find(b); it != loaded_.end())
      out[to_string(b)] = {{"loaded", true}, {"classes", it->second->classes().size()}};
    else
      out[to_string(b)] = {{"loaded", false},
                           {"reason", missing_.count(b) ? missing_.at(b) : "not configured"}};
  }
  return out;
}

nlohmann::json glyph_json(const SessionGlyph &g) {
  nlohmann::json j = {{"glyph_id", g.glyph_id},
                      {"bbox", {g.box.x0, g.box.y0, g.box.x1, g.box.y1}},
                      {"area", g.box.area},
                      {"centroid", {g.box.cx, g.box.cy}},
                      {"column_index", g.column_index},
                      {"column_label", g.column_label},
                      {"order_index", g.order_index},
                      {"code", g.code.empty() ? nlohmann::json(nullptr) : nlohmann::json(g.code)},
                      {"review_status", transcription::to_string(g.status)}};
  if (g.prediction) {
    j["prediction"] = {{"code", g.prediction->code},
                       {"confidence", g.prediction->confidence},
                       {"runner_up", g.prediction->runner_up},
                       {"runner_up_confidence", g.prediction->runner_up_confidence},
                       {"backend", to_string(*g.predicted_by)},
                       {"latency_ms", g.latency_ms}};
  } else {
    j["prediction"] = nullptr;
  }
  return j;
}

Service::Service(ServiceConfig config, std::shared_ptr<ModelRegistry> models)
    : config_(std::move(config)), models_(std::move(models)) {
  config_.validate();
  require(models_ != nullptr, "service needs a model registry");
}

namespace {

std::string random_id() {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(m);
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng()),
                static_cast<unsigned long long>(rng()));
  return buf;
}

std::string column_label(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "col%03d", index);
  return buf;
}

} // namespace

std::string Service::create_session(std::span<const std::uint8_t> image_bytes,
                                    const SessionMetadata &metadata) {
  if (image_bytes.size() > config_.max_upload_bytes)
    fail(ErrorCode::PayloadTooLarge, "upload of " + std::to_string(image_bytes.size()) +
                                         " bytes exceeds the limit of " +
                                         std::to_string(config_.max_upload_bytes));
  Image image;
  try {
    image = decode_image(image_bytes);
  } catch (const Error &e) {
    fail(ErrorCode::Format, std::string("cannot decode image: ") + e.what());
  }
  if (static_cast<std::size_t>(image.width) * image.height > config_.max_pixels)
    fail(ErrorCode::PayloadTooLarge, "image of " + std::to_string(image.width) + "x" +
                                         std::to_string(image.height) +
                                         " pixels exceeds the pixel limit");
  auto session = std::make_shared<Session>();
  session->facsimile = std::move(image);
  session->metadata = metadata;
  {
    std::unique_lock lock(sessions_mutex_);
    do
      session->id = random_id();
    while (sessions_.count(session->id));
    sessions_[session->id] = session;
  }
  if (!config_.session_dir.empty()) {
    std::filesystem::create_directories(config_.session_dir);
    save_png(session->facsimile, config_.session_dir / (session->id + ".png"));
  }
  snapshot(*session);
  spdlog::info("session {} created ({}x{})", session->id, session->facsimile.width,
               session->facsimile.height);
  return session->id;
}

std::shared_ptr<Session> Service::find(const std::string &id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end())
    fail(ErrorCode::NotFound, "unknown session '" + id + "'");
  return it->second;
}

std::size_t Service::session_count() const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.size();
}

std::vector<SessionGlyph> Service::segment_roi(const std::string &session_id, const Roi &roi) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  const int W = s->facsimile.width, H = s->facsimile.height;
  require(roi.x1 > roi.x0 && roi.y1 > roi.y0, "roi must have positive area");
  if (roi.x0 < 0 || roi.y0 < 0 || roi.x1 > W || roi.y1 > H) {
    const Roi c{std::clamp(roi.x0, 0, W), std::clamp(roi.y0, 0, H), std::clamp(roi.x1, 0, W),
                std::clamp(roi.y1, 0, H)};
    std::string msg = "roi [" + std::to_string(roi.x0) + ", " + std::to_string(roi.y0) + ", " +
                      std::to_string(roi.x1) + ", " + std::to_string(roi.y1) +
                      "] exceeds the " + std::to_string(W) + "x" + std::to_string(H) + " image";
    if (c.x1 > c.x0 && c.y1 > c.y0)
      msg += "; clamped suggestion [" + std::to_string(c.x0) + ", " + std::to_string(c.y0) + ", " +
             std::to_string(c.x1) + ", " + std::to_string(c.y1) + "]";
    fail(ErrorCode::InvalidArgument, msg);
  }

  const Image region = crop(s->facsimile, roi.x0, roi.y0, roi.x1, roi.y1);
  const auto found = seg::segment_region(region, config_.segmentation);
  const int rw = region.width;

  std::vector<SessionGlyph> added;
  int columns = 0;
  for (const auto &g : found) {
    SessionGlyph sg;
    sg.glyph_id = "g" + std::to_string(s->glyphs.size() + added.size() + 1);
    sg.box = g.box;
    sg.box.x0 += roi.x0, sg.box.x1 += roi.x0, sg.box.y0 += roi.y0, sg.box.y1 += roi.y0;
    sg.box.cx += roi.x0, sg.box.cy += roi.y0;
    for (auto &p : sg.box.pixels) {
      const std::uint32_t x = p % static_cast<std::uint32_t>(rw) + static_cast<std::uint32_t>(roi.x0);
      const std::uint32_t y = p / static_cast<std::uint32_t>(rw) + static_cast<std::uint32_t>(roi.y0);
      p = y * static_cast<std::uint32_t>(W) + x;
    }
    sg.column_index = s->next_column + g.column_index;
    sg.column_label = column_label(sg.column_index);
    sg.order_index = g.order_index;
    sg.crop = g.crop;
    columns = std::max(columns, g.column_index + 1);
    added.push_back(std::move(sg));
  }
  s->next_column += columns;
  s->rois.push_back(roi);
  s->glyphs.insert(s->glyphs.end(), added.begin(), added.end());
  snapshot(*s);
  spdlog::info("session {}: roi yielded {} glyphs in {} columns", s->id, added.size(), columns);
  return added;
}

std::vector<SessionGlyph> Service::classify_session(const std::string &session_id,
                                                    std::optional<Backend> backend) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  const Backend b = backend.value_or(s->backend);
  const auto classifier = models_->get(b);
  s->backend = b;
  for (auto &g : s->glyphs) {
    if (g.status != transcription::ReviewStatus::Auto)
      continue; // expert decisions survive backend switches
    const auto t0 = std::chrono::steady_clock::now();
    g.prediction = classifier->classify(g.crop);
    g.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    g.predicted_by = b;
    g.code = g.prediction->code;
  }
  snapshot(*s);
  return s->glyphs;
}

std::vector<SessionGlyph> Service::apply_corrections(const std::string &session_id,
                                                     const std::vector<Correction> &corrections) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  std::map<std::string, SessionGlyph *> by_id;
  for (auto &g : s->glyphs)
    by_id[g.glyph_id] = &g;
  std::vector<std::string> unknown;
  for (const auto &c : corrections) {
    if (!by_id.count(c.glyph_id))
      unknown.push_back(c.glyph_id);
    else if (!config_.geometry.excluded.count(c.code))
      validate_code(c.code, "corrected code");
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto &u : unknown)
      list += (list.empty() ? "" : ", ") + u;
    fail(ErrorCode::NotFound, "unknown glyph ids: " + list);
  }
  for (const auto &c : corrections) {
    auto &g = *by_id.at(c.glyph_id);
    g.status = g.prediction && g.prediction->code == c.code ? transcription::ReviewStatus::Confirmed
                                                            : transcription::ReviewStatus::Corrected;
    g.code = c.code;
  }
  snapshot(*s);
  return s->glyphs;
}

ExportResult Service::export_session(const std::string &session_id) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  std::map<int, std::vector<const SessionGlyph *>> columns;
  for (const auto &g : s->glyphs) {
    if (g.code.empty())
      fail(ErrorCode::Conflict, "glyph " + g.glyph_id + " has no code yet; classify the session first");
    columns[g.column_index].push_back(&g);
  }
  ExportResult out;
  for (auto &[index, glyphs] : columns) {
    std::stable_sort(glyphs.begin(), glyphs.end(),
                     [](const auto *a, const auto *b) { return a->order_index < b->order_index; });
    std::vector<transcription::PlacedSign> placed;
    for (std::size_t i = 0; i < glyphs.size(); ++i)
      placed.push_back({glyphs[i]->code, glyphs[i]->box, static_cast<int>(i)});
    auto line = transcription::assemble_lines(placed, config_.geometry);
    out.dropped.insert(out.dropped.end(), line.dropped.begin(), line.dropped.end());
    for (std::size_t t = 0; t < line.tokens.size(); ++t) {
      bool any_corrected = false, all_confirmed = true;
      for (const auto &sign : line.tokens[t].signs) {
        const auto st = glyphs[static_cast<std::size_t>(sign.source)]->status;
        any_corrected |= st == transcription::ReviewStatus::Corrected;
        all_confirmed &= st == transcription::ReviewStatus::Confirmed;
      }
      out.records.push_back({s->metadata.support, s->metadata.spell, column_label(index),
                             static_cast<int>(t), line.tokens[t].render(),
                             any_corrected   ? transcription::ReviewStatus::Corrected
                             : all_confirmed ? transcription::ReviewStatus::Confirmed
                                             : transcription::ReviewStatus::Auto});
    }
  }
  out.csv = transcription::format_csv(out.records);
  out.records = transcription::sorted_records(std::move(out.records));
  spdlog::info("session {}: exported {} records ({} bytes, {} signs dropped)", s->id,
               out.records.size(), out.csv.size(), out.dropped.size());
  return out;
}

nlohmann::json Service::session_json(const std::string &session_id) const {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  nlohmann::json glyphs = nlohmann::json::array();
  for (const auto &g : s->glyphs)
    glyphs.push_back(glyph_json(g));
  nlohmann::json rois = nlohmann::json::array();
  for (const auto &r : s->rois)
    rois.push_back({r.x0, r.y0, r.x1, r.y1});
  return {{"session_id", s->id},
          {"metadata", {{"support", s->metadata.support}, {"spell", s->metadata.spell}}},
          {"backend", to_string(s->backend)},
          {"image", {{"width", s->facsimile.width}, {"height", s->facsimile.height}}},
          {"rois", rois},
          {"glyphs", glyphs}};
}

Image Service::glyph_crop(const std::string &session_id, const std::string &glyph_id) const {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  for (const auto &g : s->glyphs)
    if (g.glyph_id == glyph_id)
      return g.crop;
  fail(ErrorCode::NotFound, "unknown glyph id '" + glyph_id + "'");
}

void Service::snapshot(const Session &s) const {
  if (config_.session_dir.empty())
    return;
  nlohmann::json glyphs = nlohmann::json::array();
  for (const auto &g : s.glyphs)
    glyphs.push_back(glyph_json(g));
  io::write_json(config_.session_dir / (s.id + ".json"),
                 {{"session_id", s.id},
                  {"metadata", {{"support", s.metadata.support}, {"spell", s.metadata.spell}}},
                  {"backend", to_string(s.backend)},
                  {"glyphs", glyphs}});
}

} // namespace glyphscribe::service
