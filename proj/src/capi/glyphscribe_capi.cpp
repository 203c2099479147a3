#include "glyphscribe/glyphscribe.h"

#include "glyphscribe/classic.hpp"
#include "glyphscribe/cnn.hpp"
#include "glyphscribe/corpus.hpp"
#include "glyphscribe/csv.hpp"
#include "glyphscribe/error.hpp"
#include "glyphscribe/evaluation.hpp"
#include "glyphscribe/http_server.hpp"
#include "glyphscribe/io.hpp"
#include "glyphscribe/metric.hpp"
#include "glyphscribe/segmentation.hpp"
#include "glyphscribe/service.hpp"
#include "glyphscribe/synthetic.hpp"
#include "glyphscribe/transcription.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>

using namespace glyphscribe;
using nlohmann::json;

struct gs_dataset {
  corpus::Dataset data;
  std::map<std::string, std::size_t> index; // sample_id -> position
};

struct gs_split {
  corpus::DatasetSplit split;
};

struct gs_classifier {
  std::shared_ptr<service::Classifier> impl;
};

struct gs_server {
  std::shared_ptr<service::Service> service;
  std::unique_ptr<service::HttpServer> http;
};

namespace {

thread_local std::string g_last_error;

// Diagnostics go to stderr so JSON written to stdout by callers stays clean.
const bool g_logger_ready = [] {
  spdlog::set_default_logger(spdlog::stderr_color_mt("glyphscribe"));
  return true;
}();

gs_status status_of(ErrorCode code) { return static_cast<gs_status>(static_cast<int>(code)); }

template <typename F> gs_status guard(F &&f) {
  try {
    g_last_error.clear();
    f();
    return GS_OK;
  } catch (const Error &e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const json::exception &e) {
    g_last_error = std::string("bad JSON: ") + e.what();
    return GS_ERR_INVALID_ARGUMENT;
  } catch (const std::bad_alloc &) {
    g_last_error = "out of memory";
    return GS_ERR_INTERNAL;
  } catch (const std::exception &e) {
    g_last_error = e.what();
    return GS_ERR_INTERNAL;
  }
}

void need(const void *p, const char *name) {
  if (!p)
    fail(ErrorCode::InvalidArgument, std::string(name) + " must not be NULL");
}

json parse_opt(const char *text) {
  if (!text || !*text)
    return json::object();
  auto j = json::parse(text);
  if (!j.is_object() && !j.is_array())
    fail(ErrorCode::InvalidArgument, "expected a JSON object or array");
  return j;
}

char *dup(const std::string &s) {
  char *out = static_cast<char *>(std::malloc(s.size() + 1));
  if (!out)
    throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char **out, const json &j) {
  if (out)
    *out = dup(j.dump(2));
}

std::vector<corpus::LabeledSample> subset(const gs_dataset &ds, const std::vector<std::string> &ids,
                                          const char *what) {
  std::vector<corpus::LabeledSample> out;
  out.reserve(ids.size());
  for (const auto &id : ids) {
    const auto it = ds.index.find(id);
    if (it == ds.index.end())
      fail(ErrorCode::NotFound, std::string(what) + " sample '" + id + "' is not in the dataset");
    out.push_back(ds.data.samples[it->second]);
  }
  return out;
}

const std::vector<std::string> &subset_ids(const gs_split &s, const std::string &name) {
  if (name == "test_random")
    return s.split.test_random;
  if (name == "test_pages")
    return s.split.test_pages;
  if (name == "validation")
    return s.split.validation;
  if (name == "train")
    return s.split.train;
  fail(ErrorCode::InvalidArgument,
       "unknown subset '" + name + "' (test_random, test_pages, validation, train)");
}

synth::RenderOptions render_options(const json &j, synth::RenderOptions o) {
  o.max_rotation_deg = j.value("max_rotation_deg", o.max_rotation_deg);
  o.scale_jitter = j.value("scale_jitter", o.scale_jitter);
  o.shift = j.value("shift", o.shift);
  o.point_jitter = j.value("point_jitter", o.point_jitter);
  o.thickness = j.value("thickness", o.thickness);
  o.thickness_jitter = j.value("thickness_jitter", o.thickness_jitter);
  o.salt_noise = j.value("salt_noise", o.salt_noise);
  o.gray_noise = j.value("gray_noise", o.gray_noise);
  return o;
}

json history_report(const train::History &h) { return train::history_to_json(h); }

} // namespace

extern "C" {

const char *gs_version(void) { return "0.1.0"; }

const char *gs_last_error(void) { return g_last_error.c_str(); }

const char *gs_status_name(gs_status status) {
  switch (status) {
  case GS_OK:
    return "ok";
  case GS_ERR_INVALID_ARGUMENT:
    return "invalid_argument";
  case GS_ERR_NOT_FOUND:
    return "not_found";
  case GS_ERR_IO:
    return "io_error";
  case GS_ERR_FORMAT:
    return "bad_format";
  case GS_ERR_DEGENERATE:
    return "degenerate";
  case GS_ERR_NUMERICAL:
    return "numerical_error";
  case GS_ERR_CONFLICT:
    return "conflict";
  case GS_ERR_UNAVAILABLE:
    return "unavailable";
  case GS_ERR_PAYLOAD_TOO_LARGE:
    return "payload_too_large";
  case GS_ERR_INTERNAL:
    return "internal_error";
  }
  return "unknown";
}

void gs_string_free(char *s) { std::free(s); }

gs_status gs_set_log_level(const char *level) {
  return guard([&] {
    need(level, "level");
    const auto lvl = spdlog::level::from_str(level);
    if (lvl == spdlog::level::off && std::strcmp(level, "off") != 0)
      fail(ErrorCode::InvalidArgument, std::string("unknown log level '") + level + "'");
    spdlog::set_level(lvl);
  });
}

gs_status gs_synth_dataset(const char *root, int num_classes, int per_class, uint64_t seed,
                           const char *options_json) {
  return guard([&] {
    need(root, "root");
    require(num_classes >= 1 && per_class >= 1, "num_classes and per_class must be >= 1");
    const json opt = parse_opt(options_json);
    const int size = opt.value("size", corpus::kDefaultCanonicalSize);
    const int pages = opt.value("pages", 1);
    require(pages >= 1, "pages must be >= 1");
    synth::GlyphFamily family(static_cast<std::size_t>(num_classes),
                              opt.value("family_seed", std::uint64_t{7}));
    std::vector<std::size_t> classes(static_cast<std::size_t>(num_classes));
    for (std::size_t k = 0; k < classes.size(); ++k)
      classes[k] = k;
    auto samples = synth::make_samples(
        family, classes, std::vector<std::size_t>(classes.size(), static_cast<std::size_t>(per_class)),
        size, seed, render_options(opt.value("render", json::object()), {}));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      char page[16];
      std::snprintf(page, sizeof page, "p%02d", static_cast<int>(i % static_cast<std::size_t>(pages)));
      samples[i].page_id = page;
    }
    synth::write_dataset(root, samples);
  });
}

gs_status gs_synth_page(const char *png_path, uint64_t seed, const char *layout_json,
                        char **truth_json) {
  return guard([&] {
    need(png_path, "png_path");
    const json opt = parse_opt(layout_json);
    synth::PageLayout layout;
    layout.columns = opt.value("columns", layout.columns);
    layout.glyphs_per_column = opt.value("glyphs_per_column", layout.glyphs_per_column);
    layout.glyph_size = opt.value("glyph_size", layout.glyph_size);
    layout.column_pitch = opt.value("column_pitch", layout.column_pitch);
    layout.row_pitch = opt.value("row_pitch", layout.row_pitch);
    layout.margin = opt.value("margin", layout.margin);
    synth::GlyphFamily family(opt.value("num_classes", std::size_t{12}),
                              opt.value("family_seed", std::uint64_t{7}));
    auto page = synth::render_page(family, layout, seed,
                                   render_options(opt.value("render", json::object()),
                                                  synth::clean_options()));
    json truth = {{"width", page.image.width}, {"height", page.image.height}};
    json glyphs = json::array();
    for (const auto &g : page.glyphs)
      glyphs.push_back({{"code", g.code},
                        {"bbox", {g.x0, g.y0, g.x1, g.y1}},
                        {"column", g.column},
                        {"order", g.order}});
    truth["glyphs"] = glyphs;
    if (opt.value("editorial_mark", false)) {
      const int h = opt.value("editorial_mark_height", 6);
      const int x = layout.margin / 3, y = layout.margin / 3;
      synth::stamp_editorial_mark(page.image, x, y, h);
      truth["editorial_mark"] = {x, y, x + std::max(3, h * 2 / 3), y + h};
    }
    save_png(page.image, png_path);
    put(truth_json, truth);
  });
}

gs_status gs_dataset_load(const char *root, int canonical_size, gs_dataset **out) {
  return guard([&] {
    need(root, "root");
    need(out, "out");
    auto ds = std::make_unique<gs_dataset>();
    ds->data = corpus::load_dataset(root, canonical_size > 0 ? canonical_size
                                                             : corpus::kDefaultCanonicalSize);
    for (std::size_t i = 0; i < ds->data.samples.size(); ++i)
      ds->index[ds->data.samples[i].sample_id] = i;
    *out = ds.release();
  });
}

size_t gs_dataset_size(const gs_dataset *ds) { return ds ? ds->data.samples.size() : 0; }

gs_status gs_dataset_summary(const gs_dataset *ds, char **out) {
  return guard([&] {
    need(ds, "dataset");
    need(out, "out");
    std::map<std::string, std::size_t> pages;
    for (const auto &s : ds->data.samples)
      ++pages[s.page_id];
    put(out, {{"samples", ds->data.samples.size()},
              {"skipped", ds->data.skipped},
              {"skipped_paths", ds->data.skipped_paths},
              {"classes", corpus::class_frequencies(ds->data.samples)},
              {"pages", pages}});
  });
}

void gs_dataset_free(gs_dataset *ds) { delete ds; }

gs_status gs_split_make(const gs_dataset *ds, const char *ratios_json,
                        const char *held_out_pages_json, uint64_t seed, gs_split **out) {
  return guard([&] {
    need(ds, "dataset");
    need(out, "out");
    const json r = parse_opt(ratios_json);
    corpus::SplitRatios ratios;
    ratios.train = r.value("train", ratios.train);
    ratios.validation = r.value("validation", ratios.validation);
    ratios.test = r.value("test", ratios.test);
    std::set<std::string> held;
    if (held_out_pages_json && *held_out_pages_json)
      held = json::parse(held_out_pages_json).get<std::set<std::string>>();
    auto s = std::make_unique<gs_split>();
    s->split = corpus::make_splits(ds->data.samples, ratios, held, seed);
    *out = s.release();
  });
}

gs_status gs_split_load(const char *path, gs_split **out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    auto s = std::make_unique<gs_split>();
    s->split = corpus::load_split(path);
    *out = s.release();
  });
}

gs_status gs_split_save(const gs_split *split, const char *path) {
  return guard([&] {
    need(split, "split");
    need(path, "path");
    corpus::save_split(split->split, path);
  });
}

gs_status gs_split_summary(const gs_split *split, char **out) {
  return guard([&] {
    need(split, "split");
    need(out, "out");
    put(out, {{"train", split->split.train.size()},
              {"validation", split->split.validation.size()},
              {"test_random", split->split.test_random.size()},
              {"test_pages", split->split.test_pages.size()},
              {"seed", split->split.seed},
              {"held_out_pages", split->split.held_out_pages}});
  });
}

void gs_split_free(gs_split *split) { delete split; }

gs_status gs_train_metric(const gs_dataset *ds, const gs_split *split, const char *config_json,
                          const char *encoder_path, const char *centroids_path,
                          char **report_json) {
  return guard([&] {
    need(ds, "dataset");
    need(split, "split");
    need(encoder_path, "encoder_path");
    need(centroids_path, "centroids_path");
    const json cfg = parse_opt(config_json);
    for (const auto &[key, v] : cfg.items())
      if (key != "encoder" && key != "train")
        fail(ErrorCode::InvalidArgument, "unknown config key '" + key + "' (expected encoder, train)");
    const auto ec = cfg.value("encoder", json::object()).get<metric::EncoderConfig>();
    const auto tc = cfg.value("train", json::object()).get<metric::MetricTrainConfig>();
    const auto train = subset(*ds, split->split.train, "train");
    const auto val = subset(*ds, split->split.validation, "validation");
    auto result = metric::train_encoder(metric::EncoderModel(ec), train, val, tc);
    const auto table = metric::compute_centroids(result.encoder, train);
    metric::save_encoder(result.encoder, encoder_path);
    metric::save_centroids(table, centroids_path);
    put(report_json, {{"history", history_report(result.history)},
                      {"fingerprint", result.encoder.fingerprint()},
                      {"classes", table.entries.size()},
                      {"config", {{"encoder", result.encoder.config()}, {"train", tc}}}});
  });
}

gs_status gs_train_cnn(const gs_dataset *ds, const gs_split *split, const char *config_json,
                       const char *model_path, char **report_json) {
  return guard([&] {
    need(ds, "dataset");
    need(split, "split");
    need(model_path, "model_path");
    const auto cfg = parse_opt(config_json).get<cnn::ClassifierConfig>();
    const auto train = subset(*ds, split->split.train, "train");
    const auto val = subset(*ds, split->split.validation, "validation");
    const auto freq = corpus::class_frequencies(train);
    std::vector<std::string> classes;
    for (const auto &[code, n] : freq)
      classes.push_back(code);
    auto result = cnn::train_classifier(cnn::SoftmaxClassifierModel(cfg, classes), train, val,
                                        corpus::class_weights(freq));
    cnn::save_classifier(result.model, model_path);
    put(report_json, {{"history", history_report(result.history)},
                      {"classes", result.model.classes().size()},
                      {"config", result.model.config()}});
  });
}

gs_status gs_train_svm(const gs_dataset *ds, const gs_split *split, const char *config_json,
                       const char *model_path, char **report_json) {
  return guard([&] {
    need(ds, "dataset");
    need(split, "split");
    need(model_path, "model_path");
    const json cfg = parse_opt(config_json);
    const auto features = cfg.value("features", json::object()).get<classic::FeatureConfig>();
    classic::SvmParams params;
    params.c_grid = cfg.value("c_grid", params.c_grid);
    params.tolerance = cfg.value("tolerance", params.tolerance);
    params.max_iterations = cfg.value("max_iterations", params.max_iterations);
    params.seed = cfg.value("seed", params.seed);
    auto encode = [&](const std::vector<corpus::LabeledSample> &samples) {
      classic::LabeledFeatures out;
      for (const auto &s : samples) {
        out.features.push_back(classic::extract_features(s.image, features));
        out.labels.push_back(s.code);
      }
      return out;
    };
    const auto train = subset(*ds, split->split.train, "train");
    const auto val = subset(*ds, split->split.validation, "validation");
    const auto weights = corpus::class_weights(corpus::class_frequencies(train));
    std::optional<classic::LabeledFeatures> vf;
    if (!val.empty())
      vf = encode(val);
    const auto result = classic::train_svm(encode(train), weights, params, vf, features);
    classic::save_model(result.model, model_path);
    json sweep = json::array();
    for (const auto &p : result.sweep)
      sweep.push_back({{"c", p.c}, {"validation_balanced_accuracy", p.validation_balanced_accuracy}});
    put(report_json, {{"c", result.model.c}, {"sweep", sweep}, {"classes", result.model.classes.size()}});
  });
}

gs_status gs_classifier_load(gs_backend backend, const char *paths_json, gs_classifier **out) {
  return guard([&] {
    need(out, "out");
    const json p = parse_opt(paths_json);
    auto clf = std::make_unique<gs_classifier>();
    switch (backend) {
    case GS_BACKEND_DEEP_MML: {
      auto encoder = metric::load_encoder(p.at("encoder").get<std::string>());
      auto table = metric::load_centroids(p.at("centroids").get<std::string>(), encoder);
      std::optional<double> floor;
      if (p.contains("similarity_floor") && !p.at("similarity_floor").is_null())
        floor = p.at("similarity_floor").get<double>();
      clf->impl = std::make_shared<service::MetricClassifier>(std::move(encoder), std::move(table), floor);
      break;
    }
    case GS_BACKEND_CNN_END2END:
      clf->impl = std::make_shared<service::CnnClassifier>(
          cnn::load_classifier(p.at("model").get<std::string>()));
      break;
    case GS_BACKEND_TRAD_ML:
      clf->impl = std::make_shared<service::SvmClassifier>(
          classic::load_model(p.at("model").get<std::string>()));
      break;
    default:
      fail(ErrorCode::InvalidArgument, "unknown backend");
    }
    *out = clf.release();
  });
}

namespace {

json prediction_json(const service::GlyphPrediction &p) {
  return {{"code", p.code},
          {"confidence", p.confidence},
          {"runner_up", p.runner_up},
          {"runner_up_confidence", p.runner_up_confidence}};
}

service::MetricClassifier &as_metric(const gs_classifier *clf) {
  auto *m = dynamic_cast<service::MetricClassifier *>(clf->impl.get());
  if (!m)
    fail(ErrorCode::InvalidArgument, "operation needs a deep_mml classifier");
  return *m;
}

} // namespace

gs_status gs_classifier_classify_file(const gs_classifier *clf, const char *image_path,
                                      char **out) {
  return guard([&] {
    need(clf, "classifier");
    need(image_path, "image_path");
    need(out, "out");
    put(out, prediction_json(clf->impl->classify(load_image(image_path))));
  });
}

gs_status gs_classifier_classify_bytes(const gs_classifier *clf, const uint8_t *bytes, size_t len,
                                       char **out) {
  return guard([&] {
    need(clf, "classifier");
    need(bytes, "bytes");
    need(out, "out");
    put(out, prediction_json(clf->impl->classify(decode_image({bytes, len}))));
  });
}

gs_status gs_classifier_register(gs_classifier *clf, const char *code,
                                 const char *const *image_paths, size_t count, int overwrite) {
  return guard([&] {
    need(clf, "classifier");
    need(code, "code");
    need(image_paths, "image_paths");
    std::vector<Image> images;
    for (size_t i = 0; i < count; ++i) {
      need(image_paths[i], "image path");
      images.push_back(fit_canonical(load_image(image_paths[i]), corpus::kDefaultCanonicalSize));
    }
    as_metric(clf).register_class(code, images, overwrite != 0);
  });
}

gs_status gs_classifier_save_centroids(const gs_classifier *clf, const char *path,
                                       const char *csv_path) {
  return guard([&] {
    need(clf, "classifier");
    need(path, "path");
    const auto table = as_metric(clf).table();
    metric::save_centroids(*table, path);
    if (csv_path)
      io::write_text(csv_path, metric::centroids_csv(*table));
  });
}

void gs_classifier_free(gs_classifier *clf) { delete clf; }

gs_status gs_segment_file(const char *image_path, const char *config_json, const char *overlay_path,
                          const char *crops_dir, char **out) {
  return guard([&] {
    need(image_path, "image_path");
    const auto config = parse_opt(config_json).get<seg::SegmentationConfig>();
    const Image image = load_image(image_path);
    const auto glyphs = seg::segment_region(image, config);
    if (overlay_path)
      save_png(seg::render_overlay(image, glyphs), overlay_path);
    json list = json::array();
    for (std::size_t i = 0; i < glyphs.size(); ++i) {
      const auto &g = glyphs[i];
      json item = {{"bbox", {g.box.x0, g.box.y0, g.box.x1, g.box.y1}},
                   {"area", g.box.area},
                   {"centroid", {g.box.cx, g.box.cy}},
                   {"column", g.column_index},
                   {"order", g.order_index}};
      if (crops_dir) {
        char name[64];
        std::snprintf(name, sizeof name, "c%02d_o%03d.png", g.column_index, g.order_index);
        const auto path = std::filesystem::path(crops_dir) / name;
        std::filesystem::create_directories(crops_dir);
        save_png(g.crop, path);
        item["crop"] = path.string();
      }
      list.push_back(item);
    }
    put(out, {{"width", image.width}, {"height", image.height}, {"glyphs", list}});
  });
}

gs_status gs_assemble_line(const char *input_json, const char *geometry_json, char **out) {
  return guard([&] {
    need(input_json, "input_json");
    need(out, "out");
    const json in = json::parse(input_json);
    require(in.is_array(), "input must be a JSON array of {code, bbox}");
    const json g = parse_opt(geometry_json);
    transcription::LineGeometry geo;
    geo.stack_gap = g.value("stack_gap", geo.stack_gap);
    geo.token_gap = g.value("token_gap", geo.token_gap);
    geo.min_x_overlap = g.value("min_x_overlap", geo.min_x_overlap);
    geo.band_overlap = g.value("band_overlap", geo.band_overlap);
    if (g.contains("excluded"))
      geo.excluded = g.at("excluded").get<std::set<std::string>>();
    std::vector<transcription::PlacedSign> signs;
    for (const auto &item : in) {
      transcription::PlacedSign s;
      s.code = item.at("code").get<std::string>();
      const auto b = item.at("bbox").get<std::vector<int>>();
      require(b.size() == 4, "bbox must be [x0, y0, x1, y1]");
      s.box.x0 = b[0], s.box.y0 = b[1], s.box.x1 = b[2], s.box.y1 = b[3];
      s.source = static_cast<int>(signs.size());
      signs.push_back(std::move(s));
    }
    const auto line = transcription::assemble_lines(signs, geo);
    json tokens = json::array();
    for (const auto &t : line.tokens)
      tokens.push_back(t.render());
    json dropped = json::array();
    for (const auto &d : line.dropped)
      dropped.push_back({{"code", d.code}, {"bbox", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}},
                         {"reason", d.reason}});
    put(out, {{"line", transcription::render_line(line.tokens)}, {"tokens", tokens}, {"dropped", dropped}});
  });
}

gs_status gs_evaluate(const gs_classifier *clf, const gs_dataset *ds, const gs_split *split,
                      const char *subset_name, const char *options_json, const char *out_dir,
                      char **summary_json) {
  return guard([&] {
    need(clf, "classifier");
    need(ds, "dataset");
    need(split, "split");
    need(subset_name, "subset");
    const json opt = parse_opt(options_json);
    const auto samples = subset(*ds, subset_ids(*split, subset_name), subset_name);
    require(!samples.empty(), std::string("subset ") + subset_name + " is empty");

    std::vector<std::string> y_true, y_pred;
    std::vector<eval::ScoredPrediction> scores;
    std::string predictions = "sample_id,true,predicted,confidence,runner_up\n";
    for (const auto &s : samples) {
      const auto p = clf->impl->classify(s.image);
      y_true.push_back(s.code);
      y_pred.push_back(p.code);
      scores.push_back({p.code, p.confidence});
      predictions += csv::format_row({s.sample_id, s.code, p.code, std::to_string(p.confidence),
                                      p.runner_up}) +
                     "\n";
    }
    std::vector<double> thresholds;
    if (opt.contains("thresholds")) {
      thresholds = opt.at("thresholds").get<std::vector<double>>();
    } else if (clf->impl->backend() == service::Backend::TradMl) {
      double lo = scores.front().confidence, hi = lo;
      for (const auto &s : scores)
        lo = std::min(lo, s.confidence), hi = std::max(hi, s.confidence);
      const int n = hi > lo ? 21 : 1;
      for (int i = 0; i < n; ++i)
        thresholds.push_back(lo + (hi - lo) * i / std::max(1, n - 1));
    } else {
      for (int i = 0; i <= 20; ++i)
        thresholds.push_back(i / 20.0);
    }
    const auto report = eval::per_class_report(y_true, y_pred);
    const auto curves = eval::operating_curves(scores, y_true, thresholds);
    json doc = eval::report_json(report, &curves);
    doc["backend"] = service::to_string(clf->impl->backend());
    doc["subset"] = subset_name;
    if (out_dir) {
      const std::filesystem::path dir(out_dir);
      io::write_json(dir / "report.json", doc);
      io::write_text(dir / "report.csv", eval::report_csv(report));
      io::write_text(dir / "predictions.csv", predictions);
    }
    put(summary_json, {{"backend", doc["backend"]},
                       {"subset", subset_name},
                       {"samples", samples.size()},
                       {"balanced_accuracy", report.balanced_accuracy},
                       {"macro_f1", report.macro_f1},
                       {"accuracy", report.micro_f1}});
  });
}

gs_status gs_embedding_map(const gs_classifier *clf, const gs_dataset *ds, const gs_split *split,
                           const char *subset_name, const char *options_json, const char *out_dir) {
  return guard([&] {
    need(clf, "classifier");
    need(ds, "dataset");
    need(split, "split");
    need(subset_name, "subset");
    need(out_dir, "out_dir");
    const auto &m = as_metric(clf);
    const json opt = parse_opt(options_json);
    eval::TsneParams params;
    params.perplexity = opt.value("perplexity", params.perplexity);
    params.iterations = opt.value("iterations", params.iterations);
    params.seed = opt.value("seed", params.seed);
    params.learning_rate = opt.value("learning_rate", params.learning_rate);
    params.exaggeration_iterations = opt.value("exaggeration_iterations", params.exaggeration_iterations);
    params.exaggeration = opt.value("exaggeration", params.exaggeration);
    const auto samples = subset(*ds, subset_ids(*split, subset_name), subset_name);
    std::vector<std::vector<float>> emb;
    std::vector<std::string> codes;
    for (const auto &s : samples) {
      emb.push_back(metric::embed(m.encoder(), s.image));
      codes.push_back(s.code);
    }
    const auto map = eval::embedding_map(emb, codes, params);
    const std::filesystem::path dir(out_dir);
    io::write_json(dir / "map.json", eval::map_json(map));
    io::write_text(dir / "map.svg", eval::map_svg(map));
  });
}

gs_status gs_server_create(const char *config_path, gs_server **out) {
  return guard([&] {
    need(out, "out");
    std::optional<std::filesystem::path> path;
    if (config_path && *config_path)
      path = config_path;
    auto config = service::load_config(path);
    auto models = service::ModelRegistry::load(config);
    auto srv = std::make_unique<gs_server>();
    srv->service = std::make_shared<service::Service>(std::move(config), std::move(models));
    srv->http = std::make_unique<service::HttpServer>(srv->service);
    *out = srv.release();
  });
}

gs_status gs_server_start(gs_server *srv, const char *host, int port, int *bound_port) {
  return guard([&] {
    need(srv, "server");
    const std::string h = host && *host ? host : srv->service->config().host;
    const int p = srv->http->start(h, port);
    if (bound_port)
      *bound_port = p;
  });
}

gs_status gs_server_run(gs_server *srv) {
  return guard([&] {
    need(srv, "server");
    const auto &cfg = srv->service->config();
    srv->http->bind(cfg.host, cfg.port);
    srv->http->listen();
  });
}

gs_status gs_server_stop(gs_server *srv) {
  return guard([&] {
    need(srv, "server");
    srv->http->stop();
  });
}

void gs_server_free(gs_server *srv) { delete srv; }

} // extern "C"
