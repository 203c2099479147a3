#include "support.hpp"

#include "glyphscribe/io.hpp"
#include "glyphscribe/service.hpp"
#include "glyphscribe/synthetic.hpp"
#include "stub_classifier.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

using namespace glyphscribe;
using namespace glyphscribe::service;

namespace {

using testing::StubClassifier;

struct Fixture {
  synth::GlyphFamily family{6, 3};
  synth::SyntheticPage page = synth::render_page(family, {}, 12);
  std::shared_ptr<ModelRegistry> models = std::make_shared<ModelRegistry>();
  std::shared_ptr<StubClassifier> mml = std::make_shared<StubClassifier>(Backend::DeepMml, "A");
  std::shared_ptr<StubClassifier> svm = std::make_shared<StubClassifier>(Backend::TradMl, "G");
  std::unique_ptr<Service> service;

  explicit Fixture(ServiceConfig config = {}) {
    models->set(Backend::DeepMml, mml);
    models->set(Backend::TradMl, svm);
    models->set_unavailable(Backend::CnnEnd2End, "cannot open /nowhere/cnn.json");
    service = std::make_unique<Service>(std::move(config), models);
  }

  std::string session() {
    const auto png = encode_png(page.image);
    return service->create_session(png, {"B1Bo", "CT VII 62d"});
  }
  Roi full() const { return {0, 0, page.image.width, page.image.height}; }
};

} // namespace

TEST_CASE("backend names") {
  for (auto b : {Backend::DeepMml, Backend::TradMl, Backend::CnnEnd2End})
    CHECK(backend_from_string(to_string(b)) == b);
  CHECK_ERROR(backend_from_string("svm"), ErrorCode::InvalidArgument);
}

TEST_CASE("create_session") {
  Fixture f;
  const auto a = f.session();
  const auto b = f.session();
  CHECK(a.size() == 32);
  CHECK(a.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(a != b);
  CHECK(f.service->session_count() == 2);
  const auto j = f.service->session_json(a);
  CHECK(j["backend"] == "deep_mml");
  CHECK(j["metadata"]["support"] == "B1Bo");
  CHECK(j["image"]["width"] == f.page.image.width);

  auto png = encode_png(f.page.image);
  png.resize(png.size() / 2);
  CHECK_ERROR(f.service->create_session(png, {}), ErrorCode::Format);
  const std::vector<std::uint8_t> junk = {1, 2, 3};
  CHECK_ERROR(f.service->create_session(junk, {}), ErrorCode::Format);

  ServiceConfig small;
  small.max_upload_bytes = 100;
  Fixture g(small);
  CHECK_ERROR(g.session(), ErrorCode::PayloadTooLarge);
  ServiceConfig few;
  few.max_pixels = 100;
  Fixture h(few);
  CHECK_ERROR(h.session(), ErrorCode::PayloadTooLarge);
  CHECK_ERROR(f.service->session_json("nope"), ErrorCode::NotFound);
}

TEST_CASE("segment_roi: bounds, blank margin, coordinate translation") {
  Fixture f;
  const auto id = f.session();
  const auto &img = f.page.image;

  CHECK_ERROR(f.service->segment_roi(id, {10, 10, 10, 50}), ErrorCode::InvalidArgument);
  const auto msg = testing::error_message_of([&] {
    f.service->segment_roi(id, {-5, 0, img.width + 10, 40});
  });
  CHECK(msg.find("clamped suggestion [0, 0, " + std::to_string(img.width) + ", 40]") !=
        std::string::npos);
  CHECK_ERROR(f.service->segment_roi("missing", {0, 0, 5, 5}), ErrorCode::NotFound);

  // top margin has no ink
  CHECK(f.service->segment_roi(id, {0, 0, img.width, 20}).empty());

  // an ROI over columns 1 and 2 only
  const int x0 = 30 + 80 - 20, y0 = 10;
  const Roi roi{x0, y0, img.width, img.height};
  const auto glyphs = f.service->segment_roi(id, roi);
  std::vector<synth::PageGlyph> truth;
  for (const auto &g : f.page.glyphs)
    if (g.column >= 1)
      truth.push_back(g);
  REQUIRE(glyphs.size() == truth.size());
  std::set<int> columns;
  for (std::size_t i = 0; i < glyphs.size(); ++i) {
    const auto &b = glyphs[i].box;
    const auto it = std::find_if(truth.begin(), truth.end(), [&](const synth::PageGlyph &t) {
      return std::abs(t.x0 - b.x0) <= 1 && std::abs(t.y0 - b.y0) <= 1 && std::abs(t.x1 - b.x1) <= 1 &&
             std::abs(t.y1 - b.y1) <= 1;
    });
    CHECK(it != truth.end());
    CHECK((b.x0 >= 0 && b.y0 >= 0 && b.x1 <= img.width && b.y1 <= img.height));
    for (auto p : b.pixels) {
      const int x = static_cast<int>(p % static_cast<std::uint32_t>(img.width));
      const int y = static_cast<int>(p / static_cast<std::uint32_t>(img.width));
      CHECK((x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1));
    }
    CHECK(b.cx >= b.x0);
    columns.insert(glyphs[i].column_index);
    CHECK(glyphs[i].column_label.rfind("col", 0) == 0);
  }
  CHECK(columns == std::set<int>{0, 1});
  CHECK(glyphs.front().glyph_id == "g1");

  // a second ROI continues glyph ids and column numbering
  const auto more = f.service->segment_roi(id, {0, 0, x0, img.height});
  REQUIRE(more.size() == 4);
  CHECK(more.front().glyph_id == "g" + std::to_string(glyphs.size() + 1));
  CHECK(more.front().column_index == 2);
  CHECK(f.service->session_json(id)["rois"].size() == 3);
}

TEST_CASE("classify_session: backends, idempotence, missing model") {
  Fixture f;
  const auto id = f.session();
  CHECK(f.service->classify_session(id).empty());
  f.service->segment_roi(id, f.full());

  const auto first = f.service->classify_session(id);
  REQUIRE(first.size() == 12);
  for (const auto &g : first) {
    REQUIRE(g.prediction);
    CHECK(g.predicted_by == Backend::DeepMml);
    CHECK(g.status == transcription::ReviewStatus::Auto);
    CHECK(g.code == g.prediction->code);
    CHECK(g.latency_ms >= 0);
  }
  const auto again = f.service->classify_session(id);
  for (std::size_t i = 0; i < first.size(); ++i)
    CHECK(again[i].code == first[i].code);

  const auto msg = testing::error_message_of([&] {
    f.service->classify_session(id, Backend::CnnEnd2End);
  });
  CHECK(msg.find("/nowhere/cnn.json") != std::string::npos);
  CHECK_ERROR(f.service->classify_session(id, Backend::CnnEnd2End), ErrorCode::Unavailable);

  // switching backend re-runs auto predictions only
  f.service->apply_corrections(id, {{first[0].glyph_id, "M17"}});
  const auto switched = f.service->classify_session(id, Backend::TradMl);
  CHECK(switched[0].code == "M17");
  CHECK(switched[0].predicted_by == Backend::DeepMml);
  for (std::size_t i = 1; i < switched.size(); ++i) {
    CHECK(switched[i].predicted_by == Backend::TradMl);
    CHECK(switched[i].code[0] == 'G');
  }
  CHECK(f.service->session_json(id)["backend"] == "trad_ml");
}

TEST_CASE("corrections and export") {
  Fixture f;
  const auto id = f.session();
  f.service->segment_roi(id, f.full());
  CHECK_ERROR(f.service->export_session(id), ErrorCode::Conflict);
  const auto glyphs = f.service->classify_session(id);

  const auto before = f.service->export_session(id);
  CHECK(before.csv.rfind("support,spell,column,token_index,mdc,review_status\n", 0) == 0);
  CHECK(transcription::parse_csv(before.csv) == before.records);
  for (const auto &r : before.records) {
    CHECK(r.review_status == transcription::ReviewStatus::Auto);
    CHECK(r.support == "B1Bo");
  }

  CHECK_ERROR(f.service->apply_corrections(id, {{glyphs[0].glyph_id, "1X"}}),
              ErrorCode::InvalidArgument);
  const auto msg = testing::error_message_of([&] {
    f.service->apply_corrections(id, {{"g999", "A1"}, {"g998", "A1"}});
  });
  CHECK(msg.find("g999, g998") != std::string::npos);

  // pick a code that differs from the current one
  const std::string target = glyphs[5].code == "Z7" ? "Z8" : "Z7";
  const auto after_glyphs = f.service->apply_corrections(id, {{glyphs[5].glyph_id, target}});
  CHECK(after_glyphs[5].status == transcription::ReviewStatus::Corrected);
  const auto after = f.service->export_session(id);
  REQUIRE(after.records.size() == before.records.size());
  int changed = 0;
  for (std::size_t i = 0; i < after.records.size(); ++i)
    if (after.records[i].mdc != before.records[i].mdc) {
      ++changed;
      CHECK(after.records[i].mdc.find(target) != std::string::npos);
      CHECK(after.records[i].review_status == transcription::ReviewStatus::Corrected);
    }
  CHECK(changed == 1);

  // confirming a prediction keeps the code
  const auto confirmed = f.service->apply_corrections(id, {{glyphs[0].glyph_id, glyphs[0].code}});
  CHECK(confirmed[0].status == transcription::ReviewStatus::Confirmed);

  // excluded editorial code is accepted and dropped from the export
  f.service->apply_corrections(id, {{glyphs[1].glyph_id, "N"}});
  const auto dropped = f.service->export_session(id);
  REQUIRE(dropped.dropped.size() == 1);
  CHECK(dropped.dropped[0].code == "N");

  CHECK(f.service->glyph_crop(id, glyphs[0].glyph_id).width > 0);
  CHECK_ERROR(f.service->glyph_crop(id, "g0"), ErrorCode::NotFound);
}

TEST_CASE("session snapshots") {
  testing::TempDir dir("svc");
  ServiceConfig c;
  c.session_dir = dir.path() / "sessions";
  Fixture f(c);
  const auto id = f.session();
  f.service->segment_roi(id, f.full());
  f.service->classify_session(id);
  CHECK(std::filesystem::exists(c.session_dir / (id + ".png")));
  const auto j = io::read_json(c.session_dir / (id + ".json"));
  CHECK(j["session_id"] == id);
  CHECK(j["glyphs"].size() == 12);
  CHECK(j["glyphs"][0]["prediction"]["backend"] == "deep_mml");
}

TEST_CASE("registry and config") {
  ServiceConfig c;
  c.encoder_path = "/nowhere/encoder.json";
  c.centroids_path = "/nowhere/centroids.csv";
  const auto reg = ModelRegistry::load(c);
  const auto status = reg->status();
  CHECK(status["deep_mml"]["loaded"] == false);
  CHECK(status["cnn_end2end"]["reason"].get<std::string>().find("cnn_path") != std::string::npos);
  const auto msg = testing::error_message_of([&] { reg->get(Backend::DeepMml); });
  CHECK(msg.find("/nowhere/encoder.json") != std::string::npos);
  CHECK_ERROR(reg->set(Backend::CnnEnd2End, std::make_shared<StubClassifier>(Backend::DeepMml, "A")),
              ErrorCode::InvalidArgument);

  ServiceConfig d;
  d.port = 9191;
  d.similarity_floor = 0.4;
  d.segmentation.column_direction = seg::ColumnDirection::RightToLeft;
  const auto back = config_from_json(config_to_json(d));
  CHECK(back.port == 9191);
  CHECK(back.similarity_floor == 0.4);
  CHECK(back.segmentation.column_direction == seg::ColumnDirection::RightToLeft);

  ServiceConfig bad;
  bad.port = 70000;
  CHECK_ERROR(bad.validate(), ErrorCode::InvalidArgument);

  ::setenv("GLYPHSCRIBE_PORT", "8123", 1);
  ::setenv("GLYPHSCRIBE_SIMILARITY_FLOOR", "0.25", 1);
  const auto env = load_config(std::nullopt);
  CHECK(env.port == 8123);
  CHECK(env.similarity_floor == 0.25);
  ::setenv("GLYPHSCRIBE_PORT", "eighty", 1);
  CHECK_ERROR(load_config(std::nullopt), ErrorCode::InvalidArgument);
  ::unsetenv("GLYPHSCRIBE_PORT");
  ::unsetenv("GLYPHSCRIBE_SIMILARITY_FLOOR");
}

TEST_CASE("metric classifier registration is visible to later requests") {
  synth::GlyphFamily family(3, 4);
  metric::EncoderConfig ec;
  ec.backbone.input_size = 16;
  ec.backbone.channels = {8, 16};
  ec.embedding_dim = 32;
  metric::EncoderModel enc(ec);
  std::mt19937_64 rng(1);
  std::vector<Image> a, b;
  for (int i = 0; i < 3; ++i) {
    a.push_back(family.render(0, 32, rng));
    b.push_back(family.render(1, 32, rng));
  }
  auto table = metric::register_class(metric::CentroidTable{}, family.code(0), a, enc);
  MetricClassifier clf(enc, table);
  const auto old = clf.table();
  clf.register_class(family.code(1), b);
  CHECK(old->entries.size() == 1);
  CHECK(clf.classes().size() == 2);
  CHECK_ERROR(clf.register_class(family.code(1), b), ErrorCode::Conflict);
  const auto p = clf.classify(a[0]);
  CHECK(p.runner_up.size() > 0);
  CHECK(p.confidence >= p.runner_up_confidence);
}
