// Exercises the shared library through its C header only.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <glyphscribe/glyphscribe.h>

#include <httplib.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Dir {
  fs::path path;
  Dir() {
    path = fs::temp_directory_path() / ("glyphscribe_capi_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~Dir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string &name) const { return (path / name).string(); }
};

// Takes ownership of a returned string.
json take(char *s) {
  REQUIRE(s != nullptr);
  const auto j = json::parse(s);
  gs_string_free(s);
  return j;
}

struct Corpus {
  Dir dir;
  gs_dataset *ds = nullptr;
  gs_split *split = nullptr;

  Corpus() {
    gs_set_log_level("error");
    REQUIRE(gs_synth_dataset((dir / "data").c_str(), 5, 16, 3,
                             R"({"size": 60, "pages": 4, "family_seed": 11})") == GS_OK);
    REQUIRE(gs_dataset_load((dir / "data").c_str(), 60, &ds) == GS_OK);
    REQUIRE(gs_split_make(ds, R"({"train": 0.7, "validation": 0.15, "test": 0.15})", nullptr, 5,
                          &split) == GS_OK);
  }
  ~Corpus() {
    gs_split_free(split);
    gs_dataset_free(ds);
  }
};

const char *kMetricConfig = R"({
  "encoder": {"backbone": {"input_size": 16, "channels": [8, 16]}, "embedding_dim": 32},
  "train": {"schedule": {"max_epochs": 3}, "pairs_per_epoch": 200, "validation_pairs": 60}
})";

} // namespace

TEST_CASE("status names, version, last error") {
  CHECK(std::string(gs_version()).size() > 0);
  CHECK(std::string(gs_status_name(GS_OK)) == "ok");
  CHECK(std::string(gs_status_name(GS_ERR_UNAVAILABLE)) == "unavailable");
  CHECK(std::string(gs_status_name(static_cast<gs_status>(55))) == "unknown");

  gs_dataset *ds = nullptr;
  CHECK(gs_dataset_load("/definitely/not/here", 64, &ds) != GS_OK);
  CHECK(ds == nullptr);
  CHECK(std::string(gs_last_error()).size() > 0);
  CHECK(gs_dataset_load(nullptr, 64, &ds) == GS_ERR_INVALID_ARGUMENT);
  CHECK(std::string(gs_last_error()).find("root") != std::string::npos);
  CHECK(gs_set_log_level("loud") == GS_ERR_INVALID_ARGUMENT);
  CHECK(gs_set_log_level("error") == GS_OK);

  char *out = nullptr;
  CHECK(gs_assemble_line("[{not json", nullptr, &out) == GS_ERR_INVALID_ARGUMENT);
  CHECK(out == nullptr);

  // null handles are accepted by the free functions
  gs_dataset_free(nullptr);
  gs_split_free(nullptr);
  gs_classifier_free(nullptr);
  gs_server_free(nullptr);
  gs_string_free(nullptr);
}

TEST_CASE("assemble line through the C API") {
  const char *input = R"([
    {"code": "N35", "bbox": [30, 0, 70, 6]},   {"code": "G5", "bbox": [35, 9, 65, 45]},
    {"code": "Z11", "bbox": [30, 61, 46, 81]}, {"code": "Q1", "bbox": [54, 61, 70, 81]},
    {"code": "D4", "bbox": [32, 97, 68, 109]}, {"code": "X1", "bbox": [38, 112, 62, 122]},
    {"code": "N35", "bbox": [30, 125, 70, 131]}])";
  char *out = nullptr;
  REQUIRE(gs_assemble_line(input, nullptr, &out) == GS_OK);
  const auto j = take(out);
  CHECK(j["line"] == "N35:G5-Z11*Q1-D4:X1:N35");
  CHECK(j["tokens"].size() == 3);
  CHECK(gs_assemble_line(R"([{"code": "1X", "bbox": [0, 0, 4, 4]}])", nullptr, &out) ==
        GS_ERR_INVALID_ARGUMENT);
}

TEST_CASE("corpus, training, classification, evaluation") {
  Corpus c;
  CHECK(gs_dataset_size(c.ds) == 80);
  char *out = nullptr;
  REQUIRE(gs_dataset_summary(c.ds, &out) == GS_OK);
  const auto summary = take(out);
  CHECK(summary["classes"].size() == 5);

  REQUIRE(gs_split_summary(c.split, &out) == GS_OK);
  const auto sizes = take(out);
  CHECK(sizes["train"].get<int>() + sizes["validation"].get<int>() +
            sizes["test_random"].get<int>() + sizes["test_pages"].get<int>() ==
        80);
  REQUIRE(gs_split_save(c.split, (c.dir / "split.json").c_str()) == GS_OK);
  gs_split *again = nullptr;
  REQUIRE(gs_split_load((c.dir / "split.json").c_str(), &again) == GS_OK);
  REQUIRE(gs_split_summary(again, &out) == GS_OK);
  CHECK(take(out) == sizes);
  gs_split_free(again);

  SUBCASE("deep_mml") {
    const auto enc = c.dir / "enc.json", cen = c.dir / "cen.json";
    REQUIRE(gs_train_metric(c.ds, c.split, kMetricConfig, enc.c_str(), cen.c_str(), &out) == GS_OK);
    const auto report = take(out);
    CHECK(report["classes"] == 5);
    CHECK(report["history"]["epochs"].size() >= 2);

    gs_classifier *clf = nullptr;
    const json paths = {{"encoder", enc}, {"centroids", cen}};
    REQUIRE(gs_classifier_load(GS_BACKEND_DEEP_MML, paths.dump().c_str(), &clf) == GS_OK);

    // classify one dataset file
    std::string any;
    for (const auto &e : fs::recursive_directory_iterator(c.dir / "data"))
      if (e.path().extension() == ".png") {
        any = e.path().string();
        break;
      }
    REQUIRE(gs_classifier_classify_file(clf, any.c_str(), &out) == GS_OK);
    const auto p = take(out);
    CHECK(p["confidence"].get<double>() <= 1.0 + 1e-9);
    CHECK(p["confidence"].get<double>() >= p["runner_up_confidence"].get<double>());

    std::ifstream in(any, std::ios::binary);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
    REQUIRE(gs_classifier_classify_bytes(clf, bytes.data(), bytes.size(), &out) == GS_OK);
    CHECK(take(out) == p);
    CHECK(gs_classifier_classify_bytes(clf, bytes.data(), 10, &out) == GS_ERR_FORMAT);

    // register a new class from existing files
    std::vector<std::string> files;
    for (const auto &e : fs::directory_iterator(fs::path(any).parent_path()))
      if (e.path().extension() == ".png" && files.size() < 5)
        files.push_back(e.path().string());
    std::vector<const char *> ptrs;
    for (const auto &f : files)
      ptrs.push_back(f.c_str());
    REQUIRE(gs_classifier_register(clf, "Aa99", ptrs.data(), ptrs.size(), 0) == GS_OK);
    CHECK(gs_classifier_register(clf, "Aa99", ptrs.data(), ptrs.size(), 0) == GS_ERR_CONFLICT);
    CHECK(gs_classifier_register(clf, "9Z", ptrs.data(), ptrs.size(), 0) == GS_ERR_INVALID_ARGUMENT);
    REQUIRE(gs_classifier_save_centroids(clf, (c.dir / "cen2.json").c_str(),
                                         (c.dir / "cen2.csv").c_str()) == GS_OK);
    CHECK(fs::exists(c.dir / "cen2.csv"));

    REQUIRE(gs_evaluate(clf, c.ds, c.split, "test_random", nullptr, c.dir.path.c_str(), &out) == GS_OK);
    const auto ev = take(out);
    CHECK(ev["backend"] == "deep_mml");
    CHECK(ev["balanced_accuracy"].get<double>() >= 0.0);
    CHECK(fs::exists(c.dir / "report.json"));
    CHECK(fs::exists(c.dir / "predictions.csv"));
    CHECK(gs_evaluate(clf, c.ds, c.split, "everything", nullptr, nullptr, &out) ==
          GS_ERR_INVALID_ARGUMENT);

    REQUIRE(gs_embedding_map(clf, c.ds, c.split, "train", R"({"perplexity": 5, "iterations": 300})",
                             c.dir.path.c_str()) == GS_OK);
    CHECK(fs::exists(c.dir / "map.svg"));
    CHECK(gs_embedding_map(clf, c.ds, c.split, "test_random", nullptr, c.dir.path.c_str()) ==
          GS_ERR_INVALID_ARGUMENT);
    gs_classifier_free(clf);

    CHECK(gs_classifier_load(GS_BACKEND_DEEP_MML, R"({"encoder": "/nope", "centroids": "/nope"})",
                             &clf) != GS_OK);
  }

  SUBCASE("cnn_end2end") {
    const auto model = c.dir / "cnn.json";
    REQUIRE(gs_train_cnn(c.ds, c.split,
                         R"({"backbone": {"input_size": 16, "channels": [8, 16]}, "hidden": 32,
                             "schedule": {"max_epochs": 3}})",
                         model.c_str(), &out) == GS_OK);
    CHECK(take(out)["classes"] == 5);
    gs_classifier *clf = nullptr;
    REQUIRE(gs_classifier_load(GS_BACKEND_CNN_END2END, json({{"model", model}}).dump().c_str(), &clf) ==
            GS_OK);
    REQUIRE(gs_evaluate(clf, c.ds, c.split, "validation", nullptr, nullptr, &out) == GS_OK);
    CHECK(take(out)["backend"] == "cnn_end2end");
    const char *none[] = {nullptr};
    CHECK(gs_classifier_register(clf, "A1", none, 0, 0) == GS_ERR_INVALID_ARGUMENT);
    gs_classifier_free(clf);
  }

  SUBCASE("trad_ml") {
    const auto model = c.dir / "svm.json";
    const auto st = gs_train_svm(c.ds, c.split, R"({"features": {"image_size": 60}, "c_grid": [1.0]})",
                                 model.c_str(), &out);
    INFO(std::string(gs_last_error()));
    REQUIRE(st == GS_OK);
    CHECK(take(out)["classes"] == 5);
    gs_classifier *clf = nullptr;
    REQUIRE(gs_classifier_load(GS_BACKEND_TRAD_ML, json({{"model", model}}).dump().c_str(), &clf) ==
            GS_OK);
    REQUIRE(gs_evaluate(clf, c.ds, c.split, "test_random", nullptr, nullptr, &out) == GS_OK);
    CHECK(take(out)["backend"] == "trad_ml");
    gs_classifier_free(clf);
  }
}

TEST_CASE("synthetic page and segmentation") {
  Dir dir;
  char *truth = nullptr;
  REQUIRE(gs_synth_page((dir / "page.png").c_str(), 9, R"({"columns": 2, "editorial_mark": true})",
                        &truth) == GS_OK);
  const auto t = take(truth);
  CHECK(t["glyphs"].size() == 8);
  CHECK(t.contains("editorial_mark"));

  char *out = nullptr;
  REQUIRE(gs_segment_file((dir / "page.png").c_str(), nullptr, (dir / "overlay.png").c_str(),
                          (dir / "crops").c_str(), &out) == GS_OK);
  const auto seg = take(out);
  CHECK(seg["glyphs"].size() == 8);
  CHECK(fs::exists(dir / "overlay.png"));
  CHECK(fs::exists(fs::path(seg["glyphs"][0]["crop"].get<std::string>())));
  CHECK(gs_segment_file((dir / "missing.png").c_str(), nullptr, nullptr, nullptr, &out) == GS_ERR_IO);
  CHECK(gs_segment_file((dir / "page.png").c_str(), R"({"window": 4})", nullptr, nullptr, &out) ==
        GS_ERR_INVALID_ARGUMENT);
}

TEST_CASE("server lifecycle") {
  gs_server *srv = nullptr;
  REQUIRE(gs_server_create(nullptr, &srv) == GS_OK);
  int port = 0;
  REQUIRE(gs_server_start(srv, "127.0.0.1", 0, &port) == GS_OK);
  CHECK(port > 0);
  httplib::Client client("127.0.0.1", port);
  auto r = client.Get("/health");
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto h = json::parse(r->body);
  CHECK(h["backends"]["deep_mml"]["loaded"] == false);
  REQUIRE(gs_server_stop(srv) == GS_OK);
  gs_server_free(srv);
  CHECK(gs_server_create("/no/such/config.json", &srv) != GS_OK);
}
