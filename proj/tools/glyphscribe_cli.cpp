// Command-line front end. Talks to the library only through the C API.
#include <glyphscribe/glyphscribe.h>

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace {

struct Failure : std::runtime_error {
  gs_status status;
  Failure(gs_status s, const std::string &msg) : std::runtime_error(msg), status(s) {}
};

void check(gs_status s) {
  if (s != GS_OK)
    throw Failure(s, std::string(gs_status_name(s)) + ": " + gs_last_error());
}

// Takes ownership of a library string and prints it.
void emit(char *s) {
  if (s) {
    std::cout << s << "\n";
    gs_string_free(s);
  }
}

std::string slurp(const std::string &path) {
  if (path.empty())
    return {};
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Failure(GS_ERR_IO, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char *opt_c(const std::string &s) { return s.empty() ? nullptr : s.c_str(); }

template <typename T, void (*Free)(T *)> struct Handle {
  T *p = nullptr;
  ~Handle() { Free(p); }
};

using Dataset = Handle<gs_dataset, gs_dataset_free>;
using Split = Handle<gs_split, gs_split_free>;
using Classifier = Handle<gs_classifier, gs_classifier_free>;
using Server = Handle<gs_server, gs_server_free>;

gs_backend parse_backend(const std::string &name) {
  if (name == "deep_mml")
    return GS_BACKEND_DEEP_MML;
  if (name == "trad_ml")
    return GS_BACKEND_TRAD_ML;
  if (name == "cnn_end2end")
    return GS_BACKEND_CNN_END2END;
  throw Failure(GS_ERR_INVALID_ARGUMENT, "unknown backend '" + name + "'");
}

struct ModelPaths {
  std::string backend = "deep_mml";
  std::string encoder, centroids, model;
  double floor = -2.0;

  void add(CLI::App *cmd) {
    cmd->add_option("--backend", backend, "deep_mml, trad_ml or cnn_end2end")
        ->check(CLI::IsMember({"deep_mml", "trad_ml", "cnn_end2end"}));
    cmd->add_option("--encoder", encoder, "encoder file (deep_mml)");
    cmd->add_option("--centroids", centroids, "centroid table (deep_mml)");
    cmd->add_option("--model", model, "model file (trad_ml, cnn_end2end)");
    cmd->add_option("--similarity-floor", floor, "reject below this cosine (deep_mml)");
  }

  void load(Classifier &clf) const {
    std::string j;
    auto quote = [](const std::string &s) {
      std::string out = "\"";
      for (char c : s) {
        if (c == '"' || c == '\\')
          out += '\\';
        out += c;
      }
      return out + "\"";
    };
    if (backend == "deep_mml") {
      j = "{\"encoder\":" + quote(encoder) + ",\"centroids\":" + quote(centroids);
      if (floor > -2.0)
        j += ",\"similarity_floor\":" + std::to_string(floor);
      j += "}";
    } else {
      j = "{\"model\":" + quote(model) + "}";
    }
    check(gs_classifier_load(parse_backend(backend), j.c_str(), &clf.p));
  }
};

gs_server *g_server = nullptr;

void on_signal(int) {
  if (g_server)
    gs_server_stop(g_server);
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"glyphscribe: hieroglyph sign recognition and transcription"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");

  // synth
  auto *synth = app.add_subcommand("synth", "generate synthetic data");
  synth->require_subcommand(1);
  auto *synth_ds = synth->add_subcommand("dataset", "write a labelled crop dataset");
  std::string synth_root, synth_opts;
  int synth_classes = 20, synth_per_class = 60;
  std::uint64_t synth_seed = 1;
  synth_ds->add_option("root", synth_root)->required();
  synth_ds->add_option("--classes", synth_classes);
  synth_ds->add_option("--per-class", synth_per_class);
  synth_ds->add_option("--seed", synth_seed);
  synth_ds->add_option("--options", synth_opts, "JSON file with generator options");
  auto *synth_page = synth->add_subcommand("page", "render a page with columns of glyphs");
  std::string page_path, page_layout, page_truth;
  synth_page->add_option("png", page_path)->required();
  synth_page->add_option("--seed", synth_seed);
  synth_page->add_option("--layout", page_layout, "JSON file with layout options");
  synth_page->add_option("--truth", page_truth, "write the ground truth JSON here");

  // split
  auto *split = app.add_subcommand("split", "make train/validation/test splits");
  std::string split_data, split_out, split_ratios;
  std::vector<std::string> held_pages;
  std::uint64_t split_seed = 1;
  split->add_option("dataset", split_data)->required();
  split->add_option("-o,--out", split_out)->required();
  split->add_option("--held-out-page", held_pages, "page id to hold out (repeatable)");
  split->add_option("--ratios", split_ratios, "JSON {train, validation, test}");
  split->add_option("--seed", split_seed);

  // training
  std::string tr_data, tr_split, tr_config, tr_report;
  auto add_train_common = [&](CLI::App *cmd) {
    cmd->add_option("dataset", tr_data)->required();
    cmd->add_option("--split", tr_split)->required();
    cmd->add_option("--config", tr_config, "JSON config file");
    cmd->add_option("--report", tr_report, "write the training report here");
  };
  auto *train_mml = app.add_subcommand("train-mml", "train the metric-learning encoder");
  std::string out_encoder, out_centroids;
  add_train_common(train_mml);
  train_mml->add_option("--encoder", out_encoder)->required();
  train_mml->add_option("--centroids", out_centroids)->required();
  auto *train_cnn = app.add_subcommand("train-cnn", "train the softmax CNN baseline");
  std::string out_model;
  add_train_common(train_cnn);
  train_cnn->add_option("--model", out_model)->required();
  auto *train_svm = app.add_subcommand("train-svm", "train the HOG + linear SVM baseline");
  add_train_common(train_svm);
  train_svm->add_option("--model", out_model)->required();

  // register
  auto *reg = app.add_subcommand("register", "add a class to a centroid table");
  std::string reg_encoder, reg_centroids, reg_out, reg_csv, reg_code;
  std::vector<std::string> reg_images;
  bool reg_overwrite = false;
  reg->add_option("--encoder", reg_encoder)->required();
  reg->add_option("--centroids", reg_centroids)->required();
  reg->add_option("--code", reg_code)->required();
  reg->add_option("images", reg_images)->required();
  reg->add_option("-o,--out", reg_out, "output table (default: overwrite --centroids)");
  reg->add_option("--csv", reg_csv, "also write the table as CSV");
  reg->add_flag("--overwrite", reg_overwrite, "replace an existing class");

  // segment
  auto *segment = app.add_subcommand("segment", "segment an image into glyph boxes");
  std::string seg_image, seg_config, seg_overlay, seg_crops;
  segment->add_option("image", seg_image)->required();
  segment->add_option("--config", seg_config, "JSON segmentation config");
  segment->add_option("--overlay", seg_overlay, "write an overlay PNG");
  segment->add_option("--crops", seg_crops, "write crops into this directory");

  // classify
  auto *classify = app.add_subcommand("classify", "classify glyph crops");
  ModelPaths cls_paths;
  std::vector<std::string> cls_images;
  cls_paths.add(classify);
  classify->add_option("images", cls_images)->required();

  // evaluate
  auto *evaluate = app.add_subcommand("evaluate", "evaluate a model on a split subset");
  ModelPaths ev_paths;
  std::string ev_data, ev_split, ev_subset = "test_random", ev_out, ev_opts;
  ev_paths.add(evaluate);
  evaluate->add_option("dataset", ev_data)->required();
  evaluate->add_option("--split", ev_split)->required();
  evaluate->add_option("--subset", ev_subset);
  evaluate->add_option("-o,--out", ev_out, "report directory");
  evaluate->add_option("--options", ev_opts, "JSON file {thresholds}");

  // tsne
  auto *tsne = app.add_subcommand("tsne", "2-D map of metric embeddings");
  ModelPaths ts_paths;
  tsne->add_option("--encoder", ts_paths.encoder)->required();
  tsne->add_option("--centroids", ts_paths.centroids)->required();
  tsne->add_option("dataset", ev_data)->required();
  tsne->add_option("--split", ev_split)->required();
  tsne->add_option("--subset", ev_subset);
  tsne->add_option("-o,--out", ev_out)->required();
  tsne->add_option("--options", ev_opts, "JSON file with t-SNE parameters");

  // assemble
  auto *assemble = app.add_subcommand("assemble", "assemble labelled boxes into a transcription");
  std::string as_input, as_geometry;
  assemble->add_option("input", as_input, "JSON [{code, bbox}]")->required();
  assemble->add_option("--geometry", as_geometry, "JSON geometry file");

  // serve
  auto *serve = app.add_subcommand("serve", "run the HTTP service");
  std::string srv_config;
  serve->add_option("--config", srv_config, "JSON service config");

  CLI11_PARSE(app, argc, argv);

  try {
    check(gs_set_log_level(log_level.c_str()));
    char *out = nullptr;

    if (synth_ds->parsed()) {
      check(gs_synth_dataset(synth_root.c_str(), synth_classes, synth_per_class, synth_seed,
                             opt_c(slurp(synth_opts))));
    } else if (synth_page->parsed()) {
      check(gs_synth_page(page_path.c_str(), synth_seed, opt_c(slurp(page_layout)), &out));
      if (!page_truth.empty()) {
        std::ofstream(page_truth) << out << "\n";
        gs_string_free(out);
      } else {
        emit(out);
      }
    } else if (split->parsed()) {
      Dataset ds;
      check(gs_dataset_load(split_data.c_str(), 0, &ds.p));
      std::string held = "[";
      for (std::size_t i = 0; i < held_pages.size(); ++i)
        held += (i ? ",\"" : "\"") + held_pages[i] + "\"";
      held += "]";
      Split s;
      check(gs_split_make(ds.p, opt_c(split_ratios), held.c_str(), split_seed, &s.p));
      check(gs_split_save(s.p, split_out.c_str()));
      check(gs_split_summary(s.p, &out));
      emit(out);
    } else if (train_mml->parsed() || train_cnn->parsed() || train_svm->parsed()) {
      Dataset ds;
      Split s;
      check(gs_dataset_load(tr_data.c_str(), 0, &ds.p));
      check(gs_split_load(tr_split.c_str(), &s.p));
      const std::string cfg = slurp(tr_config);
      if (train_mml->parsed())
        check(gs_train_metric(ds.p, s.p, opt_c(cfg), out_encoder.c_str(), out_centroids.c_str(), &out));
      else if (train_cnn->parsed())
        check(gs_train_cnn(ds.p, s.p, opt_c(cfg), out_model.c_str(), &out));
      else
        check(gs_train_svm(ds.p, s.p, opt_c(cfg), out_model.c_str(), &out));
      if (!tr_report.empty())
        std::ofstream(tr_report) << out << "\n";
      emit(out);
    } else if (reg->parsed()) {
      ModelPaths p;
      p.encoder = reg_encoder;
      p.centroids = reg_centroids;
      Classifier clf;
      p.load(clf);
      std::vector<const char *> paths;
      for (const auto &img : reg_images)
        paths.push_back(img.c_str());
      check(gs_classifier_register(clf.p, reg_code.c_str(), paths.data(), paths.size(), reg_overwrite));
      const std::string dest = reg_out.empty() ? reg_centroids : reg_out;
      check(gs_classifier_save_centroids(clf.p, dest.c_str(), opt_c(reg_csv)));
      std::cout << "registered " << reg_code << " from " << reg_images.size() << " images -> " << dest
                << "\n";
    } else if (segment->parsed()) {
      check(gs_segment_file(seg_image.c_str(), opt_c(slurp(seg_config)), opt_c(seg_overlay),
                            opt_c(seg_crops), &out));
      emit(out);
    } else if (classify->parsed()) {
      Classifier clf;
      cls_paths.load(clf);
      for (const auto &img : cls_images) {
        check(gs_classifier_classify_file(clf.p, img.c_str(), &out));
        std::cout << img << "\n";
        emit(out);
      }
    } else if (evaluate->parsed() || tsne->parsed()) {
      Dataset ds;
      Split s;
      Classifier clf;
      check(gs_dataset_load(ev_data.c_str(), 0, &ds.p));
      check(gs_split_load(ev_split.c_str(), &s.p));
      if (evaluate->parsed()) {
        ev_paths.load(clf);
        check(gs_evaluate(clf.p, ds.p, s.p, ev_subset.c_str(), opt_c(slurp(ev_opts)), opt_c(ev_out),
                          &out));
        emit(out);
      } else {
        ts_paths.load(clf);
        check(gs_embedding_map(clf.p, ds.p, s.p, ev_subset.c_str(), opt_c(slurp(ev_opts)),
                               ev_out.c_str()));
        std::cout << "wrote " << ev_out << "/map.json and map.svg\n";
      }
    } else if (assemble->parsed()) {
      check(gs_assemble_line(slurp(as_input).c_str(), opt_c(slurp(as_geometry)), &out));
      emit(out);
    } else if (serve->parsed()) {
      Server srv;
      check(gs_server_create(opt_c(srv_config), &srv.p));
      g_server = srv.p;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      check(gs_server_run(srv.p));
      g_server = nullptr;
    }
  } catch (const Failure &f) {
    std::cerr << "error: " << f.what() << "\n";
    return f.status == GS_ERR_INTERNAL ? 70 : 1;
  }
  return 0;
}
