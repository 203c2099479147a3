#pragma once

#include "glyphscribe/classic.hpp"
#include "glyphscribe/cnn.hpp"
#include "glyphscribe/metric.hpp"
#include "glyphscribe/segmentation.hpp"
#include "glyphscribe/transcription.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

namespace glyphscribe::service {

enum class Backend { DeepMml, TradMl, CnnEnd2End };

std::string to_string(Backend b);
Backend backend_from_string(const std::string &s);

struct GlyphPrediction {
  std::string code;
  double confidence = 0; // cosine similarity, softmax probability or SVM decision value
  std::string runner_up;
  double runner_up_confidence = 0;
};

/// Common face of the three backends. Implementations are immutable after
/// construction except for the metric backend's centroid table, which is
/// swapped atomically.
class Classifier {
public:
  virtual ~Classifier() = default;
  virtual Backend backend() const = 0;
  virtual GlyphPrediction classify(const Image &glyph) const = 0;
  virtual std::vector<std::string> classes() const = 0;
};

class MetricClassifier : public Classifier {
public:
  MetricClassifier(metric::EncoderModel encoder, metric::CentroidTable table,
                   std::optional<double> similarity_floor = {});
  Backend backend() const override { return Backend::DeepMml; }
  GlyphPrediction classify(const Image &glyph) const override;
  std::vector<std::string> classes() const override;

  const metric::EncoderModel &encoder() const { return encoder_; }
  std::shared_ptr<const metric::CentroidTable> table() const;
  /// Copy-on-write registration; readers keep the table they started with.
  void register_class(const std::string &code, const std::vector<Image> &images,
                      bool overwrite = false);

private:
  metric::EncoderModel encoder_;
  mutable std::mutex table_mutex_;
  std::shared_ptr<const metric::CentroidTable> table_;
  std::optional<double> floor_;
};

class CnnClassifier : public Classifier {
public:
  explicit CnnClassifier(cnn::SoftmaxClassifierModel model) : model_(std::move(model)) {}
  Backend backend() const override { return Backend::CnnEnd2End; }
  GlyphPrediction classify(const Image &glyph) const override;
  std::vector<std::string> classes() const override { return model_.classes(); }

private:
  cnn::SoftmaxClassifierModel model_;
};

class SvmClassifier : public Classifier {
public:
  explicit SvmClassifier(classic::LinearClassifierModel model) : model_(std::move(model)) {}
  Backend backend() const override { return Backend::TradMl; }
  GlyphPrediction classify(const Image &glyph) const override;
  std::vector<std::string> classes() const override { return model_.classes; }

private:
  classic::LinearClassifierModel model_;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_upload_bytes = 32u << 20;
  std::size_t max_pixels = 64u << 20;
  std::filesystem::path encoder_path;
  std::filesystem::path centroids_path;
  std::filesystem::path cnn_path;
  std::filesystem::path svm_path;
  std::optional<double> similarity_floor;
  std::filesystem::path session_dir; // empty: no snapshots
  seg::SegmentationConfig segmentation;
  transcription::LineGeometry geometry;
  int threads = 4;

  void validate() const;
};

nlohmann::json config_to_json(const ServiceConfig &c);
ServiceConfig config_from_json(const nlohmann::json &j);

/// Reads an optional JSON file, then applies GLYPHSCRIBE_* environment
/// overrides (HOST, PORT, MAX_UPLOAD_BYTES, ENCODER, CENTROIDS, CNN, SVM,
/// SESSION_DIR, SIMILARITY_FLOOR).
ServiceConfig load_config(const std::optional<std::filesystem::path> &file);
void apply_env_overrides(ServiceConfig &config);

/// Holds whichever backends could be loaded and why the others could not.
class ModelRegistry {
public:
  static std::shared_ptr<ModelRegistry> load(const ServiceConfig &config);

  void set(Backend b, std::shared_ptr<Classifier> classifier);
  void set_unavailable(Backend b, std::string reason);
  /// Throws Unavailable naming the missing model file.
  std::shared_ptr<const Classifier> get(Backend b) const;
  std::shared_ptr<Classifier> get_mutable(Backend b) const;
  nlohmann::json status() const;

private:
  mutable std::shared_mutex mutex_;
  std::map<Backend, std::shared_ptr<Classifier>> loaded_;
  std::map<Backend, std::string> missing_;
};

struct Roi {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct SessionGlyph {
  std::string glyph_id;
  seg::ComponentBox box; // facsimile coordinates
  int column_index = 0;  // session-wide
  std::string column_label;
  int order_index = 0;
  Image crop;
  std::optional<GlyphPrediction> prediction;
  std::optional<Backend> predicted_by;
  double latency_ms = 0;
  std::string code; // current code (prediction or correction)
  transcription::ReviewStatus status = transcription::ReviewStatus::Auto;
};

struct SessionMetadata {
  std::string support;
  std::string spell;
};

struct Session {
  std::string id;
  Image facsimile;
  SessionMetadata metadata;
  Backend backend = Backend::DeepMml;
  std::vector<Roi> rois;
  std::vector<SessionGlyph> glyphs;
  int next_column = 0;
  mutable std::mutex mutex; // serializes requests within the session
};

struct Correction {
  std::string glyph_id;
  std::string code;
};

struct ExportResult {
  std::string csv;
  std::vector<transcription::TranscriptionRecord> records;
  std::vector<transcription::DroppedSign> dropped;
};

/// Session store and workflow operations, independent of the HTTP layer.
class Service {
public:
  Service(ServiceConfig config, std::shared_ptr<ModelRegistry> models);

  const ServiceConfig &config() const { return config_; }
  ModelRegistry &models() { return *models_; }

  std::string create_session(std::span<const std::uint8_t> image_bytes,
                             const SessionMetadata &metadata);
  std::vector<SessionGlyph> segment_roi(const std::string &session_id, const Roi &roi);
  std::vector<SessionGlyph> classify_session(const std::string &session_id,
                                             std::optional<Backend> backend = {});
  std::vector<SessionGlyph> apply_corrections(const std::string &session_id,
                                              const std::vector<Correction> &corrections);
  ExportResult export_session(const std::string &session_id);

  nlohmann::json session_json(const std::string &session_id) const;
  Image glyph_crop(const std::string &session_id, const std::string &glyph_id) const;
  std::size_t session_count() const;

private:
  std::shared_ptr<Session> find(const std::string &id) const;
  void snapshot(const Session &s) const;

  ServiceConfig config_;
  std::shared_ptr<ModelRegistry> models_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

nlohmann::json glyph_json(const SessionGlyph &g);

} // namespace glyphscribe::service
