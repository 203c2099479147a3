#pragma once

#include "glyphscribe/corpus.hpp"
#include "glyphscribe/image.hpp"
#include "glyphscribe/nn.hpp"
#include "glyphscribe/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace glyphscribe::metric {

/// Cosine contrastive loss; y = 0 for same-class pairs, 1 otherwise.
double contrastive_loss(double s, int y, double margin);

struct PairGradient {
  double loss = 0;
  double similarity = 0;
  std::vector<double> grad_a, grad_b;
};

/// Loss of the cosine similarity of two raw (unnormalized) vectors and its
/// gradient with respect to both.
PairGradient cosine_contrastive(const std::vector<double> &a, const std::vector<double> &b, int y,
                                double margin);

enum class MirrorAxis { Horizontal, Vertical };

struct AugmentConfig {
  double probability = 0.5;
  double rotation_degrees = 15.0;
  double shift_fraction = 0.08;
  MirrorAxis mirror_axis = MirrorAxis::Horizontal; // left-right flips only
  double band_max_fraction = 0.12;                 // border band thickness
  double occlusion_max_radius = 0.12;              // fraction of the side
  int max_occlusions = 2;

  void validate() const;
};

struct MetricTrainConfig {
  double margin = 0.5;
  AugmentConfig augment;
  train::Schedule schedule;
  std::size_t pairs_per_epoch = 50000;
  std::size_t validation_pairs = 2000;
  double positive_fraction = 0.5;

  void validate() const;
};

void to_json(nlohmann::json &j, const MetricTrainConfig &c);
void from_json(const nlohmann::json &j, MetricTrainConfig &c);

/// With probability `probability` applies a non-empty random composition of
/// rotation, shift, mirror, border band and circular occlusion.
Image augment(const Image &image, const AugmentConfig &config, std::mt19937_64 &rng);

struct PairSample {
  std::size_t a = 0, b = 0; // indices into the sample list
  int y = 0;                // 0 same class, 1 different
};

/// Class-uniform anchors; positive pairs never reuse a sample.
std::vector<PairSample> sample_pairs(const std::vector<corpus::LabeledSample> &samples,
                                     std::size_t count, double positive_fraction,
                                     std::mt19937_64 &rng);

struct EncoderConfig {
  nn::BackboneConfig backbone;
  int embedding_dim = 128;
  std::uint64_t seed = 7;

  void validate() const;
};

void to_json(nlohmann::json &j, const EncoderConfig &c);
void from_json(const nlohmann::json &j, EncoderConfig &c);

/// Backbone -> flatten -> dense(d) -> L2 normalization.
class EncoderModel {
public:
  EncoderModel() = default;
  explicit EncoderModel(const EncoderConfig &config);

  const EncoderConfig &config() const { return config_; }
  int input_size() const { return config_.backbone.input_size; }
  int dim() const { return config_.embedding_dim; }

  nn::Matrix preprocess(const Image &image) const { return nn::to_input(image, input_size()); }

  /// Unit-norm embedding of a preprocessed input; throws on a wrong size.
  std::vector<float> embed_input(const nn::Matrix &input) const;

  struct Trace {
    nn::Backbone::Trace backbone;
    nn::Vector flat;
  };
  /// Pre-normalization projection, used for training.
  nn::Vector forward_raw(const nn::Matrix &input, Trace *trace) const;
  void backward_raw(const nn::Vector &grad, const Trace &trace);

  std::vector<nn::Parameter *> parameters();
  std::vector<const nn::Parameter *> parameters() const;
  std::string fingerprint() const { return nn::fingerprint(parameters()); }

private:
  EncoderConfig config_;
  nn::Backbone backbone_;
  nn::Dense head_;
};

std::vector<float> embed(const EncoderModel &encoder, const Image &image);

struct MetricTrainResult {
  EncoderModel encoder;
  train::History history;
};

MetricTrainResult train_encoder(EncoderModel encoder,
                                const std::vector<corpus::LabeledSample> &train,
                                const std::vector<corpus::LabeledSample> &validation,
                                const MetricTrainConfig &config);

struct CentroidEntry {
  std::vector<double> centroid;
  std::size_t support = 0;
  bool degenerate = false;
};

constexpr double kDegenerateNorm = 1e-3;

struct CentroidTable {
  std::map<std::string, CentroidEntry> entries;
  std::string encoder_fingerprint;
  int dim = 0;
};

/// Plain mean of unit embeddings per class (not re-normalized).
CentroidTable centroids_from_embeddings(const std::vector<std::vector<float>> &embeddings,
                                        const std::vector<std::string> &codes,
                                        const std::string &fingerprint = {});

CentroidTable compute_centroids(const EncoderModel &encoder,
                                const std::vector<corpus::LabeledSample> &samples);

struct MetricPrediction {
  std::string code; // "unknown" when below the similarity floor
  double similarity = 0;
  std::optional<std::string> runner_up;
  double runner_up_similarity = 0;
  bool rejected = false;
};

inline const std::string kUnknownCode = "unknown";

/// argmax_k z.c_k/|c_k| over non-degenerate centroids; near-exact ties go to
/// the lexicographically smaller code.
MetricPrediction classify_nearest_centroid(const std::vector<float> &embedding,
                                           const CentroidTable &table,
                                           std::optional<double> similarity_floor = {});

/// Returns a new table with the class added; the input is not modified.
CentroidTable register_class(const CentroidTable &table, const std::string &code,
                             const std::vector<Image> &images, const EncoderModel &encoder,
                             bool overwrite = false);

// Persistence.
void save_encoder(const EncoderModel &encoder, const std::filesystem::path &path);
EncoderModel load_encoder(const std::filesystem::path &path);
nlohmann::json centroids_to_json(const CentroidTable &table);
CentroidTable centroids_from_json(const nlohmann::json &j);
void save_centroids(const CentroidTable &table, const std::filesystem::path &path);
/// Refuses a table built with different encoder weights.
CentroidTable load_centroids(const std::filesystem::path &path, const EncoderModel &encoder);
std::string centroids_csv(const CentroidTable &table);

} // namespace glyphscribe::metric
