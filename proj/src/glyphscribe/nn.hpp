#pragma once

#include "glyphscribe/image.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <random>
#include <vector>

// Minimal CPU layers with hand-written backward passes. Feature maps are
// (channels x height*width) row-major matrices; one sample at a time.
namespace glyphscribe::nn {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXf;

struct Parameter {
  Matrix value;
  Matrix grad;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value = Matrix::Zero(rows, cols);
    grad = Matrix::Zero(rows, cols);
  }
};

/// Ink-positive [0,1] input: background 0, full ink 1, aspect-preserving fit.
Matrix to_input(const Image &image, int size);

class Conv3x3 {
public:
  Conv3x3() = default;
  Conv3x3(int in_channels, int out_channels, std::mt19937_64 &rng);

  struct Trace {
    Matrix cols;
  };

  Matrix forward(const Matrix &x, int h, int w, Trace *trace) const;
  /// Accumulates parameter gradients; returns dL/dx when requested.
  Matrix backward(const Matrix &grad_out, const Trace &trace, int h, int w, bool input_grad);

  Parameter weight; // out x (in * 9)
  Parameter bias;   // out x 1
  int in_channels = 0;
  int out_channels = 0;
};

class Dense {
public:
  Dense() = default;
  Dense(int in, int out, std::mt19937_64 &rng, bool he_init = true);

  Vector forward(const Vector &x) const;
  Vector backward(const Vector &grad_out, const Vector &input);

  Parameter weight; // out x in
  Parameter bias;   // out x 1
};

struct BackboneConfig {
  int input_size = 32;
  std::vector<int> channels = {16, 32, 64};

  int output_side() const { return input_size >> channels.size(); }
  int output_dim() const { return channels.back() * output_side() * output_side(); }
  void validate() const;
  friend bool operator==(const BackboneConfig &, const BackboneConfig &) = default;
};

void to_json(nlohmann::json &j, const BackboneConfig &c);
void from_json(const nlohmann::json &j, BackboneConfig &c);

/// Blocks of conv3x3 -> ReLU -> 2x2 max-pool, then flatten.
class Backbone {
public:
  Backbone() = default;
  Backbone(const BackboneConfig &config, std::mt19937_64 &rng);

  struct BlockTrace {
    Conv3x3::Trace conv;
    Matrix activation; // post-ReLU
    std::vector<int> argmax;
  };
  struct Trace {
    std::vector<BlockTrace> blocks;
  };

  Vector forward(const Matrix &input, Trace *trace) const;
  void backward(const Vector &grad_flat, const Trace &trace);

  const BackboneConfig &config() const { return config_; }
  std::vector<Parameter *> parameters();
  std::vector<const Parameter *> parameters() const;

private:
  BackboneConfig config_;
  std::vector<Conv3x3> convs_;
};

class Adam {
public:
  explicit Adam(double learning_rate = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-7)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  /// One update with gradients multiplied by `grad_scale`; clears gradients.
  void step(const std::vector<Parameter *> &params, float grad_scale = 1.0f);

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

void zero_grad(const std::vector<Parameter *> &params);

/// Values of all parameters, in order, for snapshots and persistence.
std::vector<Matrix> snapshot(const std::vector<const Parameter *> &params);
void restore(const std::vector<Parameter *> &params, const std::vector<Matrix> &values);

nlohmann::json params_to_json(const std::vector<const Parameter *> &params);
void params_from_json(const std::vector<Parameter *> &params, const nlohmann::json &j);

/// FNV-1a over shapes and raw float bytes, as 16 hex digits.
std::string fingerprint(const std::vector<const Parameter *> &params);

bool all_finite(const std::vector<const Parameter *> &params);

} // namespace glyphscribe::nn
