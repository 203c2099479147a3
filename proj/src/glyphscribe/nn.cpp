#include "glyphscribe/nn.hpp"

#include "glyphscribe/error.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

namespace glyphscribe::nn {

Matrix to_input(const Image &image, int size) {
  const Image fitted = fit_canonical(image, size);
  Matrix x(1, static_cast<Eigen::Index>(size) * size);
  for (std::size_t i = 0; i < fitted.pixels.size(); ++i)
    x(0, static_cast<Eigen::Index>(i)) = 1.0f - fitted.pixels[i] / 255.0f;
  return x;
}

namespace {

void he_normal(Matrix &m, int fan_in, std::mt19937_64 &rng) {
  std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = dist(rng);
}

void glorot_uniform(Matrix &m, int fan_in, int fan_out, std::mt19937_64 &rng) {
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  std::uniform_real_distribution<float> dist(-limit, limit);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = dist(rng);
}

} // namespace

Conv3x3::Conv3x3(int in, int out, std::mt19937_64 &rng) : in_channels(in), out_channels(out) {
  weight.resize(out, in * 9);
  bias.resize(out, 1);
  he_normal(weight.value, in * 9, rng);
}

Matrix Conv3x3::forward(const Matrix &x, int h, int w, Trace *trace) const {
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(in_channels) * 9, hw);
  for (int c = 0; c < in_channels; ++c) {
    const float *src = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        float *dst = cols.row(c * 9 + ky * 3 + kx).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h)
            continue;
          const int xs = std::max(0, 1 - kx), xe = std::min(w, w + 1 - kx);
          std::memcpy(dst + y * w + xs, src + sy * w + xs + kx - 1,
                      sizeof(float) * static_cast<std::size_t>(xe - xs));
        }
      }
  }
  Matrix out = weight.value * cols;
  out.colwise() += bias.value.col(0);
  if (trace)
    trace->cols = std::move(cols);
  return out;
}

Matrix Conv3x3::backward(const Matrix &grad_out, const Trace &trace, int h, int w,
                         bool input_grad) {
  weight.grad.noalias() += grad_out * trace.cols.transpose();
  bias.grad.col(0) += grad_out.rowwise().sum().transpose();
  if (!input_grad)
    return {};
  const Matrix dcols = weight.value.transpose() * grad_out;
  Matrix dx = Matrix::Zero(in_channels, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < in_channels; ++c) {
    float *dst = dx.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const float *src = dcols.row(c * 9 + ky * 3 + kx).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h)
            continue;
          const int xs = std::max(0, 1 - kx), xe = std::min(w, w + 1 - kx);
          for (int x = xs; x < xe; ++x)
            dst[sy * w + x + kx - 1] += src[y * w + x];
        }
      }
  }
  return dx;
}

Dense::Dense(int in, int out, std::mt19937_64 &rng, bool he_init) {
  weight.resize(out, in);
  bias.resize(out, 1);
  if (he_init)
    he_normal(weight.value, in, rng);
  else
    glorot_uniform(weight.value, in, out, rng);
}

Vector Dense::forward(const Vector &x) const {
  return weight.value * x + bias.value.col(0);
}

Vector Dense::backward(const Vector &grad_out, const Vector &input) {
  weight.grad.noalias() += grad_out * input.transpose();
  bias.grad.col(0) += grad_out;
  return weight.value.transpose() * grad_out;
}

void BackboneConfig::validate() const {
  require(!channels.empty(), "backbone needs at least one block");
  for (int c : channels)
    require(c > 0, "backbone channel counts must be positive");
  require(input_size > 0 && input_size % (1 << channels.size()) == 0,
          "input size must be divisible by 2^blocks");
}

void to_json(nlohmann::json &j, const BackboneConfig &c) {
  j = {{"input_size", c.input_size}, {"channels", c.channels}};
}

void from_json(const nlohmann::json &j, BackboneConfig &c) {
  c.input_size = j.value("input_size", c.input_size);
  c.channels = j.value("channels", c.channels);
}

Backbone::Backbone(const BackboneConfig &config, std::mt19937_64 &rng) : config_(config) {
  config_.validate();
  int in = 1;
  for (int out : config_.channels) {
    convs_.emplace_back(in, out, rng);
    in = out;
  }
}

Vector Backbone::forward(const Matrix &input, Trace *trace) const {
  int side = config_.input_size;
  require(input.rows() == 1 && input.cols() == static_cast<Eigen::Index>(side) * side,
          "backbone input has the wrong size");
  if (trace)
    trace->blocks.resize(convs_.size());
  Matrix x = input;
  for (std::size_t b = 0; b < convs_.size(); ++b) {
    BlockTrace *bt = trace ? &trace->blocks[b] : nullptr;
    Matrix a = convs_[b].forward(x, side, side, bt ? &bt->conv : nullptr).cwiseMax(0.0f);
    const int half = side / 2;
    Matrix pooled(a.rows(), static_cast<Eigen::Index>(half) * half);
    std::vector<int> argmax;
    if (bt)
      argmax.resize(static_cast<std::size_t>(pooled.size()));
    for (Eigen::Index c = 0; c < a.rows(); ++c) {
      const float *src = a.row(c).data();
      for (int y = 0; y < half; ++y)
        for (int xq = 0; xq < half; ++xq) {
          int best = (2 * y) * side + 2 * xq;
          for (int k : {best + 1, best + side, best + side + 1})
            if (src[k] > src[best])
              best = k;
          pooled(c, y * half + xq) = src[best];
          if (bt)
            argmax[static_cast<std::size_t>(c * half * half + y * half + xq)] = best;
        }
    }
    if (bt) {
      bt->activation = std::move(a);
      bt->argmax = std::move(argmax);
    }
    x = std::move(pooled);
    side = half;
  }
  return Eigen::Map<const Vector>(x.data(), x.size());
}

void Backbone::backward(const Vector &grad_flat, const Trace &trace) {
  int side = config_.output_side();
  Matrix grad = Eigen::Map<const Matrix>(grad_flat.data(), config_.channels.back(),
                                         static_cast<Eigen::Index>(side) * side);
  for (std::size_t b = convs_.size(); b-- > 0;) {
    const BlockTrace &bt = trace.blocks[b];
    const int full = side * 2;
    Matrix da = Matrix::Zero(bt.activation.rows(), bt.activation.cols());
    const Eigen::Index per = static_cast<Eigen::Index>(side) * side;
    for (Eigen::Index c = 0; c < grad.rows(); ++c)
      for (Eigen::Index i = 0; i < per; ++i)
        da(c, bt.argmax[static_cast<std::size_t>(c * per + i)]) += grad(c, i);
    // ReLU mask
    da = (bt.activation.array() > 0.0f).select(da, 0.0f);
    grad = convs_[b].backward(da, bt.conv, full, full, b > 0);
    side = full;
  }
}

std::vector<Parameter *> Backbone::parameters() {
  std::vector<Parameter *> out;
  for (auto &c : convs_) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  }
  return out;
}

std::vector<const Parameter *> Backbone::parameters() const {
  std::vector<const Parameter *> out;
  for (const auto &c : convs_) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  }
  return out;
}

void Adam::step(const std::vector<Parameter *> &params, float grad_scale) {
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto *p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float step = static_cast<float>(lr_ * std::sqrt(c2) / c1);
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const float eps = static_cast<float>(eps_ * std::sqrt(c2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto &p = *params[i];
    const Matrix g = p.grad * grad_scale;
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g.cwiseProduct(g);
    p.value.array() -= step * m_[i].array() / (v_[i].array().sqrt() + eps);
    p.grad.setZero();
  }
}

void zero_grad(const std::vector<Parameter *> &params) {
  for (auto *p : params)
    p->grad.setZero();
}

std::vector<Matrix> snapshot(const std::vector<const Parameter *> &params) {
  std::vector<Matrix> out;
  for (const auto *p : params)
    out.push_back(p->value);
  return out;
}

void restore(const std::vector<Parameter *> &params, const std::vector<Matrix> &values) {
  require(params.size() == values.size(), "snapshot does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i]->value = values[i];
}

nlohmann::json params_to_json(const std::vector<const Parameter *> &params) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto *p : params) {
    std::vector<float> data(p->value.data(), p->value.data() + p->value.size());
    out.push_back({{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", data}});
  }
  return out;
}

void params_from_json(const std::vector<Parameter *> &params, const nlohmann::json &j) {
  if (!j.is_array() || j.size() != params.size())
    fail(ErrorCode::Format, "weight file has the wrong number of tensors");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto rows = j[i].at("rows").get<Eigen::Index>();
    const auto cols = j[i].at("cols").get<Eigen::Index>();
    if (rows != params[i]->value.rows() || cols != params[i]->value.cols())
      fail(ErrorCode::Format, "weight tensor " + std::to_string(i) + " has the wrong shape");
    const auto data = j[i].at("data").get<std::vector<float>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
      fail(ErrorCode::Format, "weight tensor " + std::to_string(i) + " is truncated");
    params[i]->value = Eigen::Map<const Matrix>(data.data(), rows, cols);
    params[i]->grad = Matrix::Zero(rows, cols);
  }
}

std::string fingerprint(const std::vector<const Parameter *> &params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void *data, std::size_t n) {
    const auto *bytes = static_cast<const unsigned char *>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto *p : params) {
    const std::int64_t shape[2] = {p->value.rows(), p->value.cols()};
    mix(shape, sizeof shape);
    mix(p->value.data(), sizeof(float) * static_cast<std::size_t>(p->value.size()));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool all_finite(const std::vector<const Parameter *> &params) {
  for (const auto *p : params)
    if (!p->value.allFinite())
      return false;
  return true;
}

} // namespace glyphscribe::nn
