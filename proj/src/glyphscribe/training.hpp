#pragma once

#include "glyphscribe/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace glyphscribe::train {

/// Optimizer and stopping knobs shared by the encoder and the softmax CNN.
struct Schedule {
  double learning_rate = 1e-3;
  int max_epochs = 30;
  int patience = 5;       // epochs without validation improvement before stopping
  int lr_patience = 2;    // epochs without improvement before the step size is halved
  double lr_factor = 0.5;
  double min_learning_rate = 1e-6;
  int batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json &j, const Schedule &s);
void from_json(const nlohmann::json &j, Schedule &s);

struct EpochRecord {
  int epoch = 0;                     // 0 is the untrained baseline
  std::optional<double> train_loss;  // empty for the baseline
  double validation_loss = 0;
  double learning_rate = 0;

  friend bool operator==(const EpochRecord &, const EpochRecord &) = default;
};

struct History {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_validation_loss = 0;
  bool stopped_early = false;

  friend bool operator==(const History &, const History &) = default;
};

nlohmann::json history_to_json(const History &h);

/// Runs epochs until patience runs out and restores the best weights.
/// `run_epoch` performs one epoch of optimizer steps and returns the mean
/// training loss; `validate` returns the validation loss for current weights.
History fit(const Schedule &schedule, const std::vector<nn::Parameter *> &params,
            const std::function<double(nn::Adam &, int epoch)> &run_epoch,
            const std::function<double()> &validate);

/// Throws a Numerical error naming where the loss blew up.
void check_finite(double loss, int epoch, std::size_t batch, double learning_rate);

} // namespace glyphscribe::train
