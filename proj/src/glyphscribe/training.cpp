#include "glyphscribe/training.hpp"

#include "glyphscribe/error.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

namespace glyphscribe::train {

void Schedule::validate() const {
  require(learning_rate >= 0 && std::isfinite(learning_rate), "learning rate must be >= 0");
  require(max_epochs >= 0, "max_epochs must be >= 0");
  require(patience >= 1, "patience must be >= 1");
  require(lr_patience >= 1, "lr_patience must be >= 1");
  require(lr_factor > 0 && lr_factor <= 1, "lr_factor must be in (0, 1]");
  require(batch_size >= 1, "batch size must be >= 1");
}

void to_json(nlohmann::json &j, const Schedule &s) {
  j = {{"learning_rate", s.learning_rate}, {"max_epochs", s.max_epochs},
       {"patience", s.patience},           {"lr_patience", s.lr_patience},
       {"lr_factor", s.lr_factor},         {"min_learning_rate", s.min_learning_rate},
       {"batch_size", s.batch_size},       {"seed", s.seed}};
}

void from_json(const nlohmann::json &j, Schedule &s) {
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.max_epochs = j.value("max_epochs", s.max_epochs);
  s.patience = j.value("patience", s.patience);
  s.lr_patience = j.value("lr_patience", s.lr_patience);
  s.lr_factor = j.value("lr_factor", s.lr_factor);
  s.min_learning_rate = j.value("min_learning_rate", s.min_learning_rate);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.seed = j.value("seed", s.seed);
}

nlohmann::json history_to_json(const History &h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto &e : h.epochs) {
    nlohmann::json row = {{"epoch", e.epoch},
                          {"validation_loss", e.validation_loss},
                          {"learning_rate", e.learning_rate}};
    row["train_loss"] = e.train_loss ? nlohmann::json(*e.train_loss) : nlohmann::json(nullptr);
    epochs.push_back(row);
  }
  return {{"epochs", epochs},
          {"best_epoch", h.best_epoch},
          {"best_validation_loss", h.best_validation_loss},
          {"stopped_early", h.stopped_early}};
}

void check_finite(double loss, int epoch, std::size_t batch, double learning_rate) {
  if (std::isfinite(loss))
    return;
  fail(ErrorCode::Numerical, "non-finite training loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch) + " (learning rate " +
                                 std::to_string(learning_rate) + ")");
}

History fit(const Schedule &schedule, const std::vector<nn::Parameter *> &params,
            const std::function<double(nn::Adam &, int)> &run_epoch,
            const std::function<double()> &validate) {
  schedule.validate();
  std::vector<const nn::Parameter *> cparams(params.begin(), params.end());
  nn::Adam adam(schedule.learning_rate);

  History history;
  const double baseline = validate();
  check_finite(baseline, 0, 0, adam.learning_rate());
  history.epochs.push_back({0, std::nullopt, baseline, adam.learning_rate()});
  history.best_validation_loss = baseline;
  auto best = nn::snapshot(cparams);

  int since_best = 0, since_reduce = 0;
  for (int epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    const double train_loss = run_epoch(adam, epoch);
    check_finite(train_loss, epoch, 0, adam.learning_rate());
    const double val = validate();
    check_finite(val, epoch, 0, adam.learning_rate());
    history.epochs.push_back({epoch, train_loss, val, adam.learning_rate()});
    spdlog::debug("epoch {}: train {:.5f} validation {:.5f} lr {:.2e}", epoch, train_loss, val,
                  adam.learning_rate());

    if (val < history.best_validation_loss) {
      history.best_validation_loss = val;
      history.best_epoch = epoch;
      best = nn::snapshot(cparams);
      since_best = since_reduce = 0;
      continue;
    }
    if (++since_best >= schedule.patience) {
      history.stopped_early = true;
      break;
    }
    if (++since_reduce >= schedule.lr_patience) {
      adam.set_learning_rate(
          std::max(schedule.min_learning_rate, adam.learning_rate() * schedule.lr_factor));
      since_reduce = 0;
    }
  }
  nn::restore(params, best);
  return history;
}

} // namespace glyphscribe::train
