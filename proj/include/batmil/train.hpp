#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "batmil/data.hpp"
#include "batmil/metrics.hpp"
#include "batmil/model.hpp"
#include "batmil/optim.hpp"

namespace batmil::train {

struct TrainConfig {
  model::ModelConfig model;  // d_in and seed are filled in by train_loop
  optim::AdamWConfig adam;
  double lr = 1e-4;
  double lr_floor = 0.1;
  double aux_weight = 0.0;
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  std::string holdout;  // split evaluated each epoch and excluded from training; "" = none
};

/// Flat "key = value" text; '#' starts a comment. `preset = toy|default`
/// resets the model fields and must come before other model keys.
/// Unknown keys and bad values throw ConfigError with "source:line:".
TrainConfig parse_train_config(const std::string& text, const std::string& source = "config");
TrainConfig read_train_config(const std::string& path);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<metrics::EvalReport> val;
  double val_loss = 0.0;
};

struct TrainResult {
  model::BatmilParams params;
  model::BatmilParams initial;
  std::vector<EpochLog> epochs;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
};

std::string log_header(bool with_val);
std::string log_row(const EpochLog& e);

/// Train on every manifest entry whose split is not the holdout, "val" or
/// "test". Fully determined by (manifest contents, config, seed). When log
/// is given, one TSV line per epoch is written as training proceeds.
TrainResult train_loop(const data::Manifest& manifest, const TrainConfig& config, std::uint64_t seed,
                       std::ostream* log = nullptr);
TrainResult train_loop(const std::vector<model::BagFeatures>& train_bags, const std::vector<model::BagFeatures>& val_bags,
                       const TrainConfig& config, std::uint64_t seed, std::ostream* log = nullptr);

/// Softmax class probabilities in eval mode.
std::vector<std::vector<double>> predict_probs(const model::BatmilParams& params,
                                               const std::vector<model::BagFeatures>& bags,
                                               std::optional<std::size_t> forced_expert = std::nullopt);

metrics::EvalReport evaluate_bags(const model::BatmilParams& params, const std::vector<model::BagFeatures>& bags,
                                  const std::string& fold, std::optional<std::size_t> forced_expert = std::nullopt);

}  // namespace batmil::train
