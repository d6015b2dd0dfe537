#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "unigen/corpus.hpp"
#include "unigen/decoding.hpp"
#include "unigen/model.hpp"
#include "unigen/training.hpp"

namespace unigen::config {

using Json = nlohmann::ordered_json;

Json to_json(const model::ModelConfig& c);
Json to_json(const training::TrainConfig& c);
Json to_json(const training::SelectorConfig& c);

/// Overlays the keys present in `j` on `c`. Unknown keys and mistyped values
/// raise ConfigError; the result is validated.
void merge(model::ModelConfig& c, const Json& j);
void merge(training::TrainConfig& c, const Json& j);
void merge(training::SelectorConfig& c, const Json& j);

std::string to_string(training::KlOrder order);
training::KlOrder kl_order_from_string(const std::string& name);

/// Everything a pipeline command reads besides paths.
struct RunConfig {
  corpus::Task task = corpus::Task::nl2code;
  model::ModelConfig model;
  training::TrainConfig train;
  training::SelectorConfig selector;
  /// Non-empty: train-backbone sweeps these values and keeps the best.
  std::vector<double> lambda_grid;
  int label_beam = 1;  // selector labeling (1 = greedy)
  int eval_beam = 5;
  int max_decode_length = 512;
  std::uint64_t eval_seed = 0;

  Json to_json() const;
  /// Defaults overlaid with `j`. Throws ConfigError.
  static RunConfig from_json(const Json& j);
  static RunConfig load(const std::string& path);
  void validate() const;
  bool operator==(const RunConfig& other) const;
};

}  // namespace unigen::config
