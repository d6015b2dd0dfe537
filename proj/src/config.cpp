#include "unigen/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "unigen/error.hpp"

namespace unigen::config {

namespace {

using Setter = std::function<void(const Json&)>;

template <class T>
Setter bind(T& field, const std::string& key) {
  return [&field, key](const Json& v) {
    bool ok = false;
    if constexpr (std::is_same_v<T, double>) ok = v.is_number();
    else if constexpr (std::is_same_v<T, std::uint64_t>) ok = v.is_number_unsigned();
    else if constexpr (std::is_integral_v<T>) ok = v.is_number_integer();
    else if constexpr (std::is_same_v<T, std::string>) ok = v.is_string();
    if (!ok) throw ConfigError("config key '" + key + "' has the wrong type");
    field = v.get<T>();
  };
}

void apply(const Json& j, const std::map<std::string, Setter>& setters, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown key '" + key + "' in " + where);
    it->second(value);
  }
}

}  // namespace

std::string to_string(training::KlOrder order) {
  return order == training::KlOrder::student_first ? "student_first" : "teacher_first";
}

training::KlOrder kl_order_from_string(const std::string& name) {
  if (name == "student_first") return training::KlOrder::student_first;
  if (name == "teacher_first") return training::KlOrder::teacher_first;
  throw ConfigError("unknown kl_order '" + name + "'");
}

Json to_json(const model::ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"n_enc_layers", c.n_enc_layers},
          {"n_dec_layers", c.n_dec_layers},
          {"ffn_dim", c.ffn_dim},
          {"dropout", c.dropout},
          {"max_source_length", c.max_source_length},
          {"max_target_length", c.max_target_length},
          {"selector_hidden", c.selector_hidden},
          {"seed", c.seed}};
}

void merge(model::ModelConfig& c, const Json& j) {
  apply(j,
        {{"d_model", bind(c.d_model, "d_model")},
         {"n_heads", bind(c.n_heads, "n_heads")},
         {"n_enc_layers", bind(c.n_enc_layers, "n_enc_layers")},
         {"n_dec_layers", bind(c.n_dec_layers, "n_dec_layers")},
         {"ffn_dim", bind(c.ffn_dim, "ffn_dim")},
         {"dropout", bind(c.dropout, "dropout")},
         {"max_source_length", bind(c.max_source_length, "max_source_length")},
         {"max_target_length", bind(c.max_target_length, "max_target_length")},
         {"selector_hidden", bind(c.selector_hidden, "selector_hidden")},
         {"seed", bind(c.seed, "seed")}},
        "model config");
  c.validate();
}

Json to_json(const training::TrainConfig& c) {
  return {{"lambda", c.lambda},
          {"learning_rate", c.learning_rate},
          {"warmup_steps", c.warmup_steps},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"max_steps", c.max_steps},
          {"patience", c.patience},
          {"clip_norm", c.clip_norm},
          {"seed", c.seed},
          {"kl_order", to_string(c.kl_order)}};
}

void merge(training::TrainConfig& c, const Json& j) {
  apply(j,
        {{"lambda", bind(c.lambda, "lambda")},
         {"learning_rate", bind(c.learning_rate, "learning_rate")},
         {"warmup_steps", bind(c.warmup_steps, "warmup_steps")},
         {"batch_size", bind(c.batch_size, "batch_size")},
         {"max_epochs", bind(c.max_epochs, "max_epochs")},
         {"max_steps", bind(c.max_steps, "max_steps")},
         {"patience", bind(c.patience, "patience")},
         {"clip_norm", bind(c.clip_norm, "clip_norm")},
         {"seed", bind(c.seed, "seed")},
         {"kl_order",
          [&c](const Json& v) {
            if (!v.is_string()) throw ConfigError("config key 'kl_order' has the wrong type");
            c.kl_order = kl_order_from_string(v.get<std::string>());
          }}},
        "train config");
  c.validate();
}

Json to_json(const training::SelectorConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed}};
}

void merge(training::SelectorConfig& c, const Json& j) {
  apply(j,
        {{"learning_rate", bind(c.learning_rate, "learning_rate")},
         {"batch_size", bind(c.batch_size, "batch_size")},
         {"max_epochs", bind(c.max_epochs, "max_epochs")},
         {"patience", bind(c.patience, "patience")},
         {"seed", bind(c.seed, "seed")}},
        "selector config");
  if (!(c.learning_rate > 0.0) || c.batch_size < 1 || c.max_epochs < 1 || c.patience < 0)
    throw ConfigError("invalid selector config");
}

Json RunConfig::to_json() const {
  return {{"task", corpus::to_string(task)},
          {"model", config::to_json(model)},
          {"train", config::to_json(train)},
          {"selector", config::to_json(selector)},
          {"lambda_grid", lambda_grid},
          {"label_beam", label_beam},
          {"eval_beam", eval_beam},
          {"max_decode_length", max_decode_length},
          {"eval_seed", eval_seed}};
}

RunConfig RunConfig::from_json(const Json& j) {
  RunConfig c;
  apply(j,
        {{"task",
          [&c](const Json& v) {
            if (!v.is_string()) throw ConfigError("config key 'task' has the wrong type");
            c.task = corpus::task_from_string(v.get<std::string>());
          }},
         {"model", [&c](const Json& v) { merge(c.model, v); }},
         {"train", [&c](const Json& v) { merge(c.train, v); }},
         {"selector", [&c](const Json& v) { merge(c.selector, v); }},
         {"lambda_grid",
          [&c](const Json& v) {
            if (!v.is_array()) throw ConfigError("config key 'lambda_grid' must be an array");
            c.lambda_grid.clear();
            for (const auto& x : v) {
              if (!x.is_number()) throw ConfigError("lambda_grid entries must be numbers");
              c.lambda_grid.push_back(x.get<double>());
            }
          }},
         {"label_beam", bind(c.label_beam, "label_beam")},
         {"eval_beam", bind(c.eval_beam, "eval_beam")},
         {"max_decode_length", bind(c.max_decode_length, "max_decode_length")},
         {"eval_seed", bind(c.eval_seed, "eval_seed")}},
        "run config");
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config file " + path + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  for (double l : lambda_grid)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("lambda_grid values must lie in [0, 1]");
  if (label_beam < 1 || eval_beam < 1) throw ConfigError("beam widths must be positive");
  if (max_decode_length < 1) throw ConfigError("max_decode_length must be positive");
}

bool RunConfig::operator==(const RunConfig& other) const { return to_json() == other.to_json(); }

}  // namespace unigen::config
