#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "unigen/corpus.hpp"
#include "unigen/metrics.hpp"
#include "unigen/model.hpp"

namespace unigen::decoding {

using model::Paradigm;

enum class Status { ok, truncated, invalid };
std::string to_string(Status s);

struct Strategy {
  int beam = 1;           // 1 = greedy
  int max_length = 512;   // tokens under seq, actions under tree

  static Strategy greedy(int max_length = 512) { return {1, max_length}; }
  static Strategy beam_search(int k, int max_length = 512) { return {k, max_length}; }
};

struct DecodeOutput {
  Paradigm paradigm = Paradigm::seq;
  std::vector<Token> tokens;
  ActionSequence actions;  // tree only
  double score = 0.0;      // sum of log-probabilities of the emitted ids
  Status status = Status::ok;
  double seconds = 0.0;    // decode loop only, encoding excluded

  std::vector<std::string> words() const;
};

/// Autoregressive decoding over the token slice until end-of-sequence or the
/// length cap. Padding is never emitted.
DecodeOutput decode_seq(const model::Model& model, const model::Encoded& encoded,
                        const Strategy& strategy = {});
/// Grammar-masked decoding over the action vocabulary until the frontier
/// empties. Invalid actions get -inf logits before the softmax.
DecodeOutput decode_tree(const model::Model& model, const model::Encoded& encoded,
                         const Strategy& strategy = {});
DecodeOutput decode(const model::Model& model, Paradigm paradigm, const model::Encoded& encoded,
                    const Strategy& strategy = {});
DecodeOutput decode(const model::Model& model, Paradigm paradigm,
                    const std::vector<std::string>& source, const Strategy& strategy = {});

struct RoutedOutput {
  DecodeOutput output;
  std::array<double, 2> p{};  // {p_seq, p_tree}
};

/// Decodes under the selector's preferred paradigm (ties go to seq). Throws
/// ConfigError if the model carries no selector.
RoutedOutput route_and_decode(const model::Model& model, const std::vector<std::string>& source,
                              const Strategy& strategy = {});

/// Selector that always picks `paradigm` (zero weights, decisive bias).
model::SelectorParams forced_selector(const model::ModelConfig& config, Paradigm paradigm);

enum class Winner { seq, tree, tie };
std::string to_string(Winner w);

struct InstanceRecord {
  std::string id;
  double bleu_seq = 0.0;
  double bleu_tree = 0.0;
  Winner winner = Winner::tie;
  Status status_seq = Status::ok;
  Status status_tree = Status::ok;
  double gold_prob_seq = 0.0;
  double gold_prob_tree = 0.0;
  double seconds_seq = 0.0;
  double seconds_tree = 0.0;
  std::size_t n = 0;
  std::size_t m = 0;
  bool failed = false;
  std::string error;

  nlohmann::ordered_json to_json() const;
};

/// Per-instance comparison of the two paradigms and its aggregates.
struct ParadigmReport {
  std::vector<InstanceRecord> instances;
  double win_seq = 0.0;
  double win_tree = 0.0;
  double tie = 0.0;
  double mean_gold_prob_seq = 0.0;
  double mean_gold_prob_tree = 0.0;
  double mean_seconds_seq = 0.0;
  double mean_seconds_tree = 0.0;
  double mean_length_ratio = 0.0;  // m / n
  double mean_bleu_seq = 0.0;
  double mean_bleu_tree = 0.0;
  double mean_bleu_oracle = 0.0;
  std::size_t failures = 0;

  /// Recomputes the aggregates from `instances`.
  void finalize();
  nlohmann::ordered_json to_json(bool with_instances = false) const;
};

/// Mean teacher-forced probability of the gold tokens: seq rows for each
/// token, tree rows at the aligned GenToken actions restricted to the token
/// slice.
double mean_gold_token_probability(const model::Model& model, Paradigm paradigm,
                                   const corpus::ParallelExample& ex);

/// Decoded outputs of both paradigms for one example.
struct PairedDecode {
  DecodeOutput seq, tree;
  std::array<double, 2> p_select{0.5, 0.5};
  bool has_selector = false;
};

PairedDecode decode_both(const model::Model& model, const corpus::ParallelExample& ex,
                         const Strategy& strategy);

/// Decodes both paradigms for every example and compares them by sentence
/// BLEU against the gold tokens.
ParadigmReport oracle_route(const std::vector<corpus::ParallelExample>& data,
                            const model::Model& model, const Strategy& strategy = {});

/// The five evaluation modes: pure seq, pure tree, selector-routed, random
/// routing (seeded Bernoulli 0.5), and oracle routing by sentence BLEU.
enum class Mode { seq, tree, routed, random, oracle };
std::string to_string(Mode m);
Mode mode_from_string(const std::string& name);
const std::vector<Mode>& all_modes();

struct ModeResult {
  Mode mode = Mode::seq;
  metrics::MetricReport metrics;
  double seq_fraction = 0.0;  // share of instances decoded under seq
  double mean_seconds = 0.0;
  std::vector<std::vector<std::string>> outputs;

  nlohmann::ordered_json to_json() const;
};

struct EvalConfig {
  Strategy strategy = Strategy::beam_search(5);
  std::uint64_t random_seed = 0;
  std::vector<Mode> modes = all_modes();
};

struct Evaluation {
  std::vector<ModeResult> modes;
  ParadigmReport analysis;

  const ModeResult& mode(Mode m) const;
  nlohmann::ordered_json to_json(bool with_instances = false) const;
  /// Table with EM, BLEU and CodeBLEU columns (scores x 100).
  std::string table() const;
};

/// Decodes every example once per paradigm and derives all requested modes
/// from the cached outputs. The routed mode needs a selector.
Evaluation evaluate(const model::Model& model, const std::vector<corpus::ParallelExample>& data,
                    const EvalConfig& config = {});

}  // namespace unigen::decoding
