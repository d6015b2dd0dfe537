#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "unigen/grammar.hpp"
#include "unigen/minilang.hpp"
#include "unigen/transducer.hpp"

namespace unigen::corpus {

enum class Task { nl2code, translation };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

/// Target grammar of a task: nl2code emits dialect A, translation emits
/// dialect B from dialect A input.
const Grammar& target_grammar(Task task);

/// One training instance: input words plus the gold target as tokens and as
/// grammar actions, with the token -> action alignment.
struct ParallelExample {
  std::string id;
  std::vector<std::string> source;
  std::vector<Token> target_tokens;
  ActionSequence target_actions;
  AlignmentMap alignment;

  std::size_t n() const { return target_tokens.size(); }
  std::size_t m() const { return target_actions.size(); }
  bool operator==(const ParallelExample&) const = default;
};

/// Lexes and parses `target_code` and derives actions and alignment. Throws
/// the underlying LexError/ParseError, or ConfigError if the derived example
/// violates n >= 1, m > n.
ParallelExample make_example(std::string id, std::vector<std::string> source,
                             const std::string& target_code, const Grammar& grammar);

struct DatasetSplit {
  Task task = Task::nl2code;
  std::uint64_t seed = 0;
  int depth = 0;
  std::vector<ParallelExample> train, valid, test;
};

struct GenerationConfig {
  Task task = Task::nl2code;
  int size = 100;
  std::uint64_t seed = 0;
  int depth = 2;
  /// Explicit split sizes; when unset the split is 80/10/10 of `size`
  /// (at least one example in valid and test).
  std::optional<int> train_size, valid_size, test_size;
};

/// Deterministic in the config. Throws ConfigError on size < 3 or depth < 1.
DatasetSplit generate_synthetic(const GenerationConfig& config);

/// English-like description that determines `program` uniquely.
std::vector<std::string> describe(const AstNode& program, const Grammar& grammar);

/// JSON-lines I/O. nl2code rows use "nl"/"code", translation rows "src"/"tgt";
/// an optional "id" is kept (default "<file stem>-<line>"). Throws FormatError
/// carrying the 1-based line number.
std::vector<ParallelExample> load_jsonl(const std::string& path, Task task);
void save_jsonl(const std::vector<ParallelExample>& examples, Task task,
                const std::string& path);

/// Re-derives an example from its tokens: lex/parse/render, tree <-> actions
/// and the alignment. Empty on success, else the first discrepancy.
std::string check_example(const ParallelExample& ex, const Grammar& grammar);

struct RoundTripFailure {
  std::string file;
  std::size_t line = 0;  // 1-based
  std::string id;
  std::string error;
};

struct RoundTripReport {
  std::size_t checked = 0;
  std::size_t passed = 0;
  std::vector<RoundTripFailure> failures;

  nlohmann::ordered_json to_json() const;
};

/// Checks every row of every .jsonl file in `dir` independently. Throws
/// ConfigError if `dir` is missing and EmptyCorpusError if it holds no rows.
RoundTripReport roundtrip_check(const std::string& dir);

/// Writes train/valid/test .jsonl and manifest.json into `dir`.
void save_split(const DatasetSplit& split, const std::string& dir);
/// Reads a directory written by save_split (or any directory holding
/// train/valid/test .jsonl; the task is then inferred from the field names).
DatasetSplit load_split(const std::string& dir);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t file_hash(const std::string& path);

}  // namespace unigen::corpus
