#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "unigen/grammar.hpp"
#include "unigen/syntax.hpp"
#include "unigen/vocabulary.hpp"

namespace unigen {

/// One Seq2Tree decoding step: expand the frontier nonterminal with a
/// production, or emit the terminal on top of the frontier.
struct Action {
  enum class Kind { apply_rule, gen_token };
  Kind kind = Kind::apply_rule;
  ProductionId rule = -1;
  Token token;

  static Action apply(ProductionId rule) { return {Kind::apply_rule, rule, {}}; }
  static Action gen(Token token) { return {Kind::gen_token, -1, std::move(token)}; }
  bool is_rule() const { return kind == Kind::apply_rule; }
  bool operator==(const Action&) const = default;
};

using ActionSequence = std::vector<Action>;

/// token position j (0-based) -> action position (0-based) of the GenToken
/// that emits it.
struct AlignmentMap {
  std::vector<int> action_of_token;

  std::size_t size() const { return action_of_token.size(); }
  int operator[](std::size_t j) const { return action_of_token[j]; }
  bool operator==(const AlignmentMap&) const = default;
};

/// Stack of grammar symbols still to be derived; back() is the top.
class FrontierState {
 public:
  FrontierState() = default;
  explicit FrontierState(SymbolId root) : stack_{root} {}
  static FrontierState initial(const Grammar& grammar) { return FrontierState(grammar.start()); }

  bool empty() const { return stack_.empty(); }
  SymbolId top() const { return stack_.back(); }
  std::size_t depth() const { return stack_.size(); }
  const std::vector<SymbolId>& stack() const { return stack_; }
  bool operator==(const FrontierState&) const = default;

 private:
  friend FrontierState step(const FrontierState&, const Action&, const Grammar&);
  friend void step_in_place(FrontierState&, const Action&, const Grammar&);
  std::vector<SymbolId> stack_;
};

/// Pre-order emission: ApplyRule at each internal node before its children,
/// GenToken at every leaf (keywords and punctuation included).
ActionSequence ast_to_actions(const AstNode& ast, const Grammar& grammar);

/// Replays `actions` from [root] (default: start symbol). Throws
/// InvalidActionError, IncompleteError or TrailingActionError.
AstNode actions_to_ast(const ActionSequence& actions, const Grammar& grammar);
AstNode actions_to_ast(const ActionSequence& actions, const Grammar& grammar,
                       SymbolId root);

AlignmentMap align(const ActionSequence& actions);

/// Checks that a map is total over `token_count` positions, strictly
/// increasing, and points at GenTokens equal to the tokens.
bool alignment_is_valid(const AlignmentMap& map, const ActionSequence& actions,
                        const std::vector<Token>& tokens);

/// Throws InvalidActionError if `action` is not admitted by the frontier top.
FrontierState step(const FrontierState& frontier, const Action& action,
                   const Grammar& grammar);
void step_in_place(FrontierState& frontier, const Action& action, const Grammar& grammar);

/// Mask over the unified action vocabulary (1 = admitted).
using ActionMask = std::vector<unsigned char>;

ActionMask valid_actions(const FrontierState& frontier, const Grammar& grammar,
                         const UnifiedVocabulary& vocab);

/// Precomputed valid_actions() keyed by frontier top, for decoding loops.
class ActionMasks {
 public:
  ActionMasks(const Grammar& grammar, const UnifiedVocabulary& vocab);
  const ActionMask& operator()(const FrontierState& frontier) const {
    return frontier.empty() ? end_ : by_symbol_[frontier.top()];
  }

 private:
  std::vector<ActionMask> by_symbol_;
  ActionMask end_;
};

Action action_from_id(int id, const UnifiedVocabulary& vocab);
int action_id(const Action& action, const UnifiedVocabulary& vocab);

/// Text form: `R<id>` for ApplyRule, `T<lexeme>` for GenToken, space separated.
std::string format_actions(const ActionSequence& actions);
ActionSequence parse_actions(std::string_view text, const Grammar& grammar);

}  // namespace unigen
