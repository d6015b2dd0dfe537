#include "unigen/transducer.hpp"

#include <sstream>

#include "unigen/error.hpp"

namespace unigen {

namespace {

void emit(const AstNode& node, const Grammar& grammar, ActionSequence& out) {
  if (node.is_leaf()) {
    const auto& sym = grammar.symbol(node.symbol);
    out.push_back(Action::gen(
        {node.lexeme, sym.kind == SymbolKind::terminal_class ? sym.name : std::string()}));
    return;
  }
  out.push_back(Action::apply(node.production));
  for (const auto& child : node.children) emit(child, grammar, out);
}

bool token_fits(const Symbol& sym, const Token& token) {
  if (sym.kind == SymbolKind::fixed_terminal) return token.is_fixed() && token.lexeme == sym.lexeme;
  if (sym.kind == SymbolKind::terminal_class) return token.cls == sym.name;
  return false;
}

std::string describe_action(const Action& a) {
  return a.is_rule() ? "ApplyRule(" + std::to_string(a.rule) + ")"
                     : "GenToken(" + a.token.lexeme + ")";
}

class Replayer {
 public:
  Replayer(const ActionSequence& actions, const Grammar& grammar)
      : actions_(actions), grammar_(grammar) {}

  AstNode run(SymbolId root) {
    AstNode ast = build(root);
    if (pos_ < actions_.size())
      throw TrailingActionError("derivation complete after " + std::to_string(pos_) +
                                " actions but " + std::to_string(actions_.size() - pos_) +
                                " remain");
    return ast;
  }

 private:
  AstNode build(SymbolId expected) {
    const auto& sym = grammar_.symbol(expected);
    if (pos_ >= actions_.size())
      throw IncompleteError("action sequence ended with '" + sym.name + "' unexpanded");
    const Action& a = actions_[pos_];
    const std::size_t position = ++pos_;
    if (sym.kind == SymbolKind::nonterminal) {
      if (!a.is_rule() || a.rule < 0 || a.rule >= grammar_.production_count() ||
          grammar_.production(a.rule).lhs != expected)
        throw InvalidActionError(position, sym.name,
                                 describe_action(a) + " at position " +
                                     std::to_string(position) + " does not expand " + sym.name);
      const auto& p = grammar_.production(a.rule);
      std::vector<AstNode> children;
      children.reserve(p.rhs.size());
      for (SymbolId s : p.rhs) children.push_back(build(s));
      return AstNode::internal(grammar_, p.id, std::move(children));
    }
    if (a.is_rule() || !token_fits(sym, a.token))
      throw InvalidActionError(position, sym.name,
                               describe_action(a) + " at position " + std::to_string(position) +
                                   " where terminal " + sym.name + " is expected");
    return AstNode::leaf(expected, a.token.lexeme);
  }

  const ActionSequence& actions_;
  const Grammar& grammar_;
  std::size_t pos_ = 0;
};

}  // namespace

ActionSequence ast_to_actions(const AstNode& ast, const Grammar& grammar) {
  ActionSequence out;
  emit(ast, grammar, out);
  return out;
}

AstNode actions_to_ast(const ActionSequence& actions, const Grammar& grammar) {
  return actions_to_ast(actions, grammar, grammar.start());
}

AstNode actions_to_ast(const ActionSequence& actions, const Grammar& grammar, SymbolId root) {
  return Replayer(actions, grammar).run(root);
}

AlignmentMap align(const ActionSequence& actions) {
  AlignmentMap map;
  for (std::size_t i = 0; i < actions.size(); ++i)
    if (!actions[i].is_rule()) map.action_of_token.push_back(static_cast<int>(i));
  return map;
}

bool alignment_is_valid(const AlignmentMap& map, const ActionSequence& actions,
                        const std::vector<Token>& tokens) {
  if (map.size() != tokens.size()) return false;
  int previous = -1;
  for (std::size_t j = 0; j < map.size(); ++j) {
    int i = map[j];
    if (i <= previous || i >= static_cast<int>(actions.size())) return false;
    if (actions[i].is_rule() || actions[i].token != tokens[j]) return false;
    previous = i;
  }
  return true;
}

void step_in_place(FrontierState& frontier, const Action& action, const Grammar& grammar) {
  if (frontier.empty())
    throw InvalidActionError(0, "<end>", describe_action(action) + " after the derivation completed");
  SymbolId top = frontier.top();
  const auto& sym = grammar.symbol(top);
  if (sym.kind == SymbolKind::nonterminal) {
    if (!action.is_rule() || action.rule < 0 || action.rule >= grammar.production_count() ||
        grammar.production(action.rule).lhs != top)
      throw InvalidActionError(0, sym.name, describe_action(action) + " does not expand " + sym.name);
    frontier.stack_.pop_back();
    const auto& rhs = grammar.production(action.rule).rhs;
    for (auto it = rhs.rbegin(); it != rhs.rend(); ++it) frontier.stack_.push_back(*it);
    return;
  }
  if (action.is_rule() || !token_fits(sym, action.token))
    throw InvalidActionError(0, sym.name, describe_action(action) + " where " + sym.name + " is expected");
  frontier.stack_.pop_back();
}

FrontierState step(const FrontierState& frontier, const Action& action, const Grammar& grammar) {
  FrontierState next = frontier;
  step_in_place(next, action, grammar);
  return next;
}

ActionMask valid_actions(const FrontierState& frontier, const Grammar& grammar,
                         const UnifiedVocabulary& vocab) {
  ActionMask mask(vocab.size(), 0);
  if (frontier.empty()) {
    mask[UnifiedVocabulary::kEos] = 1;
    return mask;
  }
  const auto& sym = grammar.symbol(frontier.top());
  switch (sym.kind) {
    case SymbolKind::nonterminal:
      for (ProductionId p : grammar.alternatives(frontier.top())) mask[vocab.rule_id(p)] = 1;
      break;
    case SymbolKind::fixed_terminal:
      mask[vocab.token_id({sym.lexeme, ""})] = 1;
      break;
    case SymbolKind::terminal_class:
      for (int id = 0; id < vocab.token_count(); ++id)
        if (vocab.token(id).cls == sym.name) mask[id] = 1;
      break;
  }
  return mask;
}

ActionMasks::ActionMasks(const Grammar& grammar, const UnifiedVocabulary& vocab) {
  for (std::size_t s = 0; s < grammar.symbols().size(); ++s)
    by_symbol_.push_back(valid_actions(FrontierState(static_cast<SymbolId>(s)), grammar, vocab));
  end_ = valid_actions(FrontierState(), grammar, vocab);
}

Action action_from_id(int id, const UnifiedVocabulary& vocab) {
  if (vocab.is_rule(id)) return Action::apply(vocab.production_of(id));
  return Action::gen(vocab.token(id));
}

int action_id(const Action& action, const UnifiedVocabulary& vocab) {
  return action.is_rule() ? vocab.rule_id(action.rule) : vocab.token_id(action.token);
}

std::string format_actions(const ActionSequence& actions) {
  std::string out;
  for (const auto& a : actions) {
    if (!out.empty()) out += ' ';
    out += a.is_rule() ? "R" + std::to_string(a.rule) : "T" + a.token.lexeme;
  }
  return out;
}

ActionSequence parse_actions(std::string_view text, const Grammar& grammar) {
  ActionSequence out;
  std::istringstream in{std::string(text)};
  std::string item;
  while (in >> item) {
    if (item.size() < 2) throw FormatError(0, "malformed action '" + item + "'");
    if (item[0] == 'R') {
      std::size_t used = 0;
      int id = -1;
      try {
        id = std::stoi(item.substr(1), &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size() - 1) throw FormatError(0, "malformed rule action '" + item + "'");
      out.push_back(Action::apply(id));
    } else if (item[0] == 'T') {
      auto tokens = lex(item.substr(1), grammar);
      if (tokens.size() != 1) throw FormatError(0, "malformed token action '" + item + "'");
      out.push_back(Action::gen(tokens[0]));
    } else {
      throw FormatError(0, "malformed action '" + item + "'");
    }
  }
  return out;
}

}  // namespace unigen
