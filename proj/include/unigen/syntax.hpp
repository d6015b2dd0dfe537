#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "unigen/grammar.hpp"

namespace unigen {

/// A surface token. `cls` names the terminal class (e.g. "ID", "NUM") and is
/// empty for fixed terminals such as keywords and punctuation.
struct Token {
  std::string lexeme;
  std::string cls;

  bool is_fixed() const { return cls.empty(); }
  bool operator==(const Token&) const = default;
  auto operator<=>(const Token&) const = default;
};

/// Node of a concrete syntax tree. Internal nodes carry a production id and
/// one child per rhs symbol; leaves carry a terminal symbol and its lexeme.
struct AstNode {
  ProductionId production = -1;  // -1 for leaves
  SymbolId symbol = 0;           // lhs for internal nodes, terminal for leaves
  std::string lexeme;
  std::vector<AstNode> children;

  bool is_leaf() const { return production < 0; }
  bool operator==(const AstNode&) const = default;

  static AstNode leaf(SymbolId symbol, std::string lexeme);
  static AstNode internal(const Grammar& grammar, ProductionId production,
                          std::vector<AstNode> children);
};

/// Maximal-munch tokenization driven by the grammar's fixed lexemes and
/// class patterns. Whitespace separates tokens; a fixed lexeme wins a tie
/// with a class match of equal length (keywords vs identifiers).
std::vector<Token> lex(std::string_view text, const Grammar& grammar);

/// Predictive parse of `tokens` starting at `root` (default: the start symbol).
AstNode parse(const std::vector<Token>& tokens, const Grammar& grammar);
AstNode parse(const std::vector<Token>& tokens, const Grammar& grammar,
              SymbolId root);

/// Left-to-right yield of the leaves.
std::vector<Token> render(const AstNode& ast, const Grammar& grammar);

/// Checks AstNode invariants against the grammar; throws GrammarError.
void validate(const AstNode& ast, const Grammar& grammar);

/// Tokens joined with single spaces.
std::string join(const std::vector<Token>& tokens);

/// Renders an AST in another grammar with identical production ids (e.g. the
/// other MiniLang dialect): fixed leaves take the target grammar's lexemes.
AstNode retarget(const AstNode& ast, const Grammar& target);

}  // namespace unigen
