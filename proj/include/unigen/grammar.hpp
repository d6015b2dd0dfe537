#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unigen {

using SymbolId = int;
using ProductionId = int;

enum class SymbolKind { nonterminal, fixed_terminal, terminal_class };

struct Symbol {
  SymbolKind kind = SymbolKind::nonterminal;
  std::string name;     // nonterminal or class name; the lexeme for fixed terminals
  std::string lexeme;   // fixed terminals only
  std::string pattern;  // terminal classes only (ECMAScript regex)

  bool is_terminal() const { return kind != SymbolKind::nonterminal; }
};

struct Production {
  ProductionId id = 0;
  SymbolId lhs = 0;
  std::vector<SymbolId> rhs;
};

/// Lexical class such as ID or NUM: a pattern for the lexer plus the closed
/// inventory of lexemes the vocabulary is built from.
struct TerminalClass {
  std::string name;
  std::string pattern;
  std::vector<std::string> inventory;
};

/// One rule as written in a grammar file. Fixed terminals are quoted
/// (`'let'`); class names and nonterminals are bare.
struct RuleSpec {
  std::string lhs;
  std::vector<std::string> rhs;
};

/// Immutable context-free grammar. Cheap to copy; safe to share across threads.
///
/// Construction validates the grammar: every nonterminal used has at least
/// one production and is productive, and the grammar is LL(1) once
/// alternatives sharing a common prefix are factored (so `A -> B | B C` is
/// accepted when FIRST(C) and FOLLOW(A) are disjoint).
class Grammar {
 public:
  Grammar(std::string start, std::vector<TerminalClass> classes,
          std::vector<RuleSpec> rules);

  /// Reads the versioned text format produced by to_text().
  static Grammar from_text(std::string_view text);
  static Grammar load(const std::string& path);
  std::string to_text() const;
  void save(const std::string& path) const;

  SymbolId start() const;
  std::span<const Symbol> symbols() const;
  const Symbol& symbol(SymbolId id) const;
  std::span<const Production> productions() const;
  const Production& production(ProductionId id) const;
  int production_count() const;
  /// Productions whose lhs is `nonterminal`, in id order.
  std::span<const ProductionId> alternatives(SymbolId nonterminal) const;
  std::span<const TerminalClass> classes() const;

  std::optional<SymbolId> find_nonterminal(std::string_view name) const;
  std::optional<SymbolId> find_fixed(std::string_view lexeme) const;
  std::optional<SymbolId> find_class(std::string_view name) const;

  /// Terminal symbols that can begin a derivation of `symbol`.
  std::span<const SymbolId> first(SymbolId symbol) const;
  /// Terminal symbols that can follow `nonterminal`; end of input is not listed
  /// (see follows_at_end()).
  std::span<const SymbolId> follow(SymbolId nonterminal) const;
  bool follows_at_end(SymbolId nonterminal) const;

  /// Display form, e.g. "Stmt -> return Expr ;".
  std::string describe(ProductionId id) const;

  /// Walks the prefix trie of one nonterminal's alternatives. Node 0 is the
  /// root; the parser follows edges by one-token lookahead.
  struct TrieNode {
    std::vector<std::pair<SymbolId, int>> edges;  // symbol -> child node
    std::optional<ProductionId> complete;         // production ending here
  };
  std::span<const TrieNode> trie(SymbolId nonterminal) const;

  /// Pattern matcher for a class symbol; true iff the whole lexeme matches.
  bool class_matches(SymbolId class_symbol, std::string_view lexeme) const;
  /// Length of the longest prefix of `text` matching the class, 0 if none.
  std::size_t class_prefix(SymbolId class_symbol, std::string_view text) const;

  bool operator==(const Grammar& other) const;

 private:
  struct Data;
  std::shared_ptr<const Data> data_;
};

}  // namespace unigen
