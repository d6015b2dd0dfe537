#include "unigen/syntax.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "unigen/error.hpp"

namespace unigen {

AstNode AstNode::leaf(SymbolId symbol, std::string lexeme) {
  AstNode node;
  node.symbol = symbol;
  node.lexeme = std::move(lexeme);
  return node;
}

AstNode AstNode::internal(const Grammar& grammar, ProductionId production,
                          std::vector<AstNode> children) {
  AstNode node;
  node.production = production;
  node.symbol = grammar.production(production).lhs;
  node.children = std::move(children);
  return node;
}

std::vector<Token> lex(std::string_view text, const Grammar& grammar) {
  std::vector<Token> tokens;
  std::vector<SymbolId> fixed, classes;
  for (std::size_t s = 0; s < grammar.symbols().size(); ++s) {
    auto kind = grammar.symbols()[s].kind;
    if (kind == SymbolKind::fixed_terminal) fixed.push_back(static_cast<SymbolId>(s));
    if (kind == SymbolKind::terminal_class) classes.push_back(static_cast<SymbolId>(s));
  }
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[pos]))) {
      ++pos;
      continue;
    }
    auto rest = text.substr(pos);
    std::size_t best = 0;
    Token token;
    for (SymbolId s : fixed) {
      const auto& lexeme = grammar.symbol(s).lexeme;
      if (lexeme.size() > best && rest.starts_with(lexeme)) {
        best = lexeme.size();
        token = {lexeme, ""};
      }
    }
    for (SymbolId s : classes) {
      auto len = grammar.class_prefix(s, rest);
      if (len > best) {
        best = len;
        token = {std::string(rest.substr(0, len)), grammar.symbol(s).name};
      }
    }
    if (best == 0)
      throw LexError(pos, "unrecognized character '" + std::string(1, text[pos]) +
                              "' at offset " + std::to_string(pos));
    tokens.push_back(std::move(token));
    pos += best;
  }
  return tokens;
}

namespace {

class Parser {
 public:
  Parser(const std::vector<Token>& tokens, const Grammar& grammar)
      : tokens_(tokens), grammar_(grammar) {
    terminals_.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto& t = tokens[i];
      auto id = t.is_fixed() ? grammar.find_fixed(t.lexeme) : grammar.find_class(t.cls);
      if (!id)
        throw ParseError(i, {}, "token '" + t.lexeme + "' is not a terminal of the grammar");
      terminals_.push_back(*id);
    }
  }

  AstNode run(SymbolId root) {
    AstNode ast = parse_symbol(root);
    if (pos_ < tokens_.size())
      throw ParseError(pos_, {"<end>"},
                       "trailing token '" + tokens_[pos_].lexeme +
                           "' at position " + std::to_string(pos_));
    return ast;
  }

 private:
  bool lookahead_in(SymbolId symbol) const {
    if (pos_ >= tokens_.size()) return false;
    auto first = grammar_.first(symbol);
    return std::binary_search(first.begin(), first.end(), terminals_[pos_]);
  }

  [[noreturn]] void fail(const std::set<SymbolId>& expected) const {
    std::vector<std::string> names;
    for (SymbolId s : expected) names.push_back(grammar_.symbol(s).name);
    std::sort(names.begin(), names.end());
    std::string found = pos_ < tokens_.size() ? "'" + tokens_[pos_].lexeme + "'" : "end of input";
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : " ") + n;
    throw ParseError(pos_, names,
                     "unexpected " + found + " at position " + std::to_string(pos_) +
                         "; expected one of: " + list);
  }

  AstNode parse_symbol(SymbolId symbol) {
    const auto& sym = grammar_.symbol(symbol);
    if (sym.is_terminal()) {
      if (pos_ >= tokens_.size() || terminals_[pos_] != symbol) fail({symbol});
      return AstNode::leaf(symbol, tokens_[pos_++].lexeme);
    }
    auto trie = grammar_.trie(symbol);
    int node = 0;
    std::vector<AstNode> children;
    while (true) {
      const auto& current = trie[node];
      int next = -1;
      SymbolId edge_symbol = 0;
      for (const auto& [s, child] : current.edges) {
        if (lookahead_in(s)) {
          next = child;
          edge_symbol = s;
          break;
        }
      }
      if (next >= 0) {
        children.push_back(parse_symbol(edge_symbol));
        node = next;
        continue;
      }
      if (current.complete)
        return AstNode::internal(grammar_, *current.complete, std::move(children));
      std::set<SymbolId> expected;
      for (const auto& edge : current.edges) {
        auto first = grammar_.first(edge.first);
        expected.insert(first.begin(), first.end());
      }
      fail(expected);
    }
  }

  const std::vector<Token>& tokens_;
  const Grammar& grammar_;
  std::vector<SymbolId> terminals_;
  std::size_t pos_ = 0;
};

void collect(const AstNode& node, const Grammar& grammar, std::vector<Token>& out) {
  if (node.is_leaf()) {
    const auto& sym = grammar.symbol(node.symbol);
    out.push_back({node.lexeme,
                   sym.kind == SymbolKind::terminal_class ? sym.name : std::string()});
    return;
  }
  for (const auto& child : node.children) collect(child, grammar, out);
}

}  // namespace

AstNode parse(const std::vector<Token>& tokens, const Grammar& grammar) {
  return parse(tokens, grammar, grammar.start());
}

AstNode parse(const std::vector<Token>& tokens, const Grammar& grammar, SymbolId root) {
  return Parser(tokens, grammar).run(root);
}

std::vector<Token> render(const AstNode& ast, const Grammar& grammar) {
  std::vector<Token> out;
  collect(ast, grammar, out);
  return out;
}

void validate(const AstNode& ast, const Grammar& grammar) {
  if (ast.is_leaf()) {
    if (ast.symbol < 0 || ast.symbol >= static_cast<SymbolId>(grammar.symbols().size()))
      throw GrammarError("leaf symbol out of range");
    const auto& sym = grammar.symbol(ast.symbol);
    if (sym.kind == SymbolKind::nonterminal)
      throw GrammarError("leaf carries nonterminal '" + sym.name + "'");
    if (sym.kind == SymbolKind::fixed_terminal && ast.lexeme != sym.lexeme)
      throw GrammarError("leaf lexeme '" + ast.lexeme + "' does not match '" + sym.lexeme + "'");
    if (sym.kind == SymbolKind::terminal_class &&
        !grammar.class_matches(ast.symbol, ast.lexeme))
      throw GrammarError("leaf lexeme '" + ast.lexeme + "' does not match class " + sym.name);
    return;
  }
  if (ast.production >= grammar.production_count())
    throw GrammarError("production id out of range");
  const auto& p = grammar.production(ast.production);
  if (ast.symbol != p.lhs || ast.children.size() != p.rhs.size())
    throw GrammarError("node does not match production " + grammar.describe(p.id));
  for (std::size_t k = 0; k < p.rhs.size(); ++k) {
    const auto& child = ast.children[k];
    if (child.symbol != p.rhs[k])
      throw GrammarError("child " + std::to_string(k) + " of " + grammar.describe(p.id) +
                         " has the wrong symbol");
    validate(child, grammar);
  }
}

std::string join(const std::vector<Token>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t.lexeme;
  }
  return out;
}

AstNode retarget(const AstNode& ast, const Grammar& target) {
  AstNode out = ast;
  if (!ast.is_leaf()) {
    const auto& p = target.production(ast.production);
    out.symbol = p.lhs;
    for (std::size_t k = 0; k < out.children.size(); ++k) {
      out.children[k] = retarget(ast.children[k], target);
      out.children[k].symbol = p.rhs.at(k);
      const auto& sym = target.symbol(p.rhs[k]);
      if (sym.kind == SymbolKind::fixed_terminal) out.children[k].lexeme = sym.lexeme;
    }
  }
  return out;
}

}  // namespace unigen
