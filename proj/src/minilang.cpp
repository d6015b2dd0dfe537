#include "unigen/minilang.hpp"

#include <algorithm>
#include <map>

#include "unigen/random.hpp"

namespace unigen::minilang {

namespace {

Grammar build(Dialect dialect) {
  const std::string assign = dialect == Dialect::a ? "'='" : "':='";
  std::vector<TerminalClass> classes{
      {"ID", "[A-Za-z_][A-Za-z0-9_]*",
       {identifier_names().begin(), identifier_names().end()}},
      {"NUM", "[0-9]+", {number_literals().begin(), number_literals().end()}},
  };
  std::vector<RuleSpec> rules{
      {"Prog", {"Stmt"}},
      {"Prog", {"Stmt", "Prog"}},
      {"Stmt", {"'let'", "ID", assign, "Expr", "';'"}},
      {"Stmt", {"'return'", "Expr", "';'"}},
      {"Stmt", {"'if'", "'('", "Expr", "')'", "'{'", "Prog", "'}'"}},
      {"Expr", {"Term"}},
      {"Expr", {"Term", "'+'", "Expr"}},
      {"Term", {"ID"}},
      {"Term", {"NUM"}},
      {"Term", {"'('", "Expr", "')'"}},
  };
  return Grammar("Prog", std::move(classes), std::move(rules));
}

class ProgramSampler {
 public:
  ProgramSampler(std::mt19937_64& rng, const ProgramShape& shape, const Grammar& g)
      : rng_(rng), shape_(shape), g_(g) {}

  AstNode program(int depth, int max_statements) {
    int count = 1 + static_cast<int>(uniform_index(rng_, max_statements));
    std::vector<AstNode> statements;
    scopes_.emplace_back();
    for (int k = 0; k < count; ++k) statements.push_back(statement(depth));
    scopes_.pop_back();
    AstNode prog = AstNode::internal(g_, prog_single, {std::move(statements.back())});
    for (int k = count - 2; k >= 0; --k)
      prog = AstNode::internal(g_, prog_seq, {std::move(statements[k]), std::move(prog)});
    return prog;
  }

 private:
  AstNode fixed(ProductionId p, std::size_t k) const {
    SymbolId s = g_.production(p).rhs[k];
    return AstNode::leaf(s, g_.symbol(s).lexeme);
  }

  AstNode statement(int depth) {
    double r = uniform_real(rng_);
    if (depth > 0 && r < 0.3) {
      AstNode cond = expression(depth - 1);
      AstNode body = program(depth - 1, std::max(1, shape_.max_statements - 1));
      return AstNode::internal(
          g_, stmt_if,
          {fixed(stmt_if, 0), fixed(stmt_if, 1), std::move(cond), fixed(stmt_if, 3),
           fixed(stmt_if, 4), std::move(body), fixed(stmt_if, 6)});
    }
    if (r < 0.65) {
      AstNode value = expression(depth);
      std::string name = fresh_or_visible(0.3);
      scopes_.back().push_back(name);
      return AstNode::internal(
          g_, stmt_let,
          {fixed(stmt_let, 0), id_leaf(name), fixed(stmt_let, 2), std::move(value),
           fixed(stmt_let, 4)});
    }
    return AstNode::internal(
        g_, stmt_return, {fixed(stmt_return, 0), expression(depth), fixed(stmt_return, 2)});
  }

  AstNode expression(int depth) {
    int terms = 1 + static_cast<int>(uniform_index(rng_, shape_.max_terms));
    std::vector<AstNode> items;
    for (int k = 0; k < terms; ++k) items.push_back(term(depth));
    AstNode expr = AstNode::internal(g_, expr_term, {std::move(items.back())});
    for (int k = terms - 2; k >= 0; --k)
      expr = AstNode::internal(g_, expr_plus,
                               {std::move(items[k]), fixed(expr_plus, 1), std::move(expr)});
    return expr;
  }

  AstNode term(int depth) {
    double r = uniform_real(rng_);
    if (depth > 0 && r < 0.12) {
      return AstNode::internal(
          g_, term_paren,
          {fixed(term_paren, 0), expression(depth - 1), fixed(term_paren, 2)});
    }
    if (r < 0.6)
      return AstNode::internal(g_, term_id, {id_leaf(fresh_or_visible(0.6))});
    auto nums = number_literals();
    SymbolId num = g_.production(term_num).rhs[0];
    return AstNode::internal(
        g_, term_num, {AstNode::leaf(num, nums[uniform_index(rng_, nums.size())])});
  }

  // Picks a visible name with probability `reuse` when one exists.
  std::string fresh_or_visible(double reuse) {
    std::vector<std::string> visible;
    for (const auto& scope : scopes_) visible.insert(visible.end(), scope.begin(), scope.end());
    if (!visible.empty() && uniform_real(rng_) < reuse)
      return visible[uniform_index(rng_, visible.size())];
    auto names = identifier_names();
    return names[uniform_index(rng_, names.size())];
  }

  AstNode id_leaf(std::string name) const {
    return AstNode::leaf(g_.production(term_id).rhs[0], std::move(name));
  }

  std::mt19937_64& rng_;
  const ProgramShape& shape_;
  const Grammar& g_;
  std::vector<std::vector<std::string>> scopes_;
};

class DefUseWalker {
 public:
  explicit DefUseWalker(const Grammar& g) : g_(g) {}

  std::vector<DefUsePair> run(const AstNode& ast) {
    scopes_.emplace_back();
    walk(ast);
    std::sort(pairs_.begin(), pairs_.end(),
              [](const auto& x, const auto& y) { return x.use_index < y.use_index; });
    return pairs_;
  }

 private:
  bool is_id(const AstNode& n) const {
    return n.is_leaf() && g_.symbol(n.symbol).kind == SymbolKind::terminal_class &&
           g_.symbol(n.symbol).name == "ID";
  }
  bool starts_with_fixed(const AstNode& n, std::string_view lexeme) const {
    return !n.is_leaf() && !n.children.empty() && n.children[0].is_leaf() &&
           n.children[0].lexeme == lexeme &&
           g_.symbol(n.children[0].symbol).kind == SymbolKind::fixed_terminal;
  }

  void use(const AstNode& leaf) {
    int index = counter_++;
    for (auto scope = scopes_.rbegin(); scope != scopes_.rend(); ++scope) {
      if (auto it = scope->find(leaf.lexeme); it != scope->end()) {
        pairs_.push_back({leaf.lexeme, it->second, index});
        return;
      }
    }
  }

  void walk(const AstNode& n) {
    if (n.is_leaf()) {
      if (is_id(n)) use(n);
      return;
    }
    if (starts_with_fixed(n, "let") && n.children.size() >= 2 && is_id(n.children[1])) {
      int def_index = counter_++;
      for (std::size_t k = 2; k < n.children.size(); ++k) walk(n.children[k]);
      scopes_.back()[n.children[1].lexeme] = def_index;
      return;
    }
    for (const auto& child : n.children) {
      bool opens = child.is_leaf() && child.lexeme == "{";
      bool closes = child.is_leaf() && child.lexeme == "}";
      if (opens) scopes_.emplace_back();
      if (closes && scopes_.size() > 1) scopes_.pop_back();
      walk(child);
    }
  }

  const Grammar& g_;
  std::vector<std::map<std::string, int>> scopes_;
  std::vector<DefUsePair> pairs_;
  int counter_ = 0;
};

}  // namespace

const Grammar& grammar(Dialect dialect) {
  static const Grammar a = build(Dialect::a);
  static const Grammar b = build(Dialect::b);
  return dialect == Dialect::a ? a : b;
}

std::span<const std::string> identifier_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (char c = 'a'; c <= 'z'; ++c) out.emplace_back(1, c);
    for (const char* w : {"acc", "val", "tmp", "sum", "cnt", "idx", "res", "len",
                          "hi", "lo", "total", "count", "left", "right", "prev",
                          "head", "tail", "flag", "item", "key", "low", "high",
                          "mid", "size"})
      out.emplace_back(w);
    return out;
  }();
  return names;
}

std::span<const std::string> number_literals() {
  static const std::vector<std::string> nums = [] {
    std::vector<std::string> out;
    for (int k = 0; k < 100; ++k) out.push_back(std::to_string(k));
    return out;
  }();
  return nums;
}

std::vector<DefUsePair> defuse_pairs(const AstNode& ast, const Grammar& grammar) {
  return DefUseWalker(grammar).run(ast);
}

AstNode random_program(std::mt19937_64& rng, const ProgramShape& shape, Dialect dialect) {
  const Grammar& g = grammar(dialect);
  return ProgramSampler(rng, shape, g).program(shape.depth, shape.max_statements);
}

}  // namespace unigen::minilang
