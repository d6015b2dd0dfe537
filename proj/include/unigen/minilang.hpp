#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "unigen/grammar.hpp"
#include "unigen/syntax.hpp"

/// MiniLang: the small deterministic language used as the desk-scale target.
///
///   Prog -> Stmt | Stmt Prog
///   Stmt -> let ID = Expr ; | return Expr ; | if ( Expr ) { Prog }
///   Expr -> Term | Term + Expr
///   Term -> ID | NUM | ( Expr )
///
/// Dialect A spells assignment `=`, dialect B `:=`; both share production ids.
namespace unigen::minilang {

enum class Dialect { a, b };

/// Production ids, identical in both dialects.
enum Rule : ProductionId {
  prog_single = 0,
  prog_seq = 1,
  stmt_let = 2,
  stmt_return = 3,
  stmt_if = 4,
  expr_term = 5,
  expr_plus = 6,
  term_id = 7,
  term_num = 8,
  term_paren = 9,
};

const Grammar& grammar(Dialect dialect = Dialect::a);

/// The closed identifier inventory (50 names).
std::span<const std::string> identifier_names();
/// "0" .. "99".
std::span<const std::string> number_literals();

inline std::vector<Token> lex(std::string_view text, Dialect dialect = Dialect::a) {
  return unigen::lex(text, grammar(dialect));
}

struct DefUsePair {
  std::string name;
  int def_index = 0;  // ordinal among ID occurrences, in source order
  int use_index = 0;
  auto operator<=>(const DefUsePair&) const = default;
};

/// Links every ID use to the most recent visible `let` of the same name.
/// `let` binds after its right-hand side; `{ ... }` bodies open a scope.
/// Uses with no visible definition are left unpaired. Sorted by use_index.
std::vector<DefUsePair> defuse_pairs(const AstNode& ast, const Grammar& grammar);

struct ProgramShape {
  int depth = 2;            // maximum nesting of if-bodies and parentheses
  int max_statements = 3;   // per program / body
  int max_terms = 3;        // per expression
};

/// Samples a random well-formed program AST (deterministic given `rng` state).
AstNode random_program(std::mt19937_64& rng, const ProgramShape& shape,
                       Dialect dialect = Dialect::a);

}  // namespace unigen::minilang
