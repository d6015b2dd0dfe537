#include "unigen/grammar.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "unigen/error.hpp"

namespace unigen {

namespace {

constexpr std::string_view kMagic = "unigen-grammar";
constexpr int kFormatVersion = 1;

bool is_quoted(const std::string& s) {
  return s.size() >= 3 && s.front() == '\'' && s.back() == '\'';
}

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

}  // namespace

struct Grammar::Data {
  SymbolId start = 0;
  std::vector<Symbol> symbols;
  std::vector<Production> productions;
  std::vector<TerminalClass> classes;
  std::vector<std::vector<ProductionId>> alternatives;  // by symbol
  std::vector<std::vector<SymbolId>> first;             // by symbol
  std::vector<std::vector<SymbolId>> follow;            // by symbol
  std::vector<bool> follow_end;
  std::vector<std::vector<TrieNode>> tries;  // by symbol
  std::vector<std::regex> class_regex;       // by symbol (empty for others)
  std::string text;                          // canonical serialization
};

Grammar::Grammar(std::string start, std::vector<TerminalClass> classes,
                 std::vector<RuleSpec> rules) {
  auto data = std::make_shared<Data>();
  data->classes = std::move(classes);
  auto& symbols = data->symbols;

  std::map<std::string, SymbolId> nonterminals, class_ids, fixed_ids;
  for (const auto& rule : rules) {
    if (rule.lhs.empty() || is_quoted(rule.lhs))
      throw GrammarError("invalid rule lhs '" + rule.lhs + "'");
    if (!nonterminals.count(rule.lhs)) {
      nonterminals[rule.lhs] = static_cast<SymbolId>(symbols.size());
      symbols.push_back({SymbolKind::nonterminal, rule.lhs, "", ""});
    }
  }
  for (const auto& cls : data->classes) {
    if (cls.name.empty()) throw GrammarError("terminal class without a name");
    if (nonterminals.count(cls.name) || class_ids.count(cls.name))
      throw GrammarError("duplicate symbol name '" + cls.name + "'");
    class_ids[cls.name] = static_cast<SymbolId>(symbols.size());
    symbols.push_back({SymbolKind::terminal_class, cls.name, "", cls.pattern});
  }
  for (const auto& rule : rules) {
    for (const auto& item : rule.rhs) {
      if (!is_quoted(item)) continue;
      std::string lexeme = item.substr(1, item.size() - 2);
      if (!fixed_ids.count(lexeme)) {
        fixed_ids[lexeme] = static_cast<SymbolId>(symbols.size());
        symbols.push_back({SymbolKind::fixed_terminal, lexeme, lexeme, ""});
      }
    }
  }

  auto start_it = nonterminals.find(start);
  if (start_it == nonterminals.end())
    throw GrammarError("start symbol '" + start + "' has no production");
  data->start = start_it->second;

  const auto symbol_count = symbols.size();
  data->alternatives.resize(symbol_count);
  for (const auto& rule : rules) {
    Production p;
    p.id = static_cast<ProductionId>(data->productions.size());
    p.lhs = nonterminals.at(rule.lhs);
    if (rule.rhs.empty())
      throw GrammarError("production for '" + rule.lhs + "' has an empty rhs");
    for (const auto& item : rule.rhs) {
      if (is_quoted(item)) {
        p.rhs.push_back(fixed_ids.at(item.substr(1, item.size() - 2)));
      } else if (auto nt = nonterminals.find(item); nt != nonterminals.end()) {
        p.rhs.push_back(nt->second);
      } else if (auto c = class_ids.find(item); c != class_ids.end()) {
        p.rhs.push_back(c->second);
      } else {
        throw GrammarError("undefined symbol '" + item + "' in rule for '" +
                           rule.lhs + "'");
      }
    }
    data->alternatives[p.lhs].push_back(p.id);
    data->productions.push_back(std::move(p));
  }

  // Productivity: every nonterminal must derive some terminal string.
  std::vector<bool> productive(symbol_count, false);
  for (std::size_t s = 0; s < symbol_count; ++s)
    productive[s] = symbols[s].is_terminal();
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& p : data->productions) {
      if (productive[p.lhs]) continue;
      if (std::all_of(p.rhs.begin(), p.rhs.end(),
                      [&](SymbolId s) { return productive[s]; })) {
        productive[p.lhs] = true;
        changed = true;
      }
    }
  }
  for (std::size_t s = 0; s < symbol_count; ++s)
    if (!productive[s])
      throw GrammarError("nonterminal '" + symbols[s].name +
                         "' derives no terminal string");

  // FIRST sets. No production is empty, so only rhs[0] contributes.
  std::vector<std::set<SymbolId>> first(symbol_count);
  for (std::size_t s = 0; s < symbol_count; ++s)
    if (symbols[s].is_terminal()) first[s].insert(static_cast<SymbolId>(s));
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& p : data->productions) {
      auto before = first[p.lhs].size();
      first[p.lhs].insert(first[p.rhs[0]].begin(), first[p.rhs[0]].end());
      changed |= first[p.lhs].size() != before;
    }
  }

  // FOLLOW sets.
  std::vector<std::set<SymbolId>> follow(symbol_count);
  std::vector<bool> follow_end(symbol_count, false);
  follow_end[data->start] = true;
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& p : data->productions) {
      for (std::size_t k = 0; k < p.rhs.size(); ++k) {
        SymbolId b = p.rhs[k];
        if (symbols[b].is_terminal()) continue;
        auto before = follow[b].size();
        bool end_before = follow_end[b];
        if (k + 1 < p.rhs.size()) {
          const auto& f = first[p.rhs[k + 1]];
          follow[b].insert(f.begin(), f.end());
        } else {
          follow[b].insert(follow[p.lhs].begin(), follow[p.lhs].end());
          follow_end[b] = follow_end[b] || follow_end[p.lhs];
        }
        changed |= follow[b].size() != before || follow_end[b] != end_before;
      }
    }
  }

  // Prefix tries with the LL(1) conflict check at every node.
  data->tries.resize(symbol_count);
  for (std::size_t nt = 0; nt < symbol_count; ++nt) {
    if (symbols[nt].is_terminal()) continue;
    auto& trie = data->tries[nt];
    trie.emplace_back();
    for (ProductionId pid : data->alternatives[nt]) {
      int node = 0;
      for (SymbolId s : data->productions[pid].rhs) {
        auto& edges = trie[node].edges;
        auto it = std::find_if(edges.begin(), edges.end(),
                               [&](const auto& e) { return e.first == s; });
        if (it != edges.end()) {
          node = it->second;
        } else {
          int child = static_cast<int>(trie.size());
          edges.emplace_back(s, child);
          trie.emplace_back();
          node = child;
        }
      }
      if (trie[node].complete)
        throw GrammarError("duplicate production for '" + symbols[nt].name + "'");
      trie[node].complete = pid;
    }
    for (const auto& node : trie) {
      std::set<SymbolId> seen;
      for (const auto& [s, child] : node.edges) {
        for (SymbolId t : first[s]) {
          if (!seen.insert(t).second ||
              (node.complete && follow[nt].count(t)))
            throw GrammarError("grammar is not LL(1): conflict on '" +
                               symbols[t].name + "' for nonterminal '" +
                               symbols[nt].name + "'");
        }
      }
    }
  }

  data->first.resize(symbol_count);
  data->follow.resize(symbol_count);
  data->follow_end = follow_end;
  data->class_regex.resize(symbol_count);
  for (std::size_t s = 0; s < symbol_count; ++s) {
    data->first[s].assign(first[s].begin(), first[s].end());
    data->follow[s].assign(follow[s].begin(), follow[s].end());
    if (symbols[s].kind == SymbolKind::terminal_class) {
      try {
        data->class_regex[s] = std::regex(symbols[s].pattern);
      } catch (const std::regex_error&) {
        throw GrammarError("bad pattern for class '" + symbols[s].name + "'");
      }
    }
  }

  std::ostringstream out;
  out << kMagic << ' ' << kFormatVersion << '\n';
  out << "start " << start << '\n';
  for (const auto& cls : data->classes) {
    out << "class " << cls.name << ' ' << cls.pattern;
    if (!cls.inventory.empty()) {
      out << " :";
      for (const auto& lexeme : cls.inventory) out << ' ' << lexeme;
    }
    out << '\n';
  }
  for (const auto& rule : rules) {
    out << "rule " << rule.lhs << " ->";
    for (const auto& item : rule.rhs) out << ' ' << item;
    out << '\n';
  }
  data->text = out.str();
  data_ = std::move(data);
}

Grammar Grammar::from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = false;
  std::string start;
  std::vector<TerminalClass> classes;
  std::vector<RuleSpec> rules;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto words = split_ws(line);
    if (words.empty() || words[0].starts_with('#')) continue;
    auto fail = [&](const std::string& msg) {
      return GrammarError("grammar line " + std::to_string(line_no) + ": " + msg);
    };
    if (!header) {
      if (words.size() != 2 || words[0] != kMagic)
        throw fail("missing header");
      if (words[1] != std::to_string(kFormatVersion))
        throw fail("unsupported version " + words[1]);
      header = true;
    } else if (words[0] == "start") {
      if (words.size() != 2) throw fail("expected 'start NAME'");
      start = words[1];
    } else if (words[0] == "class") {
      if (words.size() < 3) throw fail("expected 'class NAME PATTERN'");
      TerminalClass cls{words[1], words[2], {}};
      if (words.size() > 3) {
        if (words[3] != ":") throw fail("expected ':' before inventory");
        cls.inventory.assign(words.begin() + 4, words.end());
      }
      classes.push_back(std::move(cls));
    } else if (words[0] == "rule") {
      if (words.size() < 4 || words[2] != "->")
        throw fail("expected 'rule LHS -> RHS...'");
      rules.push_back({words[1], {words.begin() + 3, words.end()}});
    } else {
      throw fail("unknown directive '" + words[0] + "'");
    }
  }
  if (!header) throw GrammarError("empty grammar file");
  return Grammar(start, std::move(classes), std::move(rules));
}

Grammar Grammar::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw GrammarError("cannot open grammar file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

std::string Grammar::to_text() const { return data_->text; }

void Grammar::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw GrammarError("cannot write grammar file " + path);
  out << data_->text;
}

SymbolId Grammar::start() const { return data_->start; }
std::span<const Symbol> Grammar::symbols() const { return data_->symbols; }
const Symbol& Grammar::symbol(SymbolId id) const { return data_->symbols.at(id); }
std::span<const Production> Grammar::productions() const {
  return data_->productions;
}
const Production& Grammar::production(ProductionId id) const {
  return data_->productions.at(id);
}
int Grammar::production_count() const {
  return static_cast<int>(data_->productions.size());
}
std::span<const ProductionId> Grammar::alternatives(SymbolId nonterminal) const {
  return data_->alternatives.at(nonterminal);
}
std::span<const TerminalClass> Grammar::classes() const { return data_->classes; }

std::optional<SymbolId> Grammar::find_nonterminal(std::string_view name) const {
  for (std::size_t s = 0; s < data_->symbols.size(); ++s) {
    const auto& sym = data_->symbols[s];
    if (sym.kind == SymbolKind::nonterminal && sym.name == name)
      return static_cast<SymbolId>(s);
  }
  return std::nullopt;
}

std::optional<SymbolId> Grammar::find_fixed(std::string_view lexeme) const {
  for (std::size_t s = 0; s < data_->symbols.size(); ++s) {
    const auto& sym = data_->symbols[s];
    if (sym.kind == SymbolKind::fixed_terminal && sym.lexeme == lexeme)
      return static_cast<SymbolId>(s);
  }
  return std::nullopt;
}

std::optional<SymbolId> Grammar::find_class(std::string_view name) const {
  for (std::size_t s = 0; s < data_->symbols.size(); ++s) {
    const auto& sym = data_->symbols[s];
    if (sym.kind == SymbolKind::terminal_class && sym.name == name)
      return static_cast<SymbolId>(s);
  }
  return std::nullopt;
}

std::span<const SymbolId> Grammar::first(SymbolId symbol) const {
  return data_->first.at(symbol);
}
std::span<const SymbolId> Grammar::follow(SymbolId nonterminal) const {
  return data_->follow.at(nonterminal);
}
bool Grammar::follows_at_end(SymbolId nonterminal) const {
  return data_->follow_end.at(nonterminal);
}

std::string Grammar::describe(ProductionId id) const {
  const auto& p = production(id);
  std::string out = symbol(p.lhs).name + " ->";
  for (SymbolId s : p.rhs) out += " " + symbol(s).name;
  return out;
}

std::span<const Grammar::TrieNode> Grammar::trie(SymbolId nonterminal) const {
  return data_->tries.at(nonterminal);
}

bool Grammar::class_matches(SymbolId class_symbol, std::string_view lexeme) const {
  const auto& re = data_->class_regex.at(class_symbol);
  return std::regex_match(lexeme.begin(), lexeme.end(), re);
}

std::size_t Grammar::class_prefix(SymbolId class_symbol, std::string_view text) const {
  const auto& re = data_->class_regex.at(class_symbol);
  std::match_results<std::string_view::const_iterator> m;
  if (std::regex_search(text.begin(), text.end(), m, re,
                        std::regex_constants::match_continuous))
    return static_cast<std::size_t>(m.length(0));
  return 0;
}

bool Grammar::operator==(const Grammar& other) const {
  return data_ == other.data_ || data_->text == other.data_->text;
}

}  // namespace unigen
