#include "unigen/vocabulary.hpp"

#include <algorithm>
#include <set>

#include "unigen/error.hpp"

namespace unigen {

UnifiedVocabulary::UnifiedVocabulary(const Grammar& grammar) {
  tokens_.push_back({"<pad>", kSpecialClass});
  tokens_.push_back({"<eos>", kSpecialClass});
  for (const auto& sym : grammar.symbols())
    if (sym.kind == SymbolKind::fixed_terminal) tokens_.push_back({sym.lexeme, ""});
  for (const auto& cls : grammar.classes())
    for (const auto& lexeme : cls.inventory) tokens_.push_back({lexeme, cls.name});
  for (std::size_t k = 0; k < tokens_.size(); ++k) {
    if (!index_.emplace(key(tokens_[k]), static_cast<int>(k)).second)
      throw VocabularyError("duplicate vocabulary entry '" + tokens_[k].lexeme + "'");
  }
  rule_count_ = grammar.production_count();
}

int UnifiedVocabulary::rule_id(ProductionId production) const {
  if (production < 0 || production >= rule_count_)
    throw VocabularyError("production id " + std::to_string(production) + " out of range");
  return token_count() + production;
}

ProductionId UnifiedVocabulary::production_of(int id) const {
  if (!is_rule(id)) throw VocabularyError("id " + std::to_string(id) + " is not a rule");
  return id - token_count();
}

int UnifiedVocabulary::token_id(const Token& token) const {
  auto it = index_.find(key(token));
  if (it == index_.end())
    throw VocabularyError("token '" + token.lexeme + "'" +
                          (token.cls.empty() ? std::string() : " (" + token.cls + ")") +
                          " is not in the vocabulary");
  return it->second;
}

const Token& UnifiedVocabulary::token(int id) const {
  if (id < 0 || id >= token_count())
    throw VocabularyError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

SourceVocabulary::SourceVocabulary(std::vector<std::string> words) {
  std::set<std::string> unique(words.begin(), words.end());
  unique.erase("<pad>");
  unique.erase("<unk>");
  words_ = {"<pad>", "<unk>"};
  words_.insert(words_.end(), unique.begin(), unique.end());
  for (std::size_t k = 0; k < words_.size(); ++k) index_[words_[k]] = static_cast<int>(k);
}

int SourceVocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> SourceVocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

}  // namespace unigen
