#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unigen/grammar.hpp"
#include "unigen/syntax.hpp"

namespace unigen {

/// Target-side vocabulary shared by both generation paradigms.
///
/// Ids 0..token_count()-1 are tokens (padding, end-of-sequence, then every
/// fixed lexeme and class inventory entry of the grammar); ids
/// token_count()..size()-1 are ApplyRule entries, one per production. A token
/// id means the same thing in token space and in action space, so the token
/// block is a prefix of the action block.
class UnifiedVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr const char* kSpecialClass = "<special>";

  UnifiedVocabulary() = default;
  explicit UnifiedVocabulary(const Grammar& grammar);

  int token_count() const { return static_cast<int>(tokens_.size()); }
  int rule_count() const { return rule_count_; }
  int size() const { return token_count() + rule_count_; }

  bool is_rule(int id) const { return id >= token_count() && id < size(); }
  int rule_id(ProductionId production) const;
  ProductionId production_of(int id) const;

  /// Throws VocabularyError for tokens outside the closed inventory.
  int token_id(const Token& token) const;
  bool contains(const Token& token) const { return index_.count(key(token)) > 0; }
  const Token& token(int id) const;
  std::span<const Token> tokens() const { return tokens_; }

  bool operator==(const UnifiedVocabulary& other) const {
    return tokens_ == other.tokens_ && rule_count_ == other.rule_count_;
  }

 private:
  static std::pair<std::string, std::string> key(const Token& t) { return {t.cls, t.lexeme}; }

  std::vector<Token> tokens_;
  std::map<std::pair<std::string, std::string>, int> index_;
  int rule_count_ = 0;
};

/// Encoder-side word vocabulary: padding, unknown, then words in sorted order.
class SourceVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  SourceVocabulary() = default;
  explicit SourceVocabulary(std::vector<std::string> words);

  int size() const { return static_cast<int>(words_.size()); }
  int id(const std::string& word) const;
  const std::string& word(int id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }
  std::vector<int> encode(const std::vector<std::string>& words) const;

  bool operator==(const SourceVocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

}  // namespace unigen
