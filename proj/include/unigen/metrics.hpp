#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "unigen/grammar.hpp"

/// Code generation metrics over whitespace-separated token lexemes. Every
/// score lies in [0, 1].
namespace unigen::metrics {

using Words = std::vector<std::string>;

/// 1 iff the sequences are identical.
double exact_match(const Words& hyp, const Words& ref);

/// Clipped n-gram counts of one hypothesis against one reference, n = 1..4.
struct NgramCounts {
  std::array<double, 4> matched{};
  std::array<double, 4> total{};
  double hyp_length = 0.0;
  double ref_length = 0.0;
};

/// `unigram_weight` scales each unigram's clipped and total count (keyword
/// weighting); higher orders are unweighted.
NgramCounts count_ngrams(const Words& hyp, const Words& ref,
                         double (*unigram_weight)(const std::string&) = nullptr);

/// Smoothed sentence BLEU-4: geometric mean of modified precisions, where an
/// order with no clipped match uses 1 / (total + 1), times the brevity
/// penalty exp(min(0, 1 - |ref| / |hyp|)). Empty hypotheses score 0.
double bleu_sentence(const Words& hyp, const Words& ref);

/// Unsmoothed corpus BLEU-4 from summed counts. Throws EmptyCorpusError.
double bleu_corpus(const std::vector<std::pair<Words, Words>>& pairs);

/// Keyword weight of the weighted n-gram component: 1.0 for let/return/if,
/// 0.2 otherwise.
double keyword_weight(const std::string& token);

struct CodeBleu {
  double ngram = 0.0;
  double weighted_ngram = 0.0;
  double syntax = 0.0;
  double dataflow = 0.0;
  double composite = 0.0;
};

/// 0.25 each of BLEU, keyword-weighted BLEU, depth-3 subtree match and
/// def-use F1. Unparseable hypotheses score 0 on the last two.
CodeBleu codebleu(const Words& hyp, const Words& ref, const Grammar& grammar);

/// Fraction of the reference's depth-3 production subtrees present in the
/// hypothesis (multiset, clipped).
double syntax_match(const Words& hyp, const Words& ref, const Grammar& grammar);
/// F1 over def-use links keyed by (name, name, per-name ordinal).
double dataflow_match(const Words& hyp, const Words& ref, const Grammar& grammar);

struct MetricReport {
  std::size_t count = 0;
  double em = 0.0;
  double bleu = 0.0;
  double codebleu = 0.0;
  CodeBleu breakdown;  // component means; composite == codebleu
  double mean_sentence_bleu = 0.0;

  nlohmann::ordered_json to_json() const;
};

/// Corpus-level report. Throws EmptyCorpusError.
MetricReport evaluate(const std::vector<Words>& hyps, const std::vector<Words>& refs,
                      const Grammar& grammar);

}  // namespace unigen::metrics
