#include "unigen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

#include "unigen/error.hpp"
#include "unigen/minilang.hpp"
#include "unigen/syntax.hpp"

namespace unigen::metrics {

namespace {

constexpr int kMaxOrder = 4;
constexpr int kSubtreeDepth = 3;

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(const Words& words, int n) {
  std::map<Ngram, int> out;
  for (std::size_t i = 0; i + n <= words.size(); ++i)
    ++out[Ngram(words.begin() + static_cast<long>(i), words.begin() + static_cast<long>(i) + n)];
  return out;
}

double smoothed_bleu(const NgramCounts& c) {
  if (c.hyp_length == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    const double p = c.matched[n] > 0.0 ? c.matched[n] / c.total[n] : 1.0 / (c.total[n] + 1.0);
    log_sum += std::log(p);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - c.ref_length / c.hyp_length));
  return bp * std::exp(log_sum / kMaxOrder);
}

std::optional<AstNode> try_parse(const Words& words, const Grammar& grammar) {
  std::string text;
  for (const auto& w : words) {
    if (!text.empty()) text += ' ';
    text += w;
  }
  try {
    return parse(lex(text, grammar), grammar);
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::string signature(const AstNode& node, int depth) {
  if (node.production < 0) return "_";
  std::string s = std::to_string(node.production);
  if (depth <= 1) return s;
  s += '(';
  for (std::size_t i = 0; i < node.children.size(); ++i) {
    if (i) s += ',';
    s += signature(node.children[i], depth - 1);
  }
  return s + ')';
}

void collect_subtrees(const AstNode& node, std::map<std::string, int>& out) {
  if (node.production < 0) return;
  ++out[signature(node, kSubtreeDepth)];
  for (const auto& c : node.children) collect_subtrees(c, out);
}

std::map<std::tuple<std::string, std::string, int>, int> dataflow_keys(const AstNode& ast,
                                                                       const Grammar& grammar) {
  std::map<std::tuple<std::string, std::string, int>, int> out;
  std::map<std::string, int> ordinal;
  for (const auto& p : minilang::defuse_pairs(ast, grammar))
    ++out[{p.name, p.name, ordinal[p.name]++}];
  return out;
}

template <class K>
int clipped_overlap(const std::map<K, int>& a, const std::map<K, int>& b) {
  int n = 0;
  for (const auto& [key, count] : a) {
    auto it = b.find(key);
    if (it != b.end()) n += std::min(count, it->second);
  }
  return n;
}

template <class K>
int total_count(const std::map<K, int>& m) {
  int n = 0;
  for (const auto& [key, count] : m) n += count;
  return n;
}

double syntax_match(const std::optional<AstNode>& hyp, const std::optional<AstNode>& ref) {
  if (!hyp || !ref) return 0.0;
  std::map<std::string, int> h, r;
  collect_subtrees(*hyp, h);
  collect_subtrees(*ref, r);
  const int total = total_count(r);
  return total == 0 ? 0.0 : static_cast<double>(clipped_overlap(r, h)) / total;
}

double dataflow_match(const std::optional<AstNode>& hyp, const std::optional<AstNode>& ref,
                      const Grammar& grammar) {
  if (!hyp || !ref) return 0.0;
  auto h = dataflow_keys(*hyp, grammar);
  auto r = dataflow_keys(*ref, grammar);
  const int nh = total_count(h), nr = total_count(r);
  if (nh == 0 && nr == 0) return 1.0;
  if (nh == 0 || nr == 0) return 0.0;
  const double overlap = clipped_overlap(r, h);
  const double precision = overlap / nh, recall = overlap / nr;
  return overlap == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double exact_match(const Words& hyp, const Words& ref) { return hyp == ref ? 1.0 : 0.0; }

NgramCounts count_ngrams(const Words& hyp, const Words& ref,
                         double (*unigram_weight)(const std::string&)) {
  NgramCounts c;
  c.hyp_length = static_cast<double>(hyp.size());
  c.ref_length = static_cast<double>(ref.size());
  for (int n = 1; n <= kMaxOrder; ++n) {
    auto h = ngram_counts(hyp, n);
    auto r = ngram_counts(ref, n);
    for (const auto& [gram, count] : h) {
      const double w = n == 1 && unigram_weight ? unigram_weight(gram[0]) : 1.0;
      auto it = r.find(gram);
      if (it != r.end()) c.matched[n - 1] += w * std::min(count, it->second);
      c.total[n - 1] += w * count;
    }
  }
  return c;
}

double bleu_sentence(const Words& hyp, const Words& ref) {
  return smoothed_bleu(count_ngrams(hyp, ref));
}

double bleu_corpus(const std::vector<std::pair<Words, Words>>& pairs) {
  if (pairs.empty()) throw EmptyCorpusError("bleu_corpus needs at least one pair");
  NgramCounts sum;
  for (const auto& [hyp, ref] : pairs) {
    NgramCounts c = count_ngrams(hyp, ref);
    for (int n = 0; n < kMaxOrder; ++n) {
      sum.matched[n] += c.matched[n];
      sum.total[n] += c.total[n];
    }
    sum.hyp_length += c.hyp_length;
    sum.ref_length += c.ref_length;
  }
  if (sum.hyp_length == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (sum.matched[n] == 0.0) return 0.0;
    log_sum += std::log(sum.matched[n] / sum.total[n]);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - sum.ref_length / sum.hyp_length));
  return bp * std::exp(log_sum / kMaxOrder);
}

double keyword_weight(const std::string& token) {
  return token == "let" || token == "return" || token == "if" ? 1.0 : 0.2;
}

double syntax_match(const Words& hyp, const Words& ref, const Grammar& grammar) {
  return syntax_match(try_parse(hyp, grammar), try_parse(ref, grammar));
}

double dataflow_match(const Words& hyp, const Words& ref, const Grammar& grammar) {
  return dataflow_match(try_parse(hyp, grammar), try_parse(ref, grammar), grammar);
}

CodeBleu codebleu(const Words& hyp, const Words& ref, const Grammar& grammar) {
  CodeBleu c;
  c.ngram = bleu_sentence(hyp, ref);
  c.weighted_ngram = smoothed_bleu(count_ngrams(hyp, ref, &keyword_weight));
  auto h = try_parse(hyp, grammar);
  auto r = try_parse(ref, grammar);
  c.syntax = syntax_match(h, r);
  c.dataflow = dataflow_match(h, r, grammar);
  c.composite = 0.25 * c.ngram + 0.25 * c.weighted_ngram + 0.25 * c.syntax + 0.25 * c.dataflow;
  return c;
}

nlohmann::ordered_json MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["count"] = count;
  j["em"] = em;
  j["bleu"] = bleu;
  j["codebleu"] = codebleu;
  j["codebleu_components"] = {{"ngram", breakdown.ngram},
                              {"weighted_ngram", breakdown.weighted_ngram},
                              {"syntax", breakdown.syntax},
                              {"dataflow", breakdown.dataflow}};
  j["mean_sentence_bleu"] = mean_sentence_bleu;
  return j;
}

MetricReport evaluate(const std::vector<Words>& hyps, const std::vector<Words>& refs,
                      const Grammar& grammar) {
  if (hyps.size() != refs.size()) throw DimensionError("hypothesis and reference counts differ");
  if (hyps.empty()) throw EmptyCorpusError("cannot evaluate an empty corpus");
  MetricReport r;
  r.count = hyps.size();
  std::vector<std::pair<Words, Words>> pairs;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    r.em += exact_match(hyps[i], refs[i]);
    r.mean_sentence_bleu += bleu_sentence(hyps[i], refs[i]);
    CodeBleu c = codebleu(hyps[i], refs[i], grammar);
    r.breakdown.ngram += c.ngram;
    r.breakdown.weighted_ngram += c.weighted_ngram;
    r.breakdown.syntax += c.syntax;
    r.breakdown.dataflow += c.dataflow;
    pairs.emplace_back(hyps[i], refs[i]);
  }
  const double n = static_cast<double>(hyps.size());
  r.em /= n;
  r.mean_sentence_bleu /= n;
  r.breakdown.ngram /= n;
  r.breakdown.weighted_ngram /= n;
  r.breakdown.syntax /= n;
  r.breakdown.dataflow /= n;
  r.breakdown.composite = 0.25 * r.breakdown.ngram + 0.25 * r.breakdown.weighted_ngram +
                          0.25 * r.breakdown.syntax + 0.25 * r.breakdown.dataflow;
  r.codebleu = r.breakdown.composite;
  r.bleu = bleu_corpus(pairs);
  return r;
}

}  // namespace unigen::metrics
