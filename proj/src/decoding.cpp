#include "unigen/decoding.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "unigen/error.hpp"
#include "unigen/random.hpp"

namespace unigen::decoding {

namespace {

using model::RowVector;
using Clock = std::chrono::steady_clock;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Hypothesis {
  model::IncrementalDecoder decoder;
  FrontierState frontier;
  std::vector<int> ids;
  double score = 0.0;
};

struct Finished {
  std::vector<int> ids;
  double score = 0.0;
  bool complete = true;
};

struct Candidate {
  std::size_t parent;
  int id;
  double score;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.parent != b.parent) return a.parent < b.parent;
  return a.id < b.id;
}

// Log-softmax over the admitted entries; others stay -inf.
RowVector masked_log_softmax(const RowVector& logits, const ActionMask* mask, bool forbid_pad) {
  RowVector z = logits;
  if (mask)
    for (Eigen::Index k = 0; k < z.size(); ++k)
      if (!(*mask)[static_cast<std::size_t>(k)]) z[k] = kNegInf;
  if (forbid_pad) z[UnifiedVocabulary::kPad] = kNegInf;
  return z.array() - nn::log_sum_exp(z);
}

DecodeOutput run_search(const model::Model& m, Paradigm paradigm, const model::Encoded& encoded,
                        const Strategy& strategy) {
  if (strategy.beam < 1) throw ConfigError("beam size must be at least 1");
  if (strategy.max_length < 1) throw ConfigError("length cap must be at least 1");
  const bool tree = paradigm == Paradigm::tree;
  // Every fed id occupies one decoder position after the tag; seq also needs
  // room to predict end-of-sequence after the last token.
  const int cap = std::min(strategy.max_length, m.config.max_target_length - (tree ? 0 : 1));
  std::optional<ActionMasks> masks;
  if (tree) masks.emplace(m.grammar, m.vocab);

  const auto start = Clock::now();
  const std::size_t k = static_cast<std::size_t>(strategy.beam);
  std::vector<Hypothesis> live;
  live.push_back({model::IncrementalDecoder(m.backbone, m.config, paradigm, encoded),
                  FrontierState::initial(m.grammar), {}, 0.0});
  std::vector<Finished> finished, truncated;

  while (!live.empty()) {
    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto& hyp = live[h];
      RowVector logp = masked_log_softmax(hyp.decoder.logits(), tree ? &(*masks)(hyp.frontier) : nullptr, !tree);
      std::vector<int> order(static_cast<std::size_t>(logp.size()));
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      const std::size_t take = std::min(k, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<long>(take), order.end(),
                        [&](int a, int b) { return logp[a] != logp[b] ? logp[a] > logp[b] : a < b; });
      for (std::size_t i = 0; i < take; ++i)
        if (std::isfinite(logp[order[i]])) candidates.push_back({h, order[i], hyp.score + logp[order[i]]});
    }
    std::sort(candidates.begin(), candidates.end(), better);
    if (candidates.size() > k) candidates.resize(k);

    std::vector<int> uses(live.size(), 0);
    for (const auto& c : candidates) ++uses[c.parent];
    std::vector<Hypothesis> next;
    for (const auto& c : candidates) {
      Hypothesis& parent = live[c.parent];
      std::vector<int> ids = parent.ids;
      FrontierState frontier = parent.frontier;
      bool done = false;
      if (tree) {
        step_in_place(frontier, action_from_id(c.id, m.vocab), m.grammar);
        ids.push_back(c.id);
        done = frontier.empty();
      } else if (c.id == UnifiedVocabulary::kEos) {
        done = true;
      } else {
        ids.push_back(c.id);
      }
      if (done) {
        finished.push_back({std::move(ids), c.score, true});
        --uses[c.parent];
        continue;
      }
      if (static_cast<int>(ids.size()) >= cap) {
        truncated.push_back({std::move(ids), c.score, false});
        --uses[c.parent];
        continue;
      }
      // The last child of a parent takes its decoder state; earlier ones copy.
      model::IncrementalDecoder dec = --uses[c.parent] == 0 ? std::move(parent.decoder) : parent.decoder;
      dec.feed(c.id);
      next.push_back({std::move(dec), std::move(frontier), std::move(ids), c.score});
    }
    live = std::move(next);
    if (finished.size() >= k) break;
    if (!finished.empty()) {
      double best_done = kNegInf, best_live = kNegInf;
      for (const auto& f : finished) best_done = std::max(best_done, f.score);
      for (const auto& h : live) best_live = std::max(best_live, h.score);
      if (best_live <= best_done) break;
    }
  }

  DecodeOutput out;
  out.paradigm = paradigm;
  out.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  auto pick = [](const std::vector<Finished>& v) {
    return std::max_element(v.begin(), v.end(),
                            [](const Finished& a, const Finished& b) { return a.score < b.score; });
  };
  const Finished* best = nullptr;
  if (!finished.empty()) best = &*pick(finished);
  else if (!truncated.empty()) best = &*pick(truncated);
  if (!best) {
    out.status = Status::invalid;
    return out;
  }
  out.score = best->score;
  out.status = best->complete ? Status::ok : Status::truncated;
  if (tree) {
    for (int id : best->ids) out.actions.push_back(action_from_id(id, m.vocab));
    if (out.status == Status::ok) {
      try {
        out.tokens = render(actions_to_ast(out.actions, m.grammar), m.grammar);
      } catch (const Error&) {
        out.status = Status::invalid;
      }
    }
  } else {
    for (int id : best->ids) out.tokens.push_back(m.vocab.token(id));
  }
  return out;
}

double mean(double sum, std::size_t count) { return count ? sum / static_cast<double>(count) : 0.0; }

}  // namespace

std::string to_string(Status s) {
  switch (s) {
    case Status::ok: return "ok";
    case Status::truncated: return "truncated";
    default: return "invalid";
  }
}

std::string to_string(Winner w) {
  switch (w) {
    case Winner::seq: return "seq";
    case Winner::tree: return "tree";
    default: return "tie";
  }
}

std::vector<std::string> DecodeOutput::words() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.lexeme);
  return out;
}

DecodeOutput decode_seq(const model::Model& m, const model::Encoded& encoded, const Strategy& s) {
  return run_search(m, Paradigm::seq, encoded, s);
}

DecodeOutput decode_tree(const model::Model& m, const model::Encoded& encoded, const Strategy& s) {
  return run_search(m, Paradigm::tree, encoded, s);
}

DecodeOutput decode(const model::Model& m, Paradigm paradigm, const model::Encoded& encoded,
                    const Strategy& s) {
  return run_search(m, paradigm, encoded, s);
}

DecodeOutput decode(const model::Model& m, Paradigm paradigm, const std::vector<std::string>& source,
                    const Strategy& s) {
  return run_search(m, paradigm, m.encode(source), s);
}

RoutedOutput route_and_decode(const model::Model& m, const std::vector<std::string>& source,
                              const Strategy& s) {
  if (!m.selector) throw ConfigError("routing needs a trained selector");
  model::Encoded enc = m.encode(source);
  RoutedOutput out;
  out.p = model::select(model::pool(enc), *m.selector);
  out.output = run_search(m, out.p[0] >= out.p[1] ? Paradigm::seq : Paradigm::tree, enc, s);
  return out;
}

model::SelectorParams forced_selector(const model::ModelConfig& config, Paradigm paradigm) {
  model::SelectorParams s = model::init_selector(config, 0).zeros_like();
  s.output.bias(0, 0) = paradigm == Paradigm::seq ? 50.0 : -50.0;
  s.output.bias(0, 1) = -s.output.bias(0, 0);
  return s;
}

nlohmann::ordered_json InstanceRecord::to_json() const {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["bleu_seq"] = bleu_seq;
  j["bleu_tree"] = bleu_tree;
  j["winner"] = to_string(winner);
  j["status_seq"] = to_string(status_seq);
  j["status_tree"] = to_string(status_tree);
  j["gold_prob_seq"] = gold_prob_seq;
  j["gold_prob_tree"] = gold_prob_tree;
  j["seconds_seq"] = seconds_seq;
  j["seconds_tree"] = seconds_tree;
  j["n"] = n;
  j["m"] = m;
  if (failed) j["error"] = error;
  return j;
}

void ParadigmReport::finalize() {
  std::size_t ok = 0, seq = 0, tree = 0, ties = 0;
  double prob_s = 0, prob_t = 0, sec_s = 0, sec_t = 0, ratio = 0, bs = 0, bt = 0, bo = 0;
  failures = 0;
  for (const auto& r : instances) {
    if (r.failed) {
      ++failures;
      continue;
    }
    ++ok;
    seq += r.winner == Winner::seq;
    tree += r.winner == Winner::tree;
    ties += r.winner == Winner::tie;
    prob_s += r.gold_prob_seq;
    prob_t += r.gold_prob_tree;
    sec_s += r.seconds_seq;
    sec_t += r.seconds_tree;
    ratio += static_cast<double>(r.m) / static_cast<double>(r.n);
    bs += r.bleu_seq;
    bt += r.bleu_tree;
    bo += std::max(r.bleu_seq, r.bleu_tree);
  }
  win_seq = mean(double(seq), ok);
  win_tree = mean(double(tree), ok);
  tie = mean(double(ties), ok);
  mean_gold_prob_seq = mean(prob_s, ok);
  mean_gold_prob_tree = mean(prob_t, ok);
  mean_seconds_seq = mean(sec_s, ok);
  mean_seconds_tree = mean(sec_t, ok);
  mean_length_ratio = mean(ratio, ok);
  mean_bleu_seq = mean(bs, ok);
  mean_bleu_tree = mean(bt, ok);
  mean_bleu_oracle = mean(bo, ok);
}

nlohmann::ordered_json ParadigmReport::to_json(bool with_instances) const {
  nlohmann::ordered_json j;
  j["instances"] = instances.size();
  j["failures"] = failures;
  j["win_seq"] = win_seq;
  j["win_tree"] = win_tree;
  j["tie"] = tie;
  j["mean_gold_prob_seq"] = mean_gold_prob_seq;
  j["mean_gold_prob_tree"] = mean_gold_prob_tree;
  j["mean_seconds_seq"] = mean_seconds_seq;
  j["mean_seconds_tree"] = mean_seconds_tree;
  j["mean_length_ratio"] = mean_length_ratio;
  j["mean_sentence_bleu_seq"] = mean_bleu_seq;
  j["mean_sentence_bleu_tree"] = mean_bleu_tree;
  j["mean_sentence_bleu_oracle"] = mean_bleu_oracle;
  if (with_instances) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : instances) arr.push_back(r.to_json());
    j["records"] = arr;
  }
  return j;
}

double mean_gold_token_probability(const model::Model& m, Paradigm paradigm,
                                   const corpus::ParallelExample& ex) {
  model::Matrix probs = model::teacher_forced_distributions(m, paradigm, ex);
  double sum = 0.0;
  const int vt = m.vocab.token_count();
  for (std::size_t j = 0; j < ex.n(); ++j) {
    const int gold = m.vocab.token_id(ex.target_tokens[j]);
    if (paradigm == Paradigm::seq) {
      sum += probs(static_cast<Eigen::Index>(j), gold);
    } else {
      auto row = probs.row(ex.alignment[j]);
      const double mass = row.head(vt).sum();
      sum += mass > 0.0 ? row(gold) / mass : 0.0;
    }
  }
  return sum / static_cast<double>(ex.n());
}

PairedDecode decode_both(const model::Model& m, const corpus::ParallelExample& ex,
                         const Strategy& strategy) {
  model::Encoded enc = m.encode(ex.source);
  PairedDecode out;
  out.seq = decode_seq(m, enc, strategy);
  out.tree = decode_tree(m, enc, strategy);
  if (m.selector) {
    out.has_selector = true;
    out.p_select = model::select(model::pool(enc), *m.selector);
  }
  return out;
}

namespace {

struct Analysis {
  std::vector<PairedDecode> decodes;
  std::vector<bool> failed;
  ParadigmReport report;
};

Analysis analyze(const model::Model& m, const std::vector<corpus::ParallelExample>& data,
                 const Strategy& strategy) {
  Analysis a;
  for (const auto& ex : data) {
    InstanceRecord r;
    r.id = ex.id;
    r.n = ex.n();
    r.m = ex.m();
    PairedDecode d;
    try {
      d = decode_both(m, ex, strategy);
      std::vector<std::string> gold;
      for (const auto& t : ex.target_tokens) gold.push_back(t.lexeme);
      r.bleu_seq = metrics::bleu_sentence(d.seq.words(), gold);
      r.bleu_tree = metrics::bleu_sentence(d.tree.words(), gold);
      r.winner = r.bleu_seq > r.bleu_tree ? Winner::seq
                 : r.bleu_tree > r.bleu_seq ? Winner::tree
                                            : Winner::tie;
      r.status_seq = d.seq.status;
      r.status_tree = d.tree.status;
      r.seconds_seq = d.seq.seconds;
      r.seconds_tree = d.tree.seconds;
      r.gold_prob_seq = mean_gold_token_probability(m, Paradigm::seq, ex);
      r.gold_prob_tree = mean_gold_token_probability(m, Paradigm::tree, ex);
    } catch (const Error& e) {
      r.failed = true;
      r.error = e.what();
    }
    a.failed.push_back(r.failed);
    a.decodes.push_back(std::move(d));
    a.report.instances.push_back(std::move(r));
  }
  a.report.finalize();
  return a;
}

}  // namespace

ParadigmReport oracle_route(const std::vector<corpus::ParallelExample>& data, const model::Model& m,
                            const Strategy& strategy) {
  return analyze(m, data, strategy).report;
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::seq: return "seq";
    case Mode::tree: return "tree";
    case Mode::routed: return "routed";
    case Mode::random: return "random";
    default: return "oracle";
  }
}

Mode mode_from_string(const std::string& name) {
  for (Mode mode : all_modes())
    if (to_string(mode) == name) return mode;
  throw ConfigError("unknown mode '" + name + "' (expected seq, tree, routed, random or oracle)");
}

const std::vector<Mode>& all_modes() {
  static const std::vector<Mode> modes{Mode::seq, Mode::tree, Mode::routed, Mode::random, Mode::oracle};
  return modes;
}

nlohmann::ordered_json ModeResult::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["metrics"] = metrics.to_json();
  j["seq_fraction"] = seq_fraction;
  j["mean_decode_seconds"] = mean_seconds;
  return j;
}

const ModeResult& Evaluation::mode(Mode m) const {
  for (const auto& r : modes)
    if (r.mode == m) return r;
  throw ConfigError("mode " + to_string(m) + " was not evaluated");
}

nlohmann::ordered_json Evaluation::to_json(bool with_instances) const {
  nlohmann::ordered_json j;
  j["format"] = "unigen-eval";
  j["version"] = 1;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : modes) arr.push_back(r.to_json());
  j["modes"] = arr;
  j["analysis"] = analysis.to_json(with_instances);
  return j;
}

std::string Evaluation::table() const {
  std::ostringstream out;
  out << std::left << std::setw(8) << "mode" << std::right << std::setw(8) << "EM" << std::setw(8)
      << "BLEU" << std::setw(10) << "CodeBLEU" << std::setw(8) << "sBLEU" << std::setw(8) << "seq%"
      << '\n';
  out << std::fixed << std::setprecision(2);
  for (const auto& r : modes) {
    out << std::left << std::setw(8) << to_string(r.mode) << std::right << std::setw(8)
        << 100 * r.metrics.em << std::setw(8) << 100 * r.metrics.bleu << std::setw(10)
        << 100 * r.metrics.codebleu << std::setw(8) << 100 * r.metrics.mean_sentence_bleu
        << std::setw(8) << 100 * r.seq_fraction << '\n';
  }
  return out.str();
}

Evaluation evaluate(const model::Model& m, const std::vector<corpus::ParallelExample>& data,
                    const EvalConfig& config) {
  if (data.empty()) throw EmptyCorpusError("nothing to evaluate");
  Analysis a = analyze(m, data, config.strategy);
  std::mt19937_64 coin(mix_seed(config.random_seed, 0x52414e44));
  std::vector<bool> random_pick_seq;
  for (std::size_t i = 0; i < data.size(); ++i) random_pick_seq.push_back(uniform_real(coin) < 0.5);

  std::vector<std::vector<std::string>> refs;
  for (const auto& ex : data) {
    std::vector<std::string> gold;
    for (const auto& t : ex.target_tokens) gold.push_back(t.lexeme);
    refs.push_back(std::move(gold));
  }

  Evaluation ev;
  ev.analysis = a.report;
  for (Mode mode : config.modes) {
    if (mode == Mode::routed && !m.selector) continue;
    ModeResult r;
    r.mode = mode;
    double seconds = 0.0, seq_count = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const PairedDecode& d = a.decodes[i];
      const InstanceRecord& rec = a.report.instances[i];
      bool use_seq = true;
      switch (mode) {
        case Mode::seq: use_seq = true; break;
        case Mode::tree: use_seq = false; break;
        case Mode::routed: use_seq = d.p_select[0] >= d.p_select[1]; break;
        case Mode::random: use_seq = random_pick_seq[i]; break;
        case Mode::oracle: use_seq = rec.winner != Winner::tree; break;
      }
      const DecodeOutput& out = use_seq ? d.seq : d.tree;
      r.outputs.push_back(a.failed[i] ? std::vector<std::string>{} : out.words());
      seconds += out.seconds;
      seq_count += use_seq;
    }
    r.metrics = metrics::evaluate(r.outputs, refs, m.grammar);
    r.seq_fraction = seq_count / static_cast<double>(data.size());
    r.mean_seconds = seconds / static_cast<double>(data.size());
    ev.modes.push_back(std::move(r));
  }
  return ev;
}

}  // namespace unigen::decoding
