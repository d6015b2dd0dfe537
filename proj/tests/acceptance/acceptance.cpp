// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// writes the reports it produces under --out.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "oracles.hpp"
#include "unigen/checkpoint.hpp"
#include "unigen/config.hpp"
#include "unigen/corpus.hpp"
#include "unigen/decoding.hpp"
#include "unigen/error.hpp"
#include "unigen/metrics.hpp"
#include "unigen/minilang.hpp"
#include "unigen/training.hpp"

namespace fs = std::filesystem;
using namespace unigen;
using Json = nlohmann::ordered_json;
using model::Model;
using model::Paradigm;
using metrics::Words;

namespace {

// ---------------------------------------------------------------- tolerances

constexpr int kRoundTripPrograms = 1000;
constexpr double kRoundTripSeconds = 10.0;
constexpr int kMaskDecodes = 500;
constexpr int kMaskCap = 512;
constexpr double kMaxTruncation = 0.05;
constexpr double kIdentityRelTol = 1e-6;
constexpr double kSelfKlTol = 1e-8;
constexpr int kRandomDraws = 100;
constexpr double kUniformTol = 1e-6;
constexpr double kGradTol = 1e-4;
constexpr int kOverfitExamples = 32;
constexpr long kOverfitSteps = 2000;
constexpr double kOverfitSeconds = 600.0;
constexpr double kSelectorAccuracy = 0.90;
constexpr double kSelectorSeconds = 300.0;
constexpr double kRoutedSlack = 0.005;
constexpr double kFractionTol = 1e-9;
constexpr int kBleuPairs = 100;
constexpr double kBleuTol = 1e-9;

// ---------------------------------------------------------------- fixed setup

// Acceptance corpus and seeds, fixed before any run on them.
constexpr std::uint64_t kCorpusSeed = 2026;
constexpr std::uint64_t kSeed = 17;

corpus::GenerationConfig desk_corpus() {
  corpus::GenerationConfig g;
  g.task = corpus::Task::nl2code;
  g.size = 6000;
  g.seed = kCorpusSeed;
  g.depth = 2;
  g.train_size = 5000;
  g.valid_size = 500;
  g.test_size = 500;
  return g;
}

model::ModelConfig desk_model() {
  model::ModelConfig c;
  c.d_model = 32;
  c.n_heads = 4;
  c.ffn_dim = 64;
  c.dropout = 0.1;
  c.max_source_length = 256;
  c.seed = kSeed;
  return c;
}

training::TrainConfig desk_train() {
  training::TrainConfig c;
  c.learning_rate = 3e-3;
  c.warmup_steps = 100;
  c.batch_size = 16;
  c.max_epochs = 8;
  c.patience = 2;
  c.lambda = 0.1;
  c.seed = kSeed;
  return c;
}

// ---------------------------------------------------------------- reporting

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

Words words_of(const std::vector<Token>& tokens) {
  Words w;
  for (const auto& t : tokens) w.push_back(t.lexeme);
  return w;
}

// State shared by the criteria that reuse the desk pipeline.
struct Desk {
  fs::path out;
  std::optional<corpus::DatasetSplit> split;
  std::optional<Model> backbone;  // stage one, no selector
  std::optional<Model> full;      // with the BLEU-labeled selector
  std::optional<decoding::Evaluation> evaluation;
  std::optional<training::TeacherPair> teachers;
  double pipeline_seconds = 0.0;

  const corpus::DatasetSplit& data() {
    if (!split) split = corpus::generate_synthetic(desk_corpus());
    return *split;
  }
};

// ---------------------------------------------------------------- criteria

Outcome c1_roundtrip() {
  const Grammar& g = minilang::grammar(minilang::Dialect::a);
  std::mt19937_64 rng(kSeed);
  minilang::ProgramShape shape;
  shape.depth = 3;
  const auto start = Clock::now();
  int ok = 0;
  for (int k = 0; k < kRoundTripPrograms; ++k) {
    AstNode ast = minilang::random_program(rng, shape, minilang::Dialect::a);
    bool good = true;
    try {
      ActionSequence actions = ast_to_actions(ast, g);
      good = good && actions_to_ast(actions, g) == ast;
      std::vector<Token> tokens = render(ast, g);
      good = good && lex(join(tokens), g) == tokens;
      good = good && parse(tokens, g) == ast;
      good = good && render(parse(lex(join(tokens), g), g), g) == tokens;
    } catch (const Error&) {
      good = false;
    }
    ok += good;
  }
  const double secs = seconds_since(start);
  return {ok == kRoundTripPrograms && secs < kRoundTripSeconds,
          std::to_string(ok) + "/" + std::to_string(kRoundTripPrograms) + " programs in " + fmt(secs, 3) + "s"};
}

Outcome c2_alignment(Desk& desk) {
  const auto& split = desk.data();
  std::size_t total = 0, ok = 0;
  for (const auto* part : {&split.train, &split.valid, &split.test}) {
    for (const auto& ex : *part) {
      ++total;
      const auto& map = ex.alignment.action_of_token;
      bool good = map.size() == ex.n();
      std::set<int> seen;
      for (std::size_t j = 0; good && j < map.size(); ++j) {
        const int i = map[j];
        good = i >= 0 && static_cast<std::size_t>(i) < ex.m() && seen.insert(i).second &&
               (j == 0 || map[j - 1] < i) && !ex.target_actions[i].is_rule() &&
               ex.target_actions[i].token == ex.target_tokens[j];
      }
      ok += good;
    }
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " examples"};
}

Outcome c3_masks(Desk& desk) {
  const auto& split = desk.data();
  // A freshly initialized model with the library's default configuration.
  model::ModelConfig config;
  config.seed = kSeed;
  config.max_source_length = 256;
  Model m = Model::create(config, corpus::target_grammar(split.task), model::build_source_vocabulary(split.train));
  int ok = 0, parsed = 0, truncated = 0, invalid = 0;
  std::vector<const corpus::ParallelExample*> inputs;
  for (const auto& ex : split.test) inputs.push_back(&ex);
  for (std::size_t k = 0; inputs.size() < static_cast<std::size_t>(kMaskDecodes); ++k) inputs.push_back(&split.valid[k]);
  for (int k = 0; k < kMaskDecodes; ++k) {
    auto out = decoding::decode(m, Paradigm::tree, inputs[k]->source, decoding::Strategy::greedy(kMaskCap));
    if (out.status == decoding::Status::truncated) {
      ++truncated;
      continue;
    }
    if (out.status == decoding::Status::invalid) {
      ++invalid;
      continue;
    }
    ++ok;
    try {
      parse(out.tokens, m.grammar);
      validate(actions_to_ast(out.actions, m.grammar), m.grammar);
      ++parsed;
    } catch (const Error&) {
    }
  }
  const double trunc_rate = static_cast<double>(truncated) / kMaskDecodes;
  const bool pass = invalid == 0 && parsed == ok && trunc_rate < kMaxTruncation;
  return {pass, std::to_string(parsed) + "/" + std::to_string(ok) + " ok outputs parse, " + std::to_string(invalid) +
                    " invalid, truncated " + std::to_string(truncated) + "/" + std::to_string(kMaskDecodes) + " = " +
                    fmt(100 * trunc_rate, 3) + "% (limit " + fmt(100 * kMaxTruncation, 2) + "%), d_model " +
                    std::to_string(config.d_model)};
}

Outcome c4_identities(Desk& desk) {
  // Small corpus and model; every batch of a short distillation run is logged.
  corpus::GenerationConfig g{corpus::Task::nl2code, 60, kCorpusSeed + 4, 2, 48, 6, 6};
  corpus::DatasetSplit split = corpus::generate_synthetic(g);
  model::ModelConfig mc = desk_model();
  mc.d_model = 16;
  mc.ffn_dim = 32;
  training::TrainConfig tc = desk_train();
  tc.max_epochs = 2;
  tc.batch_size = 4;
  tc.lambda = 0.3;
  training::TeacherPair teachers = training::train_teachers(split, mc, tc);
  int batches = 0, bad = 0;
  double worst = 0.0;
  training::Hooks hooks;
  hooks.log_every = 1;
  hooks.log = [&](const training::LogRecord& r) {
    if (r.epoch_end) return;
    ++batches;
    const double expect = (1 - tc.lambda) * r.loss.L_m + tc.lambda * r.loss.L_kd;
    const double rel = std::abs(r.loss.L - expect) / std::max(std::abs(expect), 1e-300);
    worst = std::max(worst, rel);
    bad += rel > kIdentityRelTol || r.loss.L_kd < 0 || r.loss.L_s < 0 || r.loss.L_t < 0;
  };
  Model student = training::train_backbone(split, teachers, mc, tc, hooks);

  const auto& ex = split.train[0];
  auto l0 = training::combined_loss(ex, student, teachers.seq, teachers.tree, 0.0);
  auto l1 = training::combined_loss(ex, student, teachers.seq, teachers.tree, 1.0);
  const bool degenerate = l0.L == l0.L_m && l1.L == l1.L_kd;

  // Targets equal to the student's own distributions: both KL terms vanish.
  // Each student paradigm is compared against the other teacher, so the
  // student's seq rows go where the tree teacher's would and vice versa.
  double self_kl = 0.0;
  for (const auto& e : split.train) {
    training::TeacherTargets own = training::teacher_targets(student, student, e);
    std::swap(own.seq_log_probs, own.tree_log_probs);
    training::ObjectiveConfig cfg{training::Objective::joint, 1.0, training::KlOrder::student_first};
    self_kl = std::max(self_kl, training::backbone_objective(student, e, &own, cfg).L_kd);
  }

  double min_kd = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kRandomDraws; ++k) {
    model::ModelConfig rc = mc;
    rc.seed = kSeed + 1000 + 3 * k;
    Model s = Model::create(rc, student.grammar, student.source_vocab);
    rc.seed += 1;
    Model a = Model::create(rc, student.grammar, student.source_vocab);
    rc.seed += 1;
    Model b = Model::create(rc, student.grammar, student.source_vocab);
    min_kd = std::min(min_kd, training::distill_loss(split.train[k % split.train.size()], s, a, b));
  }

  Model uniform = student;
  uniform.backbone.action_projection.setZero();
  const double ls = training::loss_seq(ex, uniform);
  const double uniform_err = std::abs(ls - std::log(static_cast<double>(uniform.vocab.token_count())));

  (void)desk;
  const bool pass = batches > 0 && bad == 0 && degenerate && self_kl <= kSelfKlTol && min_kd >= 0.0 &&
                    uniform_err <= kUniformTol;
  return {pass, std::to_string(batches) + " logged batches, worst rel " + fmt(worst, 3) + "; degenerate " +
                    (degenerate ? "ok" : "FAILED") + "; KL(p||p) " + fmt(self_kl, 3) + "; min L_kd " +
                    fmt(min_kd, 4) + " over " + std::to_string(kRandomDraws) + " draws; |L_s - ln|V_t|| " +
                    fmt(uniform_err, 3)};
}

Outcome c5_gradients() {
  corpus::GenerationConfig g{corpus::Task::nl2code, 20, kCorpusSeed + 5, 2, std::nullopt, std::nullopt, std::nullopt};
  corpus::DatasetSplit split = corpus::generate_synthetic(g);
  model::ModelConfig mc;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.ffn_dim = 16;
  mc.dropout = 0.0;
  mc.max_source_length = 256;
  mc.max_target_length = 600;
  mc.selector_hidden = 6;
  auto make = [&](std::uint64_t seed) {
    model::ModelConfig c = mc;
    c.seed = seed;
    return Model::create(c, corpus::target_grammar(split.task), model::build_source_vocabulary(split.train));
  };
  Model student = make(kSeed), seq_t = make(kSeed + 1), tree_t = make(kSeed + 2);
  const corpus::ParallelExample* ex = &split.train[0];
  for (const auto& e : split.train)
    if (e.m() < ex->m()) ex = &e;
  training::TeacherTargets teachers = training::teacher_targets(seq_t, tree_t, *ex);

  std::string detail;
  bool pass = true;
  auto check = [&](const std::string& name, training::Objective obj, double lambda) {
    training::ObjectiveConfig cfg{obj, lambda, training::KlOrder::student_first};
    model::BackboneParams grad = student.backbone.zeros_like();
    training::backbone_objective(student, *ex, &teachers, cfg, nullptr, &grad);
    testsupport::GradCheck gc;
    gc.run(student.backbone.tensors(), grad.tensors(),
           [&] { return training::backbone_objective(student, *ex, &teachers, cfg).L; }, kSeed);
    pass = pass && gc.worst < kGradTol && gc.checked > 0;
    detail += name + " " + fmt(gc.worst, 2) + " ";
  };
  check("L_s", training::Objective::seq_only, 0.0);
  check("L_t", training::Objective::tree_only, 0.0);
  check("L_kd", training::Objective::joint, 1.0);

  model::SelectorParams sel = model::init_selector(mc, kSeed);
  std::mt19937_64 rng(kSeed);
  std::vector<model::Vector> features;
  std::vector<Paradigm> labels;
  for (int k = 0; k < 8; ++k) {
    model::Vector v(mc.d_model);
    for (auto& x : v) x = standard_normal(rng);
    features.push_back(v);
    labels.push_back(k % 3 == 0 ? Paradigm::tree : Paradigm::seq);
  }
  model::SelectorParams grad = sel.zeros_like();
  training::selector_objective(sel, features, labels, &grad);
  testsupport::GradCheck gc;
  gc.run(sel.tensors(), grad.tensors(), [&] { return training::selector_objective(sel, features, labels); }, kSeed);
  pass = pass && gc.worst < kGradTol;
  detail += "L_c " + fmt(gc.worst, 2) + " (max relative error, limit " + fmt(kGradTol, 2) + ")";
  return {pass, detail};
}

Outcome c6_overfit() {
  corpus::GenerationConfig g{corpus::Task::nl2code, kOverfitExamples + 8, kCorpusSeed + 6, 2,
                             kOverfitExamples, 4, 4};
  corpus::DatasetSplit split = corpus::generate_synthetic(g);
  split.valid.clear();  // memorization run: keep the last parameters
  model::ModelConfig mc = desk_model();
  mc.dropout = 0.0;
  training::TrainConfig tc = desk_train();
  tc.learning_rate = 1e-3;
  tc.warmup_steps = 50;
  tc.batch_size = 4;
  tc.max_epochs = 1000000;
  tc.max_steps = kOverfitSteps;
  tc.patience = 0;
  const auto start = Clock::now();
  auto em = [&](const Model& m, Paradigm p) { return training::exact_match_rate(m, p, split.train, kMaskCap); };
  training::Hooks hooks;
  hooks.log_every = 0;
  hooks.stop = [&](const Model& m, const std::string& stage, int epoch, long) {
    if (epoch % 5) return false;
    if (stage == "teacher_seq") return em(m, Paradigm::seq) == 1.0;
    if (stage == "teacher_tree") return em(m, Paradigm::tree) == 1.0;
    return em(m, Paradigm::seq) == 1.0 && em(m, Paradigm::tree) == 1.0;
  };
  training::TrainResult rs, rt, rb;
  training::TeacherPair teachers = training::train_teachers(split, mc, tc, hooks, &rs, &rt);
  Model student = training::train_backbone(split, teachers, mc, tc, hooks, &rb);
  const double secs = seconds_since(start);
  const double e_seq = em(teachers.seq, Paradigm::seq), e_tree = em(teachers.tree, Paradigm::tree);
  const double s_seq = em(student, Paradigm::seq), s_tree = em(student, Paradigm::tree);
  const bool pass = e_seq == 1.0 && e_tree == 1.0 && s_seq == 1.0 && s_tree == 1.0 && rs.steps <= kOverfitSteps &&
                    rt.steps <= kOverfitSteps && rb.steps <= kOverfitSteps && secs < kOverfitSeconds;
  return {pass, "train EM seq teacher " + fmt(e_seq) + " (" + std::to_string(rs.steps) + " steps), tree teacher " +
                    fmt(e_tree) + " (" + std::to_string(rt.steps) + "), student seq/tree " + fmt(s_seq) + "/" +
                    fmt(s_tree) + " (" + std::to_string(rb.steps) + "); " + fmt(secs, 3) + "s"};
}

// Stage one on the desk corpus, then BLEU-labeled selector training and the
// five-mode evaluation.
void run_desk_pipeline(Desk& desk) {
  if (desk.evaluation) return;
  const auto& split = desk.data();
  const auto start = Clock::now();
  std::ofstream log(desk.out / "desk_metrics.log");
  training::Hooks hooks;
  hooks.log_every = 50;
  hooks.log = [&](const training::LogRecord& r) {
    log << r.line() << '\n';
    if (r.epoch_end) std::cerr << "  [" << fmt(seconds_since(start), 4) << "s] " << r.line() << '\n';
  };
  const auto mc = desk_model();
  const auto tc = desk_train();
  desk.teachers = training::train_teachers(split, mc, tc, hooks);
  desk.backbone = training::train_backbone(split, *desk.teachers, mc, tc, hooks);
  checkpoint::save((desk.out / "backbone.ckpt").string(), *desk.backbone, {"backbone", 0, kSeed, {}});

  Model full = *desk.backbone;
  auto strategy = decoding::Strategy::greedy(kMaskCap);
  auto train_labels = training::label_instances(split.train, full, strategy);
  auto valid_labels = training::label_instances(split.valid, full, strategy);
  std::size_t tree = 0;
  for (const auto& l : train_labels) tree += l.tag == Paradigm::tree;
  log << "labels train=" << train_labels.size() << " tree=" << tree << '\n';
  std::cerr << "  labels: " << tree << " tree / " << train_labels.size() << '\n';
  training::SelectorConfig sc;
  sc.seed = kSeed;
  training::train_selector(full, split.train, train_labels, split.valid, valid_labels, sc, hooks);
  checkpoint::save((desk.out / "selector.ckpt").string(), full, {"selector", 0, kSeed, {}});
  desk.full = std::move(full);

  decoding::EvalConfig ec;
  ec.random_seed = kSeed;
  desk.evaluation = decoding::evaluate(*desk.full, split.test, ec);
  desk.pipeline_seconds = seconds_since(start);
  Json report = desk.evaluation->to_json(true);
  report["seconds"] = desk.pipeline_seconds;
  report["label_counts"] = {{"train", train_labels.size()}, {"train_tree", tree}};
  std::ofstream(desk.out / "desk_report.json") << report.dump(2) << '\n';
  std::ofstream(desk.out / "desk_table.txt") << desk.evaluation->table();
  std::cerr << desk.evaluation->table();
}

Outcome c7_selector(Desk& desk) {
  run_desk_pipeline(desk);
  const auto& split = desk.data();
  auto rule = [](const std::vector<corpus::ParallelExample>& data) {
    std::vector<training::SelectorLabel> out;
    for (const auto& ex : data) {
      training::SelectorLabel l;
      l.id = ex.id;
      l.tag = std::count(ex.source.begin(), ex.source.end(), "if") > 0 ? Paradigm::tree : Paradigm::seq;
      out.push_back(l);
    }
    return out;
  };
  Model m = *desk.backbone;
  const fs::path before_path = desk.out / "backbone.ckpt";
  const auto file_before = corpus::file_hash(before_path.string());
  const auto fp_before = m.backbone.fingerprint();
  training::SelectorConfig sc;
  sc.seed = kSeed;
  const auto start = Clock::now();
  training::TrainResult r = training::train_selector(m, split.train, rule(split.train), split.valid, rule(split.valid), sc);
  const double secs = seconds_since(start);
  const double acc = training::selector_accuracy(m, split.test, rule(split.test));

  Model stripped = m;
  stripped.selector.reset();
  const fs::path after_path = desk.out / "backbone_after_rule_selector.ckpt";
  checkpoint::save(after_path.string(), stripped, {"backbone", 0, kSeed, {}});
  const bool identical = corpus::file_hash(after_path.string()) == file_before &&
                         fs::file_size(after_path) == fs::file_size(before_path) &&
                         m.backbone.fingerprint() == fp_before && m.backbone == desk.backbone->backbone;
  double tree_share = 0.0;
  for (const auto& l : rule(split.test)) tree_share += l.tag == Paradigm::tree;
  tree_share /= static_cast<double>(split.test.size());
  const bool pass = acc >= kSelectorAccuracy && secs < kSelectorSeconds && identical;
  return {pass, "held-out accuracy " + fmt(acc) + " (limit " + fmt(kSelectorAccuracy, 2) + ", tree share " +
                    fmt(tree_share, 3) + ", best valid " + fmt(r.best_valid) + " at epoch " +
                    std::to_string(r.best_epoch) + "), " + fmt(secs, 3) + "s, backbone checkpoint " +
                    (identical ? "bit-identical" : "CHANGED")};
}

Outcome c8_desk(Desk& desk) {
  run_desk_pipeline(desk);
  const auto& ev = *desk.evaluation;
  const double seq = ev.mode(decoding::Mode::seq).metrics.mean_sentence_bleu;
  const double tree = ev.mode(decoding::Mode::tree).metrics.mean_sentence_bleu;
  const double routed = ev.mode(decoding::Mode::routed).metrics.mean_sentence_bleu;
  const double oracle = ev.mode(decoding::Mode::oracle).metrics.mean_sentence_bleu;
  const bool all_modes = ev.modes.size() == decoding::all_modes().size();
  const bool pass = oracle >= seq && oracle >= tree && routed >= std::max(seq, tree) - kRoutedSlack && all_modes;
  return {pass, "mean sentence BLEU seq " + fmt(seq) + ", tree " + fmt(tree) + ", routed " + fmt(routed) +
                    " (routed seq share " + fmt(ev.mode(decoding::Mode::routed).seq_fraction, 3) + "), random " +
                    fmt(ev.mode(decoding::Mode::random).metrics.mean_sentence_bleu) + ", oracle " + fmt(oracle) +
                    "; " + std::to_string(ev.modes.size()) + " modes reported; pipeline " +
                    fmt(desk.pipeline_seconds, 4) + "s"};
}

Outcome c9_analysis(Desk& desk) {
  run_desk_pipeline(desk);
  const auto& a = desk.evaluation->analysis;
  const double sum = a.win_seq + a.win_tree + a.tie;
  const bool probs = a.mean_gold_prob_seq >= 0 && a.mean_gold_prob_seq <= 1 && a.mean_gold_prob_tree >= 0 &&
                     a.mean_gold_prob_tree <= 1;
  const bool pass = std::abs(sum - 1.0) <= kFractionTol && probs && a.mean_length_ratio > 1.0;
  return {pass, "win seq " + fmt(a.win_seq, 3) + " / tree " + fmt(a.win_tree, 3) + " / tie " + fmt(a.tie, 3) +
                    " (sum - 1 = " + fmt(sum - 1.0, 2) + "), gold-token prob seq " + fmt(a.mean_gold_prob_seq, 3) +
                    " tree " + fmt(a.mean_gold_prob_tree, 3) + ", m/n " + fmt(a.mean_length_ratio, 3)};
}

Outcome c10_bleu() {
  std::mt19937_64 rng(kSeed);
  const Words alphabet = {"let", "x", "y", "=", "1", "2", ";", "return", "+", "(", ")", "if", "{", "}"};
  auto draw = [&] {
    Words w(1 + uniform_index(rng, 20));
    for (auto& t : w) t = alphabet[uniform_index(rng, alphabet.size())];
    return w;
  };
  double worst = 0.0;
  for (int k = 0; k < kBleuPairs; ++k) {
    Words hyp = draw(), ref = draw();
    worst = std::max(worst, std::abs(metrics::bleu_sentence(hyp, ref) - testsupport::brute_force_bleu(hyp, ref)));
  }
  const Grammar& g = minilang::grammar(minilang::Dialect::a);
  minilang::ProgramShape shape;
  int exact = 0, total = 0;
  std::vector<Words> hyps, refs;
  for (int k = 0; k < kBleuPairs; ++k) {
    Words a = words_of(render(minilang::random_program(rng, shape), g));
    Words b = words_of(render(minilang::random_program(rng, shape), g));
    if (k % 4 == 0) a.pop_back();
    auto c = metrics::codebleu(a, b, g);
    exact += c.composite == 0.25 * c.ngram + 0.25 * c.weighted_ngram + 0.25 * c.syntax + 0.25 * c.dataflow;
    ++total;
    hyps.push_back(a);
    refs.push_back(b);
  }
  auto r = metrics::evaluate(hyps, refs, g);
  const bool report_exact = r.codebleu == 0.25 * r.breakdown.ngram + 0.25 * r.breakdown.weighted_ngram +
                                              0.25 * r.breakdown.syntax + 0.25 * r.breakdown.dataflow;
  const bool pass = worst <= kBleuTol && exact == total && report_exact;
  return {pass, "max |BLEU - brute force| " + fmt(worst, 2) + " over " + std::to_string(kBleuPairs) +
                    " pairs; CodeBLEU composite exact " + std::to_string(exact) + "/" + std::to_string(total) +
                    (report_exact ? ", corpus report exact" : ", corpus report NOT exact")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string out = "acceptance_out";
  std::vector<int> only;
  app.add_option("--out", out, "directory for reports and checkpoints");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  Desk desk;
  desk.out = out;
  fs::create_directories(desk.out);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"transduction round-trip", [] { return c1_roundtrip(); }},
      {"alignment", [&] { return c2_alignment(desk); }},
      {"mask well-formedness", [&] { return c3_masks(desk); }},
      {"loss identities", [&] { return c4_identities(desk); }},
      {"gradient checks", [] { return c5_gradients(); }},
      {"overfit", [] { return c6_overfit(); }},
      {"selector trainability", [&] { return c7_selector(desk); }},
      {"end-to-end desk experiment", [&] { return c8_desk(desk); }},
      {"analysis report", [&] { return c9_analysis(desk); }},
      {"BLEU oracle equivalence", [] { return c10_bleu(); }},
  };
  int failed = 0;
  Json summary = Json::array();
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = seconds_since(start);
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[k].first << "): " << o.detail
              << " [" << fmt(secs, 4) << "s]" << std::endl;
    summary.push_back({{"criterion", id}, {"name", criteria[k].first}, {"pass", o.pass}, {"detail", o.detail},
                       {"seconds", secs}});
  }
  std::ofstream(desk.out / "acceptance.json") << summary.dump(2) << '\n';
  return failed == 0 ? 0 : 1;
}
