#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "unigen/checkpoint.hpp"
#include "unigen/config.hpp"
#include "unigen/error.hpp"
#include "unigen/training.hpp"

using namespace unigen;
using namespace unigen::training;
using model::Model;

namespace {

TrainConfig quick_train(int epochs = 2) {
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.batch_size = 4;
  c.max_epochs = epochs;
  c.patience = 0;
  c.warmup_steps = 2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lambda = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("linear schedule") {
  CHECK(linear_schedule(0, 1.0, 4, 14) == doctest::Approx(0.25));
  CHECK(linear_schedule(3, 1.0, 4, 14) == doctest::Approx(1.0));
  CHECK(linear_schedule(4, 1.0, 4, 14) == doctest::Approx(1.0));
  CHECK(linear_schedule(9, 1.0, 4, 14) == doctest::Approx(0.5));
  CHECK(linear_schedule(14, 1.0, 4, 14) == 0.0);
  CHECK(linear_schedule(0, 2.0, 0, 10) == doctest::Approx(2.0));
}

TEST_CASE("Adam's first step moves every coordinate by the learning rate") {
  Matrix p = Matrix::Zero(2, 2), g(2, 2);
  g << 3.0, -0.5, 1e-3, 0.0;
  Adam adam;
  adam.step({{"p", &p}}, {{"p", &g}}, 0.1);
  CHECK(p(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p(0, 1) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(p(1, 0) == doctest::Approx(-0.1).epsilon(1e-4));
  CHECK(p(1, 1) == 0.0);
}

TEST_CASE("gradient clipping bounds the global norm") {
  Matrix a(1, 2), b(1, 1);
  a << 3.0, 0.0;
  b << 4.0;
  const double norm = clip_gradients({{"a", &a}, {"b", &b}}, 1.0);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(std::sqrt(a.squaredNorm() + b.squaredNorm()) == doctest::Approx(1.0));
}

TEST_CASE("teacher training is deterministic and lowers the loss") {
  auto split = testutil::small_split(24, 9, 1);
  auto mc = testutil::micro_config(3);
  std::vector<LogRecord> logs;
  Hooks hooks;
  hooks.log_every = 1;
  hooks.log = [&](const LogRecord& r) { logs.push_back(r); };
  TrainResult rs, rt;
  TeacherPair a = train_teachers(split, mc, quick_train(), hooks, &rs, &rt);
  TeacherPair b = train_teachers(split, mc, quick_train());
  CHECK(a.seq.backbone == b.seq.backbone);
  CHECK(a.tree.backbone == b.tree.backbone);
  CHECK_FALSE(a.seq.backbone == a.tree.backbone);

  // Independently initialized: different starting points.
  CHECK(a.seq.config.seed != a.tree.config.seed);

  // Early stopping restores the best validation point.
  CHECK(rs.best_valid == doctest::Approx(*std::min_element(rs.valid_history.begin(), rs.valid_history.end())));
  Model fresh = Model::create(a.seq.config, a.seq.grammar, a.seq.source_vocab);
  ObjectiveConfig seq{Objective::seq_only, 0.0, KlOrder::student_first};
  CHECK(mean_loss(a.seq, split.valid, seq).L == doctest::Approx(rs.best_valid).epsilon(1e-12));
  CHECK(mean_loss(a.seq, split.train, seq).L < mean_loss(fresh, split.train, seq).L);

  bool saw_seq = false, saw_tree = false;
  for (const auto& r : logs) {
    saw_seq = saw_seq || r.stage == "teacher_seq";
    saw_tree = saw_tree || r.stage == "teacher_tree";
    if (r.stage == "teacher_seq") CHECK(r.loss.L_t == 0.0);
    if (r.stage == "teacher_tree") CHECK(r.loss.L_s == 0.0);
  }
  CHECK(saw_seq);
  CHECK(saw_tree);
  CHECK(logs.front().line().find("stage=teacher_seq") == 0);
}

TEST_CASE("backbone training logs decomposable batches and stops on request") {
  auto split = testutil::small_split(24, 9, 1);
  auto mc = testutil::micro_config(4);
  TeacherPair teachers = train_teachers(split, mc, quick_train(1));
  TrainConfig tc = quick_train(3);
  tc.lambda = 0.3;
  int batches = 0;
  Hooks hooks;
  hooks.log_every = 1;
  hooks.log = [&](const LogRecord& r) {
    if (r.epoch_end) return;
    ++batches;
    const double expect = (1 - tc.lambda) * r.loss.L_m + tc.lambda * r.loss.L_kd;
    CHECK(std::abs(r.loss.L - expect) <= 1e-6 * std::abs(expect));
    CHECK(r.loss.L_m == doctest::Approx(r.loss.L_s + r.loss.L_t).epsilon(1e-12));
    CHECK(r.loss.L_kd >= 0.0);
  };
  hooks.stop = [](const Model&, const std::string& stage, int epoch, long) {
    CHECK(stage == "backbone");
    return epoch == 2;
  };
  TrainResult r;
  Model student = train_backbone(split, teachers, mc, tc, hooks, &r);
  CHECK(r.stopped_by_hook);
  CHECK(r.epochs == 2);
  CHECK(batches == r.steps);

  std::vector<SweepEntry> entries;
  TrainConfig one = quick_train(1);
  Model best = sweep_lambda(split, teachers, mc, one, {0.1, 0.5}, {}, &entries);
  REQUIRE(entries.size() == 2);
  const auto& win = entries[0].valid_L_m <= entries[1].valid_L_m ? entries[0] : entries[1];
  ObjectiveConfig joint{Objective::joint, 0.0, KlOrder::student_first};
  CHECK(mean_loss(best, split.valid, joint).L_m == doctest::Approx(win.valid_L_m).epsilon(1e-12));
  CHECK_THROWS_AS(sweep_lambda(split, teachers, mc, one, {1.2}), ConfigError);
}

TEST_CASE("distillation needs teachers") {
  auto split = testutil::small_split(12, 2, 1);
  Model m = testutil::micro_model(split, 2);
  ObjectiveConfig joint{Objective::joint, 0.5, KlOrder::student_first};
  CHECK_THROWS_AS(train_objective(m, split.train, {}, joint, quick_train(), nullptr, {}, "x"), ConfigError);
}

TEST_CASE("selector labels follow the BLEU rule with ties to seq") {
  auto split = testutil::small_split(20, 4, 1);
  Model m = testutil::micro_model(split, 8);
  auto labels = label_instances(split.train, m, decoding::Strategy::greedy(80));
  REQUIRE(labels.size() == split.train.size());
  for (const auto& l : labels) {
    CHECK(l.bleu_seq >= 0.0);
    CHECK(l.bleu_tree <= 1.0);
    if (l.bleu_tree > l.bleu_seq) CHECK(l.tag == model::Paradigm::tree);
    else CHECK(l.tag == model::Paradigm::seq);
  }
  auto j = labels_to_json(labels);
  CHECK(j.size() == labels.size());
  CHECK(j[0].contains("bleu_tree"));
}

TEST_CASE("selector training leaves the backbone untouched and learns a visible rule") {
  auto split = testutil::small_split(120, 12, 2);
  Model m = testutil::micro_model(split, 9);
  auto rule = [](const std::vector<corpus::ParallelExample>& data) {
    std::vector<SelectorLabel> out;
    for (const auto& ex : data) {
      SelectorLabel l;
      l.id = ex.id;
      l.tag = std::find(ex.source.begin(), ex.source.end(), "if") != ex.source.end() ? model::Paradigm::tree
                                                                                   : model::Paradigm::seq;
      out.push_back(l);
    }
    return out;
  };
  const auto before = m.backbone.fingerprint();
  const model::BackboneParams copy = m.backbone;
  SelectorConfig sc;
  sc.learning_rate = 1e-2;
  sc.max_epochs = 40;
  sc.patience = 0;
  TrainResult r = train_selector(m, split.train, rule(split.train), split.valid, rule(split.valid), sc);
  CHECK(m.backbone.fingerprint() == before);
  CHECK(m.backbone == copy);
  REQUIRE(m.selector.has_value());
  CHECK(r.best_valid == doctest::Approx(selector_accuracy(m, split.valid, rule(split.valid))));
  double majority = 0.0;
  for (const auto& l : rule(split.train)) majority += l.tag == model::Paradigm::seq;
  majority = std::max(majority, split.train.size() - majority) / split.train.size();
  CHECK(selector_accuracy(m, split.train, rule(split.train)) > majority);

  Model again = testutil::micro_model(split, 9);
  train_selector(again, split.train, rule(split.train), split.valid, rule(split.valid), sc);
  CHECK(*again.selector == *m.selector);
  CHECK_THROWS_AS(train_selector(m, split.train, {}, split.valid, rule(split.valid), sc), DimensionError);
}

TEST_CASE("run config round-trips and rejects unknown keys") {
  config::RunConfig c;
  c.model.d_model = 48;
  c.train.lambda = 0.3;
  c.train.kl_order = KlOrder::teacher_first;
  c.lambda_grid = {0.1, 0.3};
  c.selector.learning_rate = 2e-4;
  auto back = config::RunConfig::from_json(c.to_json());
  CHECK(back == c);
  CHECK(back.train.kl_order == KlOrder::teacher_first);
  CHECK_THROWS_AS(config::RunConfig::from_json({{"modle", {}}}), ConfigError);
  CHECK_THROWS_AS(config::RunConfig::from_json({{"train", {{"lambda", 2.0}}}}), ConfigError);
  CHECK_THROWS_AS(config::RunConfig::from_json({{"train", {{"batch_size", "16"}}}}), ConfigError);
  auto partial = config::RunConfig::from_json({{"model", {{"d_model", 64}}}});
  CHECK(partial.model.d_model == 64);
  CHECK(partial.model.n_heads == model::ModelConfig{}.n_heads);
}

TEST_CASE("checkpoints round-trip bit for bit") {
  auto split = testutil::small_split(12, 2, 1);
  Model m = testutil::micro_model(split, 6);
  auto dir = testutil::temp_dir("ckpt");
  const std::string path = (dir / "a.ckpt").string();
  checkpoint::Metadata meta{"backbone", 42, 7, {{"lambda", 0.1}}};
  checkpoint::save(path, m, meta);
  auto loaded = checkpoint::load(path);
  CHECK(loaded.model.backbone == m.backbone);
  CHECK(loaded.model.config == m.config);
  CHECK(loaded.model.source_vocab == m.source_vocab);
  CHECK(loaded.model.vocab == m.vocab);
  CHECK_FALSE(loaded.model.selector.has_value());
  CHECK(loaded.metadata.stage == "backbone");
  CHECK(loaded.metadata.step == 42);
  CHECK(loaded.metadata.seed == 7);
  CHECK(loaded.metadata.extra["lambda"] == 0.1);

  m.selector = model::init_selector(m.config, 3);
  checkpoint::save(path, m, meta);
  loaded = checkpoint::load(path);
  REQUIRE(loaded.model.selector.has_value());
  CHECK(*loaded.model.selector == *m.selector);
  CHECK(checkpoint::read_header(path)["has_selector"] == true);

  CHECK_THROWS_AS(checkpoint::load((dir / "missing.ckpt").string()), CheckpointError);
  {
    std::ofstream out((dir / "short.ckpt").string(), std::ios::binary);
    out << "UNIGENCK";
  }
  CHECK_THROWS_AS(checkpoint::load((dir / "short.ckpt").string()), CheckpointError);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  CHECK_THROWS_AS(checkpoint::load(path), CheckpointError);
}

TEST_CASE("exact match rate stays in range") {
  auto split = testutil::small_split(12, 2, 1);
  Model m = testutil::micro_model(split, 6);
  const double em = exact_match_rate(m, model::Paradigm::seq, split.train, 40);
  CHECK(em >= 0.0);
  CHECK(em <= 1.0);
  CHECK_THROWS_AS(exact_match_rate(m, model::Paradigm::seq, {}, 40), EmptyCorpusError);
}
