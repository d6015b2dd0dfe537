#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "helpers.hpp"
#include "oracles.hpp"
#include "unigen/error.hpp"
#include "unigen/losses.hpp"
#include "unigen/random.hpp"

using namespace unigen;
using namespace unigen::model;
using namespace unigen::training;

namespace {

RowVector log_of(std::initializer_list<double> p) {
  RowVector v(static_cast<Eigen::Index>(p.size()));
  Eigen::Index i = 0;
  for (double x : p) v[i++] = std::log(x);
  return v;
}

struct Fixture {
  corpus::DatasetSplit split = testutil::small_split(20, 11, 2);
  Model student = testutil::micro_model(split, 21);
  Model seq_teacher = testutil::micro_model(split, 22);
  Model tree_teacher = testutil::micro_model(split, 23);
  const corpus::ParallelExample& example() const {
    // A short program keeps the finite-difference loop fast.
    const corpus::ParallelExample* best = &split.train[0];
    for (const auto& ex : split.train)
      if (ex.m() < best->m()) best = &ex;
    return *best;
  }
};

void check_backbone_gradient(const ObjectiveConfig& cfg, std::uint64_t seed) {
  Fixture f;
  const auto& ex = f.example();
  TeacherTargets teachers = teacher_targets(f.seq_teacher, f.tree_teacher, ex);
  BackboneParams grad = f.student.backbone.zeros_like();
  backbone_objective(f.student, ex, &teachers, cfg, nullptr, &grad);
  testsupport::GradCheck check;
  check.run(f.student.backbone.tensors(), grad.tensors(),
            [&] { return backbone_objective(f.student, ex, &teachers, cfg).L; }, seed);
  INFO("worst tensor: " << check.worst_name);
  CHECK(check.checked > 100);
  CHECK(check.worst < 1e-4);
}

}  // namespace

TEST_CASE("cross-entropy of a uniform model is ln |V|") {
  Matrix zero = Matrix::Zero(5, 8);
  CHECK(cross_entropy(zero, {0, 3, 7, 1, 1}, nullptr) == doctest::Approx(std::log(8.0)).epsilon(1e-12));

  Fixture f;
  f.student.backbone.action_projection.setZero();
  const auto& ex = f.split.train[0];
  CHECK(std::abs(loss_seq(ex, f.student) - std::log(double(f.student.vocab.token_count()))) < 1e-6);
  CHECK(std::abs(loss_tree(ex, f.student) - std::log(double(f.student.vocab.size()))) < 1e-6);
}

TEST_CASE("perfect predictions give zero loss") {
  Matrix logits = Matrix::Constant(3, 4, -1000.0);
  logits(0, 1) = logits(1, 2) = logits(2, 0) = 0.0;
  CHECK(cross_entropy(logits, {1, 2, 0}, nullptr) == doctest::Approx(0.0));
  logits(0, 1) = -1e308;
  logits.row(0).setConstant(-std::numeric_limits<double>::infinity());
  logits(0, 0) = 0.0;
  CHECK_THROWS_AS(cross_entropy(logits, {1, 2, 0}, nullptr), NonFiniteLossError);
}

TEST_CASE("KL arithmetic and restriction") {
  CHECK(kl_divergence(log_of({0.75, 0.25}), log_of({0.5, 0.5})) ==
        doctest::Approx(0.75 * std::log(1.5) + 0.25 * std::log(0.5)).epsilon(1e-12));
  CHECK(kl_divergence(log_of({0.75, 0.25}), log_of({0.5, 0.5})) == doctest::Approx(0.1308).epsilon(1e-3));
  RowVector p = log_of({0.2, 0.3, 0.5});
  CHECK(kl_divergence(p, p) <= 1e-15);

  RowVector action(4);
  action << 0.1, 0.3, 0.4, 0.2;
  RowVector r = restrict_to_tokens(action, 2);
  CHECK(r[0] == doctest::Approx(0.25));
  CHECK(r[1] == doctest::Approx(0.75));
  RowVector dead(3);
  dead << 0.0, 0.0, 1.0;
  CHECK_THROWS_AS(restrict_to_tokens(dead, 2), DegenerateDistributionError);

  RowVector logits(4);
  logits << 0.3, -1.2, 2.0, 0.1;
  RowVector softmax = (logits.array() - nn::log_sum_exp(logits)).exp();
  RowVector direct = restrict_to_tokens(softmax, 2);
  RowVector via_logits = restricted_log_softmax(logits, 2).array().exp();
  CHECK((direct - via_logits).cwiseAbs().maxCoeff() < 1e-15);
  RowVector far(3);
  far << -100.0, -100.0, 0.0;
  CHECK_THROWS_AS(restricted_log_softmax(far, 2), DegenerateDistributionError);
}

TEST_CASE("distillation vanishes against matching teachers") {
  Fixture f;
  const auto& ex = f.split.train[1];
  Encoded enc = f.student.encode(ex.source);
  auto sp = seq_targets(ex, f.student.vocab);
  sp.pop_back();
  auto tp = tree_targets(ex, f.student.vocab);
  tp.pop_back();
  Matrix zs = decode_logits(Paradigm::seq, sp, enc, f.student.backbone, f.student.config);
  Matrix zt = decode_logits(Paradigm::tree, tp, enc, f.student.backbone, f.student.config);
  const int vt = f.student.vocab.token_count();
  TeacherTargets mirror;
  mirror.seq_log_probs.resize(ex.n(), vt);
  mirror.tree_log_probs.resize(ex.n(), vt);
  for (std::size_t j = 0; j < ex.n(); ++j) {
    mirror.tree_log_probs.row(j) = nn::log_softmax_rows(zs).row(j);
    mirror.seq_log_probs.row(j) = restricted_log_softmax(zt.row(ex.alignment[j]), vt);
  }
  for (KlOrder order : {KlOrder::student_first, KlOrder::teacher_first}) {
    auto kd = distillation(zs, zt, ex.alignment, mirror, vt, order);
    CHECK(kd.L_kd <= 1e-8);
  }
  AlignmentMap broken = ex.alignment;
  broken.action_of_token.pop_back();
  CHECK_THROWS_AS(distillation(zs, zt, broken, mirror, vt, KlOrder::student_first), AlignmentError);
  broken = ex.alignment;
  broken.action_of_token.back() = static_cast<int>(ex.m()) + 3;
  CHECK_THROWS_AS(distillation(zs, zt, broken, mirror, vt, KlOrder::student_first), AlignmentError);
}

TEST_CASE("swapping the teachers swaps the two KL terms") {
  std::mt19937_64 rng(5);
  const int n = 4, vt = 6, va = 9;
  auto random_matrix = [&](int r, int c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 2.0 * standard_normal(rng);
    return m;
  };
  AlignmentMap align{{0, 2, 3, 5}};
  Matrix x = random_matrix(n, vt);       // seq student logits
  Matrix y = random_matrix(6, va);       // tree student logits
  TeacherTargets t{nn::log_softmax_rows(random_matrix(n, vt)), nn::log_softmax_rows(random_matrix(n, vt))};
  // Swapped roles: the seq student now carries the tree student's token slice
  // and vice versa, with the teachers exchanged.
  Matrix x2(n, vt);
  Matrix y2 = random_matrix(6, va);
  for (int j = 0; j < n; ++j) {
    x2.row(j) = y.row(align[j]).head(vt);
    y2.row(align[j]).head(vt) = x.row(j);
  }
  TeacherTargets swapped{t.tree_log_probs, t.seq_log_probs};
  for (KlOrder order : {KlOrder::student_first, KlOrder::teacher_first}) {
    auto a = distillation(x, y, align, t, vt, order);
    auto b = distillation(x2, y2, align, swapped, vt, order);
    CHECK(a.kd_seq == doctest::Approx(b.kd_tree).epsilon(1e-14));
    CHECK(a.kd_tree == doctest::Approx(b.kd_seq).epsilon(1e-14));
    CHECK(a.L_kd == doctest::Approx(b.L_kd).epsilon(1e-14));
  }
}

TEST_CASE("combined loss decomposition") {
  Fixture f;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& ex = f.split.train[k];
    for (double lambda : {0.0, 0.1, 0.5, 1.0}) {
      auto b = combined_loss(ex, f.student, f.seq_teacher, f.tree_teacher, lambda);
      CHECK(b.L_m == b.L_s + b.L_t);
      CHECK(b.L == doctest::Approx((1 - lambda) * b.L_m + lambda * b.L_kd).epsilon(1e-12));
      CHECK(b.L_kd >= 0.0);
      if (lambda == 0.0) CHECK(b.L == b.L_m);
      if (lambda == 1.0) CHECK(b.L == b.L_kd);
    }
  }
  CHECK_THROWS_AS(backbone_objective(f.student, f.split.train[0], nullptr, {Objective::joint, 0.5}),
                  ConfigError);
}

TEST_CASE("distillation is non-negative over random draws") {
  auto split = testutil::small_split(12, 17, 1);
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    Model s = testutil::micro_model(split, 1000 + draw);
    Model a = testutil::micro_model(split, 2000 + draw);
    Model b = testutil::micro_model(split, 3000 + draw);
    const auto& ex = split.train[draw % split.train.size()];
    for (KlOrder order : {KlOrder::student_first, KlOrder::teacher_first})
      CHECK(distill_loss(ex, s, a, b, order) >= 0.0);
  }
}

TEST_CASE("margin loss") {
  CHECK(selector_margin_loss({0.9, 0.1}, Paradigm::seq) == doctest::Approx(0.2));
  CHECK(selector_margin_loss({0.1, 0.9}, Paradigm::tree) == doctest::Approx(0.2));
  CHECK(selector_margin_loss({0.5, 0.5}, Paradigm::seq) == 1.0);
  CHECK(selector_margin_loss({1.0, 0.0}, Paradigm::seq) == 0.0);
  for (double p = 0.0; p < 1.0; p += 0.05)
    CHECK(selector_margin_loss({p, 1 - p}, Paradigm::seq) == doctest::Approx(2 - 2 * p));
}

TEST_CASE("gradient check: L_s") { check_backbone_gradient({Objective::seq_only}, 1); }
TEST_CASE("gradient check: L_t") { check_backbone_gradient({Objective::tree_only}, 2); }
TEST_CASE("gradient check: L_kd") {
  check_backbone_gradient({Objective::joint, 1.0, KlOrder::student_first}, 3);
  check_backbone_gradient({Objective::joint, 1.0, KlOrder::teacher_first}, 4);
}
TEST_CASE("gradient check: combined") {
  check_backbone_gradient({Objective::joint, 0.3, KlOrder::student_first}, 5);
}

TEST_CASE("gradient check: L_c") {
  ModelConfig c = testutil::micro_config();
  SelectorParams s = init_selector(c, 8);
  std::mt19937_64 rng(9);
  std::vector<Vector> features;
  std::vector<Paradigm> labels;
  for (int k = 0; k < 7; ++k) {
    Vector v(c.d_model);
    for (auto& x : v) x = standard_normal(rng);
    features.push_back(v);
    labels.push_back(k % 3 == 0 ? Paradigm::tree : Paradigm::seq);
  }
  SelectorParams grad = s.zeros_like();
  selector_objective(s, features, labels, &grad);
  testsupport::GradCheck check;
  check.run(s.tensors(), grad.tensors(), [&] { return selector_objective(s, features, labels); }, 10);
  CHECK(check.worst < 1e-4);
}
