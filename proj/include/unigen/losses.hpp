#pragma once

#include <array>
#include <vector>

#include "unigen/corpus.hpp"
#include "unigen/model.hpp"

namespace unigen::training {

using model::Matrix;
using model::Paradigm;
using model::RowVector;

/// Argument order of the two distillation divergences.
/// student_first: KL(student || teacher); teacher_first: KL(teacher || student).
enum class KlOrder { student_first, teacher_first };

struct LossBreakdown {
  double L = 0.0;
  double L_m = 0.0;
  double L_s = 0.0;
  double L_t = 0.0;
  double L_kd = 0.0;
  double L_c = 0.0;
  /// The two distillation terms: seq student vs tree teacher, tree student vs
  /// seq teacher.
  double kd_seq = 0.0;
  double kd_tree = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown& operator/=(double k);
};

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`. Writes d loss / d logits when `d_logits` is non-null. Throws
/// NonFiniteLossError.
double cross_entropy(const Matrix& logits, const std::vector<int>& targets, Matrix* d_logits);

/// KL(p || q) for distributions given as log-probabilities.
double kl_divergence(const RowVector& log_p, const RowVector& log_q);

/// Takes the first `token_count` entries of an action-space distribution and
/// renormalizes. Throws DegenerateDistributionError when their mass is below
/// 1e-12.
RowVector restrict_to_tokens(const RowVector& action_probs, int token_count);

/// Log of the token-slice renormalized softmax of action-space logits.
RowVector restricted_log_softmax(const Eigen::Ref<const RowVector>& action_logits,
                                 int token_count);

/// Frozen teacher predictions at the positions that take part in
/// distillation: row j is the seq teacher's log-distribution for token j, and
/// the tree teacher's restricted log-distribution at the aligned action.
struct TeacherTargets {
  Matrix seq_log_probs;   // n x |V_t|
  Matrix tree_log_probs;  // n x |V_t|
};

TeacherTargets teacher_targets(const model::Model& seq_teacher, const model::Model& tree_teacher,
                               const corpus::ParallelExample& ex);

/// Distillation over aligned pairs. `seq_logits` holds at least n rows of
/// |V_t| logits, `tree_logits` m rows of |V_a| logits. Gradients are added
/// (scaled by `scale`) into the optional outputs.
LossBreakdown distillation(const Matrix& seq_logits, const Matrix& tree_logits,
                           const AlignmentMap& alignment, const TeacherTargets& teachers,
                           int token_count, KlOrder order, double scale = 1.0,
                           Matrix* d_seq = nullptr, Matrix* d_tree = nullptr);

enum class Objective { seq_only, tree_only, joint };

struct ObjectiveConfig {
  Objective objective = Objective::joint;
  double lambda = 0.1;
  KlOrder kl_order = KlOrder::student_first;
};

/// Forward (and optionally backward) pass of the backbone objective on one
/// example. seq_only: L = L_s; tree_only: L = L_t; joint:
/// L = (1 - lambda) (L_s + L_t) + lambda L_kd. Teachers are required for
/// joint with lambda > 0. Gradients are accumulated into `grad` scaled by
/// `scale`. Dropout is active iff `dropout_rng` is non-null.
LossBreakdown backbone_objective(const model::Model& student, const corpus::ParallelExample& ex,
                                 const TeacherTargets* teachers, const ObjectiveConfig& config,
                                 std::mt19937_64* dropout_rng = nullptr,
                                 model::BackboneParams* grad = nullptr, double scale = 1.0);

double loss_seq(const corpus::ParallelExample& ex, const model::Model& student);
double loss_tree(const corpus::ParallelExample& ex, const model::Model& student);
double distill_loss(const corpus::ParallelExample& ex, const model::Model& student,
                    const model::Model& seq_teacher, const model::Model& tree_teacher,
                    KlOrder order = KlOrder::student_first);
LossBreakdown combined_loss(const corpus::ParallelExample& ex, const model::Model& student,
                            const model::Model& seq_teacher, const model::Model& tree_teacher,
                            double lambda, KlOrder order = KlOrder::student_first);

/// max{0, 1 - (p+ - p-)} where p+ is the probability of `label`.
double selector_margin_loss(const std::array<double, 2>& p, Paradigm label);

/// Summed margin loss over a batch of pooled encoder features. Accumulates
/// gradients into `grad` when non-null.
double selector_objective(const model::SelectorParams& selector,
                          const std::vector<model::Vector>& features,
                          const std::vector<Paradigm>& labels,
                          model::SelectorParams* grad = nullptr);

}  // namespace unigen::training
