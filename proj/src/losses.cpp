#include "unigen/losses.hpp"

#include <cmath>

#include "unigen/error.hpp"

namespace unigen::training {

namespace {

constexpr double kMassFloor = 1e-12;

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NonFiniteLossError(std::string(what) + " is not finite");
}

// One KL term and its gradient w.r.t. the student logits that produced
// `log_student` through a softmax.
double kl_term(const RowVector& log_student, const RowVector& log_teacher, KlOrder order,
               RowVector* d_logits) {
  const RowVector p = log_student.array().exp();
  if (order == KlOrder::student_first) {
    const double kl = kl_divergence(log_student, log_teacher);
    if (d_logits) *d_logits = p.array() * (log_student - log_teacher).array() - p.array() * kl;
    return kl;
  }
  const double kl = kl_divergence(log_teacher, log_student);
  if (d_logits) *d_logits = p - RowVector(log_teacher.array().exp());
  return kl;
}

}  // namespace

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  L += o.L;
  L_m += o.L_m;
  L_s += o.L_s;
  L_t += o.L_t;
  L_kd += o.L_kd;
  L_c += o.L_c;
  kd_seq += o.kd_seq;
  kd_tree += o.kd_tree;
  return *this;
}

LossBreakdown& LossBreakdown::operator/=(double k) {
  L /= k;
  L_m /= k;
  L_s /= k;
  L_t /= k;
  L_kd /= k;
  L_c /= k;
  kd_seq /= k;
  kd_tree /= k;
  return *this;
}

double cross_entropy(const Matrix& logits, const std::vector<int>& targets, Matrix* d_logits) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size())
    throw DimensionError("cross_entropy: logits rows do not match targets");
  const double rows = static_cast<double>(targets.size());
  Matrix logp = nn::log_softmax_rows(logits);
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) loss -= logp(static_cast<Eigen::Index>(i), targets[i]);
  loss /= rows;
  require_finite(loss, "cross-entropy");
  if (d_logits) {
    *d_logits = logp.array().exp();
    for (std::size_t i = 0; i < targets.size(); ++i) (*d_logits)(static_cast<Eigen::Index>(i), targets[i]) -= 1.0;
    *d_logits /= rows;
  }
  return loss;
}

double kl_divergence(const RowVector& log_p, const RowVector& log_q) {
  double kl = 0.0;
  for (Eigen::Index k = 0; k < log_p.size(); ++k) {
    const double p = std::exp(log_p[k]);
    if (p > 0.0) kl += p * (log_p[k] - log_q[k]);
  }
  return std::max(kl, 0.0);
}

RowVector restrict_to_tokens(const RowVector& action_probs, int token_count) {
  RowVector head = action_probs.head(token_count);
  const double mass = head.sum();
  if (!(mass >= kMassFloor))
    throw DegenerateDistributionError("token slice carries mass " + std::to_string(mass));
  return head / mass;
}

RowVector restricted_log_softmax(const Eigen::Ref<const RowVector>& action_logits, int token_count) {
  const double lse_tokens = nn::log_sum_exp(action_logits.head(token_count));
  if (lse_tokens - nn::log_sum_exp(action_logits) < std::log(kMassFloor))
    throw DegenerateDistributionError("token slice carries less than 1e-12 of the mass");
  return action_logits.head(token_count).array() - lse_tokens;
}

TeacherTargets teacher_targets(const model::Model& seq_teacher, const model::Model& tree_teacher,
                               const corpus::ParallelExample& ex) {
  TeacherTargets t;
  const int n = static_cast<int>(ex.n());
  {
    auto enc = seq_teacher.encode(ex.source);
    auto prefix = model::seq_targets(ex, seq_teacher.vocab);
    prefix.pop_back();
    Matrix logits = model::decode_logits(Paradigm::seq, prefix, enc, seq_teacher.backbone, seq_teacher.config);
    t.seq_log_probs = nn::log_softmax_rows(logits).topRows(n);
  }
  {
    auto enc = tree_teacher.encode(ex.source);
    auto prefix = model::tree_targets(ex, tree_teacher.vocab);
    prefix.pop_back();
    Matrix logits = model::decode_logits(Paradigm::tree, prefix, enc, tree_teacher.backbone, tree_teacher.config);
    const int vt = tree_teacher.backbone.token_count;
    t.tree_log_probs.resize(n, vt);
    for (int j = 0; j < n; ++j)
      t.tree_log_probs.row(j) = restricted_log_softmax(logits.row(ex.alignment[j]), vt);
  }
  return t;
}

LossBreakdown distillation(const Matrix& seq_logits, const Matrix& tree_logits,
                           const AlignmentMap& alignment, const TeacherTargets& teachers,
                           int token_count, KlOrder order, double scale, Matrix* d_seq,
                           Matrix* d_tree) {
  const auto n = static_cast<Eigen::Index>(alignment.size());
  if (n == 0 || teachers.seq_log_probs.rows() != n || teachers.tree_log_probs.rows() != n ||
      seq_logits.rows() < n)
    throw AlignmentError("alignment does not cover every target token");
  LossBreakdown out;
  RowVector grad;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int a = alignment[static_cast<std::size_t>(j)];
    if (a < 0 || a >= tree_logits.rows() || (j > 0 && a <= alignment[static_cast<std::size_t>(j - 1)]))
      throw AlignmentError("alignment entry " + std::to_string(j) + " is invalid");
    const RowVector zs = seq_logits.row(j);
    const RowVector log_ps = zs.array() - nn::log_sum_exp(zs);
    out.kd_seq += kl_term(log_ps, teachers.tree_log_probs.row(j), order, d_seq ? &grad : nullptr);
    if (d_seq) d_seq->row(j) += grad * (scale / static_cast<double>(n));

    const RowVector log_pt = restricted_log_softmax(tree_logits.row(a), token_count);
    out.kd_tree += kl_term(log_pt, teachers.seq_log_probs.row(j), order, d_tree ? &grad : nullptr);
    if (d_tree) d_tree->row(a).head(token_count) += grad * (scale / static_cast<double>(n));
  }
  out.kd_seq /= static_cast<double>(n);
  out.kd_tree /= static_cast<double>(n);
  out.L_kd = out.kd_seq + out.kd_tree;
  require_finite(out.L_kd, "distillation loss");
  return out;
}

LossBreakdown backbone_objective(const model::Model& student, const corpus::ParallelExample& ex,
                                 const TeacherTargets* teachers, const ObjectiveConfig& config,
                                 std::mt19937_64* dropout_rng, model::BackboneParams* grad,
                                 double scale) {
  const bool use_seq = config.objective != Objective::tree_only;
  const bool use_tree = config.objective != Objective::seq_only;
  const bool joint = config.objective == Objective::joint;
  const double lambda = joint ? config.lambda : 0.0;
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must lie in [0, 1]");
  if (lambda > 0.0 && !teachers) throw ConfigError("distillation requires teacher targets");

  const auto& params = student.backbone;
  const auto& cfg = student.config;
  const nn::Dropout dropout(cfg.dropout, dropout_rng);
  model::EncoderTrace enc_trace;
  model::Encoded enc = model::encode(params, cfg, student.source_ids(ex.source), dropout,
                                     grad ? &enc_trace : nullptr);

  LossBreakdown out;
  Matrix seq_logits, tree_logits, d_seq, d_tree;
  model::DecoderTrace seq_trace, tree_trace;
  auto run = [&](Paradigm p, Matrix& logits, Matrix& d, model::DecoderTrace& trace) {
    auto tgt = model::targets(p, ex, student.vocab);
    std::vector<int> prefix(tgt.begin(), tgt.end() - 1);
    logits = model::decode_logits(p, prefix, enc, params, cfg, dropout, grad ? &trace : nullptr);
    const double w = (joint ? 1.0 - lambda : 1.0) * scale;
    double loss = cross_entropy(logits, tgt, grad ? &d : nullptr);
    if (grad) d *= w;
    return loss;
  };
  if (use_seq) out.L_s = run(Paradigm::seq, seq_logits, d_seq, seq_trace);
  if (use_tree) out.L_t = run(Paradigm::tree, tree_logits, d_tree, tree_trace);
  out.L_m = out.L_s + out.L_t;

  if (lambda > 0.0) {
    auto kd = distillation(seq_logits, tree_logits, ex.alignment, *teachers, params.token_count,
                           config.kl_order, lambda * scale, grad ? &d_seq : nullptr,
                           grad ? &d_tree : nullptr);
    out.L_kd = kd.L_kd;
    out.kd_seq = kd.kd_seq;
    out.kd_tree = kd.kd_tree;
  }
  out.L = joint ? (1.0 - lambda) * out.L_m + lambda * out.L_kd : out.L_m;

  if (grad) {
    Matrix d_states = Matrix::Zero(enc.states.rows(), enc.states.cols());
    if (use_seq) d_states += model::decode_backward(params, seq_trace, enc, d_seq, *grad);
    if (use_tree) d_states += model::decode_backward(params, tree_trace, enc, d_tree, *grad);
    model::encode_backward(params, enc_trace, d_states, *grad);
  }
  return out;
}

double loss_seq(const corpus::ParallelExample& ex, const model::Model& student) {
  return backbone_objective(student, ex, nullptr, {Objective::seq_only}).L_s;
}

double loss_tree(const corpus::ParallelExample& ex, const model::Model& student) {
  return backbone_objective(student, ex, nullptr, {Objective::tree_only}).L_t;
}

double distill_loss(const corpus::ParallelExample& ex, const model::Model& student,
                    const model::Model& seq_teacher, const model::Model& tree_teacher,
                    KlOrder order) {
  auto teachers = teacher_targets(seq_teacher, tree_teacher, ex);
  return backbone_objective(student, ex, &teachers, {Objective::joint, 1.0, order}).L_kd;
}

LossBreakdown combined_loss(const corpus::ParallelExample& ex, const model::Model& student,
                            const model::Model& seq_teacher, const model::Model& tree_teacher,
                            double lambda, KlOrder order) {
  auto teachers = teacher_targets(seq_teacher, tree_teacher, ex);
  return backbone_objective(student, ex, &teachers, {Objective::joint, lambda, order});
}

double selector_margin_loss(const std::array<double, 2>& p, Paradigm label) {
  const int pos = static_cast<int>(label);
  return std::max(0.0, 1.0 - (p[pos] - p[1 - pos]));
}

double selector_objective(const model::SelectorParams& selector,
                          const std::vector<model::Vector>& features,
                          const std::vector<Paradigm>& labels, model::SelectorParams* grad) {
  if (features.size() != labels.size()) throw DimensionError("features and labels differ in count");
  if (features.empty()) return 0.0;
  const auto batch = static_cast<Eigen::Index>(features.size());
  const Eigen::Index d = features[0].size();
  if (selector.hidden.weight.cols() != d) throw DimensionError("selector input width mismatch");
  Matrix h(batch, d);
  for (Eigen::Index b = 0; b < batch; ++b) h.row(b) = features[static_cast<std::size_t>(b)].transpose();
  Matrix pre = nn::linear(selector.hidden, h);
  Matrix hidden = pre.cwiseMax(0.0);
  Matrix z = nn::linear(selector.output, hidden);
  Matrix dz = Matrix::Zero(batch, 2);
  double total = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const double max = z.row(b).maxCoeff();
    const double e0 = std::exp(z(b, 0) - max), e1 = std::exp(z(b, 1) - max);
    const std::array<double, 2> p{e0 / (e0 + e1), e1 / (e0 + e1)};
    const int pos = static_cast<int>(labels[static_cast<std::size_t>(b)]);
    const double loss = selector_margin_loss(p, labels[static_cast<std::size_t>(b)]);
    total += loss;
    if (loss > 0.0) {
      // loss = 2 - 2 p+, d p+ / d z_k = p+ (delta_k - p_k)
      dz(b, pos) = -2.0 * p[pos] * (1.0 - p[pos]);
      dz(b, 1 - pos) = 2.0 * p[pos] * p[1 - pos];
    }
  }
  require_finite(total, "selector loss");
  if (grad) {
    Matrix dhidden = nn::linear_backward(selector.output, hidden, dz, grad->output);
    Matrix dpre = (pre.array() > 0.0).select(dhidden, 0.0);
    nn::linear_backward(selector.hidden, h, dpre, grad->hidden);
  }
  return total;
}

}  // namespace unigen::training
