#include "unigen/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "unigen/error.hpp"
#include "unigen/metrics.hpp"
#include "unigen/random.hpp"

namespace unigen::training {

using corpus::ParallelExample;
using model::Model;

void TrainConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (patience < 0) throw ConfigError("patience must be non-negative");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
}

void Adam::step(const std::vector<std::pair<std::string, Matrix*>>& params,
                const std::vector<std::pair<std::string, Matrix*>>& grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("parameter and gradient lists differ");
  if (m_.empty()) {
    for (const auto& [name, p] : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw DimensionError("optimizer state does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k].second;
    const Matrix& g = *grads[k].second;
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
  }
}

double linear_schedule(long step, double peak, long warmup, long total) {
  if (warmup > 0 && step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return peak;
  const double left = static_cast<double>(total - step) / static_cast<double>(total - warmup);
  return peak * std::clamp(left, 0.0, 1.0);
}

double clip_gradients(const std::vector<std::pair<std::string, Matrix*>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (const auto& [name, g] : grads) *g *= k;
  }
  return norm;
}

std::string LogRecord::line() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "stage=%s epoch=%d step=%ld lr=%.6g L=%.9g L_m=%.9g L_s=%.9g L_t=%.9g L_kd=%.9g L_c=%.9g",
                stage.c_str(), epoch, step, lr, loss.L, loss.L_m, loss.L_s, loss.L_t, loss.L_kd, loss.L_c);
  std::string out = buf;
  if (epoch_end) out += " epoch_end=1";
  if (valid) {
    std::snprintf(buf, sizeof buf, " valid_%s=%.9g", valid_name.c_str(), *valid);
    out += buf;
  }
  return out;
}

namespace {

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

void zero(std::vector<std::pair<std::string, Matrix*>>& tensors) {
  for (auto& [name, t] : tensors) t->setZero();
}

std::string metric_name(const ObjectiveConfig& objective) {
  switch (objective.objective) {
    case Objective::seq_only: return "L_s";
    case Objective::tree_only: return "L_t";
    case Objective::joint: return "L_m";
  }
  return "L";
}

}  // namespace

LossBreakdown mean_loss(const Model& m, const std::vector<ParallelExample>& data,
                        const ObjectiveConfig& objective, const std::vector<TeacherTargets>* teachers) {
  if (data.empty()) throw EmptyCorpusError("no examples to evaluate");
  LossBreakdown sum;
  for (std::size_t i = 0; i < data.size(); ++i)
    sum += backbone_objective(m, data[i], teachers ? &(*teachers)[i] : nullptr, objective);
  sum /= static_cast<double>(data.size());
  return sum;
}

TrainResult train_objective(Model& student, const std::vector<ParallelExample>& train,
                            const std::vector<ParallelExample>& valid,
                            const ObjectiveConfig& objective, const TrainConfig& config,
                            const std::vector<TeacherTargets>* teachers, const Hooks& hooks,
                            const std::string& stage) {
  config.validate();
  if (train.empty()) throw EmptyCorpusError("empty training split");
  if (teachers && teachers->size() != train.size())
    throw DimensionError("teacher targets do not match the training split");

  std::mt19937_64 rng(mix_seed(config.seed, corpus::fnv1a(stage)));
  const bool dropout = student.config.dropout > 0.0;
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const long per_epoch = static_cast<long>((train.size() + batch - 1) / batch);
  long total = per_epoch * config.max_epochs;
  if (config.max_steps > 0) total = std::min(total, config.max_steps);

  // Validation tracks the multi-task part only.
  ObjectiveConfig eval_objective = objective;
  eval_objective.lambda = 0.0;
  const std::string valid_name = metric_name(objective);

  Adam adam;
  model::BackboneParams grad = student.backbone.zeros_like();
  auto grad_tensors = grad.tensors();
  model::BackboneParams best = student.backbone;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  result.best_valid = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long step = 0;
  for (int epoch = 1; epoch <= config.max_epochs && step < total; ++epoch) {
    shuffle(order, rng);
    LossBreakdown epoch_sum;
    long epoch_batches = 0;
    double lr = 0.0;
    for (std::size_t start = 0; start < order.size() && step < total; start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      zero(grad_tensors);
      LossBreakdown batch_loss;
      try {
        for (std::size_t k = start; k < end; ++k) {
          const std::size_t i = order[k];
          batch_loss += backbone_objective(student, train[i], teachers ? &(*teachers)[i] : nullptr,
                                           objective, dropout ? &rng : nullptr, &grad, scale);
        }
      } catch (const NonFiniteLossError& e) {
        throw DivergenceError(stage + ": " + e.what());
      }
      batch_loss /= static_cast<double>(end - start);
      if (!std::isfinite(batch_loss.L)) throw DivergenceError(stage + ": non-finite loss");
      const double norm = clip_gradients(grad_tensors, config.clip_norm);
      if (!std::isfinite(norm)) throw DivergenceError(stage + ": non-finite gradient");
      lr = linear_schedule(step, config.learning_rate, config.warmup_steps, total);
      adam.step(student.backbone.tensors(), grad_tensors, lr);
      ++step;
      epoch_sum += batch_loss;
      ++epoch_batches;
      if (hooks.log && hooks.log_every > 0 && step % hooks.log_every == 0)
        hooks.log({stage, epoch, step, lr, batch_loss, false, std::nullopt, {}});
    }
    epoch_sum /= static_cast<double>(std::max<long>(1, epoch_batches));
    result.epochs = epoch;
    result.steps = step;

    const double metric = valid.empty() ? epoch_sum.L : mean_loss(student, valid, eval_objective).L;
    if (!std::isfinite(metric)) throw DivergenceError(stage + ": non-finite validation loss");
    result.valid_history.push_back(metric);
    if (metric < result.best_valid) {
      result.best_valid = metric;
      result.best_epoch = epoch;
      since_best = 0;
      if (!valid.empty()) best = student.backbone;
    } else {
      ++since_best;
    }
    if (hooks.log) hooks.log({stage, epoch, step, lr, epoch_sum, true, metric, valid_name});
    if (hooks.stop && hooks.stop(student, stage, epoch, step)) {
      result.stopped_by_hook = true;
      break;
    }
    if (config.patience > 0 && since_best >= config.patience) break;
  }
  if (!valid.empty()) student.backbone = std::move(best);
  return result;
}

TeacherPair train_teachers(const corpus::DatasetSplit& data, const model::ModelConfig& model_config,
                           const TrainConfig& config, const Hooks& hooks, TrainResult* seq_result,
                           TrainResult* tree_result) {
  const Grammar& grammar = corpus::target_grammar(data.task);
  const SourceVocabulary source = model::build_source_vocabulary(data.train);
  auto make = [&](std::uint64_t stream) {
    model::ModelConfig c = model_config;
    c.seed = mix_seed(model_config.seed, stream);
    return Model::create(c, grammar, source);
  };
  TeacherPair pair{make(1), make(2)};
  ObjectiveConfig seq{Objective::seq_only, 0.0, config.kl_order};
  ObjectiveConfig tree{Objective::tree_only, 0.0, config.kl_order};
  TrainResult rs = train_objective(pair.seq, data.train, data.valid, seq, config, nullptr, hooks, "teacher_seq");
  TrainResult rt = train_objective(pair.tree, data.train, data.valid, tree, config, nullptr, hooks, "teacher_tree");
  if (seq_result) *seq_result = rs;
  if (tree_result) *tree_result = rt;
  return pair;
}

std::vector<TeacherTargets> teacher_targets(const TeacherPair& teachers,
                                            const std::vector<ParallelExample>& data) {
  std::vector<TeacherTargets> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(teacher_targets(teachers.seq, teachers.tree, ex));
  return out;
}

namespace {

Model train_backbone_with(const corpus::DatasetSplit& data, const std::vector<TeacherTargets>* targets,
                          const model::ModelConfig& model_config, const TrainConfig& config,
                          const Hooks& hooks, TrainResult* result, const std::string& stage) {
  Model student = Model::create(model_config, corpus::target_grammar(data.task),
                                model::build_source_vocabulary(data.train));
  ObjectiveConfig objective{Objective::joint, config.lambda, config.kl_order};
  TrainResult r = train_objective(student, data.train, data.valid, objective, config,
                                  config.lambda > 0.0 ? targets : nullptr, hooks, stage);
  if (result) *result = r;
  return student;
}

}  // namespace

Model train_backbone(const corpus::DatasetSplit& data, const TeacherPair& teachers,
                     const model::ModelConfig& model_config, const TrainConfig& config,
                     const Hooks& hooks, TrainResult* result) {
  config.validate();
  std::vector<TeacherTargets> targets;
  if (config.lambda > 0.0) targets = teacher_targets(teachers, data.train);
  return train_backbone_with(data, &targets, model_config, config, hooks, result, "backbone");
}

Model sweep_lambda(const corpus::DatasetSplit& data, const TeacherPair& teachers,
                   const model::ModelConfig& model_config, const TrainConfig& config,
                   const std::vector<double>& grid, const Hooks& hooks,
                   std::vector<SweepEntry>* entries) {
  if (grid.empty()) throw ConfigError("empty lambda grid");
  if (data.valid.empty()) throw ConfigError("lambda sweep needs a validation split");
  for (double l : grid)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  std::vector<TeacherTargets> targets = teacher_targets(teachers, data.train);
  std::optional<Model> best;
  double best_loss = std::numeric_limits<double>::infinity();
  for (double l : grid) {
    TrainConfig c = config;
    c.lambda = l;
    SweepEntry e;
    e.lambda = l;
    char name[32];
    std::snprintf(name, sizeof name, "backbone_l%.2f", l);
    Model m = train_backbone_with(data, &targets, model_config, c, hooks, &e.result, name);
    e.valid_L_m = e.result.best_valid;
    if (entries) entries->push_back(e);
    if (e.valid_L_m < best_loss) {
      best_loss = e.valid_L_m;
      best = std::move(m);
    }
  }
  return std::move(*best);
}

std::vector<SelectorLabel> label_instances(const std::vector<ParallelExample>& data,
                                           const Model& backbone, const decoding::Strategy& strategy) {
  std::vector<SelectorLabel> labels;
  labels.reserve(data.size());
  for (const auto& ex : data) {
    SelectorLabel l;
    l.id = ex.id;
    std::vector<std::string> gold;
    for (const auto& t : ex.target_tokens) gold.push_back(t.lexeme);
    const model::Encoded enc = backbone.encode(ex.source);
    decoding::DecodeOutput s = decoding::decode_seq(backbone, enc, strategy);
    decoding::DecodeOutput t = decoding::decode_tree(backbone, enc, strategy);
    l.status_seq = s.status;
    l.status_tree = t.status;
    l.bleu_seq = metrics::bleu_sentence(s.words(), gold);
    // Truncated or unrenderable action sequences carry no tokens.
    l.bleu_tree = t.status == decoding::Status::ok ? metrics::bleu_sentence(t.words(), gold) : 0.0;
    l.tag = l.bleu_tree > l.bleu_seq ? Paradigm::tree : Paradigm::seq;
    labels.push_back(std::move(l));
  }
  return labels;
}

nlohmann::ordered_json labels_to_json(const std::vector<SelectorLabel>& labels) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& l : labels) {
    j.push_back({{"id", l.id},
                 {"tag", model::to_string(l.tag)},
                 {"bleu_seq", l.bleu_seq},
                 {"bleu_tree", l.bleu_tree},
                 {"status_seq", decoding::to_string(l.status_seq)},
                 {"status_tree", decoding::to_string(l.status_tree)}});
  }
  return j;
}

namespace {

std::vector<model::Vector> pooled_features(const Model& m, const std::vector<ParallelExample>& data) {
  std::vector<model::Vector> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(model::pool(m.encode(ex.source)));
  return out;
}

std::vector<Paradigm> tags(const std::vector<SelectorLabel>& labels) {
  std::vector<Paradigm> out;
  for (const auto& l : labels) out.push_back(l.tag);
  return out;
}

double accuracy(const model::SelectorParams& s, const std::vector<model::Vector>& features,
                const std::vector<Paradigm>& labels) {
  if (features.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto p = model::select(features[i], s);
    hit += (p[0] >= p[1] ? Paradigm::seq : Paradigm::tree) == labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(features.size());
}

}  // namespace

TrainResult train_selector(Model& m, const std::vector<ParallelExample>& train,
                           const std::vector<SelectorLabel>& train_labels,
                           const std::vector<ParallelExample>& valid,
                           const std::vector<SelectorLabel>& valid_labels,
                           const SelectorConfig& config, const Hooks& hooks) {
  if (train.empty()) throw EmptyCorpusError("empty training split");
  if (train.size() != train_labels.size() || valid.size() != valid_labels.size())
    throw DimensionError("labels do not match examples");
  if (!(config.learning_rate > 0.0) || config.batch_size < 1 || config.max_epochs < 1 || config.patience < 0)
    throw ConfigError("invalid selector training config");

  // The backbone is only read from here on; features are computed once.
  const Model& frozen = m;
  const std::vector<model::Vector> train_x = pooled_features(frozen, train);
  const std::vector<model::Vector> valid_x = pooled_features(frozen, valid);
  const std::vector<Paradigm> train_y = tags(train_labels);
  const std::vector<Paradigm> valid_y = tags(valid_labels);

  const std::string stage = "selector";
  std::mt19937_64 rng(mix_seed(config.seed, corpus::fnv1a(stage)));
  model::SelectorParams sel = model::init_selector(m.config, rng());
  model::SelectorParams best = sel;
  model::SelectorParams grad = sel.zeros_like();
  auto grad_tensors = grad.tensors();

  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const long total = static_cast<long>((train.size() + batch - 1) / batch) * config.max_epochs;
  Adam adam;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  result.best_valid = -1.0;
  int since_best = 0;
  long step = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle(order, rng);
    LossBreakdown epoch_sum;
    long batches = 0;
    double lr = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<model::Vector> xs;
      std::vector<Paradigm> ys;
      for (std::size_t k = start; k < end; ++k) {
        xs.push_back(train_x[order[k]]);
        ys.push_back(train_y[order[k]]);
      }
      zero(grad_tensors);
      LossBreakdown b;
      b.L_c = selector_objective(sel, xs, ys, &grad);
      if (!std::isfinite(b.L_c)) throw DivergenceError("selector: non-finite loss");
      lr = linear_schedule(step, config.learning_rate, 0, total);
      adam.step(sel.tensors(), grad_tensors, lr);
      ++step;
      epoch_sum += b;
      ++batches;
      if (hooks.log && hooks.log_every > 0 && step % hooks.log_every == 0)
        hooks.log({stage, epoch, step, lr, b, false, std::nullopt, {}});
    }
    epoch_sum /= static_cast<double>(batches);
    result.epochs = epoch;
    result.steps = step;
    const double acc = valid.empty() ? accuracy(sel, train_x, train_y) : accuracy(sel, valid_x, valid_y);
    result.valid_history.push_back(acc);
    if (acc > result.best_valid) {
      result.best_valid = acc;
      result.best_epoch = epoch;
      best = sel;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (hooks.log) hooks.log({stage, epoch, step, lr, epoch_sum, true, acc, "accuracy"});
    if (config.patience > 0 && since_best >= config.patience) break;
  }
  m.selector = std::move(best);
  return result;
}

double selector_accuracy(const Model& m, const std::vector<ParallelExample>& data,
                         const std::vector<SelectorLabel>& labels) {
  if (!m.selector) throw ConfigError("model has no selector");
  if (data.size() != labels.size()) throw DimensionError("labels do not match examples");
  return accuracy(*m.selector, pooled_features(m, data), tags(labels));
}

double exact_match_rate(const Model& m, Paradigm paradigm, const std::vector<ParallelExample>& data,
                        int max_length) {
  if (data.empty()) throw EmptyCorpusError("no examples");
  std::size_t hit = 0;
  for (const auto& ex : data) {
    decoding::DecodeOutput out =
        decoding::decode(m, paradigm, ex.source, decoding::Strategy::greedy(max_length));
    if (out.status != decoding::Status::ok || out.tokens.size() != ex.target_tokens.size()) continue;
    bool same = true;
    for (std::size_t k = 0; k < out.tokens.size() && same; ++k)
      same = out.tokens[k].lexeme == ex.target_tokens[k].lexeme;
    hit += same;
  }
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

}  // namespace unigen::training
