#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "unigen/corpus.hpp"
#include "unigen/decoding.hpp"
#include "unigen/losses.hpp"
#include "unigen/model.hpp"

namespace unigen::training {

struct TrainConfig {
  double lambda = 0.1;
  double learning_rate = 1e-4;  // peak
  int warmup_steps = 0;
  int batch_size = 16;
  int max_epochs = 20;
  long max_steps = 0;     // 0: no step limit
  int patience = 3;       // epochs without validation improvement; 0 disables
  double clip_norm = 1.0; // 0 disables
  std::uint64_t seed = 0;
  KlOrder kl_order = KlOrder::student_first;

  /// Throws ConfigError.
  void validate() const;
};

/// Adam with bias correction.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(const std::vector<std::pair<std::string, Matrix*>>& params,
            const std::vector<std::pair<std::string, Matrix*>>& grads, double lr);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Linear warmup to `peak` over `warmup` steps, then linear decay to zero at
/// `total` steps.
double linear_schedule(long step, double peak, long warmup, long total);

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
double clip_gradients(const std::vector<std::pair<std::string, Matrix*>>& grads, double max_norm);

struct LogRecord {
  std::string stage;
  int epoch = 0;
  long step = 0;
  double lr = 0.0;
  LossBreakdown loss;
  bool epoch_end = false;
  std::optional<double> valid;  // validation metric at epoch end
  std::string valid_name;

  /// One line: key=value pairs separated by spaces.
  std::string line() const;
};

struct Hooks {
  std::function<void(const LogRecord&)> log;
  int log_every = 50;  // steps between progress records
  /// Called after each epoch; returning true ends training.
  std::function<bool(const model::Model&, const std::string& stage, int epoch, long step)> stop;
};

struct TrainResult {
  int epochs = 0;
  long steps = 0;
  int best_epoch = 0;
  double best_valid = 0.0;
  std::vector<double> valid_history;
  bool stopped_by_hook = false;
};

/// Minibatch training of `student` on one backbone objective. The best
/// validation checkpoint (by mean validation L) is restored at the end; with
/// no validation data the last parameters are kept. `teachers[i]` pairs with
/// `train[i]` when distillation is on. Throws DivergenceError on a
/// non-finite loss.
TrainResult train_objective(model::Model& student, const std::vector<corpus::ParallelExample>& train,
                            const std::vector<corpus::ParallelExample>& valid,
                            const ObjectiveConfig& objective, const TrainConfig& config,
                            const std::vector<TeacherTargets>* teachers, const Hooks& hooks,
                            const std::string& stage);

/// Mean objective over `data` without dropout.
LossBreakdown mean_loss(const model::Model& m, const std::vector<corpus::ParallelExample>& data,
                        const ObjectiveConfig& objective,
                        const std::vector<TeacherTargets>* teachers = nullptr);

struct TeacherPair {
  model::Model seq;   // trained on L_s only
  model::Model tree;  // trained on L_t only
};

/// Two independently initialized backbones, trained seq-only and tree-only
/// on the same data and early-stopped on their validation loss.
TeacherPair train_teachers(const corpus::DatasetSplit& data, const model::ModelConfig& model_config,
                           const TrainConfig& config, const Hooks& hooks = {},
                           TrainResult* seq_result = nullptr, TrainResult* tree_result = nullptr);

std::vector<TeacherTargets> teacher_targets(const TeacherPair& teachers,
                                            const std::vector<corpus::ParallelExample>& data);

/// Stage one: multi-task plus distillation training of a fresh backbone,
/// early-stopped on validation L_m.
model::Model train_backbone(const corpus::DatasetSplit& data, const TeacherPair& teachers,
                            const model::ModelConfig& model_config, const TrainConfig& config,
                            const Hooks& hooks = {}, TrainResult* result = nullptr);

struct SweepEntry {
  double lambda = 0.0;
  double valid_L_m = 0.0;
  TrainResult result;
};

/// Trains one backbone per lambda and keeps the one with the lowest
/// validation L_m (earlier grid entries win ties).
model::Model sweep_lambda(const corpus::DatasetSplit& data, const TeacherPair& teachers,
                          const model::ModelConfig& model_config, const TrainConfig& config,
                          const std::vector<double>& grid, const Hooks& hooks = {},
                          std::vector<SweepEntry>* entries = nullptr);

struct SelectorLabel {
  std::string id;
  Paradigm tag = Paradigm::seq;
  double bleu_seq = 0.0;
  double bleu_tree = 0.0;
  decoding::Status status_seq = decoding::Status::ok;
  decoding::Status status_tree = decoding::Status::ok;
};

/// Greedy-decodes both paradigms and tags each instance with the paradigm of
/// higher sentence BLEU; ties go to seq.
std::vector<SelectorLabel> label_instances(const std::vector<corpus::ParallelExample>& data,
                                           const model::Model& backbone,
                                           const decoding::Strategy& strategy = decoding::Strategy::greedy());

nlohmann::ordered_json labels_to_json(const std::vector<SelectorLabel>& labels);

struct SelectorConfig {
  double learning_rate = 1e-4;
  int batch_size = 16;
  int max_epochs = 60;
  int patience = 8;
  std::uint64_t seed = 0;
};

/// Stage two: trains only the selector on pooled features of the frozen
/// backbone with the margin loss (Adam, linear decay), early-stopped on
/// validation tag accuracy. Stores the result in `m.selector`.
TrainResult train_selector(model::Model& m, const std::vector<corpus::ParallelExample>& train,
                           const std::vector<SelectorLabel>& train_labels,
                           const std::vector<corpus::ParallelExample>& valid,
                           const std::vector<SelectorLabel>& valid_labels,
                           const SelectorConfig& config, const Hooks& hooks = {});

/// Share of examples whose selector argmax (ties to seq) equals the label.
double selector_accuracy(const model::Model& m, const std::vector<corpus::ParallelExample>& data,
                         const std::vector<SelectorLabel>& labels);

/// Fraction of examples whose greedy decode under `paradigm` equals the gold
/// tokens.
double exact_match_rate(const model::Model& m, Paradigm paradigm,
                        const std::vector<corpus::ParallelExample>& data, int max_length = 512);

}  // namespace unigen::training
