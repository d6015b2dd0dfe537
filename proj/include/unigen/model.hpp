#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unigen/corpus.hpp"
#include "unigen/grammar.hpp"
#include "unigen/nn.hpp"
#include "unigen/vocabulary.hpp"

namespace unigen::model {

using nn::Matrix;
using nn::Vector;
using RowVector = Eigen::RowVectorXd;

enum class Paradigm { seq = 0, tree = 1 };
std::string to_string(Paradigm p);
Paradigm paradigm_from_string(const std::string& name);

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int ffn_dim = 256;
  double dropout = 0.1;
  int max_source_length = 128;
  int max_target_length = 512;
  int selector_hidden = 512;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct EncoderLayerParams {
  nn::LayerNormParams ln_attn, ln_ffn;
  nn::AttentionParams attn;
  nn::FeedForwardParams ffn;

  template <class F>
  void visit(const std::string& p, F&& f) {
    ln_attn.visit(p + ".ln_attn", f);
    attn.visit(p + ".attn", f);
    ln_ffn.visit(p + ".ln_ffn", f);
    ffn.visit(p + ".ffn", f);
  }
};

struct DecoderLayerParams {
  nn::LayerNormParams ln_self, ln_cross, ln_ffn;
  nn::AttentionParams self_attn, cross_attn;
  nn::FeedForwardParams ffn;

  template <class F>
  void visit(const std::string& p, F&& f) {
    ln_self.visit(p + ".ln_self", f);
    self_attn.visit(p + ".self_attn", f);
    ln_cross.visit(p + ".ln_cross", f);
    cross_attn.visit(p + ".cross_attn", f);
    ln_ffn.visit(p + ".ln_ffn", f);
    ffn.visit(p + ".ffn", f);
  }
};

/// Encoder-decoder weights. The action embedding and the action projection
/// are |V_a| x d_model; their first token_count rows are the token embedding
/// and the token prediction layer, read through block views so that both
/// paradigms train the same storage.
struct BackboneParams {
  int token_count = 0;

  Matrix source_embedding;  // |V_src| x d
  Matrix source_position;   // max_source_length x d
  std::vector<EncoderLayerParams> encoder;
  nn::LayerNormParams encoder_norm;

  Matrix action_embedding;   // |V_a| x d
  Matrix action_projection;  // |V_a| x d
  Matrix tag_embedding;      // 2 x d: row 0 seq, row 1 tree
  Matrix target_position;    // max_target_length x d
  std::vector<DecoderLayerParams> decoder;
  nn::LayerNormParams decoder_norm;

  auto token_embedding() { return action_embedding.topRows(token_count); }
  auto token_embedding() const { return action_embedding.topRows(token_count); }
  auto token_projection() { return action_projection.topRows(token_count); }
  auto token_projection() const { return action_projection.topRows(token_count); }
  int action_count() const { return static_cast<int>(action_embedding.rows()); }

  template <class F>
  void visit(F&& f) {
    f("source_embedding", source_embedding);
    f("source_position", source_position);
    for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].visit("encoder." + std::to_string(i), f);
    encoder_norm.visit("encoder_norm", f);
    f("action_embedding", action_embedding);
    f("action_projection", action_projection);
    f("tag_embedding", tag_embedding);
    f("target_position", target_position);
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].visit("decoder." + std::to_string(i), f);
    decoder_norm.visit("decoder_norm", f);
  }
  /// Named views of every tensor, in a fixed order.
  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;

  /// Same shapes, all zeros (gradient accumulator).
  BackboneParams zeros_like() const;
  std::size_t parameter_count() const;
  /// FNV-1a over every tensor's bytes in visit order.
  std::uint64_t fingerprint() const;
  bool operator==(const BackboneParams& other) const;
};

BackboneParams init_backbone(const ModelConfig& config, int source_vocab_size,
                             const UnifiedVocabulary& vocab, std::uint64_t seed);

struct SelectorParams {
  nn::LinearParams hidden;  // W_1, b_1
  nn::LinearParams output;  // W_2, b_2

  template <class F>
  void visit(F&& f) {
    hidden.visit("selector.hidden", f);
    output.visit("selector.output", f);
  }
  std::vector<std::pair<std::string, Matrix*>> tensors();
  SelectorParams zeros_like() const;
  bool operator==(const SelectorParams& other) const;
};

SelectorParams init_selector(const ModelConfig& config, std::uint64_t seed);

/// Encoder output: one row per source position, with padding flagged.
struct Encoded {
  Matrix states;
  std::vector<unsigned char> valid;
};

/// Per-layer forward record kept for the backward pass.
struct EncoderTrace {
  std::vector<int> ids;
  Matrix embed_dropout;
  struct Layer {
    nn::LayerNormCache ln_attn, ln_ffn;
    nn::AttentionCache attn;
    nn::FeedForwardCache ffn;
    Matrix attn_dropout, ffn_dropout;
  };
  std::vector<Layer> layers;
  nn::LayerNormCache norm;
  std::vector<unsigned char> valid;
};

struct DecoderTrace {
  Paradigm paradigm = Paradigm::seq;
  std::vector<int> inputs;  // ids at positions 1.. (position 0 is the tag)
  Matrix embed_dropout;
  struct Layer {
    nn::LayerNormCache ln_self, ln_cross, ln_ffn;
    nn::AttentionCache self_attn, cross_attn;
    nn::FeedForwardCache ffn;
    Matrix self_dropout, cross_dropout, ffn_dropout;
  };
  std::vector<Layer> layers;
  nn::LayerNormCache norm;
  Matrix hidden;  // final normalized states
};

/// Throws LengthError past max_source_length and EmptyInputError on an empty
/// input. Id 0 is padding.
Encoded encode(const BackboneParams& params, const ModelConfig& config,
               const std::vector<int>& source_ids, const nn::Dropout& dropout = {},
               EncoderTrace* trace = nullptr);
void encode_backward(const BackboneParams& params, const EncoderTrace& trace,
                     const Matrix& d_states, BackboneParams& grad);

/// Mean of the non-pad encoder states. Throws EmptyInputError.
Vector pool(const Encoded& encoded);

/// Selector logits W_2 ReLU(W_1 h + b_1) + b_2. Throws DimensionError.
std::array<double, 2> selector_logits(const Vector& h, const SelectorParams& selector);
/// Softmax of the selector logits: {p_seq, p_tree}.
std::array<double, 2> select(const Vector& h, const SelectorParams& selector);

/// Logits for positions 0..prefix.size(): position 0 reads the tag embedding,
/// position t > 0 reads prefix[t-1]. Rows are |V_t| wide under seq and |V_a|
/// wide under tree. Throws VocabularyError on a rule id (or any id outside
/// the tag's space) and LengthError past max_target_length positions.
Matrix decode_logits(Paradigm paradigm, const std::vector<int>& prefix, const Encoded& encoded,
                     const BackboneParams& params, const ModelConfig& config,
                     const nn::Dropout& dropout = {}, DecoderTrace* trace = nullptr);
/// Accumulates parameter gradients; returns the gradient w.r.t. the encoder
/// states.
Matrix decode_backward(const BackboneParams& params, const DecoderTrace& trace,
                       const Encoded& encoded, const Matrix& d_logits, BackboneParams& grad);

/// Gold next-symbol ids. Seq: token ids followed by end-of-sequence (n + 1).
/// Tree: action ids (m).
std::vector<int> seq_targets(const corpus::ParallelExample& ex, const UnifiedVocabulary& vocab);
std::vector<int> tree_targets(const corpus::ParallelExample& ex, const UnifiedVocabulary& vocab);
std::vector<int> targets(Paradigm paradigm, const corpus::ParallelExample& ex,
                         const UnifiedVocabulary& vocab);

/// Everything needed to run a trained model.
struct Model {
  ModelConfig config;
  Grammar grammar;
  UnifiedVocabulary vocab;
  SourceVocabulary source_vocab;
  BackboneParams backbone;
  std::optional<SelectorParams> selector;

  static Model create(const ModelConfig& config, const Grammar& grammar,
                      SourceVocabulary source_vocab);
  std::vector<int> source_ids(const std::vector<std::string>& words) const {
    return source_vocab.encode(words);
  }
  Encoded encode(const std::vector<std::string>& words) const;
};

/// Source vocabulary over every word of the training sources.
SourceVocabulary build_source_vocabulary(const std::vector<corpus::ParallelExample>& examples);

/// Softmax of the teacher-forced logits at every gold prefix: n + 1 rows
/// (the last predicts end-of-sequence) under seq, m rows under tree.
Matrix teacher_forced_distributions(const Model& model, Paradigm paradigm,
                                    const corpus::ParallelExample& ex);

/// Cached-key/value decoder for inference. Construction feeds the tag;
/// logits() is the distribution head at the last fed position. Copies are
/// cheap to branch for beam search (cross-attention keys are shared).
class IncrementalDecoder {
 public:
  IncrementalDecoder(const BackboneParams& params, const ModelConfig& config, Paradigm paradigm,
                     const Encoded& encoded);

  const RowVector& logits() const { return logits_; }
  /// Appends `id` as the next input. Throws LengthError past
  /// max_target_length positions.
  void feed(int id);
  int positions() const { return length_; }
  Paradigm paradigm() const { return paradigm_; }

 private:
  struct LayerCache {
    Matrix keys, values;  // capacity rows; first length_ are live
  };
  struct CrossCache {
    std::vector<Matrix> keys, values;
    std::vector<unsigned char> valid;
  };
  void advance(const RowVector& input);

  const BackboneParams* params_;
  const ModelConfig* config_;
  Paradigm paradigm_;
  std::shared_ptr<const CrossCache> cross_;
  std::vector<LayerCache> layers_;
  int length_ = 0;
  RowVector logits_;
};

}  // namespace unigen::model
