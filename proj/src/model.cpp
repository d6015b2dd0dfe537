#include "unigen/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "unigen/error.hpp"
#include "unigen/random.hpp"

namespace unigen::model {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double embedding_scale(int d) { return 1.0 / std::sqrt(static_cast<double>(d)); }

void init_attention(nn::AttentionParams& p, int d, std::mt19937_64& rng) {
  nn::init_linear(p.query, d, d, rng);
  nn::init_linear(p.key, d, d, rng);
  nn::init_linear(p.value, d, d, rng);
  nn::init_linear(p.output, d, d, rng);
}

void init_ffn(nn::FeedForwardParams& p, int d, int hidden, std::mt19937_64& rng) {
  nn::init_linear(p.in, hidden, d, rng);
  nn::init_linear(p.out, d, hidden, rng);
}

Matrix apply_dropout(const nn::Dropout& dropout, const Matrix& x, Matrix& mask) {
  return dropout.apply(x, mask);
}

// Projection rows of the tag's output space.
auto projection_slice(const BackboneParams& p, Paradigm paradigm) {
  return p.action_projection.topRows(paradigm == Paradigm::seq ? p.token_count
                                                                : p.action_count());
}

void check_input_id(Paradigm paradigm, int id, const BackboneParams& p) {
  const int limit = paradigm == Paradigm::seq ? p.token_count : p.action_count();
  if (id < 0 || id >= limit) {
    throw VocabularyError("id " + std::to_string(id) + " is outside the " + to_string(paradigm) +
                          " vocabulary (" + std::to_string(limit) + " entries)");
  }
}

// Single-query multi-head attention over the first `count` cached rows.
Matrix attend(const Matrix& q, const Matrix& keys, const Matrix& values, Eigen::Index count,
              int heads, const std::vector<unsigned char>* valid) {
  const Eigen::Index dh = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix context(1, q.cols());
  for (int h = 0; h < heads; ++h) {
    Matrix s = q.middleCols(h * dh, dh) * keys.topRows(count).middleCols(h * dh, dh).transpose() * scale;
    if (valid)
      for (Eigen::Index j = 0; j < count; ++j)
        if (!(*valid)[j]) s(0, j) = kNegInf;
    const double max = s.maxCoeff();
    s = (s.array() - max).exp();
    s /= s.sum();
    context.middleCols(h * dh, dh).noalias() = s * values.topRows(count).middleCols(h * dh, dh);
  }
  return context;
}

}  // namespace

std::string to_string(Paradigm p) { return p == Paradigm::seq ? "seq" : "tree"; }

Paradigm paradigm_from_string(const std::string& name) {
  if (name == "seq") return Paradigm::seq;
  if (name == "tree") return Paradigm::tree;
  throw ConfigError("unknown paradigm '" + name + "' (expected seq or tree)");
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be at least 1");
  };
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(n_enc_layers, "n_enc_layers");
  positive(n_dec_layers, "n_dec_layers");
  positive(ffn_dim, "ffn_dim");
  positive(max_source_length, "max_source_length");
  positive(max_target_length, "max_target_length");
  positive(selector_hidden, "selector_hidden");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

std::vector<std::pair<std::string, Matrix*>> BackboneParams::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  visit([&](const std::string& name, Matrix& m) { out.emplace_back(name, &m); });
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> BackboneParams::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<BackboneParams*>(this)->tensors()) out.emplace_back(name, m);
  return out;
}

BackboneParams BackboneParams::zeros_like() const {
  BackboneParams z = *this;
  z.visit([](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

std::size_t BackboneParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

std::uint64_t BackboneParams::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, m] : tensors()) {
    h = corpus::fnv1a(name, h);
    h = corpus::fnv1a(std::string_view(reinterpret_cast<const char*>(m->data()),
                                       static_cast<std::size_t>(m->size()) * sizeof(double)),
                      h);
  }
  return h;
}

bool BackboneParams::operator==(const BackboneParams& other) const {
  auto a = tensors(), b = other.tensors();
  if (token_count != other.token_count || a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first) return false;
    const Matrix& x = *a[i].second;
    const Matrix& y = *b[i].second;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(double)) != 0)
      return false;
  }
  return true;
}

BackboneParams init_backbone(const ModelConfig& config, int source_vocab_size,
                             const UnifiedVocabulary& vocab, std::uint64_t seed) {
  config.validate();
  const int d = config.d_model;
  std::mt19937_64 rng(seed);
  const double s = embedding_scale(d);
  BackboneParams p;
  p.token_count = vocab.token_count();
  nn::init_normal(p.source_embedding, source_vocab_size, d, s, rng);
  nn::init_normal(p.source_position, config.max_source_length, d, s, rng);
  p.encoder.resize(config.n_enc_layers);
  for (auto& layer : p.encoder) {
    nn::init_layer_norm(layer.ln_attn, d);
    init_attention(layer.attn, d, rng);
    nn::init_layer_norm(layer.ln_ffn, d);
    init_ffn(layer.ffn, d, config.ffn_dim, rng);
  }
  nn::init_layer_norm(p.encoder_norm, d);
  nn::init_normal(p.action_embedding, vocab.size(), d, s, rng);
  nn::init_normal(p.action_projection, vocab.size(), d, s, rng);
  nn::init_normal(p.tag_embedding, 2, d, s, rng);
  nn::init_normal(p.target_position, config.max_target_length, d, s, rng);
  p.decoder.resize(config.n_dec_layers);
  for (auto& layer : p.decoder) {
    nn::init_layer_norm(layer.ln_self, d);
    init_attention(layer.self_attn, d, rng);
    nn::init_layer_norm(layer.ln_cross, d);
    init_attention(layer.cross_attn, d, rng);
    nn::init_layer_norm(layer.ln_ffn, d);
    init_ffn(layer.ffn, d, config.ffn_dim, rng);
  }
  nn::init_layer_norm(p.decoder_norm, d);
  return p;
}

std::vector<std::pair<std::string, Matrix*>> SelectorParams::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  visit([&](const std::string& name, Matrix& m) { out.emplace_back(name, &m); });
  return out;
}

SelectorParams SelectorParams::zeros_like() const {
  SelectorParams z = *this;
  z.visit([](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

bool SelectorParams::operator==(const SelectorParams& other) const {
  return hidden.weight == other.hidden.weight && hidden.bias == other.hidden.bias &&
         output.weight == other.output.weight && output.bias == other.output.bias;
}

SelectorParams init_selector(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  SelectorParams s;
  nn::init_linear(s.hidden, config.selector_hidden, config.d_model, rng);
  nn::init_linear(s.output, 2, config.selector_hidden, rng);
  return s;
}

Encoded encode(const BackboneParams& params, const ModelConfig& config,
               const std::vector<int>& source_ids, const nn::Dropout& dropout,
               EncoderTrace* trace) {
  const int len = static_cast<int>(source_ids.size());
  if (len > config.max_source_length) {
    throw LengthError("source has " + std::to_string(len) + " positions, limit is " +
                      std::to_string(config.max_source_length));
  }
  Encoded out;
  out.valid.resize(len);
  bool any = false;
  for (int t = 0; t < len; ++t) {
    const int id = source_ids[t];
    if (id < 0 || id >= params.source_embedding.rows())
      throw VocabularyError("source id " + std::to_string(id) + " out of range");
    out.valid[t] = id != SourceVocabulary::kPad;
    any = any || out.valid[t];
  }
  if (!any) throw EmptyInputError("source has no non-padding position");

  Matrix x(len, config.d_model);
  for (int t = 0; t < len; ++t)
    x.row(t) = params.source_embedding.row(source_ids[t]) + params.source_position.row(t);
  Matrix scratch;
  x = apply_dropout(dropout, x, trace ? trace->embed_dropout : scratch);
  if (trace) {
    trace->ids = source_ids;
    trace->layers.resize(params.encoder.size());
    trace->valid = out.valid;
  }
  const nn::AttentionMask mask{false, &out.valid};
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    const auto& layer = params.encoder[l];
    auto* tl = trace ? &trace->layers[l] : nullptr;
    Matrix a = nn::layer_norm(layer.ln_attn, x, tl ? &tl->ln_attn : nullptr);
    Matrix att = nn::attention(layer.attn, config.n_heads, a, a, mask, tl ? &tl->attn : nullptr);
    x += apply_dropout(dropout, att, tl ? tl->attn_dropout : scratch);
    Matrix b = nn::layer_norm(layer.ln_ffn, x, tl ? &tl->ln_ffn : nullptr);
    Matrix f = nn::feed_forward(layer.ffn, b, tl ? &tl->ffn : nullptr);
    x += apply_dropout(dropout, f, tl ? tl->ffn_dropout : scratch);
  }
  out.states = nn::layer_norm(params.encoder_norm, x, trace ? &trace->norm : nullptr);
  return out;
}

void encode_backward(const BackboneParams& params, const EncoderTrace& trace,
                     const Matrix& d_states, BackboneParams& grad) {
  Matrix dx = nn::layer_norm_backward(params.encoder_norm, trace.norm, d_states, grad.encoder_norm);
  for (std::size_t l = params.encoder.size(); l-- > 0;) {
    const auto& layer = params.encoder[l];
    const auto& tl = trace.layers[l];
    auto& gl = grad.encoder[l];
    Matrix df = nn::dropout_backward(dx, tl.ffn_dropout);
    Matrix db = nn::feed_forward_backward(layer.ffn, tl.ffn, df, gl.ffn);
    dx += nn::layer_norm_backward(layer.ln_ffn, tl.ln_ffn, db, gl.ln_ffn);
    Matrix datt = nn::dropout_backward(dx, tl.attn_dropout);
    const int n_heads = static_cast<int>(tl.attn.probs.size());
    auto [dq, dkv] = nn::attention_backward(layer.attn, n_heads, tl.attn, datt, gl.attn);
    dq += dkv;
    dx += nn::layer_norm_backward(layer.ln_attn, tl.ln_attn, dq, gl.ln_attn);
  }
  dx = nn::dropout_backward(dx, trace.embed_dropout);
  for (std::size_t t = 0; t < trace.ids.size(); ++t) {
    grad.source_embedding.row(trace.ids[t]) += dx.row(t);
    grad.source_position.row(t) += dx.row(t);
  }
}

Vector pool(const Encoded& encoded) {
  Vector sum = Vector::Zero(encoded.states.cols());
  int count = 0;
  for (std::size_t t = 0; t < encoded.valid.size(); ++t) {
    if (!encoded.valid[t]) continue;
    sum += encoded.states.row(t).transpose();
    ++count;
  }
  if (count == 0) throw EmptyInputError("pool: no non-padding position");
  return sum / count;
}

std::array<double, 2> selector_logits(const Vector& h, const SelectorParams& s) {
  if (s.hidden.weight.cols() != h.size() || s.hidden.bias.cols() != s.hidden.weight.rows() ||
      s.output.weight.rows() != 2 || s.output.weight.cols() != s.hidden.weight.rows() ||
      s.output.bias.cols() != 2) {
    throw DimensionError("selector expects a " + std::to_string(s.hidden.weight.cols()) +
                         "-dimensional input, got " + std::to_string(h.size()));
  }
  Matrix hidden = nn::linear(s.hidden, Matrix(h.transpose())).cwiseMax(0.0);
  Matrix z = nn::linear(s.output, hidden);
  return {z(0, 0), z(0, 1)};
}

std::array<double, 2> select(const Vector& h, const SelectorParams& selector) {
  auto z = selector_logits(h, selector);
  const double max = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - max), e1 = std::exp(z[1] - max);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

Matrix decode_logits(Paradigm paradigm, const std::vector<int>& prefix, const Encoded& encoded,
                     const BackboneParams& params, const ModelConfig& config,
                     const nn::Dropout& dropout, DecoderTrace* trace) {
  const int len = static_cast<int>(prefix.size()) + 1;
  if (len > config.max_target_length) {
    throw LengthError("decoder input has " + std::to_string(len) + " positions, limit is " +
                      std::to_string(config.max_target_length));
  }
  for (int id : prefix) check_input_id(paradigm, id, params);

  Matrix x(len, config.d_model);
  x.row(0) = params.tag_embedding.row(static_cast<int>(paradigm)) + params.target_position.row(0);
  for (int t = 1; t < len; ++t)
    x.row(t) = params.action_embedding.row(prefix[t - 1]) + params.target_position.row(t);
  Matrix scratch;
  x = apply_dropout(dropout, x, trace ? trace->embed_dropout : scratch);
  if (trace) {
    trace->paradigm = paradigm;
    trace->inputs = prefix;
    trace->layers.resize(params.decoder.size());
  }
  const nn::AttentionMask causal{true, nullptr};
  const nn::AttentionMask cross{false, &encoded.valid};
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    const auto& layer = params.decoder[l];
    auto* tl = trace ? &trace->layers[l] : nullptr;
    Matrix a = nn::layer_norm(layer.ln_self, x, tl ? &tl->ln_self : nullptr);
    Matrix sa = nn::attention(layer.self_attn, config.n_heads, a, a, causal, tl ? &tl->self_attn : nullptr);
    x += apply_dropout(dropout, sa, tl ? tl->self_dropout : scratch);
    Matrix b = nn::layer_norm(layer.ln_cross, x, tl ? &tl->ln_cross : nullptr);
    Matrix ca = nn::attention(layer.cross_attn, config.n_heads, b, encoded.states, cross,
                              tl ? &tl->cross_attn : nullptr);
    x += apply_dropout(dropout, ca, tl ? tl->cross_dropout : scratch);
    Matrix c = nn::layer_norm(layer.ln_ffn, x, tl ? &tl->ln_ffn : nullptr);
    Matrix f = nn::feed_forward(layer.ffn, c, tl ? &tl->ffn : nullptr);
    x += apply_dropout(dropout, f, tl ? tl->ffn_dropout : scratch);
  }
  Matrix hidden = nn::layer_norm(params.decoder_norm, x, trace ? &trace->norm : nullptr);
  Matrix logits = hidden * projection_slice(params, paradigm).transpose();
  if (trace) trace->hidden = std::move(hidden);
  return logits;
}

Matrix decode_backward(const BackboneParams& params, const DecoderTrace& trace,
                       const Encoded& encoded, const Matrix& d_logits, BackboneParams& grad) {
  const int width = trace.paradigm == Paradigm::seq ? params.token_count : params.action_count();
  grad.action_projection.topRows(width).noalias() += d_logits.transpose() * trace.hidden;
  Matrix dh = d_logits * projection_slice(params, trace.paradigm);
  Matrix dx = nn::layer_norm_backward(params.decoder_norm, trace.norm, dh, grad.decoder_norm);
  Matrix d_states = Matrix::Zero(encoded.states.rows(), encoded.states.cols());
  for (std::size_t l = params.decoder.size(); l-- > 0;) {
    const auto& layer = params.decoder[l];
    const auto& tl = trace.layers[l];
    auto& gl = grad.decoder[l];
    Matrix df = nn::dropout_backward(dx, tl.ffn_dropout);
    Matrix dc = nn::feed_forward_backward(layer.ffn, tl.ffn, df, gl.ffn);
    dx += nn::layer_norm_backward(layer.ln_ffn, tl.ln_ffn, dc, gl.ln_ffn);

    Matrix dca = nn::dropout_backward(dx, tl.cross_dropout);
    const int heads = static_cast<int>(tl.cross_attn.probs.size());
    auto [dq_cross, dkv_cross] = nn::attention_backward(layer.cross_attn, heads, tl.cross_attn, dca, gl.cross_attn);
    d_states += dkv_cross;
    dx += nn::layer_norm_backward(layer.ln_cross, tl.ln_cross, dq_cross, gl.ln_cross);

    Matrix dsa = nn::dropout_backward(dx, tl.self_dropout);
    auto [dq, dkv] = nn::attention_backward(layer.self_attn, heads, tl.self_attn, dsa, gl.self_attn);
    dq += dkv;
    dx += nn::layer_norm_backward(layer.ln_self, tl.ln_self, dq, gl.ln_self);
  }
  dx = nn::dropout_backward(dx, trace.embed_dropout);
  grad.tag_embedding.row(static_cast<int>(trace.paradigm)) += dx.row(0);
  grad.target_position.row(0) += dx.row(0);
  for (std::size_t t = 0; t < trace.inputs.size(); ++t) {
    grad.action_embedding.row(trace.inputs[t]) += dx.row(t + 1);
    grad.target_position.row(t + 1) += dx.row(t + 1);
  }
  return d_states;
}

std::vector<int> seq_targets(const corpus::ParallelExample& ex, const UnifiedVocabulary& vocab) {
  std::vector<int> out;
  out.reserve(ex.n() + 1);
  for (const auto& t : ex.target_tokens) out.push_back(vocab.token_id(t));
  out.push_back(UnifiedVocabulary::kEos);
  return out;
}

std::vector<int> tree_targets(const corpus::ParallelExample& ex, const UnifiedVocabulary& vocab) {
  std::vector<int> out;
  out.reserve(ex.m());
  for (const auto& a : ex.target_actions) out.push_back(action_id(a, vocab));
  return out;
}

std::vector<int> targets(Paradigm paradigm, const corpus::ParallelExample& ex,
                         const UnifiedVocabulary& vocab) {
  return paradigm == Paradigm::seq ? seq_targets(ex, vocab) : tree_targets(ex, vocab);
}

Model Model::create(const ModelConfig& config, const Grammar& grammar, SourceVocabulary source_vocab) {
  Model m{config, grammar, {}, {}, {}, {}};
  m.vocab = UnifiedVocabulary(grammar);
  m.source_vocab = std::move(source_vocab);
  m.backbone = init_backbone(config, m.source_vocab.size(), m.vocab, mix_seed(config.seed, 0));
  return m;
}

Encoded Model::encode(const std::vector<std::string>& words) const {
  return model::encode(backbone, config, source_ids(words));
}

SourceVocabulary build_source_vocabulary(const std::vector<corpus::ParallelExample>& examples) {
  std::vector<std::string> words;
  for (const auto& ex : examples) words.insert(words.end(), ex.source.begin(), ex.source.end());
  return SourceVocabulary(std::move(words));
}

Matrix teacher_forced_distributions(const Model& model, Paradigm paradigm,
                                    const corpus::ParallelExample& ex) {
  Encoded enc = model.encode(ex.source);
  std::vector<int> tgt = targets(paradigm, ex, model.vocab);
  tgt.pop_back();
  Matrix logp = nn::log_softmax_rows(decode_logits(paradigm, tgt, enc, model.backbone, model.config));
  return logp.array().exp();
}

IncrementalDecoder::IncrementalDecoder(const BackboneParams& params, const ModelConfig& config,
                                       Paradigm paradigm, const Encoded& encoded)
    : params_(&params), config_(&config), paradigm_(paradigm) {
  auto cross = std::make_shared<CrossCache>();
  cross->valid = encoded.valid;
  for (const auto& layer : params.decoder) {
    cross->keys.push_back(nn::linear(layer.cross_attn.key, encoded.states));
    cross->values.push_back(nn::linear(layer.cross_attn.value, encoded.states));
  }
  cross_ = std::move(cross);
  layers_.resize(params.decoder.size());
  advance(params.tag_embedding.row(static_cast<int>(paradigm)) + params.target_position.row(0));
}

void IncrementalDecoder::feed(int id) {
  check_input_id(paradigm_, id, *params_);
  if (length_ >= config_->max_target_length) {
    throw LengthError("decoder input exceeds " + std::to_string(config_->max_target_length) +
                      " positions");
  }
  advance(params_->action_embedding.row(id) + params_->target_position.row(length_));
}

void IncrementalDecoder::advance(const RowVector& input) {
  const int heads = config_->n_heads;
  Matrix x = input;
  for (std::size_t l = 0; l < params_->decoder.size(); ++l) {
    const auto& layer = params_->decoder[l];
    auto& cache = layers_[l];
    if (cache.keys.rows() <= length_) {
      const Eigen::Index cap = std::min<Eigen::Index>(
          std::max<Eigen::Index>(16, 2 * cache.keys.rows()), config_->max_target_length);
      cache.keys.conservativeResize(cap, x.cols());
      cache.values.conservativeResize(cap, x.cols());
    }
    Matrix a = nn::layer_norm(layer.ln_self, x, nullptr);
    cache.keys.row(length_) = nn::linear(layer.self_attn.key, a);
    cache.values.row(length_) = nn::linear(layer.self_attn.value, a);
    Matrix q = nn::linear(layer.self_attn.query, a);
    x += nn::linear(layer.self_attn.output,
                    attend(q, cache.keys, cache.values, length_ + 1, heads, nullptr));
    Matrix b = nn::layer_norm(layer.ln_cross, x, nullptr);
    Matrix qc = nn::linear(layer.cross_attn.query, b);
    const Matrix& ck = cross_->keys[l];
    x += nn::linear(layer.cross_attn.output,
                    attend(qc, ck, cross_->values[l], ck.rows(), heads, &cross_->valid));
    Matrix c = nn::layer_norm(layer.ln_ffn, x, nullptr);
    x += nn::feed_forward(layer.ffn, c, nullptr);
  }
  Matrix h = nn::layer_norm(params_->decoder_norm, x, nullptr);
  logits_ = h * projection_slice(*params_, paradigm_).transpose();
  ++length_;
}

}  // namespace unigen::model
