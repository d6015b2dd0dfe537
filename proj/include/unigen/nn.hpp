#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

/// Dense building blocks with explicit forward caches and backward passes.
/// Sequences are row-major (positions x features). All backward functions
/// accumulate into a gradient struct of the same type as the parameters.
namespace unigen::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct LinearParams {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

struct LayerNormParams {
  Matrix gain;  // 1 x d
  Matrix bias;  // 1 x d

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

struct AttentionParams {
  LinearParams query, key, value, output;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    query.visit(prefix + ".query", f);
    key.visit(prefix + ".key", f);
    value.visit(prefix + ".value", f);
    output.visit(prefix + ".output", f);
  }
};

struct FeedForwardParams {
  LinearParams in, out;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    in.visit(prefix + ".in", f);
    out.visit(prefix + ".out", f);
  }
};

Matrix linear(const LinearParams& p, const Matrix& x);
/// Returns dx.
Matrix linear_backward(const LinearParams& p, const Matrix& x, const Matrix& dy,
                       LinearParams& grad);

struct LayerNormCache {
  Matrix normalized;
  Vector inv_std;
};
Matrix layer_norm(const LayerNormParams& p, const Matrix& x, LayerNormCache* cache);
Matrix layer_norm_backward(const LayerNormParams& p, const LayerNormCache& cache,
                           const Matrix& dy, LayerNormParams& grad);

/// Which keys each query may attend to.
struct AttentionMask {
  bool causal = false;
  const std::vector<unsigned char>* key_valid = nullptr;  // null: all valid
};

struct AttentionCache {
  Matrix query_input, key_input;
  Matrix q, k, v, context;
  std::vector<Matrix> probs;  // one per head
};

Matrix attention(const AttentionParams& p, int heads, const Matrix& query_input,
                 const Matrix& key_input, const AttentionMask& mask, AttentionCache* cache);
/// Returns {d query_input, d key_input}.
std::pair<Matrix, Matrix> attention_backward(const AttentionParams& p, int heads,
                                             const AttentionCache& cache, const Matrix& dy,
                                             AttentionParams& grad);

struct FeedForwardCache {
  Matrix input, hidden;  // hidden is post-ReLU
};
Matrix feed_forward(const FeedForwardParams& p, const Matrix& x, FeedForwardCache* cache);
Matrix feed_forward_backward(const FeedForwardParams& p, const FeedForwardCache& cache,
                             const Matrix& dy, FeedForwardParams& grad);

/// Inverted dropout. A null engine or zero rate is the identity.
class Dropout {
 public:
  Dropout() = default;
  Dropout(double rate, std::mt19937_64* rng) : rate_(rate), rng_(rng) {}
  bool active() const { return rng_ != nullptr && rate_ > 0.0; }
  /// Applies dropout; `mask` receives the scaling mask (empty when inactive).
  Matrix apply(const Matrix& x, Matrix& mask) const;

 private:
  double rate_ = 0.0;
  std::mt19937_64* rng_ = nullptr;
};

inline Matrix dropout_backward(const Matrix& dy, const Matrix& mask) {
  return mask.size() == 0 ? dy : Matrix(dy.cwiseProduct(mask));
}

/// Row-wise log-softmax.
Matrix log_softmax_rows(const Matrix& logits);
double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row);

void init_linear(LinearParams& p, int out, int in, std::mt19937_64& rng);
void init_layer_norm(LayerNormParams& p, int d);
void init_normal(Matrix& m, int rows, int cols, double stddev, std::mt19937_64& rng);

}  // namespace unigen::nn
