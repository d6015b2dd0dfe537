#include "unigen/nn.hpp"

#include <cmath>
#include <limits>

#include "unigen/random.hpp"

namespace unigen::nn {

namespace {
constexpr double kLayerNormEps = 1e-5;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void softmax_rows_in_place(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    const double max = row.maxCoeff();
    row = (row.array() - max).exp();
    row /= row.sum();
  }
}
}  // namespace

Matrix linear(const LinearParams& p, const Matrix& x) {
  Matrix y = x * p.weight.transpose();
  y.rowwise() += p.bias.row(0);
  return y;
}

Matrix linear_backward(const LinearParams& p, const Matrix& x, const Matrix& dy,
                       LinearParams& grad) {
  grad.weight.noalias() += dy.transpose() * x;
  grad.bias += dy.colwise().sum();
  return dy * p.weight;
}

Matrix layer_norm(const LayerNormParams& p, const Matrix& x, LayerNormCache* cache) {
  const auto d = static_cast<double>(x.cols());
  Matrix centered = x.colwise() - x.rowwise().mean();
  Vector inv_std = ((centered.array().square().rowwise().sum() / d) + kLayerNormEps).rsqrt();
  Matrix normalized = centered.array().colwise() * inv_std.array();
  Matrix y = normalized.array().rowwise() * p.gain.row(0).array();
  y.rowwise() += p.bias.row(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix layer_norm_backward(const LayerNormParams& p, const LayerNormCache& cache,
                           const Matrix& dy, LayerNormParams& grad) {
  const auto& xhat = cache.normalized;
  grad.gain += dy.cwiseProduct(xhat).colwise().sum();
  grad.bias += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * p.gain.row(0).array();
  Vector mean_dxhat = dxhat.rowwise().mean();
  Vector mean_dxhat_xhat = dxhat.cwiseProduct(xhat).rowwise().mean();
  Matrix dx = dxhat;
  dx.colwise() -= mean_dxhat;
  dx.array() -= xhat.array().colwise() * mean_dxhat_xhat.array();
  return dx.array().colwise() * cache.inv_std.array();
}

Matrix attention(const AttentionParams& p, int heads, const Matrix& query_input,
                 const Matrix& key_input, const AttentionMask& mask, AttentionCache* cache) {
  Matrix q = linear(p.query, query_input);
  Matrix k = linear(p.key, key_input);
  Matrix v = linear(p.value, key_input);
  const Eigen::Index tq = q.rows(), tk = k.rows();
  const Eigen::Index dh = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix context(tq, q.cols());
  if (cache) cache->probs.resize(heads);
  for (int h = 0; h < heads; ++h) {
    Matrix s = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
    for (Eigen::Index i = 0; i < tq; ++i)
      for (Eigen::Index j = 0; j < tk; ++j)
        if ((mask.causal && j > i) || (mask.key_valid && !(*mask.key_valid)[j])) s(i, j) = kNegInf;
    softmax_rows_in_place(s);
    context.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    if (cache) cache->probs[h] = std::move(s);
  }
  Matrix y = linear(p.output, context);
  if (cache) {
    cache->query_input = query_input;
    cache->key_input = key_input;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->context = std::move(context);
  }
  return y;
}

std::pair<Matrix, Matrix> attention_backward(const AttentionParams& p, int heads,
                                             const AttentionCache& c, const Matrix& dy,
                                             AttentionParams& grad) {
  Matrix dcontext = linear_backward(p.output, c.context, dy, grad.output);
  const Eigen::Index dh = c.q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dq = Matrix::Zero(c.q.rows(), c.q.cols());
  Matrix dk = Matrix::Zero(c.k.rows(), c.k.cols());
  Matrix dv = Matrix::Zero(c.v.rows(), c.v.cols());
  for (int h = 0; h < heads; ++h) {
    const Matrix& prob = c.probs[h];
    auto dctx = dcontext.middleCols(h * dh, dh);
    Matrix dprob = dctx * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() += prob.transpose() * dctx;
    Vector row_dot = prob.cwiseProduct(dprob).rowwise().sum();
    Matrix ds = prob.cwiseProduct(dprob.colwise() - row_dot) * scale;
    dq.middleCols(h * dh, dh).noalias() += ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() += ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  Matrix dquery = linear_backward(p.query, c.query_input, dq, grad.query);
  Matrix dkey = linear_backward(p.key, c.key_input, dk, grad.key);
  dkey += linear_backward(p.value, c.key_input, dv, grad.value);
  return {std::move(dquery), std::move(dkey)};
}

Matrix feed_forward(const FeedForwardParams& p, const Matrix& x, FeedForwardCache* cache) {
  Matrix hidden = linear(p.in, x).cwiseMax(0.0);
  Matrix y = linear(p.out, hidden);
  if (cache) {
    cache->input = x;
    cache->hidden = std::move(hidden);
  }
  return y;
}

Matrix feed_forward_backward(const FeedForwardParams& p, const FeedForwardCache& c,
                             const Matrix& dy, FeedForwardParams& grad) {
  Matrix dhidden = linear_backward(p.out, c.hidden, dy, grad.out);
  dhidden = (c.hidden.array() > 0.0).select(dhidden, 0.0);
  return linear_backward(p.in, c.input, dhidden, grad.in);
}

Matrix Dropout::apply(const Matrix& x, Matrix& mask) const {
  if (!active()) {
    mask.resize(0, 0);
    return x;
  }
  mask.resize(x.rows(), x.cols());
  const double keep = 1.0 / (1.0 - rate_);
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = uniform_real(*rng_) < rate_ ? 0.0 : keep;
  return x.cwiseProduct(mask);
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double max = row.maxCoeff();
  if (!std::isfinite(max)) return max;
  return max + std::log((row.array() - max).exp().sum());
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    out.row(i) = logits.row(i).array() - log_sum_exp(logits.row(i));
  return out;
}

void init_normal(Matrix& m, int rows, int cols, double stddev, std::mt19937_64& rng) {
  m.resize(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * standard_normal(rng);
}

void init_linear(LinearParams& p, int out, int in, std::mt19937_64& rng) {
  init_normal(p.weight, out, in, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  p.bias = Matrix::Zero(1, out);
}

void init_layer_norm(LayerNormParams& p, int d) {
  p.gain = Matrix::Ones(1, d);
  p.bias = Matrix::Zero(1, d);
}

}  // namespace unigen::nn
