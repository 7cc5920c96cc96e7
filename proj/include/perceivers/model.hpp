#pragma once

// The multi-scale cross-attention network: token + learned position
// embedding over m context slots, a cascade of cross-attention blocks whose
// query stream starts from the final n embedded slots, a causal latent
// self-attention stack over those n slots, and a vocabulary head.
//
// Every block is pre-LayerNorm with residual connections and a GELU
// feed-forward of width ffn_multiplier * d_model. Projections carry no bias.
// Cross block k attends under
//   final_block_causal(n, m) & query_padding & scale_mask(window_k)
// and re-derives keys/values from the embedded context (its own kv norm);
// only the query stream cascades from block to block.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "perceivers/error.hpp"
#include "perceivers/masking.hpp"
#include "perceivers/midi_io.hpp"
#include "perceivers/segmentation.hpp"
#include "perceivers/tensor.hpp"

namespace perceivers {

struct ModelConfig {
  int vocab_size = vocab::kSize;
  int d_model = 32;
  int n_heads = 4;
  int d_head = 8;
  int n_self_layers = 2;
  std::vector<int> cross_windows = {0, 8};  // one entry per cross block; 0 = full context
  int m = 16;
  int n = 4;
  int ffn_multiplier = 4;
  double dropout = 0.0;
  std::uint64_t seed = 1;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  void validate() const {
    if (vocab_size < 1) throw InvalidArgument("vocab_size must be positive");
    if (d_model < 1 || n_heads < 1 || d_head < 1) throw InvalidArgument("dimensions must be positive");
    if (d_model != n_heads * d_head) throw InvalidArgument("d_model must equal n_heads * d_head");
    if (n_self_layers < 0) throw InvalidArgument("n_self_layers must be >= 0");
    if (cross_windows.empty()) throw InvalidArgument("at least one cross-attention block required");
    if (n < 1 || n > m) throw InvalidArgument("model requires 1 <= n <= m");
    if (ffn_multiplier < 1) throw InvalidArgument("ffn_multiplier must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("dropout must be in [0, 1)");
    for (int w : cross_windows)
      if (w != 0 && (w < n || w > m))
        throw InvalidArgument("cross window must be 0 (full) or within [n, m]");
  }

  /// 1024-wide, 24 self layers, 16 x 64 heads, cascade [full, last 1024], 32768 context.
  static ModelConfig full_scale() {
    ModelConfig c;
    c.d_model = 1024;
    c.n_heads = 16;
    c.d_head = 64;
    c.n_self_layers = 24;
    c.cross_windows = {0, 1024};
    c.m = 32768;
    c.n = 1024;
    return c;
  }
};

/// Closed-form parameter count; allocates nothing.
inline std::int64_t count_params(const ModelConfig& c) {
  c.validate();
  const std::int64_t d = c.d_model, v = c.vocab_size, h = std::int64_t(c.ffn_multiplier) * d;
  const std::int64_t attention = 4 * d * d;
  const std::int64_t ffn = 2 * d * h;
  const std::int64_t norm = 2 * d;
  const std::int64_t cross = attention + ffn + 3 * norm;
  const std::int64_t self = attention + ffn + 2 * norm;
  return v * d + std::int64_t(c.m) * d + std::int64_t(c.cross_windows.size()) * cross +
         std::int64_t(c.n_self_layers) * self + norm + d * v;
}

struct NormSlot {
  std::size_t gain = 0;
  std::size_t bias = 0;
};

struct BlockSlots {
  NormSlot attn_norm;
  NormSlot kv_norm;  // cross blocks only
  std::size_t wq = 0, wk = 0, wv = 0, wo = 0;
  NormSlot ffn_norm;
  std::size_t w1 = 0, w2 = 0;
};

struct TensorSlot {
  std::string name;
  int rows;
  int cols;
  std::size_t offset;
};

/// Offsets of every tensor inside the flat parameter blob.
class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& c) {
    c.validate();
    const int d = c.d_model, h = c.ffn_multiplier * c.d_model;
    tok_emb = add("tok_emb", c.vocab_size, d);
    pos_emb = add("pos_emb", c.m, d);
    auto block = [&](const std::string& p, bool cross) {
      BlockSlots b;
      b.attn_norm = norm(p + (cross ? ".q_norm" : ".attn_norm"), d);
      if (cross) b.kv_norm = norm(p + ".kv_norm", d);
      b.wq = add(p + ".wq", d, d);
      b.wk = add(p + ".wk", d, d);
      b.wv = add(p + ".wv", d, d);
      b.wo = add(p + ".wo", d, d);
      b.ffn_norm = norm(p + ".ffn_norm", d);
      b.w1 = add(p + ".w1", d, h);
      b.w2 = add(p + ".w2", h, d);
      return b;
    };
    for (std::size_t k = 0; k < c.cross_windows.size(); ++k)
      cross.push_back(block("cross" + std::to_string(k), true));
    for (int k = 0; k < c.n_self_layers; ++k) self.push_back(block("self" + std::to_string(k), false));
    out_norm = norm("out_norm", d);
    w_out = add("w_out", d, c.vocab_size);
  }

  std::size_t tok_emb = 0, pos_emb = 0;
  std::vector<BlockSlots> cross, self;
  NormSlot out_norm;
  std::size_t w_out = 0;
  std::size_t total = 0;
  std::vector<TensorSlot> tensors;

 private:
  std::size_t add(const std::string& name, int rows, int cols) {
    std::size_t at = total;
    tensors.push_back({name, rows, cols, at});
    total += std::size_t(rows) * cols;
    return at;
  }
  NormSlot norm(const std::string& name, int d) {
    return {add(name + ".gain", 1, d), add(name + ".bias", 1, d)};
  }
};

/// All learnable weights as one flat blob plus its layout.
template <class T>
struct Parameters {
  explicit Parameters(ModelConfig c) : config(std::move(c)), layout(config), values(layout.total, T(0)) {}

  ModelConfig config;
  ParamLayout layout;
  std::vector<T> values;

  MatrixView<const T> mat(std::size_t off, int rows, int cols) const {
    return {values.data() + off, rows, cols};
  }
  MatrixView<T> mat(std::size_t off, int rows, int cols) {
    return {values.data() + off, rows, cols};
  }
  std::span<const T> vec(std::size_t off, int len) const { return {values.data() + off, std::size_t(len)}; }
  std::span<T> vec(std::size_t off, int len) { return {values.data() + off, std::size_t(len)}; }

  void zero() { std::fill(values.begin(), values.end(), T(0)); }
};

enum class HeadInit { Zero, Random };

/// Seeded from config.seed. With HeadInit::Zero the vocabulary head starts at
/// zero, so the initial prediction is uniform over the vocabulary.
template <class T = double>
Parameters<T> init_parameters(const ModelConfig& c, HeadInit head = HeadInit::Zero) {
  Parameters<T> p(c);
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](std::size_t off, std::size_t count, double stddev) {
    for (std::size_t k = 0; k < count; ++k) p.values[off + k] = T(normal(rng) * stddev);
  };
  auto ones = [&](NormSlot s) {
    for (int k = 0; k < c.d_model; ++k) p.values[s.gain + k] = T(1);
  };
  const int d = c.d_model, h = c.ffn_multiplier * d;
  const double depth = 2.0 * double(c.cross_windows.size() + c.n_self_layers);
  fill(p.layout.tok_emb, std::size_t(c.vocab_size) * d, 1.0 / std::sqrt(double(d)));
  fill(p.layout.pos_emb, std::size_t(c.m) * d, 1.0 / std::sqrt(double(d)));
  auto block = [&](const BlockSlots& b, bool cross) {
    ones(b.attn_norm);
    if (cross) ones(b.kv_norm);
    ones(b.ffn_norm);
    const double s = 1.0 / std::sqrt(double(d));
    fill(b.wq, std::size_t(d) * d, s);
    fill(b.wk, std::size_t(d) * d, s);
    fill(b.wv, std::size_t(d) * d, s);
    fill(b.wo, std::size_t(d) * d, s / std::sqrt(depth));
    fill(b.w1, std::size_t(d) * h, s);
    fill(b.w2, std::size_t(h) * d, 1.0 / std::sqrt(double(h) * depth));
  };
  for (const auto& b : p.layout.cross) block(b, true);
  for (const auto& b : p.layout.self) block(b, false);
  ones(p.layout.out_norm);
  if (head == HeadInit::Random) fill(p.layout.w_out, std::size_t(d) * c.vocab_size, 1.0 / std::sqrt(double(d)));
  return p;
}

// ---------------------------------------------------------------------------
// Masks used by the network

/// Mask for cross block with the given window (0 = full context).
inline AttentionMask cross_block_mask(int n, int m, int pad_count, int window) {
  AttentionMask mask = combine(final_block_causal(n, m), query_padding_mask(pad_count, n, m));
  if (window > 0) mask = combine(mask, scale_mask(n, m, window));
  return mask;
}

/// Causal mask over the n latent slots, with padded latents hidden.
inline AttentionMask latent_mask(int n, int m, int pad_count) {
  int latent_pad = std::clamp(pad_count - (m - n), 0, n);
  return combine(vanilla_causal(n), query_padding_mask(latent_pad, n, n));
}

// ---------------------------------------------------------------------------
// Layer primitives

namespace nn {

inline constexpr double kNormEps = 1e-5;

template <class T>
struct NormCache {
  Matrix<T> xhat;
  std::vector<T> rstd;
};

template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, std::span<const T> gain, std::span<const T> bias,
                     NormCache<T>* cache) {
  const int rows = x.rows(), d = x.cols();
  Matrix<T> y(rows, d);
  if (cache) {
    cache->xhat = Matrix<T>(rows, d);
    cache->rstd.assign(rows, T(0));
  }
  for (int r = 0; r < rows; ++r) {
    const T* xr = x.row(r);
    T mean = 0;
    for (int k = 0; k < d; ++k) mean += xr[k];
    mean /= T(d);
    T var = 0;
    for (int k = 0; k < d; ++k) var += (xr[k] - mean) * (xr[k] - mean);
    var /= T(d);
    const T rstd = T(1) / std::sqrt(var + T(kNormEps));
    for (int k = 0; k < d; ++k) {
      const T xh = (xr[k] - mean) * rstd;
      y(r, k) = gain[k] * xh + bias[k];
      if (cache) cache->xhat(r, k) = xh;
    }
    if (cache) cache->rstd[r] = rstd;
  }
  return y;
}

template <class T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const NormCache<T>& c, std::span<const T> gain,
                              std::span<T> dgain, std::span<T> dbias) {
  const int rows = dy.rows(), d = dy.cols();
  Matrix<T> dx(rows, d);
  std::vector<T> dxh(d);
  for (int r = 0; r < rows; ++r) {
    T sum = 0, dot = 0;
    for (int k = 0; k < d; ++k) {
      dgain[k] += dy(r, k) * c.xhat(r, k);
      dbias[k] += dy(r, k);
      dxh[k] = dy(r, k) * gain[k];
      sum += dxh[k];
      dot += dxh[k] * c.xhat(r, k);
    }
    for (int k = 0; k < d; ++k)
      dx(r, k) = c.rstd[r] / T(d) * (T(d) * dxh[k] - sum - c.xhat(r, k) * dot);
  }
  return dx;
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(3.14159265358979323846));
  return cdf + x * pdf;
}

template <class T>
struct AttentionWeights {
  MatrixView<const T> wq, wk, wv, wo;
};

template <class T>
struct AttentionGrads {
  MatrixView<T> wq, wk, wv, wo;
};

template <class T>
struct AttentionCache {
  Matrix<T> q_in, kv_in, q, k, v, o;
  std::vector<T> probs;  // heads x nq x nk
};

/// Multi-head attention; `additive` is the nq x nk additive mask.
template <class T>
Matrix<T> attention(const Matrix<T>& q_in, const Matrix<T>& kv_in, const AttentionWeights<T>& w,
                    std::span<const T> additive, int heads, int d_head, AttentionCache<T>* cache) {
  const int nq = q_in.rows(), nk = kv_in.rows();
  Matrix<T> q = matmul(cv(q_in), w.wq);
  Matrix<T> k = matmul(cv(kv_in), w.wk);
  Matrix<T> v = matmul(cv(kv_in), w.wv);
  Matrix<T> o(nq, heads * d_head);
  std::vector<T> probs(std::size_t(heads) * nq * nk);
  const T scale = T(1) / std::sqrt(T(d_head));
  std::vector<T> scores(nk);
  for (int h = 0; h < heads; ++h) {
    const int off = h * d_head;
    for (int i = 0; i < nq; ++i) {
      for (int j = 0; j < nk; ++j) {
        T s = 0;
        for (int t = 0; t < d_head; ++t) s += q(i, off + t) * k(j, off + t);
        scores[j] = s * scale;
      }
      std::span<T> p(probs.data() + (std::size_t(h) * nq + i) * nk, nk);
      masked_softmax<T>(scores, additive.subspan(std::size_t(i) * nk, nk), p);
      for (int j = 0; j < nk; ++j) {
        if (p[j] == T(0)) continue;
        for (int t = 0; t < d_head; ++t) o(i, off + t) += p[j] * v(j, off + t);
      }
    }
  }
  Matrix<T> out = matmul(cv(o), w.wo);
  if (cache) {
    cache->q_in = q_in;
    cache->kv_in = kv_in;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->o = std::move(o);
    cache->probs = std::move(probs);
  }
  return out;
}

/// Returns (d q_in, d kv_in) and accumulates weight gradients.
template <class T>
std::pair<Matrix<T>, Matrix<T>> attention_backward(const Matrix<T>& dout, const AttentionCache<T>& c,
                                                   const AttentionWeights<T>& w,
                                                   const AttentionGrads<T>& g, int heads, int d_head) {
  const int nq = c.q.rows(), nk = c.k.rows();
  accumulate_at_b(cv(c.o), cv(dout), g.wo);
  Matrix<T> d_o = matmul_bt(cv(dout), w.wo);
  Matrix<T> dq(nq, heads * d_head), dk(nk, heads * d_head), dv(nk, heads * d_head);
  const T scale = T(1) / std::sqrt(T(d_head));
  std::vector<T> dp(nk);
  for (int h = 0; h < heads; ++h) {
    const int off = h * d_head;
    for (int i = 0; i < nq; ++i) {
      const T* p = c.probs.data() + (std::size_t(h) * nq + i) * nk;
      T dot = 0;
      for (int j = 0; j < nk; ++j) {
        if (p[j] == T(0)) {
          dp[j] = 0;
          continue;
        }
        T s = 0;
        for (int t = 0; t < d_head; ++t) {
          s += d_o(i, off + t) * c.v(j, off + t);
          dv(j, off + t) += p[j] * d_o(i, off + t);
        }
        dp[j] = s;
        dot += p[j] * s;
      }
      for (int j = 0; j < nk; ++j) {
        if (p[j] == T(0)) continue;
        const T ds = p[j] * (dp[j] - dot) * scale;
        for (int t = 0; t < d_head; ++t) {
          dq(i, off + t) += ds * c.k(j, off + t);
          dk(j, off + t) += ds * c.q(i, off + t);
        }
      }
    }
  }
  accumulate_at_b(cv(c.q_in), cv(dq), g.wq);
  accumulate_at_b(cv(c.kv_in), cv(dk), g.wk);
  accumulate_at_b(cv(c.kv_in), cv(dv), g.wv);
  Matrix<T> dq_in = matmul_bt(cv(dq), w.wq);
  Matrix<T> dkv_in = matmul_bt(cv(dk), w.wk);
  add_in_place(dkv_in, matmul_bt(cv(dv), w.wv));
  return {std::move(dq_in), std::move(dkv_in)};
}

template <class T>
struct FfnCache {
  Matrix<T> in, pre, act;
};

template <class T>
Matrix<T> feed_forward(const Matrix<T>& x, MatrixView<const T> w1, MatrixView<const T> w2,
                       FfnCache<T>* cache) {
  Matrix<T> pre = matmul(cv(x), w1);
  Matrix<T> act(pre.rows(), pre.cols());
  for (std::size_t k = 0; k < pre.size(); ++k) act.values()[k] = gelu(pre.values()[k]);
  Matrix<T> out = matmul(cv(act), w2);
  if (cache) {
    cache->in = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

template <class T>
Matrix<T> feed_forward_backward(const Matrix<T>& dout, const FfnCache<T>& c, MatrixView<const T> w1,
                                MatrixView<const T> w2, MatrixView<T> dw1, MatrixView<T> dw2) {
  accumulate_at_b(cv(c.act), cv(dout), dw2);
  Matrix<T> dact = matmul_bt(cv(dout), w2);
  for (std::size_t k = 0; k < dact.size(); ++k) dact.values()[k] *= gelu_grad(c.pre.values()[k]);
  accumulate_at_b(cv(c.in), cv(dact), dw1);
  return matmul_bt(cv(dact), w1);
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Whole-network forward / backward

/// Inverted dropout on residual branches; inactive when rate is 0 or rng is null.
struct DropoutContext {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return rate > 0.0 && rng != nullptr; }
};

template <class T>
struct BlockCache {
  nn::NormCache<T> attn_norm, kv_norm, ffn_norm;
  nn::AttentionCache<T> attn;
  nn::FfnCache<T> ffn;
  std::vector<T> drop_attn, drop_ffn;  // empty when dropout inactive
};

template <class T>
struct ForwardCache {
  std::vector<Token> inputs;
  int pad_count = 0;
  std::vector<BlockCache<T>> cross, self;
  nn::NormCache<T> out_norm;
  Matrix<T> final_states;
};

namespace detail {

template <class T>
nn::AttentionWeights<T> attention_weights(const Parameters<T>& p, const BlockSlots& b) {
  const int d = p.config.d_model;
  return {p.mat(b.wq, d, d), p.mat(b.wk, d, d), p.mat(b.wv, d, d), p.mat(b.wo, d, d)};
}

template <class T>
nn::AttentionGrads<T> attention_grads(Parameters<T>& g, const BlockSlots& b) {
  const int d = g.config.d_model;
  return {g.mat(b.wq, d, d), g.mat(b.wk, d, d), g.mat(b.wv, d, d), g.mat(b.wo, d, d)};
}

template <class T>
void apply_dropout(Matrix<T>& x, const DropoutContext* drop, std::vector<T>* keep) {
  if (!drop || !drop->active()) return;
  std::bernoulli_distribution bern(1.0 - drop->rate);
  const T scale = T(1.0 / (1.0 - drop->rate));
  std::vector<T> mask(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    mask[k] = bern(*drop->rng) ? scale : T(0);
    x.values()[k] *= mask[k];
  }
  if (keep) *keep = std::move(mask);
}

template <class T>
Matrix<T> undo_dropout(const Matrix<T>& dy, const std::vector<T>& keep) {
  if (keep.empty()) return dy;
  Matrix<T> out = dy;
  for (std::size_t k = 0; k < out.size(); ++k) out.values()[k] *= keep[k];
  return out;
}

template <class T>
void check_finite(const Matrix<T>& x, int layer, const char* what) {
  if (!x.all_finite()) throw NumericError(std::string("non-finite activation in ") + what, layer);
}

/// One pre-norm block. `context` is the key/value source for cross blocks, null for self blocks.
template <class T>
void block_forward(const Parameters<T>& p, const BlockSlots& b, Matrix<T>& z, const Matrix<T>* context,
                   std::span<const T> additive, BlockCache<T>* cache, const DropoutContext* drop) {
  const ModelConfig& c = p.config;
  const int d = c.d_model, h = c.ffn_multiplier * d;
  Matrix<T> zq = nn::layer_norm(z, p.vec(b.attn_norm.gain, d), p.vec(b.attn_norm.bias, d),
                                cache ? &cache->attn_norm : nullptr);
  Matrix<T> attn_out;
  if (context) {
    Matrix<T> kv = nn::layer_norm(*context, p.vec(b.kv_norm.gain, d), p.vec(b.kv_norm.bias, d),
                                  cache ? &cache->kv_norm : nullptr);
    attn_out = nn::attention(zq, kv, attention_weights(p, b), additive, c.n_heads, c.d_head,
                             cache ? &cache->attn : nullptr);
  } else {
    attn_out = nn::attention(zq, zq, attention_weights(p, b), additive, c.n_heads, c.d_head,
                             cache ? &cache->attn : nullptr);
  }
  apply_dropout(attn_out, drop, cache ? &cache->drop_attn : nullptr);
  add_in_place(z, attn_out);
  Matrix<T> zf = nn::layer_norm(z, p.vec(b.ffn_norm.gain, d), p.vec(b.ffn_norm.bias, d),
                                cache ? &cache->ffn_norm : nullptr);
  Matrix<T> ff = nn::feed_forward(zf, p.mat(b.w1, d, h), p.mat(b.w2, h, d), cache ? &cache->ffn : nullptr);
  apply_dropout(ff, drop, cache ? &cache->drop_ffn : nullptr);
  add_in_place(z, ff);
}

/// Backward through one block. Returns d(z_in); adds the context gradient into `dcontext`.
template <class T>
Matrix<T> block_backward(const Parameters<T>& p, Parameters<T>& g, const BlockSlots& b,
                         const BlockCache<T>& cache, Matrix<T> dz, Matrix<T>* dcontext) {
  const ModelConfig& c = p.config;
  const int d = c.d_model, h = c.ffn_multiplier * d;
  Matrix<T> dff = undo_dropout(dz, cache.drop_ffn);
  Matrix<T> dzf = nn::feed_forward_backward(dff, cache.ffn, p.mat(b.w1, d, h), p.mat(b.w2, h, d),
                                            g.mat(b.w1, d, h), g.mat(b.w2, h, d));
  add_in_place(dz, nn::layer_norm_backward(dzf, cache.ffn_norm, p.vec(b.ffn_norm.gain, d),
                                           g.vec(b.ffn_norm.gain, d), g.vec(b.ffn_norm.bias, d)));
  Matrix<T> dattn = undo_dropout(dz, cache.drop_attn);
  auto [dzq, dkv] = nn::attention_backward(dattn, cache.attn, attention_weights(p, b),
                                           attention_grads(g, b), c.n_heads, c.d_head);
  if (dcontext) {
    add_in_place(*dcontext, nn::layer_norm_backward(dkv, cache.kv_norm, p.vec(b.kv_norm.gain, d),
                                                    g.vec(b.kv_norm.gain, d), g.vec(b.kv_norm.bias, d)));
  } else {
    add_in_place(dzq, dkv);
  }
  add_in_place(dz, nn::layer_norm_backward(dzq, cache.attn_norm, p.vec(b.attn_norm.gain, d),
                                           g.vec(b.attn_norm.gain, d), g.vec(b.attn_norm.bias, d)));
  return dz;
}

template <class T>
Matrix<T> embed(const Parameters<T>& p, std::span<const Token> inputs) {
  const ModelConfig& c = p.config;
  const int d = c.d_model;
  Matrix<T> x(c.m, d);
  for (int s = 0; s < c.m; ++s) {
    const int tok = inputs[s];
    if (tok < 0 || tok >= c.vocab_size) throw InvalidArgument("input token outside vocabulary");
    const T* e = p.values.data() + p.layout.tok_emb + std::size_t(tok) * d;
    const T* pe = p.values.data() + p.layout.pos_emb + std::size_t(s) * d;
    for (int k = 0; k < d; ++k) x(s, k) = e[k] + pe[k];
  }
  return x;
}

template <class T>
Matrix<T> initial_queries(const Matrix<T>& x, int n) {
  Matrix<T> z(n, x.cols());
  for (int i = 0; i < n; ++i)
    std::copy(x.row(x.rows() - n + i), x.row(x.rows() - n + i) + x.cols(), z.row(i));
  return z;
}

}  // namespace detail

/// Logits (n x vocab) for m input slots whose first `pad_count` slots are padding.
/// pad_count may equal m (empty context).
template <class T>
Matrix<T> forward(const Parameters<T>& p, std::span<const Token> inputs, int pad_count,
                  ForwardCache<T>* cache = nullptr, const DropoutContext* drop = nullptr) {
  const ModelConfig& c = p.config;
  if (int(inputs.size()) != c.m) throw InvalidArgument("forward expects exactly m input slots");
  if (pad_count < 0 || pad_count > c.m) throw InvalidArgument("pad_count out of range");
  const int d = c.d_model;

  Matrix<T> x = detail::embed(p, inputs);
  detail::check_finite(x, 0, "embedding");
  Matrix<T> z = detail::initial_queries(x, c.n);
  if (cache) {
    cache->inputs.assign(inputs.begin(), inputs.end());
    cache->pad_count = pad_count;
    cache->cross.assign(c.cross_windows.size(), {});
    cache->self.assign(c.n_self_layers, {});
  }

  for (std::size_t k = 0; k < c.cross_windows.size(); ++k) {
    const auto additive = cross_block_mask(c.n, c.m, pad_count, c.cross_windows[k]).template additive<T>();
    detail::block_forward<T>(p, p.layout.cross[k], z, &x, additive, cache ? &cache->cross[k] : nullptr, drop);
    detail::check_finite(z, int(k) + 1, "cross-attention block");
  }
  const auto self_additive = latent_mask(c.n, c.m, pad_count).template additive<T>();
  for (int k = 0; k < c.n_self_layers; ++k) {
    detail::block_forward<T>(p, p.layout.self[k], z, nullptr, self_additive,
                             cache ? &cache->self[k] : nullptr, drop);
    detail::check_finite(z, int(c.cross_windows.size()) + k + 1, "self-attention block");
  }
  Matrix<T> y = nn::layer_norm(z, p.vec(p.layout.out_norm.gain, d), p.vec(p.layout.out_norm.bias, d),
                               cache ? &cache->out_norm : nullptr);
  Matrix<T> logits = matmul(cv(y), p.mat(p.layout.w_out, d, c.vocab_size));
  detail::check_finite(logits, int(c.cross_windows.size()) + c.n_self_layers + 1, "output head");
  if (cache) cache->final_states = std::move(y);
  return logits;
}

template <class T>
Matrix<T> forward(const Parameters<T>& p, const SegmentSample& s, ForwardCache<T>* cache = nullptr,
                  const DropoutContext* drop = nullptr) {
  return forward(p, std::span<const Token>(s.inputs), s.pad_count, cache, drop);
}

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
template <class T>
void backward(const Parameters<T>& p, const ForwardCache<T>& cache, const Matrix<T>& dlogits,
              Parameters<T>& grads) {
  const ModelConfig& c = p.config;
  const int d = c.d_model;
  accumulate_at_b(cv(cache.final_states), cv(dlogits), grads.mat(p.layout.w_out, d, c.vocab_size));
  Matrix<T> dy = matmul_bt(cv(dlogits), p.mat(p.layout.w_out, d, c.vocab_size));
  Matrix<T> dz = nn::layer_norm_backward(dy, cache.out_norm, p.vec(p.layout.out_norm.gain, d),
                                         grads.vec(p.layout.out_norm.gain, d),
                                         grads.vec(p.layout.out_norm.bias, d));
  for (int k = c.n_self_layers - 1; k >= 0; --k)
    dz = detail::block_backward<T>(p, grads, p.layout.self[k], cache.self[k], std::move(dz), nullptr);

  Matrix<T> dx(c.m, d);
  for (int k = int(c.cross_windows.size()) - 1; k >= 0; --k)
    dz = detail::block_backward<T>(p, grads, p.layout.cross[k], cache.cross[k], std::move(dz), &dx);
  for (int i = 0; i < c.n; ++i)
    for (int k = 0; k < d; ++k) dx(c.m - c.n + i, k) += dz(i, k);

  for (int s = 0; s < c.m; ++s) {
    T* te = grads.values.data() + p.layout.tok_emb + std::size_t(cache.inputs[s]) * d;
    T* pe = grads.values.data() + p.layout.pos_emb + std::size_t(s) * d;
    for (int k = 0; k < d; ++k) {
      te[k] += dx(s, k);
      pe[k] += dx(s, k);
    }
  }
}

/// Output of cross block `layer` for explicit incoming query states. Used to
/// probe one block in isolation (the cascade feeds the previous block's output here).
template <class T>
Matrix<T> cross_block_output(const Parameters<T>& p, std::size_t layer, Matrix<T> query_states,
                             std::span<const Token> inputs, int pad_count) {
  const ModelConfig& c = p.config;
  if (layer >= c.cross_windows.size()) throw InvalidArgument("no such cross block");
  Matrix<T> x = detail::embed(p, inputs);
  const auto additive = cross_block_mask(c.n, c.m, pad_count, c.cross_windows[layer]).template additive<T>();
  detail::block_forward<T>(p, p.layout.cross[layer], query_states, &x, additive, nullptr, nullptr);
  return query_states;
}

// ---------------------------------------------------------------------------
// Loss

template <class T>
struct CrossEntropy {
  T sum = 0;              // summed over supervised slots
  std::size_t count = 0;  // supervised slots
  Matrix<T> dlogits;      // d(sum)/d(logits)
};

template <class T>
CrossEntropy<T> cross_entropy_sum(const Matrix<T>& logits, std::span<const Token> targets,
                                  std::span<const std::uint8_t> ignore) {
  if (std::size_t(logits.rows()) != targets.size() || targets.size() != ignore.size())
    throw InvalidArgument("logits, targets and ignore flags disagree in length");
  CrossEntropy<T> out;
  out.dlogits = Matrix<T>(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    if (ignore[i]) continue;
    const T* z = logits.row(i);
    T mx = *std::max_element(z, z + logits.cols());
    T sum = 0;
    for (int j = 0; j < logits.cols(); ++j) sum += std::exp(z[j] - mx);
    const T lse = mx + std::log(sum);
    out.sum += lse - z[targets[i]];
    for (int j = 0; j < logits.cols(); ++j) out.dlogits(i, j) = std::exp(z[j] - lse);
    out.dlogits(i, targets[i]) -= T(1);
    ++out.count;
  }
  return out;
}

/// Mean cross-entropy over non-ignored targets.
template <class T>
T loss(const Matrix<T>& logits, std::span<const Token> targets, std::span<const std::uint8_t> ignore) {
  auto ce = cross_entropy_sum(logits, targets, ignore);
  if (ce.count == 0) throw InvalidArgument("every target is ignored");
  return ce.sum / T(ce.count);
}

/// Mean loss over all supervised targets of the batch; accumulates gradients
/// of that mean into `grads` when given.
template <class T>
T batch_loss(const Parameters<T>& p, std::span<const SegmentSample> batch, Parameters<T>* grads = nullptr,
             const DropoutContext* drop = nullptr) {
  std::size_t total = 0;
  for (const auto& s : batch) total += s.supervised_count();
  if (total == 0) throw InvalidArgument("every target is ignored");
  T sum = 0;
  for (const auto& s : batch) {
    if (s.supervised_count() == 0) continue;
    ForwardCache<T> cache;
    Matrix<T> logits = forward(p, s, grads ? &cache : nullptr, drop);
    auto ce = cross_entropy_sum(logits, std::span<const Token>(s.targets),
                                std::span<const std::uint8_t>(s.ignore));
    sum += ce.sum;
    if (grads) {
      for (auto& v : ce.dlogits.values()) v /= T(total);
      backward(p, cache, ce.dlogits, *grads);
    }
  }
  return sum / T(total);
}

}  // namespace perceivers
