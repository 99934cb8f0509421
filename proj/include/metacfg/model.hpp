#pragma once

// Decoder-only transformer in the LLaMA style: token embeddings, pre-RMSNorm
// blocks with rotary causal self-attention and a SwiGLU MLP, a final RMSNorm
// and an untied output head. Forward and backward passes are written out by
// hand over Eigen matrices; the scalar type is a template parameter so the
// gradient check can run in double precision.
//
// Batches are packed: the sequences of a batch are stacked row-wise into one
// [T_total x hidden] matrix. Dense layers act on the whole stack at once and
// attention runs per sequence, so no padding is ever materialized.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metacfg/corpus.hpp"
#include "metacfg/rng.hpp"

namespace metacfg {

struct ModelConfig {
  int layers = 4;
  int heads = 4;
  int hidden = 128;
  // 0 picks the LLaMA default: 8/3 * hidden rounded up to a multiple of 8.
  int ff_hidden = 0;
  int vocab_size = 0;
  int max_seq_len = 128;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  double init_std = 0.02;
  bool tie_embeddings = false;

  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  // Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  int warmup_steps = 0;
  int batch_size = 96;
  std::uint64_t seed = 0;

  int head_dim() const { return hidden / heads; }
  int ff() const { return ff_hidden > 0 ? ff_hidden : ((8 * hidden / 3 + 7) / 8) * 8; }

  void validate() const {
    if (layers < 1 || heads < 1 || hidden < 2 || vocab_size < 1 || max_seq_len < 1)
      throw std::invalid_argument("model config has non-positive sizes");
    if (hidden % heads != 0) throw std::invalid_argument("hidden size must be divisible by heads");
    if (head_dim() % 2 != 0) throw std::invalid_argument("head dimension must be even for rotary encoding");
  }

  // 12 layers x 12 heads x 768, batch 96, AdamW(0.9, 0.98), wd 0.1, lr 3e-4.
  static ModelConfig paper_preset(int vocab_size) {
    ModelConfig c;
    c.layers = 12;
    c.heads = 12;
    c.hidden = 768;
    c.vocab_size = vocab_size;
    c.max_seq_len = 512;
    c.batch_size = 96;
    c.learning_rate = 3e-4;
    return c;
  }

  // Desk-scale default: 4 layers x 4 heads x 128.
  static ModelConfig desk_preset(int vocab_size) {
    ModelConfig c;
    c.layers = 4;
    c.heads = 4;
    c.hidden = 128;
    c.vocab_size = vocab_size;
    c.max_seq_len = 128;
    c.batch_size = 32;
    c.learning_rate = 1e-3;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"heads", c.heads},
                     {"hidden", c.hidden},
                     {"ff_hidden", c.ff()},
                     {"vocab_size", c.vocab_size},
                     {"max_seq_len", c.max_seq_len},
                     {"rope_base", c.rope_base},
                     {"norm_eps", c.norm_eps},
                     {"init_std", c.init_std},
                     {"tie_embeddings", c.tie_embeddings},
                     {"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"weight_decay", c.weight_decay},
                     {"grad_clip", c.grad_clip},
                     {"warmup_steps", c.warmup_steps},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"norm", "pre-rmsnorm"},
                     {"mlp", "swiglu"}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.hidden = j.value("hidden", d.hidden);
  c.ff_hidden = j.value("ff_hidden", d.ff_hidden);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.rope_base = j.value("rope_base", d.rope_base);
  c.norm_eps = j.value("norm_eps", d.norm_eps);
  c.init_std = j.value("init_std", d.init_std);
  c.tie_embeddings = j.value("tie_embeddings", d.tie_embeddings);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
}

// Sequences packed back to back. targets[t] is the token to predict from
// position t, or -1 when position t carries no loss.
struct Batch {
  std::vector<TokenId> tokens;
  std::vector<std::int64_t> targets;
  std::vector<std::size_t> offsets{0};

  std::size_t sequences() const { return offsets.size() - 1; }
  std::size_t rows() const { return tokens.size(); }

  void add(const std::vector<TokenId>& seq, const std::vector<std::uint8_t>& loss_mask) {
    for (std::size_t t = 0; t < seq.size(); ++t) {
      tokens.push_back(seq[t]);
      targets.push_back(t + 1 < seq.size() && loss_mask[t + 1] ? static_cast<std::int64_t>(seq[t + 1]) : -1);
    }
    offsets.push_back(tokens.size());
  }
  void add(const TrainingRecord& r) { add(r.tokens, r.loss_mask); }

  std::size_t loss_positions() const {
    std::size_t n = 0;
    for (auto t : targets) n += t >= 0;
    return n;
  }
};

template <typename Scalar>
class Transformer {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Param {
    std::string name;
    Matrix value;
    Matrix grad;
    bool decay = true;
  };

  struct LayerIndex {
    std::size_t attn_norm, wq, wk, wv, wo, mlp_norm, w_gate, w_up, w_down;
  };

  // Activations of one forward pass, kept for the backward pass.
  struct LayerCache {
    Matrix x_in, a, q, k, v, o, x_mid, b, u, g, h;
    Vector inv_rms1, inv_rms2;
    std::vector<Matrix> probs;  // per (sequence, head)
  };
  struct Cache {
    std::vector<LayerCache> layers;
    Matrix x_out, f, logits;
    Vector inv_rms_f;
  };

  explicit Transformer(const ModelConfig& config) : config_(config) {
    config_.validate();
    const int H = config_.hidden, F = config_.ff(), V = config_.vocab_size;
    Rng rng(derive_seed(config_.seed, SeedStream::kModelInit, 0));
    const double std = config_.init_std;
    const double out_std = std / std::sqrt(2.0 * config_.layers);
    embedding_ = add_param("tok_emb", V, H, std, rng);
    for (int l = 0; l < config_.layers; ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      LayerIndex li{};
      li.attn_norm = add_norm(p + "attn_norm", H);
      li.wq = add_param(p + "wq", H, H, std, rng);
      li.wk = add_param(p + "wk", H, H, std, rng);
      li.wv = add_param(p + "wv", H, H, std, rng);
      li.wo = add_param(p + "wo", H, H, out_std, rng);
      li.mlp_norm = add_norm(p + "mlp_norm", H);
      li.w_gate = add_param(p + "w_gate", H, F, std, rng);
      li.w_up = add_param(p + "w_up", H, F, std, rng);
      li.w_down = add_param(p + "w_down", F, H, out_std, rng);
      layer_index_.push_back(li);
    }
    final_norm_ = add_norm("final_norm", H);
    if (!config_.tie_embeddings) head_ = add_param("lm_head", H, V, std, rng);
    build_rope_tables();
  }

  const ModelConfig& config() const { return config_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  Param& param(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw std::out_of_range("no parameter named " + name);
  }
  const Param& param(const std::string& name) const {
    return const_cast<Transformer*>(this)->param(name);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  // Rotates consecutive pairs (2i, 2i+1) of every head in `row` by
  // pos * base^(-2i/head_dim); `sign` = -1 applies the inverse rotation.
  template <typename RowRef>
  void apply_rope(RowRef&& row, std::size_t pos, Scalar sign = Scalar(1)) const {
    const int dh = config_.head_dim(), half = dh / 2;
    for (int h = 0; h < config_.heads; ++h)
      for (int i = 0; i < half; ++i) {
        const Scalar c = rope_cos_(pos, i), s = sign * rope_sin_(pos, i);
        const int j = h * dh + 2 * i;
        const Scalar x0 = row(j), x1 = row(j + 1);
        row(j) = x0 * c - x1 * s;
        row(j + 1) = x0 * s + x1 * c;
      }
  }

  // Full forward pass over a packed batch. When `hidden` is non-null,
  // (*hidden)[l] receives the residual stream after block l (l = 0 is the
  // embedding output), for l in [0, layers].
  void forward(const Batch& batch, Cache& cache, std::vector<Matrix>* hidden = nullptr) const {
    const std::size_t T = batch.rows();
    const int H = config_.hidden, L = config_.layers;
    check_batch(batch);
    const Matrix& emb = params_[embedding_].value;
    Matrix x(T, H);
    for (std::size_t t = 0; t < T; ++t) x.row(t) = emb.row(batch.tokens[t]);
    if (hidden) {
      hidden->assign(L + 1, Matrix());
      (*hidden)[0] = x;
    }
    cache.layers.resize(L);
    for (int l = 0; l < L; ++l) {
      layer_forward(l, batch, x, cache.layers[l]);
      if (hidden) (*hidden)[l + 1] = x;
    }
    cache.x_out = x;
    rms_norm(cache.x_out, params_[final_norm_].value, cache.f, cache.inv_rms_f);
    cache.logits.noalias() = cache.f * head_matrix();
  }

  // Mean cross-entropy over positions with a target; nats per token.
  double loss(const Batch& batch) const {
    Cache cache;
    forward(batch, cache);
    return cross_entropy(batch, cache.logits, nullptr);
  }

  // Loss plus gradients; gradients are accumulated into Param::grad.
  double loss_and_backward(const Batch& batch, Cache& cache) {
    forward(batch, cache);
    Matrix dlogits;
    const double loss = cross_entropy(batch, cache.logits, &dlogits);
    backward(batch, cache, dlogits);
    return loss;
  }

  // Logits [len x vocab] of a single sequence, and optionally hidden states.
  Matrix logits(const std::vector<TokenId>& seq, std::vector<Matrix>* hidden = nullptr) const {
    Batch b;
    b.add(seq, std::vector<std::uint8_t>(seq.size(), 0));
    Cache cache;
    forward(b, cache, hidden);
    return cache.logits;
  }

  // Softmax of one logits row, accumulated in double.
  static std::vector<double> softmax_row(const Matrix& logits, Eigen::Index row) {
    std::vector<double> p(static_cast<std::size_t>(logits.cols()));
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < logits.cols(); ++c) mx = std::max(mx, static_cast<double>(logits(row, c)));
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      p[c] = std::exp(static_cast<double>(logits(row, c)) - mx);
      z += p[c];
    }
    for (double& v : p) v /= z;
    return p;
  }

 private:
  std::size_t add_param(const std::string& name, int rows, int cols, double std, Rng& rng) {
    Param p{name, Matrix(rows, cols), Matrix::Zero(rows, cols), true};
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Scalar>(std * rng.normal());
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }
  std::size_t add_norm(const std::string& name, int size) {
    params_.push_back(Param{name, Matrix::Ones(1, size), Matrix::Zero(1, size), false});
    return params_.size() - 1;
  }

  void build_rope_tables() {
    const int half = config_.head_dim() / 2;
    rope_cos_.resize(config_.max_seq_len, half);
    rope_sin_.resize(config_.max_seq_len, half);
    for (int pos = 0; pos < config_.max_seq_len; ++pos)
      for (int i = 0; i < half; ++i) {
        const double freq = std::pow(config_.rope_base, -2.0 * i / config_.head_dim());
        rope_cos_(pos, i) = static_cast<Scalar>(std::cos(pos * freq));
        rope_sin_(pos, i) = static_cast<Scalar>(std::sin(pos * freq));
      }
  }

  // Transposed view of the output projection: [hidden x vocab].
  Matrix head_matrix() const {
    if (config_.tie_embeddings) return params_[embedding_].value.transpose();
    return params_[head_].value;
  }

  void check_batch(const Batch& batch) const {
    if (batch.rows() == 0) throw std::invalid_argument("empty batch");
    for (std::size_t s = 0; s < batch.sequences(); ++s)
      if (batch.offsets[s + 1] - batch.offsets[s] > static_cast<std::size_t>(config_.max_seq_len))
        throw std::invalid_argument("sequence of length " +
                                    std::to_string(batch.offsets[s + 1] - batch.offsets[s]) +
                                    " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    for (TokenId t : batch.tokens)
      if (t >= static_cast<TokenId>(config_.vocab_size))
        throw std::invalid_argument("token id " + std::to_string(t) + " outside vocabulary");
  }

  void rms_norm(const Matrix& x, const Matrix& gain, Matrix& y, Vector& inv_rms) const {
    const auto H = static_cast<double>(x.cols());
    y.resize(x.rows(), x.cols());
    inv_rms.resize(x.rows());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      const double ms = static_cast<double>(x.row(t).squaredNorm()) / H;
      inv_rms(t) = static_cast<Scalar>(1.0 / std::sqrt(ms + config_.norm_eps));
      y.row(t) = (x.row(t) * inv_rms(t)).cwiseProduct(gain.row(0));
    }
  }

  // Given dy for y = rms_norm(x) * gain, adds dgain into `dgain` and returns dx.
  Matrix rms_norm_backward(const Matrix& dy, const Matrix& x, const Vector& inv_rms, const Matrix& gain,
                           Matrix& dgain) const {
    Matrix dx(x.rows(), x.cols());
    const auto H = static_cast<Scalar>(x.cols());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      const auto xhat = (x.row(t) * inv_rms(t)).eval();
      dgain.row(0) += dy.row(t).cwiseProduct(xhat);
      const auto dxhat = dy.row(t).cwiseProduct(gain.row(0)).eval();
      const Scalar dot = dxhat.dot(xhat) / H;
      dx.row(t) = inv_rms(t) * (dxhat - xhat * dot);
    }
    return dx;
  }

  static Scalar sigmoid(Scalar u) { return Scalar(1) / (Scalar(1) + std::exp(-u)); }

  void layer_forward(int l, const Batch& batch, Matrix& x, LayerCache& c) const {
    const LayerIndex& li = layer_index_[l];
    const int H = config_.hidden, dh = config_.head_dim(), nh = config_.heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    c.x_in = x;
    rms_norm(c.x_in, params_[li.attn_norm].value, c.a, c.inv_rms1);
    c.q.noalias() = c.a * params_[li.wq].value;
    c.k.noalias() = c.a * params_[li.wk].value;
    c.v.noalias() = c.a * params_[li.wv].value;
    for (std::size_t s = 0; s < batch.sequences(); ++s)
      for (std::size_t t = batch.offsets[s]; t < batch.offsets[s + 1]; ++t) {
        apply_rope(c.q.row(t), t - batch.offsets[s]);
        apply_rope(c.k.row(t), t - batch.offsets[s]);
      }
    c.o.setZero(x.rows(), H);
    c.probs.resize(batch.sequences() * nh);
    for (std::size_t s = 0; s < batch.sequences(); ++s) {
      const auto off = static_cast<Eigen::Index>(batch.offsets[s]);
      const auto n = static_cast<Eigen::Index>(batch.offsets[s + 1] - batch.offsets[s]);
      for (int h = 0; h < nh; ++h) {
        Matrix& P = c.probs[s * nh + h];
        P.noalias() = c.q.block(off, h * dh, n, dh) * c.k.block(off, h * dh, n, dh).transpose();
        for (Eigen::Index i = 0; i < n; ++i) {
          Scalar mx = -std::numeric_limits<Scalar>::infinity();
          for (Eigen::Index j = 0; j <= i; ++j) mx = std::max(mx, P(i, j) * scale);
          Scalar z = 0;
          for (Eigen::Index j = 0; j <= i; ++j) {
            P(i, j) = std::exp(P(i, j) * scale - mx);
            z += P(i, j);
          }
          for (Eigen::Index j = 0; j <= i; ++j) P(i, j) /= z;
          for (Eigen::Index j = i + 1; j < n; ++j) P(i, j) = 0;
        }
        c.o.block(off, h * dh, n, dh).noalias() = P * c.v.block(off, h * dh, n, dh);
      }
    }
    c.x_mid = c.x_in;
    c.x_mid.noalias() += c.o * params_[li.wo].value;
    rms_norm(c.x_mid, params_[li.mlp_norm].value, c.b, c.inv_rms2);
    c.u.noalias() = c.b * params_[li.w_gate].value;
    c.g.noalias() = c.b * params_[li.w_up].value;
    c.h.resize(c.u.rows(), c.u.cols());
    for (Eigen::Index i = 0; i < c.u.size(); ++i) {
      const Scalar u = c.u.data()[i];
      c.h.data()[i] = u * sigmoid(u) * c.g.data()[i];
    }
    x = c.x_mid;
    x.noalias() += c.h * params_[li.w_down].value;
  }

  // Cross-entropy averaged over target positions; fills dlogits if requested.
  double cross_entropy(const Batch& batch, const Matrix& logits, Matrix* dlogits) const {
    const std::size_t count = batch.loss_positions();
    if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
    if (count == 0) return 0.0;
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(count);
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
      const auto target = batch.targets[t];
      if (target < 0) continue;
      const auto p = softmax_row(logits, t);
      total -= std::log(std::max(p[target], 1e-300));
      if (dlogits) {
        for (Eigen::Index c = 0; c < logits.cols(); ++c) (*dlogits)(t, c) = static_cast<Scalar>(p[c] * inv);
        (*dlogits)(t, target) -= static_cast<Scalar>(inv);
      }
    }
    return total * inv;
  }

  void backward(const Batch& batch, const Cache& cache, const Matrix& dlogits) {
    const int dh = config_.head_dim(), nh = config_.heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    Matrix df;
    if (config_.tie_embeddings) {
      // logits = f * E^T
      params_[embedding_].grad.noalias() += dlogits.transpose() * cache.f;
      df.noalias() = dlogits * params_[embedding_].value;
    } else {
      params_[head_].grad.noalias() += cache.f.transpose() * dlogits;
      df.noalias() = dlogits * params_[head_].value.transpose();
    }
    Matrix dx = rms_norm_backward(df, cache.x_out, cache.inv_rms_f, params_[final_norm_].value,
                                  params_[final_norm_].grad);

    for (int l = config_.layers - 1; l >= 0; --l) {
      const LayerIndex& li = layer_index_[l];
      const LayerCache& c = cache.layers[l];

      // MLP: x_out = x_mid + h * W_down, h = silu(u) .* g
      params_[li.w_down].grad.noalias() += c.h.transpose() * dx;
      Matrix dh_mlp = dx * params_[li.w_down].value.transpose();
      Matrix du(c.u.rows(), c.u.cols()), dg(c.u.rows(), c.u.cols());
      for (Eigen::Index i = 0; i < c.u.size(); ++i) {
        const Scalar u = c.u.data()[i], sg = sigmoid(u);
        const Scalar silu = u * sg;
        du.data()[i] = dh_mlp.data()[i] * c.g.data()[i] * sg * (Scalar(1) + u * (Scalar(1) - sg));
        dg.data()[i] = dh_mlp.data()[i] * silu;
      }
      params_[li.w_gate].grad.noalias() += c.b.transpose() * du;
      params_[li.w_up].grad.noalias() += c.b.transpose() * dg;
      Matrix db = du * params_[li.w_gate].value.transpose();
      db.noalias() += dg * params_[li.w_up].value.transpose();
      Matrix dx_mid = dx + rms_norm_backward(db, c.x_mid, c.inv_rms2, params_[li.mlp_norm].value,
                                             params_[li.mlp_norm].grad);

      // Attention: x_mid = x_in + o * W_o
      params_[li.wo].grad.noalias() += c.o.transpose() * dx_mid;
      Matrix d_o = dx_mid * params_[li.wo].value.transpose();
      Matrix dq = Matrix::Zero(c.q.rows(), c.q.cols());
      Matrix dk = Matrix::Zero(c.k.rows(), c.k.cols());
      Matrix dv = Matrix::Zero(c.v.rows(), c.v.cols());
      for (std::size_t s = 0; s < batch.sequences(); ++s) {
        const auto off = static_cast<Eigen::Index>(batch.offsets[s]);
        const auto n = static_cast<Eigen::Index>(batch.offsets[s + 1] - batch.offsets[s]);
        for (int h = 0; h < nh; ++h) {
          const Matrix& P = c.probs[s * nh + h];
          const auto dO = d_o.block(off, h * dh, n, dh);
          dv.block(off, h * dh, n, dh).noalias() += P.transpose() * dO;
          Matrix dP = dO * c.v.block(off, h * dh, n, dh).transpose();
          // softmax backward: dS = P .* (dP - rowsum(dP .* P))
          for (Eigen::Index i = 0; i < n; ++i) {
            Scalar dot = 0;
            for (Eigen::Index j = 0; j <= i; ++j) dot += dP(i, j) * P(i, j);
            for (Eigen::Index j = 0; j <= i; ++j) dP(i, j) = P(i, j) * (dP(i, j) - dot) * scale;
            for (Eigen::Index j = i + 1; j < n; ++j) dP(i, j) = 0;
          }
          dq.block(off, h * dh, n, dh).noalias() += dP * c.k.block(off, h * dh, n, dh);
          dk.block(off, h * dh, n, dh).noalias() += dP.transpose() * c.q.block(off, h * dh, n, dh);
        }
      }
      for (std::size_t s = 0; s < batch.sequences(); ++s)
        for (std::size_t t = batch.offsets[s]; t < batch.offsets[s + 1]; ++t) {
          apply_rope(dq.row(t), t - batch.offsets[s], Scalar(-1));
          apply_rope(dk.row(t), t - batch.offsets[s], Scalar(-1));
        }
      params_[li.wq].grad.noalias() += c.a.transpose() * dq;
      params_[li.wk].grad.noalias() += c.a.transpose() * dk;
      params_[li.wv].grad.noalias() += c.a.transpose() * dv;
      Matrix da = dq * params_[li.wq].value.transpose();
      da.noalias() += dk * params_[li.wk].value.transpose();
      da.noalias() += dv * params_[li.wv].value.transpose();
      dx = dx_mid + rms_norm_backward(da, c.x_in, c.inv_rms1, params_[li.attn_norm].value,
                                      params_[li.attn_norm].grad);
    }
    Matrix& demb = params_[embedding_].grad;
    for (std::size_t t = 0; t < batch.rows(); ++t) demb.row(batch.tokens[t]) += dx.row(t);
  }

  ModelConfig config_;
  std::vector<Param> params_;
  std::vector<LayerIndex> layer_index_;
  std::size_t embedding_ = 0, final_norm_ = 0, head_ = 0;
  Matrix rope_cos_, rope_sin_;
};

}  // namespace metacfg
