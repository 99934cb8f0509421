#pragma once

// AdamW training loop, checkpoints, generation and hidden-state extraction
// for the transformer in model.hpp.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metacfg/corpus.hpp"
#include "metacfg/ga.hpp"
#include "metacfg/model.hpp"
#include "metacfg/rng.hpp"

namespace metacfg {

using Model = Transformer<float>;

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t step, double loss)
      : std::runtime_error("training diverged at step " + std::to_string(step) + " (loss " +
                           std::to_string(loss) + ")"),
        step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

// Decoupled weight decay (Loshchilov & Hutter); decay applies to matrices,
// not to norm gains.
template <typename Scalar>
class AdamW {
 public:
  using Matrix = typename Transformer<Scalar>::Matrix;

  explicit AdamW(const Transformer<Scalar>& model) {
    for (const auto& p : model.params()) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }

  std::int64_t step() const { return step_; }
  std::vector<Matrix>& first_moment() { return m_; }
  std::vector<Matrix>& second_moment() { return v_; }
  void set_step(std::int64_t s) { step_ = s; }

  // Returns the pre-clip global gradient norm.
  double update(Transformer<Scalar>& model) {
    const ModelConfig& c = model.config();
    auto& params = model.params();
    double norm2 = 0.0;
    for (const auto& p : params) norm2 += static_cast<double>(p.grad.squaredNorm());
    const double norm = std::sqrt(norm2);
    const double clip = c.grad_clip > 0.0 && norm > c.grad_clip ? c.grad_clip / norm : 1.0;

    ++step_;
    double lr = c.learning_rate;
    if (c.warmup_steps > 0 && step_ <= c.warmup_steps)
      lr *= static_cast<double>(step_) / static_cast<double>(c.warmup_steps);
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step_));
    const auto b1 = static_cast<Scalar>(c.beta1), b2 = static_cast<Scalar>(c.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      Scalar* w = p.value.data();
      const Scalar* g = p.grad.data();
      Scalar* m = m_[i].data();
      Scalar* v = v_[i].data();
      const auto decay = static_cast<Scalar>(p.decay ? c.weight_decay : 0.0);
      for (Eigen::Index k = 0; k < p.value.size(); ++k) {
        const Scalar gk = g[k] * static_cast<Scalar>(clip);
        m[k] = b1 * m[k] + (Scalar(1) - b1) * gk;
        v[k] = b2 * v[k] + (Scalar(1) - b2) * gk * gk;
        const Scalar mhat = m[k] / static_cast<Scalar>(bc1);
        const Scalar vhat = v[k] / static_cast<Scalar>(bc2);
        w[k] -= static_cast<Scalar>(lr) * (mhat / (std::sqrt(vhat) + static_cast<Scalar>(c.adam_eps)) + decay * w[k]);
      }
    }
    return norm;
  }

 private:
  std::vector<Matrix> m_, v_;
  std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints
//
//   magic "MCFGCKPT", u32 version, u32 json length, config JSON (includes the
//   vocabulary), u64 vocab hash, u64 training step, u64 rng state,
//   u32 tensor count, then per tensor: u32 name length, name, u8 dtype
//   (0 = f32), u32 rank, u64 dims[rank], row-major little-endian data.
// Optimizer moments are stored as tensors named "adam.m.<param>" and
// "adam.v.<param>".
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'M', 'C', 'F', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> vocab;
  std::uint64_t vocab_hash = 0;
  std::int64_t step = 0;
  std::uint64_t rng_state = 0;
  Model model;
  std::optional<AdamW<float>> optimizer;
  // Free-form provenance (grammar hash, metadata depth, corpus seed, ...).
  nlohmann::json info = nlohmann::json::object();

  explicit Checkpoint(const ModelConfig& c) : config(c), model(c) {}
};

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  std::ostringstream out(std::ios::binary);
  nlohmann::json meta;
  meta["config"] = ck.config;
  meta["vocab"] = ck.vocab;
  meta["info"] = ck.info;
  const std::string blob = meta.dump();
  out.write(kCheckpointMagic, 8);
  io::put<std::uint32_t>(out, kCheckpointVersion);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  io::put<std::uint64_t>(out, ck.vocab_hash);
  io::put<std::uint64_t>(out, static_cast<std::uint64_t>(ck.step));
  io::put<std::uint64_t>(out, ck.rng_state);

  struct Named {
    std::string name;
    const Model::Matrix* m;
  };
  std::vector<Named> tensors;
  for (const auto& p : ck.model.params()) tensors.push_back({p.name, &p.value});
  if (ck.optimizer) {
    auto& opt = const_cast<AdamW<float>&>(*ck.optimizer);
    for (std::size_t i = 0; i < ck.model.params().size(); ++i) {
      tensors.push_back({"adam.m." + ck.model.params()[i].name, &opt.first_moment()[i]});
      tensors.push_back({"adam.v." + ck.model.params()[i].name, &opt.second_moment()[i]});
    }
  }
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    io::put<std::uint8_t>(out, 0);
    io::put<std::uint32_t>(out, 2);
    io::put<std::uint64_t>(out, static_cast<std::uint64_t>(t.m->rows()));
    io::put<std::uint64_t>(out, static_cast<std::uint64_t>(t.m->cols()));
    for (Eigen::Index k = 0; k < t.m->size(); ++k) io::put_f32(out, t.m->data()[k]);
  }
  const std::string s = out.str();
  return {s.begin(), s.end()};
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("not a metacfg checkpoint");
  if (const auto v = io::get<std::uint32_t>(in); v != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(v));
  std::string blob(io::get<std::uint32_t>(in), '\0');
  if (!in.read(blob.data(), static_cast<std::streamsize>(blob.size())))
    throw std::runtime_error("truncated checkpoint");
  const auto meta = nlohmann::json::parse(blob);
  Checkpoint ck(meta.at("config").get<ModelConfig>());
  ck.vocab = meta.at("vocab").get<std::vector<std::string>>();
  ck.info = meta.value("info", nlohmann::json::object());
  ck.vocab_hash = io::get<std::uint64_t>(in);
  ck.step = static_cast<std::int64_t>(io::get<std::uint64_t>(in));
  ck.rng_state = io::get<std::uint64_t>(in);
  const auto count = io::get<std::uint32_t>(in);
  std::map<std::string, Model::Matrix> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(io::get<std::uint32_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    if (io::get<std::uint8_t>(in) != 0) throw std::runtime_error("unsupported tensor dtype in " + name);
    if (io::get<std::uint32_t>(in) != 2) throw std::runtime_error("unsupported tensor rank in " + name);
    const auto rows = io::get<std::uint64_t>(in), cols = io::get<std::uint64_t>(in);
    Model::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = io::get_f32(in);
    tensors.emplace(std::move(name), std::move(m));
  }
  for (auto& p : ck.model.params()) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint is missing tensor " + p.name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw std::runtime_error("shape mismatch for tensor " + p.name);
    p.value = it->second;
  }
  if (tensors.count("adam.m." + ck.model.params()[0].name)) {
    AdamW<float> opt(ck.model);
    opt.set_step(ck.step);
    for (std::size_t i = 0; i < ck.model.params().size(); ++i) {
      opt.first_moment()[i] = tensors.at("adam.m." + ck.model.params()[i].name);
      opt.second_moment()[i] = tensors.at("adam.v." + ck.model.params()[i].name);
    }
    ck.optimizer = std::move(opt);
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

inline std::uint64_t checkpoint_id(const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  Fnv1a h;
  h.update(bytes.data(), bytes.size());
  return h.digest();
}

inline Checkpoint new_checkpoint(const ModelConfig& config, const Vocabulary& vocab) {
  if (config.vocab_size != static_cast<int>(vocab.size()))
    throw std::invalid_argument("config vocab_size " + std::to_string(config.vocab_size) +
                                " does not match vocabulary size " + std::to_string(vocab.size()));
  Checkpoint ck(config);
  ck.vocab = vocab.names();
  ck.vocab_hash = vocab.hash();
  ck.rng_state = derive_seed(config.seed, SeedStream::kMisc, 0);
  return ck;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct LossTraceRow {
  std::int64_t step = 0;
  double train_loss = 0.0;
  // NaN when the corresponding held-out set was not evaluated.
  double test_loss_no_meta = std::numeric_limits<double>::quiet_NaN();
  double test_loss_with_meta = std::numeric_limits<double>::quiet_NaN();
};

struct TrainSchedule {
  std::size_t epochs = 1;
  // Evaluate held-out loss every this many steps (and at the final step).
  std::int64_t eval_every = 1000;
  // Stop after this many optimizer steps in total; 0 runs the full schedule.
  std::int64_t max_steps = 0;
  const std::vector<TrainingRecord>* test_no_meta = nullptr;
  const std::vector<TrainingRecord>* test_with_meta = nullptr;
  // Called after every optimizer step with (step, batch loss).
  std::function<void(std::int64_t, double)> on_step;
  // Called whenever a trace row is emitted.
  std::function<void(const LossTraceRow&)> on_eval;
};

inline double mean_loss(const Model& model, const std::vector<TrainingRecord>& records,
                        std::size_t batch_size = 64) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    Batch b;
    for (std::size_t k = start; k < std::min(records.size(), start + batch_size); ++k) b.add(records[k]);
    const std::size_t n = b.loss_positions();
    total += model.loss(b) * static_cast<double>(n);
    count += n;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

// Single pass (per epoch) over `corpus` in order, batch_size records per step.
// Batches are a pure function of the step index, so training resumed from a
// checkpoint at step s replays exactly the same updates.
inline std::vector<LossTraceRow> train(Checkpoint& ck, const std::vector<TrainingRecord>& corpus,
                                       const TrainSchedule& schedule) {
  for (const auto& r : corpus)
    for (TokenId t : r.tokens)
      if (t >= static_cast<TokenId>(ck.config.vocab_size))
        throw std::invalid_argument("corpus token outside the checkpoint vocabulary");
  if (!ck.optimizer) ck.optimizer.emplace(ck.model);
  const auto bs = static_cast<std::size_t>(ck.config.batch_size);
  const auto steps_per_epoch = static_cast<std::int64_t>((corpus.size() + bs - 1) / bs);
  std::int64_t total_steps = steps_per_epoch * static_cast<std::int64_t>(schedule.epochs);
  if (schedule.max_steps > 0) total_steps = std::min(total_steps, schedule.max_steps);

  std::vector<LossTraceRow> trace;
  Model::Cache cache;
  double window = 0.0;
  std::int64_t window_steps = 0;
  while (ck.step < total_steps) {
    const std::int64_t in_epoch = ck.step % steps_per_epoch;
    Batch b;
    const std::size_t start = static_cast<std::size_t>(in_epoch) * bs;
    for (std::size_t k = start; k < std::min(corpus.size(), start + bs); ++k) b.add(corpus[k]);
    ck.model.zero_grad();
    const double loss = ck.model.loss_and_backward(b, cache);
    if (!std::isfinite(loss)) throw TrainingDiverged(ck.step, loss);
    ck.optimizer->update(ck.model);
    ++ck.step;
    window += loss;
    ++window_steps;
    if (schedule.on_step) schedule.on_step(ck.step, loss);
    if ((schedule.eval_every > 0 && ck.step % schedule.eval_every == 0) || ck.step == total_steps) {
      LossTraceRow row;
      row.step = ck.step;
      row.train_loss = window / static_cast<double>(window_steps);
      if (schedule.test_no_meta) row.test_loss_no_meta = mean_loss(ck.model, *schedule.test_no_meta);
      if (schedule.test_with_meta) row.test_loss_with_meta = mean_loss(ck.model, *schedule.test_with_meta);
      if (!std::isfinite(row.train_loss)) throw TrainingDiverged(ck.step, row.train_loss);
      trace.push_back(row);
      if (schedule.on_eval) schedule.on_eval(row);
      window = 0.0;
      window_steps = 0;
    }
  }
  return trace;
}

inline void write_loss_trace(std::ostream& out, const std::vector<LossTraceRow>& trace) {
  out << "step,train_loss,test_loss_no_meta,test_loss_with_meta\n";
  auto field = [](double v) {
    if (!std::isfinite(v)) return std::string();
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
  };
  for (const auto& r : trace)
    out << r.step << ',' << field(r.train_loss) << ',' << field(r.test_loss_no_meta) << ','
        << field(r.test_loss_with_meta) << "\n";
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

// Ancestral sampling at temperature 1 until [EOS] or max_new_tokens.
inline GenerationResult generate(const Model& model, const std::vector<TokenId>& prompt,
                                 std::size_t max_new_tokens, Rng& rng) {
  GenerationResult out;
  std::vector<TokenId> seq = prompt;
  const auto limit = static_cast<std::size_t>(model.config().max_seq_len);
  if (seq.size() > limit) throw std::invalid_argument("prompt longer than max_seq_len");
  for (std::size_t step = 0; step < max_new_tokens; ++step) {
    if (seq.size() >= limit) break;
    const auto logits = model.logits(seq);
    const auto p = Model::softmax_row(logits, logits.rows() - 1);
    double u = rng.uniform_real();
    std::size_t pick = p.size() - 1;
    for (std::size_t t = 0; t < p.size(); ++t) {
      if (u < p[t]) {
        pick = t;
        break;
      }
      u -= p[t];
    }
    if (pick == Vocabulary::kEos) return out;
    seq.push_back(static_cast<TokenId>(pick));
    out.tokens.push_back(static_cast<TokenId>(pick));
  }
  out.truncated = true;
  return out;
}

inline Generator model_generator(const Model& model, std::size_t max_new_tokens) {
  return [&model, max_new_tokens](const std::vector<TokenId>& prompt, Rng& rng) {
    return generate(model, prompt, max_new_tokens, rng);
  };
}

// Residual stream after each requested block; layer 0 is the embedding output.
struct HiddenStates {
  std::vector<int> layers;
  std::vector<Model::Matrix> states;  // [positions x hidden] per requested layer
};

inline HiddenStates extract_hidden(const Model& model, const std::vector<TokenId>& tokens,
                                   const std::vector<int>& layers) {
  for (int l : layers)
    if (l < 0 || l > model.config().layers)
      throw std::out_of_range("layer " + std::to_string(l) + " outside [0, " +
                              std::to_string(model.config().layers) + "]");
  std::vector<Model::Matrix> all;
  model.logits(tokens, &all);
  HiddenStates out;
  out.layers = layers;
  for (int l : layers) out.states.push_back(all[l]);
  return out;
}

}  // namespace metacfg
