#pragma once

// Metadata probing: linear binary classifiers trained on frozen hidden states
// to recover the per-level rule choices. The feature for (layer l, terminal
// position i) is the mean of the hidden states of the five tokens at terminal
// positions i..i+4, computed on the all-mask inference input.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "metacfg/corpus.hpp"
#include "metacfg/grammar.hpp"
#include "metacfg/sampler.hpp"
#include "metacfg/training.hpp"
#include "metacfg/verifier.hpp"

namespace metacfg {

inline constexpr std::size_t kProbeWindow = 5;

struct ProbeFeature {
  Eigen::VectorXd vector;
  MetadataVector labels;
  int layer = 0;
  std::size_t position = 0;
};

struct ProbeDataset {
  std::vector<ProbeFeature> features;
  // Sentences shorter than position + 5 terminals.
  std::size_t skipped = 0;
};

// Mean of rows [start, start + window) of a hidden-state matrix.
inline Eigen::VectorXd window_mean(const Model::Matrix& states, std::size_t start,
                                   std::size_t window = kProbeWindow) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(states.cols());
  for (std::size_t r = start; r < start + window; ++r) acc += states.row(static_cast<Eigen::Index>(r)).cast<double>().transpose();
  return acc / static_cast<double>(window);
}

// Features for every (layer, position) pair from one forward pass per
// sentence. Keys of the returned map are (layer, position).
inline std::map<std::pair<int, std::size_t>, ProbeDataset> build_probe_datasets(
    const Model& model, const Vocabulary& vocab, const SymbolTable& sym,
    const std::vector<SampledSentence>& sentences, const std::vector<int>& layers,
    const std::vector<std::size_t>& positions) {
  std::map<std::pair<int, std::size_t>, ProbeDataset> out;
  for (int l : layers)
    for (std::size_t i : positions) out[{l, i}];
  const std::size_t first = first_terminal_position(vocab.depth());
  for (const auto& s : sentences) {
    const TrainingRecord rec = build_inference_record(vocab, sym, s, false, 0);
    const HiddenStates hs = extract_hidden(model, rec.tokens, layers);
    for (std::size_t li = 0; li < layers.size(); ++li)
      for (std::size_t i : positions) {
        ProbeDataset& ds = out[{layers[li], i}];
        if (i + kProbeWindow > s.size()) {
          ++ds.skipped;
          continue;
        }
        ds.features.push_back(ProbeFeature{window_mean(hs.states[li], first + i), s.metadata, layers[li], i});
      }
  }
  for (auto& [key, ds] : out)
    if (ds.features.empty())
      throw std::invalid_argument("no sentence is long enough for a probe at position " +
                                  std::to_string(key.second));
  return out;
}

inline ProbeDataset build_probe_dataset(const Model& model, const Vocabulary& vocab,
                                        const SymbolTable& sym,
                                        const std::vector<SampledSentence>& sentences, int layer,
                                        std::size_t position) {
  auto all = build_probe_datasets(model, vocab, sym, sentences, {layer}, {position});
  return std::move(all.begin()->second);
}

// 70 / 15 / 15 split in dataset order.
struct ProbeSplit {
  std::vector<const ProbeFeature*> train, validation, test;
};

inline ProbeSplit split_probe_dataset(const ProbeDataset& ds) {
  ProbeSplit s;
  const std::size_t n = ds.features.size();
  const std::size_t n_train = n * 70 / 100, n_val = n * 15 / 100;
  for (std::size_t k = 0; k < n; ++k) {
    auto* f = &ds.features[k];
    if (k < n_train) s.train.push_back(f);
    else if (k < n_train + n_val) s.validation.push_back(f);
    else s.test.push_back(f);
  }
  return s;
}

struct ProbeOptions {
  std::size_t max_epochs = 2000;
  std::size_t patience = 50;
};

// Logistic regression on standardized features.
struct LinearProbe {
  Eigen::VectorXd mean, inv_scale, weights;
  double bias = 0.0;
  int level = 0;
  std::size_t epochs = 0;

  double score(const Eigen::VectorXd& x) const {
    return weights.dot((x - mean).cwiseProduct(inv_scale)) + bias;
  }
  int predict(const Eigen::VectorXd& x) const { return score(x) > 0.0 ? 1 : 0; }
};

namespace detail {

inline Eigen::MatrixXd stack_features(const std::vector<const ProbeFeature*>& items) {
  Eigen::MatrixXd X(items.size(), items.empty() ? 0 : items[0]->vector.size());
  for (std::size_t k = 0; k < items.size(); ++k) X.row(static_cast<Eigen::Index>(k)) = items[k]->vector.transpose();
  return X;
}

inline Eigen::VectorXd stack_labels(const std::vector<const ProbeFeature*>& items, int level) {
  Eigen::VectorXd y(items.size());
  for (std::size_t k = 0; k < items.size(); ++k) y(static_cast<Eigen::Index>(k)) = items[k]->labels[level];
  return y;
}

inline double accuracy(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                       double b) {
  if (Z.rows() == 0) return 0.0;
  const Eigen::VectorXd s = Z * w;
  std::size_t hits = 0;
  for (Eigen::Index k = 0; k < s.size(); ++k) hits += ((s(k) + b > 0.0) ? 1.0 : 0.0) == y(k);
  return static_cast<double>(hits) / static_cast<double>(s.size());
}

}  // namespace detail

// Full-batch gradient descent on the mean logistic loss with step 1/L, where
// L = lambda_max(Z^T Z / n) / 4 bounds the curvature. The weights with the
// best validation accuracy are kept; training stops after `patience` epochs
// without improvement.
inline LinearProbe train_probe(const std::vector<const ProbeFeature*>& train,
                               const std::vector<const ProbeFeature*>& validation, int level,
                               const ProbeOptions& opt = {}) {
  if (train.empty()) throw std::invalid_argument("empty probe training split");
  for (const auto* f : train)
    if (f->labels.size() <= static_cast<std::size_t>(level) || f->labels[level] < 0 || f->labels[level] > 1)
      throw std::invalid_argument("probe labels at level " + std::to_string(level) + " are not binary");
  const Eigen::MatrixXd X = detail::stack_features(train);
  const Eigen::VectorXd y = detail::stack_labels(train, level);
  const double positives = y.sum();
  if (positives == 0.0 || positives == static_cast<double>(y.size()))
    throw std::invalid_argument("probe training split for level " + std::to_string(level) +
                                " contains a single class");

  LinearProbe probe;
  probe.level = level;
  const auto n = static_cast<double>(X.rows());
  probe.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd centered = X.rowwise() - probe.mean.transpose();
  const Eigen::VectorXd var = centered.colwise().squaredNorm().transpose() / n;
  probe.inv_scale = var.unaryExpr([](double v) { return v > 1e-12 ? 1.0 / std::sqrt(v) : 0.0; });
  const Eigen::MatrixXd Z = centered * probe.inv_scale.asDiagonal();

  Eigen::MatrixXd Zv;
  Eigen::VectorXd yv;
  if (!validation.empty()) {
    Zv = (detail::stack_features(validation).rowwise() - probe.mean.transpose()) * probe.inv_scale.asDiagonal();
    yv = detail::stack_labels(validation, level);
  }

  // Power iteration for the largest eigenvalue of [Z 1]^T [Z 1] / n.
  Eigen::VectorXd v = Eigen::VectorXd::Ones(Z.cols() + 1);
  double lambda = 1.0;
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd zv = Z * v.head(Z.cols());
    zv.array() += v(Z.cols());
    Eigen::VectorXd w(Z.cols() + 1);
    w.head(Z.cols()) = Z.transpose() * zv / n;
    w(Z.cols()) = zv.sum() / n;
    lambda = w.norm();
    if (lambda <= 0.0) break;
    v = w / lambda;
  }
  const double step = 4.0 / std::max(lambda, 1e-12);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(Z.cols());
  double b = 0.0;
  probe.weights = w;
  probe.bias = b;
  double best = validation.empty() ? 0.0 : detail::accuracy(Zv, yv, w, b);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    Eigen::VectorXd s = Z * w;
    s.array() += b;
    const Eigen::VectorXd r = s.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); }) - y;
    w -= step * (Z.transpose() * r) / n;
    b -= step * r.sum() / n;
    probe.epochs = epoch;
    if (validation.empty()) {
      probe.weights = w;
      probe.bias = b;
      continue;
    }
    const double acc = detail::accuracy(Zv, yv, w, b);
    if (acc > best) {
      best = acc;
      probe.weights = w;
      probe.bias = b;
      since_best = 0;
    } else if (++since_best >= opt.patience) {
      break;
    }
  }
  return probe;
}

struct ProbeResult {
  int layer = 0;
  std::size_t position = 0;
  int depth = 0;
  std::vector<double> per_level_accuracy;
  double all_correct_accuracy = 0.0;
  double chance_rate = 0.0;
  std::size_t n_test = 0;
  double stderr_ = 0.0;
};

// For one (layer, position) dataset: trains one classifier per level below
// max_depth and reports, for every d in `depths`, the rate at which the
// classifiers for levels 0..d-1 are all correct on the same test items.
inline std::vector<ProbeResult> probe_depths(const ProbeDataset& ds, const std::vector<int>& choice_counts,
                                             const std::vector<int>& depths, const ProbeOptions& opt = {}) {
  int max_depth = 0;
  for (int d : depths) {
    if (d < 1 || d > static_cast<int>(choice_counts.size()))
      throw std::out_of_range("probe depth " + std::to_string(d) + " outside [1, " +
                              std::to_string(choice_counts.size()) + "]");
    max_depth = std::max(max_depth, d);
  }
  for (int lvl = 0; lvl < max_depth; ++lvl)
    if (choice_counts[lvl] != 2)
      throw std::invalid_argument("level " + std::to_string(lvl) + " has " +
                                  std::to_string(choice_counts[lvl]) + " choices; binary probes need 2");
  const ProbeSplit split = split_probe_dataset(ds);
  if (split.test.empty()) throw std::invalid_argument("probe test split is empty");

  std::vector<std::vector<bool>> correct(max_depth);
  std::vector<double> level_acc(max_depth);
  for (int lvl = 0; lvl < max_depth; ++lvl) {
    const LinearProbe probe = train_probe(split.train, split.validation, lvl, opt);
    std::size_t hits = 0;
    for (const auto* f : split.test) {
      const bool ok = probe.predict(f->vector) == f->labels[lvl];
      correct[lvl].push_back(ok);
      hits += ok;
    }
    level_acc[lvl] = static_cast<double>(hits) / static_cast<double>(split.test.size());
  }

  std::vector<ProbeResult> out;
  for (int d : depths) {
    ProbeResult r;
    r.layer = ds.features.front().layer;
    r.position = ds.features.front().position;
    r.depth = d;
    r.per_level_accuracy.assign(level_acc.begin(), level_acc.begin() + d);
    std::size_t all = 0;
    for (std::size_t k = 0; k < split.test.size(); ++k) {
      bool ok = true;
      for (int lvl = 0; lvl < d; ++lvl) ok = ok && correct[lvl][k];
      all += ok;
    }
    r.n_test = split.test.size();
    r.all_correct_accuracy = static_cast<double>(all) / static_cast<double>(r.n_test);
    double combos = 1.0;
    for (int lvl = 0; lvl < d; ++lvl) combos *= choice_counts[lvl];
    r.chance_rate = 1.0 / combos;
    r.stderr_ = binomial_stderr(r.all_correct_accuracy, r.n_test);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ProbeResult> probing_accuracy(const Model& model, const Vocabulary& vocab,
                                                 const HierarchicalGrammar& g,
                                                 const std::vector<SampledSentence>& sentences,
                                                 const std::vector<int>& layers,
                                                 const std::vector<std::size_t>& positions,
                                                 const std::vector<int>& depths,
                                                 const ProbeOptions& opt = {}) {
  const auto datasets = build_probe_datasets(model, vocab, g.symbols(), sentences, layers, positions);
  std::vector<ProbeResult> out;
  for (const auto& [key, ds] : datasets) {
    auto rs = probe_depths(ds, g.choice_counts(), depths, opt);
    out.insert(out.end(), rs.begin(), rs.end());
  }
  return out;
}

inline void write_probe_csv(std::ostream& out, const std::vector<ProbeResult>& results) {
  std::size_t max_levels = 0;
  for (const auto& r : results) max_levels = std::max(max_levels, r.per_level_accuracy.size());
  out << "layer,position,depth";
  for (std::size_t k = 0; k < max_levels; ++k) out << ",acc_level_" << k;
  out << ",all_correct_acc,chance_rate,n_test,stderr\n";
  for (const auto& r : results) {
    out << r.layer << ',' << r.position << ',' << r.depth;
    for (std::size_t k = 0; k < max_levels; ++k) {
      out << ',';
      if (k < r.per_level_accuracy.size()) out << r.per_level_accuracy[k];
    }
    out << ',' << r.all_correct_accuracy << ',' << r.chance_rate << ',' << r.n_test << ',' << r.stderr_ << "\n";
  }
}

// Raw features for offline analysis: u32 layer, u32 position, u32 count,
// u32 hidden size, then count x hidden little-endian f32 values.
inline void write_hidden_dump(std::ostream& out, const ProbeDataset& ds) {
  const auto hidden = ds.features.empty() ? 0u : static_cast<std::uint32_t>(ds.features[0].vector.size());
  io::put<std::uint32_t>(out, ds.features.empty() ? 0u : static_cast<std::uint32_t>(ds.features[0].layer));
  io::put<std::uint32_t>(out, ds.features.empty() ? 0u : static_cast<std::uint32_t>(ds.features[0].position));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.features.size()));
  io::put<std::uint32_t>(out, hidden);
  for (const auto& f : ds.features)
    for (Eigen::Index k = 0; k < f.vector.size(); ++k) io::put_f32(out, static_cast<float>(f.vector(k)));
}

}  // namespace metacfg
