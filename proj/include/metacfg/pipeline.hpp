#pragma once

// Train / evaluate drivers shared by the command-line tool and the acceptance
// runner. A run is fully determined by (grammar, D_M, RunConfig).

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metacfg/corpus.hpp"
#include "metacfg/eval.hpp"
#include "metacfg/grammar.hpp"
#include "metacfg/model.hpp"
#include "metacfg/probe.hpp"
#include "metacfg/sampler.hpp"
#include "metacfg/training.hpp"

namespace metacfg {

struct DataConfig {
  std::size_t train_sentences = 200'000;
  std::size_t test_sentences = 10'000;
  std::uint64_t seed = 0;
  std::size_t epochs = 1;
  std::int64_t eval_every = 1000;
  std::int64_t max_steps = 0;
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
};

inline void to_json(nlohmann::json& j, const DataConfig& d) {
  j = {{"train_sentences", d.train_sentences}, {"test_sentences", d.test_sentences},
       {"seed", d.seed},                       {"epochs", d.epochs},
       {"eval_every", d.eval_every},           {"max_steps", d.max_steps}};
}

inline void from_json(const nlohmann::json& j, DataConfig& d) {
  DataConfig def;
  d.train_sentences = j.value("train_sentences", def.train_sentences);
  d.test_sentences = j.value("test_sentences", def.test_sentences);
  d.seed = j.value("seed", def.seed);
  d.epochs = j.value("epochs", def.epochs);
  d.eval_every = j.value("eval_every", def.eval_every);
  d.max_steps = j.value("max_steps", def.max_steps);
}

// {"model": {...}, "data": {...}}; missing keys keep the desk-scale defaults.
// vocab_size is always taken from the grammar.
inline RunConfig parse_run_config(const nlohmann::json& j, const Vocabulary& vocab) {
  RunConfig rc;
  rc.model = ModelConfig::desk_preset(static_cast<int>(vocab.size()));
  if (j.contains("model")) {
    nlohmann::json m = rc.model;
    m.erase("ff_hidden");
    m.update(j.at("model"));
    rc.model = m.get<ModelConfig>();
  }
  rc.model.vocab_size = static_cast<int>(vocab.size());
  if (j.contains("data")) rc.data = j.at("data").get<DataConfig>();
  for (const auto& key : j.items())
    if (key.key() != "model" && key.key() != "data")
      throw std::invalid_argument("unknown config section '" + key.key() + "'");
  rc.model.validate();
  return rc;
}

// Held-out sentences are drawn from a separate seed stream of the data seed.
inline std::vector<SampledSentence> held_out_sentences(const HierarchicalGrammar& g, const DataConfig& d) {
  return sample_batch(g, d.test_sentences, d.seed, SeedStream::kTest);
}

inline std::vector<TrainingRecord> inference_records(const Vocabulary& vocab, const SymbolTable& sym,
                                                     const std::vector<SampledSentence>& sentences,
                                                     bool with_metadata, int metadata_depth) {
  std::vector<TrainingRecord> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(build_inference_record(vocab, sym, s, with_metadata, metadata_depth));
  return out;
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossTraceRow> trace;
};

inline TrainResult train_run(const HierarchicalGrammar& g, int metadata_depth, const RunConfig& rc,
                             std::function<void(const LossTraceRow&)> on_eval = {}) {
  const Vocabulary vocab(g);
  const auto sentences = sample_batch(g, rc.data.train_sentences, rc.data.seed, SeedStream::kTrain);
  const auto corpus = build_training_corpus(vocab, g.symbols(), sentences, metadata_depth, rc.data.seed);
  const auto test = held_out_sentences(g, rc.data);
  const auto no_meta = inference_records(vocab, g.symbols(), test, false, metadata_depth);
  const auto with_meta = inference_records(vocab, g.symbols(), test, true, metadata_depth);

  TrainResult out{new_checkpoint(rc.model, vocab), {}};
  out.checkpoint.info = {{"grammar_hash", hex64(g.hash())},
                         {"metadata_depth", metadata_depth},
                         {"data", rc.data}};
  TrainSchedule s;
  s.epochs = rc.data.epochs;
  s.eval_every = rc.data.eval_every;
  s.max_steps = rc.data.max_steps;
  if (!test.empty()) {
    s.test_no_meta = &no_meta;
    if (metadata_depth > 0) s.test_with_meta = &with_meta;
  }
  s.on_eval = std::move(on_eval);
  out.trace = train(out.checkpoint, corpus, s);
  return out;
}

// D_M recorded by train_run; 0 when absent.
inline int checkpoint_metadata_depth(const Checkpoint& ck) { return ck.info.value("metadata_depth", 0); }

inline std::uint64_t checkpoint_grammar_hash(const Checkpoint& ck) {
  return ck.info.contains("grammar_hash") ? std::stoull(ck.info.at("grammar_hash").get<std::string>(), nullptr, 16)
                                          : 0;
}

struct EvalConfig {
  std::set<std::string> suites{"loss", "ga", "ece", "probe"};
  std::uint64_t seed = 0;
  std::size_t test_sentences = 2000;
  GaOptions ga;
  std::size_t calibration_bins = 15;
  std::size_t probe_sentences = 2000;
  // Empty means every layer 0..L.
  std::vector<int> probe_layers;
  std::vector<std::size_t> probe_positions{0, 5, 10};
  // Empty means 1..D.
  std::vector<int> probe_depths;
};

inline std::set<std::string> parse_suites(const std::string& list) {
  static const std::set<std::string> known{"loss", "ga", "ece", "probe"};
  std::set<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (!known.count(item)) throw std::invalid_argument("unknown suite '" + item + "'");
    out.insert(item);
  }
  if (out.empty()) throw std::invalid_argument("empty suite list");
  return out;
}

inline EvalReport evaluate(const Checkpoint& ck, const HierarchicalGrammar& g, const EvalConfig& ec) {
  const Vocabulary vocab(g);
  if (vocab.hash() != ck.vocab_hash) throw ReportError("checkpoint vocabulary does not match the grammar");
  const std::uint64_t gh = checkpoint_grammar_hash(ck);
  if (gh != 0 && gh != g.hash()) throw ReportError("checkpoint was trained on grammar " + hex64(gh));
  const int dm = checkpoint_metadata_depth(ck);
  const SymbolTable& sym = g.symbols();

  Provenance header{checkpoint_id(ck), ck.vocab_hash, g.hash(), ec.seed, 0};
  auto prov = [&](std::size_t n) {
    Provenance p = header;
    p.data_size = n;
    return p;
  };

  std::vector<SampledSentence> test;
  if (ec.suites.count("loss") || ec.suites.count("ece"))
    test = sample_batch(g, ec.test_sentences, ec.seed, SeedStream::kTest);

  std::vector<LossReport> losses;
  if (ec.suites.count("loss")) {
    for (bool with : {false, true}) {
      if (with && dm == 0) continue;
      auto rep = ntp_loss(ck.model, inference_records(vocab, sym, test, with, dm), g.depth());
      rep.with_metadata = with;
      rep.metadata_depth = dm;
      rep.provenance = prov(test.size());
      losses.push_back(std::move(rep));
    }
  }
  std::optional<GaReport> ga;
  if (ec.suites.count("ga")) {
    GaOptions opt = ec.ga;
    opt.seed = ec.seed;
    ga = GaReport{ga_sweep(ck.model, g, vocab, opt), opt, prov(opt.n)};
  }
  std::optional<CalibrationReport> cal;
  if (ec.suites.count("ece")) {
    cal = expected_calibration_error(ck.model, inference_records(vocab, sym, test, false, dm),
                                     ec.calibration_bins);
    cal->provenance = prov(test.size());
  }
  std::optional<ProbeReport> probe;
  if (ec.suites.count("probe")) {
    std::vector<int> layers = ec.probe_layers, depths = ec.probe_depths;
    if (layers.empty())
      for (int l = 0; l <= ck.config.layers; ++l) layers.push_back(l);
    if (depths.empty())
      for (int d = 1; d <= g.depth(); ++d) depths.push_back(d);
    const auto sentences = sample_batch(g, ec.probe_sentences, ec.seed, SeedStream::kProbe);
    probe = ProbeReport{probing_accuracy(ck.model, vocab, g, sentences, layers, ec.probe_positions, depths),
                        prov(sentences.size())};
  }
  return assemble_report(header, dm, std::move(losses), std::move(ga), std::move(cal), std::move(probe));
}

}  // namespace metacfg
