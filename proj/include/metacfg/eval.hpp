#pragma once

// Scalar metrics over a trained checkpoint: held-out next-token loss (overall
// and per terminal position), grammatical accuracy over prompt lengths,
// expected calibration error, and the JSON report that collects them.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metacfg/corpus.hpp"
#include "metacfg/ga.hpp"
#include "metacfg/grammar.hpp"
#include "metacfg/oracle.hpp"
#include "metacfg/probe.hpp"
#include "metacfg/training.hpp"
#include "metacfg/verifier.hpp"

namespace metacfg {

inline constexpr const char* kReportSchema = "metacfg.eval/1";

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) comp_ += (sum_ - t) + x;
    else comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0, comp_ = 0.0;
};

// Where a sub-report came from; assemble_report refuses to mix sources.
struct Provenance {
  std::uint64_t checkpoint_id = 0;
  std::uint64_t vocab_hash = 0;
  std::uint64_t grammar_hash = 0;
  std::uint64_t seed = 0;
  std::size_t data_size = 0;
};

// ---------------------------------------------------------------------------
// Next-token loss
// ---------------------------------------------------------------------------

struct PositionLoss {
  double mean = 0.0;
  std::size_t count = 0;
};

struct LossReport {
  // Nats per loss-masked token.
  double mean_loss = 0.0;
  std::size_t tokens = 0;
  std::size_t records = 0;
  // Keyed by terminal position of the predicted token (0 = first terminal;
  // the [EOS] target of a length-K sentence sits at position K). Each entry
  // averages only over records long enough to have that position.
  std::map<std::size_t, PositionLoss> positions;
  bool with_metadata = false;
  int metadata_depth = 0;
  Provenance provenance;

  // The positions tabulated in reports.
  static std::vector<std::size_t> reported_positions() { return {0, 5, 10, 25, 50}; }
};

inline LossReport ntp_loss(const Model& model, const std::vector<TrainingRecord>& records, int depth,
                           std::size_t batch_size = 64) {
  LossReport rep;
  std::map<std::size_t, CompensatedSum> sums;
  CompensatedSum total;
  const std::size_t first = first_terminal_position(depth);
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    Batch b;
    const std::size_t end = std::min(records.size(), start + batch_size);
    for (std::size_t k = start; k < end; ++k) {
      for (TokenId t : records[k].tokens)
        if (t >= static_cast<TokenId>(model.config().vocab_size))
          throw std::invalid_argument("record token outside the checkpoint vocabulary");
      b.add(records[k]);
    }
    Model::Cache cache;
    model.forward(b, cache);
    for (std::size_t s = 0; s < b.sequences(); ++s)
      for (std::size_t t = b.offsets[s]; t < b.offsets[s + 1]; ++t) {
        const auto target = b.targets[t];
        if (target < 0) continue;
        const auto p = Model::softmax_row(cache.logits, static_cast<Eigen::Index>(t));
        const double nll = -std::log(std::max(p[target], 1e-300));
        const std::size_t pos = t - b.offsets[s] + 1 - first;
        sums[pos].add(nll);
        ++rep.positions[pos].count;
        total.add(nll);
        ++rep.tokens;
      }
  }
  rep.records = records.size();
  for (auto& [pos, pl] : rep.positions) pl.mean = sums[pos].value() / static_cast<double>(pl.count);
  rep.mean_loss = rep.tokens ? total.value() / static_cast<double>(rep.tokens) : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Grammatical accuracy
// ---------------------------------------------------------------------------

struct GaReport {
  GaTable table;
  GaOptions options;
  Provenance provenance;
};

// Continuations longer than the longest sentence are cut off and counted as
// failures, which bounds generation cost without changing any verdict.
inline GaTable ga_sweep(const Model& model, const HierarchicalGrammar& g, const Vocabulary& vocab,
                        const GaOptions& opt) {
  const std::size_t max_new = static_cast<std::size_t>(max_yield(g.depth(), 0)) + 1;
  return ga_sweep_with(g, vocab, model_generator(model, max_new), mixture(g), opt);
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

struct CalibrationBin {
  std::size_t count = 0;
  double accuracy = 0.0;
  double confidence = 0.0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double ece = 0.0;
  std::size_t n = 0;
  Provenance provenance;
};

struct Prediction {
  double confidence = 0.0;
  bool correct = false;
};

// Bins [k/m, (k+1)/m) for k < m-1 and [(m-1)/m, 1] for the last one.
inline CalibrationReport expected_calibration_error(const std::vector<Prediction>& predictions,
                                                    std::size_t bins) {
  if (bins < 1) throw std::invalid_argument("ECE needs at least one bin");
  CalibrationReport rep;
  rep.bins.resize(bins);
  std::vector<CompensatedSum> conf(bins), hits(bins);
  for (const auto& p : predictions) {
    auto k = static_cast<std::size_t>(std::floor(p.confidence * static_cast<double>(bins)));
    if (k >= bins) k = bins - 1;
    ++rep.bins[k].count;
    conf[k].add(p.confidence);
    hits[k].add(p.correct ? 1.0 : 0.0);
  }
  rep.n = predictions.size();
  CompensatedSum ece;
  for (std::size_t k = 0; k < bins; ++k) {
    auto& b = rep.bins[k];
    if (b.count == 0) continue;
    b.accuracy = hits[k].value() / static_cast<double>(b.count);
    b.confidence = conf[k].value() / static_cast<double>(b.count);
    ece.add(static_cast<double>(b.count) / static_cast<double>(rep.n) * std::abs(b.accuracy - b.confidence));
  }
  rep.ece = ece.value();
  return rep;
}

// Confidence = max softmax probability; correct = argmax (lowest token id on
// ties) equals the target.
inline std::vector<Prediction> model_predictions(const Model& model,
                                                 const std::vector<TrainingRecord>& records,
                                                 std::size_t batch_size = 64) {
  std::vector<Prediction> out;
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    Batch b;
    for (std::size_t k = start; k < std::min(records.size(), start + batch_size); ++k) b.add(records[k]);
    Model::Cache cache;
    model.forward(b, cache);
    for (std::size_t t = 0; t < b.rows(); ++t) {
      if (b.targets[t] < 0) continue;
      const auto p = Model::softmax_row(cache.logits, static_cast<Eigen::Index>(t));
      std::size_t arg = 0;
      for (std::size_t c = 1; c < p.size(); ++c)
        if (p[c] > p[arg]) arg = c;
      out.push_back({p[arg], static_cast<std::int64_t>(arg) == b.targets[t]});
    }
  }
  return out;
}

// The same stream for the exact predictor, over the terminal tokens and [EOS]
// of each sentence (ties go to the lowest token id, so [EOS] wins ties).
inline std::vector<Prediction> oracle_predictions(const MetadataOracle& oracle, const Vocabulary& vocab,
                                                  const std::vector<SampledSentence>& sentences) {
  const SymbolTable& sym = oracle.grammar().symbols();
  std::vector<Prediction> out;
  for (const auto& s : sentences) {
    TerminalString prefix;
    for (std::size_t t = 0; t <= s.size(); ++t) {
      const auto d = oracle.next_token(prefix);
      TokenId arg = Vocabulary::kEos;
      double best = d.eos;
      for (std::size_t k = 0; k < d.terminal.size(); ++k) {
        const TokenId tok = vocab.terminal_token(sym, sym.terminals()[k]);
        if (d.terminal[k] > best || (d.terminal[k] == best && tok < arg)) {
          best = d.terminal[k];
          arg = tok;
        }
      }
      const TokenId target = t < s.size() ? vocab.terminal_token(sym, s.terminals[t]) : Vocabulary::kEos;
      out.push_back({best, arg == target});
      if (t < s.size()) prefix.push_back(s.terminals[t]);
    }
  }
  return out;
}

inline CalibrationReport expected_calibration_error(const Model& model,
                                                    const std::vector<TrainingRecord>& records,
                                                    std::size_t bins = 15) {
  return expected_calibration_error(model_predictions(model, records), bins);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProbeReport {
  std::vector<ProbeResult> results;
  Provenance provenance;
};

struct EvalReport {
  std::string schema = kReportSchema;
  Provenance provenance;
  int metadata_depth = 0;
  std::vector<LossReport> losses;
  std::optional<GaReport> ga;
  std::optional<CalibrationReport> calibration;
  std::optional<ProbeReport> probe;
};

inline void check_provenance(const Provenance& header, const Provenance& part, const char* what) {
  if (part.checkpoint_id != header.checkpoint_id)
    throw ReportError(std::string(what) + " was computed from checkpoint " + hex64(part.checkpoint_id) +
                      ", report is for " + hex64(header.checkpoint_id));
  if (part.vocab_hash != header.vocab_hash)
    throw ReportError(std::string(what) + " uses a different vocabulary");
  if (part.grammar_hash != 0 && header.grammar_hash != 0 && part.grammar_hash != header.grammar_hash)
    throw ReportError(std::string(what) + " uses a different grammar");
}

inline EvalReport assemble_report(const Provenance& header, int metadata_depth,
                                  std::vector<LossReport> losses, std::optional<GaReport> ga,
                                  std::optional<CalibrationReport> calibration,
                                  std::optional<ProbeReport> probe) {
  for (const auto& l : losses) check_provenance(header, l.provenance, "loss report");
  if (ga) check_provenance(header, ga->provenance, "GA report");
  if (calibration) check_provenance(header, calibration->provenance, "calibration report");
  if (probe) check_provenance(header, probe->provenance, "probe report");
  EvalReport r;
  r.provenance = header;
  r.metadata_depth = metadata_depth;
  r.losses = std::move(losses);
  r.ga = std::move(ga);
  r.calibration = std::move(calibration);
  r.probe = std::move(probe);
  return r;
}

inline void to_json(nlohmann::json& j, const Provenance& p) {
  j = {{"checkpoint_id", hex64(p.checkpoint_id)},
       {"vocab_hash", hex64(p.vocab_hash)},
       {"grammar_hash", hex64(p.grammar_hash)},
       {"seed", p.seed},
       {"data_size", p.data_size}};
}

inline void from_json(const nlohmann::json& j, Provenance& p) {
  p.checkpoint_id = std::stoull(j.at("checkpoint_id").get<std::string>(), nullptr, 16);
  p.vocab_hash = std::stoull(j.at("vocab_hash").get<std::string>(), nullptr, 16);
  p.grammar_hash = std::stoull(j.at("grammar_hash").get<std::string>(), nullptr, 16);
  p.seed = j.at("seed").get<std::uint64_t>();
  p.data_size = j.at("data_size").get<std::size_t>();
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  using nlohmann::json;
  json j;
  j["schema_version"] = r.schema;
  j["provenance"] = r.provenance;
  j["metadata_depth"] = r.metadata_depth;
  j["loss_units"] = "nats per loss-masked token";
  j["losses"] = json::array();
  for (const auto& l : r.losses) {
    json positions = json::array();
    for (const auto& [pos, pl] : l.positions) positions.push_back({{"position", pos}, {"mean", pl.mean}, {"count", pl.count}});
    j["losses"].push_back({{"condition", l.with_metadata ? "with_metadata" : "no_metadata"},
                           {"metadata_depth", l.metadata_depth},
                           {"mean_loss", l.mean_loss},
                           {"tokens", l.tokens},
                           {"records", l.records},
                           {"positions", positions},
                           {"provenance", l.provenance}});
  }
  if (r.ga) {
    json cells = json::array();
    for (const auto& c : r.ga->table)
      cells.push_back({{"prompt_length", c.prompt_length},
                       {"accuracy", c.accuracy},
                       {"stderr", c.stderr_},
                       {"n", c.n},
                       {"n_requested", c.n_requested},
                       {"truncated", c.truncated}});
    j["grammatical_accuracy"] = {{"cells", cells},
                                 {"stderr_kind", "binomial standard error"},
                                 {"prompt_source", r.ga->options.source == PromptSource::kMixture ? "mixture" : "hierarchical"},
                                 {"seed", r.ga->options.seed},
                                 {"provenance", r.ga->provenance}};
  }
  if (r.calibration) {
    json bins = json::array();
    for (const auto& b : r.calibration->bins)
      bins.push_back({{"count", b.count}, {"accuracy", b.accuracy}, {"confidence", b.confidence}});
    j["calibration"] = {{"ece", r.calibration->ece},
                        {"n", r.calibration->n},
                        {"bins", bins},
                        {"provenance", r.calibration->provenance}};
  }
  if (r.probe) {
    json rows = json::array();
    for (const auto& p : r.probe->results)
      rows.push_back({{"layer", p.layer},
                      {"position", p.position},
                      {"depth", p.depth},
                      {"per_level_accuracy", p.per_level_accuracy},
                      {"all_correct_accuracy", p.all_correct_accuracy},
                      {"chance_rate", p.chance_rate},
                      {"n_test", p.n_test},
                      {"stderr", p.stderr_}});
    j["probe"] = {{"results", rows}, {"provenance", r.probe->provenance}};
  }
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  const auto schema = j.at("schema_version").get<std::string>();
  if (schema != kReportSchema) throw ReportError("unsupported report schema '" + schema + "'");
  EvalReport r;
  r.schema = schema;
  r.provenance = j.at("provenance").get<Provenance>();
  r.metadata_depth = j.at("metadata_depth").get<int>();
  for (const auto& l : j.at("losses")) {
    LossReport lr;
    lr.with_metadata = l.at("condition").get<std::string>() == "with_metadata";
    lr.metadata_depth = l.at("metadata_depth").get<int>();
    lr.mean_loss = l.at("mean_loss").get<double>();
    lr.tokens = l.at("tokens").get<std::size_t>();
    lr.records = l.at("records").get<std::size_t>();
    lr.provenance = l.at("provenance").get<Provenance>();
    for (const auto& p : l.at("positions"))
      lr.positions[p.at("position").get<std::size_t>()] = {p.at("mean").get<double>(), p.at("count").get<std::size_t>()};
    r.losses.push_back(std::move(lr));
  }
  if (j.contains("grammatical_accuracy")) {
    const auto& g = j["grammatical_accuracy"];
    GaReport ga;
    ga.provenance = g.at("provenance").get<Provenance>();
    ga.options.seed = g.at("seed").get<std::uint64_t>();
    ga.options.source = g.at("prompt_source").get<std::string>() == "mixture" ? PromptSource::kMixture
                                                                             : PromptSource::kHierarchical;
    ga.options.prompt_lengths.clear();
    for (const auto& c : g.at("cells")) {
      GaCell cell;
      cell.prompt_length = c.at("prompt_length").get<std::size_t>();
      cell.accuracy = c.at("accuracy").get<double>();
      cell.stderr_ = c.at("stderr").get<double>();
      cell.n = c.at("n").get<std::size_t>();
      cell.n_requested = c.at("n_requested").get<std::size_t>();
      cell.truncated = c.at("truncated").get<std::size_t>();
      ga.options.prompt_lengths.push_back(cell.prompt_length);
      ga.options.n = cell.n_requested;
      ga.table.push_back(cell);
    }
    r.ga = std::move(ga);
  }
  if (j.contains("calibration")) {
    const auto& c = j["calibration"];
    CalibrationReport cr;
    cr.ece = c.at("ece").get<double>();
    cr.n = c.at("n").get<std::size_t>();
    cr.provenance = c.at("provenance").get<Provenance>();
    for (const auto& b : c.at("bins"))
      cr.bins.push_back({b.at("count").get<std::size_t>(), b.at("accuracy").get<double>(),
                         b.at("confidence").get<double>()});
    r.calibration = std::move(cr);
  }
  if (j.contains("probe")) {
    ProbeReport pr;
    pr.provenance = j["probe"].at("provenance").get<Provenance>();
    for (const auto& p : j["probe"].at("results")) {
      ProbeResult res;
      res.layer = p.at("layer").get<int>();
      res.position = p.at("position").get<std::size_t>();
      res.depth = p.at("depth").get<int>();
      res.per_level_accuracy = p.at("per_level_accuracy").get<std::vector<double>>();
      res.all_correct_accuracy = p.at("all_correct_accuracy").get<double>();
      res.chance_rate = p.at("chance_rate").get<double>();
      res.n_test = p.at("n_test").get<std::size_t>();
      res.stderr_ = p.at("stderr").get<double>();
      pr.results.push_back(std::move(res));
    }
    r.probe = std::move(pr);
  }
  return r;
}

inline void write_loss_csv(std::ostream& out, const std::vector<LossReport>& losses) {
  out << "condition,metadata_depth,position,mean_loss,count\n";
  for (const auto& l : losses) {
    const char* cond = l.with_metadata ? "with_metadata" : "no_metadata";
    out << cond << ',' << l.metadata_depth << ",all," << l.mean_loss << ',' << l.tokens << "\n";
    for (const auto& [pos, pl] : l.positions)
      out << cond << ',' << l.metadata_depth << ',' << pos << ',' << pl.mean << ',' << pl.count << "\n";
  }
}

inline void write_ga_csv(std::ostream& out, const GaTable& table) {
  out << "prompt_length,accuracy,stderr,n,n_requested,truncated\n";
  for (const auto& c : table)
    out << c.prompt_length << ',' << c.accuracy << ',' << c.stderr_ << ',' << c.n << ',' << c.n_requested
        << ',' << c.truncated << "\n";
}

inline void write_calibration_csv(std::ostream& out, const CalibrationReport& rep) {
  out << "bin,lower,upper,count,accuracy,confidence\n";
  const auto m = static_cast<double>(rep.bins.size());
  for (std::size_t k = 0; k < rep.bins.size(); ++k)
    out << k << ',' << k / m << ',' << (k + 1) / m << ',' << rep.bins[k].count << ',' << rep.bins[k].accuracy
        << ',' << rep.bins[k].confidence << "\n";
}

}  // namespace metacfg
