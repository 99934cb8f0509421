// Acceptance runner: one PASS/FAIL line per criterion.
//
//   metacfg_acceptance [--cache-dir DIR] [--only 1,2,...] [--report FILE]
//
// Desk-scale checkpoints (criteria 7-9) are cached under DIR keyed by a hash
// of grammar and run config, so reruns only retrain what changed.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metacfg/metacfg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace metacfg;

namespace {

// ---- pinned tolerances and sizes -------------------------------------------

constexpr double kC1MaxSeconds = 1.0;
constexpr std::size_t kC1MaxLength = 10;

constexpr std::size_t kC2Sentences = 100'000;
constexpr double kC2MaxSeconds = 60.0;

constexpr std::size_t kC3Prefixes = 100;
constexpr double kC3Tolerance = 1e-10;

constexpr double kC4MaxRelativeError = 1e-3;
constexpr int kC4Batches = 5;
constexpr double kC4Step = 1e-5;

constexpr std::size_t kC5Tokens = 50'000;
constexpr std::size_t kC5Bins = 15;
constexpr double kC5MaxEce = 0.02;

constexpr std::size_t kC6TestItems = 1500;
constexpr double kC6Confidence = 0.99;

constexpr std::uint64_t kSeed = 20240611;

std::string grammar_path(const std::string& name) { return std::string(METACFG_GRAMMAR_DIR) + "/" + name; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(precision) << v;
  return o.str();
}

struct Outcome {
  bool pass = false;
  std::string summary;
  // Deterministic content only (no timings); compared byte-for-byte by
  // criterion 10.
  json report;
};

// ---- 1 ----------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto g = load_grammar(grammar_path("toy2.cfg"));
  const SymbolTable& sym = g.symbols();
  const MetadataVector m{{0, 1}};
  const auto cg = instantiate(g, m);
  const auto lang = enumerate_language(cg);

  std::set<std::string> got;
  for (const auto& [s, p] : lang) got.insert(join_terminals(sym, s, ""));
  const std::set<std::string> expected{"0001", "00101", "11101", "111101"};

  // Every binary string up to length 10 against every instantiation and the
  // mixture: CYK verdict == membership in the enumerated support, and CYK ==
  // the unoptimized reference recognizer.
  std::vector<ConcreteGrammar> grammars;
  std::vector<std::set<TerminalString>> supports;
  for (const auto& mv : g.all_metadata()) grammars.push_back(instantiate(g, mv));
  grammars.push_back(mixture(g));
  for (const auto& c : grammars) {
    std::set<TerminalString> sup;
    for (const auto& [s, p] : enumerate_language(c)) sup.insert(s);
    supports.push_back(std::move(sup));
  }
  const SymbolId zero = *sym.find("0"), one = *sym.find("1");
  std::size_t checked = 0, disagreements = 0;
  for (std::size_t len = 1; len <= kC1MaxLength; ++len)
    for (std::uint32_t bits = 0; bits < (1u << len); ++bits) {
      TerminalString s(len);
      for (std::size_t i = 0; i < len; ++i) s[i] = (bits >> (len - 1 - i)) & 1u ? one : zero;
      for (std::size_t k = 0; k < grammars.size(); ++k) {
        const bool a = accepts(grammars[k], s);
        if (a != static_cast<bool>(supports[k].count(s)) || a != accepts_reference(grammars[k], s)) ++disagreements;
        ++checked;
      }
    }
  const double secs = seconds_since(t0);

  Outcome o;
  o.pass = got == expected && disagreements == 0 && secs < kC1MaxSeconds;
  o.report = {{"language", got}, {"checked", checked}, {"disagreements", disagreements}};
  o.summary = "L(G(0,1)) = {" + [&] {
    std::string s;
    for (const auto& x : got) s += (s.empty() ? "" : ",") + x;
    return s;
  }() + "}, " + std::to_string(disagreements) + "/" + std::to_string(checked) +
              " verdict disagreements, " + fmt(secs, 3) + " s";
  return o;
}

// ---- 2 ----------------------------------------------------------------------

Outcome criterion2() {
  const auto g = load_grammar(grammar_path("desk3.cfg"));
  const auto t0 = std::chrono::steady_clock::now();
  const auto sentences = sample_batch(g, kC2Sentences, kSeed);
  const InstantiationCache cache(g);
  const auto mix = mixture(g);
  std::size_t own_rejects = 0, mix_rejects = 0;
  Fnv1a digest;
  for (const auto& s : sentences) {
    own_rejects += !accepts(cache[s.metadata], s.terminals);
    mix_rejects += !accepts(mix, s.terminals);
    digest.update(s.terminals.data(), s.terminals.size() * sizeof(SymbolId));
    digest.update(";");
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = own_rejects == 0 && mix_rejects == 0 && g.depth() == 3 && secs < kC2MaxSeconds;
  for (int i = 0; i < g.depth(); ++i) o.pass = o.pass && g.choice_count(i) == 2;
  o.report = {{"sentences", sentences.size()},
              {"rejected_by_generating_grammar", own_rejects},
              {"rejected_by_mixture", mix_rejects},
              {"sample_digest", hex64(digest.digest())}};
  o.summary = std::to_string(sentences.size()) + " sentences, " + std::to_string(own_rejects) + " rejected by G(m), " +
              std::to_string(mix_rejects) + " by the mixture, " + fmt(secs, 1) + " s";
  return o;
}

// ---- 3 ----------------------------------------------------------------------

Outcome criterion3() {
  Outcome o;
  o.pass = true;
  double worst = 0.0;
  o.report = json::object();
  for (const char* name : {"toy2.cfg", "toy3.cfg"}) {
    const auto g = load_grammar(grammar_path(name));
    const MetadataOracle oracle(g);
    const InstantiationCache cache(g);
    Rng rng(derive_seed(kSeed, SeedStream::kMisc, 3));
    double max_diff = 0.0;
    json prefixes = json::array();
    for (std::size_t k = 0; k < kC3Prefixes; ++k) {
      const auto s = sample_item(cache, kSeed, k, SeedStream::kTest);
      const std::size_t cut = rng.uniform(s.size() + 1);
      const TerminalString prefix(s.terminals.begin(), s.terminals.begin() + cut);
      const auto direct = oracle.next_token(prefix);
      const auto mixed = oracle.next_token_by_posterior(prefix);
      double d = std::abs(direct.eos - mixed.eos);
      for (std::size_t t = 0; t < direct.terminal.size(); ++t)
        d = std::max(d, std::abs(direct.terminal[t] - mixed.terminal[t]));
      max_diff = std::max(max_diff, d);
      prefixes.push_back(join_terminals(g.symbols(), prefix));
    }
    worst = std::max(worst, max_diff);
    o.pass = o.pass && max_diff <= kC3Tolerance;
    o.report[name] = {{"prefixes", prefixes}, {"max_difference", max_diff}};
  }
  o.summary = "2 grammars x " + std::to_string(kC3Prefixes) + " prefixes, max |difference| = " + [&] {
    std::ostringstream s;
    s << std::scientific << std::setprecision(2) << worst;
    return s.str();
  }() + " (tolerance 1e-10)";
  return o;
}

// ---- 4 ----------------------------------------------------------------------

Outcome criterion4() {
  const auto g = load_grammar(grammar_path("desk3.cfg"));
  const Vocabulary vocab(g);
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.hidden = 16;
  c.vocab_size = static_cast<int>(vocab.size());
  c.max_seq_len = 64;
  c.init_std = 0.3;
  c.seed = kSeed;
  Transformer<double> m(c);
  Rng rng(derive_seed(kSeed, SeedStream::kMisc, 4));
  for (auto& p : m.params())
    if (!p.decay)
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = 1.0 + 0.2 * rng.normal();

  const auto sentences = sample_batch(g, 4 * kC4Batches, kSeed, SeedStream::kMisc);
  const auto records = build_training_corpus(vocab, g.symbols(), sentences, g.depth(), kSeed);
  std::map<std::string, double> worst;
  for (int b = 0; b < kC4Batches; ++b) {
    Batch batch;
    for (int k = 0; k < 4; ++k) batch.add(records[static_cast<std::size_t>(4 * b + k)]);
    Transformer<double>::Cache cache;
    m.zero_grad();
    m.loss_and_backward(batch, cache);
    for (auto& p : m.params()) {
      Transformer<double>::Matrix fd(p.value.rows(), p.value.cols());
      for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        const double orig = p.value.data()[i];
        p.value.data()[i] = orig + kC4Step;
        const double up = m.loss(batch);
        p.value.data()[i] = orig - kC4Step;
        const double down = m.loss(batch);
        p.value.data()[i] = orig;
        fd.data()[i] = (up - down) / (2 * kC4Step);
      }
      const double denom = std::max({p.grad.norm(), fd.norm(), 1e-300});
      worst[p.name] = std::max(worst[p.name], (p.grad - fd).norm() / denom);
    }
  }
  Outcome o;
  o.pass = !worst.empty();
  std::string worst_name;
  double worst_err = 0.0;
  json groups = json::object();
  for (const auto& [name, err] : worst) {
    o.pass = o.pass && err <= kC4MaxRelativeError;
    groups[name] = err;
    if (err >= worst_err) {
      worst_err = err;
      worst_name = name;
    }
  }
  o.report = {{"relative_error", groups}};
  std::ostringstream s;
  s << worst.size() << " parameter groups x " << kC4Batches << " batches, worst relative error " << std::scientific
    << std::setprecision(2) << worst_err << " (" << worst_name << ")";
  o.summary = s.str();
  return o;
}

// ---- 5 ----------------------------------------------------------------------

Outcome criterion5() {
  const auto g = load_grammar(grammar_path("toy3.cfg"));
  const Vocabulary vocab(g);
  const MetadataOracle oracle(g);
  std::vector<Prediction> preds;
  const InstantiationCache cache(g);
  for (std::size_t k = 0; preds.size() < kC5Tokens; ++k) {
    const auto more = oracle_predictions(oracle, vocab, {sample_item(cache, kSeed, k, SeedStream::kTest)});
    preds.insert(preds.end(), more.begin(), more.end());
  }
  preds.resize(kC5Tokens);
  const auto oracle_rep = expected_calibration_error(preds, kC5Bins);

  std::vector<Prediction> right(1000, Prediction{1.0, true}), coin;
  for (int k = 0; k < 1000; ++k) coin.push_back({1.0, k % 2 == 0});
  const double ece_right = expected_calibration_error(right, kC5Bins).ece;
  const double ece_coin = expected_calibration_error(coin, kC5Bins).ece;

  Outcome o;
  o.pass = oracle_rep.n == kC5Tokens && oracle_rep.ece <= kC5MaxEce && ece_right == 0.0 && ece_coin == 0.5;
  o.report = {{"oracle_ece", oracle_rep.ece}, {"n", oracle_rep.n}, {"always_right", ece_right}, {"coin", ece_coin}};
  o.summary = "oracle ECE " + fmt(oracle_rep.ece, 4) + " at n=" + std::to_string(oracle_rep.n) + ", m=" +
              std::to_string(kC5Bins) + "; degenerate streams " + fmt(ece_right, 1) + " and " + fmt(ece_coin, 1);
  return o;
}

// ---- 6 ----------------------------------------------------------------------

double log_binomial_pmf(std::size_t k, std::size_t n, double p) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
         (n - k) * std::log1p(-p);
}

// Central interval [lo, hi] of hit counts holding at least `level` of the
// Binomial(n, p) mass, with at most (1 - level) / 2 in each tail.
std::pair<std::size_t, std::size_t> binomial_interval(std::size_t n, double p, double level) {
  const double tail = (1.0 - level) / 2.0;
  std::vector<double> pmf(n + 1);
  for (std::size_t k = 0; k <= n; ++k) pmf[k] = std::exp(log_binomial_pmf(k, n, p));
  std::size_t lo = 0, hi = n;
  double acc = 0.0;
  while (lo < n && acc + pmf[lo] <= tail) acc += pmf[lo++];
  acc = 0.0;
  while (hi > 0 && acc + pmf[hi] <= tail) acc += pmf[hi--];
  return {lo, hi};
}

// Probe configuration shared with criterion 9.
const std::vector<int>& probe_depths_all() {
  static const std::vector<int> d{1, 2, 3};
  return d;
}

Outcome criterion6() {
  const auto g = load_grammar(grammar_path("desk3.cfg"));
  const Vocabulary vocab(g);
  auto cfg = ModelConfig::desk_preset(static_cast<int>(vocab.size()));
  cfg.seed = kSeed;
  const Checkpoint ck = new_checkpoint(cfg, vocab);
  // 70/15/15 split: 10,000 sentences give exactly 1,500 test items.
  const std::size_t n_sentences = kC6TestItems * 100 / 15;
  const auto sentences = sample_batch(g, n_sentences, kSeed, SeedStream::kProbe);
  const auto results = probing_accuracy(ck.model, vocab, g, sentences, {cfg.layers}, {0}, probe_depths_all());
  Outcome o;
  o.pass = results.size() == probe_depths_all().size();
  json rows = json::array();
  std::string detail;
  for (const auto& r : results) {
    const auto [lo, hi] = binomial_interval(r.n_test, r.chance_rate, kC6Confidence);
    const auto hits = static_cast<std::size_t>(std::llround(r.all_correct_accuracy * static_cast<double>(r.n_test)));
    const bool inside = r.n_test == kC6TestItems && hits >= lo && hits <= hi;
    o.pass = o.pass && inside;
    rows.push_back({{"depth", r.depth}, {"hits", hits}, {"n_test", r.n_test}, {"interval", {lo, hi}}});
    detail += (detail.empty() ? "" : ", ") + std::string("d=") + std::to_string(r.depth) + " " +
              std::to_string(hits) + "/" + std::to_string(r.n_test) + " in [" + std::to_string(lo) + "," +
              std::to_string(hi) + "]";
  }
  // What the 5-token window itself reveals: Bayes-optimal all-correct rate
  // of the exact posterior on the same test items.
  const MetadataOracle oracle(g);
  const std::size_t test_begin = n_sentences * 70 / 100 + n_sentences * 15 / 100;
  std::string ceiling;
  for (int d : probe_depths_all()) {
    std::size_t hits = 0, n = 0;
    for (std::size_t k = test_begin; k < sentences.size(); ++k) {
      const auto& s = sentences[k];
      if (s.size() < kProbeWindow) continue;
      const auto post = oracle.posterior(TerminalString(s.terminals.begin(), s.terminals.begin() + kProbeWindow));
      std::map<std::vector<int>, double> marginal;
      for (std::size_t j = 0; j < post.metadata.size(); ++j)
        marginal[std::vector<int>(post.metadata[j].choices.begin(), post.metadata[j].choices.begin() + d)] +=
            post.probability[j];
      auto best = marginal.begin();
      for (auto it = marginal.begin(); it != marginal.end(); ++it)
        if (it->second > best->second) best = it;
      hits += best->first == std::vector<int>(s.metadata.choices.begin(), s.metadata.choices.begin() + d);
      ++n;
    }
    ceiling += (ceiling.empty() ? "" : ", ") + fmt(static_cast<double>(hits) / static_cast<double>(n), 3);
  }
  o.report = {{"layer", cfg.layers}, {"position", 0}, {"results", rows}};
  o.summary = "random init, last layer, position 0: " + detail + "; Bayes ceiling of the window " + ceiling;
  return o;
}

// ---- 7-9: desk-scale runs ---------------------------------------------------

constexpr const char* kDeskGrammar = "desk3.cfg";
const std::vector<std::uint64_t> kDeskSeeds{0, 1, 2};
constexpr std::size_t kDeskTrainSentences = 200'000;
constexpr std::size_t kDeskTestSentences = 5'000;
constexpr std::uint64_t kDeskEvalSeed = 7;

constexpr std::size_t kGaN = 500;
const std::vector<std::size_t> kGaLengths{1, 2, 4, 8, 12, 16};
// "Shortest usable" prompt length: the first one at which the D_M=0 models
// average at least this GA.
constexpr double kUsableGa = 0.5;
constexpr double kC7MinGap = 0.3;
constexpr double kC7MaxLongDiff = 0.1;

constexpr double kC8MaxRelativeDiff = 0.03;
constexpr double kC8SigmaFactor = 3.0;

constexpr std::size_t kProbeSentences = 4000;
const std::vector<std::size_t> kProbePositions{0, 15};
constexpr double kC9MinGap = 0.15;
constexpr double kC9MaxLongGap = 0.05;

struct DeskRun {
  int dm = 0;
  std::uint64_t seed = 0;
  double loss_no_meta = 0.0, loss_with_meta = 0.0;
  std::map<std::size_t, double> ga;
  std::map<std::size_t, std::size_t> ga_n;
  std::map<std::size_t, double> probe;
};

RunConfig desk_config(const Vocabulary& vocab, std::uint64_t seed) {
  RunConfig rc;
  rc.model = ModelConfig::desk_preset(static_cast<int>(vocab.size()));
  rc.model.seed = seed;
  rc.data.train_sentences = kDeskTrainSentences;
  rc.data.test_sentences = kDeskTestSentences;
  rc.data.seed = seed;
  rc.data.eval_every = 0;
  return rc;
}

DeskRun desk_run(const HierarchicalGrammar& g, int dm, std::uint64_t seed, const fs::path& cache) {
  const Vocabulary vocab(g);
  const RunConfig rc = desk_config(vocab, seed);
  const json key{{"grammar", format_grammar(g)}, {"model", rc.model}, {"data", rc.data}, {"dm", dm}};
  const std::string stem = "desk-" + hex64(fnv1a(key.dump()));
  const fs::path ck_path = cache / (stem + ".ckpt");
  fs::create_directories(cache);

  const json eval_key{{"checkpoint", stem}, {"ga_n", kGaN}, {"ga_lengths", kGaLengths},
                      {"probe_sentences", kProbeSentences}, {"probe_positions", kProbePositions},
                      {"seed", kDeskEvalSeed}};
  const fs::path eval_path = cache / (stem + "-eval-" + hex64(fnv1a(eval_key.dump())) + ".json");

  DeskRun r;
  r.dm = dm;
  r.seed = seed;
  if (fs::exists(eval_path) && fs::exists(ck_path)) {
    json j;
    std::ifstream(eval_path) >> j;
    r.loss_no_meta = j.at("loss_no_meta");
    r.loss_with_meta = j.at("loss_with_meta");
    for (const auto& c : j.at("ga")) {
      r.ga[c.at(0).get<std::size_t>()] = c.at(1).get<double>();
      r.ga_n[c.at(0).get<std::size_t>()] = c.at(2).get<std::size_t>();
    }
    for (const auto& c : j.at("probe")) r.probe[c.at(0).get<std::size_t>()] = c.at(1).get<double>();
    return r;
  }

  std::optional<Checkpoint> ck;
  if (fs::exists(ck_path)) {
    ck.emplace(load_checkpoint(ck_path.string()));
  } else {
    std::cerr << "[desk] training D_M=" << dm << " seed=" << seed << "\n";
    const auto t0 = std::chrono::steady_clock::now();
    auto res = train_run(g, dm, rc);
    std::cerr << "[desk]   " << res.checkpoint.step << " steps in " << fmt(seconds_since(t0), 0) << " s\n";
    save_checkpoint(res.checkpoint, ck_path.string());
    std::ofstream trace(cache / (stem + "-loss_trace.csv"));
    write_loss_trace(trace, res.trace);
    ck.emplace(std::move(res.checkpoint));
  }

  const auto test = held_out_sentences(g, rc.data);
  const int D = g.depth();
  r.loss_no_meta = mean_loss(ck->model, inference_records(vocab, g.symbols(), test, false, dm));
  // The with-metadata condition reveals all D levels regardless of D_M.
  r.loss_with_meta = mean_loss(ck->model, inference_records(vocab, g.symbols(), test, true, D));

  GaOptions ga;
  ga.prompt_lengths = kGaLengths;
  ga.n = kGaN;
  ga.seed = kDeskEvalSeed;
  for (const auto& c : ga_sweep(ck->model, g, vocab, ga)) {
    r.ga[c.prompt_length] = c.accuracy;
    r.ga_n[c.prompt_length] = c.n;
  }
  const auto probe_sentences = sample_batch(g, kProbeSentences, kDeskEvalSeed, SeedStream::kProbe);
  for (const auto& p : probing_accuracy(ck->model, vocab, g, probe_sentences, {ck->config.layers}, kProbePositions, {D}))
    r.probe[p.position] = p.all_correct_accuracy;

  json j{{"loss_no_meta", r.loss_no_meta}, {"loss_with_meta", r.loss_with_meta}, {"ga", json::array()},
         {"probe", json::array()}};
  for (const auto& [lp, acc] : r.ga) j["ga"].push_back({lp, acc, r.ga_n[lp]});
  for (const auto& [pos, acc] : r.probe) j["probe"].push_back({pos, acc});
  std::ofstream(eval_path) << j.dump(2) << "\n";
  return r;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1).
double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct DeskResults {
  int depth = 0;
  std::vector<DeskRun> base, meta;  // D_M = 0 and D_M = D, one per seed
};

template <typename F>
std::vector<double> collect(const std::vector<DeskRun>& runs, F f) {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(f(r));
  return out;
}

Outcome criterion7(const DeskResults& d) {
  Outcome o;
  std::size_t shortest = 0;
  bool found = false;
  for (std::size_t lp : kGaLengths)
    if (!found && mean_of(collect(d.base, [&](const DeskRun& r) { return r.ga.at(lp); })) >= kUsableGa) {
      shortest = lp;
      found = true;
    }
  std::size_t longest = 0;
  for (std::size_t lp : kGaLengths) {
    bool full = true;
    for (const auto* runs : {&d.base, &d.meta})
      for (const auto& r : *runs) full = full && r.ga_n.at(lp) == kGaN;
    if (full) longest = std::max(longest, lp);
  }
  auto ga = [&](const std::vector<DeskRun>& runs, std::size_t lp) {
    return mean_of(collect(runs, [&](const DeskRun& r) { return r.ga.at(lp); }));
  };
  std::string table;
  for (std::size_t lp : kGaLengths)
    table += " " + std::to_string(lp) + ":" + fmt(ga(d.base, lp), 3) + "/" + fmt(ga(d.meta, lp), 3);
  if (!found) {
    o.summary = "no prompt length where D_M=0 reaches GA " + fmt(kUsableGa, 2) + ";" + table;
    return o;
  }
  const double gap = ga(d.base, shortest) - ga(d.meta, shortest);
  const double long_diff = std::abs(ga(d.base, longest) - ga(d.meta, longest));
  o.pass = gap >= kC7MinGap && long_diff <= kC7MaxLongDiff && longest > shortest;
  o.summary = "GA gap at l_p=" + std::to_string(shortest) + " is " + fmt(gap, 3) + " (need >= " + fmt(kC7MinGap, 2) +
              "), |diff| at l_p=" + std::to_string(longest) + " is " + fmt(long_diff, 3) + " (need <= " +
              fmt(kC7MaxLongDiff, 2) + "); l_p:GA(D_M=0)/GA(D_M=" + std::to_string(d.depth) + ")" + table;
  return o;
}

Outcome criterion8(const DeskResults& d) {
  Outcome o;
  const auto base_no = collect(d.base, [](const DeskRun& r) { return r.loss_no_meta; });
  const auto meta_no = collect(d.meta, [](const DeskRun& r) { return r.loss_no_meta; });
  const auto meta_with = collect(d.meta, [](const DeskRun& r) { return r.loss_with_meta; });
  const double rel = std::abs(mean_of(meta_no) - mean_of(base_no)) / mean_of(base_no);
  const double margin = mean_of(meta_no) - mean_of(meta_with);
  const double sd = std::max(sd_of(meta_no), sd_of(meta_with));
  o.pass = rel < kC8MaxRelativeDiff && margin > kC8SigmaFactor * sd;
  o.summary = "no-meta loss " + fmt(mean_of(base_no)) + " (D_M=0) vs " + fmt(mean_of(meta_no)) + " (D_M=" +
              std::to_string(d.depth) + "), rel diff " + fmt(rel, 4) + "; with-meta " + fmt(mean_of(meta_with)) +
              ", margin " + fmt(margin) + " vs 3 x seed sd " + fmt(kC8SigmaFactor * sd, 4);
  return o;
}

Outcome criterion9(const DeskResults& d) {
  Outcome o;
  const std::size_t first = kProbePositions.front(), last = kProbePositions.back();
  auto acc = [&](const std::vector<DeskRun>& runs, std::size_t pos) {
    return mean_of(collect(runs, [&](const DeskRun& r) { return r.probe.at(pos); }));
  };
  const double gap = acc(d.base, first) - acc(d.meta, first);
  const double long_gap = acc(d.base, last) - acc(d.meta, last);
  o.pass = gap >= kC9MinGap && long_gap < kC9MaxLongGap;
  o.summary = "depth-" + std::to_string(d.depth) + " all-correct, last layer: position " + std::to_string(first) +
              " " + fmt(acc(d.base, first), 3) + " vs " + fmt(acc(d.meta, first), 3) + " (gap " + fmt(gap, 3) +
              ", need >= " + fmt(kC9MinGap, 2) + "), position " + std::to_string(last) + " " +
              fmt(acc(d.base, last), 3) + " vs " + fmt(acc(d.meta, last), 3) + " (gap " + fmt(long_gap, 3) +
              ", need < " + fmt(kC9MaxLongGap, 2) + ")";
  return o;
}

// ---- driver -----------------------------------------------------------------

struct Options {
  fs::path cache_dir = "acceptance_cache";
  std::set<int> only;
  std::string report_path;
};

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) throw std::invalid_argument(a + " needs a value");
      return argv[++i];
    };
    if (a == "--cache-dir") opt.cache_dir = next();
    else if (a == "--report") opt.report_path = next();
    else if (a == "--only") {
      std::stringstream ss(next());
      std::string item;
      while (std::getline(ss, item, ',')) opt.only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: metacfg_acceptance [--cache-dir DIR] [--only 1,2,..] [--report FILE]\n";
      return 2;
    }
  }
  auto wanted = [&](int c) { return opt.only.empty() || opt.only.count(c); };

  const std::vector<std::pair<int, std::function<Outcome()>>> fast{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5}, {6, criterion6}};

  bool all_pass = true;
  json full = json::object();
  auto print = [&](int c, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c << ": " << o.summary << std::endl;
    all_pass = all_pass && o.pass;
    full[std::to_string(c)] = o.report;
  };
  auto run = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      Outcome o;
      o.summary = std::string("error: ") + e.what();
      return o;
    }
  };

  std::map<int, std::string> first_reports;
  for (const auto& [c, f] : fast) {
    if (!wanted(c) && !wanted(10)) continue;
    const Outcome o = run(f);
    first_reports[c] = o.report.dump();
    if (wanted(c)) print(c, o);
  }

  if (wanted(7) || wanted(8) || wanted(9)) {
    std::optional<DeskResults> desk;
    std::string error;
    try {
      const auto g = load_grammar(grammar_path(kDeskGrammar));
      DeskResults d;
      d.depth = g.depth();
      for (std::uint64_t seed : kDeskSeeds) {
        d.base.push_back(desk_run(g, 0, seed, opt.cache_dir));
        d.meta.push_back(desk_run(g, g.depth(), seed, opt.cache_dir));
      }
      desk = std::move(d);
    } catch (const std::exception& e) {
      error = e.what();
    }
    const std::vector<std::pair<int, Outcome (*)(const DeskResults&)>> slow{
        {7, criterion7}, {8, criterion8}, {9, criterion9}};
    for (const auto& [c, f] : slow) {
      if (!wanted(c)) continue;
      Outcome o;
      if (desk) o = f(*desk);
      else o.summary = "error: " + error;
      print(c, o);
    }
  }

  if (wanted(10)) {
    Outcome o;
    o.pass = !first_reports.empty();
    std::vector<int> differing;
    for (const auto& [c, f] : fast) {
      const Outcome again = run(f);
      if (again.report.dump() != first_reports[c] || again.report.is_null()) differing.push_back(c);
    }
    o.pass = o.pass && differing.empty();
    o.summary = "criteria 1-6 rerun: " +
                (differing.empty() ? std::string("all reports byte-identical") : [&] {
                  std::string s = "reports differ for";
                  for (int c : differing) s += " " + std::to_string(c);
                  return s;
                }());
    o.report = {{"differing", differing}};
    print(10, o);
  }

  if (!opt.report_path.empty()) std::ofstream(opt.report_path) << full.dump(2) << "\n";
  return all_pass ? 0 : 1;
}
