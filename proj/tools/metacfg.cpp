// metacfg command-line tool.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "metacfg/metacfg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace metacfg;

namespace {

MetadataVector parse_metadata(const HierarchicalGrammar& g, const std::string& text) {
  MetadataVector m;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) m.choices.push_back(std::stoi(item));
  check_metadata(g, m);
  return m;
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(static_cast<T>(std::stoll(item)));
  return out;
}

std::ofstream open_out(const fs::path& p, bool binary = false) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, binary ? std::ios::binary : std::ios::out);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

std::ifstream open_in(const fs::path& p, bool binary = false) {
  std::ifstream in(p, binary ? std::ios::binary : std::ios::in);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return in;
}

json distribution_json(const SymbolTable& sym, const NextTokenDistribution& d) {
  json j = json::object();
  for (std::size_t k = 0; k < d.terminal.size(); ++k) j[sym.name(sym.terminals()[k])] = d.terminal[k];
  j["[EOS]"] = d.eos;
  return j;
}

struct GrammarArgs {
  std::string grammar, metadata;
  bool use_mixture = false;
};

// The concrete grammar selected by --metadata or --mixture (mixture by default).
ConcreteGrammar select_grammar(const HierarchicalGrammar& g, const GrammarArgs& a) {
  if (!a.metadata.empty()) return instantiate(g, parse_metadata(g, a.metadata));
  return mixture(g);
}

// verify input: one sentence per line as space-separated terminal names, or
// sidecar records ("metadata=... tokens=..."). Blank and '#' lines are skipped.
int run_verify(const GrammarArgs& a, const std::string& input) {
  const auto g = load_grammar(a.grammar);
  const auto cg = select_grammar(g, a);
  auto in = open_in(input);
  std::vector<std::vector<SymbolId>> sentences;
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::string text = line;
    if (auto p = line.find("tokens="); p != std::string::npos) text = line.substr(p + 7);
    sentences.push_back(parse_terminals(g.symbols(), detail::split_ws(text)));
    lines.push_back(line);
  }
  if (sentences.empty()) throw std::runtime_error("no sentences in " + input);
  const auto ga = grammatical_accuracy(cg, sentences);
  for (std::size_t k = 0; k < lines.size(); ++k) std::cout << (ga.verdicts[k] ? "ACCEPT\t" : "REJECT\t") << lines[k] << "\n";
  std::cout << "# GA " << ga.accuracy << " stderr " << ga.stderr_ << " n " << ga.n << "\n";
  return 0;
}

int run_train(const std::string& grammar, int dm, const std::string& config, const std::string& out_dir) {
  const auto g = load_grammar(grammar);
  const Vocabulary vocab(g);
  json cj = json::object();
  if (!config.empty()) open_in(config) >> cj;
  const RunConfig rc = parse_run_config(cj, vocab);
  fs::create_directories(out_dir);
  auto res = train_run(g, dm, rc, [](const LossTraceRow& r) {
    std::cerr << "step " << r.step << " train " << r.train_loss << " test(no meta) " << r.test_loss_no_meta
              << " test(meta) " << r.test_loss_with_meta << "\n";
  });
  save_checkpoint(res.checkpoint, (fs::path(out_dir) / "checkpoint.bin").string());
  auto trace = open_out(fs::path(out_dir) / "loss_trace.csv");
  write_loss_trace(trace, res.trace);
  json used{{"model", rc.model}, {"data", rc.data}, {"metadata_depth", dm}, {"grammar_hash", hex64(g.hash())}};
  open_out(fs::path(out_dir) / "config.json") << used.dump(2) << "\n";
  std::cerr << "wrote " << out_dir << "/checkpoint.bin (" << res.checkpoint.step << " steps)\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& grammar, const std::string& suites,
             const std::string& out, EvalConfig ec, const std::string& prompt_lengths,
             const std::string& layers, const std::string& positions, const std::string& depths) {
  const auto g = load_grammar(grammar);
  const Checkpoint ck = load_checkpoint(checkpoint);
  ec.suites = parse_suites(suites);
  if (!prompt_lengths.empty()) ec.ga.prompt_lengths = parse_list<std::size_t>(prompt_lengths);
  if (!layers.empty()) ec.probe_layers = parse_list<int>(layers);
  if (!positions.empty()) ec.probe_positions = parse_list<std::size_t>(positions);
  if (!depths.empty()) ec.probe_depths = parse_list<int>(depths);
  const EvalReport rep = evaluate(ck, g, ec);
  const fs::path out_path(out);
  open_out(out_path) << report_to_json(rep).dump(2) << "\n";
  const fs::path dir = out_path.parent_path();
  const std::string stem = out_path.stem().string();
  if (!rep.losses.empty()) {
    auto f = open_out(dir / (stem + "_loss.csv"));
    write_loss_csv(f, rep.losses);
  }
  if (rep.ga) {
    auto f = open_out(dir / (stem + "_ga.csv"));
    write_ga_csv(f, rep.ga->table);
  }
  if (rep.calibration) {
    auto f = open_out(dir / (stem + "_ece.csv"));
    write_calibration_csv(f, *rep.calibration);
  }
  if (rep.probe) {
    auto f = open_out(dir / (stem + "_probe.csv"));
    write_probe_csv(f, rep.probe->results);
  }
  std::cerr << "wrote " << out << "\n";
  return 0;
}

int run_oracle(const std::string& mode, const GrammarArgs& a, const std::string& prefix_text) {
  const auto g = load_grammar(a.grammar);
  const SymbolTable& sym = g.symbols();
  const TerminalString prefix = parse_terminals(sym, detail::split_ws(prefix_text));
  json out;
  out["prefix"] = prefix_text;
  if (mode == "enumerate") {
    const auto lang = enumerate_language(select_grammar(g, a));
    json strings = json::array();
    for (const auto& [s, p] : lang)
      if (s.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), s.begin()))
        strings.push_back({{"string", join_terminals(sym, s)}, {"probability", p}});
    out["grammar"] = a.metadata.empty() ? "mixture" : a.metadata;
    out["strings"] = strings;
  } else if (mode == "posterior") {
    const auto post = MetadataOracle(g).posterior(prefix);
    json entries = json::array();
    for (std::size_t k = 0; k < post.metadata.size(); ++k)
      entries.push_back({{"metadata", post.metadata[k].choices}, {"probability", post.probability[k]}});
    out["posterior"] = entries;
  } else if (mode == "next-token") {
    const MetadataOracle oracle(g);
    if (a.metadata.empty()) {
      out["next_token"] = distribution_json(sym, oracle.next_token(prefix));
    } else {
      const auto m = parse_metadata(g, a.metadata);
      const auto& all = oracle.metadata();
      const auto k = static_cast<std::size_t>(std::find(all.begin(), all.end(), m) - all.begin());
      out["metadata"] = m.choices;
      out["next_token"] = distribution_json(sym, oracle.next_token_given(k, prefix));
    }
  } else {
    throw std::invalid_argument("unknown oracle mode '" + mode + "'");
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metacfg: hierarchical metadata-conditioned grammars and transformer probes"};
  app.require_subcommand(1);

  // grammar random
  auto* grammar_cmd = app.add_subcommand("grammar", "Generate a random grammar spec");
  std::uint64_t grammar_seed = 0;
  std::string symbols = "1,3,3,3", style = "permuted", grammar_out;
  int choices = 2;
  grammar_cmd->add_option("--seed", grammar_seed);
  grammar_cmd->add_option("--symbols", symbols, "Symbols per level, root first");
  grammar_cmd->add_option("--choices", choices, "Rule-set choices per level");
  grammar_cmd->add_option("--style", style)->check(CLI::IsMember({"permuted", "independent"}));
  grammar_cmd->add_option("--out", grammar_out, "Output file (stdout if omitted)");

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "Sample sentences to a corpus sidecar");
  GrammarArgs sample_args;
  std::size_t sample_n = 10;
  std::uint64_t sample_seed = 0;
  std::string sample_out;
  sample_cmd->add_option("--grammar", sample_args.grammar)->required();
  sample_cmd->add_option("-n,--count", sample_n);
  sample_cmd->add_option("--seed", sample_seed);
  sample_cmd->add_option("--out", sample_out);

  // corpus
  auto* corpus_cmd = app.add_subcommand("corpus", "Tokenize a sidecar into a binary corpus");
  std::string corpus_grammar, corpus_in, corpus_out;
  int corpus_dm = 0;
  std::uint64_t corpus_seed = 0;
  bool corpus_dump = false;
  corpus_cmd->add_option("--grammar", corpus_grammar)->required();
  corpus_cmd->add_option("--input", corpus_in, "Sidecar file")->required();
  corpus_cmd->add_option("--dm", corpus_dm, "Metadata depth D_M");
  corpus_cmd->add_option("--seed", corpus_seed, "Seed for the prefix coin");
  corpus_cmd->add_option("--out", corpus_out);
  corpus_cmd->add_flag("--dump", corpus_dump, "Write the text dump instead of the binary file");

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "Check sentences against a grammar");
  GrammarArgs verify_args;
  std::string verify_in;
  verify_cmd->add_option("--grammar", verify_args.grammar)->required();
  auto* vm = verify_cmd->add_option("--metadata", verify_args.metadata, "j0,j1,... selects G(m)");
  verify_cmd->add_flag("--mixture", verify_args.use_mixture, "Check against the mixture grammar")->excludes(vm);
  verify_cmd->add_option("--input", verify_in)->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model on sampled data");
  std::string train_grammar, train_config, train_out;
  int train_dm = 0;
  train_cmd->add_option("--grammar", train_grammar)->required();
  train_cmd->add_option("--dm", train_dm, "Metadata depth D_M")->required();
  train_cmd->add_option("--config", train_config, "JSON with optional \"model\" and \"data\" sections");
  train_cmd->add_option("--out", train_out, "Output directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ck, eval_grammar, eval_suites = "loss,ga,ece,probe", eval_out, eval_lp, eval_layers,
                                    eval_positions, eval_depths;
  EvalConfig ec;
  eval_cmd->add_option("--checkpoint", eval_ck)->required();
  eval_cmd->add_option("--grammar", eval_grammar)->required();
  eval_cmd->add_option("--suite", eval_suites, "Comma list of loss,ga,ece,probe");
  eval_cmd->add_option("--out", eval_out, "Report JSON path; CSVs are written next to it")->required();
  eval_cmd->add_option("--seed", ec.seed);
  eval_cmd->add_option("--test-sentences", ec.test_sentences);
  eval_cmd->add_option("--ga-n", ec.ga.n, "Prompts per length");
  eval_cmd->add_option("--prompt-lengths", eval_lp, "Comma list");
  eval_cmd->add_option("--bins", ec.calibration_bins);
  eval_cmd->add_option("--probe-sentences", ec.probe_sentences);
  eval_cmd->add_option("--probe-layers", eval_layers, "Comma list; default all");
  eval_cmd->add_option("--probe-positions", eval_positions, "Comma list");
  eval_cmd->add_option("--probe-depths", eval_depths, "Comma list; default 1..D");

  // oracle
  auto* oracle_cmd = app.add_subcommand("oracle", "Exact computations on small grammars");
  std::string oracle_mode, oracle_prefix;
  GrammarArgs oracle_args;
  oracle_cmd->add_option("mode", oracle_mode, "enumerate | posterior | next-token")
      ->required()
      ->check(CLI::IsMember({"enumerate", "posterior", "next-token"}));
  oracle_cmd->add_option("--grammar", oracle_args.grammar)->required();
  oracle_cmd->add_option("--metadata", oracle_args.metadata, "j0,j1,...");
  oracle_cmd->add_option("--prefix", oracle_prefix, "Space-separated terminals");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*grammar_cmd) {
      RandomGrammarOptions opt;
      opt.symbols_per_level = parse_list<int>(symbols);
      opt.choices = choices;
      opt.style = style == "permuted" ? ChoiceStyle::kPermutedRhs : ChoiceStyle::kIndependent;
      const std::string text = format_grammar(random_grammar(opt, grammar_seed));
      if (grammar_out.empty()) std::cout << text;
      else open_out(grammar_out) << text;
    } else if (*sample_cmd) {
      const auto g = load_grammar(sample_args.grammar);
      const auto sentences = sample_batch(g, sample_n, sample_seed);
      if (sample_out.empty()) write_sidecar(std::cout, g, sentences, sample_seed);
      else {
        auto f = open_out(sample_out);
        write_sidecar(f, g, sentences, sample_seed);
      }
    } else if (*corpus_cmd) {
      const auto g = load_grammar(corpus_grammar);
      const Vocabulary vocab(g);
      auto in = open_in(corpus_in);
      const auto side = read_sidecar(in, g);
      const auto records = build_training_corpus(vocab, g.symbols(), side.sentences, corpus_dm, corpus_seed);
      if (corpus_dump) {
        if (corpus_out.empty()) dump_corpus_text(std::cout, vocab, records);
        else {
          auto f = open_out(corpus_out);
          dump_corpus_text(f, vocab, records);
        }
      } else {
        if (corpus_out.empty()) throw std::invalid_argument("--out is required for the binary corpus");
        auto f = open_out(corpus_out, true);
        write_corpus(f, vocab, records);
      }
    } else if (*verify_cmd) {
      return run_verify(verify_args, verify_in);
    } else if (*train_cmd) {
      return run_train(train_grammar, train_dm, train_config, train_out);
    } else if (*eval_cmd) {
      return run_eval(eval_ck, eval_grammar, eval_suites, eval_out, ec, eval_lp, eval_layers, eval_positions,
                      eval_depths);
    } else if (*oracle_cmd) {
      return run_oracle(oracle_mode, oracle_args, oracle_prefix);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
