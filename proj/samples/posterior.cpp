// Posterior over metadata as a prefix of one sentence grows.
//
//   metacfg_sample_posterior grammars/toy3.cfg

#include <iomanip>
#include <iostream>

#include "metacfg/metacfg.hpp"

int main(int argc, char** argv) {
  using namespace metacfg;
  if (argc < 2) {
    std::cerr << "usage: " << argv[0] << " GRAMMAR [SEED]\n";
    return 2;
  }
  const auto g = load_grammar(argv[1]);
  const MetadataOracle oracle(g);
  Rng rng(argc > 2 ? std::stoull(argv[2]) : 1);
  const auto m = sample_metadata(g, rng);
  const auto s = sample_sentence(instantiate(g, m), rng);
  std::cout << "truth " << to_string(m) << ", sentence " << join_terminals(g.symbols(), s.terminals) << "\n";
  TerminalString prefix;
  for (std::size_t t = 0; t <= s.size(); ++t) {
    const auto post = oracle.posterior(prefix);
    std::cout << std::setw(3) << t << "  p(truth | prefix) = " << std::fixed << std::setprecision(4) << post[m] << "\n";
    if (t < s.size()) prefix.push_back(s.terminals[t]);
  }
}
