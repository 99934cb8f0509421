#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "common.hpp"

namespace metacfg {
namespace {

using testing::toy2;
using testing::md;
using testing::str;

double entropy(const std::vector<double>& p) {
  double h = 0;
  for (double x : p)
    if (x > 0) h -= x * std::log(x);
  return h;
}

TEST(EnumerateLanguage, Toy2Support) {
  const auto g = toy2();
  const auto lang = enumerate_language(instantiate(g, md({0, 1})));
  std::vector<std::string> got;
  double total = 0;
  for (const auto& [s, p] : lang) {
    got.push_back(testing::text(g, s));
    total += p;
  }
  EXPECT_EQ(got, (std::vector<std::string>{"0001", "00101", "11101", "111101"}));
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(EnumerateLanguage, HandExpandedDerivation) {
  const auto g = toy2();
  const auto lang = enumerate_language(instantiate(g, md({0, 1})));
  // S -> A B (1 of 1), A -> 0 0 (1 of 2), B -> 0 1 (1 of 2).
  EXPECT_DOUBLE_EQ(lang.at(str(g, "0001")), 1.0 * 0.5 * 0.5);
  // Under (1, 1): "0101" only via S -> B B (1/3), B -> 0 1 twice (1/2 each).
  const auto l11 = enumerate_language(instantiate(g, md({1, 1})));
  EXPECT_DOUBLE_EQ(l11.at(str(g, "0101")), (1.0 / 3) * 0.25);
}

TEST(EnumerateLanguage, AmbiguousDerivationsMerge) {
  const auto g = parse_grammar(
      "depth: 2\nlevel 0: S\nlevel 1: A B\nlevel 2: x\n"
      "rules level=0 choice=0:\n S -> A B\n"
      "rules level=1 choice=0:\n A -> x x\n A -> x x x\n B -> x x\n B -> x x x\n");
  const auto lang = enumerate_language(instantiate(g, md({0, 0})));
  ASSERT_EQ(lang.size(), 3u);
  EXPECT_DOUBLE_EQ(lang.at(std::vector<SymbolId>(5, g.symbols().terminals()[0])), 0.5);
}

TEST(EnumerateLanguage, SumsToOneOnRandomGrammars) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = random_grammar(RandomGrammarOptions{}, seed);
    double total = 0;
    for (const auto& [s, p] : enumerate_language(instantiate(g, g.all_metadata()[seed % 8]))) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
    const auto small = testing::small_random(seed);
    total = 0;
    for (const auto& [s, p] : enumerate_language(mixture(small))) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(EnumerateLanguage, BudgetExceeded) {
  const auto g = random_grammar(RandomGrammarOptions{}, 1);
  try {
    enumerate_language(mixture(g), 10);
    FAIL();
  } catch (const OracleError& e) {
    EXPECT_NE(std::string(e.what()).find("budget of 10"), std::string::npos);
  }
}

TEST(EnumerateLanguage, MarginalMatchesSamplerFrequencies) {
  const auto g = testing::toy3();
  const MetadataOracle oracle(g);
  const std::size_t n = 60000;
  std::map<std::vector<SymbolId>, int> counts;
  for (const auto& s : sample_batch(g, n, 31)) ++counts[s.terminals];
  double chi2 = 0;
  for (const auto& [s, p] : oracle.marginal()) {
    const double sd = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(counts[s] / static_cast<double>(n), p, 4.5 * sd) << testing::text(g, s);
    const double e = p * n;
    chi2 += (counts[s] - e) * (counts[s] - e) / e;
  }
  // 32 strings, 31 dof; 61.1 is the 0.999 quantile
  ASSERT_EQ(oracle.marginal().size(), 32u);
  EXPECT_LT(chi2, 61.1);
  for (const auto& [s, c] : counts) EXPECT_TRUE(oracle.marginal().count(s));
}

TEST(Posterior, EmptyPrefixIsPrior) {
  const auto g = testing::toy3();
  const auto post = metadata_posterior(g, {});
  for (double p : post.probability) EXPECT_NEAR(p, 1.0 / 6, 1e-15);
  const std::vector<double> prior{0.1, 0.2, 0.3, 0.1, 0.2, 0.1};
  const auto weighted = metadata_posterior(g, {}, prior);
  for (std::size_t k = 0; k < prior.size(); ++k) EXPECT_NEAR(weighted.probability[k], prior[k], 1e-15);
}

TEST(Posterior, UniquePrefixGivesPointMass) {
  const auto g = toy2();
  const MetadataOracle oracle(g);
  // Search for a prefix consistent with exactly one instantiation.
  std::vector<SymbolId> found;
  for (const auto& s : testing::all_strings(g.symbols(), 6)) {
    int consistent = 0;
    for (std::size_t k = 0; k < oracle.metadata().size(); ++k) consistent += prefix_mass(oracle.language(k), s) > 0;
    if (consistent == 1) {
      found = s;
      break;
    }
  }
  ASSERT_FALSE(found.empty());
  const auto post = oracle.posterior(found);
  double max = 0;
  for (double p : post.probability) max = std::max(max, p);
  EXPECT_DOUBLE_EQ(max, 1.0);
  EXPECT_DOUBLE_EQ(oracle.posterior(str(g, "11101"))[md({0, 1})], 1.0);
}

TEST(Posterior, PointMassPriorReducesToIndicator) {
  const auto g = toy2();
  std::vector<double> prior(4, 0.0);
  prior[1] = 1.0;
  const MetadataOracle oracle(g, prior);
  const auto post = oracle.posterior(str(g, "00"));
  EXPECT_DOUBLE_EQ(post.probability[1], 1.0);
  EXPECT_THROW(oracle.posterior(str(g, "0100")), OracleError);
}

TEST(Posterior, ImpossiblePrefixAndBadPrior) {
  const auto g = toy2();
  EXPECT_THROW(metadata_posterior(g, str(g, "11111111")), OracleError);
  EXPECT_THROW(MetadataOracle(g, {0.5, 0.5}), std::invalid_argument);
}

TEST(Posterior, EntropyNonIncreasingInExpectation) {
  for (const auto& g : {toy2(), testing::toy3()}) {
    const MetadataOracle oracle(g);
    const std::size_t n = 20000, horizon = min_yield(g.depth(), 0);
    std::vector<double> mean(horizon + 1, 0.0);
    for (const auto& s : sample_batch(g, n, 8)) {
      for (std::size_t t = 0; t <= horizon; ++t) {
        const std::vector<SymbolId> prefix(s.terminals.begin(), s.terminals.begin() + t);
        const auto post = oracle.posterior(prefix);
        for (double p : post.probability) ASSERT_LE(p, 1.0 + 1e-12);
        mean[t] += entropy(post.probability) / n;
      }
    }
    for (std::size_t t = 0; t < horizon; ++t) EXPECT_LE(mean[t + 1], mean[t] + 0.01) << "t=" << t;
    EXPECT_LT(mean[horizon], mean[0]);
  }
}

TEST(NextToken, MarginalizationIdentity) {
  for (const auto& g : {toy2(), testing::toy3()}) {
    const MetadataOracle oracle(g);
    std::vector<std::vector<SymbolId>> prefixes{{}};
    for (const auto& s : sample_batch(g, 300, 12))
      for (std::size_t t = 1; t <= s.size(); ++t) prefixes.emplace_back(s.terminals.begin(), s.terminals.begin() + t);
    for (const auto& x : prefixes) {
      const auto direct = oracle.next_token(x);
      const auto composed = oracle.next_token_by_posterior(x);
      EXPECT_NEAR(direct.sum(), 1.0, 1e-12);
      EXPECT_NEAR(direct.eos, composed.eos, 1e-10);
      for (std::size_t t = 0; t < direct.terminal.size(); ++t) EXPECT_NEAR(direct.terminal[t], composed.terminal[t], 1e-10);
    }
  }
}

TEST(NextToken, MaximalSentenceEndsWithCertainty) {
  const auto g = toy2();
  const auto d = exact_next_token(g, str(g, "111101"));
  EXPECT_DOUBLE_EQ(d.eos, 1.0);
  EXPECT_THROW(exact_next_token(g, str(g, "11111111")), OracleError);
}

TEST(NextToken, EntropyFloorMatchesMonteCarloLoss) {
  const auto g = testing::toy3();
  const MetadataOracle oracle(g);
  const SymbolTable& sym = g.symbols();
  double entropy_sum = 0, nll_sum = 0;
  std::size_t tokens = 0;
  for (const auto& s : sample_batch(g, 20000, 41)) {
    std::vector<SymbolId> prefix;
    for (std::size_t t = 0; t <= s.size(); ++t) {
      const auto d = oracle.next_token(prefix);
      std::vector<double> p = d.terminal;
      p.push_back(d.eos);
      entropy_sum += entropy(p);
      nll_sum -= std::log(t < s.size() ? d.terminal[sym.local_index(s.terminals[t])] : d.eos);
      ++tokens;
      if (t < s.size()) prefix.push_back(s.terminals[t]);
    }
  }
  EXPECT_NEAR(nll_sum / tokens, entropy_sum / tokens, 0.02);
}

TEST(BayesGa, ExactPredictorNeverLeavesLanguage) {
  for (const auto& g : {toy2(), testing::toy3()}) {
    const Vocabulary vocab(g);
    const MetadataOracle oracle(g);
    GaOptions opt;
    opt.prompt_lengths = {1, 2, 4, 6};
    opt.n = 200;
    opt.seed = 3;
    const auto table = bayes_ga_upper_reference(oracle, vocab, opt);
    ASSERT_EQ(table.size(), 4u);
    for (const auto& c : table) {
      EXPECT_GT(c.n, 0u);
      EXPECT_DOUBLE_EQ(c.accuracy, 1.0) << "l_p=" << c.prompt_length;
    }
  }
}

TEST(BayesGa, MismatchedVerifierIsDetected) {
  const auto g = toy2();
  const Vocabulary vocab(g);
  const auto a = instantiate(g, md({0, 0})), b = instantiate(g, md({1, 0}));
  for (const auto& [s, p] : enumerate_language(a)) ASSERT_FALSE(enumerate_language(b).count(s));
  // Only R_{0,0} and R_{1,0}, so prompts and generations all come from G(0,0).
  const HierarchicalGrammar single(g.symbols_ptr(), {{g.rule_set(0, 0)}, {g.rule_set(1, 0)}});
  const MetadataOracle oracle(single);
  GaOptions opt;
  opt.prompt_lengths = {1};
  opt.n = 100;
  const auto matched = bayes_ga_upper_reference(oracle, vocab, opt, &a);
  const auto mismatched = bayes_ga_upper_reference(oracle, vocab, opt, &b);
  EXPECT_DOUBLE_EQ(matched[0].accuracy, 1.0);
  EXPECT_LT(mismatched[0].accuracy, 1.0);
}

TEST(BayesGa, ZeroItemsGivesEmptyTable) {
  const auto g = toy2();
  const Vocabulary vocab(g);
  GaOptions opt;
  opt.n = 0;
  EXPECT_TRUE(bayes_ga_upper_reference(MetadataOracle(g), vocab, opt).empty());
}

TEST(GaSweep, GroundTruthAndConstantGenerators) {
  const auto g = testing::toy3();
  const Vocabulary vocab(g);
  const auto mix = mixture(g);
  const SymbolTable& sym = g.symbols();
  // Rejection-samples a mixture sentence that extends the prompt.
  Generator truth = [&](const std::vector<TokenId>& prompt, Rng& rng) {
    std::vector<SymbolId> prefix;
    for (std::size_t p = first_terminal_position(g.depth()); p < prompt.size(); ++p)
      prefix.push_back(vocab.terminal_symbol(prompt[p]));
    while (true) {
      const auto s = sample_terminals(mix, rng);
      if (s.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), s.begin())) {
        GenerationResult out;
        for (std::size_t k = prefix.size(); k < s.size(); ++k) out.tokens.push_back(vocab.terminal_token(sym, s[k]));
        return out;
      }
    }
  };
  Generator junk = [&](const std::vector<TokenId>&, Rng&) {
    GenerationResult out;
    out.tokens.assign(30, vocab.terminal_token(sym, sym.terminals()[0]));
    return out;
  };
  Generator stray = [&](const std::vector<TokenId>&, Rng&) {
    GenerationResult out;
    out.tokens = {Vocabulary::kMask};
    return out;
  };
  GaOptions opt;
  opt.prompt_lengths = {1, 3, 5};
  opt.n = 150;
  for (const auto& c : ga_sweep_with(g, vocab, truth, mix, opt)) EXPECT_DOUBLE_EQ(c.accuracy, 1.0);
  for (const auto& c : ga_sweep_with(g, vocab, junk, mix, opt)) EXPECT_DOUBLE_EQ(c.accuracy, 0.0);
  for (const auto& c : ga_sweep_with(g, vocab, stray, mix, opt)) EXPECT_DOUBLE_EQ(c.accuracy, 0.0);
}

TEST(GaSweep, ReportsAchievedCountWhenSentencesAreShort) {
  const auto g = toy2();
  const Vocabulary vocab(g);
  GaOptions opt;
  opt.prompt_lengths = {10};
  opt.n = 10;
  const auto table = bayes_ga_upper_reference(MetadataOracle(g), vocab, opt);
  EXPECT_EQ(table[0].n, 0u);
  EXPECT_EQ(table[0].n_requested, 10u);
}

}  // namespace
}  // namespace metacfg
