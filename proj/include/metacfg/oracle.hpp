#pragma once

// Exact computations on small grammars by full enumeration: string
// probabilities, the posterior over metadata given a terminal prefix, and the
// Bayes-optimal next-token distribution
//
//   p(y | x) = sum_m p(y | x, G(m)) p(m | x).
//
// Everything here is brute force and only meant for grammars whose languages
// fit in memory.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "metacfg/corpus.hpp"
#include "metacfg/ga.hpp"
#include "metacfg/grammar.hpp"
#include "metacfg/sampler.hpp"

namespace metacfg {

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TerminalString = std::vector<SymbolId>;

// Exact P(string) under a concrete grammar; strings with zero probability are
// absent. Ordered lexicographically, so all strings sharing a prefix are a
// contiguous range.
using WeightedLanguage = std::map<TerminalString, double>;

inline constexpr std::size_t kDefaultEnumerationBudget = 1'000'000;

// Distribution of the yield of each symbol, built bottom-up: a level-i symbol
// mixes uniformly over its rules, and a rule concatenates the independent
// yields of its rhs symbols. Equal strings from distinct derivations merge.
inline WeightedLanguage enumerate_language(const ConcreteGrammar& cg,
                                           std::size_t budget = kDefaultEnumerationBudget) {
  const SymbolTable& sym = cg.symbols();
  const int depth = cg.depth();
  std::vector<WeightedLanguage> below;
  for (SymbolId t : sym.terminals()) below.push_back(WeightedLanguage{{TerminalString{t}, 1.0}});

  for (int i = depth - 1; i >= 0; --i) {
    const auto& rules = cg.rule_set(i).rules;
    std::vector<WeightedLanguage> current(sym.level(i).size());
    for (SymbolId s : sym.level(i)) {
      const auto& alts = cg.alternatives(s);
      const double p_rule = 1.0 / static_cast<double>(alts.size());
      WeightedLanguage& dist = current[sym.local_index(s)];
      for (std::size_t idx : alts) {
        const Rule& r = rules[idx];
        double estimate = 1.0;
        for (SymbolId c : r.rhs) estimate *= static_cast<double>(below[sym.local_index(c)].size());
        if (estimate > static_cast<double>(budget))
          throw OracleError("enumeration of " + sym.name(s) + " needs ~" +
                            std::to_string(static_cast<std::uint64_t>(estimate)) +
                            " derivations, over the budget of " + std::to_string(budget));
        WeightedLanguage acc{{TerminalString{}, p_rule}};
        for (SymbolId c : r.rhs) {
          WeightedLanguage next;
          for (const auto& [prefix, p] : acc)
            for (const auto& [suffix, q] : below[sym.local_index(c)]) {
              TerminalString str = prefix;
              str.insert(str.end(), suffix.begin(), suffix.end());
              next[std::move(str)] += p * q;
            }
          acc.swap(next);
        }
        for (auto& [str, p] : acc) dist[str] += p;
        if (dist.size() > budget)
          throw OracleError("language of " + sym.name(s) + " exceeds the budget of " +
                            std::to_string(budget) + " strings");
      }
    }
    below.swap(current);
  }
  return below.at(0);
}

// Total probability of the strings that start with `prefix`.
inline double prefix_mass(const WeightedLanguage& lang, const TerminalString& prefix) {
  double mass = 0.0;
  for (auto it = lang.lower_bound(prefix); it != lang.end(); ++it) {
    const auto& s = it->first;
    if (s.size() < prefix.size() || !std::equal(prefix.begin(), prefix.end(), s.begin())) break;
    mass += it->second;
  }
  return mass;
}

// Distribution over the next terminal (by local index) and end-of-string.
struct NextTokenDistribution {
  std::vector<double> terminal;
  double eos = 0.0;

  double sum() const {
    double s = eos;
    for (double p : terminal) s += p;
    return s;
  }
};

// Unnormalized next-token masses of one language after `prefix`; the total
// equals prefix_mass(lang, prefix).
inline NextTokenDistribution continuation_mass(const SymbolTable& sym, const WeightedLanguage& lang,
                                               const TerminalString& prefix) {
  NextTokenDistribution out;
  out.terminal.assign(sym.terminals().size(), 0.0);
  for (auto it = lang.lower_bound(prefix); it != lang.end(); ++it) {
    const auto& s = it->first;
    if (s.size() < prefix.size() || !std::equal(prefix.begin(), prefix.end(), s.begin())) break;
    if (s.size() == prefix.size()) out.eos += it->second;
    else out.terminal[sym.local_index(s[prefix.size()])] += it->second;
  }
  return out;
}

inline NextTokenDistribution normalized(NextTokenDistribution d) {
  const double z = d.sum();
  if (z <= 0.0) throw OracleError("impossible prefix");
  for (double& p : d.terminal) p /= z;
  d.eos /= z;
  return d;
}

struct MetadataPosterior {
  std::vector<MetadataVector> metadata;
  std::vector<double> probability;

  double operator[](const MetadataVector& m) const {
    for (std::size_t k = 0; k < metadata.size(); ++k)
      if (metadata[k] == m) return probability[k];
    return 0.0;
  }
};

// Caches the language of every instantiation G(m) plus their prior-weighted
// marginal, so repeated posterior / next-token queries are cheap.
class MetadataOracle {
 public:
  // `prior` is indexed like HierarchicalGrammar::all_metadata(); empty means
  // uniform, matching sample_metadata.
  explicit MetadataOracle(const HierarchicalGrammar& g, std::vector<double> prior = {},
                          std::size_t budget = kDefaultEnumerationBudget)
      : grammar_(&g), metadata_(g.all_metadata()), prior_(std::move(prior)) {
    if (prior_.empty()) prior_.assign(metadata_.size(), 1.0 / static_cast<double>(metadata_.size()));
    if (prior_.size() != metadata_.size())
      throw std::invalid_argument("prior has " + std::to_string(prior_.size()) +
                                  " entries, grammar has " + std::to_string(metadata_.size()) +
                                  " metadata vectors");
    for (const auto& m : metadata_) languages_.push_back(enumerate_language(instantiate(g, m), budget));
    for (std::size_t k = 0; k < metadata_.size(); ++k)
      for (const auto& [s, p] : languages_[k]) marginal_[s] += prior_[k] * p;
  }

  const HierarchicalGrammar& grammar() const { return *grammar_; }
  const std::vector<MetadataVector>& metadata() const { return metadata_; }
  const std::vector<double>& prior() const { return prior_; }
  const WeightedLanguage& language(std::size_t k) const { return languages_.at(k); }
  // sum_m prior(m) P(string | G(m)).
  const WeightedLanguage& marginal() const { return marginal_; }

  MetadataPosterior posterior(const TerminalString& prefix) const {
    MetadataPosterior post;
    post.metadata = metadata_;
    post.probability.resize(metadata_.size());
    double z = 0.0;
    for (std::size_t k = 0; k < metadata_.size(); ++k) {
      post.probability[k] = prior_[k] * prefix_mass(languages_[k], prefix);
      z += post.probability[k];
    }
    if (z <= 0.0) throw OracleError("impossible prefix");
    for (double& p : post.probability) p /= z;
    return post;
  }

  // p(y | x, G(m)) for the k-th metadata vector.
  NextTokenDistribution next_token_given(std::size_t k, const TerminalString& prefix) const {
    return normalized(continuation_mass(grammar_->symbols(), languages_.at(k), prefix));
  }

  // p(y | x) from the marginal language directly.
  NextTokenDistribution next_token(const TerminalString& prefix) const {
    return normalized(continuation_mass(grammar_->symbols(), marginal_, prefix));
  }

  // p(y | x) as sum_m p(y | x, G(m)) p(m | x).
  NextTokenDistribution next_token_by_posterior(const TerminalString& prefix) const {
    const MetadataPosterior post = posterior(prefix);
    NextTokenDistribution out;
    out.terminal.assign(grammar_->symbols().terminals().size(), 0.0);
    for (std::size_t k = 0; k < metadata_.size(); ++k) {
      if (post.probability[k] <= 0.0) continue;
      const auto d = next_token_given(k, prefix);
      for (std::size_t t = 0; t < out.terminal.size(); ++t) out.terminal[t] += post.probability[k] * d.terminal[t];
      out.eos += post.probability[k] * d.eos;
    }
    return out;
  }

  // Ancestral sampling from the exact predictor, as a GA generator over the
  // given vocabulary. Prompts are [BOS] + D masks + terminals.
  Generator generator(const Vocabulary& vocab) const {
    return [this, &vocab](const std::vector<TokenId>& prompt, Rng& rng) {
      const SymbolTable& sym = grammar_->symbols();
      TerminalString prefix;
      for (std::size_t p = first_terminal_position(vocab.depth()); p < prompt.size(); ++p)
        prefix.push_back(vocab.terminal_symbol(prompt[p]));
      GenerationResult out;
      const std::size_t limit = max_yield(grammar_->depth(), 0);
      while (true) {
        if (prefix.size() > limit) {
          out.truncated = true;
          break;
        }
        const auto d = next_token(prefix);
        double u = rng.uniform_real();
        std::size_t pick = d.terminal.size();  // EOS unless a terminal is chosen
        for (std::size_t t = 0; t < d.terminal.size(); ++t) {
          if (u < d.terminal[t]) {
            pick = t;
            break;
          }
          u -= d.terminal[t];
        }
        if (pick == d.terminal.size()) break;
        const SymbolId s = sym.terminals()[pick];
        prefix.push_back(s);
        out.tokens.push_back(vocab.terminal_token(sym, s));
      }
      return out;
    };
  }

 private:
  const HierarchicalGrammar* grammar_;
  std::vector<MetadataVector> metadata_;
  std::vector<double> prior_;
  std::vector<WeightedLanguage> languages_;
  WeightedLanguage marginal_;
};

inline MetadataPosterior metadata_posterior(const HierarchicalGrammar& g, const TerminalString& prefix,
                                            std::vector<double> prior = {}) {
  return MetadataOracle(g, std::move(prior)).posterior(prefix);
}

inline NextTokenDistribution exact_next_token(const HierarchicalGrammar& g, const TerminalString& prefix) {
  return MetadataOracle(g).next_token(prefix);
}

// GA of the exact predictor. Prompts come from the generative process itself
// so that every prompt has nonzero probability under some G(m); `verify_against`
// defaults to the mixture grammar.
inline GaTable bayes_ga_upper_reference(const MetadataOracle& oracle, const Vocabulary& vocab,
                                        GaOptions opt,
                                        const ConcreteGrammar* verify_against = nullptr) {
  opt.source = PromptSource::kHierarchical;
  const ConcreteGrammar mix = mixture(oracle.grammar());
  return ga_sweep_with(oracle.grammar(), vocab, oracle.generator(vocab),
                       verify_against ? *verify_against : mix, opt);
}

}  // namespace metacfg
