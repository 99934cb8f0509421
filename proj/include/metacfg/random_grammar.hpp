#pragma once

// Random D-level grammars for property tests and experiment presets.

#include <algorithm>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "metacfg/grammar.hpp"
#include "metacfg/rng.hpp"

namespace metacfg {

enum class ChoiceStyle {
  // Every rule set is drawn independently.
  kIndependent,
  // Choice 0 is random; choice j > 0 reuses each rule of choice 0 with its rhs
  // reordered. Per-lhs rhs multisets are then identical across choices, so the
  // choices differ in word order only, never in symbol frequencies.
  kPermutedRhs,
};

struct RandomGrammarOptions {
  // symbols_per_level[0] must be 1 (the root); size is D + 1.
  std::vector<int> symbols_per_level{1, 3, 3, 3};
  int choices = 2;
  int min_rules = 2;
  int max_rules = 2;
  double ternary_probability = 0.5;
  ChoiceStyle style = ChoiceStyle::kPermutedRhs;
};

inline std::string default_symbol_name(int level, int depth, int k) {
  if (level == 0) return "S";
  if (level == depth)
    return k < 26 ? std::string(1, static_cast<char>('a' + k)) : "t" + std::to_string(k);
  std::string base = k < 26 ? std::string(1, static_cast<char>('A' + k)) : "N" + std::to_string(k) + "_";
  return base + std::to_string(level);
}

inline HierarchicalGrammar random_grammar(const RandomGrammarOptions& opt, std::uint64_t seed) {
  const int depth = static_cast<int>(opt.symbols_per_level.size()) - 1;
  if (depth < 1 || opt.symbols_per_level[0] != 1)
    throw std::invalid_argument("symbols_per_level must start with 1 and have length >= 2");
  if (opt.min_rules < 1 || opt.max_rules < opt.min_rules || opt.choices < 1)
    throw std::invalid_argument("invalid rule counts");

  std::vector<std::vector<std::string>> names(depth + 1);
  for (int i = 0; i <= depth; ++i)
    for (int k = 0; k < opt.symbols_per_level[i]; ++k)
      names[i].push_back(default_symbol_name(i, depth, k));
  auto symbols = std::make_shared<const SymbolTable>(names);

  Rng rng(seed);
  auto random_rhs = [&](int level) {
    const auto& next = symbols->level(level + 1);
    std::vector<SymbolId> rhs(rng.coin(opt.ternary_probability) ? 3 : 2);
    for (auto& s : rhs) s = next[rng.uniform(next.size())];
    return rhs;
  };
  auto random_rule_set = [&](int level) {
    RuleSet rs{level, 0, {}};
    for (SymbolId lhs : symbols->level(level)) {
      const int n = opt.min_rules + static_cast<int>(rng.uniform(opt.max_rules - opt.min_rules + 1));
      for (int r = 0; r < n; ++r) {
        Rule rule{lhs, random_rhs(level)};
        for (int attempt = 0; attempt < 64 &&
                              std::find(rs.rules.begin(), rs.rules.end(), rule) != rs.rules.end();
             ++attempt)
          rule.rhs = random_rhs(level);
        rs.rules.push_back(std::move(rule));
      }
    }
    return rs;
  };
  auto covers_next_level = [&](const RuleSet& rs) {
    std::vector<bool> seen(symbols->level(rs.level + 1).size(), false);
    for (const Rule& r : rs.rules)
      for (SymbolId s : r.rhs) seen[symbols->local_index(s)] = true;
    return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
  };

  std::vector<std::vector<RuleSet>> choices(depth);
  for (int i = 0; i < depth; ++i) {
    RuleSet base = random_rule_set(i);
    for (int attempt = 0; attempt < 256 && !covers_next_level(base); ++attempt)
      base = random_rule_set(i);
    choices[i].push_back(base);
    for (int j = 1; j < opt.choices; ++j) {
      if (opt.style == ChoiceStyle::kIndependent) {
        RuleSet rs = random_rule_set(i);
        for (int attempt = 0; attempt < 256 && !covers_next_level(rs); ++attempt)
          rs = random_rule_set(i);
        rs.choice = j;
        choices[i].push_back(std::move(rs));
        continue;
      }
      RuleSet rs{i, j, {}};
      for (const Rule& r : base.rules) {
        Rule permuted = r;
        std::vector<int> order(r.rhs.size());
        std::iota(order.begin(), order.end(), 0);
        // Shuffle until the rhs actually changes, when it can.
        for (int attempt = 0; attempt < 16; ++attempt) {
          for (std::size_t k = order.size(); k > 1; --k)
            std::swap(order[k - 1], order[rng.uniform(k)]);
          for (std::size_t k = 0; k < order.size(); ++k) permuted.rhs[k] = r.rhs[order[k]];
          if (permuted.rhs != r.rhs) break;
        }
        rs.rules.push_back(std::move(permuted));
      }
      choices[i].push_back(std::move(rs));
    }
  }
  return HierarchicalGrammar(std::move(symbols), std::move(choices));
}

}  // namespace metacfg
