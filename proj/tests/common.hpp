#pragma once

#include <string>
#include <vector>

#include "metacfg/metacfg.hpp"

namespace metacfg::testing {

inline HierarchicalGrammar toy2() { return load_grammar(std::string(METACFG_GRAMMAR_DIR) + "/toy2.cfg"); }
inline HierarchicalGrammar toy3() { return load_grammar(std::string(METACFG_GRAMMAR_DIR) + "/toy3.cfg"); }

inline MetadataVector md(std::vector<int> c) { return MetadataVector{std::move(c)}; }

// "0 0 1" or "001" for single-character terminal names.
inline std::vector<SymbolId> str(const HierarchicalGrammar& g, const std::string& s) {
  std::vector<std::string> names;
  if (s.find(' ') == std::string::npos)
    for (char c : s) names.emplace_back(1, c);
  else
    names = detail::split_ws(s);
  return parse_terminals(g.symbols(), names);
}

inline std::string text(const HierarchicalGrammar& g, const std::vector<SymbolId>& s) {
  std::string out;
  for (SymbolId t : s) out += g.symbols().name(t);
  return out;
}

// Every string over the terminals of length 1..max_len.
inline std::vector<std::vector<SymbolId>> all_strings(const SymbolTable& sym, std::size_t max_len) {
  std::vector<std::vector<SymbolId>> out, frontier{{}};
  const auto& terms = sym.terminals();
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::vector<SymbolId>> next;
    for (const auto& p : frontier)
      for (SymbolId t : terms) {
        auto s = p;
        s.push_back(t);
        next.push_back(s);
      }
    out.insert(out.end(), next.begin(), next.end());
    frontier.swap(next);
  }
  return out;
}

inline HierarchicalGrammar small_random(std::uint64_t seed, ChoiceStyle style = ChoiceStyle::kIndependent) {
  RandomGrammarOptions opt;
  opt.symbols_per_level = {1, 2, 2};
  opt.style = style;
  return random_grammar(opt, seed);
}

}  // namespace metacfg::testing
