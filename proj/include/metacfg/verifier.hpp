#pragma once

// Membership testing for layered grammars with CYK. Because every rule maps
// level i to level i+1, the chart is built one level at a time from the
// terminals upward, and each level only consults the level below it.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "metacfg/grammar.hpp"

namespace metacfg {

namespace detail {

// Fixed-width bitset over one level's symbols, stored in a flat span table.
class SpanSets {
 public:
  SpanSets() = default;
  SpanSets(std::size_t n, std::size_t bits)
      : n_(n), words_((bits + 63) / 64), data_((n + 1) * (n + 1) * words_, 0) {}

  bool test(std::size_t a, std::size_t b, std::size_t bit) const {
    return (data_[cell(a, b) + bit / 64] >> (bit % 64)) & 1u;
  }
  void set(std::size_t a, std::size_t b, std::size_t bit) {
    data_[cell(a, b) + bit / 64] |= std::uint64_t{1} << (bit % 64);
  }
  bool any(std::size_t a, std::size_t b) const {
    for (std::size_t w = 0; w < words_; ++w)
      if (data_[cell(a, b) + w]) return true;
    return false;
  }

 private:
  std::size_t cell(std::size_t a, std::size_t b) const { return (a * (n_ + 1) + b) * words_; }
  std::size_t n_ = 0, words_ = 0;
  std::vector<std::uint64_t> data_;
};

inline std::uint64_t ipow(std::uint64_t base, int e) {
  std::uint64_t r = 1;
  while (e-- > 0) r *= base;
  return r;
}

}  // namespace detail

// Shortest and longest possible yield of a level-`level` symbol in a grammar
// of depth D: every rule has arity 2 or 3.
inline std::uint64_t min_yield(int depth, int level) { return detail::ipow(2, depth - level); }
inline std::uint64_t max_yield(int depth, int level) { return detail::ipow(3, depth - level); }

// Span table for every level: entry (i, [a,b)) holds the level-i symbols that
// derive terminals[a..b).
class ParseChart {
 public:
  ParseChart(const SymbolTable& symbols, std::size_t n) : symbols_(&symbols), n_(n) {
    for (int i = 0; i <= symbols.depth(); ++i) levels_.emplace_back(n, symbols.level(i).size());
  }

  std::size_t length() const { return n_; }
  bool contains(int level, std::size_t a, std::size_t b, SymbolId s) const {
    return levels_.at(level).test(a, b, symbols_->local_index(s));
  }
  std::vector<SymbolId> symbols_at(int level, std::size_t a, std::size_t b) const {
    std::vector<SymbolId> out;
    for (SymbolId s : symbols_->level(level))
      if (contains(level, a, b, s)) out.push_back(s);
    return out;
  }

  detail::SpanSets& level(int i) { return levels_[i]; }
  const detail::SpanSets& level(int i) const { return levels_[i]; }

 private:
  const SymbolTable* symbols_;
  std::size_t n_;
  std::vector<detail::SpanSets> levels_;
};

inline void check_terminals(const SymbolTable& symbols, const std::vector<SymbolId>& terminals) {
  if (terminals.empty()) throw std::invalid_argument("empty terminal string");
  for (SymbolId t : terminals) {
    if (t.value >= symbols.size() || symbols.level_of(t) != symbols.depth())
      throw std::invalid_argument("token is not a terminal of this grammar");
  }
}

// Builds the chart in O(D * n^3 * |rules|). Ternary rules s -> u v w are
// binarized as s -> u X, X -> v w with a fresh X per rule; X lives alongside
// the level-(i+1) symbols while level i is being filled.
inline ParseChart parse(const ConcreteGrammar& cg, const std::vector<SymbolId>& terminals) {
  const SymbolTable& sym = cg.symbols();
  check_terminals(sym, terminals);
  const std::size_t n = terminals.size();
  const int depth = cg.depth();
  ParseChart chart(sym, n);

  for (std::size_t a = 0; a < n; ++a) chart.level(depth).set(a, a + 1, sym.local_index(terminals[a]));

  struct Binary {
    std::uint32_t lhs, left, right;
  };
  for (int i = depth - 1; i >= 0; --i) {
    const auto& rules = cg.rule_set(i).rules;
    const std::size_t below = sym.level(i + 1).size();

    // Extended alphabet at level i+1: real symbols, then one X per ternary rule.
    std::vector<Binary> intermediates;  // X -> v w
    std::vector<Binary> binaries;       // s -> left right over the extended alphabet
    for (const Rule& r : rules) {
      const auto lhs = sym.local_index(r.lhs);
      if (r.rhs.size() == 2) {
        binaries.push_back({lhs, sym.local_index(r.rhs[0]), sym.local_index(r.rhs[1])});
      } else {
        const auto x = static_cast<std::uint32_t>(below + intermediates.size());
        intermediates.push_back({x, sym.local_index(r.rhs[1]), sym.local_index(r.rhs[2])});
        binaries.push_back({lhs, sym.local_index(r.rhs[0]), x});
      }
    }

    const detail::SpanSets& lower = chart.level(i + 1);
    detail::SpanSets ext(n, below + intermediates.size());
    const std::uint64_t child_min = min_yield(depth, i + 1), child_max = max_yield(depth, i + 1);
    auto child_ok = [&](std::size_t len) { return len >= child_min && len <= child_max; };

    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b <= n; ++b) {
        if (!child_ok(b - a)) continue;
        for (std::size_t k = 0; k < below; ++k)
          if (lower.test(a, b, k)) ext.set(a, b, k);
      }
    for (std::size_t len = 2 * child_min; len <= std::min<std::uint64_t>(n, 2 * child_max); ++len)
      for (std::size_t a = 0; a + len <= n; ++a) {
        const std::size_t b = a + len;
        for (std::size_t c = a + child_min; c + child_min <= b; ++c) {
          if (!child_ok(c - a) || !child_ok(b - c)) continue;
          for (const Binary& x : intermediates)
            if (lower.test(a, c, x.left) && lower.test(c, b, x.right)) ext.set(a, b, x.lhs);
        }
      }

    detail::SpanSets& out = chart.level(i);
    const std::uint64_t lo = min_yield(depth, i), hi = max_yield(depth, i);
    for (std::size_t len = lo; len <= std::min<std::uint64_t>(n, hi); ++len)
      for (std::size_t a = 0; a + len <= n; ++a) {
        const std::size_t b = a + len;
        for (std::size_t c = a + child_min; c < b; ++c) {
          if (!child_ok(c - a) || !ext.any(c, b)) continue;
          for (const Binary& r : binaries)
            if (!out.test(a, b, r.lhs) && ext.test(a, c, r.left) && ext.test(c, b, r.right))
              out.set(a, b, r.lhs);
        }
      }
  }
  return chart;
}

inline bool accepts(const ConcreteGrammar& cg, const std::vector<SymbolId>& terminals) {
  check_terminals(cg.symbols(), terminals);
  const std::size_t n = terminals.size();
  if (n < min_yield(cg.depth(), 0) || n > max_yield(cg.depth(), 0)) return false;
  const ParseChart chart = parse(cg, terminals);
  return chart.contains(0, 0, n, cg.symbols().root());
}

// Reference recognizer without binarization: ternary rules enumerate both
// split points directly, O(D * n^4). Used for differential testing only.
inline bool accepts_reference(const ConcreteGrammar& cg, const std::vector<SymbolId>& terminals) {
  const SymbolTable& sym = cg.symbols();
  check_terminals(sym, terminals);
  const std::size_t n = terminals.size();
  const int depth = cg.depth();
  std::vector<std::vector<std::vector<std::vector<bool>>>> chart(
      depth + 1, std::vector<std::vector<std::vector<bool>>>(
                     n + 1, std::vector<std::vector<bool>>(n + 1)));
  for (int i = 0; i <= depth; ++i)
    for (auto& row : chart[i])
      for (auto& cell : row) cell.assign(sym.level(i).size(), false);
  for (std::size_t a = 0; a < n; ++a) chart[depth][a][a + 1][sym.local_index(terminals[a])] = true;

  for (int i = depth - 1; i >= 0; --i) {
    const auto& below = chart[i + 1];
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b <= n; ++b)
        for (const Rule& r : cg.rule_set(i).rules) {
          bool ok = false;
          if (r.rhs.size() == 2) {
            for (std::size_t c = a + 1; c < b && !ok; ++c)
              ok = below[a][c][sym.local_index(r.rhs[0])] && below[c][b][sym.local_index(r.rhs[1])];
          } else {
            for (std::size_t c = a + 1; c < b && !ok; ++c)
              for (std::size_t e = c + 1; e < b && !ok; ++e)
                ok = below[a][c][sym.local_index(r.rhs[0])] &&
                     below[c][e][sym.local_index(r.rhs[1])] &&
                     below[e][b][sym.local_index(r.rhs[2])];
          }
          if (ok) chart[i][a][b][sym.local_index(r.lhs)] = true;
        }
  }
  return chart[0][0][n][0];
}

struct GaResult {
  double accuracy = 0.0;
  // Binomial standard error sqrt(p(1-p)/n).
  double stderr_ = 0.0;
  std::size_t n = 0;
  std::vector<bool> verdicts;
};

inline double binomial_stderr(double p, std::size_t n) {
  return n == 0 ? 0.0 : std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

inline GaResult grammatical_accuracy(const ConcreteGrammar& cg,
                                     const std::vector<std::vector<SymbolId>>& completions) {
  if (completions.empty()) throw std::invalid_argument("grammatical_accuracy needs n >= 1");
  GaResult out;
  out.n = completions.size();
  std::size_t hits = 0;
  for (const auto& z : completions) {
    const bool ok = !z.empty() && accepts(cg, z);
    out.verdicts.push_back(ok);
    hits += ok;
  }
  out.accuracy = static_cast<double>(hits) / static_cast<double>(out.n);
  out.stderr_ = binomial_stderr(out.accuracy, out.n);
  return out;
}

}  // namespace metacfg
