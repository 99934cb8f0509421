#pragma once

// Layered (D-level) probabilistic context-free grammars whose per-level rule
// sets come in several alternative choices. A metadata vector picks one choice
// per level and yields a concrete grammar; the mixture grammar takes the
// level-wise union of all choices.
//
// Grammar spec text format:
//
//   # comment
//   depth: 2
//   level 0: S
//   level 1: A B
//   level 2: 0 1
//   rules level=0 choice=0:
//     S -> A B
//   rules level=1 choice=0:
//     A -> 0 0
//     B -> 0 1
//
// Rule probabilities are uniform over rules sharing a left-hand side.

#include <algorithm>
#include <cctype>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "metacfg/rng.hpp"

namespace metacfg {

class GrammarError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GrammarParseError : public GrammarError {
 public:
  GrammarParseError(int line, const std::string& what)
      : GrammarError("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class GrammarValidationError : public GrammarError {
 public:
  using GrammarError::GrammarError;
};

struct SymbolId {
  std::uint32_t value = 0;
  auto operator<=>(const SymbolId&) const = default;
};

struct Symbol {
  std::string name;
  int level = 0;
  // Position of the symbol inside its level; dense in [0, |S_level|).
  std::uint32_t local = 0;
};

// Symbols of all levels. Ids are global and never reused across levels.
class SymbolTable {
 public:
  SymbolTable() = default;

  // level_names[i] lists the symbols of level i; validates disjointness and
  // the single-root requirement.
  explicit SymbolTable(const std::vector<std::vector<std::string>>& level_names) {
    if (level_names.size() < 2)
      throw GrammarValidationError("grammar needs depth >= 1");
    if (level_names[0].size() != 1)
      throw GrammarValidationError("level 0 must contain exactly one root symbol, found " +
                                   std::to_string(level_names[0].size()));
    by_level_.resize(level_names.size());
    for (std::size_t lvl = 0; lvl < level_names.size(); ++lvl) {
      if (level_names[lvl].empty())
        throw GrammarValidationError("level " + std::to_string(lvl) + " declares no symbols");
      for (const auto& name : level_names[lvl]) {
        if (auto it = index_.find(name); it != index_.end()) {
          throw GrammarValidationError("symbol " + name + " declared at level " +
                                       std::to_string(symbols_[it->second.value].level) +
                                       " and again at level " + std::to_string(lvl));
        }
        SymbolId id{static_cast<std::uint32_t>(symbols_.size())};
        symbols_.push_back(Symbol{name, static_cast<int>(lvl),
                                  static_cast<std::uint32_t>(by_level_[lvl].size())});
        by_level_[lvl].push_back(id);
        index_.emplace(name, id);
      }
    }
  }

  int depth() const { return static_cast<int>(by_level_.size()) - 1; }
  std::size_t size() const { return symbols_.size(); }
  SymbolId root() const { return by_level_[0][0]; }
  const std::vector<SymbolId>& level(int i) const { return by_level_.at(i); }
  const std::vector<SymbolId>& terminals() const { return by_level_.back(); }
  const Symbol& operator[](SymbolId id) const { return symbols_.at(id.value); }
  const std::string& name(SymbolId id) const { return symbols_.at(id.value).name; }
  int level_of(SymbolId id) const { return symbols_.at(id.value).level; }
  std::uint32_t local_index(SymbolId id) const { return symbols_.at(id.value).local; }

  std::optional<SymbolId> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<Symbol> symbols_;
  std::vector<std::vector<SymbolId>> by_level_;
  std::unordered_map<std::string, SymbolId> index_;
};

struct Rule {
  SymbolId lhs;
  std::vector<SymbolId> rhs;
  auto operator<=>(const Rule&) const = default;
  bool operator==(const Rule&) const = default;
};

struct RuleSet {
  int level = 0;
  // -1 marks the level-wise union used by the mixture grammar.
  int choice = 0;
  std::vector<Rule> rules;
};

struct MetadataVector {
  std::vector<int> choices;
  auto operator<=>(const MetadataVector&) const = default;
  bool operator==(const MetadataVector&) const = default;
  std::size_t size() const { return choices.size(); }
  int operator[](std::size_t i) const { return choices[i]; }
};

inline std::string to_string(const MetadataVector& m, char sep = ' ') {
  std::string out;
  for (std::size_t i = 0; i < m.choices.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(m.choices[i]);
  }
  return out;
}

namespace detail {

inline std::string rule_set_label(int level, int choice) {
  if (choice < 0) return "R_{" + std::to_string(level) + ",*}";
  return "R_{" + std::to_string(level) + "," + std::to_string(choice) + "}";
}

// Checks level discipline, arity and lhs coverage of one rule set.
inline void validate_rule_set(const SymbolTable& symbols, const RuleSet& rs) {
  const std::string label = rule_set_label(rs.level, rs.choice);
  std::vector<bool> covered(symbols.level(rs.level).size(), false);
  for (const Rule& r : rs.rules) {
    if (r.lhs.value >= symbols.size())
      throw GrammarValidationError("rule in " + label + " references an undeclared symbol");
    if (symbols.level_of(r.lhs) != rs.level)
      throw GrammarValidationError("rule in " + label + " has lhs " + symbols.name(r.lhs) +
                                   " from level " + std::to_string(symbols.level_of(r.lhs)));
    if (r.rhs.size() != 2 && r.rhs.size() != 3)
      throw GrammarValidationError("rule for " + symbols.name(r.lhs) + " in " + label +
                                   " has rhs length " + std::to_string(r.rhs.size()) +
                                   " (must be 2 or 3)");
    for (SymbolId s : r.rhs) {
      if (s.value >= symbols.size())
        throw GrammarValidationError("rule in " + label + " references an undeclared symbol");
      if (symbols.level_of(s) != rs.level + 1)
        throw GrammarValidationError("rule for " + symbols.name(r.lhs) + " in " + label +
                                     " has rhs symbol " + symbols.name(s) + " at level " +
                                     std::to_string(symbols.level_of(s)) + ", expected level " +
                                     std::to_string(rs.level + 1));
    }
    covered[symbols.local_index(r.lhs)] = true;
  }
  for (std::size_t k = 0; k < covered.size(); ++k) {
    if (!covered[k])
      throw GrammarValidationError("symbol " + symbols.name(symbols.level(rs.level)[k]) +
                                   " at level " + std::to_string(rs.level) + " has no rule in " +
                                   label);
  }
}

}  // namespace detail

// A grammar with exactly one rule set per level. Rules are indexed by lhs so
// sampling and parsing can look up alternatives in O(1).
class ConcreteGrammar {
 public:
  ConcreteGrammar(std::shared_ptr<const SymbolTable> symbols, std::vector<RuleSet> levels)
      : symbols_(std::move(symbols)), levels_(std::move(levels)) {
    if (static_cast<int>(levels_.size()) != symbols_->depth())
      throw GrammarValidationError("expected one rule set per level");
    by_lhs_.resize(levels_.size());
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      detail::validate_rule_set(*symbols_, levels_[i]);
      by_lhs_[i].resize(symbols_->level(static_cast<int>(i)).size());
      for (std::size_t r = 0; r < levels_[i].rules.size(); ++r)
        by_lhs_[i][symbols_->local_index(levels_[i].rules[r].lhs)].push_back(r);
    }
  }

  int depth() const { return symbols_->depth(); }
  const SymbolTable& symbols() const { return *symbols_; }
  const std::shared_ptr<const SymbolTable>& symbols_ptr() const { return symbols_; }
  const RuleSet& rule_set(int level) const { return levels_.at(level); }
  const std::vector<RuleSet>& rule_sets() const { return levels_; }

  // Indices into rule_set(level).rules of the alternatives for `lhs`.
  const std::vector<std::size_t>& alternatives(SymbolId lhs) const {
    return by_lhs_[symbols_->level_of(lhs)][symbols_->local_index(lhs)];
  }

  bool operator==(const ConcreteGrammar& other) const {
    if (symbols_ != other.symbols_ || levels_.size() != other.levels_.size()) return false;
    for (std::size_t i = 0; i < levels_.size(); ++i)
      if (levels_[i].rules != other.levels_[i].rules) return false;
    return true;
  }

 private:
  std::shared_ptr<const SymbolTable> symbols_;
  std::vector<RuleSet> levels_;
  std::vector<std::vector<std::vector<std::size_t>>> by_lhs_;
};

class HierarchicalGrammar {
 public:
  // choices[i][j] is the rule set R_{i,j}. Every (level, choice) pair is
  // validated independently.
  HierarchicalGrammar(std::shared_ptr<const SymbolTable> symbols,
                      std::vector<std::vector<RuleSet>> choices)
      : symbols_(std::move(symbols)), choices_(std::move(choices)) {
    if (static_cast<int>(choices_.size()) != symbols_->depth())
      throw GrammarValidationError("expected rule choices for levels 0.." +
                                   std::to_string(symbols_->depth() - 1));
    for (std::size_t i = 0; i < choices_.size(); ++i) {
      if (choices_[i].empty())
        throw GrammarValidationError("level " + std::to_string(i) + " has no rule set");
      for (std::size_t j = 0; j < choices_[i].size(); ++j) {
        choices_[i][j].level = static_cast<int>(i);
        choices_[i][j].choice = static_cast<int>(j);
        detail::validate_rule_set(*symbols_, choices_[i][j]);
      }
    }
  }

  int depth() const { return symbols_->depth(); }
  const SymbolTable& symbols() const { return *symbols_; }
  const std::shared_ptr<const SymbolTable>& symbols_ptr() const { return symbols_; }
  int choice_count(int level) const { return static_cast<int>(choices_.at(level).size()); }
  std::vector<int> choice_counts() const {
    std::vector<int> c;
    for (const auto& lv : choices_) c.push_back(static_cast<int>(lv.size()));
    return c;
  }
  const RuleSet& rule_set(int level, int choice) const { return choices_.at(level).at(choice); }

  // Number of distinct metadata vectors, prod_i C_i.
  std::size_t metadata_count() const {
    std::size_t n = 1;
    for (const auto& lv : choices_) n *= lv.size();
    return n;
  }

  // All metadata vectors in lexicographic order.
  std::vector<MetadataVector> all_metadata() const {
    std::vector<MetadataVector> out;
    MetadataVector m{std::vector<int>(choices_.size(), 0)};
    while (true) {
      out.push_back(m);
      int i = static_cast<int>(choices_.size()) - 1;
      while (i >= 0 && ++m.choices[i] == choice_count(i)) m.choices[i--] = 0;
      if (i < 0) break;
    }
    return out;
  }

  std::string to_text() const {
    std::ostringstream out;
    out << "depth: " << depth() << "\n";
    for (int i = 0; i <= depth(); ++i) {
      out << "level " << i << ":";
      for (SymbolId s : symbols_->level(i)) out << ' ' << symbols_->name(s);
      out << "\n";
    }
    for (const auto& level : choices_) {
      for (const RuleSet& rs : level) {
        out << "rules level=" << rs.level << " choice=" << rs.choice << ":\n";
        for (const Rule& r : rs.rules) {
          out << "  " << symbols_->name(r.lhs) << " ->";
          for (SymbolId s : r.rhs) out << ' ' << symbols_->name(s);
          out << "\n";
        }
      }
    }
    return out.str();
  }

  // Fingerprint of the canonical text; stable under comment/whitespace edits.
  std::uint64_t hash() const { return fnv1a(to_text()); }

 private:
  std::shared_ptr<const SymbolTable> symbols_;
  std::vector<std::vector<RuleSet>> choices_;
};

inline void check_metadata(const HierarchicalGrammar& g, const MetadataVector& m) {
  if (static_cast<int>(m.size()) != g.depth())
    throw std::invalid_argument("metadata vector has length " + std::to_string(m.size()) +
                                ", grammar depth is " + std::to_string(g.depth()));
  for (int i = 0; i < g.depth(); ++i) {
    if (m[i] < 0 || m[i] >= g.choice_count(i))
      throw std::out_of_range("metadata choice " + std::to_string(m[i]) + " at level " +
                              std::to_string(i) + " is outside [0, " +
                              std::to_string(g.choice_count(i)) + ")");
  }
}

inline ConcreteGrammar instantiate(const HierarchicalGrammar& g, const MetadataVector& m) {
  check_metadata(g, m);
  std::vector<RuleSet> levels;
  levels.reserve(g.depth());
  for (int i = 0; i < g.depth(); ++i) levels.push_back(g.rule_set(i, m[i]));
  return ConcreteGrammar(g.symbols_ptr(), std::move(levels));
}

// Level-wise union of every rule choice, duplicates removed (first occurrence
// keeps its position).
inline ConcreteGrammar mixture(const HierarchicalGrammar& g) {
  std::vector<RuleSet> levels;
  for (int i = 0; i < g.depth(); ++i) {
    RuleSet merged{i, -1, {}};
    for (int j = 0; j < g.choice_count(i); ++j) {
      for (const Rule& r : g.rule_set(i, j).rules) {
        if (std::find(merged.rules.begin(), merged.rules.end(), r) == merged.rules.end())
          merged.rules.push_back(r);
      }
    }
    levels.push_back(std::move(merged));
  }
  return ConcreteGrammar(g.symbols_ptr(), std::move(levels));
}

namespace detail {

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline int parse_int(std::string_view s, int line, const char* what) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(std::string(s), &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw GrammarParseError(line, std::string("invalid ") + what + " '" + std::string(s) + "'");
  }
}

}  // namespace detail

inline HierarchicalGrammar parse_grammar(std::string_view text) {
  struct PendingRule {
    int line;
    std::string lhs;
    std::vector<std::string> rhs;
  };
  struct PendingBlock {
    int line, level, choice;
    std::vector<PendingRule> rules;
  };

  int depth = -1;
  std::map<int, std::vector<std::string>> level_decls;
  std::vector<PendingBlock> blocks;

  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    if (line.starts_with("depth:")) {
      if (depth >= 0) throw GrammarParseError(line_no, "duplicate depth header");
      depth = detail::parse_int(detail::trim(line.substr(6)), line_no, "depth");
      if (depth < 1) throw GrammarParseError(line_no, "depth must be >= 1");
    } else if (line.starts_with("level ")) {
      auto colon = line.find(':');
      if (colon == std::string_view::npos) throw GrammarParseError(line_no, "expected ':'");
      int lvl = detail::parse_int(detail::trim(line.substr(6, colon - 6)), line_no, "level");
      if (level_decls.count(lvl))
        throw GrammarParseError(line_no, "level " + std::to_string(lvl) + " declared twice");
      level_decls[lvl] = detail::split_ws(line.substr(colon + 1));
    } else if (line.starts_with("rules")) {
      if (line.back() != ':') throw GrammarParseError(line_no, "rule block header must end with ':'");
      int level = -1, choice = -1;
      for (const auto& field : detail::split_ws(line.substr(5, line.size() - 6))) {
        auto eq = field.find('=');
        if (eq == std::string::npos)
          throw GrammarParseError(line_no, "malformed field '" + field + "'");
        std::string key = field.substr(0, eq);
        std::string_view value = std::string_view(field).substr(eq + 1);
        if (key == "level") level = detail::parse_int(value, line_no, "level");
        else if (key == "choice") choice = detail::parse_int(value, line_no, "choice");
        else throw GrammarParseError(line_no, "unknown field '" + key + "'");
      }
      if (level < 0 || choice < 0)
        throw GrammarParseError(line_no, "rule block needs level=<i> choice=<j>");
      blocks.push_back(PendingBlock{line_no, level, choice, {}});
    } else if (auto arrow = line.find("->"); arrow != std::string_view::npos) {
      if (blocks.empty()) throw GrammarParseError(line_no, "rule outside of a rules block");
      auto lhs = detail::split_ws(line.substr(0, arrow));
      if (lhs.size() != 1) throw GrammarParseError(line_no, "rule needs exactly one lhs symbol");
      blocks.back().rules.push_back(
          PendingRule{line_no, lhs[0], detail::split_ws(line.substr(arrow + 2))});
    } else {
      throw GrammarParseError(line_no, "unrecognized line '" + std::string(line) + "'");
    }
  }

  if (depth < 0) throw GrammarParseError(line_no, "missing 'depth:' header");
  std::vector<std::vector<std::string>> names(depth + 1);
  for (auto& [lvl, syms] : level_decls) {
    if (lvl < 0 || lvl > depth)
      throw GrammarValidationError("level " + std::to_string(lvl) + " outside [0, " +
                                   std::to_string(depth) + "]");
    names[lvl] = syms;
  }
  for (int i = 0; i <= depth; ++i)
    if (!level_decls.count(i))
      throw GrammarValidationError("missing symbol declaration for level " + std::to_string(i));

  auto symbols = std::make_shared<const SymbolTable>(names);

  std::vector<std::map<int, RuleSet>> by_level(depth);
  for (const auto& b : blocks) {
    if (b.level < 0 || b.level >= depth)
      throw GrammarParseError(b.line, "rules level=" + std::to_string(b.level) +
                                          " outside [0, " + std::to_string(depth - 1) + "]");
    if (by_level[b.level].count(b.choice))
      throw GrammarParseError(b.line, "duplicate rule block " +
                                          detail::rule_set_label(b.level, b.choice));
    RuleSet rs{b.level, b.choice, {}};
    for (const auto& pr : b.rules) {
      auto lhs = symbols->find(pr.lhs);
      if (!lhs) throw GrammarParseError(pr.line, "undeclared symbol '" + pr.lhs + "'");
      Rule r{*lhs, {}};
      for (const auto& s : pr.rhs) {
        auto id = symbols->find(s);
        if (!id) throw GrammarParseError(pr.line, "undeclared symbol '" + s + "'");
        r.rhs.push_back(*id);
      }
      rs.rules.push_back(std::move(r));
    }
    by_level[b.level].emplace(b.choice, std::move(rs));
  }

  std::vector<std::vector<RuleSet>> choices(depth);
  for (int i = 0; i < depth; ++i) {
    int expected = 0;
    for (auto& [j, rs] : by_level[i]) {
      if (j != expected)
        throw GrammarValidationError("level " + std::to_string(i) + " is missing rule block " +
                                     detail::rule_set_label(i, expected));
      choices[i].push_back(std::move(rs));
      ++expected;
    }
    if (choices[i].empty())
      throw GrammarValidationError("level " + std::to_string(i) + " has no rule block");
  }
  return HierarchicalGrammar(std::move(symbols), std::move(choices));
}

inline HierarchicalGrammar load_grammar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw GrammarError("cannot open grammar file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_grammar(buf.str());
}

// Inverse of parse_grammar.
inline std::string format_grammar(const HierarchicalGrammar& g) {
  const SymbolTable& sym = g.symbols();
  std::ostringstream out;
  out << "depth: " << sym.depth() << "\n";
  for (int i = 0; i <= sym.depth(); ++i) {
    out << "level " << i << ":";
    for (SymbolId s : sym.level(i)) out << ' ' << sym.name(s);
    out << "\n";
  }
  for (int i = 0; i < g.depth(); ++i)
    for (int j = 0; j < g.choice_count(i); ++j) {
      out << "\nrules level=" << i << " choice=" << j << ":\n";
      for (const Rule& r : g.rule_set(i, j).rules) {
        out << "  " << sym.name(r.lhs) << " ->";
        for (SymbolId c : r.rhs) out << ' ' << sym.name(c);
        out << "\n";
      }
    }
  return out.str();
}

// Terminal names -> ids; throws on names that are not level-D symbols.
inline std::vector<SymbolId> parse_terminals(const SymbolTable& symbols,
                                             const std::vector<std::string>& names) {
  std::vector<SymbolId> out;
  out.reserve(names.size());
  for (const auto& n : names) {
    auto id = symbols.find(n);
    if (!id || symbols.level_of(*id) != symbols.depth())
      throw std::invalid_argument("unknown terminal '" + n + "'");
    out.push_back(*id);
  }
  return out;
}

inline std::string join_terminals(const SymbolTable& symbols, const std::vector<SymbolId>& s,
                                  std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += sep;
    out += symbols.name(s[i]);
  }
  return out;
}

}  // namespace metacfg
