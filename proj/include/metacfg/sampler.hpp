#pragma once

// Ancestral sampling from layered grammars: the whole level-i string is
// rewritten left to right before moving to level i+1, each symbol replaced by
// the rhs of a rule drawn uniformly among the rules with that lhs.

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "metacfg/grammar.hpp"
#include "metacfg/rng.hpp"

namespace metacfg {

inline constexpr const char* kSamplerVersion = "metacfg-sampler/1";

struct Derivation {
  // levels[i] is x_i; levels.back() is the terminal frontier.
  std::vector<std::vector<SymbolId>> levels;
  // child_begin[i][k] is the offset in levels[i+1] where the expansion of
  // levels[i][k] starts; child_begin[i] has |levels[i]| + 1 entries.
  std::vector<std::vector<std::uint32_t>> child_begin;
};

struct SampledSentence {
  std::vector<SymbolId> terminals;
  MetadataVector metadata;
  std::optional<Derivation> derivation;
  std::uint64_t seed = 0;

  std::size_t size() const { return terminals.size(); }
};

inline MetadataVector sample_metadata(const HierarchicalGrammar& g, Rng& rng) {
  MetadataVector m{std::vector<int>(g.depth())};
  for (int i = 0; i < g.depth(); ++i)
    m.choices[i] = static_cast<int>(rng.uniform(static_cast<std::uint64_t>(g.choice_count(i))));
  return m;
}

inline std::vector<SymbolId> sample_terminals(const ConcreteGrammar& cg, Rng& rng,
                                              Derivation* derivation = nullptr) {
  std::vector<SymbolId> current{cg.symbols().root()};
  std::vector<SymbolId> next;
  if (derivation) {
    derivation->levels.assign(1, current);
    derivation->child_begin.clear();
  }
  for (int i = 0; i < cg.depth(); ++i) {
    const auto& rules = cg.rule_set(i).rules;
    next.clear();
    std::vector<std::uint32_t> begins;
    if (derivation) begins.reserve(current.size() + 1);
    for (SymbolId s : current) {
      const auto& alts = cg.alternatives(s);
      const Rule& r = rules[alts[rng.uniform(alts.size())]];
      if (derivation) begins.push_back(static_cast<std::uint32_t>(next.size()));
      next.insert(next.end(), r.rhs.begin(), r.rhs.end());
    }
    if (derivation) {
      begins.push_back(static_cast<std::uint32_t>(next.size()));
      derivation->child_begin.push_back(std::move(begins));
      derivation->levels.push_back(next);
    }
    current.swap(next);
  }
  return current;
}

// The metadata field is left empty; callers that know the generating vector
// fill it in.
inline SampledSentence sample_sentence(const ConcreteGrammar& cg, Rng& rng,
                                       bool keep_derivation = false) {
  SampledSentence out;
  out.seed = rng.state();
  if (keep_derivation) {
    Derivation d;
    out.terminals = sample_terminals(cg, rng, &d);
    out.derivation = std::move(d);
  } else {
    out.terminals = sample_terminals(cg, rng);
  }
  return out;
}

// All instantiations of g, indexed by the mixed-radix value of the metadata
// vector (level 0 most significant), so batch sampling does not rebuild them.
class InstantiationCache {
 public:
  explicit InstantiationCache(const HierarchicalGrammar& g) : grammar_(&g) {
    for (const auto& m : g.all_metadata()) grammars_.push_back(instantiate(g, m));
  }

  const ConcreteGrammar& operator[](const MetadataVector& m) const {
    return grammars_.at(index_of(m));
  }

  std::size_t index_of(const MetadataVector& m) const {
    std::size_t idx = 0;
    for (int i = 0; i < grammar_->depth(); ++i)
      idx = idx * grammar_->choice_count(i) + static_cast<std::size_t>(m[i]);
    return idx;
  }

  const HierarchicalGrammar& grammar() const { return *grammar_; }

 private:
  const HierarchicalGrammar* grammar_;
  std::vector<ConcreteGrammar> grammars_;
};

// Sentence k of the batch is a pure function of (g, base_seed, stream, k).
inline SampledSentence sample_item(const InstantiationCache& cache, std::uint64_t base_seed,
                                   std::uint64_t index, SeedStream stream = SeedStream::kTrain,
                                   bool keep_derivation = false) {
  const std::uint64_t seed = derive_seed(base_seed, stream, index);
  Rng rng(seed);
  MetadataVector m = sample_metadata(cache.grammar(), rng);
  SampledSentence s = sample_sentence(cache[m], rng, keep_derivation);
  s.metadata = std::move(m);
  s.seed = seed;
  return s;
}

inline std::vector<SampledSentence> sample_batch(const HierarchicalGrammar& g, std::size_t n,
                                                 std::uint64_t base_seed,
                                                 SeedStream stream = SeedStream::kTrain,
                                                 bool keep_derivation = false) {
  std::vector<SampledSentence> out;
  if (n == 0) return out;
  InstantiationCache cache(g);
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k)
    out.push_back(sample_item(cache, base_seed, k, stream, keep_derivation));
  return out;
}

// Sentences drawn from a single concrete grammar (e.g. the mixture); the
// metadata field stays empty.
inline std::vector<SampledSentence> sample_batch(const ConcreteGrammar& cg, std::size_t n,
                                                 std::uint64_t base_seed, SeedStream stream) {
  std::vector<SampledSentence> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint64_t seed = derive_seed(base_seed, stream, k);
    Rng rng(seed);
    SampledSentence s = sample_sentence(cg, rng);
    s.seed = seed;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus sidecar: a readable record of sampled sentences.
//
//   # metacfg-corpus grammar_hash=<16 hex> base_seed=<u64> generator=<version>
//   metadata=0 1 1 tokens=a b c c a
// ---------------------------------------------------------------------------

struct SidecarHeader {
  std::uint64_t grammar_hash = 0;
  std::uint64_t base_seed = 0;
  std::string generator = kSamplerVersion;
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex;
  o.width(16);
  o.fill('0');
  o << v;
  return o.str();
}

inline void write_sidecar(std::ostream& out, const HierarchicalGrammar& g,
                          const std::vector<SampledSentence>& sentences, std::uint64_t base_seed) {
  out << "# metacfg-corpus grammar_hash=" << hex64(g.hash()) << " base_seed=" << base_seed
      << " generator=" << kSamplerVersion << "\n";
  for (const auto& s : sentences)
    out << "metadata=" << to_string(s.metadata) << " tokens="
        << join_terminals(g.symbols(), s.terminals) << "\n";
}

struct Sidecar {
  SidecarHeader header;
  std::vector<SampledSentence> sentences;
};

inline Sidecar read_sidecar(std::istream& in, const HierarchicalGrammar& g) {
  Sidecar out;
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# metacfg-corpus", 0) != 0) continue;
      std::istringstream fields(line.substr(16));
      std::string f;
      while (fields >> f) {
        auto eq = f.find('=');
        if (eq == std::string::npos) continue;
        std::string key = f.substr(0, eq), value = f.substr(eq + 1);
        if (key == "grammar_hash") out.header.grammar_hash = std::stoull(value, nullptr, 16);
        else if (key == "base_seed") out.header.base_seed = std::stoull(value);
        else if (key == "generator") out.header.generator = value;
      }
      saw_header = true;
      if (out.header.grammar_hash != g.hash())
        throw std::runtime_error("sidecar grammar hash " + hex64(out.header.grammar_hash) +
                                 " does not match grammar " + hex64(g.hash()));
      continue;
    }
    auto meta = line.find("metadata=");
    auto toks = line.find(" tokens=");
    if (meta != 0 || toks == std::string::npos)
      throw std::runtime_error("sidecar line " + std::to_string(line_no) + ": malformed record");
    SampledSentence s;
    std::istringstream ms(line.substr(9, toks - 9));
    int j;
    while (ms >> j) s.metadata.choices.push_back(j);
    s.terminals = parse_terminals(g.symbols(), detail::split_ws(line.substr(toks + 8)));
    if (!s.metadata.choices.empty()) check_metadata(g, s.metadata);
    out.sentences.push_back(std::move(s));
  }
  if (!saw_header) throw std::runtime_error("sidecar is missing its header line");
  return out;
}

}  // namespace metacfg
