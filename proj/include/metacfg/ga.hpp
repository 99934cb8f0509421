#pragma once

// Grammatical-accuracy pipeline, independent of what produces completions:
// draw sentences, cut prompts of length l_p, let a generator continue them,
// and check prompt + continuation with the CYK recognizer.

#include <cstdint>
#include <functional>
#include <vector>

#include "metacfg/corpus.hpp"
#include "metacfg/grammar.hpp"
#include "metacfg/rng.hpp"
#include "metacfg/sampler.hpp"
#include "metacfg/verifier.hpp"

namespace metacfg {

struct GenerationResult {
  // Generated tokens, excluding the prompt and the terminating [EOS].
  std::vector<TokenId> tokens;
  // True when generation stopped at the token limit instead of at [EOS].
  bool truncated = false;
};

using Generator = std::function<GenerationResult(const std::vector<TokenId>& prompt, Rng& rng)>;

enum class PromptSource {
  // Sentences of the mixture grammar (union of all rule choices per level).
  kMixture,
  // Sentences of the metadata-driven generative process used for training.
  kHierarchical,
};

struct GaCell {
  std::size_t prompt_length = 0;
  double accuracy = 0.0;
  double stderr_ = 0.0;
  std::size_t n_requested = 0;
  std::size_t n = 0;
  std::size_t truncated = 0;
};

using GaTable = std::vector<GaCell>;

struct GaOptions {
  std::vector<std::size_t> prompt_lengths{1, 5, 10, 25, 50};
  std::size_t n = 500;
  std::uint64_t seed = 0;
  PromptSource source = PromptSource::kMixture;
  // Draw at most this many candidate sentences per requested item when
  // looking for sentences at least l_p long.
  std::size_t max_draws_per_item = 50;
};

// Prompt sentences for one prompt length: the first `n` draws of length >= l_p.
inline std::vector<SampledSentence> ga_prompt_sentences(const ConcreteGrammar& mix,
                                                        const InstantiationCache& cache,
                                                        std::size_t prompt_length,
                                                        const GaOptions& opt) {
  std::vector<SampledSentence> out;
  const std::uint64_t base = derive_seed(opt.seed, SeedStream::kGrammaticalAccuracy, prompt_length);
  const std::size_t max_draws = opt.n * opt.max_draws_per_item;
  for (std::size_t k = 0; k < max_draws && out.size() < opt.n; ++k) {
    SampledSentence s;
    if (opt.source == PromptSource::kMixture) {
      const std::uint64_t seed = derive_seed(base, SeedStream::kMisc, k);
      Rng rng(seed);
      s = sample_sentence(mix, rng);
      s.seed = seed;
    } else {
      s = sample_item(cache, base, k, SeedStream::kMisc);
    }
    if (s.size() >= prompt_length) out.push_back(std::move(s));
  }
  return out;
}

// Runs the sweep; completions are checked against `verify_against`.
inline GaTable ga_sweep_with(const HierarchicalGrammar& g, const Vocabulary& vocab,
                             const Generator& generate, const ConcreteGrammar& verify_against,
                             const GaOptions& opt) {
  GaTable table;
  if (opt.n == 0) return table;
  const ConcreteGrammar mix = mixture(g);
  const InstantiationCache cache(g);
  const SymbolTable& sym = g.symbols();
  for (std::size_t lp : opt.prompt_lengths) {
    GaCell cell;
    cell.prompt_length = lp;
    cell.n_requested = opt.n;
    const auto sentences = ga_prompt_sentences(mix, cache, lp, opt);
    std::size_t hits = 0;
    for (std::size_t k = 0; k < sentences.size(); ++k) {
      const auto prompt = make_prompt(vocab, sym, sentences[k], lp);
      Rng rng(derive_seed(derive_seed(opt.seed, SeedStream::kGeneration, lp), SeedStream::kMisc, k));
      const GenerationResult gen = generate(prompt, rng);
      cell.truncated += gen.truncated;
      std::vector<SymbolId> z(sentences[k].terminals.begin(), sentences[k].terminals.begin() + lp);
      bool valid = !gen.truncated;
      for (TokenId t : gen.tokens) {
        if (!vocab.is_terminal(t)) {
          valid = false;
          break;
        }
        z.push_back(vocab.terminal_symbol(t));
      }
      if (valid && accepts(verify_against, z)) ++hits;
    }
    cell.n = sentences.size();
    cell.accuracy = cell.n ? static_cast<double>(hits) / static_cast<double>(cell.n) : 0.0;
    cell.stderr_ = binomial_stderr(cell.accuracy, cell.n);
    table.push_back(cell);
  }
  return table;
}

}  // namespace metacfg
