#pragma once

// Tokenized training and inference records. Every record has the layout
//
//   [BOS] p_0 ... p_{D-1} t_0 ... t_{K-1} [EOS]
//
// where the prefix slot p_i holds either the level-i metadata token or [MASK].
// Loss is taken on the terminals and on [EOS] only.

#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "metacfg/grammar.hpp"
#include "metacfg/rng.hpp"
#include "metacfg/sampler.hpp"

namespace metacfg {

using TokenId = std::uint32_t;

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kMask = 3;

  Vocabulary() = default;

  explicit Vocabulary(const HierarchicalGrammar& g) : depth_(g.depth()) {
    names_ = {"[PAD]", "[BOS]", "[EOS]", "[MASK]"};
    const SymbolTable& sym = g.symbols();
    terminal_base_ = static_cast<TokenId>(names_.size());
    for (SymbolId t : sym.terminals()) {
      to_symbol_.push_back(t);
      names_.push_back(sym.name(t));
    }
    metadata_base_.resize(g.depth());
    for (int i = 0; i < g.depth(); ++i) {
      metadata_base_[i] = static_cast<TokenId>(names_.size());
      choice_counts_.push_back(g.choice_count(i));
      for (int j = 0; j < g.choice_count(i); ++j)
        names_.push_back("m" + std::to_string(i) + ":" + std::to_string(j));
    }
    for (TokenId t = 0; t < names_.size(); ++t) by_name_.emplace(names_[t], t);
  }

  std::size_t size() const { return names_.size(); }
  int depth() const { return depth_; }
  const std::string& name(TokenId t) const { return names_.at(t); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<TokenId> find(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t terminal_count() const { return to_symbol_.size(); }
  TokenId terminal_token(const SymbolTable& sym, SymbolId s) const {
    return terminal_base_ + sym.local_index(s);
  }
  bool is_terminal(TokenId t) const {
    return t >= terminal_base_ && t < terminal_base_ + to_symbol_.size();
  }
  SymbolId terminal_symbol(TokenId t) const {
    if (!is_terminal(t)) throw std::invalid_argument("token " + std::to_string(t) + " is not a terminal");
    return to_symbol_[t - terminal_base_];
  }
  // Level-distinct metadata token for choice j at level i.
  TokenId metadata_token(int level, int choice) const {
    if (level < 0 || level >= depth_ || choice < 0 || choice >= choice_counts_[level])
      throw std::out_of_range("no metadata token for level " + std::to_string(level) +
                              " choice " + std::to_string(choice));
    return metadata_base_[level] + static_cast<TokenId>(choice);
  }

  std::uint64_t hash() const {
    Fnv1a h;
    for (const auto& n : names_) {
      h.update(n);
      h.update("\n");
    }
    return h.digest();
  }

 private:
  int depth_ = 0;
  std::vector<std::string> names_;
  std::unordered_map<std::string, TokenId> by_name_;
  TokenId terminal_base_ = 4;
  std::vector<SymbolId> to_symbol_;
  std::vector<TokenId> metadata_base_;
  std::vector<int> choice_counts_;
};

enum class PrefixKind : std::uint8_t { kMetadataPrefix = 0, kAllMask = 1 };

struct TrainingRecord {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> loss_mask;
  MetadataVector truth;
  PrefixKind prefix = PrefixKind::kAllMask;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const TrainingRecord&) const = default;
};

// Index of the first terminal in any record of a depth-D vocabulary.
inline std::size_t first_terminal_position(int depth) { return 1 + static_cast<std::size_t>(depth); }

inline TrainingRecord encode_record(const Vocabulary& vocab, const SymbolTable& sym,
                                    const SampledSentence& s, PrefixKind kind, int metadata_depth) {
  const int depth = vocab.depth();
  if (metadata_depth < 0 || metadata_depth > depth)
    throw std::out_of_range("metadata depth " + std::to_string(metadata_depth) +
                            " outside [0, " + std::to_string(depth) + "]");
  TrainingRecord r;
  r.truth = s.metadata;
  // With D_M = 0 both prefix kinds produce the same tokens; report them as ALL_MASK.
  r.prefix = metadata_depth == 0 ? PrefixKind::kAllMask : kind;
  r.tokens.reserve(s.size() + depth + 2);
  r.tokens.push_back(Vocabulary::kBos);
  for (int i = 0; i < depth; ++i) {
    if (r.prefix == PrefixKind::kMetadataPrefix && i < metadata_depth) {
      if (s.metadata.size() != static_cast<std::size_t>(depth))
        throw std::invalid_argument("sentence has no metadata to reveal");
      r.tokens.push_back(vocab.metadata_token(i, s.metadata[i]));
    } else {
      r.tokens.push_back(Vocabulary::kMask);
    }
  }
  for (SymbolId t : s.terminals) r.tokens.push_back(vocab.terminal_token(sym, t));
  r.tokens.push_back(Vocabulary::kEos);
  r.loss_mask.assign(r.tokens.size(), 0);
  for (std::size_t p = first_terminal_position(depth); p < r.tokens.size(); ++p) r.loss_mask[p] = 1;
  return r;
}

// Each sentence independently gets the metadata prefix with probability 1/2
// and an all-mask prefix otherwise; the coin for sentence k is seeded from
// (base_seed, k) so records can be built in any order.
inline std::vector<TrainingRecord> build_training_corpus(const Vocabulary& vocab,
                                                         const SymbolTable& sym,
                                                         const std::vector<SampledSentence>& sentences,
                                                         int metadata_depth,
                                                         std::uint64_t base_seed) {
  if (metadata_depth < 0 || metadata_depth > vocab.depth())
    throw std::out_of_range("metadata depth " + std::to_string(metadata_depth) +
                            " outside [0, " + std::to_string(vocab.depth()) + "]");
  std::vector<TrainingRecord> out;
  out.reserve(sentences.size());
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    Rng coin(derive_seed(base_seed, SeedStream::kPrefixCoin, k));
    const PrefixKind kind = coin.coin(0.5) ? PrefixKind::kMetadataPrefix : PrefixKind::kAllMask;
    out.push_back(encode_record(vocab, sym, sentences[k], kind, metadata_depth));
  }
  return out;
}

inline TrainingRecord build_inference_record(const Vocabulary& vocab, const SymbolTable& sym,
                                             const SampledSentence& s, bool with_metadata,
                                             int metadata_depth) {
  return encode_record(vocab, sym, s,
                       with_metadata ? PrefixKind::kMetadataPrefix : PrefixKind::kAllMask,
                       with_metadata ? metadata_depth : 0);
}

// [BOS] + D masks + the first l_p terminals.
inline std::vector<TokenId> make_prompt(const Vocabulary& vocab, const SymbolTable& sym,
                                        const SampledSentence& s, std::size_t prompt_length) {
  if (prompt_length < 1 || prompt_length > s.size())
    throw std::out_of_range("prompt length " + std::to_string(prompt_length) +
                            " outside [1, " + std::to_string(s.size()) + "]");
  std::vector<TokenId> p;
  p.reserve(1 + vocab.depth() + prompt_length);
  p.push_back(Vocabulary::kBos);
  p.insert(p.end(), static_cast<std::size_t>(vocab.depth()), Vocabulary::kMask);
  for (std::size_t k = 0; k < prompt_length; ++k) p.push_back(vocab.terminal_token(sym, s.terminals[k]));
  return p;
}

inline std::vector<SymbolId> decode_terminals(const Vocabulary& vocab, const TrainingRecord& r) {
  std::vector<SymbolId> out;
  for (std::size_t p = first_terminal_position(vocab.depth()); p + 1 < r.tokens.size(); ++p)
    out.push_back(vocab.terminal_symbol(r.tokens[p]));
  return out;
}

// ---------------------------------------------------------------------------
// Binary corpus file, little-endian:
//   magic "MCFGCORP", u32 version, u64 vocab hash, u64 record count, u32 depth
//   per record: u32 length, u32 tokens[length], u8 loss mask bits[ceil(length/8)]
//               (LSB first), u8 prefix kind, u8 metadata[depth]
// ---------------------------------------------------------------------------

inline constexpr char kCorpusMagic[8] = {'M', 'C', 'F', 'G', 'C', 'O', 'R', 'P'};
inline constexpr std::uint32_t kCorpusVersion = 1;

namespace io {

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>(static_cast<std::make_unsigned_t<T>>(v) >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw std::runtime_error("unexpected end of file");
  std::make_unsigned_t<T> v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

inline void put_f32(std::ostream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put(out, bits);
}

inline float get_f32(std::istream& in) {
  const auto bits = get<std::uint32_t>(in);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace io

inline void write_corpus(std::ostream& out, const Vocabulary& vocab,
                         const std::vector<TrainingRecord>& records) {
  out.write(kCorpusMagic, 8);
  io::put<std::uint32_t>(out, kCorpusVersion);
  io::put<std::uint64_t>(out, vocab.hash());
  io::put<std::uint64_t>(out, records.size());
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(vocab.depth()));
  for (const auto& r : records) {
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(r.tokens.size()));
    for (TokenId t : r.tokens) io::put<std::uint32_t>(out, t);
    std::vector<std::uint8_t> bits((r.tokens.size() + 7) / 8, 0);
    for (std::size_t p = 0; p < r.loss_mask.size(); ++p)
      if (r.loss_mask[p]) bits[p / 8] |= static_cast<std::uint8_t>(1u << (p % 8));
    out.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
    io::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.prefix));
    for (int i = 0; i < vocab.depth(); ++i)
      io::put<std::uint8_t>(out, r.truth.size() ? static_cast<std::uint8_t>(r.truth[i]) : 0xff);
  }
}

inline std::vector<TrainingRecord> read_corpus(std::istream& in, const Vocabulary& vocab) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCorpusMagic, 8) != 0)
    throw std::runtime_error("not a metacfg corpus file");
  if (const auto v = io::get<std::uint32_t>(in); v != kCorpusVersion)
    throw std::runtime_error("unsupported corpus version " + std::to_string(v));
  if (io::get<std::uint64_t>(in) != vocab.hash())
    throw std::runtime_error("corpus vocabulary hash does not match");
  const auto count = io::get<std::uint64_t>(in);
  const auto depth = io::get<std::uint32_t>(in);
  if (static_cast<int>(depth) != vocab.depth()) throw std::runtime_error("corpus depth mismatch");
  std::vector<TrainingRecord> out;
  out.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    TrainingRecord r;
    const auto len = io::get<std::uint32_t>(in);
    r.tokens.resize(len);
    for (auto& t : r.tokens) {
      t = io::get<std::uint32_t>(in);
      if (t >= vocab.size()) throw std::runtime_error("token id out of vocabulary range");
    }
    std::vector<std::uint8_t> bits((len + 7) / 8);
    if (!in.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size())))
      throw std::runtime_error("unexpected end of file");
    r.loss_mask.resize(len);
    for (std::size_t p = 0; p < len; ++p) r.loss_mask[p] = (bits[p / 8] >> (p % 8)) & 1u;
    const auto kind = io::get<std::uint8_t>(in);
    if (kind > 1) throw std::runtime_error("invalid prefix kind " + std::to_string(kind));
    r.prefix = static_cast<PrefixKind>(kind);
    std::vector<int> meta;
    bool known = true;
    for (std::uint32_t i = 0; i < depth; ++i) {
      const auto j = io::get<std::uint8_t>(in);
      known = known && j != 0xff;
      meta.push_back(j);
    }
    if (known) r.truth.choices = std::move(meta);
    out.push_back(std::move(r));
  }
  return out;
}

inline void dump_corpus_text(std::ostream& out, const Vocabulary& vocab,
                             const std::vector<TrainingRecord>& records) {
  for (const auto& r : records) {
    out << (r.prefix == PrefixKind::kMetadataPrefix ? "META" : "MASK") << " truth="
        << to_string(r.truth, ',') << " |";
    for (std::size_t p = 0; p < r.tokens.size(); ++p)
      out << ' ' << vocab.name(r.tokens[p]) << (r.loss_mask[p] ? "*" : "");
    out << "\n";
  }
}

}  // namespace metacfg
