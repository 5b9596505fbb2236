#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kpg {

// Special ids occupy the bottom of every vocabulary, in this order.
enum SpecialId : int {
  kPadId = 0,
  kUnkId = 1,
  kClsId = 2,
  kSepId = 3,
  kMaskId = 4,
  kEosId = 5,
  kPhraseSepId = 6,  // ";" between keyphrases in a target sequence
  kNumSpecialIds = 7,
};

inline constexpr std::string_view kContinuationPrefix = "##";
inline constexpr std::size_t kDefaultVocabSize = 8192;

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

struct TokenSequence {
  std::vector<int> ids;
  std::vector<Span> spans;  // byte spans into the source text; empty for generated sequences

  std::size_t size() const { return ids.size(); }
};

// A pre-tokenized word: lowercased text plus its byte span in the original.
struct Word {
  std::string text;
  Span span;
};

// Lowercases ASCII, splits on whitespace, and makes every ASCII punctuation
// character its own word. ';' is reserved for joining keyphrases and is
// treated as whitespace in plain text.
std::vector<Word> pretokenize(std::string_view text);

// Pre-tokenized words joined by single spaces: the form decode reproduces.
std::string normalize_text(std::string_view text);

class SubwordVocab {
 public:
  // Learns pair merges over the words of `corpus` until `target_size` pieces
  // exist or no pair occurs at least `min_pair_frequency` times. Ties on
  // frequency go to the lexicographically smallest pair.
  static SubwordVocab train(std::span<const std::string> corpus, std::size_t target_size = kDefaultVocabSize,
                            std::size_t min_pair_frequency = 2);

  static SubwordVocab read(std::istream& in);
  static SubwordVocab load(const std::string& path);
  void write(std::ostream& out) const;
  void save(const std::string& path) const;

  std::size_t size() const { return pieces_.size(); }
  const std::string& piece(int id) const;
  std::optional<int> find(std::string_view piece) const;
  int id_of(std::string_view piece) const;
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  std::size_t max_piece_bytes() const { return max_piece_bytes_; }

  static bool is_special(int id) { return id >= 0 && id < kNumSpecialIds; }
  bool is_continuation(int id) const;

  // FNV-1a over the serialized vocabulary; stored in checkpoints.
  std::uint64_t fingerprint() const;

  friend bool operator==(const SubwordVocab& a, const SubwordVocab& b) {
    return a.pieces_ == b.pieces_ && a.merges_ == b.merges_;
  }

 private:
  void add_piece(std::string piece);

  std::vector<std::string> pieces_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, int> index_;
  std::size_t max_piece_bytes_ = 0;
};

// Greedy longest-piece-first segmentation of each pre-tokenized word.
// Characters with no piece become [UNK]; encoding never fails.
TokenSequence encode(std::string_view text, const SubwordVocab& vocab);

struct DecodeOptions {
  bool strip_specials = false;
  bool truncate_at_eos = false;
};

std::string decode(std::span<const int> ids, const SubwordVocab& vocab, DecodeOptions options = {});

// Token-index ranges [begin, end) of the words in an id sequence. Special
// tokens and non-continuation pieces open a new word.
std::vector<Span> word_ranges(std::span<const int> ids, const SubwordVocab& vocab);

}  // namespace kpg
