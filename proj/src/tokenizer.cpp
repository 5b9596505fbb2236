#include "kpg/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "kpg/errors.hpp"

namespace kpg {

namespace {

constexpr std::string_view kSpecialPieces[kNumSpecialIds] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                            "[MASK]", "[EOS]", ";"};

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_ascii_punct(unsigned char c) { return c < 128 && std::ispunct(c); }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation byte: treat as its own character
}

// Splits a word into characters (UTF-8 code points).
std::vector<std::string> characters(std::string_view word) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word.size();) {
    const std::size_t n = std::min(utf8_length(static_cast<unsigned char>(word[i])), word.size() - i);
    out.emplace_back(word.substr(i, n));
    i += n;
  }
  return out;
}

std::string strip_continuation(const std::string& piece) {
  return piece.starts_with(kContinuationPrefix) ? piece.substr(kContinuationPrefix.size()) : piece;
}

}  // namespace

std::vector<Word> pretokenize(std::string_view text) {
  std::vector<Word> words;
  Word current;
  bool open = false;
  auto flush = [&] {
    if (open) words.push_back(std::move(current));
    current = Word{};
    open = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c) || c == ';') {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      words.push_back(Word{std::string(1, char(c)), Span{i, i + 1}});
    } else {
      if (!open) {
        current.span.begin = i;
        open = true;
      }
      current.text.push_back(c < 128 ? char(std::tolower(c)) : char(c));
      current.span.end = i + 1;
    }
  }
  flush();
  return words;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& w : pretokenize(text)) {
    if (!out.empty()) out.push_back(' ');
    out += w.text;
  }
  return out;
}

void SubwordVocab::add_piece(std::string piece) {
  if (index_.count(piece)) return;
  max_piece_bytes_ = std::max(max_piece_bytes_, piece.size());
  index_.emplace(piece, int(pieces_.size()));
  pieces_.push_back(std::move(piece));
}

const std::string& SubwordVocab::piece(int id) const {
  require(id >= 0 && std::size_t(id) < pieces_.size(), "token id " + std::to_string(id) + " outside vocabulary");
  return pieces_[std::size_t(id)];
}

std::optional<int> SubwordVocab::find(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int SubwordVocab::id_of(std::string_view piece) const {
  auto id = find(piece);
  require(id.has_value(), "piece '" + std::string(piece) + "' not in vocabulary");
  return *id;
}

bool SubwordVocab::is_continuation(int id) const {
  return !is_special(id) && piece(id).starts_with(kContinuationPrefix);
}

SubwordVocab SubwordVocab::train(std::span<const std::string> corpus, std::size_t target_size,
                                 std::size_t min_pair_frequency) {
  require(!corpus.empty(), "train_vocab: corpus is empty");

  std::map<std::string, std::size_t> word_counts;
  for (const auto& text : corpus)
    for (auto& w : pretokenize(text)) ++word_counts[w.text];
  require(!word_counts.empty(), "train_vocab: corpus contains no words");

  // Symbols are interned; every word becomes a sequence of symbol ids.
  std::vector<std::string> symbols;
  std::unordered_map<std::string, int> symbol_ids;
  auto intern = [&](const std::string& s) {
    auto [it, inserted] = symbol_ids.emplace(s, int(symbols.size()));
    if (inserted) symbols.push_back(s);
    return it->second;
  };

  std::set<std::string> alphabet;
  std::vector<std::vector<int>> words;
  std::vector<std::size_t> freqs;
  for (const auto& [text, count] : word_counts) {
    auto chars = characters(text);
    std::vector<int> seq;
    for (std::size_t i = 0; i < chars.size(); ++i) {
      alphabet.insert(chars[i]);
      if (!(chars.size() == 1 && is_ascii_punct(static_cast<unsigned char>(chars[i][0]))))
        alphabet.insert(std::string(kContinuationPrefix) + chars[i]);
      seq.push_back(intern(i == 0 ? chars[i] : std::string(kContinuationPrefix) + chars[i]));
    }
    words.push_back(std::move(seq));
    freqs.push_back(count);
  }

  require(target_size >= kNumSpecialIds + alphabet.size(),
          "train_vocab: target size " + std::to_string(target_size) + " is smaller than the " +
              std::to_string(kNumSpecialIds + alphabet.size()) + " pieces needed for specials and alphabet");

  SubwordVocab vocab;
  for (auto s : kSpecialPieces) vocab.add_piece(std::string(s));
  for (const auto& a : alphabet) vocab.add_piece(a);

  using Pair = std::pair<int, int>;
  std::map<Pair, long long> counts;
  std::map<Pair, std::set<std::size_t>> where;
  auto pair_less = [&](const Pair& x, const Pair& y) {
    const auto& xa = symbols[std::size_t(x.first)];
    const auto& ya = symbols[std::size_t(y.first)];
    if (xa != ya) return xa < ya;
    return symbols[std::size_t(x.second)] < symbols[std::size_t(y.second)];
  };
  // Ordered by descending count, then lexicographically by pair.
  auto rank_less = [&](const std::pair<long long, Pair>& x, const std::pair<long long, Pair>& y) {
    if (x.first != y.first) return x.first > y.first;
    return pair_less(x.second, y.second);
  };
  std::set<std::pair<long long, Pair>, decltype(rank_less)> ranked(rank_less);

  auto adjust = [&](const Pair& p, long long delta, std::size_t word) {
    auto& c = counts[p];
    if (c > 0) ranked.erase({c, p});
    c += delta;
    if (c > 0) {
      ranked.insert({c, p});
    } else {
      counts.erase(p);
    }
    if (delta > 0) where[p].insert(word);
  };
  auto add_word_pairs = [&](std::size_t w, long long sign) {
    const auto& seq = words[w];
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) adjust({seq[i], seq[i + 1]}, sign * (long long)freqs[w], w);
  };
  for (std::size_t w = 0; w < words.size(); ++w) add_word_pairs(w, +1);

  while (vocab.size() < target_size && !ranked.empty()) {
    const auto [count, best] = *ranked.begin();
    if (count < (long long)min_pair_frequency) break;
    const std::string merged = symbols[std::size_t(best.first)] + strip_continuation(symbols[std::size_t(best.second)]);
    const int merged_id = intern(merged);
    vocab.merges_.emplace_back(symbols[std::size_t(best.first)], symbols[std::size_t(best.second)]);
    vocab.add_piece(merged);

    const auto affected = where[best];
    where.erase(best);
    for (std::size_t w : affected) {
      auto& seq = words[w];
      bool has = false;
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) has |= (seq[i] == best.first && seq[i + 1] == best.second);
      if (!has) continue;
      add_word_pairs(w, -1);
      std::vector<int> next;
      for (std::size_t i = 0; i < seq.size();) {
        if (i + 1 < seq.size() && seq[i] == best.first && seq[i + 1] == best.second) {
          next.push_back(merged_id);
          i += 2;
        } else {
          next.push_back(seq[i++]);
        }
      }
      seq = std::move(next);
      add_word_pairs(w, +1);
    }
  }
  return vocab;
}

void SubwordVocab::write(std::ostream& out) const {
  out << "kpg-vocab 1 " << pieces_.size() << ' ' << merges_.size() << '\n';
  for (const auto& [a, b] : merges_) out << a << ' ' << b << '\n';
  for (const auto& p : pieces_) out << p << '\n';
}

SubwordVocab SubwordVocab::read(std::istream& in) {
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  std::size_t n_pieces = 0, n_merges = 0;
  hs >> magic >> version >> n_pieces >> n_merges;
  require(magic == "kpg-vocab" && version == 1, "vocab file: bad header '" + header + "'");
  SubwordVocab vocab;
  std::string line;
  for (std::size_t i = 0; i < n_merges; ++i) {
    require(bool(std::getline(in, line)), "vocab file: truncated merge list");
    const auto space = line.find(' ');
    require(space != std::string::npos, "vocab file: malformed merge line '" + line + "'");
    vocab.merges_.emplace_back(line.substr(0, space), line.substr(space + 1));
  }
  for (std::size_t i = 0; i < n_pieces; ++i) {
    require(bool(std::getline(in, line)), "vocab file: truncated piece list");
    require(!vocab.index_.count(line), "vocab file: duplicate piece '" + line + "'");
    vocab.add_piece(line);
  }
  for (int i = 0; i < kNumSpecialIds; ++i)
    require(vocab.size() > std::size_t(i) && vocab.pieces_[std::size_t(i)] == kSpecialPieces[i],
            "vocab file: special tokens missing or out of order");
  return vocab;
}

SubwordVocab SubwordVocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), "cannot open vocab file " + path);
  return read(in);
}

void SubwordVocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "cannot write vocab file " + path);
  write(out);
}

std::uint64_t SubwordVocab::fingerprint() const {
  std::ostringstream os;
  write(os);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

TokenSequence encode(std::string_view text, const SubwordVocab& vocab) {
  TokenSequence seq;
  for (const auto& word : pretokenize(text)) {
    // Byte offsets of character boundaries inside the word.
    std::vector<std::size_t> bounds{0};
    for (const auto& ch : characters(word.text)) bounds.push_back(bounds.back() + ch.size());
    std::size_t c = 0;
    const std::size_t n_chars = bounds.size() - 1;
    while (c < n_chars) {
      int found = -1;
      std::size_t next = c + 1;
      for (std::size_t e = n_chars; e > c; --e) {
        const std::size_t len = bounds[e] - bounds[c];
        if (len > vocab.max_piece_bytes()) continue;
        std::string candidate = c == 0 ? std::string() : std::string(kContinuationPrefix);
        candidate.append(word.text, bounds[c], len);
        if (auto id = vocab.find(candidate); id && !SubwordVocab::is_special(*id)) {
          found = *id;
          next = e;
          break;
        }
      }
      seq.ids.push_back(found >= 0 ? found : kUnkId);
      seq.spans.push_back({word.span.begin + bounds[c], word.span.begin + bounds[next]});
      c = next;
    }
  }
  return seq;
}

std::string decode(std::span<const int> ids, const SubwordVocab& vocab, DecodeOptions options) {
  std::string out;
  for (int id : ids) {
    require(id >= 0 && std::size_t(id) < vocab.size(), "decode: id " + std::to_string(id) + " outside vocabulary");
    if (options.truncate_at_eos && id == kEosId) break;
    if (SubwordVocab::is_special(id) && options.strip_specials) continue;
    const auto& p = vocab.piece(id);
    if (vocab.is_continuation(id) && !out.empty()) {
      out.append(p, kContinuationPrefix.size());
    } else {
      if (!out.empty()) out.push_back(' ');
      out += vocab.is_continuation(id) ? p.substr(kContinuationPrefix.size()) : p;
    }
  }
  return out;
}

std::vector<Span> word_ranges(std::span<const int> ids, const SubwordVocab& vocab) {
  std::vector<Span> words;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i == 0 || !vocab.is_continuation(ids[i]) || SubwordVocab::is_special(ids[i - 1])) {
      words.push_back({i, i + 1});
    } else {
      words.back().end = i + 1;
    }
  }
  return words;
}

}  // namespace kpg
