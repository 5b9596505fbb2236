#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kpg/heads.hpp"
#include "kpg/model.hpp"
#include "kpg/tokenizer.hpp"

namespace kpg {

inline constexpr std::size_t kDefaultMaxSrcLen = 464;
inline constexpr std::size_t kDefaultMaxTgtLen = 48;

// Round half to even (banker's rounding) of a nonnegative count.
std::size_t round_half_even(double x);

// Labels every stemmed-word occurrence of each present keyphrase B I…I over
// its subword tokens. Candidate occurrences are committed longest first
// (in words), then leftmost; an occurrence overlapping a committed one is
// skipped. Special tokens are always O.
LabelSequence make_bio_targets(const TokenSequence& doc, const std::vector<std::string>& present_keyphrases,
                               const SubwordVocab& vocab);

// p1 ; p2 ; … ; a1 ; … [EOS], cut to `max_len` tokens with [EOS] kept last.
TokenSequence make_target_sequence(const std::vector<std::string>& present, const std::vector<std::string>& absent,
                                   const SubwordVocab& vocab, std::size_t max_len = kDefaultMaxTgtLen);

struct CorruptionOutcome {
  std::vector<int> corrupted;
  std::vector<std::size_t> loss_positions;  // ascending
  std::vector<int> originals;               // ids at loss_positions before corruption
};

// round(mask_rate·T) positions become [MASK] and a disjoint
// round(replace_rate·T) positions become random non-special ids.
CorruptionOutcome corrupt_prefix_lm(std::span<const int> target, std::size_t vocab_size, Rng& rng,
                                    double mask_rate = 0.8, double replace_rate = 0.1);

enum class PretrainMode { mlm, span_infill };

PretrainMode parse_pretrain_mode(std::string_view name);

// mlm: round(0.15·n) of the n non-special positions, each then 80% [MASK] / 10% random / 10%
// kept. Loss positions index the (same-length) corrupted sequence.
//
// span_infill: Poisson(3.5) span lengths (zero draws resampled, the last
// span clipped) until round(0.3·n) tokens are covered; spans sit at random
// non-overlapping places. 10% of spans collapse to one random token, the
// rest to a [MASK] run of the same length. `corrupted` may be shorter than
// the input; loss positions and originals refer to the input sequence,
// which is the reconstruction target.
CorruptionOutcome corrupt_pretrain(std::span<const int> tokens, PretrainMode mode, std::size_t vocab_size, Rng& rng);

// Poisson variate with zero draws rejected when `positive` is set.
int sample_poisson(double lambda, Rng& rng, bool positive = false);

// Uniform non-special id.
int random_token(std::size_t vocab_size, Rng& rng);

}  // namespace kpg
