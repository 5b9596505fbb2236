#include "kpg/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kpg/errors.hpp"
#include "kpg/eval.hpp"

namespace kpg {

std::size_t round_half_even(double x) {
  require(x >= 0.0 && std::isfinite(x), "round_half_even: expected a finite nonnegative value");
  return std::size_t(std::nearbyint(x));  // default rounding mode is to-nearest-even
}

LabelSequence make_bio_targets(const TokenSequence& doc, const std::vector<std::string>& present_keyphrases,
                               const SubwordVocab& vocab) {
  LabelSequence labels(doc.size(), Label::O);
  const auto words = word_ranges(doc.ids, vocab);

  // Stem each word by decoding its pieces; specials never match.
  std::vector<std::string> stems;
  std::vector<Span> ranges;
  std::vector<std::size_t> word_of_range;
  for (const auto& w : words) {
    if (w.end - w.begin == 1 && SubwordVocab::is_special(doc.ids[w.begin])) {
      stems.emplace_back("\x01");  // cannot equal any stemmed word
    } else {
      std::span<const int> ids(doc.ids.data() + w.begin, w.end - w.begin);
      stems.push_back(porter_stem(decode(ids, vocab)));
    }
    ranges.push_back(w);
  }

  struct Candidate {
    std::size_t start, length;
  };
  std::vector<Candidate> candidates;
  for (const auto& kp : present_keyphrases) {
    const auto target = stem_words(kp);
    if (target.empty() || target.size() > stems.size()) continue;
    for (std::size_t i = 0; i + target.size() <= stems.size(); ++i) {
      if (std::equal(target.begin(), target.end(), stems.begin() + std::ptrdiff_t(i)))
        candidates.push_back({i, target.size()});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.length != b.length ? a.length > b.length : a.start < b.start;
  });

  std::vector<bool> taken(stems.size(), false);
  for (const auto& c : candidates) {
    bool free = true;
    for (std::size_t w = c.start; w < c.start + c.length; ++w) free = free && !taken[w];
    if (!free) continue;
    for (std::size_t w = c.start; w < c.start + c.length; ++w) {
      taken[w] = true;
      for (std::size_t t = ranges[w].begin; t < ranges[w].end; ++t) labels[t] = Label::I;
    }
    labels[ranges[c.start].begin] = Label::B;
  }
  return labels;
}

TokenSequence make_target_sequence(const std::vector<std::string>& present, const std::vector<std::string>& absent,
                                   const SubwordVocab& vocab, std::size_t max_len) {
  require(max_len >= 1, "make_target_sequence: max_len must be positive");
  TokenSequence out;
  bool first = true;
  for (const auto* list : {&present, &absent}) {
    for (const auto& phrase : *list) {
      auto enc = encode(phrase, vocab);
      if (enc.ids.empty()) continue;
      if (!first) out.ids.push_back(kPhraseSepId);
      first = false;
      out.ids.insert(out.ids.end(), enc.ids.begin(), enc.ids.end());
    }
  }
  if (out.ids.size() + 1 > max_len) out.ids.resize(max_len - 1);
  out.ids.push_back(kEosId);
  return out;
}

int random_token(std::size_t vocab_size, Rng& rng) {
  require(vocab_size > std::size_t(kNumSpecialIds), "random_token: vocabulary has no ordinary pieces");
  std::uniform_int_distribution<int> dist(kNumSpecialIds, int(vocab_size) - 1);
  return dist(rng);
}

int sample_poisson(double lambda, Rng& rng, bool positive) {
  require(lambda > 0.0, "sample_poisson: lambda must be positive");
  std::poisson_distribution<int> dist(lambda);
  for (;;) {
    const int k = dist(rng);
    if (!positive || k > 0) return k;
  }
}

namespace {

void check_rate(double r, const char* name) {
  require(r >= 0.0 && r <= 1.0, std::string("corruption rate ") + name + " must lie in [0, 1]");
}

CorruptionOutcome finish(std::span<const int> original, std::vector<int> corrupted, std::vector<std::size_t> pos) {
  std::sort(pos.begin(), pos.end());
  CorruptionOutcome out;
  out.corrupted = std::move(corrupted);
  out.loss_positions = std::move(pos);
  for (auto p : out.loss_positions) out.originals.push_back(original[p]);
  return out;
}

}  // namespace

CorruptionOutcome corrupt_prefix_lm(std::span<const int> target, std::size_t vocab_size, Rng& rng, double mask_rate,
                                    double replace_rate) {
  check_rate(mask_rate, "mask_rate");
  check_rate(replace_rate, "replace_rate");
  require(mask_rate + replace_rate <= 1.0 + 1e-12, "corrupt_prefix_lm: rates must sum to at most 1");
  const std::size_t n = target.size();
  if (n == 0) return {};
  const std::size_t n_mask = round_half_even(mask_rate * double(n));
  const std::size_t n_replace = std::min(round_half_even(replace_rate * double(n)), n - n_mask);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<int> corrupted(target.begin(), target.end());
  std::vector<std::size_t> positions(order.begin(), order.begin() + std::ptrdiff_t(n_mask + n_replace));
  for (std::size_t i = 0; i < n_mask; ++i) corrupted[order[i]] = kMaskId;
  for (std::size_t i = n_mask; i < n_mask + n_replace; ++i) corrupted[order[i]] = random_token(vocab_size, rng);
  return finish(target, std::move(corrupted), std::move(positions));
}

PretrainMode parse_pretrain_mode(std::string_view name) {
  if (name == "mlm") return PretrainMode::mlm;
  if (name == "span_infill" || name == "span-infill") return PretrainMode::span_infill;
  throw ContractError("unknown pretraining objective '" + std::string(name) + "' (expected mlm or span_infill)");
}

namespace {

CorruptionOutcome corrupt_mlm(std::span<const int> tokens, std::size_t vocab_size, Rng& rng) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (!SubwordVocab::is_special(tokens[i])) order.push_back(i);
  require(!order.empty(), "corrupt_pretrain: no maskable (non-special) tokens");
  const std::size_t k = std::max<std::size_t>(1, round_half_even(0.15 * double(order.size())));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(k);

  std::vector<int> corrupted(tokens.begin(), tokens.end());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto p : order) {
    const double r = u(rng);
    if (r < 0.8) corrupted[p] = kMaskId;
    else if (r < 0.9) corrupted[p] = random_token(vocab_size, rng);
  }
  return finish(tokens, std::move(corrupted), std::move(order));
}

CorruptionOutcome corrupt_span_infill(std::span<const int> tokens, std::size_t vocab_size, Rng& rng) {
  const std::size_t n = tokens.size();
  const std::size_t budget = std::max<std::size_t>(1, round_half_even(0.3 * double(n)));

  std::vector<std::size_t> lengths;
  std::size_t covered = 0;
  while (covered < budget) {
    const std::size_t len = std::min<std::size_t>(std::size_t(sample_poisson(3.5, rng, true)), budget - covered);
    lengths.push_back(len);
    covered += len;
  }

  // Random non-overlapping placement: distribute the n − budget uncovered
  // tokens into the gaps between (and around) the spans in shuffled order.
  std::shuffle(lengths.begin(), lengths.end(), rng);
  const std::size_t gaps = lengths.size() + 1;
  std::vector<std::size_t> cut_points;
  std::uniform_int_distribution<std::size_t> pick(0, n - budget);
  for (std::size_t i = 0; i + 1 < gaps; ++i) cut_points.push_back(pick(rng));
  std::sort(cut_points.begin(), cut_points.end());

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> corrupted;
  std::vector<std::size_t> positions;
  std::size_t src = 0, free_used = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    for (; free_used < cut_points[s]; ++free_used) corrupted.push_back(tokens[src++]);
    const bool collapse = u(rng) < 0.1;
    if (collapse) corrupted.push_back(random_token(vocab_size, rng));
    for (std::size_t i = 0; i < lengths[s]; ++i) {
      if (!collapse) corrupted.push_back(kMaskId);
      positions.push_back(src++);
    }
  }
  while (src < n) corrupted.push_back(tokens[src++]);
  return finish(tokens, std::move(corrupted), std::move(positions));
}

}  // namespace

CorruptionOutcome corrupt_pretrain(std::span<const int> tokens, PretrainMode mode, std::size_t vocab_size, Rng& rng) {
  require(tokens.size() >= 2, "corrupt_pretrain: sequence must hold at least 2 tokens");
  return mode == PretrainMode::mlm ? corrupt_mlm(tokens, vocab_size, rng)
                                   : corrupt_span_infill(tokens, vocab_size, rng);
}

}  // namespace kpg
