#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "kpg/heads.hpp"
#include "kpg/model.hpp"
#include "kpg/objectives.hpp"
#include "kpg/tokenizer.hpp"

namespace kpg {

struct GenerateOptions {
  std::size_t max_len = kDefaultMaxTgtLen;
  bool stop_at_eos = true;  // false: always emit max_len tokens (benchmarking)
};

// Greedy decoding for the generation regimes. The result holds the emitted
// ids without the terminating [EOS]. seq2seq encodes once and decodes with
// cached keys/values; prefix-LM appends a [MASK] slot and re-runs the whole
// stack for every token.
std::vector<int> greedy_generate(const Model<float>& model, std::span<const int> src, GenerateOptions opts = {});

// seq2seq reference path: re-runs the full decoder over the committed prefix
// at every step, with no caching.
template <typename T>
std::vector<int> greedy_generate_reference(const Model<T>& model, std::span<const int> src,
                                           GenerateOptions opts = {});

// Encoder hidden states for a seq2seq model.
template <typename T>
Tensor<T> encode_source(const Model<T>& model, std::span<const int> src);

// Labels of a labeling model: Viterbi with a CRF, per-token argmax otherwise.
LabelSequence predict_labels(const Model<float>& model, std::span<const int> src);

// Maximal B I…I runs become phrases; an I with no open phrase starts one.
// Phrases are decoded text in order of their first token.
std::vector<std::string> bio_to_phrases(std::span<const int> tokens, const LabelSequence& labels,
                                        const SubwordVocab& vocab);

// Splits on the separator, trims, drops empty pieces, and stops at "[EOS]".
std::vector<std::string> parse_phrase_sequence(std::string_view text, std::string_view separator = ";");

// Phrases from generated ids.
std::vector<std::string> phrases_from_ids(std::span<const int> ids, const SubwordVocab& vocab);

// Predicts an ordered phrase list for one model input, whatever the regime.
std::vector<std::string> predict_keyphrases(const Model<float>& model, std::span<const int> src,
                                            const SubwordVocab& vocab, GenerateOptions opts = {});

struct Prediction {
  std::string id;
  std::vector<std::string> phrases;
  friend bool operator==(const Prediction&, const Prediction&) = default;
};

// One line per document: id, a tab, then phrases joined by ";".
void write_predictions(std::ostream& out, const std::vector<Prediction>& predictions);
std::vector<Prediction> read_predictions(std::istream& in);
void save_predictions(const std::string& path, const std::vector<Prediction>& predictions);
std::vector<Prediction> load_predictions(const std::string& path);

}  // namespace kpg
