#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "kpg/eval.hpp"
#include "kpg/objectives.hpp"
#include "kpg/tokenizer.hpp"
#include "kpg/train.hpp"

namespace kpg {

struct Document {
  std::string id;
  std::string title;
  std::string body;
  std::vector<std::string> keyphrases;

  friend bool operator==(const Document&, const Document&) = default;
};

struct LoadOptions {
  bool lenient = false;  // skip malformed lines instead of failing
};

struct LoadResult {
  std::vector<Document> documents;
  std::vector<std::string> diagnostics;  // "line N: …" for skipped lines
};

// One JSON object per line with fields id (optional; defaults to the
// 0-based record index), title, abstract|body, keyword|keywords. Keyphrases
// may be a list or one ";"-joined string. Blank lines are ignored.
LoadResult read_corpus(std::istream& in, LoadOptions options = {});
LoadResult load_corpus(const std::string& path, LoadOptions options = {});

// Parses one record; throws ContractError on malformed input.
Document parse_document(const std::string& line, std::size_t record_index);

std::string serialize_document(const Document& doc);
void write_corpus(std::ostream& out, const std::vector<Document>& docs);
void save_corpus(const std::string& path, const std::vector<Document>& docs);

// [CLS] title [SEP] body [SEP], cut to max_len with the final [SEP] kept.
TokenSequence build_model_input(const Document& doc, const SubwordVocab& vocab,
                                std::size_t max_len = kDefaultMaxSrcLen);

// Stemmed words of title and body, with a separator word between them that
// no phrase can match.
std::vector<std::string> document_stem_words(const Document& doc);

// Gold keyphrases (raw text) split into present, ordered by first
// occurrence in the document, and absent, in dataset order. Duplicates under
// stemming keep their first occurrence.
struct GoldSplit {
  std::vector<std::string> present;
  std::vector<std::string> absent;
};
GoldSplit split_gold(const Document& doc);

// Stemmed gold for evaluation.
DocumentKeyphrases gold_keyphrases(const Document& doc);

struct CorpusStats {
  std::size_t examples = 0;
  double keyphrases_per_doc = 0.0;   // #KP
  double percent_absent = 0.0;       // %AKP
  double words_per_keyphrase = 0.0;  // |KP|, whitespace words of the raw phrase
};

// Token-space example for a fine-tuning objective: labeling objectives get
// BIO labels over the model input, generation objectives the one2seq target.
Example make_example(const Document& doc, const SubwordVocab& vocab, Objective objective,
                     std::size_t max_src_len = kDefaultMaxSrcLen, std::size_t max_tgt_len = kDefaultMaxTgtLen);

// Joins consecutive texts with spaces into chunks of at most max_tokens
// subword tokens, so pretraining sees sequences as long as fine-tuning
// inputs. A text that is longer on its own forms its own chunk.
std::vector<std::string> pack_texts(std::span<const std::string> texts, const SubwordVocab& vocab,
                                    std::size_t max_tokens);

// [CLS] text [SEP] for MLM; bare tokens for span infilling (whose decoder
// reconstructs them followed by [EOS]). Cut to max_len tokens.
Example make_pretrain_example(std::string id, const std::string& text, const SubwordVocab& vocab,
                              PretrainMode mode, std::size_t max_len);

// Keyphrases are counted after stemmed deduplication within a document.
CorpusStats corpus_stats(const std::vector<Document>& docs);

}  // namespace kpg
