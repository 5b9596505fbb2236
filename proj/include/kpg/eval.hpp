#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace kpg {

// Porter's stemmer as in his reference implementation (including the
// "bli"→"ble" and "logi"→"log" departures). Words of one or two letters
// and words containing anything other than a–z are returned unchanged.
std::string porter_stem(std::string_view word);

// Pre-tokenized, stemmed words of a text.
std::vector<std::string> stem_words(std::string_view text);

// Stemmed words joined by single spaces.
std::string stem_phrase(std::string_view phrase);

// Stems every phrase and keeps the first occurrence of each stemmed form.
// Empty phrases are dropped.
std::vector<std::string> normalize_and_dedup(const std::vector<std::string>& phrases);

// Index of the first contiguous occurrence of `phrase` in `doc`, or npos.
std::size_t find_subsequence(const std::vector<std::string>& doc, const std::vector<std::string>& phrase);

struct PresentAbsent {
  std::vector<std::string> present;
  std::vector<std::string> absent;
};

// A stemmed phrase is present iff its words occur contiguously in the
// stemmed document words. Input order is kept within each list.
PresentAbsent split_present_absent(const std::vector<std::string>& stemmed_phrases,
                                   const std::vector<std::string>& stemmed_doc);

struct DocumentKeyphrases {
  std::string id;
  std::vector<std::string> present;  // stemmed, deduplicated, ranked
  std::vector<std::string> absent;
};

struct CategoryScores {
  double f1_at_5 = 0.0;
  double f1_at_m = 0.0;
  double precision_at_5 = 0.0;
  double recall_at_5 = 0.0;
  double precision_at_m = 0.0;
  double recall_at_m = 0.0;
  double mean_predictions = 0.0;  // over counted documents
  std::size_t documents = 0;      // documents with nonempty gold
  std::size_t skipped = 0;        // documents with empty gold
};

struct DocumentScore {
  std::string id;
  std::size_t present_predictions = 0;
  std::size_t absent_predictions = 0;
  std::size_t present_gold = 0;
  std::size_t absent_gold = 0;
};

struct MetricsReport {
  CategoryScores present;
  CategoryScores absent;
  std::vector<DocumentScore> documents;
  std::size_t corpus_size = 0;

  std::string to_text() const;  // key: value lines
  std::string to_json() const;
};

// Macro F1@5 and F1@M per category. F1@5 divides matches in the top five by
// a fixed 5; documents whose gold list is empty in a category are skipped
// for that category. Predictions and gold must list the same ids in order.
MetricsReport compute_f1_report(const std::vector<DocumentKeyphrases>& predictions,
                                const std::vector<DocumentKeyphrases>& gold);

// Normalizes raw phrases (stem + dedup) and splits them against the stemmed
// document words.
DocumentKeyphrases prepare_keyphrases(std::string id, const std::vector<std::string>& raw_phrases,
                                      const std::vector<std::string>& stemmed_doc);

}  // namespace kpg
