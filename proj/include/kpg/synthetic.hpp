#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "kpg/data.hpp"

namespace kpg {

// A toy scientific-abstract generator. Each document belongs to one of a
// fixed set of topics: two or three of the topic's multi-word terms are
// written into the title/body and are its present keyphrases, and the topic
// name (never written) is its absent keyphrase. Same seed, same corpus.
std::vector<Document> synthetic_corpus(std::size_t documents, std::uint64_t seed);

// Single sentences in the same language, for pretraining.
std::vector<std::string> synthetic_sentences(std::size_t sentences, std::uint64_t seed);

std::size_t synthetic_topic_count();

}  // namespace kpg
