#pragma once

#include <string>
#include <vector>

#include "kpg/data.hpp"
#include "kpg/decode.hpp"
#include "kpg/eval.hpp"
#include "kpg/model.hpp"
#include "kpg/tokenizer.hpp"

namespace kpg {

// Titles, bodies and keyphrases: the text a vocabulary is learned from.
std::vector<std::string> vocabulary_texts(const std::vector<Document>& docs);

// Predicted phrases for every document, in corpus order.
std::vector<Prediction> predict_corpus(const Model<float>& model, const std::vector<Document>& docs,
                                       const SubwordVocab& vocab, std::size_t max_src_len = kDefaultMaxSrcLen,
                                       GenerateOptions opts = {});

// Scores predictions against the documents' gold keyphrases. Every document
// needs a prediction with the same id (order may differ).
MetricsReport evaluate_predictions(const std::vector<Document>& docs, const std::vector<Prediction>& predictions);

MetricsReport evaluate_model(const Model<float>& model, const std::vector<Document>& docs, const SubwordVocab& vocab,
                             std::size_t max_src_len = kDefaultMaxSrcLen);

}  // namespace kpg
