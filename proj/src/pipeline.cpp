#include "kpg/pipeline.hpp"

#include <unordered_map>

#include "kpg/errors.hpp"

namespace kpg {

std::vector<std::string> vocabulary_texts(const std::vector<Document>& docs) {
  std::vector<std::string> texts;
  for (const auto& d : docs) {
    texts.push_back(d.title);
    texts.push_back(d.body);
    texts.insert(texts.end(), d.keyphrases.begin(), d.keyphrases.end());
  }
  return texts;
}

std::vector<Prediction> predict_corpus(const Model<float>& model, const std::vector<Document>& docs,
                                       const SubwordVocab& vocab, std::size_t max_src_len, GenerateOptions opts) {
  std::vector<Prediction> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    const auto src = build_model_input(d, vocab, max_src_len);
    out.push_back({d.id, predict_keyphrases(model, src.ids, vocab, opts)});
  }
  return out;
}

MetricsReport evaluate_predictions(const std::vector<Document>& docs, const std::vector<Prediction>& predictions) {
  std::unordered_map<std::string, const Prediction*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.id, &p).second) throw ContractError("duplicate prediction for document '" + p.id + "'");
  }
  std::vector<DocumentKeyphrases> pred, gold;
  for (const auto& d : docs) {
    auto it = by_id.find(d.id);
    if (it == by_id.end()) throw ContractError("no prediction for document '" + d.id + "'");
    pred.push_back(prepare_keyphrases(d.id, it->second->phrases, document_stem_words(d)));
    gold.push_back(gold_keyphrases(d));
  }
  return compute_f1_report(pred, gold);
}

MetricsReport evaluate_model(const Model<float>& model, const std::vector<Document>& docs, const SubwordVocab& vocab,
                             std::size_t max_src_len) {
  return evaluate_predictions(docs, predict_corpus(model, docs, vocab, max_src_len));
}

}  // namespace kpg
