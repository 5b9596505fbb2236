#include "kpg/data.hpp"

#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "kpg/errors.hpp"

namespace kpg {

namespace {

using nlohmann::json;

std::string string_field(const json& j, std::initializer_list<const char*> names, bool required) {
  const char* found = nullptr;
  for (const char* n : names) {
    if (j.contains(n)) {
      require(found == nullptr, std::string("fields '") + (found ? found : "") + "' and '" + n + "' both present");
      found = n;
    }
  }
  if (!found) {
    require(!required, std::string("missing field '") + *names.begin() + "'");
    return {};
  }
  const auto& v = j.at(found);
  if (v.is_null()) return {};
  require(v.is_string(), std::string("field '") + found + "' must be a string");
  return v.get<std::string>();
}

std::vector<std::string> split_keyphrases(const std::string& joined) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = joined.find(';', pos);
    std::string piece = joined.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    const auto b = piece.find_first_not_of(" \t\r\n");
    if (b != std::string::npos) {
      const auto e = piece.find_last_not_of(" \t\r\n");
      out.push_back(piece.substr(b, e - b + 1));
    }
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace

Document parse_document(const std::string& line, std::size_t record_index) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ContractError(std::string("invalid JSON: ") + e.what());
  }
  require(j.is_object(), "record is not a JSON object");

  Document doc;
  if (j.contains("id") && !j.at("id").is_null()) {
    const auto& id = j.at("id");
    require(id.is_string() || id.is_number_integer(), "field 'id' must be a string or integer");
    doc.id = id.is_string() ? id.get<std::string>() : std::to_string(id.get<long long>());
  } else {
    doc.id = std::to_string(record_index);
  }
  doc.title = string_field(j, {"title"}, true);
  doc.body = string_field(j, {"abstract", "body"}, true);
  require(!doc.title.empty() || !doc.body.empty(), "title and body are both empty");

  const char* kp_name = nullptr;
  for (const char* n : {"keyword", "keywords"}) {
    if (j.contains(n)) {
      require(kp_name == nullptr, "fields 'keyword' and 'keywords' both present");
      kp_name = n;
    }
  }
  if (kp_name) {
    const auto& v = j.at(kp_name);
    if (v.is_string()) {
      doc.keyphrases = split_keyphrases(v.get<std::string>());
    } else if (v.is_array()) {
      for (const auto& e : v) {
        require(e.is_string(), std::string("field '") + kp_name + "' must hold strings");
        for (auto& p : split_keyphrases(e.get<std::string>())) doc.keyphrases.push_back(std::move(p));
      }
    } else {
      require(v.is_null(), std::string("field '") + kp_name + "' must be a string or a list");
    }
  }
  return doc;
}

LoadResult read_corpus(std::istream& in, LoadOptions options) {
  LoadResult result;
  std::string line;
  std::size_t line_no = 0, record = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      result.documents.push_back(parse_document(line, record));
    } catch (const ContractError& e) {
      const std::string msg = "line " + std::to_string(line_no) + ": " + e.what();
      if (!options.lenient) throw ContractError("malformed corpus record, " + msg);
      result.diagnostics.push_back(msg);
    }
    ++record;
  }
  return result;
}

LoadResult load_corpus(const std::string& path, LoadOptions options) {
  std::ifstream f(path);
  require(bool(f), "cannot open corpus " + path);
  return read_corpus(f, options);
}

std::string serialize_document(const Document& doc) {
  json j{{"id", doc.id}, {"title", doc.title}, {"abstract", doc.body}, {"keywords", doc.keyphrases}};
  return j.dump();
}

void write_corpus(std::ostream& out, const std::vector<Document>& docs) {
  for (const auto& d : docs) out << serialize_document(d) << '\n';
}

void save_corpus(const std::string& path, const std::vector<Document>& docs) {
  std::ofstream f(path);
  require(bool(f), "cannot write corpus " + path);
  write_corpus(f, docs);
}

TokenSequence build_model_input(const Document& doc, const SubwordVocab& vocab, std::size_t max_len) {
  require(max_len >= 3, "build_model_input: max_len must be at least 3");
  TokenSequence out;
  auto append = [&](const std::string& text, std::size_t offset) {
    auto enc = encode(text, vocab);
    for (std::size_t i = 0; i < enc.ids.size(); ++i) {
      out.ids.push_back(enc.ids[i]);
      out.spans.push_back({enc.spans[i].begin + offset, enc.spans[i].end + offset});
    }
  };
  // Spans index the text "title\nbody"; special tokens get empty spans.
  out.ids.push_back(kClsId);
  out.spans.push_back({0, 0});
  append(doc.title, 0);
  out.ids.push_back(kSepId);
  out.spans.push_back({doc.title.size(), doc.title.size()});
  append(doc.body, doc.title.size() + 1);
  const std::size_t end = doc.title.size() + 1 + doc.body.size();
  out.ids.push_back(kSepId);
  out.spans.push_back({end, end});
  if (out.ids.size() > max_len) {
    out.ids.resize(max_len);
    out.spans.resize(max_len);
    out.ids.back() = kSepId;
    out.spans.back() = {out.spans[max_len - 2].end, out.spans[max_len - 2].end};
  }
  return out;
}

std::vector<std::string> document_stem_words(const Document& doc) {
  auto words = stem_words(doc.title);
  words.emplace_back("\x01");
  auto body = stem_words(doc.body);
  words.insert(words.end(), body.begin(), body.end());
  return words;
}

GoldSplit split_gold(const Document& doc) {
  const auto words = document_stem_words(doc);
  struct Present {
    std::size_t position, order;
    std::string phrase;
  };
  std::vector<Present> present;
  GoldSplit out;
  std::unordered_set<std::string> seen;
  for (const auto& kp : doc.keyphrases) {
    auto stems = stem_words(kp);
    if (stems.empty()) continue;
    std::string key;
    for (const auto& s : stems) key += s + ' ';
    if (!seen.insert(key).second) continue;
    const auto pos = find_subsequence(words, stems);
    if (pos != std::string::npos) present.push_back({pos, present.size(), kp});
    else out.absent.push_back(kp);
  }
  std::stable_sort(present.begin(), present.end(),
                   [](const Present& a, const Present& b) { return a.position < b.position; });
  for (auto& p : present) out.present.push_back(std::move(p.phrase));
  return out;
}

DocumentKeyphrases gold_keyphrases(const Document& doc) {
  return prepare_keyphrases(doc.id, doc.keyphrases, document_stem_words(doc));
}

Example make_example(const Document& doc, const SubwordVocab& vocab, Objective objective, std::size_t max_src_len,
                     std::size_t max_tgt_len) {
  Example ex;
  ex.id = doc.id;
  ex.source = build_model_input(doc, vocab, max_src_len).ids;
  const auto gold = split_gold(doc);
  switch (objective) {
    case Objective::labeling:
    case Objective::labeling_crf: {
      TokenSequence seq;
      seq.ids = ex.source;
      ex.labels = make_bio_targets(seq, gold.present, vocab);
      break;
    }
    case Objective::prefix_lm:
    case Objective::seq2seq:
      ex.target = make_target_sequence(gold.present, gold.absent, vocab, max_tgt_len).ids;
      break;
    case Objective::mlm:
    case Objective::span_infill:
      throw ContractError("make_example: use make_pretrain_example for pretraining objectives");
  }
  return ex;
}

std::vector<std::string> pack_texts(std::span<const std::string> texts, const SubwordVocab& vocab,
                                    std::size_t max_tokens) {
  std::vector<std::string> out;
  std::string chunk;
  std::size_t used = 0;
  for (const auto& text : texts) {
    const std::size_t n = encode(text, vocab).size();
    if (n == 0) continue;
    if (!chunk.empty() && used + n > max_tokens) {
      out.push_back(std::move(chunk));
      chunk.clear();
      used = 0;
    }
    if (!chunk.empty()) chunk += ' ';
    chunk += text;
    used += n;
  }
  if (!chunk.empty()) out.push_back(std::move(chunk));
  return out;
}

Example make_pretrain_example(std::string id, const std::string& text, const SubwordVocab& vocab,
                              PretrainMode mode, std::size_t max_len) {
  require(max_len >= 3, "make_pretrain_example: max_len must be at least 3");
  Example ex;
  ex.id = std::move(id);
  auto ids = encode(text, vocab).ids;
  if (mode == PretrainMode::mlm) {
    if (ids.size() + 2 > max_len) ids.resize(max_len - 2);
    ex.source.push_back(kClsId);
    ex.source.insert(ex.source.end(), ids.begin(), ids.end());
    ex.source.push_back(kSepId);
  } else {
    if (ids.size() > max_len) ids.resize(max_len);
    ex.source = std::move(ids);
  }
  return ex;
}

CorpusStats corpus_stats(const std::vector<Document>& docs) {
  CorpusStats s;
  s.examples = docs.size();
  if (docs.empty()) return s;
  std::size_t total = 0, absent = 0, words = 0;
  for (const auto& d : docs) {
    const auto split = split_gold(d);
    for (const auto* list : {&split.present, &split.absent}) {
      for (const auto& kp : *list) {
        std::istringstream is(kp);
        std::string w;
        while (is >> w) ++words;
      }
    }
    total += split.present.size() + split.absent.size();
    absent += split.absent.size();
  }
  s.keyphrases_per_doc = double(total) / double(docs.size());
  s.percent_absent = total ? 100.0 * double(absent) / double(total) : 0.0;
  s.words_per_keyphrase = total ? double(words) / double(total) : 0.0;
  return s;
}

}  // namespace kpg
