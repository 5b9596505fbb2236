#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "kpg/data.hpp"
#include "kpg/errors.hpp"
#include "kpg/synthetic.hpp"

using namespace kpg;

namespace {

const SubwordVocab& vocab() {
  static const SubwordVocab v = [] {
    std::vector<std::string> corpus;
    for (const auto& d : synthetic_corpus(20, 1)) {
      corpus.push_back(d.title);
      corpus.push_back(d.body);
    }
    return SubwordVocab::train(corpus, 1000);
  }();
  return v;
}

}  // namespace

TEST_CASE("record parsing") {
  const auto d = parse_document(R"({"title":"t","abstract":"b","keyword":"a;b"})", 4);
  CHECK(d.id == "4");
  CHECK(d.title == "t");
  CHECK(d.body == "b");
  CHECK(d.keyphrases == std::vector<std::string>{"a", "b"});

  CHECK(parse_document(R"({"title":"t","body":"b","keyword":""})", 0).keyphrases.empty());
  CHECK(parse_document(R"({"title":"t","body":"b"})", 0).keyphrases.empty());
  CHECK(parse_document(R"({"id":17,"title":"t","body":"b","keywords":["x y"," z "]})", 0).keyphrases ==
        std::vector<std::string>{"x y", "z"});
  CHECK(parse_document(R"({"id":"p-1","title":"","body":"b"})", 0).id == "p-1");

  CHECK_THROWS_AS(parse_document("{not json", 0), ContractError);
  CHECK_THROWS_AS(parse_document(R"({"body":"b"})", 0), ContractError);
  CHECK_THROWS_AS(parse_document(R"({"title":"t"})", 0), ContractError);
  CHECK_THROWS_AS(parse_document(R"({"title":"t","abstract":"a","body":"b"})", 0), ContractError);
  CHECK_THROWS_AS(parse_document(R"({"title":"","body":""})", 0), ContractError);
  CHECK_THROWS_AS(parse_document(R"({"title":"t","body":"b","keyword":5})", 0), ContractError);
}

TEST_CASE("strict and lenient loading") {
  const std::string text =
      "{\"title\":\"t1\",\"abstract\":\"b1\",\"keyword\":\"k\"}\n"
      "\n"
      "{broken\n"
      "{\"title\":\"t2\",\"abstract\":\"b2\"}\n";
  std::istringstream strict(text);
  try {
    read_corpus(strict);
    FAIL("expected an error");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::istringstream lenient(text);
  const auto r = read_corpus(lenient, {true});
  REQUIRE(r.documents.size() == 2);
  CHECK(r.documents[1].title == "t2");
  REQUIRE(r.diagnostics.size() == 1);
  CHECK(r.diagnostics[0].find("line 3") != std::string::npos);
}

TEST_CASE("serialization round trip") {
  const auto docs = synthetic_corpus(10, 4);
  std::stringstream ss;
  write_corpus(ss, docs);
  CHECK(read_corpus(ss).documents == docs);
  Document odd{"q\"1", "Title: with \"quotes\"", "body\twith tab; and semicolon", {"a b?", "c"}};
  std::stringstream s2;
  write_corpus(s2, {odd});
  CHECK(read_corpus(s2).documents == std::vector<Document>{odd});
  // ';' separates keyphrases even inside list entries.
  CHECK(parse_document(R"({"title":"t","body":"b","keywords":["a;b","c"]})", 0).keyphrases ==
        std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("model input construction") {
  const auto& v = vocab();
  Document d{"1", "neural networks", "we study neural networks", {}};
  const auto in = build_model_input(d, v);
  const auto t = encode(d.title, v).ids, b = encode(d.body, v).ids;
  std::vector<int> want{kClsId};
  want.insert(want.end(), t.begin(), t.end());
  want.push_back(kSepId);
  want.insert(want.end(), b.begin(), b.end());
  want.push_back(kSepId);
  CHECK(in.ids == want);

  Document untitled{"2", "", "we study", {}};
  const auto u = build_model_input(untitled, v);
  CHECK(u.ids[0] == kClsId);
  CHECK(u.ids[1] == kSepId);

  std::string longbody;
  for (int i = 0; i < 600; ++i) longbody += "networks ";
  Document big{"3", "t", longbody, {}};
  const auto cut = build_model_input(big, v);
  CHECK(cut.size() == 464);
  CHECK(cut.ids.back() == kSepId);
  CHECK(build_model_input(big, v).ids == cut.ids);
  CHECK(build_model_input(big, v, 20).size() == 20);
}

TEST_CASE("gold split orders present phrases by first occurrence") {
  Document d{"1", "Alpha beta", "gamma delta alpha beta epsilon", {"delta", "zeta", "alpha beta", "Delta", "eta"}};
  const auto g = split_gold(d);
  CHECK(g.present == std::vector<std::string>{"alpha beta", "delta"});
  CHECK(g.absent == std::vector<std::string>{"zeta", "eta"});
  // Title and body do not join into one phrase.
  Document across{"2", "alpha", "beta", {"alpha beta"}};
  CHECK(split_gold(across).absent == std::vector<std::string>{"alpha beta"});
}

TEST_CASE("corpus statistics on the hand-counted fixture") {
  const auto docs = load_corpus(KPG_FIXTURE_DIR "/stats_corpus.jsonl").documents;
  REQUIRE(docs.size() == 2);
  const auto s = corpus_stats(docs);
  // s1: 3 phrases, "graph neural models" absent, 7 words.
  // s2: "Sequence Labeling" repeats "sequence labeling"; 3 phrases, one absent, 6 words.
  CHECK(s.examples == 2);
  CHECK(s.keyphrases_per_doc == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(s.percent_absent == doctest::Approx(100.0 / 3.0).epsilon(1e-15));
  CHECK(s.words_per_keyphrase == doctest::Approx(13.0 / 6.0).epsilon(1e-15));

  auto reversed = docs;
  std::reverse(reversed.begin(), reversed.end());
  const auto r = corpus_stats(reversed);
  CHECK(r.keyphrases_per_doc == s.keyphrases_per_doc);
  CHECK(r.percent_absent == s.percent_absent);
  CHECK(r.words_per_keyphrase == s.words_per_keyphrase);
}

TEST_CASE("verbatim keyphrases are never absent") {
  std::vector<Document> docs;
  for (const auto& d : synthetic_corpus(20, 2)) {
    Document copy = d;
    copy.keyphrases.pop_back();  // the topic name is the only absent phrase
    docs.push_back(copy);
  }
  CHECK(corpus_stats(docs).percent_absent == 0.0);
}

TEST_CASE("examples for each objective") {
  const auto& v = vocab();
  const auto doc = synthetic_corpus(1, 5)[0];
  const auto lab = make_example(doc, v, Objective::labeling);
  CHECK(lab.labels.size() == lab.source.size());
  CHECK(std::count(lab.labels.begin(), lab.labels.end(), Label::B) >= 1);
  const auto gen = make_example(doc, v, Objective::seq2seq);
  CHECK(gen.target.back() == kEosId);
  CHECK(gen.labels.empty());
  CHECK_THROWS_AS(make_example(doc, v, Objective::mlm), ContractError);

  const auto mlm = make_pretrain_example("p", "we study networks", v, PretrainMode::mlm, 64);
  CHECK(mlm.source.front() == kClsId);
  CHECK(mlm.source.back() == kSepId);
  const auto span = make_pretrain_example("p", "we study networks", v, PretrainMode::span_infill, 64);
  CHECK(span.source == encode("we study networks", v).ids);
}

TEST_CASE("packing consecutive texts for pretraining") {
  const auto& v = vocab();
  const std::vector<std::string> texts = {"we study networks", "", "graph models", "neural networks for nlp"};
  const std::size_t a = encode(texts[0], v).size(), b = encode(texts[2], v).size(), c = encode(texts[3], v).size();
  const auto whole = pack_texts(texts, v, a + b + c);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0] == "we study networks graph models neural networks for nlp");
  CHECK(encode(whole[0], v).size() == a + b + c);

  const auto split = pack_texts(texts, v, a + b);
  CHECK(split == std::vector<std::string>{"we study networks graph models", "neural networks for nlp"});
  // A text over the budget is kept whole in its own chunk.
  CHECK(pack_texts(texts, v, 1).size() == 3);
}

TEST_CASE("synthetic corpus is reproducible") {
  CHECK(synthetic_corpus(5, 9) == synthetic_corpus(5, 9));
  CHECK(synthetic_corpus(5, 9) != synthetic_corpus(5, 10));
  CHECK(synthetic_sentences(10, 3) == synthetic_sentences(10, 3));
  for (const auto& d : synthetic_corpus(30, 1)) {
    const auto g = split_gold(d);
    CHECK(g.absent.size() == 1);
    CHECK(g.present.size() >= 2);
  }
}
