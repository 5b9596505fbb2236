#include <fstream>
#include <sstream>

#include "doctest.h"
#include "kpg/errors.hpp"
#include "kpg/tokenizer.hpp"

using namespace kpg;

namespace {

std::vector<std::string> fixture_lines() {
  std::ifstream f(KPG_FIXTURE_DIR "/vocab_corpus.txt");
  std::vector<std::string> lines;
  std::string l;
  while (std::getline(f, l)) lines.push_back(l);
  return lines;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("specials occupy the lowest ids") {
  auto v = SubwordVocab::train(std::vector<std::string>{"abc"}, 50);
  CHECK(v.piece(kPadId) == "[PAD]");
  CHECK(v.piece(kUnkId) == "[UNK]");
  CHECK(v.piece(kClsId) == "[CLS]");
  CHECK(v.piece(kSepId) == "[SEP]");
  CHECK(v.piece(kMaskId) == "[MASK]");
  CHECK(v.piece(kEosId) == "[EOS]");
  CHECK(v.piece(kPhraseSepId) == ";");
}

TEST_CASE("most frequent pair is merged first") {
  std::vector<std::string> corpus(5, "ab ab ab");
  corpus.push_back("cd");
  // specials + {a, ##a, b, ##b, c, ##c, d, ##d} leaves room for one merge.
  auto v = SubwordVocab::train(corpus, kNumSpecialIds + 8 + 1);
  REQUIRE(v.merges().size() == 1);
  CHECK(v.merges()[0] == std::pair<std::string, std::string>{"a", "##b"});
  CHECK(encode("ab", v).ids == std::vector<int>{v.id_of("ab")});
}

TEST_CASE("frequency ties go to the lexicographically smallest pair") {
  auto v = SubwordVocab::train(std::vector<std::string>{"xy ab"}, 100, 1);
  REQUIRE(!v.merges().empty());
  CHECK(v.merges()[0] == std::pair<std::string, std::string>{"a", "##b"});
}

TEST_CASE("training errors") {
  CHECK_THROWS_AS(SubwordVocab::train(std::vector<std::string>{}, 100), ContractError);
  CHECK_THROWS_AS(SubwordVocab::train(std::vector<std::string>{"   "}, 100), ContractError);
  CHECK_THROWS_AS(SubwordVocab::train(std::vector<std::string>{"abcdef"}, 8), ContractError);
}

TEST_CASE("fixture corpus reproduces the golden vocabulary byte for byte") {
  auto v = SubwordVocab::train(fixture_lines(), 160);
  std::ostringstream os;
  v.write(os);
  CHECK(os.str() == slurp(KPG_FIXTURE_DIR "/vocab_golden.txt"));
  CHECK(SubwordVocab::load(KPG_FIXTURE_DIR "/vocab_golden.txt") == v);
}

TEST_CASE("training is deterministic") {
  auto a = SubwordVocab::train(fixture_lines(), 160);
  auto b = SubwordVocab::train(fixture_lines(), 160);
  CHECK(a == b);
  CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("out-of-vocabulary string matches the golden segmentation") {
  auto v = SubwordVocab::load(KPG_FIXTURE_DIR "/vocab_golden.txt");
  std::ifstream g(KPG_FIXTURE_DIR "/qzxv_golden.txt");
  std::vector<int> expected;
  int id;
  std::string piece;
  while (g >> id >> piece) {
    expected.push_back(id);
    CHECK(v.piece(id) == piece);
  }
  CHECK(encode("qzxv", v).ids == expected);
}

TEST_CASE("in-vocabulary word is one id") {
  auto v = SubwordVocab::train(std::vector<std::string>(4, "network network"), 200);
  auto e = encode("network", v);
  REQUIRE(e.ids.size() == 1);
  CHECK(v.piece(e.ids[0]) == "network");
}

TEST_CASE("round trip reproduces normalized text") {
  auto v = SubwordVocab::load(KPG_FIXTURE_DIR "/vocab_golden.txt");
  for (const auto& line : fixture_lines()) {
    auto e = encode(line, v);
    CHECK(decode(e.ids, v) == normalize_text(line));
    for (int id : e.ids) CHECK_FALSE(SubwordVocab::is_special(id));
  }
  CHECK(decode(encode("Neural, networks.", v).ids, v) == "neural , networks .");
}

TEST_CASE("unseen characters become [UNK] and encoding never fails") {
  auto v = SubwordVocab::load(KPG_FIXTURE_DIR "/vocab_golden.txt");
  auto e = encode("caf\xC3\xA9 \xE2\x88\x80", v);
  CHECK(!e.ids.empty());
  CHECK(std::find(e.ids.begin(), e.ids.end(), int(kUnkId)) != e.ids.end());
}

TEST_CASE("spans are ordered and non-overlapping") {
  auto v = SubwordVocab::load(KPG_FIXTURE_DIR "/vocab_golden.txt");
  const std::string text = "Neural keyphrase generation, for documents.";
  auto e = encode(text, v);
  REQUIRE(e.spans.size() == e.ids.size());
  for (std::size_t i = 0; i < e.spans.size(); ++i) {
    CHECK(e.spans[i].begin < e.spans[i].end);
    CHECK(e.spans[i].end <= text.size());
    if (i) CHECK(e.spans[i - 1].end <= e.spans[i].begin);
  }
}

TEST_CASE("decode flags") {
  auto v = SubwordVocab::load(KPG_FIXTURE_DIR "/vocab_golden.txt");
  CHECK(decode(std::vector<int>{kPhraseSepId}, v) == ";");
  auto ids = encode("neural networks", v).ids;
  std::vector<int> gen = ids;
  gen.push_back(kEosId);
  auto tail = encode("dog", v).ids;
  gen.insert(gen.end(), tail.begin(), tail.end());
  CHECK(decode(gen, v, {.truncate_at_eos = true}) == "neural networks");
  CHECK(decode(gen, v).find("[EOS]") != std::string::npos);
  std::vector<int> with_cls{kClsId};
  with_cls.insert(with_cls.end(), ids.begin(), ids.end());
  CHECK(decode(with_cls, v, {.strip_specials = true}) == "neural networks");
  CHECK_THROWS_AS(decode(std::vector<int>{int(v.size())}, v), ContractError);
}

TEST_CASE("semicolons are separators, not text") {
  auto v = SubwordVocab::load(KPG_FIXTURE_DIR "/vocab_golden.txt");
  auto e = encode("a;b", v);
  CHECK(std::find(e.ids.begin(), e.ids.end(), int(kPhraseSepId)) == e.ids.end());
  CHECK(normalize_text("A;B") == "a b");
}

TEST_CASE("word ranges group continuation pieces") {
  auto v = SubwordVocab::load(KPG_FIXTURE_DIR "/vocab_golden.txt");
  auto ids = encode("keyphrase qzxv", v).ids;
  ids.insert(ids.begin(), kClsId);
  auto words = word_ranges(ids, v);
  REQUIRE(words.size() == 3);
  CHECK(words[0].begin == 0);
  CHECK(words[0].end == 1);
  CHECK(words[2].end == ids.size());
}

TEST_CASE("vocab file round trip and corruption") {
  auto v = SubwordVocab::load(KPG_FIXTURE_DIR "/vocab_golden.txt");
  std::stringstream ss;
  v.write(ss);
  CHECK(SubwordVocab::read(ss) == v);
  std::stringstream bad("kpg-vocab 2 7 0\n");
  CHECK_THROWS_AS(SubwordVocab::read(bad), ContractError);
}
