#include "kpg/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "kpg/errors.hpp"
#include "kpg/tokenizer.hpp"

namespace kpg {

namespace {

// Direct transcription of the reference algorithm's state machine: `b` is
// the buffer, `k` the current end, `j` the end of the stem before a matched
// suffix (set only when ends() succeeds).
class PorterStemmer {
 public:
  explicit PorterStemmer(std::string word) : b_(std::move(word)), k_(int(b_.size()) - 1) {}

  std::string run() {
    if (k_ <= 1) return b_;
    step1ab();
    if (k_ > 0) {
      step1c();
      step2();
      step3();
      step4();
      step5();
    }
    return b_.substr(0, std::size_t(k_ + 1));
  }

 private:
  char at(int i) const { return b_[std::size_t(i)]; }

  bool cons(int i) const {
    switch (at(i)) {
      case 'a': case 'e': case 'i': case 'o': case 'u': return false;
      case 'y': return i == 0 ? true : !cons(i - 1);
      default: return true;
    }
  }

  // Number of VC sequences in b[0..j].
  int m() const {
    int n = 0;
    int i = 0;
    for (;;) {
      if (i > j_) return n;
      if (!cons(i)) break;
      ++i;
    }
    ++i;
    for (;;) {
      for (;;) {
        if (i > j_) return n;
        if (cons(i)) break;
        ++i;
      }
      ++i;
      ++n;
      for (;;) {
        if (i > j_) return n;
        if (!cons(i)) break;
        ++i;
      }
      ++i;
    }
  }

  bool vowel_in_stem() const {
    for (int i = 0; i <= j_; ++i)
      if (!cons(i)) return true;
    return false;
  }

  bool double_consonant(int j) const { return j >= 1 && at(j) == at(j - 1) && cons(j); }

  bool cvc(int i) const {
    if (i < 2 || !cons(i) || cons(i - 1) || !cons(i - 2)) return false;
    const char ch = at(i);
    return ch != 'w' && ch != 'x' && ch != 'y';
  }

  bool ends(std::string_view s) {
    const int len = int(s.size());
    if (s.back() != at(k_)) return false;
    if (len > k_ + 1) return false;
    if (b_.compare(std::size_t(k_ - len + 1), std::size_t(len), s) != 0) return false;
    j_ = k_ - len;
    return true;
  }

  void set_to(std::string_view s) {
    b_.replace(std::size_t(j_ + 1), std::string::npos, s);
    k_ = j_ + int(s.size());
    b_.resize(std::size_t(k_ + 1));
  }

  void r(std::string_view s) {
    if (m() > 0) set_to(s);
  }

  void truncate_to(int k) {
    k_ = k;
    b_.resize(std::size_t(k_ + 1));
  }

  void step1ab() {
    if (at(k_) == 's') {
      if (ends("sses")) truncate_to(k_ - 2);
      else if (ends("ies")) set_to("i");
      else if (at(k_ - 1) != 's') truncate_to(k_ - 1);
    }
    if (ends("eed")) {
      if (m() > 0) truncate_to(k_ - 1);
    } else if ((ends("ed") || ends("ing")) && vowel_in_stem()) {
      truncate_to(j_);
      if (ends("at")) set_to("ate");
      else if (ends("bl")) set_to("ble");
      else if (ends("iz")) set_to("ize");
      else if (double_consonant(k_)) {
        const char ch = at(k_ - 1);
        if (ch != 'l' && ch != 's' && ch != 'z') truncate_to(k_ - 1);
      } else if (m() == 1 && cvc(k_)) {
        set_to_after_k("e");
      }
    }
  }

  // setto() with j == k: appends.
  void set_to_after_k(std::string_view s) {
    j_ = k_;
    set_to(s);
  }

  void step1c() {
    if (ends("y") && vowel_in_stem()) b_[std::size_t(k_)] = 'i';
  }

  struct Rule {
    std::string_view suffix;
    std::string_view replacement;
  };

  // Tries the rules in order; the first suffix that matches ends the step
  // whether or not the measure condition allows the replacement.
  void apply_first(std::initializer_list<Rule> rules) {
    for (const auto& rule : rules) {
      if (ends(rule.suffix)) {
        r(rule.replacement);
        return;
      }
    }
  }

  void step2() {
    switch (at(k_ - 1)) {
      case 'a': apply_first({{"ational", "ate"}, {"tional", "tion"}}); break;
      case 'c': apply_first({{"enci", "ence"}, {"anci", "ance"}}); break;
      case 'e': apply_first({{"izer", "ize"}}); break;
      case 'l': apply_first({{"bli", "ble"}, {"alli", "al"}, {"entli", "ent"}, {"eli", "e"}, {"ousli", "ous"}}); break;
      case 'o': apply_first({{"ization", "ize"}, {"ation", "ate"}, {"ator", "ate"}}); break;
      case 's': apply_first({{"alism", "al"}, {"iveness", "ive"}, {"fulness", "ful"}, {"ousness", "ous"}}); break;
      case 't': apply_first({{"aliti", "al"}, {"iviti", "ive"}, {"biliti", "ble"}}); break;
      case 'g': apply_first({{"logi", "log"}}); break;
      default: break;
    }
  }

  void step3() {
    switch (at(k_)) {
      case 'e': apply_first({{"icate", "ic"}, {"ative", ""}, {"alize", "al"}}); break;
      case 'i': apply_first({{"iciti", "ic"}}); break;
      case 'l': apply_first({{"ical", "ic"}, {"ful", ""}}); break;
      case 's': apply_first({{"ness", ""}}); break;
      default: break;
    }
  }

  void step4() {
    auto any = [&](std::initializer_list<std::string_view> suffixes) {
      for (auto s : suffixes)
        if (ends(s)) return true;
      return false;
    };
    bool matched = false;
    switch (at(k_ - 1)) {
      case 'a': matched = any({"al"}); break;
      case 'c': matched = any({"ance", "ence"}); break;
      case 'e': matched = any({"er"}); break;
      case 'i': matched = any({"ic"}); break;
      case 'l': matched = any({"able", "ible"}); break;
      case 'n': matched = any({"ant", "ement", "ment", "ent"}); break;
      case 'o':
        if (ends("ion") && j_ >= 0 && (at(j_) == 's' || at(j_) == 't')) matched = true;
        else matched = any({"ou"});
        break;
      case 's': matched = any({"ism"}); break;
      case 't': matched = any({"ate", "iti"}); break;
      case 'u': matched = any({"ous"}); break;
      case 'v': matched = any({"ive"}); break;
      case 'z': matched = any({"ize"}); break;
      default: break;
    }
    if (matched && m() > 1) truncate_to(j_);
  }

  void step5() {
    j_ = k_;
    if (at(k_) == 'e') {
      const int a = m();
      if (a > 1 || (a == 1 && !cvc(k_ - 1))) truncate_to(k_ - 1);
    }
    if (at(k_) == 'l' && double_consonant(k_) && m() > 1) truncate_to(k_ - 1);
  }

  std::string b_;
  int k_;
  int j_ = 0;
};

}  // namespace

std::string porter_stem(std::string_view word) {
  for (char c : word)
    if (c < 'a' || c > 'z') return std::string(word);
  return PorterStemmer(std::string(word)).run();
}

std::vector<std::string> stem_words(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& w : pretokenize(text)) out.push_back(porter_stem(w.text));
  return out;
}

std::string stem_phrase(std::string_view phrase) {
  std::string out;
  for (const auto& s : stem_words(phrase)) {
    if (!out.empty()) out.push_back(' ');
    out += s;
  }
  return out;
}

std::vector<std::string> normalize_and_dedup(const std::vector<std::string>& phrases) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& p : phrases) {
    std::string s = stem_phrase(p);
    if (s.empty() || !seen.insert(s).second) continue;
    out.push_back(std::move(s));
  }
  return out;
}

std::size_t find_subsequence(const std::vector<std::string>& doc, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > doc.size()) return std::string::npos;
  auto it = std::search(doc.begin(), doc.end(), phrase.begin(), phrase.end());
  return it == doc.end() ? std::string::npos : std::size_t(it - doc.begin());
}

namespace {

std::vector<std::string> split_spaces(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace

PresentAbsent split_present_absent(const std::vector<std::string>& stemmed_phrases,
                                   const std::vector<std::string>& stemmed_doc) {
  PresentAbsent out;
  for (const auto& p : stemmed_phrases) {
    if (find_subsequence(stemmed_doc, split_spaces(p)) != std::string::npos) out.present.push_back(p);
    else out.absent.push_back(p);
  }
  return out;
}

DocumentKeyphrases prepare_keyphrases(std::string id, const std::vector<std::string>& raw_phrases,
                                      const std::vector<std::string>& stemmed_doc) {
  auto split = split_present_absent(normalize_and_dedup(raw_phrases), stemmed_doc);
  return {std::move(id), std::move(split.present), std::move(split.absent)};
}

namespace {

struct CategoryAccumulator {
  double f1_5 = 0, f1_m = 0, p5 = 0, r5 = 0, pm = 0, rm = 0, preds = 0;
  std::size_t docs = 0, skipped = 0;

  void add(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    if (gold.empty()) {
      ++skipped;
      return;
    }
    std::unordered_set<std::string> gold_set(gold.begin(), gold.end());
    std::size_t matches = 0, matches5 = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (gold_set.count(pred[i])) {
        ++matches;
        if (i < 5) ++matches5;
      }
    }
    auto f1 = [](double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; };
    const double prec_m = pred.empty() ? 0.0 : double(matches) / double(pred.size());
    const double rec_m = double(matches) / double(gold_set.size());
    const double prec_5 = double(matches5) / 5.0;
    const double rec_5 = double(matches5) / double(gold_set.size());
    f1_m += f1(prec_m, rec_m);
    f1_5 += f1(prec_5, rec_5);
    pm += prec_m;
    rm += rec_m;
    p5 += prec_5;
    r5 += rec_5;
    preds += double(pred.size());
    ++docs;
  }

  CategoryScores finish() const {
    CategoryScores s;
    s.documents = docs;
    s.skipped = skipped;
    if (docs == 0) return s;
    const double n = double(docs);
    s.f1_at_5 = f1_5 / n;
    s.f1_at_m = f1_m / n;
    s.precision_at_5 = p5 / n;
    s.recall_at_5 = r5 / n;
    s.precision_at_m = pm / n;
    s.recall_at_m = rm / n;
    s.mean_predictions = preds / n;
    return s;
  }
};

}  // namespace

MetricsReport compute_f1_report(const std::vector<DocumentKeyphrases>& predictions,
                                const std::vector<DocumentKeyphrases>& gold) {
  require(predictions.size() == gold.size(), "compute_f1_report: " + std::to_string(predictions.size()) +
                                                 " predictions for " + std::to_string(gold.size()) + " documents");
  CategoryAccumulator present, absent;
  MetricsReport report;
  report.corpus_size = gold.size();
  for (std::size_t i = 0; i < gold.size(); ++i) {
    require(predictions[i].id == gold[i].id,
            "compute_f1_report: document id mismatch ('" + predictions[i].id + "' vs '" + gold[i].id + "')");
    present.add(predictions[i].present, gold[i].present);
    absent.add(predictions[i].absent, gold[i].absent);
    report.documents.push_back({gold[i].id, predictions[i].present.size(), predictions[i].absent.size(),
                                gold[i].present.size(), gold[i].absent.size()});
  }
  report.present = present.finish();
  report.absent = absent.finish();
  return report;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "documents: " << corpus_size << '\n';
  for (const auto& [name, s] : {std::pair{"present", &present}, std::pair{"absent", &absent}}) {
    os << name << ".f1@5: " << s->f1_at_5 << '\n'
       << name << ".f1@M: " << s->f1_at_m << '\n'
       << name << ".p@5: " << s->precision_at_5 << '\n'
       << name << ".r@5: " << s->recall_at_5 << '\n'
       << name << ".p@M: " << s->precision_at_m << '\n'
       << name << ".r@M: " << s->recall_at_m << '\n'
       << name << ".mean_predictions: " << s->mean_predictions << '\n'
       << name << ".documents: " << s->documents << '\n'
       << name << ".skipped_empty_gold: " << s->skipped << '\n';
  }
  return os.str();
}

std::string MetricsReport::to_json() const {
  auto category = [](const CategoryScores& s) {
    return nlohmann::json{{"f1@5", s.f1_at_5},         {"f1@M", s.f1_at_m},
                          {"p@5", s.precision_at_5},   {"r@5", s.recall_at_5},
                          {"p@M", s.precision_at_m},   {"r@M", s.recall_at_m},
                          {"mean_predictions", s.mean_predictions}, {"documents", s.documents},
                          {"skipped_empty_gold", s.skipped}};
  };
  nlohmann::json docs = nlohmann::json::array();
  for (const auto& d : documents)
    docs.push_back({{"id", d.id},
                    {"present_predictions", d.present_predictions},
                    {"absent_predictions", d.absent_predictions},
                    {"present_gold", d.present_gold},
                    {"absent_gold", d.absent_gold}});
  nlohmann::json j{{"documents", corpus_size},
                   {"present", category(present)},
                   {"absent", category(absent)},
                   {"per_document", docs}};
  return j.dump();
}

}  // namespace kpg
