#include "kpg/decode.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "kpg/errors.hpp"

namespace kpg {

namespace {

// Lowest index wins ties.
template <typename T>
int argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return int(best);
}

void check_source(const ModelConfig& cfg, std::span<const int> src) {
  require(!src.empty(), "generate: empty source");
  require(src.size() <= std::size_t(cfg.max_positions), "generate: source longer than max_positions");
}

std::vector<int> generate_prefix_lm(const Model<float>& model, std::span<const int> src, GenerateOptions opts) {
  const auto& cfg = model.config;
  const std::size_t s = src.size();
  require(s + opts.max_len <= std::size_t(cfg.max_positions),
          "generate: source plus target length exceeds max_positions");
  std::vector<int> ids(src.begin(), src.end());
  std::vector<int> segments(s, 0);
  std::vector<int> out;
  for (std::size_t t = 0; t < opts.max_len; ++t) {
    ids.push_back(kMaskId);
    segments.push_back(1);
    const auto mask = build_attention_mask(MaskMode::prefix_lm, s, t + 1);
    Tensor<float> hidden =
        stack_forward(model.params, "enc", cfg.enc_layers, cfg.heads, StackInput{ids, segments, 0}, mask, nullptr,
                      static_cast<StackCache<float>*>(nullptr));
    Tensor<float> last({1, hidden.cols()});
    auto row = hidden.row(hidden.rows() - 1);
    std::copy(row.begin(), row.end(), last.row(0).begin());
    Tensor<float> logits = lm_head_forward(model.params, "enc", last, static_cast<LmHeadCache<float>*>(nullptr));
    const int next = argmax<float>(logits.row(0));
    if (opts.stop_at_eos && next == kEosId) break;
    ids.back() = next;
    out.push_back(next);
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> encode_source(const Model<T>& model, std::span<const int> src) {
  const auto& cfg = model.config;
  require(cfg.regime == Regime::seq2seq, "encode_source: not a seq2seq model");
  check_source(cfg, src);
  const auto mask = build_attention_mask(MaskMode::bidirectional, src.size(), 0);
  return stack_forward(model.params, "enc", cfg.enc_layers, cfg.heads, StackInput{src, {}, 0}, mask, nullptr,
                       static_cast<StackCache<T>*>(nullptr));
}

std::vector<int> greedy_generate(const Model<float>& model, std::span<const int> src, GenerateOptions opts) {
  const auto& cfg = model.config;
  check_source(cfg, src);
  if (cfg.regime == Regime::prefix_lm) return generate_prefix_lm(model, src, opts);
  require(cfg.regime == Regime::seq2seq, "greedy_generate: labeling models do not generate");
  require(opts.max_len <= std::size_t(cfg.max_positions), "generate: max_len exceeds max_positions");

  IncrementalDecoder<float> decoder(model, encode_source(model, src));
  std::vector<int> out;
  int token = kClsId;
  for (std::size_t t = 0; t < opts.max_len; ++t) {
    const auto logits = decoder.step(token);
    token = argmax<float>(logits);
    if (opts.stop_at_eos && token == kEosId) break;
    out.push_back(token);
  }
  return out;
}

template <typename T>
std::vector<int> greedy_generate_reference(const Model<T>& model, std::span<const int> src, GenerateOptions opts) {
  const auto& cfg = model.config;
  const Tensor<T> memory = encode_source(model, src);
  std::vector<int> input{kClsId};
  std::vector<int> out;
  for (std::size_t t = 0; t < opts.max_len; ++t) {
    const auto mask = build_attention_mask(MaskMode::causal, 0, input.size());
    Tensor<T> hidden = stack_forward(model.params, "dec", cfg.dec_layers, cfg.heads, StackInput{input, {}, 0}, mask,
                                     &memory, static_cast<StackCache<T>*>(nullptr));
    Tensor<T> last({1, hidden.cols()});
    auto row = hidden.row(hidden.rows() - 1);
    std::copy(row.begin(), row.end(), last.row(0).begin());
    Tensor<T> logits = lm_head_forward(model.params, "dec", last, static_cast<LmHeadCache<T>*>(nullptr));
    const int next = argmax<T>(logits.row(0));
    if (opts.stop_at_eos && next == kEosId) break;
    out.push_back(next);
    input.push_back(next);
  }
  return out;
}

template std::vector<int> greedy_generate_reference(const Model<float>&, std::span<const int>, GenerateOptions);
template std::vector<int> greedy_generate_reference(const Model<double>&, std::span<const int>, GenerateOptions);
template Tensor<float> encode_source(const Model<float>&, std::span<const int>);
template Tensor<double> encode_source(const Model<double>&, std::span<const int>);

LabelSequence predict_labels(const Model<float>& model, std::span<const int> src) {
  const auto& cfg = model.config;
  require(cfg.regime == Regime::labeling, "predict_labels: not a labeling model");
  check_source(cfg, src);
  const auto mask = build_attention_mask(MaskMode::bidirectional, src.size(), 0);
  auto r = transformer_forward(model, StackInput{src, {}, 0}, mask);
  if (cfg.crf) return viterbi_decode(r.logits, CrfParams<float>::from_store(model.params));
  return argmax_labels(r.logits);
}

std::vector<std::string> bio_to_phrases(std::span<const int> tokens, const LabelSequence& labels,
                                        const SubwordVocab& vocab) {
  require(tokens.size() == labels.size(), "bio_to_phrases: " + std::to_string(labels.size()) + " labels for " +
                                              std::to_string(tokens.size()) + " tokens");
  std::vector<std::string> out;
  std::vector<int> run;
  auto flush = [&] {
    if (!run.empty()) {
      auto text = decode(run, vocab, {.strip_specials = true});
      if (!text.empty()) out.push_back(std::move(text));
    }
    run.clear();
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    switch (labels[i]) {
      case Label::B:
        flush();
        run.push_back(tokens[i]);
        break;
      case Label::I:
        run.push_back(tokens[i]);  // an orphan I simply opens a new run
        break;
      case Label::O:
        flush();
        break;
    }
  }
  flush();
  return out;
}

std::vector<std::string> parse_phrase_sequence(std::string_view text, std::string_view separator) {
  require(!separator.empty(), "parse_phrase_sequence: empty separator");
  if (auto eos = text.find("[EOS]"); eos != std::string_view::npos) text = text.substr(0, eos);
  std::vector<std::string> out;
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return std::string_view{};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  };
  std::size_t pos = 0;
  for (;;) {
    const auto next = text.find(separator, pos);
    auto piece = trim(text.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (!piece.empty()) out.emplace_back(piece);
    if (next == std::string_view::npos) break;
    pos = next + separator.size();
  }
  return out;
}

std::vector<std::string> phrases_from_ids(std::span<const int> ids, const SubwordVocab& vocab) {
  std::vector<std::string> out;
  std::vector<int> run;
  auto flush = [&] {
    auto text = decode(run, vocab, {.strip_specials = true});
    if (!text.empty()) out.push_back(std::move(text));
    run.clear();
  };
  for (int id : ids) {
    if (id == kEosId) break;
    if (id == kPhraseSepId) flush();
    else run.push_back(id);
  }
  flush();
  return out;
}

std::vector<std::string> predict_keyphrases(const Model<float>& model, std::span<const int> src,
                                            const SubwordVocab& vocab, GenerateOptions opts) {
  if (model.config.regime == Regime::labeling) return bio_to_phrases(src, predict_labels(model, src), vocab);
  return phrases_from_ids(greedy_generate(model, src, opts), vocab);
}

void write_predictions(std::ostream& out, const std::vector<Prediction>& predictions) {
  for (const auto& p : predictions) {
    require(p.id.find_first_of("\t\n") == std::string::npos, "prediction id contains a tab or newline");
    out << p.id << '\t';
    for (std::size_t i = 0; i < p.phrases.size(); ++i) out << (i ? ";" : "") << p.phrases[i];
    out << '\n';
  }
}

std::vector<Prediction> read_predictions(std::istream& in) {
  std::vector<Prediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    require(tab != std::string::npos, "prediction file line " + std::to_string(line_no) + ": missing tab after id");
    out.push_back({line.substr(0, tab), parse_phrase_sequence(std::string_view(line).substr(tab + 1))});
  }
  return out;
}

void save_predictions(const std::string& path, const std::vector<Prediction>& predictions) {
  std::ofstream f(path);
  require(bool(f), "cannot write predictions to " + path);
  write_predictions(f, predictions);
}

std::vector<Prediction> load_predictions(const std::string& path) {
  std::ifstream f(path);
  require(bool(f), "cannot open predictions file " + path);
  return read_predictions(f);
}

}  // namespace kpg
