// kpg: vocabulary building, pretraining, fine-tuning, prediction,
// evaluation, corpus statistics and throughput benchmarking.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kpg/bench.hpp"
#include "kpg/checkpoint.hpp"
#include "kpg/config.hpp"
#include "kpg/data.hpp"
#include "kpg/errors.hpp"
#include "kpg/pipeline.hpp"
#include "kpg/synthetic.hpp"
#include "kpg/train.hpp"

namespace {

using namespace kpg;

// Flags shared by the commands that build or load a model. Unset flags fall
// back to the config file, then to built-in defaults.
struct ModelFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> hidden;
  std::optional<int> enc_layers;
  std::optional<int> dec_layers;
};

Config load_config(const std::string& path) {
  if (path.empty()) return {};
  return Config::load(path);
}

// Config values with command-line overrides applied.
Config effective_config(const ModelFlags& f) {
  Config c = load_config(f.config_path);
  if (f.seed) c.set("seed", std::to_string(*f.seed));
  if (f.hidden) c.set("hidden", std::to_string(*f.hidden));
  if (f.enc_layers) c.set("enc_layers", std::to_string(*f.enc_layers));
  if (f.dec_layers) c.set("dec_layers", std::to_string(*f.dec_layers));
  return c;
}

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--config", f.config_path, "key = value settings file");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--hidden", f.hidden, "hidden size");
  cmd->add_option("--enc-layers", f.enc_layers, "encoder (or single-stack) layers");
  cmd->add_option("--dec-layers", f.dec_layers, "decoder layers (seq2seq)");
}

ModelConfig model_config(const Config& c, Regime regime, bool crf, std::size_t vocab_size) {
  ModelConfig m;
  m.regime = regime;
  m.crf = crf;
  m.vocab_size = int(vocab_size);
  m.hidden = int(c.get_int_or("hidden", 64));
  m.heads = int(c.get_int_or("heads", 4));
  m.ffn_size = int(c.get_int_or("ffn_size", 4 * m.hidden));
  m.enc_layers = int(c.get_int_or("enc_layers", 2));
  m.dec_layers = regime == Regime::seq2seq ? int(c.get_int_or("dec_layers", 2)) : 0;
  m.max_positions = int(c.get_int_or("max_positions", 512));
  m.validate();
  return m;
}

// Keys every training run must set explicitly (the usual hyperparameter
// table columns); the rest have defaults.
const std::vector<std::string> kRequiredTrainKeys{"dropout", "batch_size", "epochs", "warmup_steps", "lr"};

TrainSpec train_spec(const Config& c) {
  c.require_keys(kRequiredTrainKeys);
  TrainSpec s;
  s.dropout = c.get_double("dropout");
  s.batch_size = std::size_t(c.get_int("batch_size"));
  s.epochs = std::size_t(c.get_int("epochs"));
  s.warmup_steps = c.get_int("warmup_steps");
  s.lr = c.get_double("lr");
  s.accumulation_steps = std::size_t(c.get_int_or("accumulation_steps", 1));
  s.weight_decay = c.get_double_or("weight_decay", 0.01);
  s.patience = std::size_t(c.get_int_or("patience", 1));
  s.schedule = parse_schedule_kind(c.get_or("schedule", "linear"));
  s.seed = std::uint64_t(c.get_int_or("seed", 1));
  s.max_src_len = std::size_t(c.get_int_or("max_src_len", std::int64_t(kDefaultMaxSrcLen)));
  s.max_tgt_len = std::size_t(c.get_int_or("max_tgt_len", std::int64_t(kDefaultMaxTgtLen)));
  s.max_steps = c.get_int_or("max_steps", 0);
  s.corruption.mask_rate = c.get_double_or("mask_rate", 0.8);
  s.corruption.replace_rate = c.get_double_or("replace_rate", 0.1);
  return s;
}

std::vector<Document> read_documents(const std::string& path) {
  auto r = load_corpus(path);
  return std::move(r.documents);
}

// Plain text for vocabulary learning and pretraining: a JSON-lines corpus
// contributes titles and bodies, anything else one sentence per line.
std::vector<std::string> read_texts(const std::string& path, bool with_keyphrases) {
  if (path.ends_with(".jsonl")) {
    const auto docs = read_documents(path);
    if (with_keyphrases) return vocabulary_texts(docs);
    std::vector<std::string> out;
    for (const auto& d : docs) out.push_back(d.title + " . " + d.body);
    return out;
  }
  std::ifstream in(path);
  require(bool(in), "cannot read " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
  return out;
}

Checkpoint load_matching_checkpoint(const std::string& path, const SubwordVocab& vocab) {
  auto ckpt = load_checkpoint(path);
  require(ckpt.vocab_fingerprint == vocab.fingerprint(),
          "checkpoint " + path + " was trained with a different vocabulary");
  return ckpt;
}

void write_history(const std::string& path, const std::string& lines) {
  if (path.empty()) return;
  std::ofstream out(path);
  require(bool(out), "cannot write " + path);
  out << lines;
}

InitMode parse_init(const std::string& s) {
  if (s == "pretrained") return InitMode::pretrained;
  if (s == "random") return InitMode::random;
  throw ContractError("unknown initialization '" + s + "' (expected pretrained or random)");
}

struct TrainArgs {
  ModelFlags model;
  std::string data, val, vocab, out, regime, checkpoint, history;
};

int run_train(const TrainArgs& a) {
  const Config c = effective_config(a.model);
  const std::string regime_name = a.regime.empty() ? c.get("regime") : a.regime;
  const Objective obj = parse_objective(regime_name);
  require(obj != Objective::mlm && obj != Objective::span_infill,
          "train: '" + regime_name + "' is a pretraining objective; use the pretrain command");
  const TrainSpec spec = train_spec(c);
  const auto vocab = SubwordVocab::load(a.vocab);
  ModelConfig cfg = model_config(c, regime_of(obj), obj == Objective::labeling_crf, vocab.size());
  spec.validate(cfg);

  Rng rng(spec.seed);
  Model<float> model{cfg, {}};
  std::optional<Checkpoint> pretrained;
  if (!a.checkpoint.empty()) pretrained = load_matching_checkpoint(a.checkpoint, vocab);
  if (cfg.regime == Regime::seq2seq) {
    const std::string fallback = pretrained ? "pretrained" : "random";
    model = compose_seq2seq(parse_init(c.get_or("encoder_init", fallback)),
                            parse_init(c.get_or("decoder_init", fallback)), cfg.enc_layers, cfg.dec_layers, cfg,
                            pretrained ? &pretrained->model : nullptr, rng);
  } else {
    model.params = init_params<float>(cfg, rng);
    if (pretrained) {
      const auto copied = copy_matching(pretrained->model.params, model.params);
      std::cerr << "initialized " << copied << " tensors from " << a.checkpoint << '\n';
    }
  }

  auto to_examples = [&](const std::vector<Document>& docs) {
    std::vector<Example> out;
    for (const auto& d : docs) out.push_back(make_example(d, vocab, obj, spec.max_src_len, spec.max_tgt_len));
    return out;
  };
  const auto train = to_examples(read_documents(a.data));
  const auto val = a.val.empty() ? std::vector<Example>{} : to_examples(read_documents(a.val));

  std::ostringstream history;
  const auto result = train_loop(model, obj, train, val, spec, {}, &history);
  write_history(a.history, history.str());
  save_checkpoint(a.out, {{cfg, result.best}, vocab.fingerprint()});
  std::cout << "objective: " << to_string(obj) << "\nparameters: " << parameter_count(cfg)
            << "\nsteps: " << result.steps << "\nepochs: " << result.epochs_run
            << "\nbest_epoch: " << result.best_epoch << "\nearly_stopped: " << (result.early_stopped ? 1 : 0)
            << "\ncheckpoint: " << a.out << '\n';
  return 0;
}

struct PretrainArgs {
  ModelFlags model;
  std::string data, vocab, out, objective, history;
};

int run_pretrain(const PretrainArgs& a) {
  const Config c = effective_config(a.model);
  const std::string name = a.objective.empty() ? c.get_or("objective", "mlm") : a.objective;
  const PretrainMode mode = parse_pretrain_mode(name);
  const Objective obj = mode == PretrainMode::mlm ? Objective::mlm : Objective::span_infill;
  const TrainSpec spec = train_spec(c);
  const auto vocab = SubwordVocab::load(a.vocab);
  const ModelConfig cfg = model_config(c, regime_of(obj), false, vocab.size());
  spec.validate(cfg);

  std::vector<Example> train;
  std::size_t i = 0;
  const std::size_t budget = mode == PretrainMode::mlm ? spec.max_src_len - 2 : spec.max_src_len;
  for (const auto& text : pack_texts(read_texts(a.data, false), vocab, budget))
    train.push_back(make_pretrain_example("s" + std::to_string(i++), text, vocab, mode, spec.max_src_len));
  std::erase_if(train, [](const Example& e) { return e.source.size() < 2; });
  require(!train.empty(), "pretrain: no usable text in " + a.data);

  Rng rng(spec.seed);
  Model<float> model{cfg, init_params<float>(cfg, rng)};
  std::ostringstream history;
  const auto result = train_loop(model, obj, train, {}, spec, {}, &history);
  write_history(a.history, history.str());
  save_checkpoint(a.out, {{cfg, result.best}, vocab.fingerprint()});
  std::cout << "objective: " << to_string(obj) << "\nexamples: " << train.size() << "\nsteps: " << result.steps
            << "\ncheckpoint: " << a.out << '\n';
  return 0;
}

struct PredictArgs {
  std::string checkpoint, vocab, data, out;
  std::size_t max_src_len = kDefaultMaxSrcLen;
  std::size_t max_tgt_len = kDefaultMaxTgtLen;
};

int run_predict(const PredictArgs& a) {
  const auto vocab = SubwordVocab::load(a.vocab);
  const auto ckpt = load_matching_checkpoint(a.checkpoint, vocab);
  GenerateOptions opts;
  opts.max_len = a.max_tgt_len;
  const auto preds = predict_corpus(ckpt.model, read_documents(a.data), vocab, a.max_src_len, opts);
  if (a.out.empty() || a.out == "-")
    write_predictions(std::cout, preds);
  else
    save_predictions(a.out, preds);
  return 0;
}

struct EvalArgs {
  std::string pred, gold;
  bool json = false;
};

int run_eval(const EvalArgs& a) {
  const auto report = evaluate_predictions(read_documents(a.gold), load_predictions(a.pred));
  std::cout << (a.json ? report.to_json() + "\n" : report.to_text());
  return 0;
}

struct StatsArgs {
  std::string data;
  bool lenient = false;
  bool json = false;
};

int run_stats(const StatsArgs& a) {
  auto loaded = load_corpus(a.data, {a.lenient});
  for (const auto& d : loaded.diagnostics) std::cerr << "skipped " << d << '\n';
  const auto s = corpus_stats(loaded.documents);
  if (a.json) {
    std::cout << nlohmann::json{{"examples", s.examples},
                                {"keyphrases_per_doc", s.keyphrases_per_doc},
                                {"percent_absent", s.percent_absent},
                                {"words_per_keyphrase", s.words_per_keyphrase}}
                     .dump()
              << '\n';
  } else {
    std::printf("examples: %zu\n#KP: %.2f\n%%AKP: %.2f\n|KP|: %.2f\n", s.examples, s.keyphrases_per_doc,
                s.percent_absent, s.words_per_keyphrase);
  }
  return 0;
}

struct BenchArgs {
  ModelFlags model;
  std::string checkpoint, vocab, data, regime = "seq2seq";
  std::size_t runs = 3;
  std::size_t limit = 0;
  std::size_t max_src_len = kDefaultMaxSrcLen;
  std::size_t max_tgt_len = kDefaultMaxTgtLen;
  bool fixed_length = false;
};

int run_bench(const BenchArgs& a) {
  const auto vocab = SubwordVocab::load(a.vocab);
  Model<float> model;
  if (!a.checkpoint.empty()) {
    model = load_matching_checkpoint(a.checkpoint, vocab).model;
  } else {
    // No checkpoint: time a freshly initialized model of the requested shape.
    const Config c = effective_config(a.model);
    const Objective obj = parse_objective(a.regime);
    const ModelConfig cfg = model_config(c, regime_of(obj), obj == Objective::labeling_crf, vocab.size());
    Rng rng(std::uint64_t(c.get_int_or("seed", 1)));
    model = {cfg, init_params<float>(cfg, rng)};
  }
  auto docs = read_documents(a.data);
  if (a.limit > 0 && docs.size() > a.limit) docs.resize(a.limit);
  std::vector<std::vector<int>> sources;
  for (const auto& d : docs) sources.push_back(build_model_input(d, vocab, a.max_src_len).ids);
  GenerateOptions opts;
  opts.max_len = a.max_tgt_len;
  opts.stop_at_eos = !a.fixed_length;
  const auto r = bench_model(model, sources, a.runs, opts);
  const auto& cfg = model.config;
  std::cout << "regime: " << to_string(cfg.regime) << "\nenc_layers: " << cfg.enc_layers
            << "\ndec_layers: " << cfg.dec_layers << "\nhidden: " << cfg.hidden
            << "\nhardware_threads: " << std::thread::hardware_concurrency() << '\n'
            << r.to_text();
  if (!r.stable()) std::cerr << "warning: runs differ by more than 10% from their mean\n";
  return 0;
}

struct VocabArgs {
  std::string data, out;
  std::size_t size = kDefaultVocabSize;
  std::size_t min_frequency = 2;
};

int run_build_vocab(const VocabArgs& a) {
  const auto vocab = SubwordVocab::train(read_texts(a.data, true), a.size, a.min_frequency);
  vocab.save(a.out);
  std::cout << "pieces: " << vocab.size() << "\nmerges: " << vocab.merges().size() << '\n';
  return 0;
}

struct SynthArgs {
  std::string out;
  std::size_t documents = 0;
  std::size_t sentences = 0;
  std::uint64_t seed = 1;
};

int run_synth(const SynthArgs& a) {
  require((a.documents > 0) != (a.sentences > 0), "synth: give exactly one of --docs and --sentences");
  if (a.documents > 0) {
    save_corpus(a.out, synthetic_corpus(a.documents, a.seed));
  } else {
    std::ofstream out(a.out);
    require(bool(out), "cannot write " + a.out);
    for (const auto& s : synthetic_sentences(a.sentences, a.seed)) out << s << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keyphrase generation with transformer encoders and decoders"};
  app.require_subcommand(1);

  VocabArgs vocab_args;
  auto* vocab_cmd = app.add_subcommand("build-vocab", "learn a subword vocabulary");
  vocab_cmd->add_option("--data", vocab_args.data, "corpus (.jsonl) or text file")->required();
  vocab_cmd->add_option("--out", vocab_args.out, "vocabulary file")->required();
  vocab_cmd->add_option("--vocab", vocab_args.size, "target number of pieces");
  vocab_cmd->add_option("--min-frequency", vocab_args.min_frequency, "smallest pair count worth merging");

  PretrainArgs pre_args;
  auto* pre_cmd = app.add_subcommand("pretrain", "pretrain with mlm or span_infill");
  add_model_flags(pre_cmd, pre_args.model);
  pre_cmd->add_option("--data", pre_args.data, "text file (one sentence per line) or .jsonl corpus")->required();
  pre_cmd->add_option("--vocab", pre_args.vocab, "vocabulary file")->required();
  pre_cmd->add_option("--out", pre_args.out, "checkpoint to write")->required();
  pre_cmd->add_option("--regime,--objective", pre_args.objective, "mlm or span_infill");
  pre_cmd->add_option("--history", pre_args.history, "write training history (JSON lines)");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "fine-tune a keyphrase model");
  add_model_flags(train_cmd, train_args.model);
  train_cmd->add_option("--data", train_args.data, "training corpus (.jsonl)")->required();
  train_cmd->add_option("--val", train_args.val, "validation corpus for early stopping");
  train_cmd->add_option("--vocab", train_args.vocab, "vocabulary file")->required();
  train_cmd->add_option("--out", train_args.out, "checkpoint to write")->required();
  train_cmd->add_option("--regime", train_args.regime, "labeling, labeling-crf, prefix-lm or seq2seq");
  train_cmd->add_option("--checkpoint", train_args.checkpoint, "pretrained checkpoint to start from");
  train_cmd->add_option("--history", train_args.history, "write training history (JSON lines)");

  PredictArgs pred_args;
  auto* pred_cmd = app.add_subcommand("predict", "predict keyphrases for a corpus");
  pred_cmd->add_option("--checkpoint", pred_args.checkpoint, "trained checkpoint")->required();
  pred_cmd->add_option("--vocab", pred_args.vocab, "vocabulary file")->required();
  pred_cmd->add_option("--data", pred_args.data, "corpus (.jsonl)")->required();
  pred_cmd->add_option("--out", pred_args.out, "prediction file (default stdout)");
  pred_cmd->add_option("--max-src-len", pred_args.max_src_len, "source token budget");
  pred_cmd->add_option("--max-tgt-len", pred_args.max_tgt_len, "generation cap");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "score predictions against gold keyphrases");
  eval_cmd->add_option("--pred", eval_args.pred, "prediction file")->required();
  eval_cmd->add_option("--gold,--data", eval_args.gold, "gold corpus (.jsonl)")->required();
  eval_cmd->add_flag("--json", eval_args.json, "print JSON");

  StatsArgs stats_args;
  auto* stats_cmd = app.add_subcommand("stats", "corpus statistics");
  stats_cmd->add_option("--data", stats_args.data, "corpus (.jsonl)")->required();
  stats_cmd->add_flag("--lenient", stats_args.lenient, "skip malformed records");
  stats_cmd->add_flag("--json", stats_args.json, "print JSON");

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "greedy-decoding throughput, batch size 1");
  add_model_flags(bench_cmd, bench_args.model);
  bench_cmd->add_option("--checkpoint", bench_args.checkpoint, "trained checkpoint (else a fresh model)");
  bench_cmd->add_option("--vocab", bench_args.vocab, "vocabulary file")->required();
  bench_cmd->add_option("--data", bench_args.data, "corpus (.jsonl)")->required();
  bench_cmd->add_option("--regime", bench_args.regime, "regime of a fresh model");
  bench_cmd->add_option("--runs", bench_args.runs, "timed passes over the corpus");
  bench_cmd->add_option("--limit", bench_args.limit, "use the first N documents");
  bench_cmd->add_option("--max-src-len", bench_args.max_src_len, "source token budget");
  bench_cmd->add_option("--max-tgt-len", bench_args.max_tgt_len, "generation cap");
  bench_cmd->add_flag("--fixed-length", bench_args.fixed_length, "ignore [EOS] and always emit the cap");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "write the synthetic toy corpus");
  synth_cmd->add_option("--out", synth_args.out, "output file")->required();
  synth_cmd->add_option("--docs", synth_args.documents, "documents (.jsonl)");
  synth_cmd->add_option("--sentences", synth_args.sentences, "sentences, one per line");
  synth_cmd->add_option("--seed", synth_args.seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "kpg: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*vocab_cmd) return run_build_vocab(vocab_args);
    if (*pre_cmd) return run_pretrain(pre_args);
    if (*train_cmd) return run_train(train_args);
    if (*pred_cmd) return run_predict(pred_args);
    if (*eval_cmd) return run_eval(eval_args);
    if (*stats_cmd) return run_stats(stats_args);
    if (*bench_cmd) return run_bench(bench_args);
    if (*synth_cmd) return run_synth(synth_args);
  } catch (const std::exception& e) {
    std::cerr << "kpg: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
