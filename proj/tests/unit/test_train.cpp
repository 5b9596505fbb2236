#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "kpg/data.hpp"
#include "kpg/errors.hpp"
#include "kpg/grad_check.hpp"
#include "kpg/pipeline.hpp"
#include "kpg/synthetic.hpp"
#include "kpg/train.hpp"

using namespace kpg;

namespace {

struct Toy {
  std::vector<Document> docs;
  SubwordVocab vocab;
};

const Toy& toy() {
  static const Toy t = [] {
    Toy x;
    x.docs = synthetic_corpus(8, 3);
    x.vocab = SubwordVocab::train(vocabulary_texts(x.docs), 400);
    return x;
  }();
  return t;
}

ModelConfig tiny_config(Objective obj, int hidden = 16) {
  ModelConfig cfg;
  cfg.hidden = hidden;
  cfg.heads = 2;
  cfg.ffn_size = 2 * hidden;
  cfg.enc_layers = 1;
  cfg.max_positions = 160;
  cfg.vocab_size = int(toy().vocab.size());
  cfg.regime = regime_of(obj);
  cfg.crf = obj == Objective::labeling_crf;
  if (cfg.regime == Regime::seq2seq) cfg.dec_layers = 1;
  return cfg;
}

Example example_for(Objective obj, std::size_t i = 0) {
  const auto& t = toy();
  if (obj == Objective::mlm || obj == Objective::span_infill)
    return make_pretrain_example("p", t.docs[i].body, t.vocab,
                                 obj == Objective::mlm ? PretrainMode::mlm : PretrainMode::span_infill, 24);
  return make_example(t.docs[i], t.vocab, obj, 32, 12);
}

std::vector<Example> examples_for(Objective obj, std::size_t n) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto ex = example_for(obj, i % toy().docs.size());
    ex.id = "ex" + std::to_string(i);
    out.push_back(ex);
  }
  return out;
}

const Objective kAll[] = {Objective::labeling, Objective::labeling_crf, Objective::prefix_lm,
                          Objective::seq2seq,  Objective::mlm,          Objective::span_infill};

}  // namespace

TEST_CASE("objective names") {
  for (Objective o : kAll) CHECK(parse_objective(to_string(o)) == o);
  CHECK(regime_of(Objective::labeling_crf) == Regime::labeling);
  CHECK(regime_of(Objective::mlm) == Regime::prefix_lm);
  CHECK(regime_of(Objective::span_infill) == Regime::seq2seq);
  CHECK_THROWS_AS(parse_objective("rl"), ContractError);
}

TEST_CASE("early stopping") {
  EarlyStopping es(1);
  CHECK_FALSE(es.observe(1.0));
  CHECK_FALSE(es.observe(0.9));
  CHECK(es.observe(0.95));
  CHECK(es.best_epoch() == 2);
  CHECK(es.best_loss() == 0.9);

  EarlyStopping patient(2);
  CHECK_FALSE(patient.observe(1.0));
  CHECK_FALSE(patient.observe(1.1));
  CHECK_FALSE(patient.observe(0.5));
  CHECK_FALSE(patient.observe(0.6));
  CHECK(patient.observe(0.7));
  CHECK(patient.best_epoch() == 3);
}

TEST_CASE("weight decay exclusions") {
  CHECK(is_decayed_parameter("enc.layer0.attn.q.w"));
  CHECK(is_decayed_parameter("enc.tok_emb"));
  CHECK_FALSE(is_decayed_parameter("bio.b"));
  CHECK_FALSE(is_decayed_parameter("enc.layer0.ln1.g"));
  CHECK_FALSE(is_decayed_parameter("crf.trans"));
}

TEST_CASE("train spec validation") {
  ModelConfig cfg = tiny_config(Objective::prefix_lm);
  TrainSpec spec;
  spec.max_src_len = 100;
  spec.max_tgt_len = 40;
  CHECK_NOTHROW(spec.validate(cfg));
  spec.batch_size = 0;
  CHECK_THROWS_AS(spec.validate(cfg), ContractError);
  spec.batch_size = 8;
  spec.max_src_len = 1000;
  CHECK_THROWS_AS(spec.validate(cfg), ContractError);
  spec.max_src_len = 100;
  spec.lr = -1;
  CHECK_THROWS_AS(spec.validate(cfg), ContractError);
}

TEST_CASE("prefix-lm loss input scores only corrupted positions") {
  const auto ex = example_for(Objective::prefix_lm);
  Rng rng(4);
  const auto in = prepare_loss_input(Objective::prefix_lm, ex, toy().vocab.size(), rng);
  const std::size_t T = ex.target.size();
  CHECK(in.target_in.size() == T);
  CHECK(in.positions.size() == round_half_even(0.8 * double(T)) + round_half_even(0.1 * double(T)));
  for (std::size_t k = 0; k < in.positions.size(); ++k) CHECK(in.gold[k] == ex.target[in.positions[k]]);
  for (std::size_t i = 0; i < T; ++i) {
    const bool scored = std::find(in.positions.begin(), in.positions.end(), i) != in.positions.end();
    if (!scored) CHECK(in.target_in[i] == ex.target[i]);
  }
}

TEST_CASE("seq2seq loss input is teacher forced") {
  const auto ex = example_for(Objective::seq2seq);
  Rng rng(1);
  const auto in = prepare_loss_input(Objective::seq2seq, ex, toy().vocab.size(), rng);
  REQUIRE(in.target_in.size() == ex.target.size());
  CHECK(in.target_in[0] == kClsId);
  for (std::size_t i = 1; i < ex.target.size(); ++i) CHECK(in.target_in[i] == ex.target[i - 1]);
  CHECK(in.gold == ex.target);
}

TEST_CASE("every objective loss has correct gradients on sampled coordinates") {
  for (Objective obj : kAll) {
    CAPTURE(to_string(obj));
    const ModelConfig cfg = tiny_config(obj, 8);
    Rng rng(5);
    Model<double> m{cfg, init_params<double>(cfg, rng)};
    std::normal_distribution<double> nd(0, 0.3);
    for (auto& [n, t] : m.params)
      for (auto& v : t.values()) v += nd(rng);
    Rng r2(7);
    const auto in = prepare_loss_input(obj, example_for(obj), toy().vocab.size(), r2);
    auto fn = [&](std::span<const double> p, std::span<double> g) {
      Model<double> mm = m;
      mm.params.unflatten(p);
      if (g.empty()) return example_loss<double>(mm, obj, in, nullptr, 1.0);
      auto grads = mm.params.zeros_like();
      const double l = example_loss<double>(mm, obj, in, &grads, 1.0);
      const auto f = grads.flatten();
      std::copy(f.begin(), f.end(), g.begin());
      return l;
    };
    GradCheckOptions o;
    o.relative_floor = 1e-3;
    const std::size_t n = m.params.parameter_count();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (int k = 0; k < 150; ++k) o.coordinates.push_back(pick(rng));
    const auto res = grad_check(fn, m.params.flatten(), o);
    CHECK(res.max_rel_error < 1e-6);
  }
}

TEST_CASE("updates happen every batch_size x accumulation_steps examples") {
  const auto data = examples_for(Objective::labeling, 64);
  const ModelConfig cfg = tiny_config(Objective::labeling);
  Rng rng(2);
  Model<float> m{cfg, init_params<float>(cfg, rng)};
  TrainSpec spec;
  spec.batch_size = 8;
  spec.accumulation_steps = 4;
  spec.epochs = 1;
  spec.max_src_len = 32;
  spec.max_tgt_len = 12;
  spec.dropout = 0;
  spec.lr = 1e-3;
  const auto res = train_loop(m, Objective::labeling, data, {}, spec);
  CHECK(res.steps == 2);
  CHECK(res.epochs_run == 1);
  std::size_t with_train = 0;
  for (const auto& h : res.history) with_train += h.train_loss.has_value();
  CHECK(with_train == 2);
}

TEST_CASE("training is bit-reproducible and learns") {
  for (Objective obj : {Objective::labeling_crf, Objective::prefix_lm, Objective::seq2seq, Objective::span_infill}) {
    CAPTURE(to_string(obj));
    const auto data = examples_for(obj, 8);
    const ModelConfig cfg = tiny_config(obj);
    TrainSpec spec;
    spec.batch_size = 4;
    spec.epochs = 6;
    spec.max_src_len = 32;
    spec.max_tgt_len = 12;
    spec.lr = 3e-3;
    spec.dropout = 0.1;
    spec.patience = 100;
    spec.seed = 17;
    auto run = [&](std::string* log) {
      Rng rng(3);
      Model<float> m{cfg, init_params<float>(cfg, rng)};
      const double before = mean_loss(m, obj, data, 1);
      std::ostringstream os;
      auto res = train_loop(m, obj, data, data, spec, {}, &os);
      *log = os.str();
      CHECK(mean_loss(m, obj, data, 1) < before);
      return std::make_pair(res, m.params);
    };
    std::string la, lb;
    auto a = run(&la);
    auto b = run(&lb);
    CHECK(a.first.history == b.first.history);
    CHECK(a.second == b.second);
    CHECK(a.first.best == b.first.best);
    CHECK(la == lb);
    CHECK(!la.empty());
  }
}

TEST_CASE("early stopping returns the best snapshot") {
  const auto data = examples_for(Objective::labeling, 8);
  const ModelConfig cfg = tiny_config(Objective::labeling);
  Rng rng(2);
  Model<float> m{cfg, init_params<float>(cfg, rng)};
  TrainSpec spec;
  spec.batch_size = 4;
  spec.epochs = 50;
  spec.max_src_len = 32;
  spec.max_tgt_len = 12;
  spec.lr = 0.05;  // large enough to overshoot
  spec.dropout = 0;
  spec.patience = 1;
  const auto res = train_loop(m, Objective::labeling, data, data, spec);
  REQUIRE(res.best_epoch >= 1);
  double best_val = std::numeric_limits<double>::infinity();
  for (const auto& h : res.history)
    if (h.val_loss) best_val = std::min(best_val, *h.val_loss);
  Model<float> best{cfg, res.best};
  CHECK(mean_loss(best, Objective::labeling, data, spec.seed ^ 0x9e3779b97f4a7c15ULL) == doctest::Approx(best_val));
  if (res.early_stopped) CHECK(res.epochs_run == res.best_epoch + 1);
}

TEST_CASE("non-finite loss aborts with the example id") {
  const auto data = examples_for(Objective::labeling, 4);
  const ModelConfig cfg = tiny_config(Objective::labeling);
  Rng rng(2);
  Model<float> m{cfg, init_params<float>(cfg, rng)};
  m.params.at("bio.b")[0] = std::numeric_limits<float>::quiet_NaN();
  TrainSpec spec;
  spec.max_src_len = 32;
  spec.max_tgt_len = 12;
  spec.epochs = 1;
  try {
    train_loop(m, Objective::labeling, data, {}, spec);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CAPTURE(std::string(e.what()));
    CHECK(std::string(e.what()).find("on example 'ex") != std::string::npos);
  }
}

TEST_CASE("history records serialize as json lines") {
  HistoryRecord r;
  r.step = 3;
  r.epoch = 1;
  r.lr = 0.5;
  r.train_loss = 1.25;
  const auto line = r.to_json_line();
  CHECK(line.find("\"step\":3") != std::string::npos);
  CHECK(line.find("\"train_loss\":1.25") != std::string::npos);
  CHECK(line.find("val_loss") == std::string::npos);
}
