#include "kpg/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "kpg/errors.hpp"

namespace kpg {

std::string to_string(Objective o) {
  switch (o) {
    case Objective::labeling: return "labeling";
    case Objective::labeling_crf: return "labeling-crf";
    case Objective::prefix_lm: return "prefix-lm";
    case Objective::seq2seq: return "seq2seq";
    case Objective::mlm: return "mlm";
    case Objective::span_infill: return "span_infill";
  }
  return "?";
}

Objective parse_objective(std::string_view name) {
  if (name == "labeling") return Objective::labeling;
  if (name == "labeling-crf" || name == "labeling_crf") return Objective::labeling_crf;
  if (name == "prefix-lm" || name == "prefix_lm") return Objective::prefix_lm;
  if (name == "seq2seq") return Objective::seq2seq;
  if (name == "mlm") return Objective::mlm;
  if (name == "span_infill" || name == "span-infill") return Objective::span_infill;
  throw ContractError("unknown objective '" + std::string(name) +
                      "' (expected labeling, labeling-crf, prefix-lm, seq2seq, mlm or span_infill)");
}

Regime regime_of(Objective o) {
  switch (o) {
    case Objective::labeling:
    case Objective::labeling_crf: return Regime::labeling;
    case Objective::prefix_lm:
    case Objective::mlm: return Regime::prefix_lm;
    case Objective::seq2seq:
    case Objective::span_infill: return Regime::seq2seq;
  }
  return Regime::prefix_lm;
}

LossInput prepare_loss_input(Objective objective, const Example& ex, std::size_t vocab_size, Rng& rng,
                             CorruptionRates rates) {
  require(!ex.source.empty(), "example '" + ex.id + "' has an empty source");
  LossInput in;
  auto all_positions = [](std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    return p;
  };
  switch (objective) {
    case Objective::labeling:
    case Objective::labeling_crf:
      require(ex.labels.size() == ex.source.size(), "example '" + ex.id + "': label count differs from token count");
      in.source = ex.source;
      in.labels = ex.labels;
      break;
    case Objective::prefix_lm: {
      require(!ex.target.empty(), "example '" + ex.id + "' has an empty target");
      auto c = corrupt_prefix_lm(ex.target, vocab_size, rng, rates.mask_rate, rates.replace_rate);
      in.source = ex.source;
      in.target_in = std::move(c.corrupted);
      in.positions = std::move(c.loss_positions);
      in.gold = std::move(c.originals);
      break;
    }
    case Objective::seq2seq:
      require(!ex.target.empty(), "example '" + ex.id + "' has an empty target");
      in.source = ex.source;
      in.target_in.push_back(kClsId);
      in.target_in.insert(in.target_in.end(), ex.target.begin(), ex.target.end() - 1);
      in.positions = all_positions(ex.target.size());
      in.gold = ex.target;
      break;
    case Objective::mlm: {
      auto c = corrupt_pretrain(ex.source, PretrainMode::mlm, vocab_size, rng);
      in.source = std::move(c.corrupted);
      in.positions = std::move(c.loss_positions);
      in.gold = std::move(c.originals);
      break;
    }
    case Objective::span_infill: {
      auto c = corrupt_pretrain(ex.source, PretrainMode::span_infill, vocab_size, rng);
      in.source = std::move(c.corrupted);
      in.target_in.push_back(kClsId);
      in.target_in.insert(in.target_in.end(), ex.source.begin(), ex.source.end());
      in.gold = ex.source;
      in.gold.push_back(kEosId);
      in.positions = all_positions(in.gold.size());
      break;
    }
  }
  return in;
}

namespace {

// Cross-entropy of the LM head at `rows` of `hidden`, averaged over rows.
// Gradients (scaled) flow into `grads` and `d_hidden`.
template <typename T>
T lm_rows_loss(const ParamStore<T>& p, const std::string& prefix, const Tensor<T>& hidden,
               const std::vector<std::size_t>& rows, const std::vector<int>& gold, ParamStore<T>* grads, T scale,
               Tensor<T>* d_hidden) {
  require(rows.size() == gold.size(), "loss: position and gold counts differ");
  if (rows.empty()) return T(0);
  const std::size_t h = hidden.cols();
  Tensor<T> sel({rows.size(), h});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = hidden.row(rows[i]);
    std::copy(src.begin(), src.end(), sel.row(i).begin());
  }
  LmHeadCache<T> cache;
  Tensor<T> logits = lm_head_forward(p, prefix, sel, grads ? &cache : nullptr);
  const T per_row = scale / T(rows.size());
  T total = 0;
  Tensor<T> d_logits;
  if (grads) d_logits = Tensor<T>(logits.shape());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto target = std::size_t(gold[i]);
    total += grads ? cross_entropy_with_grad<T>(logits.row(i), target, per_row, d_logits.row(i))
                   : cross_entropy<T>(logits.row(i), target);
  }
  if (grads) {
    Tensor<T> d_sel = lm_head_backward(p, *grads, prefix, cache, d_logits);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto dst = d_hidden->row(rows[i]);
      auto src = d_sel.row(i);
      for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
    }
  }
  return total / T(rows.size());
}

template <typename T>
T labeling_loss(const Model<T>& model, const LossInput& in, ParamStore<T>* grads, T scale, Dropout dropout) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const std::size_t n = in.source.size();
  const auto mask = build_attention_mask(MaskMode::bidirectional, n, 0);
  StackCache<T> cache;
  Tensor<T> hidden = stack_forward(p, "enc", cfg.enc_layers, cfg.heads, StackInput{in.source, {}, 0}, mask, nullptr,
                                   grads ? &cache : nullptr, dropout);
  Tensor<T> logits = bio_label_logits(hidden, p.at("bio.w"), p.at("bio.b"));
  Tensor<T> d_logits;
  if (grads) d_logits = Tensor<T>(logits.shape());
  T loss = 0;
  const T per_token = scale / T(n);
  if (cfg.crf) {
    const auto crf = CrfParams<T>::from_store(p);
    if (grads) {
      CrfParams<T> d_crf{};
      loss = crf_nll_with_grad(logits, in.labels, crf, per_token, d_logits, d_crf);
      d_crf.add_to_store(*grads);
    } else {
      loss = crf_nll(logits, in.labels, crf);
    }
    loss /= T(n);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const auto target = std::size_t(in.labels[i]);
      loss += grads ? cross_entropy_with_grad<T>(logits.row(i), target, per_token, d_logits.row(i))
                    : cross_entropy<T>(logits.row(i), target);
    }
    loss /= T(n);
  }
  if (grads) {
    accumulate_at_b(hidden, d_logits, grads->at("bio.w"));
    accumulate_column_sums(d_logits, grads->at("bio.b"));
    stack_backward(p, *grads, "enc", cfg.heads, cache, matmul_bt(d_logits, p.at("bio.w")), nullptr);
  }
  return loss;
}

template <typename T>
T single_stack_lm_loss(const Model<T>& model, const LossInput& in, ParamStore<T>* grads, T scale, Dropout dropout) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const std::size_t s = in.source.size(), t = in.target_in.size();
  std::vector<int> ids = in.source, segments(s, 0);
  ids.insert(ids.end(), in.target_in.begin(), in.target_in.end());
  segments.resize(s + t, 1);
  const auto mask = t == 0 ? build_attention_mask(MaskMode::bidirectional, s, 0)
                           : build_attention_mask(MaskMode::prefix_lm, s, t);
  std::vector<std::size_t> rows = in.positions;
  if (t > 0)
    for (auto& r : rows) r += s;

  StackCache<T> cache;
  Tensor<T> hidden = stack_forward(p, "enc", cfg.enc_layers, cfg.heads, StackInput{ids, segments, 0}, mask, nullptr,
                                   grads ? &cache : nullptr, dropout);
  Tensor<T> d_hidden;
  if (grads) d_hidden = Tensor<T>(hidden.shape());
  const T loss = lm_rows_loss(p, "enc", hidden, rows, in.gold, grads, scale, &d_hidden);
  if (grads) stack_backward(p, *grads, "enc", cfg.heads, cache, std::move(d_hidden), nullptr);
  return loss;
}

template <typename T>
T seq2seq_loss(const Model<T>& model, const LossInput& in, ParamStore<T>* grads, T scale, Dropout dropout) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const auto enc_mask = build_attention_mask(MaskMode::bidirectional, in.source.size(), 0);
  const auto dec_mask = build_attention_mask(MaskMode::causal, 0, in.target_in.size());
  StackCache<T> enc_cache, dec_cache;
  Tensor<T> memory = stack_forward(p, "enc", cfg.enc_layers, cfg.heads, StackInput{in.source, {}, 0}, enc_mask,
                                   nullptr, grads ? &enc_cache : nullptr, dropout);
  Tensor<T> hidden = stack_forward(p, "dec", cfg.dec_layers, cfg.heads, StackInput{in.target_in, {}, 0}, dec_mask,
                                   &memory, grads ? &dec_cache : nullptr, dropout);
  Tensor<T> d_hidden;
  if (grads) d_hidden = Tensor<T>(hidden.shape());
  const T loss = lm_rows_loss(p, "dec", hidden, in.positions, in.gold, grads, scale, &d_hidden);
  if (grads) {
    Tensor<T> d_memory(memory.shape());
    stack_backward(p, *grads, "dec", cfg.heads, dec_cache, std::move(d_hidden), &d_memory);
    stack_backward(p, *grads, "enc", cfg.heads, enc_cache, std::move(d_memory), nullptr);
  }
  return loss;
}

}  // namespace

template <typename T>
T example_loss(const Model<T>& model, Objective objective, const LossInput& in, ParamStore<T>* grads, T scale,
               Dropout dropout) {
  require(model.config.regime == regime_of(objective),
          "objective " + to_string(objective) + " needs a " + to_string(regime_of(objective)) + " model, got " +
              to_string(model.config.regime));
  require((objective == Objective::labeling_crf) == model.config.crf || regime_of(objective) != Regime::labeling,
          "labeling objective and model CRF setting disagree");
  switch (objective) {
    case Objective::labeling:
    case Objective::labeling_crf: return labeling_loss(model, in, grads, scale, dropout);
    case Objective::prefix_lm:
    case Objective::mlm: return single_stack_lm_loss(model, in, grads, scale, dropout);
    case Objective::seq2seq:
    case Objective::span_infill: return seq2seq_loss(model, in, grads, scale, dropout);
  }
  return T(0);
}

template float example_loss(const Model<float>&, Objective, const LossInput&, ParamStore<float>*, float, Dropout);
template double example_loss(const Model<double>&, Objective, const LossInput&, ParamStore<double>*, double,
                             Dropout);

void TrainSpec::validate(const ModelConfig& model) const {
  require(batch_size > 0, "train: batch_size must be positive");
  require(accumulation_steps > 0, "train: accumulation_steps must be positive");
  require(epochs > 0, "train: epochs must be positive");
  require(warmup_steps >= 0, "train: warmup_steps must be nonnegative");
  require(lr > 0 && std::isfinite(lr), "train: lr must be positive");
  require(weight_decay >= 0, "train: weight_decay must be nonnegative");
  require(dropout >= 0 && dropout < 1, "train: dropout must lie in [0, 1)");
  require(patience > 0, "train: patience must be positive");
  require(max_steps >= 0, "train: max_steps must be nonnegative");
  require(max_src_len > 0 && max_src_len <= std::size_t(model.max_positions),
          "train: max_src_len must lie in [1, max_positions]");
  require(max_tgt_len > 0 && max_tgt_len <= std::size_t(model.max_positions),
          "train: max_tgt_len must lie in [1, max_positions]");
}

bool EarlyStopping::observe(double val_loss) {
  ++epoch_;
  improved_ = best_epoch_ == 0 || val_loss < best_;
  if (improved_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    bad_epochs_ = 0;
    return false;
  }
  return ++bad_epochs_ >= patience_;
}

std::string HistoryRecord::to_json_line() const {
  nlohmann::json j{{"step", step}, {"epoch", epoch}, {"lr", lr}};
  if (train_loss) j["train_loss"] = *train_loss;
  if (val_loss) j["val_loss"] = *val_loss;
  return j.dump();
}

bool is_decayed_parameter(const std::string& name) {
  if (name.ends_with(".b") || name.ends_with(".bias") || name.ends_with(".g")) return false;
  if (name.starts_with("crf.")) return false;
  return true;
}

double mean_loss(const Model<float>& model, Objective objective, const std::vector<Example>& data,
                 std::uint64_t seed, CorruptionRates rates) {
  require(!data.empty(), "mean_loss: no examples");
  Rng rng(seed);
  double total = 0;
  for (const auto& ex : data) {
    auto in = prepare_loss_input(objective, ex, std::size_t(model.config.vocab_size), rng, rates);
    total += double(example_loss<float>(model, objective, in, nullptr, 1.0f));
  }
  return total / double(data.size());
}

TrainResult train_loop(Model<float>& model, Objective objective, const std::vector<Example>& train,
                       const std::vector<Example>& val, const TrainSpec& spec, const EpochCallback& on_epoch,
                       std::ostream* history_out) {
  spec.validate(model.config);
  require(!train.empty(), "train_loop: training data is empty");
  require(model.config.regime == regime_of(objective), "train_loop: objective " + to_string(objective) +
                                                           " does not match a " + to_string(model.config.regime) +
                                                           " model");

  Rng rng(spec.seed);
  const std::size_t per_update = spec.examples_per_update();
  const std::size_t updates_per_epoch = (train.size() + per_update - 1) / per_update;
  std::int64_t total_steps = std::int64_t(updates_per_epoch * spec.epochs);
  if (spec.max_steps > 0) total_steps = std::min(total_steps, spec.max_steps);
  ScheduleSpec schedule{spec.lr, std::min(spec.warmup_steps, total_steps), total_steps, spec.schedule};
  schedule.validate();

  const std::size_t vocab = std::size_t(model.config.vocab_size);
  const std::uint64_t val_seed = spec.seed ^ 0x9e3779b97f4a7c15ULL;
  ParamStore<float> grads = model.params.zeros_like();
  std::map<std::string, OptimState<float>> states;
  EarlyStopping stopping(spec.patience);

  TrainResult result;
  result.best = model.params;
  auto emit = [&](HistoryRecord rec) {
    if (history_out) *history_out << rec.to_json_line() << '\n';
    result.history.push_back(std::move(rec));
  };

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::int64_t step = 0;
  bool out_of_steps = false;
  for (std::size_t epoch = 1; epoch <= spec.epochs && !out_of_steps; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size() && !out_of_steps; begin += per_update) {
      const std::size_t end = std::min(order.size(), begin + per_update);
      const float scale = 1.0f / float(end - begin);
      grads.zero();
      double loss_sum = 0;
      for (std::size_t i = begin; i < end; ++i) {
        const Example& ex = train[order[i]];
        auto in = prepare_loss_input(objective, ex, vocab, rng, spec.corruption);
        const std::string where = "example '" + ex.id + "' at step " + std::to_string(step + 1);
        float loss = 0;
        try {
          loss = example_loss<float>(model, objective, in, &grads, scale, Dropout{spec.dropout, &rng});
        } catch (const NumericError& e) {
          throw NumericError("training diverged on " + where + ": " + e.what());
        }
        if (!std::isfinite(loss)) throw NumericError("training diverged: non-finite loss on " + where);
        loss_sum += double(loss);
      }
      ++step;
      AdamWConfig opt;
      opt.lr = lr_schedule(step, schedule);
      auto g = grads.begin();
      for (auto& [name, tensor] : model.params) {
        AdamWConfig cfg = opt;
        if (!is_decayed_parameter(name)) cfg.weight_decay = 0.0;
        else cfg.weight_decay = spec.weight_decay;
        adamw_step(tensor, g->second, states[name], cfg);
        ++g;
      }
      emit({step, epoch, opt.lr, loss_sum / double(end - begin), std::nullopt});
      if (spec.max_steps > 0 && step >= spec.max_steps) out_of_steps = true;
    }

    result.epochs_run = epoch;
    result.steps = step;
    if (!val.empty()) {
      const double vl = mean_loss(model, objective, val, val_seed, spec.corruption);
      if (!std::isfinite(vl)) throw NumericError("training diverged: non-finite validation loss after epoch " +
                                                 std::to_string(epoch));
      emit({step, epoch, lr_schedule(step, schedule), std::nullopt, vl});
      const bool stop = stopping.observe(vl);
      if (stopping.improved()) {
        result.best = model.params;
        result.best_epoch = epoch;
      }
      if (stop) {
        result.early_stopped = true;
        break;
      }
    } else {
      result.best = model.params;
      result.best_epoch = epoch;
    }
    if (on_epoch && on_epoch(model, epoch, step)) {
      result.stopped_by_callback = true;
      break;
    }
  }
  return result;
}

}  // namespace kpg
