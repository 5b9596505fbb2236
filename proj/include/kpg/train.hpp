#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kpg/heads.hpp"
#include "kpg/model.hpp"
#include "kpg/objectives.hpp"
#include "kpg/optim.hpp"

namespace kpg {

enum class Objective { labeling, labeling_crf, prefix_lm, seq2seq, mlm, span_infill };

std::string to_string(Objective o);
Objective parse_objective(std::string_view name);

// The model regime an objective trains.
Regime regime_of(Objective o);

// One training example in token space. Generation targets end in [EOS];
// pretraining examples carry only `source`.
struct Example {
  std::string id;
  std::vector<int> source;
  std::vector<int> target;
  LabelSequence labels;
};

// What a loss is evaluated on after corruption has been applied.
struct LossInput {
  std::vector<int> source;
  std::vector<int> target_in;           // prefix-LM target slots or decoder input
  std::vector<std::size_t> positions;   // scored rows (target-relative for prefix-LM)
  std::vector<int> gold;                // gold ids at `positions`
  LabelSequence labels;
};

struct CorruptionRates {
  double mask_rate = 0.8;
  double replace_rate = 0.1;
};

LossInput prepare_loss_input(Objective objective, const Example& ex, std::size_t vocab_size, Rng& rng,
                             CorruptionRates rates = {});

// Mean loss of one example (per scored token; the CRF NLL is divided by the
// sequence length). With `grads`, d(scale·loss) is accumulated into it.
template <typename T>
T example_loss(const Model<T>& model, Objective objective, const LossInput& in, ParamStore<T>* grads, T scale,
               Dropout dropout = {});

struct TrainSpec {
  std::size_t batch_size = 8;         // micro-batch
  std::size_t accumulation_steps = 1;  // micro-batches per update
  std::size_t epochs = 10;
  std::int64_t warmup_steps = 0;
  ScheduleKind schedule = ScheduleKind::linear;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double dropout = 0.1;
  std::size_t patience = 1;
  std::uint64_t seed = 1;
  std::size_t max_src_len = kDefaultMaxSrcLen;
  std::size_t max_tgt_len = kDefaultMaxTgtLen;
  std::int64_t max_steps = 0;  // 0: no cap
  CorruptionRates corruption;

  void validate(const ModelConfig& model) const;
  std::size_t examples_per_update() const { return batch_size * accumulation_steps; }
};

// Patience-based stopping on validation loss: stop once `patience`
// consecutive epochs fail to improve on the best loss so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  // Returns true when training should stop after this epoch.
  bool observe(double val_loss);
  bool improved() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 before any observation
  double best_loss() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t bad_epochs_ = 0;
  double best_ = 0.0;
  bool improved_ = false;
};

struct HistoryRecord {
  std::int64_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  std::optional<double> train_loss;  // mean over the update's examples
  std::optional<double> val_loss;    // end-of-epoch records only

  std::string to_json_line() const;
  friend bool operator==(const HistoryRecord&, const HistoryRecord&) = default;
};

struct TrainResult {
  ParamStore<float> best;  // lowest-validation-loss snapshot
  std::vector<HistoryRecord> history;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::int64_t steps = 0;
  bool early_stopped = false;
  bool stopped_by_callback = false;
};

// Called after every epoch with the current parameters; returning true ends
// training.
using EpochCallback = std::function<bool(const Model<float>& current, std::size_t epoch, std::int64_t steps)>;

// AdamW with the configured schedule. Biases, layer-norm parameters and CRF
// scores are not weight-decayed. `model` holds the final parameters on
// return; the result carries the best snapshot. Without validation data the
// last epoch counts as best.
TrainResult train_loop(Model<float>& model, Objective objective, const std::vector<Example>& train,
                       const std::vector<Example>& val, const TrainSpec& spec, const EpochCallback& on_epoch = {},
                       std::ostream* history_out = nullptr);

// Mean example loss without dropout. Corruption draws from an rng seeded
// with `seed`, so repeated calls agree.
double mean_loss(const Model<float>& model, Objective objective, const std::vector<Example>& data,
                 std::uint64_t seed, CorruptionRates rates = {});

bool is_decayed_parameter(const std::string& name);

}  // namespace kpg
