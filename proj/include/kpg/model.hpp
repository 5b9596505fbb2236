#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kpg/kernels.hpp"
#include "kpg/tensor.hpp"

namespace kpg {

using Rng = std::mt19937_64;

enum class Regime { labeling, prefix_lm, seq2seq };

std::string to_string(Regime r);
Regime parse_regime(std::string_view name);

struct ModelConfig {
  int enc_layers = 2;
  int dec_layers = 0;  // > 0 only for seq2seq
  int hidden = 64;
  int heads = 4;
  int ffn_size = 256;
  int max_positions = 512;
  int vocab_size = 0;
  Regime regime = Regime::prefix_lm;
  bool crf = false;  // labeling only: linear-chain CRF over the BIO logits

  void validate() const;
  int head_dim() const { return hidden / heads; }

  std::string serialize() const;  // key=value lines
  static ModelConfig deserialize(std::string_view text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// BERT-base dimensions with an e-layer encoder and d-layer decoder.
ModelConfig bert_base_seq2seq(int enc_layers, int dec_layers);

enum class MaskMode { bidirectional, causal, prefix_lm };

class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols, bool fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { data_[r * cols_ + c] = v ? 1 : 0; }
  std::span<const char> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<char> data_;
};

// bidirectional: S×S all true. causal: T×T lower triangular (src_len is
// ignored beyond validation). prefix_lm: (S+T)×(S+T), source rows see the
// source only, target row i sees the source and targets ≤ i.
AttentionMask build_attention_mask(MaskMode mode, std::size_t src_len, std::size_t tgt_len);

template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  void add(std::string name, Tensor<T> t) { tensors_.insert_or_assign(std::move(name), std::move(t)); }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;

  std::size_t parameter_count() const;
  std::size_t tensor_count() const { return tensors_.size(); }
  ParamStore zeros_like() const;
  void zero();
  void add_scaled(const ParamStore& other, T scale);

  // Flat views used by the gradient checker.
  std::vector<T> flatten() const;
  void unflatten(std::span<const T> values);

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [k, v] : tensors_) out.add(k, v.template cast<U>());
    return out;
  }

  typename Map::iterator begin() { return tensors_.begin(); }
  typename Map::iterator end() { return tensors_.end(); }
  typename Map::const_iterator begin() const { return tensors_.begin(); }
  typename Map::const_iterator end() const { return tensors_.end(); }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  Map tensors_;
};

using NamedShape = std::pair<std::string, Shape>;

// Every tensor a model with this configuration allocates, in a fixed order.
std::vector<NamedShape> parameter_shapes(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);

// Truncated normal (σ = 0.02, cut at 2σ) for matrices and embeddings,
// zeros for biases and CRF scores, unit gain for layer norms.
template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, Rng& rng);

template <typename T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;
};

// Hidden-unit dropout. Rate 0 (or no rng) disables it.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;
  bool active() const { return rate > 0.0 && rng != nullptr; }
};

template <typename T>
struct AttentionCache {
  Tensor<T> xq, xkv, q, k, v, ctx;
  Tensor<T> probs;  // (heads·Lq) × Lk
  const AttentionMask* mask = nullptr;
};

template <typename T>
struct LayerCache {
  AttentionCache<T> self;
  Tensor<T> self_drop;
  LayerNormCache<T> self_ln;
  bool has_cross = false;
  AttentionCache<T> cross;
  Tensor<T> cross_drop;
  LayerNormCache<T> cross_ln;
  Tensor<T> ffn_in, ffn_pre, ffn_act;
  Tensor<T> ffn_drop;
  LayerNormCache<T> ffn_ln;
};

template <typename T>
struct StackCache {
  std::vector<int> ids, segments;
  std::size_t position_offset = 0;
  LayerNormCache<T> emb_ln;
  Tensor<T> emb_drop;
  std::vector<LayerCache<T>> layers;
};

struct StackInput {
  std::span<const int> ids;
  std::span<const int> segments;  // empty ⇒ all segment 0
  std::size_t position_offset = 0;
};

// One transformer stack (post-layernorm). With `memory`, every layer runs
// self-attention then cross-attention over memory rows. `prefix` is the
// parameter namespace ("enc" or "dec").
template <typename T>
Tensor<T> stack_forward(const ParamStore<T>& p, const std::string& prefix, int layers, int heads, StackInput in,
                        const AttentionMask& mask, const std::type_identity_t<Tensor<T>>* memory, std::type_identity_t<StackCache<T>>* cache,
                        Dropout dropout = {});

// Accumulates parameter gradients into `grads`; adds memory gradients to
// `d_memory` when the stack used cross-attention.
template <typename T>
void stack_backward(const ParamStore<T>& p, ParamStore<T>& grads, const std::string& prefix, int heads,
                    const StackCache<T>& cache, Tensor<T> d_hidden, std::type_identity_t<Tensor<T>>* d_memory);

template <typename T>
struct LmHeadCache {
  Tensor<T> hidden, dense_pre;
  LayerNormCache<T> ln;
  Tensor<T> transformed;
};

// Dense + GELU + layernorm transform, then logits against the tied token
// embedding matrix plus an output bias.
template <typename T>
Tensor<T> lm_head_forward(const ParamStore<T>& p, const std::string& prefix, const Tensor<T>& hidden,
                          std::type_identity_t<LmHeadCache<T>>* cache);
template <typename T>
Tensor<T> lm_head_backward(const ParamStore<T>& p, ParamStore<T>& grads, const std::string& prefix,
                           const LmHeadCache<T>& cache, const Tensor<T>& d_logits);

template <typename T>
struct ForwardResult {
  Tensor<T> hidden;
  Tensor<T> logits;  // L×V (LM regimes), L×3 (labeling), empty for a bare encoder
};

// Single-stack models run "enc" with `mask`. For seq2seq, `memory` selects
// the decoder ("dec" stack + LM head); without it the encoder runs and no
// logits are produced.
template <typename T>
ForwardResult<T> transformer_forward(const Model<T>& model, StackInput in, const AttentionMask& mask,
                                     const Tensor<T>* memory = nullptr);

// Row-wise greedy decoding helper: runs the seq2seq decoder one token at a
// time, caching self-attention keys/values and the cross-attention
// projections of the encoder memory.
template <typename T>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const Model<T>& model, Tensor<T> memory);
  std::vector<T> step(int token);
  std::size_t position() const { return position_; }

 private:
  struct LayerState {
    Tensor<T> self_k, self_v, cross_k, cross_v;
  };
  const Model<T>& model_;
  Tensor<T> memory_;
  std::vector<LayerState> layers_;
  std::size_t position_ = 0;
};

enum class InitMode { pretrained, random };

// Builds seq2seq parameters. A pretrained side copies embeddings, the first
// k layers and (for the decoder) the LM head from `checkpoint`, a
// single-stack model under "enc". Cross-attention is always fresh.
Model<float> compose_seq2seq(InitMode enc_init, InitMode dec_init, int enc_layers, int dec_layers,
                             const ModelConfig& dims, const Model<float>* checkpoint, Rng& rng);

// Copies every tensor of `source` whose name and shape match into `target`.
template <typename T>
std::size_t copy_matching(const ParamStore<T>& source, ParamStore<T>& target);

}  // namespace kpg
