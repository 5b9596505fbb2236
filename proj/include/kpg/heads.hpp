#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kpg/model.hpp"
#include "kpg/tensor.hpp"

namespace kpg {

enum class Label : std::uint8_t { B = 0, I = 1, O = 2 };
inline constexpr std::size_t kNumLabels = 3;

using LabelSequence = std::vector<Label>;

char label_char(Label l);
std::string labels_to_string(const LabelSequence& labels);  // e.g. "BIOO"
LabelSequence labels_from_string(std::string_view s);

template <typename T>
struct CrfParams {
  std::array<std::array<T, kNumLabels>, kNumLabels> transition{};  // [from][to]
  std::array<T, kNumLabels> start{};
  std::array<T, kNumLabels> end{};

  static CrfParams from_store(const ParamStore<T>& p);
  void add_to_store(ParamStore<T>& grads) const;  // accumulates into crf.* tensors
};

// Per-token affine projection to B/I/O logits: L×h → L×3.
template <typename T>
Tensor<T> bio_label_logits(const Tensor<T>& hidden, const Tensor<T>& weight, const Tensor<T>& bias);

// start[c₁] + Σ emissions[i][cᵢ] + Σ transition[cᵢ₋₁][cᵢ] + end[c_L]
template <typename T>
T crf_sequence_score(const Tensor<T>& emissions, const LabelSequence& labels, const CrfParams<T>& crf);

// log Σ_c exp(score(c)) by the forward recursion.
template <typename T>
T crf_log_partition(const Tensor<T>& emissions, const CrfParams<T>& crf);

template <typename T>
T crf_nll(const Tensor<T>& emissions, const LabelSequence& gold, const CrfParams<T>& crf);

// NLL plus its gradient (forward-backward marginals minus gold counts).
// Gradients are scaled by `scale` and accumulated.
template <typename T>
T crf_nll_with_grad(const Tensor<T>& emissions, const LabelSequence& gold, const CrfParams<T>& crf, T scale,
                    Tensor<T>& d_emissions, CrfParams<T>& d_crf);

// Max-score labels; every backpointer and the final state prefer the lowest
// label index on ties (B < I < O).
template <typename T>
LabelSequence viterbi_decode(const Tensor<T>& emissions, const CrfParams<T>& crf);

// Per-token argmax without transitions (ties → lowest index).
template <typename T>
LabelSequence argmax_labels(const Tensor<T>& logits);

}  // namespace kpg
