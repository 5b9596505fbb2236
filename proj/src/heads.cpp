#include "kpg/heads.hpp"

#include <cmath>
#include <limits>

namespace kpg {

char label_char(Label l) {
  switch (l) {
    case Label::B: return 'B';
    case Label::I: return 'I';
    case Label::O: return 'O';
  }
  return '?';
}

std::string labels_to_string(const LabelSequence& labels) {
  std::string s;
  for (auto l : labels) s.push_back(label_char(l));
  return s;
}

LabelSequence labels_from_string(std::string_view s) {
  LabelSequence out;
  for (char c : s) {
    if (c == 'B') out.push_back(Label::B);
    else if (c == 'I') out.push_back(Label::I);
    else if (c == 'O') out.push_back(Label::O);
    else throw ContractError(std::string("unknown label character '") + c + "'");
  }
  return out;
}

template <typename T>
CrfParams<T> CrfParams<T>::from_store(const ParamStore<T>& p) {
  CrfParams c;
  const auto& tr = p.at("crf.trans");
  const auto& st = p.at("crf.start");
  const auto& en = p.at("crf.end");
  for (std::size_t i = 0; i < kNumLabels; ++i) {
    c.start[i] = st[i];
    c.end[i] = en[i];
    for (std::size_t j = 0; j < kNumLabels; ++j) c.transition[i][j] = tr(i, j);
  }
  return c;
}

template <typename T>
void CrfParams<T>::add_to_store(ParamStore<T>& grads) const {
  auto& tr = grads.at("crf.trans");
  auto& st = grads.at("crf.start");
  auto& en = grads.at("crf.end");
  for (std::size_t i = 0; i < kNumLabels; ++i) {
    st[i] += start[i];
    en[i] += end[i];
    for (std::size_t j = 0; j < kNumLabels; ++j) tr(i, j) += transition[i][j];
  }
}

template <typename T>
Tensor<T> bio_label_logits(const Tensor<T>& hidden, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(weight.rank() == 2 && weight.cols() == kNumLabels && weight.rows() == hidden.cols(),
          "bio_label_logits: weight must be h×3");
  return affine(hidden, weight, bias);
}

namespace {

template <typename T>
void check_emissions(const Tensor<T>& e) {
  require(e.rank() == 2 && e.cols() == kNumLabels, "crf: emissions must be L×3");
  require(e.rows() >= 1, "crf: sequence length must be >= 1");
}

template <typename T>
T lse3(T a, T b, T c) {
  const T m = std::max({a, b, c});
  return m + std::log(std::exp(a - m) + std::exp(b - m) + std::exp(c - m));
}

// alpha[t][j] = log Σ over prefixes ending in j at t
template <typename T>
std::vector<std::array<T, kNumLabels>> forward_scores(const Tensor<T>& e, const CrfParams<T>& crf) {
  const std::size_t n = e.rows();
  std::vector<std::array<T, kNumLabels>> alpha(n);
  for (std::size_t j = 0; j < kNumLabels; ++j) alpha[0][j] = crf.start[j] + e(0, j);
  for (std::size_t t = 1; t < n; ++t)
    for (std::size_t j = 0; j < kNumLabels; ++j)
      alpha[t][j] = lse3(alpha[t - 1][0] + crf.transition[0][j], alpha[t - 1][1] + crf.transition[1][j],
                         alpha[t - 1][2] + crf.transition[2][j]) +
                    e(t, j);
  return alpha;
}

template <typename T>
std::vector<std::array<T, kNumLabels>> backward_scores(const Tensor<T>& e, const CrfParams<T>& crf) {
  const std::size_t n = e.rows();
  std::vector<std::array<T, kNumLabels>> beta(n);
  for (std::size_t i = 0; i < kNumLabels; ++i) beta[n - 1][i] = crf.end[i];
  for (std::size_t t = n - 1; t-- > 0;)
    for (std::size_t i = 0; i < kNumLabels; ++i)
      beta[t][i] = lse3(crf.transition[i][0] + e(t + 1, 0) + beta[t + 1][0],
                        crf.transition[i][1] + e(t + 1, 1) + beta[t + 1][1],
                        crf.transition[i][2] + e(t + 1, 2) + beta[t + 1][2]);
  return beta;
}

}  // namespace

template <typename T>
T crf_sequence_score(const Tensor<T>& e, const LabelSequence& labels, const CrfParams<T>& crf) {
  check_emissions(e);
  require(labels.size() == e.rows(), "crf: label count does not match emissions");
  auto idx = [&](std::size_t t) { return std::size_t(labels[t]); };
  T s = crf.start[idx(0)] + e(0, idx(0));
  for (std::size_t t = 1; t < labels.size(); ++t) s += crf.transition[idx(t - 1)][idx(t)] + e(t, idx(t));
  return s + crf.end[idx(labels.size() - 1)];
}

template <typename T>
T crf_log_partition(const Tensor<T>& e, const CrfParams<T>& crf) {
  check_emissions(e);
  const auto alpha = forward_scores(e, crf);
  const auto& last = alpha.back();
  const T z = lse3(last[0] + crf.end[0], last[1] + crf.end[1], last[2] + crf.end[2]);
  if (!std::isfinite(z)) throw NumericError("crf: non-finite log partition");
  return z;
}

template <typename T>
T crf_nll(const Tensor<T>& e, const LabelSequence& gold, const CrfParams<T>& crf) {
  const T nll = crf_log_partition(e, crf) - crf_sequence_score(e, gold, crf);
  return std::max(nll, T{0});
}

template <typename T>
T crf_nll_with_grad(const Tensor<T>& e, const LabelSequence& gold, const CrfParams<T>& crf, T scale,
                    Tensor<T>& d_e, CrfParams<T>& d_crf) {
  check_emissions(e);
  require(gold.size() == e.rows(), "crf: label count does not match emissions");
  require(d_e.shape() == e.shape(), "crf: gradient buffer shape mismatch");
  const std::size_t n = e.rows();
  const auto alpha = forward_scores(e, crf);
  const auto beta = backward_scores(e, crf);
  const auto& last = alpha.back();
  const T log_z = lse3(last[0] + crf.end[0], last[1] + crf.end[1], last[2] + crf.end[2]);
  if (!std::isfinite(log_z)) throw NumericError("crf: non-finite log partition");

  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < kNumLabels; ++j) {
      const T marginal = std::exp(alpha[t][j] + beta[t][j] - log_z);
      d_e(t, j) += scale * marginal;
      if (t == 0) d_crf.start[j] += scale * marginal;
      if (t == n - 1) d_crf.end[j] += scale * marginal;
    }
  for (std::size_t t = 1; t < n; ++t)
    for (std::size_t i = 0; i < kNumLabels; ++i)
      for (std::size_t j = 0; j < kNumLabels; ++j)
        d_crf.transition[i][j] +=
            scale * std::exp(alpha[t - 1][i] + crf.transition[i][j] + e(t, j) + beta[t][j] - log_z);

  auto g = [&](std::size_t t) { return std::size_t(gold[t]); };
  d_crf.start[g(0)] -= scale;
  d_crf.end[g(n - 1)] -= scale;
  for (std::size_t t = 0; t < n; ++t) {
    d_e(t, g(t)) -= scale;
    if (t > 0) d_crf.transition[g(t - 1)][g(t)] -= scale;
  }
  return std::max(log_z - crf_sequence_score(e, gold, crf), T{0});
}

template <typename T>
LabelSequence viterbi_decode(const Tensor<T>& e, const CrfParams<T>& crf) {
  check_emissions(e);
  const std::size_t n = e.rows();
  std::array<T, kNumLabels> score{};
  for (std::size_t j = 0; j < kNumLabels; ++j) score[j] = crf.start[j] + e(0, j);
  std::vector<std::array<std::uint8_t, kNumLabels>> back(n);
  for (std::size_t t = 1; t < n; ++t) {
    std::array<T, kNumLabels> next{};
    for (std::size_t j = 0; j < kNumLabels; ++j) {
      std::size_t best = 0;
      T best_score = score[0] + crf.transition[0][j];
      for (std::size_t i = 1; i < kNumLabels; ++i) {
        const T s = score[i] + crf.transition[i][j];
        if (s > best_score) {
          best_score = s;
          best = i;
        }
      }
      next[j] = best_score + e(t, j);
      back[t][j] = std::uint8_t(best);
    }
    score = next;
  }
  std::size_t state = 0;
  T best_final = score[0] + crf.end[0];
  for (std::size_t j = 1; j < kNumLabels; ++j) {
    if (score[j] + crf.end[j] > best_final) {
      best_final = score[j] + crf.end[j];
      state = j;
    }
  }
  LabelSequence out(n);
  for (std::size_t t = n; t-- > 0;) {
    out[t] = Label(state);
    if (t > 0) state = back[t][state];
  }
  return out;
}

template <typename T>
LabelSequence argmax_labels(const Tensor<T>& logits) {
  require(logits.cols() == kNumLabels, "argmax_labels: expected L×3 logits");
  LabelSequence out(logits.rows());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < kNumLabels; ++j)
      if (logits(t, j) > logits(t, best)) best = j;
    out[t] = Label(best);
  }
  return out;
}

#define KPG_HEADS_INSTANTIATE(T)                                                                               \
  template struct CrfParams<T>;                                                                                \
  template Tensor<T> bio_label_logits(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template T crf_sequence_score(const Tensor<T>&, const LabelSequence&, const CrfParams<T>&);                  \
  template T crf_log_partition(const Tensor<T>&, const CrfParams<T>&);                                         \
  template T crf_nll(const Tensor<T>&, const LabelSequence&, const CrfParams<T>&);                             \
  template T crf_nll_with_grad(const Tensor<T>&, const LabelSequence&, const CrfParams<T>&, T, Tensor<T>&,     \
                               CrfParams<T>&);                                                                 \
  template LabelSequence viterbi_decode(const Tensor<T>&, const CrfParams<T>&);                                \
  template LabelSequence argmax_labels(const Tensor<T>&);

KPG_HEADS_INSTANTIATE(float)
KPG_HEADS_INSTANTIATE(double)

}  // namespace kpg
