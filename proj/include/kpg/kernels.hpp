#pragma once

#include <cstddef>
#include <span>
#include <type_traits>
#include <vector>

#include "kpg/tensor.hpp"

namespace kpg {

// Dense kernels. Every output element is accumulated in a fixed index order
// that does not depend on the number of rows, so computing one row alone
// gives the same bits as computing it inside a larger batch.

// y = x W (+ b).  x: n×in, W: in×out, b: out.
template <typename T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w);
template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// acc += aᵀ b.  a: n×p, b: n×q, acc: p×q.
template <typename T>
void accumulate_at_b(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& acc);

// a bᵀ.  a: n×p, b: m×p → n×m.
template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b);

// acc[j] += Σ_i rows[i][j]
template <typename T>
void accumulate_column_sums(const Tensor<T>& rows, Tensor<T>& acc);

template <typename T>
T dot(std::span<const T> a, std::span<const T> b);

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

// Max-subtracted softmax. Throws NumericError on non-finite input.
template <typename T>
std::vector<T> softmax(std::span<const T> v);

template <typename T>
T logsumexp(std::span<const T> v);

// −log softmax(logits)[target]
template <typename T>
T cross_entropy(std::span<const T> logits, std::size_t target);

// Writes d/dlogits of cross_entropy scaled by `scale` into grad (overwrites).
template <typename T>
T cross_entropy_with_grad(std::span<const T> logits, std::size_t target, T scale, std::span<T> grad);

// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy);

inline constexpr double kLayerNormEps = 1e-12;

template <typename T>
struct LayerNormCache {
  Tensor<T> normalized;          // (x − μ)/σ per row
  std::vector<T> inv_std;        // 1/σ per row
};

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, std::type_identity_t<LayerNormCache<T>>* cache);

template <typename T>
Tensor<T> layernorm_backward(const LayerNormCache<T>& cache, const Tensor<T>& gain, const Tensor<T>& dy,
                             Tensor<T>& dgain, Tensor<T>& dbias);

}  // namespace kpg
