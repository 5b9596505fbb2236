#include "kpg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace kpg {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

template <typename T>
void axpy(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += a * x[j];
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w) {
  require(x.rank() == 2 && w.rank() == 2 && x.cols() == w.rows(),
          "matmul: shapes " + shape_string(x.shape()) + " x " + shape_string(w.shape()));
  const std::size_t n = x.rows(), in = x.cols(), out = w.cols();
  Tensor<T> y({n, out});
  for (std::size_t i = 0; i < n; ++i) {
    T* yr = y.data() + i * out;
    const T* xr = x.data() + i * in;
    for (std::size_t p = 0; p < in; ++p) axpy(xr[p], w.data() + p * out, yr, out);
  }
  return y;
}

template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require(b.size() == w.cols(), "affine: bias width mismatch");
  const std::size_t n = x.rows(), in = x.cols(), out = w.cols();
  require(x.rank() == 2 && w.rank() == 2 && in == w.rows(),
          "affine: shapes " + shape_string(x.shape()) + " x " + shape_string(w.shape()));
  Tensor<T> y({n, out});
  for (std::size_t i = 0; i < n; ++i) {
    T* yr = y.data() + i * out;
    const T* xr = x.data() + i * in;
    for (std::size_t p = 0; p < in; ++p) axpy(xr[p], w.data() + p * out, yr, out);
    for (std::size_t j = 0; j < out; ++j) yr[j] += b[j];
  }
  return y;
}

template <typename T>
void accumulate_at_b(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& acc) {
  require(a.rows() == b.rows() && acc.rows() == a.cols() && acc.cols() == b.cols(), "accumulate_at_b: shape mismatch");
  const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const T* ar = a.data() + i * p;
    const T* br = b.data() + i * q;
    for (std::size_t r = 0; r < p; ++r) axpy(ar[r], br, acc.data() + r * q, q);
  }
}

template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.cols() == b.cols(), "matmul_bt: inner dimension mismatch");
  const std::size_t n = a.rows(), p = a.cols(), m = b.rows();
  // Transpose b once so the inner loop is a contiguous axpy.
  Tensor<T> bt({p, m});
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t r = 0; r < p; ++r) bt(r, j) = b(j, r);
  Tensor<T> y({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    T* yr = y.data() + i * m;
    const T* ar = a.data() + i * p;
    for (std::size_t r = 0; r < p; ++r) axpy(ar[r], bt.data() + r * m, yr, m);
  }
  return y;
}

template <typename T>
void accumulate_column_sums(const Tensor<T>& rows, Tensor<T>& acc) {
  const std::size_t n = rows.rows(), c = rows.cols();
  require(acc.size() == c, "accumulate_column_sums: width mismatch");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) acc[j] += rows(i, j);
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  const std::size_t n = a.size();
  T s0{0}, s1{0}, s2{0}, s3{0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require(a.size() == b.size(), "add_inplace: size mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
std::vector<T> softmax(std::span<const T> v) {
  require(!v.empty(), "softmax: empty input");
  T mx = -std::numeric_limits<T>::infinity();
  for (T x : v) {
    if (!std::isfinite(x)) throw NumericError("softmax: non-finite input");
    mx = std::max(mx, x);
  }
  std::vector<T> out(v.size());
  T sum{0};
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (T& o : out) o /= sum;
  return out;
}

template <typename T>
T logsumexp(std::span<const T> v) {
  require(!v.empty(), "logsumexp: empty input");
  T mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  T sum{0};
  for (T x : v) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

template <typename T>
T cross_entropy(std::span<const T> logits, std::size_t target) {
  require(target < logits.size(), "cross_entropy: target out of range");
  for (T x : logits)
    if (!std::isfinite(x)) throw NumericError("cross_entropy: non-finite logit");
  return logsumexp(logits) - logits[target];
}

template <typename T>
T cross_entropy_with_grad(std::span<const T> logits, std::size_t target, T scale, std::span<T> grad) {
  require(grad.size() == logits.size(), "cross_entropy_with_grad: grad size mismatch");
  require(target < logits.size(), "cross_entropy: target out of range");
  auto p = softmax(logits);
  for (std::size_t i = 0; i < p.size(); ++i) grad[i] = scale * p[i];
  grad[target] -= scale;
  return cross_entropy(logits, target);
}

namespace {

template <typename T>
T normal_cdf(T x) {
  return T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T normal_pdf(T x) {
  return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(M_PI));
}

}  // namespace

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * normal_cdf(x[i]);
  return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * (normal_cdf(x[i]) + x[i] * normal_pdf(x[i]));
  return dx;
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, std::type_identity_t<LayerNormCache<T>>* cache) {
  const std::size_t n = x.rows(), h = x.cols();
  require(gain.size() == h && bias.size() == h, "layernorm: parameter width mismatch");
  Tensor<T> y(x.shape());
  if (cache) {
    cache->normalized = Tensor<T>(x.shape());
    cache->inv_std.assign(n, T{0});
  }
  for (std::size_t i = 0; i < n; ++i) {
    const T* xr = x.data() + i * h;
    T mean{0};
    for (std::size_t j = 0; j < h; ++j) mean += xr[j];
    mean /= T(h);
    T var{0};
    for (std::size_t j = 0; j < h; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(h);
    const T inv = T(1) / std::sqrt(var + T(kLayerNormEps));
    for (std::size_t j = 0; j < h; ++j) {
      const T nx = (xr[j] - mean) * inv;
      y(i, j) = nx * gain[j] + bias[j];
      if (cache) cache->normalized(i, j) = nx;
    }
    if (cache) cache->inv_std[i] = inv;
  }
  return y;
}

template <typename T>
Tensor<T> layernorm_backward(const LayerNormCache<T>& cache, const Tensor<T>& gain, const Tensor<T>& dy,
                             Tensor<T>& dgain, Tensor<T>& dbias) {
  const std::size_t n = dy.rows(), h = dy.cols();
  Tensor<T> dx(dy.shape());
  std::vector<T> dn(h);
  for (std::size_t i = 0; i < n; ++i) {
    T sum_dn{0}, sum_dn_n{0};
    for (std::size_t j = 0; j < h; ++j) {
      const T nx = cache.normalized(i, j);
      dgain[j] += dy(i, j) * nx;
      dbias[j] += dy(i, j);
      dn[j] = dy(i, j) * gain[j];
      sum_dn += dn[j];
      sum_dn_n += dn[j] * nx;
    }
    const T inv = cache.inv_std[i];
    for (std::size_t j = 0; j < h; ++j)
      dx(i, j) = inv * (dn[j] - sum_dn / T(h) - cache.normalized(i, j) * sum_dn_n / T(h));
  }
  return dx;
}

#define KPG_INSTANTIATE(T)                                                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                 \
  template void accumulate_at_b(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                                   \
  template Tensor<T> matmul_bt(const Tensor<T>&, const Tensor<T>&);                                                \
  template void accumulate_column_sums(const Tensor<T>&, Tensor<T>&);                                              \
  template T dot(std::span<const T>, std::span<const T>);                                                          \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);                                                         \
  template std::vector<T> softmax(std::span<const T>);                                                             \
  template T logsumexp(std::span<const T>);                                                                        \
  template T cross_entropy(std::span<const T>, std::size_t);                                                       \
  template T cross_entropy_with_grad(std::span<const T>, std::size_t, T, std::span<T>);                            \
  template Tensor<T> gelu(const Tensor<T>&);                                                                       \
  template Tensor<T> gelu_backward(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, LayerNormCache<T>*);          \
  template Tensor<T> layernorm_backward(const LayerNormCache<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, \
                                        Tensor<T>&);

KPG_INSTANTIATE(float)
KPG_INSTANTIATE(double)

}  // namespace kpg
