#include "kpg/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace kpg {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::labeling: return "labeling";
    case Regime::prefix_lm: return "prefix_lm";
    case Regime::seq2seq: return "seq2seq";
  }
  return "?";
}

Regime parse_regime(std::string_view name) {
  if (name == "labeling") return Regime::labeling;
  if (name == "prefix_lm" || name == "prefix-lm") return Regime::prefix_lm;
  if (name == "seq2seq") return Regime::seq2seq;
  throw ContractError("unknown regime '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  require(hidden > 0 && heads > 0 && hidden % heads == 0, "model config: hidden must be divisible by heads");
  require(enc_layers >= 1, "model config: enc_layers must be >= 1");
  require((dec_layers >= 1) == (regime == Regime::seq2seq), "model config: dec_layers >= 1 iff regime is seq2seq");
  require(ffn_size > 0 && max_positions > 0 && vocab_size > 0, "model config: sizes must be positive");
  require(!crf || regime == Regime::labeling, "model config: crf applies to the labeling regime only");
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "enc_layers=" << enc_layers << '\n'
     << "dec_layers=" << dec_layers << '\n'
     << "hidden=" << hidden << '\n'
     << "heads=" << heads << '\n'
     << "ffn_size=" << ffn_size << '\n'
     << "max_positions=" << max_positions << '\n'
     << "vocab_size=" << vocab_size << '\n'
     << "regime=" << to_string(regime) << '\n'
     << "crf=" << (crf ? 1 : 0) << '\n';
  return os.str();
}

ModelConfig ModelConfig::deserialize(std::string_view text) {
  ModelConfig cfg;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "model config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "enc_layers") cfg.enc_layers = std::stoi(value);
    else if (key == "dec_layers") cfg.dec_layers = std::stoi(value);
    else if (key == "hidden") cfg.hidden = std::stoi(value);
    else if (key == "heads") cfg.heads = std::stoi(value);
    else if (key == "ffn_size") cfg.ffn_size = std::stoi(value);
    else if (key == "max_positions") cfg.max_positions = std::stoi(value);
    else if (key == "vocab_size") cfg.vocab_size = std::stoi(value);
    else if (key == "regime") cfg.regime = parse_regime(value);
    else if (key == "crf") cfg.crf = value == "1";
    else throw ContractError("model config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

ModelConfig bert_base_seq2seq(int enc_layers, int dec_layers) {
  ModelConfig cfg;
  cfg.enc_layers = enc_layers;
  cfg.dec_layers = dec_layers;
  cfg.hidden = 768;
  cfg.heads = 12;
  cfg.ffn_size = 3072;
  cfg.max_positions = 512;
  cfg.vocab_size = 30522;
  cfg.regime = Regime::seq2seq;
  return cfg;
}

AttentionMask build_attention_mask(MaskMode mode, std::size_t src_len, std::size_t tgt_len) {
  switch (mode) {
    case MaskMode::bidirectional:
      require(src_len >= 1, "attention mask: source length must be >= 1");
      return AttentionMask(src_len, src_len, true);
    case MaskMode::causal: {
      require(tgt_len >= 1, "attention mask: causal mask needs tgt_len >= 1");
      AttentionMask m(tgt_len, tgt_len, false);
      for (std::size_t i = 0; i < tgt_len; ++i)
        for (std::size_t j = 0; j <= i; ++j) m.set(i, j, true);
      return m;
    }
    case MaskMode::prefix_lm: {
      require(src_len >= 1 && tgt_len >= 1, "attention mask: prefix-LM needs S >= 1 and T >= 1");
      const std::size_t n = src_len + tgt_len;
      AttentionMask m(n, n, false);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < src_len; ++j) m.set(i, j, true);
        if (i >= src_len)
          for (std::size_t j = src_len; j <= i; ++j) m.set(i, j, true);
      }
      return m;
    }
  }
  throw ContractError("attention mask: unknown mode");
}

// ---------------------------------------------------------------------------
// ParamStore

template <typename T>
Tensor<T>& ParamStore<T>::at(const std::string& name) {
  auto it = tensors_.find(name);
  require(it != tensors_.end(), "parameter '" + name + "' not found");
  return it->second;
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = tensors_.find(name);
  require(it != tensors_.end(), "parameter '" + name + "' not found");
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : tensors_) n += v.size();
  return n;
}

template <typename T>
ParamStore<T> ParamStore<T>::zeros_like() const {
  ParamStore out;
  for (const auto& [k, v] : tensors_) out.add(k, Tensor<T>(v.shape()));
  return out;
}

template <typename T>
void ParamStore<T>::zero() {
  for (auto& [k, v] : tensors_) v.fill(T{0});
}

template <typename T>
void ParamStore<T>::add_scaled(const ParamStore& other, T scale) {
  for (auto& [k, v] : tensors_) {
    const auto& o = other.at(k);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += scale * o[i];
  }
}

template <typename T>
std::vector<T> ParamStore<T>::flatten() const {
  std::vector<T> out;
  out.reserve(parameter_count());
  for (const auto& [k, v] : tensors_) out.insert(out.end(), v.storage().begin(), v.storage().end());
  return out;
}

template <typename T>
void ParamStore<T>::unflatten(std::span<const T> values) {
  require(values.size() == parameter_count(), "unflatten: size mismatch");
  std::size_t off = 0;
  for (auto& [k, v] : tensors_) {
    std::copy(values.begin() + std::ptrdiff_t(off), values.begin() + std::ptrdiff_t(off + v.size()), v.data());
    off += v.size();
  }
}

template class ParamStore<float>;
template class ParamStore<double>;

// ---------------------------------------------------------------------------
// Shapes and initialization

namespace {

std::string layer_prefix(const std::string& prefix, int layer) { return prefix + ".L" + std::to_string(layer); }

void attention_shapes(std::vector<NamedShape>& out, const std::string& p, std::size_t h) {
  for (const char* m : {"q", "k", "v", "o"}) {
    out.push_back({p + "." + m + ".w", {h, h}});
    out.push_back({p + "." + m + ".b", {h}});
  }
  out.push_back({p + ".ln.g", {h}});
  out.push_back({p + ".ln.b", {h}});
}

void stack_shapes(std::vector<NamedShape>& out, const std::string& prefix, int layers, bool cross,
                  const ModelConfig& cfg) {
  const auto h = std::size_t(cfg.hidden), f = std::size_t(cfg.ffn_size);
  out.push_back({prefix + ".emb.tok", {std::size_t(cfg.vocab_size), h}});
  out.push_back({prefix + ".emb.pos", {std::size_t(cfg.max_positions), h}});
  out.push_back({prefix + ".emb.seg", {2, h}});
  out.push_back({prefix + ".emb.ln.g", {h}});
  out.push_back({prefix + ".emb.ln.b", {h}});
  for (int l = 0; l < layers; ++l) {
    const auto lp = layer_prefix(prefix, l);
    attention_shapes(out, lp + ".self", h);
    if (cross) attention_shapes(out, lp + ".cross", h);
    out.push_back({lp + ".ffn.in.w", {h, f}});
    out.push_back({lp + ".ffn.in.b", {f}});
    out.push_back({lp + ".ffn.out.w", {f, h}});
    out.push_back({lp + ".ffn.out.b", {h}});
    out.push_back({lp + ".ffn.ln.g", {h}});
    out.push_back({lp + ".ffn.ln.b", {h}});
  }
}

void lm_head_shapes(std::vector<NamedShape>& out, const std::string& prefix, const ModelConfig& cfg) {
  const auto h = std::size_t(cfg.hidden);
  out.push_back({prefix + ".lm.dense.w", {h, h}});
  out.push_back({prefix + ".lm.dense.b", {h}});
  out.push_back({prefix + ".lm.ln.g", {h}});
  out.push_back({prefix + ".lm.ln.b", {h}});
  out.push_back({prefix + ".lm.bias", {std::size_t(cfg.vocab_size)}});
}

bool ends_with(const std::string& s, std::string_view suffix) { return s.ends_with(suffix); }

template <typename T>
T truncated_normal(Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (;;) {
    const double x = dist(rng);
    if (std::abs(x) <= 2.0 * stddev) return T(x);
  }
}

template <typename T>
Tensor<T> init_tensor(const std::string& name, const Shape& shape, Rng& rng) {
  Tensor<T> t(shape);
  if (ends_with(name, ".ln.g")) {
    t.fill(T{1});
  } else if (ends_with(name, ".b") || ends_with(name, ".bias") || name.starts_with("crf.")) {
    // zeros
  } else {
    for (auto& v : t.values()) v = truncated_normal<T>(rng, 0.02);
  }
  return t;
}

}  // namespace

std::vector<NamedShape> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<NamedShape> out;
  stack_shapes(out, "enc", cfg.enc_layers, false, cfg);
  switch (cfg.regime) {
    case Regime::labeling:
      out.push_back({"bio.w", {std::size_t(cfg.hidden), 3}});
      out.push_back({"bio.b", {3}});
      if (cfg.crf) {
        out.push_back({"crf.trans", {3, 3}});
        out.push_back({"crf.start", {3}});
        out.push_back({"crf.end", {3}});
      }
      break;
    case Regime::prefix_lm:
      lm_head_shapes(out, "enc", cfg);
      break;
    case Regime::seq2seq:
      stack_shapes(out, "dec", cfg.dec_layers, true, cfg);
      lm_head_shapes(out, "dec", cfg);
      break;
  }
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_shapes(cfg)) n += shape_size(shape);
  return n;
}

template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, Rng& rng) {
  ParamStore<T> p;
  for (const auto& [name, shape] : parameter_shapes(cfg)) p.add(name, init_tensor<T>(name, shape, rng));
  return p;
}

template ParamStore<float> init_params(const ModelConfig&, Rng&);
template ParamStore<double> init_params(const ModelConfig&, Rng&);

template <typename T>
std::size_t copy_matching(const ParamStore<T>& source, ParamStore<T>& target) {
  std::size_t copied = 0;
  for (auto& [name, t] : target) {
    if (source.contains(name) && source.at(name).shape() == t.shape()) {
      t = source.at(name);
      ++copied;
    }
  }
  return copied;
}

template std::size_t copy_matching(const ParamStore<float>&, ParamStore<float>&);
template std::size_t copy_matching(const ParamStore<double>&, ParamStore<double>&);

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

template <typename T>
Tensor<T> apply_dropout(const Tensor<T>& x, Dropout dropout, Tensor<T>* mask_out) {
  if (!dropout.active()) {
    if (mask_out) *mask_out = Tensor<T>();
    return x;
  }
  std::bernoulli_distribution keep(1.0 - dropout.rate);
  const T scale = T(1.0 / (1.0 - dropout.rate));
  Tensor<T> mask(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = keep(*dropout.rng) ? scale : T{0};
    y[i] = x[i] * mask[i];
  }
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& dy, const Tensor<T>& mask) {
  if (mask.empty()) return dy;
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask[i];
  return dx;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = a;
  add_inplace(out, b);
  return out;
}

// Softmax-weighted sum over the allowed keys of one query row for one head.
// `allowed` empty means every key is visible. Probabilities for hidden keys
// are written as 0. The summation order over keys is ascending and skips
// hidden keys, so the incremental decoder reproduces the batched result.
template <typename T>
void attend_row(std::span<const T> q, const Tensor<T>& k, const Tensor<T>& v, std::size_t offset, std::size_t dh,
                std::span<const char> allowed, T scale, std::span<T> probs, std::span<T> ctx) {
  const std::size_t lk = k.rows();
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < lk; ++j) {
    if (!allowed.empty() && !allowed[j]) {
      probs[j] = T{0};
      continue;
    }
    const T s = dot<T>(q, k.row(j).subspan(offset, dh)) * scale;
    if (!std::isfinite(s)) throw NumericError("attention: non-finite score");
    probs[j] = s;
    mx = std::max(mx, s);
  }
  if (!std::isfinite(mx)) throw ContractError("attention: query row has no visible key");
  T sum{0};
  for (std::size_t j = 0; j < lk; ++j) {
    if (!allowed.empty() && !allowed[j]) continue;
    probs[j] = std::exp(probs[j] - mx);
    sum += probs[j];
  }
  std::fill(ctx.begin(), ctx.end(), T{0});
  for (std::size_t j = 0; j < lk; ++j) {
    if (!allowed.empty() && !allowed[j]) continue;
    probs[j] /= sum;
    const T pj = probs[j];
    const T* vr = v.data() + j * v.cols() + offset;
    for (std::size_t d = 0; d < dh; ++d) ctx[d] += pj * vr[d];
  }
}

template <typename T>
T attention_scale(std::size_t dh) {
  return T(1) / std::sqrt(T(dh));
}

template <typename T>
Tensor<T> attention_forward(const ParamStore<T>& p, const std::string& ap, int heads, const Tensor<T>& xq,
                            const Tensor<T>& xkv, const AttentionMask* mask, AttentionCache<T>* cache) {
  const std::size_t lq = xq.rows(), lk = xkv.rows(), h = xq.cols();
  const std::size_t nh = std::size_t(heads), dh = h / nh;
  if (mask) require(mask->rows() == lq && mask->cols() == lk, "attention: mask shape does not match inputs");
  Tensor<T> q = affine(xq, p.at(ap + ".q.w"), p.at(ap + ".q.b"));
  Tensor<T> k = affine(xkv, p.at(ap + ".k.w"), p.at(ap + ".k.b"));
  Tensor<T> v = affine(xkv, p.at(ap + ".v.w"), p.at(ap + ".v.b"));
  Tensor<T> ctx({lq, h});
  Tensor<T> probs({nh * lq, lk});
  const T scale = attention_scale<T>(dh);
  for (std::size_t hd = 0; hd < nh; ++hd) {
    for (std::size_t i = 0; i < lq; ++i) {
      attend_row<T>(q.row(i).subspan(hd * dh, dh), k, v, hd * dh, dh,
                    mask ? mask->row(i) : std::span<const char>{}, scale, probs.row(hd * lq + i),
                    ctx.row(i).subspan(hd * dh, dh));
    }
  }
  Tensor<T> out = affine(ctx, p.at(ap + ".o.w"), p.at(ap + ".o.b"));
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->ctx = std::move(ctx);
    cache->probs = std::move(probs);
    cache->mask = mask;
  }
  return out;
}

template <typename T>
void linear_backward_params(const Tensor<T>& x, const Tensor<T>& dy, ParamStore<T>& grads, const std::string& name) {
  accumulate_at_b(x, dy, grads.at(name + ".w"));
  accumulate_column_sums(dy, grads.at(name + ".b"));
}

// Returns (d xq, d xkv).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> attention_backward(const ParamStore<T>& p, ParamStore<T>& grads,
                                                   const std::string& ap, int heads, const AttentionCache<T>& c,
                                                   const Tensor<T>& dout) {
  const std::size_t lq = c.xq.rows(), lk = c.xkv.rows(), h = c.xq.cols();
  const std::size_t nh = std::size_t(heads), dh = h / nh;
  const T scale = attention_scale<T>(dh);

  linear_backward_params(c.ctx, dout, grads, ap + ".o");
  Tensor<T> dctx = matmul_bt(dout, p.at(ap + ".o.w"));

  Tensor<T> dq({lq, h}), dk({lk, h}), dv({lk, h});
  std::vector<T> dp(lk);
  for (std::size_t hd = 0; hd < nh; ++hd) {
    const std::size_t off = hd * dh;
    for (std::size_t i = 0; i < lq; ++i) {
      auto pr = c.probs.row(hd * lq + i);
      const T* dc = dctx.data() + i * h + off;
      T weighted{0};
      for (std::size_t j = 0; j < lk; ++j) {
        if (pr[j] == T{0}) {
          dp[j] = T{0};
          continue;
        }
        const T* vr = c.v.data() + j * h + off;
        T s{0};
        for (std::size_t d = 0; d < dh; ++d) s += dc[d] * vr[d];
        dp[j] = s;
        weighted += pr[j] * s;
        T* dvr = dv.data() + j * h + off;
        for (std::size_t d = 0; d < dh; ++d) dvr[d] += pr[j] * dc[d];
      }
      const T* qr = c.q.data() + i * h + off;
      T* dqr = dq.data() + i * h + off;
      for (std::size_t j = 0; j < lk; ++j) {
        if (pr[j] == T{0}) continue;
        const T ds = pr[j] * (dp[j] - weighted) * scale;
        const T* kr = c.k.data() + j * h + off;
        T* dkr = dk.data() + j * h + off;
        for (std::size_t d = 0; d < dh; ++d) {
          dqr[d] += ds * kr[d];
          dkr[d] += ds * qr[d];
        }
      }
    }
  }
  linear_backward_params(c.xq, dq, grads, ap + ".q");
  linear_backward_params(c.xkv, dk, grads, ap + ".k");
  linear_backward_params(c.xkv, dv, grads, ap + ".v");
  Tensor<T> dxq = matmul_bt(dq, p.at(ap + ".q.w"));
  Tensor<T> dxkv = matmul_bt(dk, p.at(ap + ".k.w"));
  add_inplace(dxkv, matmul_bt(dv, p.at(ap + ".v.w")));
  return {std::move(dxq), std::move(dxkv)};
}

// token + position + segment, accumulated in that order.
template <typename T>
void embed_row(const ParamStore<T>& p, const std::string& prefix, int id, std::size_t pos, int seg, std::span<T> out) {
  const auto& tok = p.at(prefix + ".emb.tok");
  const auto& pe = p.at(prefix + ".emb.pos");
  const auto& se = p.at(prefix + ".emb.seg");
  require(id >= 0 && std::size_t(id) < tok.rows(), "embedding: token id " + std::to_string(id) + " out of range");
  require(pos < pe.rows(), "embedding: position " + std::to_string(pos) + " exceeds max_positions");
  require(seg == 0 || seg == 1, "embedding: segment must be 0 or 1");
  auto t = tok.row(std::size_t(id));
  auto ps = pe.row(pos);
  auto sg = se.row(std::size_t(seg));
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = t[j] + ps[j] + sg[j];
}

}  // namespace

template <typename T>
Tensor<T> stack_forward(const ParamStore<T>& p, const std::string& prefix, int layers, int heads, StackInput in,
                        const AttentionMask& mask, const std::type_identity_t<Tensor<T>>* memory, std::type_identity_t<StackCache<T>>* cache, Dropout dropout) {
  const std::size_t n = in.ids.size();
  require(n >= 1, "stack_forward: empty input");
  require(in.segments.empty() || in.segments.size() == n, "stack_forward: segment count mismatch");
  require(mask.rows() == n && mask.cols() == n, "stack_forward: mask is " + std::to_string(mask.rows()) + "x" +
                                                    std::to_string(mask.cols()) + " for " + std::to_string(n) +
                                                    " tokens");
  const std::size_t h = p.at(prefix + ".emb.tok").cols();
  require(in.position_offset + n <= p.at(prefix + ".emb.pos").rows(),
          "stack_forward: sequence of length " + std::to_string(in.position_offset + n) + " exceeds max_positions");

  Tensor<T> x({n, h});
  for (std::size_t i = 0; i < n; ++i)
    embed_row(p, prefix, in.ids[i], in.position_offset + i, in.segments.empty() ? 0 : in.segments[i], x.row(i));

  if (cache) {
    cache->ids.assign(in.ids.begin(), in.ids.end());
    cache->segments.assign(in.segments.begin(), in.segments.end());
    cache->position_offset = in.position_offset;
    cache->layers.assign(std::size_t(layers), LayerCache<T>{});
  }
  x = layernorm(x, p.at(prefix + ".emb.ln.g"), p.at(prefix + ".emb.ln.b"), cache ? &cache->emb_ln : nullptr);
  x = apply_dropout(x, dropout, cache ? &cache->emb_drop : nullptr);

  for (int l = 0; l < layers; ++l) {
    const auto lp = layer_prefix(prefix, l);
    LayerCache<T>* lc = cache ? &cache->layers[std::size_t(l)] : nullptr;

    Tensor<T> a = attention_forward(p, lp + ".self", heads, x, x, &mask, lc ? &lc->self : nullptr);
    a = apply_dropout(a, dropout, lc ? &lc->self_drop : nullptr);
    x = layernorm(add(x, a), p.at(lp + ".self.ln.g"), p.at(lp + ".self.ln.b"), lc ? &lc->self_ln : nullptr);

    if (memory) {
      if (lc) lc->has_cross = true;
      Tensor<T> c = attention_forward(p, lp + ".cross", heads, x, *memory, nullptr, lc ? &lc->cross : nullptr);
      c = apply_dropout(c, dropout, lc ? &lc->cross_drop : nullptr);
      x = layernorm(add(x, c), p.at(lp + ".cross.ln.g"), p.at(lp + ".cross.ln.b"), lc ? &lc->cross_ln : nullptr);
    }

    Tensor<T> pre = affine(x, p.at(lp + ".ffn.in.w"), p.at(lp + ".ffn.in.b"));
    Tensor<T> act = gelu(pre);
    Tensor<T> f = affine(act, p.at(lp + ".ffn.out.w"), p.at(lp + ".ffn.out.b"));
    f = apply_dropout(f, dropout, lc ? &lc->ffn_drop : nullptr);
    Tensor<T> next = layernorm(add(x, f), p.at(lp + ".ffn.ln.g"), p.at(lp + ".ffn.ln.b"), lc ? &lc->ffn_ln : nullptr);
    if (lc) {
      lc->ffn_in = std::move(x);
      lc->ffn_pre = std::move(pre);
      lc->ffn_act = std::move(act);
    }
    x = std::move(next);
  }
  return x;
}

template <typename T>
void stack_backward(const ParamStore<T>& p, ParamStore<T>& grads, const std::string& prefix, int heads,
                    const StackCache<T>& cache, Tensor<T> d, std::type_identity_t<Tensor<T>>* d_memory) {
  for (int l = int(cache.layers.size()) - 1; l >= 0; --l) {
    const auto lp = layer_prefix(prefix, l);
    const LayerCache<T>& lc = cache.layers[std::size_t(l)];

    // FFN sublayer: out = LN(x + drop(W2 gelu(W1 x)))
    Tensor<T> d_sum = layernorm_backward(lc.ffn_ln, p.at(lp + ".ffn.ln.g"), d, grads.at(lp + ".ffn.ln.g"),
                                         grads.at(lp + ".ffn.ln.b"));
    Tensor<T> df = dropout_backward(d_sum, lc.ffn_drop);
    linear_backward_params(lc.ffn_act, df, grads, lp + ".ffn.out");
    Tensor<T> dact = matmul_bt(df, p.at(lp + ".ffn.out.w"));
    Tensor<T> dpre = gelu_backward(lc.ffn_pre, dact);
    linear_backward_params(lc.ffn_in, dpre, grads, lp + ".ffn.in");
    d = std::move(d_sum);
    add_inplace(d, matmul_bt(dpre, p.at(lp + ".ffn.in.w")));

    if (lc.has_cross) {
      Tensor<T> dc_sum = layernorm_backward(lc.cross_ln, p.at(lp + ".cross.ln.g"), d, grads.at(lp + ".cross.ln.g"),
                                            grads.at(lp + ".cross.ln.b"));
      Tensor<T> dc = dropout_backward(dc_sum, lc.cross_drop);
      auto [dxq, dmem] = attention_backward(p, grads, lp + ".cross", heads, lc.cross, dc);
      if (d_memory) add_inplace(*d_memory, dmem);
      d = std::move(dc_sum);
      add_inplace(d, dxq);
    }

    Tensor<T> ds_sum = layernorm_backward(lc.self_ln, p.at(lp + ".self.ln.g"), d, grads.at(lp + ".self.ln.g"),
                                          grads.at(lp + ".self.ln.b"));
    Tensor<T> da = dropout_backward(ds_sum, lc.self_drop);
    auto [dxq, dxkv] = attention_backward(p, grads, lp + ".self", heads, lc.self, da);
    d = std::move(ds_sum);
    add_inplace(d, dxq);
    add_inplace(d, dxkv);
  }

  d = dropout_backward(d, cache.emb_drop);
  Tensor<T> demb = layernorm_backward(cache.emb_ln, p.at(prefix + ".emb.ln.g"), d, grads.at(prefix + ".emb.ln.g"),
                                      grads.at(prefix + ".emb.ln.b"));
  auto& gt = grads.at(prefix + ".emb.tok");
  auto& gp = grads.at(prefix + ".emb.pos");
  auto& gs = grads.at(prefix + ".emb.seg");
  for (std::size_t i = 0; i < cache.ids.size(); ++i) {
    auto row = demb.row(i);
    auto t = gt.row(std::size_t(cache.ids[i]));
    auto ps = gp.row(cache.position_offset + i);
    auto sg = gs.row(std::size_t(cache.segments.empty() ? 0 : cache.segments[i]));
    for (std::size_t j = 0; j < row.size(); ++j) {
      t[j] += row[j];
      ps[j] += row[j];
      sg[j] += row[j];
    }
  }
}

template <typename T>
Tensor<T> lm_head_forward(const ParamStore<T>& p, const std::string& prefix, const Tensor<T>& hidden,
                          std::type_identity_t<LmHeadCache<T>>* cache) {
  Tensor<T> pre = affine(hidden, p.at(prefix + ".lm.dense.w"), p.at(prefix + ".lm.dense.b"));
  Tensor<T> z = layernorm(gelu(pre), p.at(prefix + ".lm.ln.g"), p.at(prefix + ".lm.ln.b"),
                          cache ? &cache->ln : nullptr);
  Tensor<T> logits = matmul_bt(z, p.at(prefix + ".emb.tok"));
  const auto& bias = p.at(prefix + ".lm.bias");
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
  if (cache) {
    cache->hidden = hidden;
    cache->dense_pre = std::move(pre);
    cache->transformed = std::move(z);
  }
  return logits;
}

template <typename T>
Tensor<T> lm_head_backward(const ParamStore<T>& p, ParamStore<T>& grads, const std::string& prefix,
                           const LmHeadCache<T>& cache, const Tensor<T>& d_logits) {
  accumulate_at_b(d_logits, cache.transformed, grads.at(prefix + ".emb.tok"));
  accumulate_column_sums(d_logits, grads.at(prefix + ".lm.bias"));
  Tensor<T> dz = matmul(d_logits, p.at(prefix + ".emb.tok"));
  Tensor<T> dg = layernorm_backward(cache.ln, p.at(prefix + ".lm.ln.g"), dz, grads.at(prefix + ".lm.ln.g"),
                                    grads.at(prefix + ".lm.ln.b"));
  Tensor<T> dpre = gelu_backward(cache.dense_pre, dg);
  linear_backward_params(cache.hidden, dpre, grads, prefix + ".lm.dense");
  return matmul_bt(dpre, p.at(prefix + ".lm.dense.w"));
}

template <typename T>
ForwardResult<T> transformer_forward(const Model<T>& model, StackInput in, const AttentionMask& mask,
                                     const Tensor<T>* memory) {
  const auto& cfg = model.config;
  require(in.position_offset + in.ids.size() <= std::size_t(cfg.max_positions),
          "transformer_forward: length " + std::to_string(in.ids.size()) + " exceeds max_positions " +
              std::to_string(cfg.max_positions));
  ForwardResult<T> r;
  if (cfg.regime == Regime::seq2seq && memory) {
    r.hidden = stack_forward(model.params, "dec", cfg.dec_layers, cfg.heads, in, mask, memory, nullptr);
    r.logits = lm_head_forward(model.params, "dec", r.hidden, nullptr);
    return r;
  }
  require(memory == nullptr, "transformer_forward: memory supplied to a model without decoder layers");
  r.hidden = stack_forward(model.params, "enc", cfg.enc_layers, cfg.heads, in, mask, nullptr, nullptr);
  if (cfg.regime == Regime::prefix_lm) {
    r.logits = lm_head_forward(model.params, "enc", r.hidden, nullptr);
  } else if (cfg.regime == Regime::labeling) {
    r.logits = affine(r.hidden, model.params.at("bio.w"), model.params.at("bio.b"));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Incremental decoding

template <typename T>
IncrementalDecoder<T>::IncrementalDecoder(const Model<T>& model, Tensor<T> memory)
    : model_(model), memory_(std::move(memory)) {
  require(model.config.regime == Regime::seq2seq, "incremental decoding requires a seq2seq model");
  const auto& p = model.params;
  const std::size_t h = std::size_t(model.config.hidden);
  for (int l = 0; l < model.config.dec_layers; ++l) {
    const auto ap = layer_prefix("dec", l) + ".cross";
    LayerState s;
    s.self_k = Tensor<T>({0, h});
    s.self_v = Tensor<T>({0, h});
    s.cross_k = affine(memory_, p.at(ap + ".k.w"), p.at(ap + ".k.b"));
    s.cross_v = affine(memory_, p.at(ap + ".v.w"), p.at(ap + ".v.b"));
    layers_.push_back(std::move(s));
  }
}

template <typename T>
std::vector<T> IncrementalDecoder<T>::step(int token) {
  const auto& cfg = model_.config;
  const auto& p = model_.params;
  const std::size_t h = std::size_t(cfg.hidden), nh = std::size_t(cfg.heads), dh = h / nh;
  const T scale = attention_scale<T>(dh);
  require(position_ < std::size_t(cfg.max_positions), "incremental decoder: exceeded max_positions");

  Tensor<T> x({1, h});
  embed_row(p, "dec", token, position_, 0, x.row(0));
  x = layernorm(x, p.at("dec.emb.ln.g"), p.at("dec.emb.ln.b"), nullptr);

  std::vector<T> probs;
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const auto lp = layer_prefix("dec", l);
    auto& st = layers_[std::size_t(l)];

    Tensor<T> q = affine(x, p.at(lp + ".self.q.w"), p.at(lp + ".self.q.b"));
    st.self_k.append_row(affine(x, p.at(lp + ".self.k.w"), p.at(lp + ".self.k.b")).row(0));
    st.self_v.append_row(affine(x, p.at(lp + ".self.v.w"), p.at(lp + ".self.v.b")).row(0));
    Tensor<T> ctx({1, h});
    probs.assign(st.self_k.rows(), T{0});
    for (std::size_t hd = 0; hd < nh; ++hd)
      attend_row<T>(q.row(0).subspan(hd * dh, dh), st.self_k, st.self_v, hd * dh, dh, {}, scale, probs,
                    ctx.row(0).subspan(hd * dh, dh));
    Tensor<T> a = affine(ctx, p.at(lp + ".self.o.w"), p.at(lp + ".self.o.b"));
    x = layernorm(add(x, a), p.at(lp + ".self.ln.g"), p.at(lp + ".self.ln.b"), nullptr);

    Tensor<T> cq = affine(x, p.at(lp + ".cross.q.w"), p.at(lp + ".cross.q.b"));
    Tensor<T> cctx({1, h});
    probs.assign(st.cross_k.rows(), T{0});
    for (std::size_t hd = 0; hd < nh; ++hd)
      attend_row<T>(cq.row(0).subspan(hd * dh, dh), st.cross_k, st.cross_v, hd * dh, dh, {}, scale, probs,
                    cctx.row(0).subspan(hd * dh, dh));
    Tensor<T> c = affine(cctx, p.at(lp + ".cross.o.w"), p.at(lp + ".cross.o.b"));
    x = layernorm(add(x, c), p.at(lp + ".cross.ln.g"), p.at(lp + ".cross.ln.b"), nullptr);

    Tensor<T> act = gelu(affine(x, p.at(lp + ".ffn.in.w"), p.at(lp + ".ffn.in.b")));
    Tensor<T> f = affine(act, p.at(lp + ".ffn.out.w"), p.at(lp + ".ffn.out.b"));
    x = layernorm(add(x, f), p.at(lp + ".ffn.ln.g"), p.at(lp + ".ffn.ln.b"), nullptr);
  }
  ++position_;
  Tensor<T> logits = lm_head_forward(p, "dec", x, nullptr);
  return std::move(logits.storage());
}

template class IncrementalDecoder<float>;
template class IncrementalDecoder<double>;

// ---------------------------------------------------------------------------
// Composition

Model<float> compose_seq2seq(InitMode enc_init, InitMode dec_init, int enc_layers, int dec_layers,
                             const ModelConfig& dims, const Model<float>* checkpoint, Rng& rng) {
  ModelConfig cfg = dims;
  cfg.regime = Regime::seq2seq;
  cfg.enc_layers = enc_layers;
  cfg.dec_layers = dec_layers;
  cfg.crf = false;
  cfg.validate();

  auto needs = [&](InitMode mode, int layers) {
    if (mode != InitMode::pretrained) return;
    require(checkpoint != nullptr, "compose_seq2seq: pretrained initialization needs a checkpoint");
    const auto& c = checkpoint->config;
    require(c.enc_layers >= layers, "compose_seq2seq: checkpoint has " + std::to_string(c.enc_layers) +
                                        " layers, " + std::to_string(layers) + " requested");
    require(c.hidden == cfg.hidden && c.heads == cfg.heads && c.ffn_size == cfg.ffn_size &&
                c.vocab_size == cfg.vocab_size && c.max_positions == cfg.max_positions,
            "compose_seq2seq: checkpoint dimensions differ from the requested configuration");
  };
  needs(enc_init, enc_layers);
  needs(dec_init, dec_layers);

  Model<float> model{cfg, {}};
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    const bool is_dec = name.starts_with("dec.");
    const InitMode mode = is_dec ? dec_init : enc_init;
    const bool cross = name.find(".cross.") != std::string::npos;
    if (cross) {
      // Fresh cross-attention: N(0, 0.02) weights, zero biases, unit gains.
      Tensor<float> t(shape);
      if (name.ends_with(".ln.g")) {
        t.fill(1.0f);
      } else if (!name.ends_with(".b")) {
        std::normal_distribution<double> dist(0.0, 0.02);
        for (auto& v : t.values()) v = float(dist(rng));
      }
      model.params.add(name, std::move(t));
      continue;
    }
    if (mode == InitMode::pretrained) {
      const std::string source = is_dec ? "enc." + name.substr(4) : name;
      if (checkpoint->params.contains(source)) {
        const auto& t = checkpoint->params.at(source);
        require(t.shape() == shape, "compose_seq2seq: checkpoint tensor '" + source + "' has shape " +
                                        shape_string(t.shape()) + ", expected " + shape_string(shape));
        model.params.add(name, t);
        continue;
      }
    }
    model.params.add(name, init_tensor<float>(name, shape, rng));
  }
  return model;
}

#define KPG_MODEL_INSTANTIATE(T)                                                                                  \
  template Tensor<T> stack_forward(const ParamStore<T>&, const std::string&, int, int, StackInput,               \
                                   const AttentionMask&, const Tensor<T>*, StackCache<T>*, Dropout);             \
  template void stack_backward(const ParamStore<T>&, ParamStore<T>&, const std::string&, int,                    \
                               const StackCache<T>&, Tensor<T>, Tensor<T>*);                                     \
  template Tensor<T> lm_head_forward(const ParamStore<T>&, const std::string&, const Tensor<T>&, LmHeadCache<T>*); \
  template Tensor<T> lm_head_backward(const ParamStore<T>&, ParamStore<T>&, const std::string&,                  \
                                      const LmHeadCache<T>&, const Tensor<T>&);                                  \
  template ForwardResult<T> transformer_forward(const Model<T>&, StackInput, const AttentionMask&, const Tensor<T>*);

KPG_MODEL_INSTANTIATE(float)
KPG_MODEL_INSTANTIATE(double)

}  // namespace kpg
