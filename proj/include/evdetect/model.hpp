#pragma once

// Memory-based transformer: a scalar embedding plus sinusoidal offsets, two
// stacked transformer-decoder units (TRD) compressing global memory
// gm -> e0 -> e1 tokens through learned queries, and one TRD that decodes the
// local memory against the compressed context.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evdetect/autodiff.hpp"
#include "evdetect/tensor.hpp"

namespace evdetect {

using nn::Tape;
using nn::Tensor2;
using nn::Var;

struct ModelDims {
  std::size_t channels = 8;  // C
  std::size_t heads = 2;
  std::size_t hidden = 8;  // feed-forward width
  std::size_t lm = 8;
  std::size_t gm = 32;
  std::size_t e0 = 16;
  std::size_t e1 = 8;
  double ln_eps = 1e-5;

  std::size_t head_dim() const { return channels / heads; }

  void validate() const {
    if (channels == 0 || channels % 2 != 0)
      throw std::invalid_argument("channels (C) must be even and > 0");
    if (heads == 0 || channels % heads != 0)
      throw std::invalid_argument("heads must divide channels");
    if (hidden == 0) throw std::invalid_argument("hidden must be > 0");
    if (lm == 0 || lm >= gm) throw std::invalid_argument("require 0 < lm < gm");
    if (e1 == 0 || e1 > e0 || e0 >= gm) throw std::invalid_argument("require 0 < e1 <= e0 < gm");
  }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

template <class T>
struct AttentionWeights {
  T wq, bq, wk, bk, wv, bv, wo, bo;
};

template <class T>
struct TrdWeights {
  AttentionWeights<T> self_attn;
  AttentionWeights<T> cross_attn;
  T ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  T ln1_gain, ln1_bias, ln2_gain, ln2_bias, ln3_gain, ln3_bias;
};

template <class T>
struct ModelWeights {
  T embed_w, embed_b;            // 1×C each
  T enc1_queries, enc2_queries;  // e0×C, e1×C
  TrdWeights<T> enc1, enc2, dec;
  T head_w, head_b;  // C×1, 1×1
};

namespace detail {

// f(prefix, name, field); prefix and name are static strings.
template <class T, class F>
void visit_attention(AttentionWeights<T>& a, const char* p, F& f) {
  f(p, "wq", a.wq);
  f(p, "bq", a.bq);
  f(p, "wk", a.wk);
  f(p, "bk", a.bk);
  f(p, "wv", a.wv);
  f(p, "bv", a.bv);
  f(p, "wo", a.wo);
  f(p, "bo", a.bo);
}

template <class T, class F>
void visit_trd(TrdWeights<T>& t, const char* p, const char* self_p, const char* cross_p, F& f) {
  visit_attention(t.self_attn, self_p, f);
  visit_attention(t.cross_attn, cross_p, f);
  f(p, "ffn_w1", t.ffn_w1);
  f(p, "ffn_b1", t.ffn_b1);
  f(p, "ffn_w2", t.ffn_w2);
  f(p, "ffn_b2", t.ffn_b2);
  f(p, "ln1_gain", t.ln1_gain);
  f(p, "ln1_bias", t.ln1_bias);
  f(p, "ln2_gain", t.ln2_gain);
  f(p, "ln2_bias", t.ln2_bias);
  f(p, "ln3_gain", t.ln3_gain);
  f(p, "ln3_bias", t.ln3_bias);
}

template <class T, class F>
void visit_fields(ModelWeights<T>& w, F&& f) {
  f("", "embed_w", w.embed_w);
  f("", "embed_b", w.embed_b);
  f("", "enc1_queries", w.enc1_queries);
  f("", "enc2_queries", w.enc2_queries);
  visit_trd(w.enc1, "enc1.", "enc1.self.", "enc1.cross.", f);
  visit_trd(w.enc2, "enc2.", "enc2.self.", "enc2.cross.", f);
  visit_trd(w.dec, "dec.", "dec.self.", "dec.cross.", f);
  f("", "head_w", w.head_w);
  f("", "head_b", w.head_b);
}

}  // namespace detail

// Calls f(name, field) for every weight in a fixed order.
template <class T, class F>
void visit_weights(ModelWeights<T>& w, F&& f) {
  detail::visit_fields(w, [&](const char* prefix, const char* name, T& x) { f(std::string(prefix) + name, x); });
}

template <class T>
std::vector<T*> weight_list(ModelWeights<T>& w) {
  std::vector<T*> out;
  out.reserve(128);
  detail::visit_fields(w, [&](const char*, const char*, T& x) { out.push_back(&x); });
  return out;
}

struct ModelParams {
  ModelDims dims;
  ModelWeights<Tensor2> w;

  std::vector<Tensor2*> tensors() { return weight_list(w); }
  std::vector<const Tensor2*> tensors() const {
    auto& self = const_cast<ModelWeights<Tensor2>&>(w);
    std::vector<const Tensor2*> out;
    for (auto* t : weight_list(self)) out.push_back(t);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) n += t->size();
    return n;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (!(a.dims == b.dims)) return false;
    auto ta = a.tensors(), tb = b.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (!(*ta[i] == *tb[i])) return false;
    return true;
  }

  // Weights Glorot-uniform from a seeded engine; biases zero; norm gains one.
  static ModelParams init(const ModelDims& dims, std::uint64_t seed) {
    dims.validate();
    std::mt19937_64 rng(seed);
    const std::size_t C = dims.channels, H = dims.hidden;
    ModelParams p;
    p.dims = dims;
    auto& w = p.w;
    auto zeros = [](std::size_t r, std::size_t c) { return Tensor2(r, c); };
    auto ones = [](std::size_t c) { return Tensor2(1, c, 1.0); };
    auto init_attn = [&](AttentionWeights<Tensor2>& a) {
      a.wq = nn::glorot_uniform(C, C, rng);
      a.bq = zeros(1, C);
      a.wk = nn::glorot_uniform(C, C, rng);
      a.bk = zeros(1, C);
      a.wv = nn::glorot_uniform(C, C, rng);
      a.bv = zeros(1, C);
      a.wo = nn::glorot_uniform(C, C, rng);
      a.bo = zeros(1, C);
    };
    auto init_trd = [&](TrdWeights<Tensor2>& t) {
      init_attn(t.self_attn);
      init_attn(t.cross_attn);
      t.ffn_w1 = nn::glorot_uniform(C, H, rng);
      t.ffn_b1 = zeros(1, H);
      t.ffn_w2 = nn::glorot_uniform(H, C, rng);
      t.ffn_b2 = zeros(1, C);
      t.ln1_gain = ones(C);
      t.ln1_bias = zeros(1, C);
      t.ln2_gain = ones(C);
      t.ln2_bias = zeros(1, C);
      t.ln3_gain = ones(C);
      t.ln3_bias = zeros(1, C);
    };
    w.embed_w = nn::glorot_uniform(1, C, rng);
    w.embed_b = zeros(1, C);
    w.enc1_queries = nn::glorot_uniform(dims.e0, C, rng);
    w.enc2_queries = nn::glorot_uniform(dims.e1, C, rng);
    init_trd(w.enc1);
    init_trd(w.enc2);
    init_trd(w.dec);
    w.head_w = nn::glorot_uniform(C, 1, rng);
    w.head_b = zeros(1, 1);
    return p;
  }
};

// s_tau[2i] = sin(tau / 10000^(2i/C)), s_tau[2i+1] = cos(tau / 10000^(2i/C)).
inline std::vector<double> positional_encoding(std::size_t tau, std::size_t channels) {
  if (channels % 2 != 0) throw std::invalid_argument("positional_encoding: C must be even");
  std::vector<double> s(channels);
  for (std::size_t i = 0; i < channels / 2; ++i) {
    const double freq = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(channels));
    const double a = static_cast<double>(tau) / freq;
    s[2 * i] = std::sin(a);
    s[2 * i + 1] = std::cos(a);
  }
  return s;
}

// Rows are positions in a window ordered oldest -> newest; the newest row of
// a window ending `newest_tau` steps before now has offset newest_tau.
inline Tensor2 positional_table(std::size_t length, std::size_t newest_tau, std::size_t channels) {
  Tensor2 t(length, channels);
  for (std::size_t j = 0; j < length; ++j) {
    const auto s = positional_encoding(newest_tau + (length - 1 - j), channels);
    std::copy(s.begin(), s.end(), t.row(j).begin());
  }
  return t;
}

// Parameters bound to a tape as leaves (recording tapes produce gradients).
struct BoundParams {
  ModelDims dims;
  ModelWeights<Var> w;
  std::vector<Var> leaves;  // visit order, matches ModelParams::tensors()
  Tensor2 lm_positions;     // lm×C offsets 0..lm-1 (newest last)
  Tensor2 gm_positions;     // gm×C offsets lm..lm+gm-1
};

inline BoundParams bind(Tape& tape, const ModelParams& p) {
  BoundParams b;
  b.dims = p.dims;
  auto src = p.tensors();
  auto dst = weight_list(b.w);
  for (std::size_t i = 0; i < src.size(); ++i) {
    *dst[i] = tape.parameter(*src[i]);
    b.leaves.push_back(*dst[i]);
  }
  b.lm_positions = positional_table(p.dims.lm, 0, p.dims.channels);
  b.gm_positions = positional_table(p.dims.gm, p.dims.lm, p.dims.channels);
  return b;
}

inline double attention_scale(const ModelDims& d) { return 1.0 / std::sqrt(static_cast<double>(d.channels)); }

// Single-head scaled dot-product attention, softmax(Q Kᵀ / sqrt(C)) V.
inline Tensor2 attention(const Tensor2& q, const Tensor2& k, const Tensor2& v) {
  nn::require_shape(q.cols() == k.cols(), "attention: Q/K width mismatch");
  nn::require_shape(k.rows() == v.rows(), "attention: K/V length mismatch");
  Tensor2 logits = nn::matmul_nt(q, k);
  const double s = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (double& x : logits.data()) x *= s;
  return nn::matmul(nn::softmax_rows(logits), v);
}

// Multi-head attention on the tape. Optional `weights_out` receives the
// per-head softmax matrices (for inspection).
inline Var multi_head_attention(Var queries, Var memory, const AttentionWeights<Var>& a,
                                const ModelDims& d, std::vector<Var>* weights_out = nullptr) {
  const Var q = nn::linear(queries, a.wq, a.bq);
  const Var k = nn::linear(memory, a.wk, a.bk);
  const Var v = nn::linear(memory, a.wv, a.bv);
  const std::size_t dh = d.head_dim();
  const double s = attention_scale(d);
  std::vector<Var> heads;
  heads.reserve(d.heads);
  for (std::size_t h = 0; h < d.heads; ++h) {
    const Var qh = nn::slice_cols(q, h * dh, dh);
    const Var kh = nn::slice_cols(k, h * dh, dh);
    const Var vh = nn::slice_cols(v, h * dh, dh);
    const Var weights = nn::softmax_rows(nn::scale(nn::matmul_nt(qh, kh), s));
    if (weights_out) weights_out->push_back(weights);
    heads.push_back(nn::matmul(weights, vh));
  }
  return nn::linear(nn::concat_cols(heads), a.wo, a.bo);
}

// Self-attention followed by residual add and layer norm.
inline Var trd_self_stage(Var tokens, const TrdWeights<Var>& p, const ModelDims& d) {
  const Var sa = multi_head_attention(tokens, tokens, p.self_attn, d);
  return nn::layer_norm(nn::add(tokens, sa), p.ln1_gain, p.ln1_bias, d.ln_eps);
}

// Given the self stage output and the cross-attention output: residual add +
// norm, feed-forward, residual add + norm.
inline Var trd_tail(Var self_out, Var cross_out, const TrdWeights<Var>& p, const ModelDims& d) {
  const Var x2 = nn::layer_norm(nn::add(self_out, cross_out), p.ln2_gain, p.ln2_bias, d.ln_eps);
  const Var ff = nn::linear(nn::relu(nn::linear(x2, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2);
  return nn::layer_norm(nn::add(x2, ff), p.ln3_gain, p.ln3_bias, d.ln_eps);
}

inline Var trd_forward(Var tokens, Var memory, const TrdWeights<Var>& p, const ModelDims& d) {
  nn::require_shape(tokens.cols() == d.channels && memory.cols() == d.channels,
                    "trd_forward: token width must equal C");
  const Var x1 = trd_self_stage(tokens, p, d);
  const Var c = multi_head_attention(x1, memory, p.cross_attn, d);
  return trd_tail(x1, c, p, d);
}

// Readings (already normalized) -> embed + positional offsets, n×C.
inline Var embed_window(Tape& tape, std::span<const double> values, std::size_t newest_tau,
                        const BoundParams& p) {
  const Var x = tape.constant(Tensor2::column_vector(values));
  const Var e = nn::linear(x, p.w.embed_w, p.w.embed_b);
  const ModelDims& d = p.dims;
  if (newest_tau == 0 && values.size() == d.lm && !p.lm_positions.empty())
    return nn::add(e, tape.constant(p.lm_positions));
  if (newest_tau == d.lm && values.size() == d.gm && !p.gm_positions.empty())
    return nn::add(e, tape.constant(p.gm_positions));
  return nn::add(e, tape.constant(positional_table(values.size(), newest_tau, d.channels)));
}

inline Var encode_global(Var gm_features, const BoundParams& p) {
  const ModelDims& d = p.dims;
  nn::require_shape(gm_features.rows() == d.gm && gm_features.cols() == d.channels,
                    "encode_global: features must be gm×C");
  const Var stage1 = trd_forward(p.w.enc1_queries, gm_features, p.w.enc1, d);
  return trd_forward(p.w.enc2_queries, stage1, p.w.enc2, d);
}

// Returns the lm×1 reconstruction.
inline Var decode_local(Var lm_features, Var encoded, const BoundParams& p) {
  const ModelDims& d = p.dims;
  nn::require_shape(lm_features.rows() == d.lm && lm_features.cols() == d.channels,
                    "decode_local: features must be lm×C");
  nn::require_shape(encoded.rows() == d.e1 && encoded.cols() == d.channels,
                    "decode_local: encoded memory must be e1×C");
  const Var y = trd_forward(lm_features, encoded, p.w.dec, d);
  return nn::linear(y, p.w.head_w, p.w.head_b);
}

// lm and gm are normalized values ordered oldest -> newest.
inline Var mtr_forward(Tape& tape, const BoundParams& p, std::span<const double> lm,
                       std::span<const double> gm) {
  const ModelDims& d = p.dims;
  nn::require_shape(lm.size() == d.lm && gm.size() == d.gm, "mtr_forward: window lengths");
  const Var gm_feat = embed_window(tape, gm, d.lm, p);
  const Var lm_feat = embed_window(tape, lm, 0, p);
  return decode_local(lm_feat, encode_global(gm_feat, p), p);
}

// Inference convenience: reconstruction of the local window.
inline std::vector<double> reconstruct(const ModelParams& params, std::span<const double> lm,
                                       std::span<const double> gm) {
  Tape tape(false);
  const BoundParams p = bind(tape, params);
  const Var out = mtr_forward(tape, p, lm, gm);
  return out.value().data();
}

}  // namespace evdetect
