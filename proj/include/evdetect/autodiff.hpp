#pragma once

// Reverse-mode differentiation over Tensor2 values.
//
// A Tape records every op applied to Vars created from it. Calling
// backward() on a 1×1 result walks the tape in reverse and accumulates
// gradients into every node that depends on a parameter leaf. A tape built
// with record=false evaluates eagerly and stores no closures.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "evdetect/tensor.hpp"

namespace evdetect::nn {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor2& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor2 v) { return push(std::move(v), false, nullptr); }
  Var parameter(Tensor2 v) { return push(std::move(v), record_, nullptr); }

  const Tensor2& value(Var v) const { return nodes_[v.id].value; }

  // Gradient of the last backward() target with respect to v; zero-filled if
  // v did not contribute.
  Tensor2 grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Tensor2(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var out) {
    if (!record_) throw std::logic_error("backward on a non-recording tape");
    require_shape(value(out).rows() == 1 && value(out).cols() == 1,
                  "backward: target must be 1×1");
    for (auto& n : nodes_) n.grad = Tensor2();
    grad_ref(out.id)(0, 0) = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  // --- used by op implementations ---
  using Backward = std::function<void(Tape&, std::size_t)>;

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  Var push(Tensor2 v, bool needs_grad, Backward bw) {
    nodes_.push_back(Node{std::move(v), Tensor2(), needs_grad && record_,
                          needs_grad && record_ ? std::move(bw) : Backward()});
    return Var{this, nodes_.size() - 1};
  }

  Tensor2& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor2(n.value.rows(), n.value.cols());
    return n.grad;
  }
  const Tensor2& node_grad(std::size_t id) const { return nodes_[id].grad; }
  const Tensor2& node_value(std::size_t id) const { return nodes_[id].value; }
  bool node_needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

 private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    bool needs_grad = false;
    Backward backward;
  };

  bool record_;
  std::vector<Node> nodes_;
};

inline const Tensor2& Var::value() const { return tape->value(*this); }

namespace detail {

inline void accumulate(Tape& t, std::size_t id, const Tensor2& g) {
  if (!t.node_needs_grad(id)) return;
  Tensor2& dst = t.grad_ref(id);
  auto& d = dst.data();
  const auto& s = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

inline Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("Vars from different tapes");
  return *a.tape;
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(matmul(a.value(), b.value()), ng, [a, b](Tape& t, std::size_t self) {
    const Tensor2& g = t.node_grad(self);
    if (t.needs_grad(a)) detail::accumulate(t, a.id, matmul_nt(g, t.node_value(b.id)));
    if (t.needs_grad(b)) detail::accumulate(t, b.id, matmul_tn(t.node_value(a.id), g));
  });
}

// a · bᵀ
inline Var matmul_nt(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(matmul_nt(a.value(), b.value()), ng, [a, b](Tape& t, std::size_t self) {
    const Tensor2& g = t.node_grad(self);
    if (t.needs_grad(a)) detail::accumulate(t, a.id, matmul(g, t.node_value(b.id)));
    if (t.needs_grad(b)) detail::accumulate(t, b.id, matmul_tn(g, t.node_value(a.id)));
  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  require_shape(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor2 v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] += b.value().data()[i];
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(v), ng, [a, b](Tape& t, std::size_t self) {
    const Tensor2& g = t.node_grad(self);
    detail::accumulate(t, a.id, g);
    detail::accumulate(t, b.id, g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  require_shape(a.value().same_shape(b.value()), "sub: shape mismatch");
  Tensor2 v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] -= b.value().data()[i];
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(v), ng, [a, b](Tape& t, std::size_t self) {
    Tensor2 g = t.node_grad(self);
    detail::accumulate(t, a.id, g);
    for (double& x : g.data()) x = -x;
    detail::accumulate(t, b.id, g);
  });
}

// a[n×m] + bias[1×m] broadcast over rows.
inline Var add_row(Var a, Var bias) {
  Tape& t = detail::same_tape(a, bias);
  require_shape(bias.rows() == 1 && bias.cols() == a.cols(), "add_row: bias must be 1×cols");
  Tensor2 v = a.value();
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) += bias.value()(0, j);
  const bool ng = t.needs_grad(a) || t.needs_grad(bias);
  return t.push(std::move(v), ng, [a, bias](Tape& t, std::size_t self) {
    const Tensor2& g = t.node_grad(self);
    detail::accumulate(t, a.id, g);
    if (t.needs_grad(bias)) {
      Tensor2 gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      detail::accumulate(t, bias.id, gb);
    }
  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Tensor2 v = a.value();
  for (double& x : v.data()) x *= s;
  return t.push(std::move(v), t.needs_grad(a), [a, s](Tape& t, std::size_t self) {
    Tensor2 g = t.node_grad(self);
    for (double& x : g.data()) x *= s;
    detail::accumulate(t, a.id, g);
  });
}

inline Var relu(Var a) {
  Tape& t = *a.tape;
  Tensor2 v = a.value();
  for (double& x : v.data()) x = x > 0.0 ? x : 0.0;
  return t.push(std::move(v), t.needs_grad(a), [a](Tape& t, std::size_t self) {
    Tensor2 g = t.node_grad(self);
    const auto& in = t.node_value(a.id).data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] <= 0.0) g.data()[i] = 0.0;
    detail::accumulate(t, a.id, g);
  });
}

inline Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  return t.push(softmax_rows(a.value()), t.needs_grad(a), [a](Tape& t, std::size_t self) {
    const Tensor2& g = t.node_grad(self);
    const Tensor2& y = t.node_value(self);
    Tensor2 ga(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) = y(i, j) * (g(i, j) - dot);
    }
    detail::accumulate(t, a.id, ga);
  });
}

inline Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = *x.tape;
  const bool ng = t.needs_grad(x) || t.needs_grad(gain) || t.needs_grad(bias);
  return t.push(layer_norm(x.value(), gain.value(), bias.value(), eps), ng,
                [x, gain, bias, eps](Tape& t, std::size_t self) {
                  const Tensor2& g = t.node_grad(self);
                  const Tensor2& in = t.node_value(x.id);
                  const Tensor2& gn = t.node_value(gain.id);
                  const std::size_t n = in.cols();
                  const double nd = static_cast<double>(n);
                  Tensor2 gx(in.rows(), n), gg(1, n), gbias(1, n);
                  std::vector<double> xhat(n), gxh(n);
                  for (std::size_t i = 0; i < in.rows(); ++i) {
                    double mean = 0.0;
                    for (std::size_t j = 0; j < n; ++j) mean += in(i, j);
                    mean /= nd;
                    double var = 0.0;
                    for (std::size_t j = 0; j < n; ++j) var += (in(i, j) - mean) * (in(i, j) - mean);
                    var /= nd;
                    const double inv = 1.0 / std::sqrt(var + eps);
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      xhat[j] = (in(i, j) - mean) * inv;
                      gxh[j] = g(i, j) * gn(0, j);
                      gg(0, j) += g(i, j) * xhat[j];
                      gbias(0, j) += g(i, j);
                      s1 += gxh[j];
                      s2 += gxh[j] * xhat[j];
                    }
                    for (std::size_t j = 0; j < n; ++j)
                      gx(i, j) = inv * (gxh[j] - s1 / nd - xhat[j] * s2 / nd);
                  }
                  detail::accumulate(t, x.id, gx);
                  detail::accumulate(t, gain.id, gg);
                  detail::accumulate(t, bias.id, gbias);
                });
}

// Columns [begin, begin+count).
inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape;
  require_shape(begin + count <= a.cols(), "slice_cols: out of range");
  const Tensor2& src = a.value();
  Tensor2 v(src.rows(), count);
  for (std::size_t i = 0; i < src.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) v(i, j) = src(i, begin + j);
  return t.push(std::move(v), t.needs_grad(a), [a, begin, count](Tape& t, std::size_t self) {
    const Tensor2& g = t.node_grad(self);
    const Tensor2& src = t.node_value(a.id);
    Tensor2 ga(src.rows(), src.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < count; ++j) ga(i, begin + j) = g(i, j);
    detail::accumulate(t, a.id, ga);
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  bool ng = false;
  for (const Var& p : parts) {
    require_shape(p.rows() == rows, "concat_cols: row count mismatch");
    cols += p.cols();
    ng = ng || t.needs_grad(p);
  }
  Tensor2 v(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor2& pv = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) v(i, off + j) = pv(i, j);
    off += pv.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(v), ng, [ps = std::move(ps)](Tape& t, std::size_t self) {
    const Tensor2& g = t.node_grad(self);
    std::size_t off = 0;
    for (const Var& p : ps) {
      const std::size_t c = t.node_value(p.id).cols();
      if (t.needs_grad(p)) {
        Tensor2 gp(g.rows(), c);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) gp(i, j) = g(i, off + j);
        detail::accumulate(t, p.id, gp);
      }
      off += c;
    }
  });
}

// 1×1 mean of squared elements.
inline Var mean_square(Var a) {
  Tape& t = *a.tape;
  const auto& d = a.value().data();
  double s = 0.0;
  for (double x : d) s += x * x;
  const double n = static_cast<double>(d.size());
  return t.push(Tensor2(1, 1, s / n), t.needs_grad(a), [a, n](Tape& t, std::size_t self) {
    const double g = t.node_grad(self)(0, 0);
    Tensor2 ga = t.node_value(a.id);
    for (double& x : ga.data()) x *= 2.0 * g / n;
    detail::accumulate(t, a.id, ga);
  });
}

inline Var mse(Var a, Var b) { return mean_square(sub(a, b)); }

}  // namespace evdetect::nn
