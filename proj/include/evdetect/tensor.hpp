#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evdetect::nn {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major matrix of doubles.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw ShapeError("Tensor2: element count does not match shape");
  }
  Tensor2(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Tensor2: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Tensor2 row_vector(std::span<const double> v) {
    return Tensor2(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }
  static Tensor2 column_vector(std::span<const double> v) {
    return Tensor2(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor2& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void ensure_finite(const Tensor2& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value in ") + where);
}

inline void require_shape(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

// a[n×k] · b[k×m]
inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  require_shape(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tensor2 out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto br = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

// a[n×k] · b[m×k]ᵀ
inline Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  require_shape(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Tensor2 out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

// a[k×n]ᵀ · b[k×m]
inline Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  require_shape(a.rows() == b.rows(), "matmul_tn: inner dimensions differ");
  Tensor2 out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ar = a.row(k);
    auto br = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ar[i];
      auto o = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

inline Tensor2 transpose(const Tensor2& a) {
  Tensor2 out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

// y = xW + b, b broadcast per row. b is 1×d_out.
inline Tensor2 linear_forward(const Tensor2& x, const Tensor2& w, const Tensor2& b) {
  require_shape(x.cols() == w.rows(), "linear_forward: x.cols != W.rows");
  require_shape(b.rows() == 1 && b.cols() == w.cols(), "linear_forward: bias must be 1×d_out");
  Tensor2 y = matmul(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < y.cols(); ++j) r[j] += b(0, j);
  }
  return y;
}

// Numerically stable softmax (max subtracted before exponentiation).
inline std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw ShapeError("softmax: empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

inline Tensor2 softmax_rows(const Tensor2& x) {
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto s = softmax(x.row(i));
    std::copy(s.begin(), s.end(), out.row(i).begin());
  }
  return out;
}

// Per-row normalization with population variance, then gain/bias (both 1×cols).
inline Tensor2 layer_norm(const Tensor2& x, const Tensor2& gain, const Tensor2& bias, double eps) {
  require_shape(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm: gain shape");
  require_shape(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm: bias shape");
  Tensor2 out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x.cols(); ++j)
      out(i, j) = (r[j] - mean) * inv * gain(0, j) + bias(0, j);
  }
  return out;
}

// Glorot-uniform initialization: U(±sqrt(6/(fan_in+fan_out))).
template <class Rng>
Tensor2 glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor2 t(fan_in, fan_out);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace evdetect::nn
