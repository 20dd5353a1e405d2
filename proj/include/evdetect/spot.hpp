#pragma once

// Peak-over-threshold thresholding with a generalized Pareto tail.
//
// Calibration picks an initial threshold h from an empirical quantile, fits a
// GPD to the excesses over h by maximum likelihood (Grimshaw's reduction to a
// 1-D root search), and derives the anomaly threshold z_q for risk q. The
// streaming update refits on every new peak; anomalies leave the state as is.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/tools/toms748_solve.hpp>

namespace evdetect {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct GpdFit {
  double gamma = 0.0;  // shape
  double sigma = 1.0;  // scale, > 0
  std::size_t n_excesses = 0;

  friend bool operator==(const GpdFit&, const GpdFit&) = default;
};

inline constexpr double kExponentialLimit = 1e-8;

// log L(gamma, sigma) = -N log sigma - (1 + 1/gamma) sum log(1 + gamma/sigma y).
// Uses the exponential form -N log sigma - sum y / sigma when |gamma| < 1e-8.
inline double gpd_log_likelihood(double gamma, double sigma, std::span<const double> excesses) {
  if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(gamma))
    throw DomainError("gpd_log_likelihood: sigma must be finite and > 0");
  const double n = static_cast<double>(excesses.size());
  if (std::abs(gamma) < kExponentialLimit) {
    double s = 0.0;
    for (double y : excesses) {
      if (!(y > 0.0)) throw DomainError("gpd_log_likelihood: excesses must be > 0");
      s += y;
    }
    return -n * std::log(sigma) - s / sigma;
  }
  const double ratio = gamma / sigma;
  double s = 0.0;
  for (double y : excesses) {
    if (!(y > 0.0)) throw DomainError("gpd_log_likelihood: excesses must be > 0");
    const double arg = ratio * y;
    if (!(arg > -1.0)) throw DomainError("gpd_log_likelihood: 1 + (gamma/sigma) y must be > 0");
    s += std::log1p(arg);
  }
  return -n * std::log(sigma) - (1.0 + 1.0 / gamma) * s;
}

namespace detail {

struct GrimshawTerms {
  double u = 0.0;  // mean 1/(1 + theta y)
  double v = 0.0;  // 1 + mean log(1 + theta y)
};

inline GrimshawTerms grimshaw_terms(double theta, std::span<const double> y) {
  double su = 0.0, sv = 0.0;
  for (double x : y) {
    const double a = theta * x;
    su += 1.0 / (1.0 + a);
    sv += std::log1p(a);
  }
  const double n = static_cast<double>(y.size());
  return {su / n, 1.0 + sv / n};
}

}  // namespace detail

struct GrimshawOptions {
  std::size_t brackets = 20;     // per side of theta = 0
  double tolerance = 1e-10;      // relative, on theta
  double boundary_offset = 1e-8; // theta_min = -1/max(y) + offset
  double span_ratio = 1e-6;      // innermost grid point relative to each side's extent
};

// Maximum-likelihood GPD fit. Roots of u(theta) v(theta) = 1 with
// theta = gamma/sigma are searched on [-1/max(y) + eps, 10/mean(y)]; each
// root gives gamma = v - 1, sigma = gamma/theta, and the candidate (including
// the exponential gamma = 0, sigma = mean(y)) with the highest likelihood wins.
inline GpdFit grimshaw_fit(std::span<const double> excesses, const GrimshawOptions& opt = {}) {
  if (excesses.size() < 2) throw std::invalid_argument("grimshaw_fit: need at least 2 excesses");
  double ymin = std::numeric_limits<double>::infinity(), ymax = 0.0, sum = 0.0;
  for (double y : excesses) {
    if (!(y > 0.0) || !std::isfinite(y)) throw std::invalid_argument("grimshaw_fit: excesses must be finite and > 0");
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
    sum += y;
  }
  const double mean = sum / static_cast<double>(excesses.size());
  const std::size_t n = excesses.size();

  GpdFit best{0.0, mean, n};
  if (ymax - ymin <= 1e-12 * ymax) return best;
  double best_ll = gpd_log_likelihood(0.0, mean, excesses);

  auto w = [&](double theta) {
    const auto t = detail::grimshaw_terms(theta, excesses);
    return t.u * t.v - 1.0;
  };
  auto consider = [&](double theta) {
    if (theta == 0.0 || !std::isfinite(theta)) return;
    const auto t = detail::grimshaw_terms(theta, excesses);
    const double gamma = t.v - 1.0;
    const double sigma = gamma / theta;
    if (!(sigma > 0.0) || !std::isfinite(sigma)) return;
    double ll;
    try {
      ll = gpd_log_likelihood(gamma, sigma, excesses);
    } catch (const DomainError&) {
      return;
    }
    if (std::isfinite(ll) && ll > best_ll) {
      best_ll = ll;
      best = {gamma, sigma, n};
    }
  };

  const double neg_end = -1.0 / ymax + opt.boundary_offset;
  const double pos_end = 10.0 / mean;

  // Geometric grid from `inner` out to `outer` on one side of zero.
  auto search_side = [&](double outer) {
    if (outer == 0.0) return;
    const double inner = outer * opt.span_ratio;
    const double ratio = std::pow(outer / inner, 1.0 / static_cast<double>(opt.brackets));
    double a = inner;
    double wa = w(a);
    for (std::size_t i = 0; i < opt.brackets; ++i) {
      const double b = (i + 1 == opt.brackets) ? outer : a * ratio;
      const double wb = w(b);
      if (wa == 0.0) {
        consider(a);
      } else if (std::isfinite(wa) && std::isfinite(wb) && wa * wb < 0.0) {
        std::uintmax_t iters = 200;
        const auto tol = boost::math::tools::eps_tolerance<double>(
            static_cast<unsigned>(std::ceil(-std::log2(opt.tolerance))));
        const double lo = std::min(a, b), hi = std::max(a, b);
        const double wlo = lo == a ? wa : wb, whi = lo == a ? wb : wa;
        const auto root = boost::math::tools::toms748_solve(w, lo, hi, wlo, whi, tol, iters);
        consider(0.5 * (root.first + root.second));
      }
      a = b;
      wa = wb;
    }
    if (wa == 0.0) consider(a);
  };
  if (neg_end < 0.0) search_side(neg_end);
  search_side(pos_end);
  return best;
}

// z_q = h + (sigma/gamma) ((q n / N_h)^(-gamma) - 1); exponential limit
// z_q = h + sigma log(N_h / (q n)).
inline double gpd_quantile(double h, const GpdFit& fit, double q, std::size_t n) {
  const double nh = static_cast<double>(fit.n_excesses);
  const double nd = static_cast<double>(n);
  if (fit.n_excesses == 0 || n < fit.n_excesses)
    throw std::invalid_argument("gpd_quantile: require 0 < N_h <= n");
  if (!(q > 0.0) || q * nd > nh * (1.0 + 1e-12))
    throw std::invalid_argument("gpd_quantile: require 0 < q <= N_h/n");
  const double r = q * nd / nh;
  if (std::abs(fit.gamma) < kExponentialLimit) return h - fit.sigma * std::log(r);
  return h + (fit.sigma / fit.gamma) * (std::pow(r, -fit.gamma) - 1.0);
}

struct SpotConfig {
  double q = 1e-4;
  double init_level = 0.98;
  std::size_t refit_stride = 1;   // refit every j-th peak
  std::size_t peaks_cap = 0;      // 0 keeps every excess
  std::size_t min_peaks = 10;
  std::size_t min_calibration = 100;

  void validate() const {
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("SPOT q must be in (0,1)");
    if (!(init_level > 0.0 && init_level < 1.0)) throw std::invalid_argument("init_level must be in (0,1)");
    if (refit_stride == 0) throw std::invalid_argument("refit_stride must be >= 1");
  }
};

enum class SpotClass { normal, peak, anomaly };

inline const char* to_string(SpotClass c) {
  switch (c) {
    case SpotClass::normal: return "normal";
    case SpotClass::peak: return "peak";
    case SpotClass::anomaly: return "anomaly";
  }
  return "?";
}

struct SpotState {
  SpotConfig config;
  double h = 0.0;
  double z_q = 0.0;
  std::deque<double> peaks;  // excesses over h, arrival order
  std::size_t n_peaks_total = 0;
  std::size_t k = 0;  // non-anomalous observations seen
  std::size_t peaks_since_refit = 0;
  GpdFit fit;
  bool degenerate = false;
  std::vector<std::string> warnings;

  friend bool operator==(const SpotState& a, const SpotState& b) {
    return a.h == b.h && a.z_q == b.z_q && a.peaks == b.peaks && a.n_peaks_total == b.n_peaks_total &&
           a.k == b.k && a.peaks_since_refit == b.peaks_since_refit && a.fit == b.fit &&
           a.degenerate == b.degenerate;
  }
};

namespace detail {

inline double threshold_floor(double h) { return h + 1e-9 * std::max(1.0, std::abs(h)); }

inline void update_threshold(SpotState& s, bool refit) {
  if (s.degenerate || s.peaks.size() < 2) {
    s.z_q = threshold_floor(s.h);
    return;
  }
  if (refit) {
    const std::vector<double> y(s.peaks.begin(), s.peaks.end());
    s.fit = grimshaw_fit(y);
    s.peaks_since_refit = 0;
  }
  GpdFit tail = s.fit;
  tail.n_excesses = s.n_peaks_total;
  const double qn = s.config.q * static_cast<double>(s.k);
  double z = (qn < static_cast<double>(tail.n_excesses)) ? gpd_quantile(s.h, tail, s.config.q, s.k) : s.h;
  if (!std::isfinite(z)) z = s.h;
  s.z_q = std::max(z, threshold_floor(s.h));
}

}  // namespace detail

// Initial PoT calibration on n >= 100 scores.
inline SpotState pot_calibrate(std::span<const double> scores, const SpotConfig& cfg = {}) {
  cfg.validate();
  const std::size_t n = scores.size();
  if (n < cfg.min_calibration)
    throw std::invalid_argument("pot_calibrate: need at least " + std::to_string(cfg.min_calibration) +
                                " scores, got " + std::to_string(n));
  for (double x : scores)
    if (!std::isfinite(x)) throw std::invalid_argument("pot_calibrate: non-finite score");

  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  std::size_t n_tail = static_cast<std::size_t>(std::floor((1.0 - cfg.init_level) * static_cast<double>(n) + 1e-9));
  n_tail = std::clamp<std::size_t>(n_tail, 1, n - 1);
  std::size_t idx = n - n_tail - 1;

  SpotState s;
  s.config = cfg;
  s.k = n;
  auto count_above = [&](double h) {
    return static_cast<std::size_t>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), h));
  };
  double h = sorted[idx];
  if (count_above(h) < cfg.min_peaks) {
    // Ties at the quantile: walk down through distinct values.
    while (idx > 0 && count_above(sorted[idx]) < cfg.min_peaks) --idx;
    h = sorted[idx];
    s.warnings.push_back("calibration: initial threshold lowered to obtain " +
                         std::to_string(count_above(h)) + " peaks");
  }
  s.h = h;
  for (double x : scores)
    if (x > h) s.peaks.push_back(x - h);
  s.n_peaks_total = s.peaks.size();
  if (s.peaks.size() < 2) {
    s.degenerate = true;
    s.fit = {0.0, 1.0, s.peaks.size()};
    s.warnings.push_back("calibration: degenerate score distribution, threshold set just above h");
    detail::update_threshold(s, false);
    return s;
  }
  if (cfg.peaks_cap > 0)
    while (s.peaks.size() > cfg.peaks_cap) s.peaks.pop_front();
  detail::update_threshold(s, true);
  return s;
}

// One streaming update. x > z_q is an anomaly and leaves the state untouched.
inline SpotClass spot_step(SpotState& s, double x) {
  if (x > s.z_q) return SpotClass::anomaly;
  if (x > s.h) {
    s.peaks.push_back(x - s.h);
    ++s.n_peaks_total;
    ++s.k;
    ++s.peaks_since_refit;
    if (s.config.peaks_cap > 0)
      while (s.peaks.size() > s.config.peaks_cap) s.peaks.pop_front();
    bool refit = s.peaks_since_refit >= s.config.refit_stride;
    if (s.degenerate && s.peaks.size() >= 2) {
      s.degenerate = false;
      refit = true;
    }
    detail::update_threshold(s, refit);
    return SpotClass::peak;
  }
  ++s.k;
  return SpotClass::normal;
}

}  // namespace evdetect
