#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace evdetect {

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

template <class L, class P>
Confusion confusion(std::span<const L> labels, std::span<const P> preds) {
  if (labels.size() != preds.size()) throw std::invalid_argument("confusion: length mismatch");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool y = labels[i] != 0, p = preds[i] != 0;
    if (y && p) ++c.tp;
    else if (!y && p) ++c.fp;
    else if (y && !p) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline Confusion confusion(const std::vector<int>& labels, const std::vector<int>& preds) {
  return confusion(std::span<const int>(labels), std::span<const int>(preds));
}

struct PrfScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Zero when the denominator is zero.
inline double f1_from(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

inline PrfScores precision_recall_f1(const Confusion& c) {
  PrfScores s;
  s.precision = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  s.recall = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  s.f1 = f1_from(s.precision, s.recall);
  return s;
}

// Rank-based AUC (Mann-Whitney U / (n_pos n_neg)); ties receive midranks.
template <class L>
double roc_auc(std::span<const L> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw std::invalid_argument("roc_auc: length mismatch");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] != 0) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_auc: both classes must be present");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

inline double roc_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  return roc_auc(std::span<const int>(labels), std::span<const double>(scores));
}

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double roc_auc = std::nan("");  // NaN when only one class is present
};

inline Metrics evaluate(const std::vector<int>& labels, const std::vector<int>& preds,
                        const std::vector<double>& scores) {
  const auto prf = precision_recall_f1(confusion(labels, preds));
  Metrics m{prf.precision, prf.recall, prf.f1, std::nan("")};
  const auto pos = std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; });
  if (pos > 0 && static_cast<std::size_t>(pos) < labels.size()) m.roc_auc = roc_auc(labels, scores);
  return m;
}

// Arithmetic mean over users; AUC averages only finite entries.
inline Metrics mean_metrics(std::span<const Metrics> ms) {
  if (ms.empty()) throw std::invalid_argument("mean_metrics: no inputs");
  Metrics out{0, 0, 0, 0};
  std::size_t n_auc = 0;
  for (const auto& m : ms) {
    out.precision += m.precision;
    out.recall += m.recall;
    out.f1 += m.f1;
    if (std::isfinite(m.roc_auc)) {
      out.roc_auc += m.roc_auc;
      ++n_auc;
    }
  }
  const double n = static_cast<double>(ms.size());
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  out.roc_auc = n_auc ? out.roc_auc / static_cast<double>(n_auc) : std::nan("");
  return out;
}

}  // namespace evdetect
