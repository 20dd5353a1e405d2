#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "evdetect/adam.hpp"
#include "evdetect/autodiff.hpp"
#include "evdetect/data.hpp"
#include "evdetect/model.hpp"

namespace evdetect {

struct TrainReport {
  std::vector<double> epoch_losses;  // mean minibatch loss per epoch
  double initial_loss = 0.0;         // full training set, before any step
  double final_loss = 0.0;           // full training set, after the last step
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  nn::Hyper hyper;
  std::size_t windows = 0;
  std::size_t steps = 0;
  bool stopped_early = false;
  std::vector<std::string> warnings;
};

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& msg, TrainReport report)
      : std::runtime_error(msg), report_(std::move(report)) {}
  const TrainReport& report() const { return report_; }

 private:
  TrainReport report_;
};

// Mean over windows and lm positions of the squared reconstruction error.
inline Var reconstruction_loss(Tape& tape, const BoundParams& p, const WindowBatch& batch) {
  if (batch.count() == 0) throw std::invalid_argument("reconstruction_loss: empty batch");
  std::vector<Var> terms;
  terms.reserve(batch.count());
  for (std::size_t i = 0; i < batch.count(); ++i) {
    const auto lm = batch.lm_windows.row(i);
    const auto gm = batch.gm_windows.row(i);
    const Var recon = mtr_forward(tape, p, lm, gm);
    terms.push_back(nn::mse(recon, tape.constant(Tensor2::column_vector(lm))));
  }
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = nn::add(total, terms[i]);
  return nn::scale(total, 1.0 / static_cast<double>(batch.count()));
}

inline double reconstruction_loss(const WindowBatch& batch, const ModelParams& params) {
  double sum = 0.0;
  constexpr std::size_t chunk = 256;
  for (std::size_t start = 0; start < batch.count(); start += chunk) {
    const std::size_t n = std::min(chunk, batch.count() - start);
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), start);
    Tape tape(false);
    const BoundParams p = bind(tape, params);
    sum += reconstruction_loss(tape, p, batch.select(rows)).value()(0, 0) * static_cast<double>(n);
  }
  const double loss = sum / static_cast<double>(batch.count());
  if (!std::isfinite(loss)) throw nn::NumericError("reconstruction_loss: non-finite loss");
  return loss;
}

struct TrainOptions {
  nn::Hyper hyper;
  std::uint64_t seed = 42;
  std::size_t patience = 5;     // epochs without improvement before stopping; 0 disables
  double divergence_limit = 1e6;
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

// Adam over shuffled minibatches of normalized windows.
inline TrainResult train(const WindowBatch& windows, const ModelDims& dims, const TrainOptions& opt) {
  opt.hyper.validate();
  dims.validate();
  if (windows.count() == 0) throw std::invalid_argument("train: no windows");
  if (windows.lm_windows.cols() != dims.lm || windows.gm_windows.cols() != dims.gm)
    throw std::invalid_argument("train: window lengths do not match model dims");

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res{ModelParams::init(dims, opt.seed), {}};
  TrainReport& rep = res.report;
  rep.seed = opt.seed;
  rep.hyper = opt.hyper;
  rep.windows = windows.count();
  rep.initial_loss = reconstruction_loss(windows, res.params);

  std::mt19937_64 shuffle_rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(windows.count());
  std::iota(order.begin(), order.end(), 0);
  nn::AdamState adam;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stagnant = 0;

  for (std::size_t epoch = 0; epoch < opt.hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opt.hyper.batch_size) {
      const std::size_t n = std::min(opt.hyper.batch_size, order.size() - start);
      const WindowBatch batch = windows.select(std::span(order).subspan(start, n));
      Tape tape(true);
      const BoundParams bound = bind(tape, res.params);
      const Var loss = reconstruction_loss(tape, bound, batch);
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv) || lv > opt.divergence_limit) {
        rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        throw TrainingAborted("training diverged (loss " + std::to_string(lv) + ")", rep);
      }
      tape.backward(loss);
      std::vector<Tensor2> grads;
      grads.reserve(bound.leaves.size());
      for (const Var& v : bound.leaves) grads.push_back(tape.grad(v));
      const auto tensors = res.params.tensors();
      nn::adam_step(tensors, grads, adam, opt.hyper);
      ++rep.steps;
      epoch_sum += lv * static_cast<double>(n);
    }
    const double epoch_loss = epoch_sum / static_cast<double>(order.size());
    rep.epoch_losses.push_back(epoch_loss);
    if (epoch_loss < best) {
      best = epoch_loss;
      stagnant = 0;
    } else if (opt.patience > 0 && ++stagnant >= opt.patience) {
      rep.stopped_early = true;
      break;
    }
  }

  rep.final_loss = opt.hyper.epochs == 0 ? rep.initial_loss : reconstruction_loss(windows, res.params);
  if (rep.final_loss > rep.initial_loss)
    rep.warnings.push_back("final training loss exceeds initial loss");
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// Contiguous label-0 runs (within gap-free segments) as raw kW values, in
// order, truncated so their total does not exceed max_minutes. Unlabeled
// input is taken as non-EV throughout.
inline std::vector<std::vector<double>> non_ev_runs(const MeterSeries& s, std::size_t max_minutes) {
  std::vector<std::vector<double>> runs;
  std::size_t total = 0;
  for (const auto& [begin, end] : s.segments()) {
    std::vector<double> cur;
    auto flush = [&] {
      if (!cur.empty()) runs.push_back(std::move(cur));
      cur.clear();
    };
    for (std::size_t i = begin; i < end && total < max_minutes; ++i) {
      if (s.has_labels() && s.labels[i] != 0) {
        flush();
        continue;
      }
      cur.push_back(s.readings[i].power);
      ++total;
    }
    flush();
    if (total >= max_minutes) break;
  }
  return runs;
}

inline constexpr std::size_t kDefaultMaxTrainMinutes = 4 * 7 * 1440;

struct TrainingData {
  SeriesStats stats;
  WindowBatch windows;  // normalized
  std::size_t readings = 0;
};

// Normalization statistics come from the selected non-EV readings only.
inline TrainingData prepare_training_data(const MeterSeries& s, std::size_t lm, std::size_t gm,
                                          std::size_t stride = 1,
                                          std::size_t max_minutes = kDefaultMaxTrainMinutes) {
  const auto runs = non_ev_runs(s, max_minutes);
  std::vector<double> all;
  for (const auto& r : runs) all.insert(all.end(), r.begin(), r.end());
  if (all.empty()) throw std::invalid_argument("no non-EV readings available for training");
  TrainingData td;
  td.stats = fit_stats(all);
  td.readings = all.size();
  td.windows = WindowBatch{Tensor2(0, lm), Tensor2(0, gm)};
  for (const auto& r : runs) {
    if (r.size() < lm + gm) continue;
    td.windows.append(sliding_windows(normalize(r, td.stats), lm, gm, stride));
  }
  if (td.windows.count() == 0)
    throw std::invalid_argument("no non-EV interval is long enough for one lm+gm window");
  return td;
}

}  // namespace evdetect
