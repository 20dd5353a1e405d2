// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>

#include "evdetect/evdetect.hpp"
#include "evdetect/grad_check.hpp"
#include "oracles.hpp"

using namespace evdetect;

namespace {

// Pinned limits.
constexpr double kCacheTol = 1e-9;
constexpr double kCacheSeconds = 120.0;
constexpr double kGradTol = 1e-4;
constexpr double kGradDelta = 1e-4;
constexpr double kGradSeconds = 30.0;
constexpr double kGpdSeconds = 10.0;
constexpr double kQuantileTol = 1e-3;
constexpr double kSpotSeconds = 60.0;
constexpr double kE2eF1 = 0.80;
constexpr double kE2eAuc = 0.90;
constexpr double kE2eSeconds = 600.0;
constexpr double kLatencySeconds = 0.12;
constexpr double kAucOracleTol = 1e-12;
constexpr double kF1RowTol = 1e-3;
constexpr double kScalingR2 = 0.98;

// Window stride for the end-to-end training set (1 = every window).
constexpr std::size_t kE2eStride = 1;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Result {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> randn(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

std::vector<double> gpd_samples(double gamma, double sigma, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> y(n);
  for (double& x : y) {
    const double v = u(rng);
    x = gamma == 0.0 ? -sigma * std::log1p(-v) : sigma / gamma * (std::pow(1.0 - v, -gamma) - 1.0);
  }
  return y;
}

// Shared by criteria 1, 6 and 7.
struct E2e {
  Checkpoint model;
  MeterSeries test;
  double train_seconds = 0.0;
  TrainReport report;
};

E2e& e2e() {
  static E2e s = [] {
    E2e e;
    const auto t0 = Clock::now();
    SynthConfig tc;
    tc.days = 14;
    tc.session_rate = 0.0;
    tc.seed = 1;
    const auto td = prepare_training_data(synth_household(tc), 8, 32, kE2eStride);
    TrainOptions opt;  // lr 7e-5, batch 64, 50 epochs, patience 5
    const auto res = train(td.windows, ModelDims{}, opt);
    e.model = Checkpoint{res.params, td.stats};
    e.report = res.report;
    e.train_seconds = seconds_since(t0);
    SynthConfig vc;
    vc.days = 28;
    vc.seed = 11;
    vc.quiet_prefix_minutes = 2 * 1440;
    e.test = synth_household(vc);
    return e;
  }();
  return s;
}

Result cache_equivalence() {
  const E2e& e = e2e();
  const auto t0 = Clock::now();
  EngineConfig with, without;
  without.cache_enabled = false;
  Engine a(e.model, with), b(e.model, without);
  double worst = 0.0;
  std::size_t label_mismatch = 0, alarms = 0;
  constexpr std::size_t n = 10000;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = e.test.readings[i + 1440];
    const auto ea = a.step(r), eb = b.step(r);
    label_mismatch += ea.label != eb.label || ea.phase != eb.phase;
    alarms += static_cast<std::size_t>(ea.label);
    if (std::isfinite(ea.score) || std::isfinite(eb.score)) worst = std::max(worst, std::abs(ea.score - eb.score));
    if (std::isfinite(ea.threshold) || std::isfinite(eb.threshold))
      worst = std::max(worst, std::abs(ea.threshold - eb.threshold));
  }
  const double dt = seconds_since(t0);
  return {label_mismatch == 0 && worst <= kCacheTol && dt < kCacheSeconds && std::isfinite(worst),
          fmt("incremental vs full recompute over %zu readings: label mismatches %zu (alarms %zu), max |diff| "
              "%.3g (tol %g), %.1f s (limit %g s)",
              n, label_mismatch, alarms, worst, kCacheTol, dt, kCacheSeconds)};
}

Result gradient_check() {
  const auto t0 = Clock::now();
  ModelDims d;
  d.channels = 4;
  d.heads = 2;
  d.hidden = 4;
  d.lm = 2;
  d.gm = 4;
  d.e0 = 3;
  d.e1 = 2;
  ModelParams params = ModelParams::init(d, 12);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 0.1);
  for (auto* t : params.tensors())
    for (double& x : t->data()) x += g(rng);
  const auto lm = randn(d.lm, rng), gm = randn(d.gm, rng);
  std::vector<Tensor2> leaves;
  for (const auto* t : params.tensors()) leaves.push_back(*t);
  auto f = [&](Tape& tape, const std::vector<Var>& vars) {
    BoundParams b;
    b.dims = d;
    auto dst = weight_list(b.w);
    for (std::size_t i = 0; i < vars.size(); ++i) *dst[i] = vars[i];
    return nn::mse(mtr_forward(tape, b, lm, gm), tape.constant(Tensor2::column_vector(lm)));
  };
  const auto r = nn::grad_check(f, leaves, kGradDelta);
  const double dt = seconds_since(t0);
  return {r.max_relative_error < kGradTol && dt < kGradSeconds,
          fmt("full-model central differences (lm=2 gm=4 C=4 h=2, delta %g): max rel err %.3g (tol %g), %.2f s "
              "(limit %g s)",
              kGradDelta, r.max_relative_error, kGradTol, dt, kGradSeconds)};
}

Result gpd_recovery() {
  const auto t0 = Clock::now();
  const GpdFit a = grimshaw_fit(gpd_samples(0.3, 2.0, 5000, 21));
  const GpdFit b = grimshaw_fit(gpd_samples(0.0, 1.0, 5000, 22));
  const double dt = seconds_since(t0);
  const bool ok = std::abs(a.gamma - 0.3) <= 0.08 && std::abs(a.sigma - 2.0) <= 0.2 && b.gamma >= -0.1 &&
                  b.gamma <= 0.1 && dt < kGpdSeconds;
  return {ok, fmt("GPD(0.3,2): gamma %.4f sigma %.4f; Exp(1): gamma %.4f; %.3f s (limit %g s)", a.gamma, a.sigma,
                  b.gamma, dt, kGpdSeconds)};
}

Result quantile_formula() {
  const double z = gpd_quantile(10.0, GpdFit{0.5, 2.0, 200}, 0.001, 10000);
  const double z0 = gpd_quantile(10.0, GpdFit{0.0, 2.0, 200}, 0.001, 10000);
  return {std::abs(z - 23.8885) <= kQuantileTol && std::abs(z0 - 15.9915) <= kQuantileTol,
          fmt("z_q %.5f (want 23.8885), exponential limit %.5f (want 15.9915), tol %g", z, z0, kQuantileTol)};
}

Result spot_behaviour() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(58);
  const auto calib = randn(2000, rng);
  auto stream = randn(10000, rng);
  std::vector<double> ref = randn(200000, rng);
  std::sort(ref.begin(), ref.end());
  const double q999 = ref[static_cast<std::size_t>(0.999 * static_cast<double>(ref.size()))];
  std::vector<bool> spike(stream.size(), false);
  for (std::size_t i = 0; i < 20; ++i) {
    stream[250 + i * 487] = 10.0 * q999;
    spike[250 + i * 487] = true;
  }
  SpotState s = pot_calibrate(calib);
  std::size_t caught = 0, false_alarms = 0;
  std::vector<double> kept, trace;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const bool anomaly = spot_step(s, stream[i]) == SpotClass::anomaly;
    (spike[i] ? caught : false_alarms) += anomaly;
    if (!anomaly) {
      kept.push_back(stream[i]);
      trace.push_back(s.z_q);
    }
  }
  // Replaying only the non-anomalous points must give the same state.
  SpotState r = pot_calibrate(calib);
  std::vector<double> replay;
  bool replay_ok = true;
  for (double x : kept) {
    replay_ok = replay_ok && spot_step(r, x) != SpotClass::anomaly;
    replay.push_back(r.z_q);
  }
  replay_ok = replay_ok && replay == trace && r == s;
  const double clean = static_cast<double>(stream.size() - 20);
  const double fa_rate = static_cast<double>(false_alarms) / clean;
  const double dt = seconds_since(t0);
  return {caught >= 19 && fa_rate <= 0.005 && replay_ok && dt < kSpotSeconds,
          fmt("spikes caught %zu/20 (need 19), clean alarms %.3f%% (limit 0.5%%), replay %s, %.2f s (limit %g s)",
              caught, 100.0 * fa_rate, replay_ok ? "identical" : "DIFFERS", dt, kSpotSeconds)};
}

struct DetectRun {
  Metrics metrics;
  double seconds = 0.0;
  double mean_step = 0.0, max_step = 0.0;
  std::size_t points = 0;
};

DetectRun& detect_run() {
  static DetectRun d = [] {
    const E2e& e = e2e();
    DetectRun out;
    const auto t0 = Clock::now();
    Engine engine(e.model, EngineConfig{});
    std::vector<int> y, p;
    std::vector<double> s;
    double step_sum = 0.0;
    for (std::size_t i = 0; i < e.test.size(); ++i) {
      const auto s0 = Clock::now();
      const auto ev = engine.step(e.test.readings[i]);
      const double dt = seconds_since(s0);
      step_sum += dt;
      out.max_step = std::max(out.max_step, dt);
      if (ev.phase != Phase::detecting) continue;
      y.push_back(e.test.labels[i]);
      p.push_back(ev.label);
      s.push_back(ev.score);
    }
    out.seconds = seconds_since(t0);
    out.mean_step = step_sum / static_cast<double>(e.test.size());
    out.points = y.size();
    out.metrics = evaluate(y, p, s);
    return out;
  }();
  return d;
}

Result end_to_end() {
  const E2e& e = e2e();
  const DetectRun& d = detect_run();
  const double total = e.train_seconds + d.seconds;
  const Metrics& m = d.metrics;
  return {m.f1 >= kE2eF1 && m.roc_auc >= kE2eAuc && total < kE2eSeconds,
          fmt("14 d train (%zu windows, stride %zu, %zu epochs, loss %.4f -> %.4f), 28 d detect on %zu points: "
              "P %.3f R %.3f F1 %.3f (need %.2f) AUC %.4f (need %.2f), %.1f s (limit %g s)",
              e.report.windows, kE2eStride, e.report.epoch_losses.size(), e.report.initial_loss,
              e.report.final_loss, d.points, m.precision, m.recall, m.f1, kE2eF1, m.roc_auc, kE2eAuc, total,
              kE2eSeconds)};
}

Result latency() {
  const DetectRun& d = detect_run();
  return {d.mean_step <= kLatencySeconds,
          fmt("mean step latency %.3g s over %zu readings at lm=8 gm=32 C=8 h=2 (limit %g s), max %.3g s",
              d.mean_step, e2e().test.size(), kLatencySeconds, d.max_step)};
}

Result metrics_oracle() {
  std::mt19937_64 rng(8);
  std::size_t count_mismatch = 0;
  double worst_auc = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 200;
    std::vector<int> y(n), p(n);
    std::vector<double> s(n);
    Confusion want;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng() % 2);
      p[i] = static_cast<int>(rng() % 2);
      s[i] = trial % 2 ? static_cast<double>(rng() % 10) : std::generate_canonical<double, 53>(rng);
    }
    y[0] = 0;
    y[1] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      want.tp += y[i] && p[i];
      want.fp += !y[i] && p[i];
      want.fn += y[i] && !p[i];
      want.tn += !y[i] && !p[i];
    }
    count_mismatch += !(confusion(y, p) == want);
    worst_auc = std::max(worst_auc, std::abs(roc_auc(y, s) - oracle::auc_pairs(y, s)));
  }
  const double f1 = f1_from(0.865, 0.883);
  return {count_mismatch == 0 && worst_auc <= kAucOracleTol && std::abs(f1 - 0.874) <= kF1RowTol,
          fmt("1000 random vectors: confusion mismatches %zu, max AUC diff %.3g (tol %g); F1(0.865, 0.883) = %.4f "
              "(want 0.874 +- %g)",
              count_mismatch, worst_auc, kAucOracleTol, f1, kF1RowTol)};
}

Result fifo_oracle() {
  std::mt19937_64 rng(9);
  std::size_t mismatches = 0, snapshots = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t lm = 1 + rng() % 12;
    const std::size_t gm = lm + 1 + rng() % 40;
    const std::size_t n = rng() % 150;
    StreamState st(lm, gm);
    std::vector<Reading> raw;
    long long t = 0;
    for (std::size_t i = 0; i < n; ++i) {
      t += 1 + static_cast<long long>(rng() % 3);
      raw.push_back({minutes_since_epoch(t), static_cast<double>(rng() % 1000)});
      st.push(raw.back());
      const auto snap = st.snapshot();
      if (snap.has_value() != (raw.size() >= lm + gm)) {
        ++mismatches;
        continue;
      }
      if (!snap) continue;
      ++snapshots;
      const auto tail = raw.end() - static_cast<std::ptrdiff_t>(lm + gm);
      const std::vector<Reading> want_gm(tail, tail + static_cast<std::ptrdiff_t>(gm));
      const std::vector<Reading> want_lm(tail + static_cast<std::ptrdiff_t>(gm), raw.end());
      mismatches += snap->gm != want_gm || snap->lm != want_lm;
    }
  }
  return {mismatches == 0, fmt("10000 random push sequences, %zu snapshots compared, %zu mismatches", snapshots,
                               mismatches)};
}

Result scaling_shape() {
  const std::vector<std::size_t> gms{32, 64, 128, 256};
  std::vector<double> times;
  for (std::size_t gm : gms) {
    ModelDims d;
    d.gm = gm;
    const ModelParams params = ModelParams::init(d, 13);
    std::mt19937_64 rng(13);
    const auto x = randn(gm, rng);
    double best = 1e300;
    for (int rep = 0; rep < 7; ++rep) {
      const auto t0 = Clock::now();
      for (int i = 0; i < 200; ++i) {
        Tape tape(false);
        const BoundParams p = bind(tape, params);
        encode_global(embed_window(tape, x, d.lm, p), p);
      }
      best = std::min(best, seconds_since(t0) / 200.0);
    }
    times.push_back(best);
  }
  // Least-squares line t = a + b * gm.
  const double n = static_cast<double>(gms.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < gms.size(); ++i) {
    const double x = static_cast<double>(gms[i]);
    sx += x;
    sy += times[i];
    sxx += x * x;
    sxy += x * times[i];
  }
  const double b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double a = (sy - b * sx) / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < gms.size(); ++i) {
    const double fit = a + b * static_cast<double>(gms[i]);
    ss_res += (times[i] - fit) * (times[i] - fit);
    ss_tot += (times[i] - sy / n) * (times[i] - sy / n);
  }
  const double r2 = 1.0 - ss_res / ss_tot;
  return {r2 >= kScalingR2 && b > 0.0,
          fmt("encode_global us at gm 32/64/128/256: %.1f %.1f %.1f %.1f; affine R^2 %.4f (need %.2f)",
              1e6 * times[0], 1e6 * times[1], 1e6 * times[2], 1e6 * times[3], r2, kScalingR2)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Result()>>> criteria{
      {"incremental inference equivalence", cache_equivalence},
      {"gradient correctness", gradient_check},
      {"GPD recovery", gpd_recovery},
      {"quantile formula", quantile_formula},
      {"SPOT behaviour", spot_behaviour},
      {"end-to-end synthetic detection", end_to_end},
      {"throughput", latency},
      {"metrics oracle", metrics_oracle},
      {"FIFO memory oracle", fifo_oracle},
      {"scaling shape", scaling_shape},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Result r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failures += !r.pass;
    std::printf("%s %2zu %s: %s\n", r.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, r.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures ? 1 : 0;
}
