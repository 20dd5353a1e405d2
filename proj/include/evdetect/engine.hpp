#pragma once

// Online detection: FIFO memories -> reconstruction -> MSE score -> SPOT.
//
// With the attention cache enabled, the first encoder stage's cross-attention
// over global memory is assembled from two parts: a content part, one e0-vector
// per head computed when a reading enters GM and kept in a ring, and a
// positional part precomputed per offset. The queries of that stage depend only
// on learned tokens, so both parts stay valid for the life of the model.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evdetect/checkpoint.hpp"
#include "evdetect/memory.hpp"
#include "evdetect/model.hpp"
#include "evdetect/spot.hpp"

namespace evdetect {

// Mean squared error between a window and its reconstruction.
inline double anomaly_score(std::span<const double> lm, std::span<const double> lm_hat) {
  if (lm.size() != lm_hat.size() || lm.empty()) throw std::invalid_argument("anomaly_score: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < lm.size(); ++i) s += (lm[i] - lm_hat[i]) * (lm[i] - lm_hat[i]);
  return s / static_cast<double>(lm.size());
}

// Embedding of one normalized reading without its positional offset.
inline std::vector<double> reading_feature(const ModelParams& p, double value) {
  std::vector<double> f(p.dims.channels);
  for (std::size_t c = 0; c < f.size(); ++c) f[c] = value * p.w.embed_w(0, c) + p.w.embed_b(0, c);
  return f;
}

// Post-self-attention tokens of the first encoder stage (input independent).
inline Tensor2 enc1_fixed_queries(const ModelParams& params) {
  Tape tape(false);
  const BoundParams p = bind(tape, params);
  return trd_self_stage(p.w.enc1_queries, p.w.enc1, params.dims).value();
}

class AttentionCache {
 public:
  AttentionCache() = default;

  static AttentionCache build(const ModelParams& params) {
    const ModelDims& d = params.dims;
    const std::size_t C = d.channels, dh = d.head_dim(), e0 = d.e0;
    const double scale = attention_scale(d);
    const auto& a = params.w.enc1.cross_attn;

    AttentionCache c;
    c.dims_ = d;
    c.fixed_queries_ = enc1_fixed_queries(params);
    const Tensor2 q = nn::linear_forward(c.fixed_queries_, a.wq, a.bq);  // e0×C

    // key_queries_[h](i, :) = scale * W_k[:, head h] q_i^h, so the content
    // logit of a feature x is key_queries_[h].row(i) · x.
    c.key_queries_.assign(d.heads, Tensor2(e0, C));
    std::vector<Tensor2> bias_logit(d.heads, Tensor2(e0, 1));
    for (std::size_t h = 0; h < d.heads; ++h) {
      for (std::size_t i = 0; i < e0; ++i) {
        double b = 0.0;
        for (std::size_t k = 0; k < dh; ++k) b += q(i, h * dh + k) * a.bk(0, h * dh + k);
        bias_logit[h](i, 0) = scale * b;
        for (std::size_t r = 0; r < C; ++r) {
          double s = 0.0;
          for (std::size_t k = 0; k < dh; ++k) s += a.wk(r, h * dh + k) * q(i, h * dh + k);
          c.key_queries_[h](i, r) = scale * s;
        }
      }
    }

    // Positional logits and value offsets per GM slot (oldest slot j has
    // offset tau = lm + gm - 1 - j).
    c.positional_logits_.assign(d.heads, Tensor2(d.gm, e0));
    c.positional_values_ = Tensor2(d.gm, C);
    for (std::size_t j = 0; j < d.gm; ++j) {
      const auto s = positional_encoding(d.lm + d.gm - 1 - j, C);
      for (std::size_t h = 0; h < d.heads; ++h)
        for (std::size_t i = 0; i < e0; ++i) {
          double v = bias_logit[h](i, 0);
          for (std::size_t r = 0; r < C; ++r) v += c.key_queries_[h](i, r) * s[r];
          c.positional_logits_[h](j, i) = v;
        }
      for (std::size_t col = 0; col < C; ++col) {
        double v = a.bv(0, col);
        for (std::size_t r = 0; r < C; ++r) v += s[r] * a.wv(r, col);
        c.positional_values_(j, col) = v;
      }
    }
    c.value_weights_ = a.wv;
    c.content_logits_ = Fifo<std::vector<double>>(d.gm);
    c.content_values_ = Fifo<std::vector<double>>(d.gm);
    return c;
  }

  // O(heads·e0·C) for the logits plus O(C²) for the value projection.
  void incremental_update(std::span<const double> feature) {
    const std::size_t C = dims_.channels, e0 = dims_.e0;
    nn::require_shape(feature.size() == C, "incremental_update: feature must have C entries");
    std::vector<double> logits(dims_.heads * e0);
    for (std::size_t h = 0; h < dims_.heads; ++h)
      for (std::size_t i = 0; i < e0; ++i) {
        const auto kq = key_queries_[h].row(i);
        double s = 0.0;
        for (std::size_t r = 0; r < C; ++r) s += kq[r] * feature[r];
        logits[h * e0 + i] = s;
      }
    logit_mult_adds_ += dims_.heads * e0 * C;
    std::vector<double> values(C, 0.0);
    for (std::size_t r = 0; r < C; ++r)
      for (std::size_t col = 0; col < C; ++col) values[col] += feature[r] * value_weights_(r, col);
    content_logits_.push(logits);
    content_values_.push(values);
  }

  bool ready() const { return content_logits_.full(); }
  std::size_t filled() const { return content_logits_.size(); }

  // Pre-softmax logits A = A^p + A^s for one head, gm×e0, GM slots oldest first.
  Tensor2 logits(std::size_t head) const {
    Tensor2 out(dims_.gm, dims_.e0);
    for (std::size_t j = 0; j < content_logits_.size(); ++j) {
      const auto& ap = content_logits_[j];
      for (std::size_t i = 0; i < dims_.e0; ++i)
        out(j, i) = ap[head * dims_.e0 + i] + positional_logits_[head](j, i);
    }
    return out;
  }

  // Multi-head cross-attention output before the output projection
  // (concatenated heads, e0×C).
  Tensor2 attend() const {
    if (!ready()) throw std::logic_error("AttentionCache::attend before global memory is full");
    const std::size_t e0 = dims_.e0, gm = dims_.gm, dh = dims_.head_dim();
    Tensor2 out(e0, dims_.channels);
    std::vector<double> w(gm);
    for (std::size_t h = 0; h < dims_.heads; ++h) {
      for (std::size_t i = 0; i < e0; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < gm; ++j) {
          w[j] = content_logits_[j][h * e0 + i] + positional_logits_[h](j, i);
          mx = std::max(mx, w[j]);
        }
        double sum = 0.0;
        for (double& x : w) {
          x = std::exp(x - mx);
          sum += x;
        }
        for (std::size_t j = 0; j < gm; ++j) {
          const double a = w[j] / sum;
          const auto& cv = content_values_[j];
          for (std::size_t k = 0; k < dh; ++k) {
            const std::size_t col = h * dh + k;
            out(i, col) += a * (cv[col] + positional_values_(j, col));
          }
        }
      }
    }
    return out;
  }

  const Tensor2& fixed_queries() const { return fixed_queries_; }
  const Tensor2& positional_logits(std::size_t head) const { return positional_logits_[head]; }
  std::uint64_t logit_mult_adds() const { return logit_mult_adds_; }
  void reset_counter() { logit_mult_adds_ = 0; }
  const Fifo<std::vector<double>>& content_ring() const { return content_logits_; }

  friend bool operator==(const AttentionCache& a, const AttentionCache& b) {
    return a.fixed_queries_ == b.fixed_queries_ && a.key_queries_ == b.key_queries_ &&
           a.positional_logits_ == b.positional_logits_ && a.positional_values_ == b.positional_values_ &&
           a.content_logits_.to_vector() == b.content_logits_.to_vector() &&
           a.content_values_.to_vector() == b.content_values_.to_vector();
  }

 private:
  ModelDims dims_;
  Tensor2 fixed_queries_;
  std::vector<Tensor2> key_queries_;
  std::vector<Tensor2> positional_logits_;
  Tensor2 positional_values_;
  Tensor2 value_weights_;
  Fifo<std::vector<double>> content_logits_;
  Fifo<std::vector<double>> content_values_;
  std::uint64_t logit_mult_adds_ = 0;
};

inline AttentionCache build_attention_cache(const ModelParams& p) { return AttentionCache::build(p); }

// Reference (no cache) logits of the first encoder stage for one head:
// scale · Q_h K_hᵀ transposed to gm×e0.
inline Tensor2 enc1_logits_from_scratch(const ModelParams& params, std::span<const double> gm_values,
                                        std::size_t head) {
  Tape tape(false);
  const BoundParams p = bind(tape, params);
  const ModelDims& d = params.dims;
  const Var feats = embed_window(tape, gm_values, d.lm, p);
  const Var x1 = trd_self_stage(p.w.enc1_queries, p.w.enc1, d);
  const auto& a = p.w.enc1.cross_attn;
  const Var q = nn::slice_cols(nn::linear(x1, a.wq, a.bq), head * d.head_dim(), d.head_dim());
  const Var k = nn::slice_cols(nn::linear(feats, a.wk, a.bk), head * d.head_dim(), d.head_dim());
  return nn::transpose(nn::scale(nn::matmul_nt(q, k), attention_scale(d)).value());
}

enum class Phase { warmup, calibrating, detecting };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::warmup: return "warmup";
    case Phase::calibrating: return "calibrating";
    case Phase::detecting: return "detecting";
  }
  return "?";
}

inline Phase phase_from_string(const std::string& s) {
  if (s == "warmup") return Phase::warmup;
  if (s == "calibrating") return Phase::calibrating;
  if (s == "detecting") return Phase::detecting;
  throw std::invalid_argument("unknown phase " + s);
}

struct DetectionEvent {
  Timestamp t{};
  double score = std::numeric_limits<double>::quiet_NaN();      // NaN during warmup
  double threshold = std::numeric_limits<double>::quiet_NaN();  // NaN until calibrated
  int label = 0;
  Phase phase = Phase::warmup;
  std::optional<SpotClass> spot_class;
  std::vector<double> local_window_kw;  // raw LM readings, oldest first
  std::string error;                    // non-empty: reading rejected, state unchanged

  bool ok() const { return error.empty(); }
};

// Fields in fixed order; reals with 9 significant digits, null when absent.
inline std::string event_json(const DetectionEvent& e, bool with_window = false) {
  auto real = [](double x) { return std::isfinite(x) ? format_real(x) : std::string("null"); };
  std::string s = "{\"t\":\"" + format_timestamp(e.t) + "\",\"score\":" + real(e.score) +
                  ",\"threshold\":" + real(e.threshold) + ",\"label\":" + std::to_string(e.label) +
                  ",\"phase\":\"" + to_string(e.phase) + "\"";
  if (with_window) {
    s += ",\"lm_kw\":[";
    for (std::size_t i = 0; i < e.local_window_kw.size(); ++i) {
      if (i) s += ',';
      s += real(e.local_window_kw[i]);
    }
    s += ']';
  }
  return s + "}";
}

struct EngineConfig {
  std::size_t lm = 8;
  std::size_t gm = 32;
  std::size_t calibration_len = 1440;
  bool cache_enabled = true;
  SpotConfig spot;

  void validate() const {
    if (calibration_len < 100) throw std::invalid_argument("calibration_len must be >= 100");
    if (lm == 0 || lm >= gm) throw std::invalid_argument("require 0 < lm < gm");
    spot.validate();
  }
};

class Engine {
 public:
  Engine(Checkpoint model, EngineConfig cfg)
      : model_(std::move(model)), cfg_(cfg), stream_(cfg.lm, cfg.gm) {
    cfg_.validate();
    if (cfg_.lm != model_.params.dims.lm || cfg_.gm != model_.params.dims.gm)
      throw std::invalid_argument("engine lm/gm do not match the model checkpoint");
    if (cfg_.cache_enabled) cache_ = AttentionCache::build(model_.params);
  }

  const EngineConfig& config() const { return cfg_; }
  const Checkpoint& model() const { return model_; }
  Phase phase() const { return phase_; }
  const StreamState& stream() const { return stream_; }
  const std::optional<SpotState>& spot() const { return spot_; }
  const std::optional<AttentionCache>& cache() const { return cache_; }

  // Reconstruction of the current local window (normalized units).
  std::vector<double> reconstruct_current() const {
    const auto snap = stream_.snapshot();
    if (!snap) throw std::logic_error("reconstruct_current: warmup incomplete");
    const auto lm = normalized(snap->lm);
    if (!cache_) return reconstruct(model_.params, lm, normalized(snap->gm));

    Tape tape(false);
    const BoundParams p = bind(tape, model_.params);
    const ModelDims& d = model_.params.dims;
    const auto& a = p.w.enc1.cross_attn;
    const Var heads = tape.constant(cache_->attend());
    const Var cross = nn::linear(heads, a.wo, a.bo);
    const Var stage1 = trd_tail(tape.constant(cache_->fixed_queries()), cross, p.w.enc1, d);
    const Var encoded = trd_forward(p.w.enc2_queries, stage1, p.w.enc2, d);
    const Var lm_feat = embed_window(tape, lm, 0, p);
    return decode_local(lm_feat, encoded, p).value().data();
  }

  DetectionEvent step(const Reading& r) {
    DetectionEvent ev;
    ev.t = r.t;
    PushResult pushed;
    try {
      pushed = stream_.push(r);
    } catch (const std::exception& e) {
      ev.error = e.what();
      ev.phase = phase_;
      return ev;
    }
    if (cache_ && pushed.entered_gm)
      cache_->incremental_update(reading_feature(model_.params, normalize(pushed.entered_gm->power, model_.stats)));

    const auto snap = stream_.snapshot();
    if (!snap) {
      ev.phase = Phase::warmup;
      return ev;
    }
    if (phase_ == Phase::warmup) phase_ = Phase::calibrating;
    for (const auto& x : snap->lm) ev.local_window_kw.push_back(x.power);

    const auto recon = reconstruct_current();
    ev.score = anomaly_score(normalized(snap->lm), recon);
    if (!std::isfinite(ev.score)) throw nn::NumericError("non-finite anomaly score");

    if (phase_ == Phase::calibrating) {
      ev.phase = Phase::calibrating;
      calibration_scores_.push_back(ev.score);
      if (calibration_scores_.size() >= cfg_.calibration_len) {
        spot_ = pot_calibrate(calibration_scores_, cfg_.spot);
        calibration_scores_.clear();
        calibration_scores_.shrink_to_fit();
        phase_ = Phase::detecting;
        ev.threshold = spot_->z_q;
      }
      return ev;
    }

    ev.phase = Phase::detecting;
    const double threshold = spot_->z_q;
    const SpotClass cls = spot_step(*spot_, ev.score);
    ev.threshold = threshold;
    ev.spot_class = cls;
    ev.label = cls == SpotClass::anomaly ? 1 : 0;
    return ev;
  }

  json save_state() const;
  static Engine restore(const json& j);

 private:
  std::vector<double> normalized(const std::vector<Reading>& rs) const {
    std::vector<double> v;
    v.reserve(rs.size());
    for (const auto& r : rs) v.push_back(normalize(r.power, model_.stats));
    return v;
  }

  Checkpoint model_;
  EngineConfig cfg_;
  StreamState stream_;
  std::optional<AttentionCache> cache_;
  Phase phase_ = Phase::warmup;
  std::vector<double> calibration_scores_;
  std::optional<SpotState> spot_;
};

inline constexpr const char* kEngineFormat = "evdetect-engine";
inline constexpr int kEngineFormatVersion = 1;

namespace detail {

inline json readings_to_json(const std::vector<Reading>& rs) {
  json a = json::array();
  for (const auto& r : rs) a.push_back(json::array({to_minutes(r.t), r.power}));
  return a;
}

inline std::vector<Reading> readings_from_json(const json& a) {
  std::vector<Reading> rs;
  for (const auto& e : a) rs.push_back({minutes_since_epoch(e.at(0).get<long long>()), e.at(1).get<double>()});
  return rs;
}

inline json spot_config_to_json(const SpotConfig& c) {
  return json{{"q", c.q},
              {"init_level", c.init_level},
              {"refit_stride", c.refit_stride},
              {"peaks_cap", c.peaks_cap},
              {"min_peaks", c.min_peaks},
              {"min_calibration", c.min_calibration}};
}

inline SpotConfig spot_config_from_json(const json& j) {
  SpotConfig c;
  c.q = j.at("q").get<double>();
  c.init_level = j.at("init_level").get<double>();
  c.refit_stride = j.at("refit_stride").get<std::size_t>();
  c.peaks_cap = j.at("peaks_cap").get<std::size_t>();
  c.min_peaks = j.at("min_peaks").get<std::size_t>();
  c.min_calibration = j.at("min_calibration").get<std::size_t>();
  return c;
}

inline json spot_to_json(const SpotState& s) {
  return json{{"config", spot_config_to_json(s.config)},
              {"h", s.h},
              {"z_q", s.z_q},
              {"peaks", std::vector<double>(s.peaks.begin(), s.peaks.end())},
              {"n_peaks_total", s.n_peaks_total},
              {"k", s.k},
              {"peaks_since_refit", s.peaks_since_refit},
              {"gamma", s.fit.gamma},
              {"sigma", s.fit.sigma},
              {"n_excesses", s.fit.n_excesses},
              {"degenerate", s.degenerate}};
}

inline SpotState spot_from_json(const json& j) {
  SpotState s;
  s.config = spot_config_from_json(j.at("config"));
  s.h = j.at("h").get<double>();
  s.z_q = j.at("z_q").get<double>();
  const auto peaks = j.at("peaks").get<std::vector<double>>();
  s.peaks.assign(peaks.begin(), peaks.end());
  s.n_peaks_total = j.at("n_peaks_total").get<std::size_t>();
  s.k = j.at("k").get<std::size_t>();
  s.peaks_since_refit = j.at("peaks_since_refit").get<std::size_t>();
  s.fit = {j.at("gamma").get<double>(), j.at("sigma").get<double>(), j.at("n_excesses").get<std::size_t>()};
  s.degenerate = j.at("degenerate").get<bool>();
  return s;
}

}  // namespace detail

inline json Engine::save_state() const {
  json j{{"format", kEngineFormat},
         {"version", kEngineFormatVersion},
         {"model", to_json(model_)},
         {"config",
          {{"lm", cfg_.lm},
           {"gm", cfg_.gm},
           {"calibration_len", cfg_.calibration_len},
           {"cache_enabled", cfg_.cache_enabled}}},
         {"phase", to_string(phase_)},
         {"stream",
          {{"lm", detail::readings_to_json(stream_.lm_buffer().to_vector())},
           {"gm", detail::readings_to_json(stream_.gm_buffer().to_vector())},
           {"total_seen", stream_.total_seen()}}},
         {"calibration_scores", calibration_scores_}};
  j["spot_config"] = detail::spot_config_to_json(cfg_.spot);
  if (spot_) j["spot"] = detail::spot_to_json(*spot_);
  return j;
}

inline Engine Engine::restore(const json& j) {
  if (j.value("format", "") != kEngineFormat) throw std::runtime_error("not an engine checkpoint");
  if (j.at("version").get<int>() != kEngineFormatVersion)
    throw std::runtime_error("unsupported engine checkpoint version");
  EngineConfig cfg;
  const auto& c = j.at("config");
  cfg.lm = c.at("lm").get<std::size_t>();
  cfg.gm = c.at("gm").get<std::size_t>();
  cfg.calibration_len = c.at("calibration_len").get<std::size_t>();
  cfg.cache_enabled = c.at("cache_enabled").get<bool>();
  cfg.spot = detail::spot_config_from_json(j.at("spot_config"));
  Engine e(checkpoint_from_json(j.at("model")), cfg);
  const auto& s = j.at("stream");
  const auto lm = detail::readings_from_json(s.at("lm"));
  const auto gm = detail::readings_from_json(s.at("gm"));
  e.stream_ = StreamState::restore(cfg.lm, cfg.gm, lm, gm, s.at("total_seen").get<std::size_t>());
  if (e.cache_)
    for (const auto& r : gm)
      e.cache_->incremental_update(reading_feature(e.model_.params, normalize(r.power, e.model_.stats)));
  e.phase_ = phase_from_string(j.at("phase").get<std::string>());
  e.calibration_scores_ = j.at("calibration_scores").get<std::vector<double>>();
  if (j.contains("spot")) e.spot_ = detail::spot_from_json(j.at("spot"));
  return e;
}

}  // namespace evdetect
