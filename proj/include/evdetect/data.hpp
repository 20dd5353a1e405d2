#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "evdetect/memory.hpp"
#include "evdetect/tensor.hpp"
#include "evdetect/time.hpp"

namespace evdetect {

class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t line, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// A minute-grid meter series. Gaps up to kMaxFillGapMinutes are
// forward-filled (flagged in `filled`); longer gaps start a new segment.
struct MeterSeries {
  std::vector<Reading> readings;
  std::vector<std::uint8_t> labels;  // empty when the source had no label column
  std::vector<std::uint8_t> filled;
  std::vector<std::size_t> segment_starts;

  bool has_labels() const { return !labels.empty(); }
  std::size_t size() const { return readings.size(); }

  std::vector<double> powers() const {
    std::vector<double> p;
    p.reserve(readings.size());
    for (const auto& r : readings) p.push_back(r.power);
    return p;
  }

  // Half-open index ranges of each contiguous segment.
  std::vector<std::pair<std::size_t, std::size_t>> segments() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < segment_starts.size(); ++i) {
      const std::size_t end = i + 1 < segment_starts.size() ? segment_starts[i + 1] : readings.size();
      out.emplace_back(segment_starts[i], end);
    }
    return out;
  }
};

inline constexpr long long kMaxFillGapMinutes = 60;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t c = line.find(',', pos);
    out.push_back(trim(line.substr(pos, c == std::string_view::npos ? std::string_view::npos : c - pos)));
    if (c == std::string_view::npos) break;
    pos = c + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, std::size_t line, const char* what) {
  const std::string buf(s);
  char* end = nullptr;
  const double v = std::strtod(buf.c_str(), &end);
  if (buf.empty() || end != buf.c_str() + buf.size() || !std::isfinite(v))
    throw CsvError(line, std::string("invalid ") + what + " '" + buf + "'");
  return v;
}

}  // namespace detail

// Incremental parser for `timestamp,power_kw[,label]` rows; shared by the file
// reader and the line-by-line streaming mode.
class MeterCsvParser {
 public:
  // Returns false for the header line (consumed) and blank lines.
  bool parse_line(std::string_view raw, Reading& out, std::optional<std::uint8_t>& label) {
    ++line_;
    const auto line = detail::trim(raw);
    if (line.empty()) return false;
    const auto fields = detail::split_commas(line);
    if (!header_seen_) {
      header_seen_ = true;
      if (fields.size() < 2 || fields.size() > 3 || fields[0] != "timestamp" || fields[1] != "power_kw" ||
          (fields.size() == 3 && fields[2] != "label"))
        throw CsvError(line_, "expected header 'timestamp,power_kw[,label]'");
      has_label_ = fields.size() == 3;
      return false;
    }
    if (fields.size() != (has_label_ ? 3u : 2u)) throw CsvError(line_, "wrong number of fields");
    try {
      out.t = parse_timestamp(fields[0]);
    } catch (const std::invalid_argument& e) {
      throw CsvError(line_, e.what());
    }
    out.power = detail::parse_double(fields[1], line_, "power_kw");
    label.reset();
    if (has_label_) {
      if (fields[2] == "0") label = 0;
      else if (fields[2] == "1") label = 1;
      else throw CsvError(line_, "label must be 0 or 1");
    }
    return true;
  }

  std::size_t line() const { return line_; }
  bool has_label() const { return has_label_; }

 private:
  std::size_t line_ = 0;
  bool header_seen_ = false;
  bool has_label_ = false;
};

// One reading at a time, with short gaps forward-filled. Used for live input.
class MeterRowReader {
 public:
  struct Row {
    Reading reading;
    std::optional<std::uint8_t> label;
    bool filled = false;
    bool segment_start = false;  // first row, or first row after an unfillable gap
  };

  explicit MeterRowReader(std::istream& in) : in_(in) {}

  bool next(Row& out) {
    if (pending_fill_ > 0) {
      --pending_fill_;
      prev_.t += std::chrono::minutes(1);
      out = Row{prev_, prev_label_, true, false};
      return true;
    }
    if (held_) {
      out = *held_;
      held_.reset();
      remember(out);
      return true;
    }
    std::string line;
    Reading r;
    std::optional<std::uint8_t> label;
    while (std::getline(in_, line)) {
      if (!parser_.parse_line(line, r, label)) continue;
      Row row{r, label, false, !started_};
      if (started_) {
        const long long gap = to_minutes(r.t) - to_minutes(prev_.t);
        if (gap <= 0) throw CsvError(parser_.line(), "timestamps not strictly increasing");
        if (gap > kMaxFillGapMinutes + 1) {
          row.segment_start = true;
        } else if (gap > 1) {
          pending_fill_ = gap - 2;
          held_ = row;
          prev_.t += std::chrono::minutes(1);
          out = Row{prev_, prev_label_, true, false};
          return true;
        }
      }
      started_ = true;
      remember(row);
      out = row;
      return true;
    }
    if (parser_.line() == 0) throw CsvError(0, "empty input");
    return false;
  }

  bool has_label() const { return parser_.has_label(); }
  std::size_t line() const { return parser_.line(); }

 private:
  void remember(const Row& row) {
    prev_ = row.reading;
    prev_label_ = parser_.has_label() ? std::optional<std::uint8_t>(row.label.value_or(0)) : std::nullopt;
  }

  std::istream& in_;
  MeterCsvParser parser_;
  bool started_ = false;
  Reading prev_;
  std::optional<std::uint8_t> prev_label_;
  long long pending_fill_ = 0;
  std::optional<Row> held_;
};

inline MeterSeries read_meter_csv(std::istream& in) {
  MeterSeries s;
  MeterRowReader reader(in);
  MeterRowReader::Row row;
  while (reader.next(row)) {
    if (row.segment_start) s.segment_starts.push_back(s.readings.size());
    s.readings.push_back(row.reading);
    s.filled.push_back(row.filled ? 1 : 0);
    if (row.label) s.labels.push_back(*row.label);
  }
  return s;
}

inline MeterSeries read_meter_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_meter_csv(in);
}

// Reals are written with 9 significant digits.
inline std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

inline void write_meter_csv(std::ostream& out, const MeterSeries& s) {
  out << (s.has_labels() ? "timestamp,power_kw,label\n" : "timestamp,power_kw\n");
  for (std::size_t i = 0; i < s.readings.size(); ++i) {
    out << format_timestamp(s.readings[i].t) << ',' << format_real(s.readings[i].power);
    if (s.has_labels()) out << ',' << static_cast<int>(s.labels[i]);
    out << '\n';
  }
}

struct SeriesStats {
  double mean = 0.0;
  double std = 1.0;
  std::size_t count = 0;
  bool std_fallback = false;  // constant input: std forced to 1

  friend bool operator==(const SeriesStats&, const SeriesStats&) = default;
};

// Population mean and standard deviation.
inline SeriesStats fit_stats(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("fit_stats: empty series");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  SeriesStats s{mean, std::sqrt(var), x.size(), false};
  if (!(s.std > 1e-12 * std::max(1.0, std::abs(mean)))) {
    s.std = 1.0;
    s.std_fallback = true;
  }
  return s;
}

inline double normalize(double x, const SeriesStats& s) { return (x - s.mean) / s.std; }
inline double denormalize(double z, const SeriesStats& s) { return z * s.std + s.mean; }

inline std::vector<double> normalize(std::span<const double> x, const SeriesStats& s) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = normalize(x[i], s);
  return out;
}

inline std::vector<double> denormalize(std::span<const double> z, const SeriesStats& s) {
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = denormalize(z[i], s);
  return out;
}

// Row i holds the gm window followed immediately by the lm window.
struct WindowBatch {
  nn::Tensor2 lm_windows;  // count×lm
  nn::Tensor2 gm_windows;  // count×gm

  std::size_t count() const { return lm_windows.rows(); }

  WindowBatch select(std::span<const std::size_t> rows) const {
    WindowBatch b{nn::Tensor2(rows.size(), lm_windows.cols()), nn::Tensor2(rows.size(), gm_windows.cols())};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(lm_windows.row(rows[i]).begin(), lm_windows.cols(), b.lm_windows.row(i).begin());
      std::copy_n(gm_windows.row(rows[i]).begin(), gm_windows.cols(), b.gm_windows.row(i).begin());
    }
    return b;
  }

  void append(const WindowBatch& o) {
    auto cat = [](const nn::Tensor2& a, const nn::Tensor2& b) {
      if (a.empty()) return b;
      std::vector<double> d = a.data();
      d.insert(d.end(), b.data().begin(), b.data().end());
      return nn::Tensor2(a.rows() + b.rows(), a.cols(), std::move(d));
    };
    if (o.count() == 0) return;
    lm_windows = cat(lm_windows, o.lm_windows);
    gm_windows = cat(gm_windows, o.gm_windows);
  }
};

inline std::size_t window_count(std::size_t len, std::size_t lm, std::size_t gm, std::size_t stride) {
  if (len < lm + gm) return 0;
  return (len - lm - gm) / stride + 1;
}

inline WindowBatch sliding_windows(std::span<const double> series, std::size_t lm, std::size_t gm,
                                   std::size_t stride = 1) {
  if (stride == 0) throw std::invalid_argument("sliding_windows: stride must be >= 1");
  if (series.size() < lm + gm)
    throw std::invalid_argument("sliding_windows: series shorter than lm+gm");
  const std::size_t n = window_count(series.size(), lm, gm, stride);
  WindowBatch b{nn::Tensor2(n, lm), nn::Tensor2(n, gm)};
  for (std::size_t w = 0; w < n; ++w) {
    const std::size_t off = w * stride;
    std::copy_n(series.begin() + static_cast<std::ptrdiff_t>(off), gm, b.gm_windows.row(w).begin());
    std::copy_n(series.begin() + static_cast<std::ptrdiff_t>(off + gm), lm, b.lm_windows.row(w).begin());
  }
  return b;
}

// Residential base load (morning and evening bumps plus Gaussian noise) with
// rectangular EV charging sessions at Poisson arrival times.
struct SynthConfig {
  std::size_t days = 28;
  Timestamp start = parse_timestamp("2018-01-01T00:00");
  double base_level = 0.5;    // kW
  double morning_peak = 0.45; // kW above base around 07:30
  double evening_peak = 0.7;  // kW above base around 19:00
  double day_variation = 0.15;  // relative day-to-day amplitude jitter
  double noise_std = 0.05;    // kW
  double ev_power = 3.3;      // kW
  double session_rate = 1.0 / 1.5;  // sessions per day
  std::size_t min_duration = 60;    // minutes
  std::size_t max_duration = 240;
  std::size_t quiet_prefix_minutes = 0;  // no sessions start before this offset
  std::uint64_t seed = 1;

  void validate() const {
    if (!(ev_power > 0.0)) throw std::invalid_argument("ev_power must be > 0");
    if (min_duration < 15 || max_duration < min_duration)
      throw std::invalid_argument("durations must satisfy 15 <= min <= max");
    if (session_rate < 0.0) throw std::invalid_argument("session_rate must be >= 0");
    if (days == 0) throw std::invalid_argument("days must be >= 1");
  }
};

inline MeterSeries synth_household(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const std::size_t minutes = cfg.days * 1440;
  MeterSeries s;
  s.readings.resize(minutes);
  s.labels.assign(minutes, 0);
  s.filled.assign(minutes, 0);
  s.segment_starts = {0};

  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  std::uniform_real_distribution<double> jitter(1.0 - cfg.day_variation, 1.0 + cfg.day_variation);
  auto bump = [](double hour, double centre, double width) {
    const double d = (hour - centre) / width;
    return std::exp(-0.5 * d * d);
  };
  double morning = 0.0, evening = 0.0;
  for (std::size_t m = 0; m < minutes; ++m) {
    if (m % 1440 == 0) {
      morning = cfg.morning_peak * jitter(rng);
      evening = cfg.evening_peak * jitter(rng);
    }
    const double hour = static_cast<double>(m % 1440) / 60.0;
    const double base = cfg.base_level + morning * bump(hour, 7.5, 1.0) + evening * bump(hour, 19.0, 1.5);
    s.readings[m] = {cfg.start + std::chrono::minutes(static_cast<long long>(m)),
                     std::max(0.05, base + noise(rng))};
  }

  if (cfg.session_rate > 0.0) {
    std::exponential_distribution<double> gap(cfg.session_rate / 1440.0);
    std::uniform_int_distribution<std::size_t> duration(cfg.min_duration, cfg.max_duration);
    double t = static_cast<double>(cfg.quiet_prefix_minutes) + gap(rng);
    while (t < static_cast<double>(minutes)) {
      const auto begin = static_cast<std::size_t>(t);
      const std::size_t end = std::min(minutes, begin + duration(rng));
      for (std::size_t m = begin; m < end; ++m) {
        s.readings[m].power += cfg.ev_power;
        s.labels[m] = 1;
      }
      t = static_cast<double>(end) + gap(rng);
    }
  }
  return s;
}

}  // namespace evdetect
