// evdetect: train, detect, eval, synth and spot subcommands.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"

#include "evdetect/evdetect.hpp"

using namespace evdetect;
namespace fs = std::filesystem;

namespace {

// Bad flags, config keys or values. Exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::mutex g_err_mutex;

void warn(const std::string& msg) {
  std::lock_guard lock(g_err_mutex);
  std::cerr << "evdetect: warning: " << msg << '\n';
}

// Output sink: a file, or stdout for "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_ = std::make_unique<std::ofstream>(path);
    if (!*file_) throw std::runtime_error("cannot write " + path);
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }
  void finish() {
    stream().flush();
    if (!stream()) throw std::runtime_error("write failed");
  }

 private:
  std::unique_ptr<std::ofstream> file_;
};

// ---- config file -----------------------------------------------------------

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw UsageError(path + ":" + std::to_string(n) + ": expected key = value");
    std::string key(detail::trim(body.substr(0, eq)));
    std::string value(detail::trim(body.substr(eq + 1)));
    for (char& c : key)
      if (c == '_') c = '-';
    if (key.empty()) throw UsageError(path + ":" + std::to_string(n) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--") break;
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return {};
}

// File values become option defaults, so explicit flags still win.
void apply_config(CLI::App& app, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "config") throw UsageError("config files cannot include other config files");
    bool used = false;
    for (CLI::App* sub : app.get_subcommands([](CLI::App*) { return true; })) {
      for (CLI::Option* opt : sub->get_options()) {
        if (opt->get_single_name() != key) continue;
        try {
          opt->run_callback_for_default();  // flags skip this by default
          opt->default_val(value);
        } catch (const CLI::Error& e) {
          throw UsageError("config key '" + key + "': " + e.what());
        }
        used = true;
      }
    }
    if (!used) throw UsageError("unknown config key '" + key + "'");
  }
}

// ---- shared option blocks --------------------------------------------------

void add_spot_options(CLI::App* sub, SpotConfig& s) {
  sub->add_option("--q", s.q, "SPOT risk level")->capture_default_str();
  sub->add_option("--init-level", s.init_level, "Quantile used as the initial threshold h")->capture_default_str();
  sub->add_option("--refit-stride", s.refit_stride, "Refit the tail every j-th peak")->capture_default_str();
  sub->add_option("--peaks-cap", s.peaks_cap, "Keep at most this many peaks (0 = unbounded)")->capture_default_str();
}

std::string json_real(double x) { return std::isfinite(x) ? format_real(x) : std::string("null"); }

std::string metrics_json(const Metrics& m) {
  return "{\"precision\":" + json_real(m.precision) + ",\"recall\":" + json_real(m.recall) +
         ",\"f1\":" + json_real(m.f1) + ",\"roc_auc\":" + json_real(m.roc_auc) + "}";
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data, out, report;
  ModelDims dims;
  TrainOptions opt;
  std::size_t stride = 1;
  std::size_t max_train_minutes = kDefaultMaxTrainMinutes;
};

void setup_train(CLI::App& app, TrainArgs& a) {
  auto* sub = app.add_subcommand("train", "Train a model on the non-EV intervals of a meter CSV");
  sub->add_option("--data", a.data, "Meter CSV (timestamp,power_kw[,label])")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", a.out, "Checkpoint path to write")->required();
  sub->add_option("--report", a.report, "Also write the training report JSON here");
  sub->add_option("--lm", a.dims.lm, "Local memory size")->capture_default_str();
  sub->add_option("--gm", a.dims.gm, "Global memory size")->capture_default_str();
  sub->add_option("--channels", a.dims.channels, "Model width C")->capture_default_str();
  sub->add_option("--heads", a.dims.heads, "Attention heads")->capture_default_str();
  sub->add_option("--hidden", a.dims.hidden, "Feed-forward hidden size")->capture_default_str();
  sub->add_option("--e0", a.dims.e0, "First global encoding length")->capture_default_str();
  sub->add_option("--e1", a.dims.e1, "Second global encoding length")->capture_default_str();
  sub->add_option("--epochs", a.opt.hyper.epochs)->capture_default_str();
  sub->add_option("--batch", a.opt.hyper.batch_size)->capture_default_str();
  sub->add_option("--lr", a.opt.hyper.learning_rate)->capture_default_str();
  sub->add_option("--weight-decay", a.opt.hyper.weight_decay)->capture_default_str();
  sub->add_option("--patience", a.opt.patience, "Early-stop patience in epochs (0 disables)")->capture_default_str();
  sub->add_option("--seed", a.opt.seed)->capture_default_str();
  sub->add_option("--stride", a.stride, "Take every n-th training window")->capture_default_str()->check(
      CLI::PositiveNumber);
  sub->add_option("--max-train-minutes", a.max_train_minutes, "Cap on non-EV minutes used")->capture_default_str();
}

json report_json(const TrainReport& r) {
  return json{{"initial_loss", r.initial_loss}, {"final_loss", r.final_loss},
              {"epoch_losses", r.epoch_losses}, {"epochs_run", r.epoch_losses.size()},
              {"stopped_early", r.stopped_early}, {"windows", r.windows},
              {"steps", r.steps},               {"seed", r.seed},
              {"wall_seconds", r.wall_seconds}, {"warnings", r.warnings}};
}

int run_train(const TrainArgs& a) {
  try {
    a.dims.validate();
    a.opt.hyper.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const MeterSeries series = read_meter_csv_file(a.data);
  const TrainingData td = prepare_training_data(series, a.dims.lm, a.dims.gm, a.stride, a.max_train_minutes);
  if (!series.has_labels()) warn("no label column; training on every reading");
  if (td.stats.std_fallback) warn("training data is constant; std set to 1");
  std::cerr << "evdetect: training on " << td.windows.count() << " windows from " << td.readings
            << " non-EV readings\n";
  json rep;
  try {
    const TrainResult res = train(td.windows, a.dims, a.opt);
    save_checkpoint(Checkpoint{res.params, td.stats}, a.out);
    rep = report_json(res.report);
  } catch (const TrainingAborted& e) {
    rep = report_json(e.report());
    rep["aborted"] = e.what();
    std::cout << rep.dump() << '\n';
    throw;
  }
  for (const auto& w : rep["warnings"]) warn(w.get<std::string>());
  if (!a.report.empty()) {
    std::ofstream out(a.report);
    if (!(out << rep.dump(2) << '\n')) throw std::runtime_error("cannot write " + a.report);
  }
  std::cout << rep.dump() << '\n';
  return 0;
}

// ---- detect ----------------------------------------------------------------

struct DetectArgs {
  std::string model;
  std::vector<std::string> inputs{"-"};
  std::string output = "-";
  std::string output_dir;
  std::string latency_log;
  std::string state_in, state_out;
  EngineConfig engine;
  bool no_cache = false;
  bool with_window = false;
  unsigned jobs = 1;
};

void setup_detect(CLI::App& app, DetectArgs& a) {
  auto* sub = app.add_subcommand("detect", "Stream meter readings through a trained model; JSONL events out");
  sub->add_option("--model", a.model, "Checkpoint from 'train'")->required()->check(CLI::ExistingFile);
  sub->add_option("--input", a.inputs, "Meter CSV file(s); '-' reads stdin line by line")
      ->capture_default_str()
      ->delimiter(',')
      ->check(CLI::ExistingFile | CLI::IsMember({"-"}));
  sub->add_option("--output", a.output, "Events file for a single input ('-' = stdout)")->capture_default_str();
  sub->add_option("--output-dir", a.output_dir, "Directory for per-input event files (multiple inputs)");
  sub->add_option("--calibration-len", a.engine.calibration_len, "Post-warmup readings used to calibrate SPOT")
      ->capture_default_str();
  add_spot_options(sub, a.engine.spot);
  sub->add_flag("--no-cache", a.no_cache, "Recompute the global encoder from scratch every step");
  sub->add_flag("--with-window", a.with_window, "Include the local window (kW) in each event");
  sub->add_option("--latency-log", a.latency_log, "Write per-reading step latency CSV here");
  sub->add_option("--state-in", a.state_in, "Resume from a saved engine state")->check(CLI::ExistingFile);
  sub->add_option("--state-out", a.state_out, "Save the engine state after the input ends");
  sub->add_option("--jobs", a.jobs, "Parallel engines when several inputs are given")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

struct StreamSummary {
  std::size_t readings = 0, events = 0, alarms = 0, rejected = 0;
  double latency_sum = 0.0, latency_max = 0.0;
};

StreamSummary detect_stream(const DetectArgs& a, const Checkpoint& ckpt, const std::string& input,
                            const std::string& output, const std::string& latency_path, const std::string& name) {
  std::optional<Engine> engine;
  if (!a.state_in.empty()) {
    std::ifstream in(a.state_in);
    if (!in) throw std::runtime_error("cannot open " + a.state_in);
    engine.emplace(Engine::restore(json::parse(in)));
    if (!(engine->model() == ckpt)) throw UsageError("--state-in was saved with a different model");
  } else {
    EngineConfig cfg = a.engine;
    cfg.lm = ckpt.params.dims.lm;
    cfg.gm = ckpt.params.dims.gm;
    cfg.cache_enabled = !a.no_cache;
    engine.emplace(ckpt, cfg);
  }

  std::ifstream file;
  if (input != "-") {
    file.open(input);
    if (!file) throw std::runtime_error("cannot open " + input);
  }
  std::istream& in = input == "-" ? std::cin : file;
  Output out(output);
  std::unique_ptr<std::ofstream> lat;
  if (!latency_path.empty()) {
    lat = std::make_unique<std::ofstream>(latency_path);
    if (!*lat) throw std::runtime_error("cannot write " + latency_path);
    *lat << "timestamp,latency_s\n";
  }

  StreamSummary sum;
  bool warned_calibration_ev = false;
  MeterRowReader reader(in);
  MeterRowReader::Row row;
  while (reader.next(row)) {
    if (row.segment_start && sum.readings > 0)
      warn(name + ": gap longer than " + std::to_string(kMaxFillGapMinutes) + " min before " +
           format_timestamp(row.reading.t) + "; memories still hold pre-gap readings");
    const auto t0 = std::chrono::steady_clock::now();
    const DetectionEvent ev = engine->step(row.reading);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++sum.readings;
    if (!ev.ok()) {
      ++sum.rejected;
      warn(name + ": line " + std::to_string(reader.line()) + ": " + ev.error);
      continue;
    }
    sum.latency_sum += dt;
    sum.latency_max = std::max(sum.latency_max, dt);
    if (lat) *lat << format_timestamp(ev.t) << ',' << format_real(dt) << '\n';
    if (ev.phase == Phase::calibrating && row.label.value_or(0) == 1 && !warned_calibration_ev) {
      warned_calibration_ev = true;
      warn(name + ": labels show EV charging at " + format_timestamp(ev.t) +
           " inside the calibration segment; the threshold may be too high");
    }
    if (ev.phase == Phase::warmup) continue;
    out.stream() << event_json(ev, a.with_window) << '\n';
    if (input == "-") out.stream().flush();
    ++sum.events;
    sum.alarms += static_cast<std::size_t>(ev.label);
  }
  out.finish();
  if (engine->phase() == Phase::calibrating)
    warn(name + ": input ended before calibration finished; no detections were made");
  if (!a.state_out.empty()) {
    std::ofstream so(a.state_out);
    if (!(so << engine->save_state().dump() << '\n')) throw std::runtime_error("cannot write " + a.state_out);
  }
  return sum;
}

int run_detect(const DetectArgs& a) {
  if (a.inputs.empty()) throw UsageError("--input needs at least one path");
  const bool multi = a.inputs.size() > 1;
  if (multi && a.output_dir.empty()) throw UsageError("several inputs need --output-dir");
  if (multi && (!a.state_in.empty() || !a.state_out.empty()))
    throw UsageError("--state-in/--state-out take a single input");
  if (std::count(a.inputs.begin(), a.inputs.end(), "-") > (multi ? 0 : 1))
    throw UsageError("stdin can only be used as the sole input");
  EngineConfig probe = a.engine;
  try {
    probe.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Checkpoint ckpt = load_checkpoint(a.model);

  auto stem = [](const std::string& p) { return fs::path(p).stem().string(); };
  if (multi) fs::create_directories(a.output_dir);
  std::vector<StreamSummary> sums(a.inputs.size());
  std::vector<std::string> errors(a.inputs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < a.inputs.size();) {
      const std::string& input = a.inputs[i];
      const std::string name = input == "-" ? "stdin" : input;
      std::string out = a.output, lat = a.latency_log;
      if (multi) {
        out = (fs::path(a.output_dir) / (stem(input) + ".events.jsonl")).string();
        if (!lat.empty()) lat = (fs::path(a.output_dir) / (stem(input) + ".latency.csv")).string();
      }
      try {
        sums[i] = detect_stream(a, ckpt, input, out, lat, name);
      } catch (const std::exception& e) {
        errors[i] = name + ": " + e.what();
      }
    }
  };
  const unsigned n_threads = std::min<unsigned>(a.jobs, static_cast<unsigned>(a.inputs.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  bool failed = false;
  for (std::size_t i = 0; i < a.inputs.size(); ++i) {
    if (!errors[i].empty()) {
      std::cerr << "evdetect: error: " << errors[i] << '\n';
      failed = true;
      continue;
    }
    const auto& s = sums[i];
    const double mean = s.readings > s.rejected ? s.latency_sum / static_cast<double>(s.readings - s.rejected) : 0.0;
    std::cerr << "evdetect: " << (a.inputs[i] == "-" ? "stdin" : a.inputs[i]) << ": " << s.readings
              << " readings, " << s.events << " events, " << s.alarms << " alarms; step latency mean "
              << format_real(mean) << " s, max " << format_real(s.latency_max) << " s\n";
  }
  return failed ? 1 : 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> events, labels, scores;
  std::optional<double> threshold;
  bool per_input = false;
};

void setup_eval(CLI::App& app, EvalArgs& a) {
  auto* sub = app.add_subcommand("eval", "Pointwise precision, recall, F1 and ROC-AUC");
  auto* ev = sub->add_option("--events", a.events, "Event JSONL from 'detect'")->delimiter(',')->check(
      CLI::ExistingFile);
  sub->add_option("--labels", a.labels, "Labelled meter CSV, one per --events file")
      ->delimiter(',')
      ->check(CLI::ExistingFile)
      ->needs(ev);
  auto* sc = sub->add_option("--scores", a.scores, "CSV with header score,label[,pred]")
                 ->delimiter(',')
                 ->check(CLI::ExistingFile)
                 ->excludes(ev);
  sub->add_option("--threshold", a.threshold, "Predict score > threshold when a score CSV has no pred column")
      ->needs(sc);
  sub->add_flag("--per-input", a.per_input, "Also print one metrics line per input before the mean");
}

struct Scored {
  std::vector<int> labels, preds;
  std::vector<double> scores;
};

Scored join_events(const std::string& events_path, const std::string& labels_path) {
  const MeterSeries truth = read_meter_csv_file(labels_path);
  if (!truth.has_labels()) throw UsageError(labels_path + " has no label column");
  std::unordered_map<long long, int> by_minute;
  for (std::size_t i = 0; i < truth.size(); ++i) by_minute[to_minutes(truth.readings[i].t)] = truth.labels[i];
  std::ifstream in(events_path);
  if (!in) throw std::runtime_error("cannot open " + events_path);
  Scored s;
  std::string line;
  std::size_t n = 0, unmatched = 0;
  while (std::getline(in, line)) {
    ++n;
    if (detail::trim(line).empty()) continue;
    json e;
    try {
      e = json::parse(line);
    } catch (const json::exception& ex) {
      throw std::runtime_error(events_path + ":" + std::to_string(n) + ": " + ex.what());
    }
    if (e.at("phase").get<std::string>() != "detecting" || e.at("score").is_null()) continue;
    const auto it = by_minute.find(to_minutes(parse_timestamp(e.at("t").get<std::string>())));
    if (it == by_minute.end()) {
      ++unmatched;
      continue;
    }
    s.labels.push_back(it->second);
    s.preds.push_back(e.at("label").get<int>());
    s.scores.push_back(e.at("score").get<double>());
  }
  if (unmatched) warn(events_path + ": " + std::to_string(unmatched) + " events have no label and were skipped");
  return s;
}

Scored read_score_csv(const std::string& path, std::optional<double> threshold) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  Scored s;
  std::string line;
  std::size_t n = 0;
  bool header = false, has_pred = false;
  while (std::getline(in, line)) {
    ++n;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto f = detail::split_commas(body);
    if (!header) {
      header = true;
      if (f.size() < 2 || f.size() > 3 || f[0] != "score" || f[1] != "label" || (f.size() == 3 && f[2] != "pred"))
        throw CsvError(n, "expected header 'score,label[,pred]'");
      has_pred = f.size() == 3;
      if (!has_pred && !threshold) throw UsageError(path + " has no pred column; pass --threshold");
      continue;
    }
    if (f.size() != (has_pred ? 3u : 2u)) throw CsvError(n, "wrong number of fields");
    const double score = detail::parse_double(f[0], n, "score");
    if (f[1] != "0" && f[1] != "1") throw CsvError(n, "label must be 0 or 1");
    s.scores.push_back(score);
    s.labels.push_back(f[1] == "1");
    if (has_pred) {
      if (f[2] != "0" && f[2] != "1") throw CsvError(n, "pred must be 0 or 1");
      s.preds.push_back(f[2] == "1");
    } else {
      s.preds.push_back(score > *threshold);
    }
  }
  if (!header) throw CsvError(0, "empty input");
  return s;
}

int run_eval(const EvalArgs& a) {
  std::vector<Scored> inputs;
  if (!a.events.empty()) {
    if (a.labels.size() != a.events.size()) throw UsageError("give one --labels file per --events file");
    for (std::size_t i = 0; i < a.events.size(); ++i) inputs.push_back(join_events(a.events[i], a.labels[i]));
  } else if (!a.scores.empty()) {
    for (const auto& p : a.scores) inputs.push_back(read_score_csv(p, a.threshold));
  } else {
    throw UsageError("eval needs --events with --labels, or --scores");
  }
  std::vector<Metrics> ms;
  for (const auto& s : inputs) {
    if (s.labels.empty()) throw std::runtime_error("an input has no scorable points");
    ms.push_back(evaluate(s.labels, s.preds, s.scores));
    if (a.per_input && inputs.size() > 1) std::cout << metrics_json(ms.back()) << '\n';
  }
  std::cout << metrics_json(mean_metrics(ms)) << '\n';
  return 0;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  SynthConfig cfg;
  std::string start = "2018-01-01T00:00";
  std::string out = "-";
};

void setup_synth(CLI::App& app, SynthArgs& a) {
  auto* sub = app.add_subcommand("synth", "Generate a labelled synthetic household meter CSV");
  auto& c = a.cfg;
  sub->add_option("--days", c.days)->capture_default_str();
  sub->add_option("--start", a.start, "First timestamp (UTC)")->capture_default_str();
  sub->add_option("--seed", c.seed)->capture_default_str();
  sub->add_option("--base-level", c.base_level, "kW")->capture_default_str();
  sub->add_option("--morning-peak", c.morning_peak, "kW above base")->capture_default_str();
  sub->add_option("--evening-peak", c.evening_peak, "kW above base")->capture_default_str();
  sub->add_option("--day-variation", c.day_variation)->capture_default_str();
  sub->add_option("--noise-std", c.noise_std, "kW")->capture_default_str();
  sub->add_option("--ev-power", c.ev_power, "kW")->capture_default_str();
  sub->add_option("--session-rate", c.session_rate, "Charging sessions per day (0 = none)")->capture_default_str();
  sub->add_option("--min-duration", c.min_duration, "minutes")->capture_default_str();
  sub->add_option("--max-duration", c.max_duration, "minutes")->capture_default_str();
  sub->add_option("--quiet-prefix-minutes", c.quiet_prefix_minutes, "No sessions start before this offset")
      ->capture_default_str();
  sub->add_option("--out", a.out, "CSV path ('-' = stdout)")->capture_default_str();
}

int run_synth(SynthArgs a) {
  try {
    a.cfg.start = parse_timestamp(a.start);
    a.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  Output out(a.out);
  write_meter_csv(out.stream(), synth_household(a.cfg));
  out.finish();
  return 0;
}

// ---- spot ------------------------------------------------------------------

struct SpotArgs {
  std::string scores;
  std::string out = "-";
  SpotConfig spot;
  std::size_t calibration_len = 1000;
};

void setup_spot(CLI::App& app, SpotArgs& a) {
  auto* sub = app.add_subcommand("spot", "Run streaming peaks-over-threshold on a score column; JSONL trace out");
  sub->add_option("--scores", a.scores, "CSV whose first column is 'score'; '-' reads stdin")
      ->required()
      ->check(CLI::ExistingFile | CLI::IsMember({"-"}));
  add_spot_options(sub, a.spot);
  sub->add_option("--calibration-len", a.calibration_len, "Leading scores used for the initial fit")
      ->capture_default_str();
  sub->add_option("--out", a.out, "Trace path ('-' = stdout)")->capture_default_str();
}

int run_spot(const SpotArgs& a) {
  try {
    a.spot.validate();
    if (a.calibration_len < a.spot.min_calibration)
      throw std::invalid_argument("--calibration-len must be >= " + std::to_string(a.spot.min_calibration));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::ifstream file;
  if (a.scores != "-") file.open(a.scores);
  std::istream& in = a.scores == "-" ? std::cin : file;
  if (!in) throw std::runtime_error("cannot open " + a.scores);
  Output out(a.out);
  std::vector<double> calib;
  std::optional<SpotState> st;
  std::string line;
  std::size_t n = 0, idx = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++n;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto f = detail::split_commas(body);
    if (!header) {
      header = true;
      if (f[0] != "score") throw CsvError(n, "first column must be 'score'");
      continue;
    }
    const double x = detail::parse_double(f[0], n, "score");
    const std::size_t i = idx++;
    if (!st) {
      calib.push_back(x);
      if (calib.size() == a.calibration_len) {
        st = pot_calibrate(calib, a.spot);
        for (const auto& w : st->warnings) warn(w);
        calib.clear();
      }
      continue;
    }
    const double threshold = st->z_q;
    const SpotClass cls = spot_step(*st, x);
    out.stream() << "{\"i\":" << i << ",\"score\":" << json_real(x) << ",\"threshold\":" << json_real(threshold)
                 << ",\"class\":\"" << to_string(cls) << "\",\"h\":" << json_real(st->h) << ",\"k\":" << st->k
                 << ",\"peaks\":" << st->n_peaks_total << "}\n";
  }
  if (!header) throw CsvError(0, "empty input");
  if (!st) throw std::runtime_error("fewer than --calibration-len scores; nothing to threshold");
  out.finish();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online EV charging detection from household smart-meter readings"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "Flat key = value file; flags override it")->check(CLI::ExistingFile);

  TrainArgs train_args;
  DetectArgs detect_args;
  EvalArgs eval_args;
  SynthArgs synth_args;
  SpotArgs spot_args;
  setup_train(app, train_args);
  setup_detect(app, detect_args);
  setup_eval(app, eval_args);
  setup_synth(app, synth_args);
  setup_spot(app, spot_args);

  try {
    if (const auto path = find_config_arg(argc, argv); !path.empty()) apply_config(app, read_config_file(path));
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "evdetect: " << e.what() << "\nRun with --help for usage.\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "evdetect: " << e.what() << '\n';
    return 2;
  }

  try {
    if (app.got_subcommand("train")) return run_train(train_args);
    if (app.got_subcommand("detect")) return run_detect(detect_args);
    if (app.got_subcommand("eval")) return run_eval(eval_args);
    if (app.got_subcommand("synth")) return run_synth(synth_args);
    if (app.got_subcommand("spot")) return run_spot(spot_args);
  } catch (const UsageError& e) {
    std::cerr << "evdetect: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "evdetect: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
