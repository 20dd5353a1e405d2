#pragma once

// Model checkpoints: a versioned JSON document holding dims, normalization
// statistics and every weight array. Doubles are written in shortest
// round-trip form, so load(save(x)) is bit-exact.

#include <fstream>
#include <string>

#include "json.hpp"

#include "evdetect/data.hpp"
#include "evdetect/model.hpp"

namespace evdetect {

using json = nlohmann::json;

inline constexpr const char* kModelFormat = "evdetect-model";
inline constexpr int kModelFormatVersion = 1;

struct Checkpoint {
  ModelParams params;
  SeriesStats stats;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline json to_json(const ModelDims& d) {
  return json{{"channels", d.channels}, {"heads", d.heads}, {"hidden", d.hidden}, {"lm", d.lm},
              {"gm", d.gm},             {"e0", d.e0},       {"e1", d.e1},         {"ln_eps", d.ln_eps}};
}

inline ModelDims dims_from_json(const json& j) {
  ModelDims d;
  d.channels = j.at("channels").get<std::size_t>();
  d.heads = j.at("heads").get<std::size_t>();
  d.hidden = j.at("hidden").get<std::size_t>();
  d.lm = j.at("lm").get<std::size_t>();
  d.gm = j.at("gm").get<std::size_t>();
  d.e0 = j.at("e0").get<std::size_t>();
  d.e1 = j.at("e1").get<std::size_t>();
  d.ln_eps = j.at("ln_eps").get<double>();
  d.validate();
  return d;
}

inline json to_json(const SeriesStats& s) {
  return json{{"mean", s.mean}, {"std", s.std}, {"count", s.count}, {"std_fallback", s.std_fallback}};
}

inline SeriesStats stats_from_json(const json& j) {
  return SeriesStats{j.at("mean").get<double>(), j.at("std").get<double>(), j.at("count").get<std::size_t>(),
                     j.at("std_fallback").get<bool>()};
}

inline json to_json(const Checkpoint& c) {
  json params = json::array();
  auto& w = const_cast<ModelWeights<Tensor2>&>(c.params.w);
  visit_weights(w, [&](const std::string& name, const Tensor2& t) {
    params.push_back(json{{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"data", t.data()}});
  });
  return json{{"format", kModelFormat},
              {"version", kModelFormatVersion},
              {"dims", to_json(c.params.dims)},
              {"stats", to_json(c.stats)},
              {"params", std::move(params)}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", "") != kModelFormat) throw std::runtime_error("not a model checkpoint");
  if (j.at("version").get<int>() != kModelFormatVersion)
    throw std::runtime_error("unsupported model checkpoint version");
  Checkpoint c;
  c.params.dims = dims_from_json(j.at("dims"));
  c.stats = stats_from_json(j.at("stats"));
  // Start from a correctly shaped model, then overwrite every array by name.
  c.params = ModelParams::init(c.params.dims, 0);
  const auto& arr = j.at("params");
  std::size_t i = 0;
  visit_weights(c.params.w, [&](const std::string& name, Tensor2& t) {
    if (i >= arr.size()) throw std::runtime_error("checkpoint is missing " + name);
    const auto& e = arr[i++];
    if (e.at("name").get<std::string>() != name) throw std::runtime_error("checkpoint: expected " + name);
    Tensor2 v(e.at("rows").get<std::size_t>(), e.at("cols").get<std::size_t>(),
              e.at("data").get<std::vector<double>>());
    if (!v.same_shape(t)) throw std::runtime_error("checkpoint: wrong shape for " + name);
    t = std::move(v);
  });
  if (i != arr.size()) throw std::runtime_error("checkpoint has unexpected extra arrays");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json(c).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return checkpoint_from_json(json::parse(in));
}

}  // namespace evdetect
