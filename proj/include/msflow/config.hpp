#pragma once

// Run configuration. Values come from three layers, later ones winning:
//   1. built-in defaults (the members below),
//   2. the JSON file given with --config,
//   3. command-line flags (--dataset, --seed, --out, --no-repr, --no-fusion,
//      --no-flow, --denormalized).
//
// JSON schema (every key optional; unknown keys are rejected):
//   dataset: string            name: string          out: string
//   seed: uint                 backcast: uint >= 1   horizons: [uint >= 1, ...]
//   split:      {train: (0,1), val: [0,1)}
//   encoder:    {latent_dim, hidden_dim, heads, conv_count, time_dim, freq_dim,
//                qkv_kernel, qkv_dilation, fft_window, mlp_hidden: uint; mask_keep: [0,1]}
//   pretrain:   {epochs, steps_per_epoch, batch_size, window: uint; learning_rate, grad_clip: number}
//   scales:     [{name: string, length: uint}, ...]   (default: from the data stride)
//   anchor_every: uint                                 (0: the first scale's length)
//   forecaster: {context_dim, heads, id_dim, proj_hidden, flow_layers, flow_hidden: uint; scale_clamp: number}
//   train:      {epochs, steps_per_epoch, batch_size, horizon, window_stride: uint; learning_rate, grad_clip: number}
//   forecast:   {horizon, n_samples, eval_stride: uint; origin: int (epoch seconds, default: last row)}
//   ablation:   {no_repr, no_fusion, no_flow: bool}
//   inputs:     {encoder, store, model: string}        (default: files inside `out`)
//   denormalized: bool

#include <json.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "msflow/contrastive.hpp"
#include "msflow/encoder.hpp"
#include "msflow/forecaster.hpp"
#include "msflow/repr_store.hpp"

namespace msf {

using Json = nlohmann::ordered_json;

struct RunConfig {
  std::string dataset;
  std::string name = "dataset";
  std::string out = "out";
  std::uint64_t seed = 0;
  double train_frac = 0.7, val_frac = 0.1;
  std::size_t backcast = 96;
  std::vector<std::size_t> horizons{96, 192, 336, 720};
  EncoderConfig encoder;
  PretrainConfig pretrain;
  std::vector<ScaleSpec> scales;
  std::size_t anchor_every = 0;
  ForecasterConfig forecaster;
  TrainConfig train;
  std::size_t forecast_horizon = 96;
  std::size_t n_samples = 100;
  std::size_t eval_stride = 0;  // 0: the horizon
  std::optional<std::int64_t> forecast_origin;
  bool no_repr = false, no_fusion = false, no_flow = false;
  std::string encoder_path, store_path, model_path;
  bool denormalized = false;
};

namespace detail {

// Walks one JSON object, converting fields and recording which were seen so
// leftovers can be reported as unknown.
class FieldReader {
 public:
  FieldReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "config" : path_, "expected an object");
  }

  template <class F>
  void field(const std::string& key, F&& apply) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) apply(*it, where(key));
  }
  void get(const std::string& key, std::size_t& v, std::size_t min = 0) {
    field(key, [&](const Json& x, const std::string& w) { v = to_uint(x, w, min); });
  }
  void get(const std::string& key, double& v) {
    field(key, [&](const Json& x, const std::string& w) {
      if (!x.is_number()) fail(w, "expected a number, got " + x.dump());
      v = x.get<double>();
    });
  }
  void get(const std::string& key, bool& v) {
    field(key, [&](const Json& x, const std::string& w) {
      if (!x.is_boolean()) fail(w, "expected true or false, got " + x.dump());
      v = x.get<bool>();
    });
  }
  void get(const std::string& key, std::string& v) {
    field(key, [&](const Json& x, const std::string& w) {
      if (!x.is_string()) fail(w, "expected a string, got " + x.dump());
      v = x.get<std::string>();
    });
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(where(it.key()), "unknown field");
  }
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  static std::size_t to_uint(const Json& x, const std::string& w, std::size_t min) {
    if (!x.is_number_integer() || (x.is_number_integer() && !x.is_number_unsigned() && x.get<long long>() < 0))
      fail(w, "expected a non-negative integer, got " + x.dump());
    const auto v = x.get<std::size_t>();
    if (v < min) fail(w, "must be >= " + std::to_string(min) + ", got " + std::to_string(v));
    return v;
  }
  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw ConfigError("config field '" + where + "': " + what);
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

// Applies a JSON document on top of `cfg`.
inline void apply_json(RunConfig& cfg, const Json& j) {
  using detail::FieldReader;
  FieldReader r(j, "");
  r.get("dataset", cfg.dataset);
  r.get("name", cfg.name);
  r.get("out", cfg.out);
  r.field("seed", [&](const Json& x, const std::string& w) { cfg.seed = FieldReader::to_uint(x, w, 0); });
  r.get("backcast", cfg.backcast, 1);
  r.field("horizons", [&](const Json& x, const std::string& w) {
    if (!x.is_array() || x.empty()) FieldReader::fail(w, "expected a non-empty array of horizons");
    cfg.horizons.clear();
    for (std::size_t i = 0; i < x.size(); ++i) cfg.horizons.push_back(FieldReader::to_uint(x[i], w + "[" + std::to_string(i) + "]", 1));
  });
  r.field("split", [&](const Json& x, const std::string& w) {
    FieldReader s(x, w);
    s.get("train", cfg.train_frac);
    s.get("val", cfg.val_frac);
    s.finish();
    if (!(cfg.train_frac > 0.0 && cfg.val_frac >= 0.0 && cfg.train_frac + cfg.val_frac < 1.0))
      FieldReader::fail(w, "fractions must satisfy train > 0, val >= 0, train + val < 1");
  });
  r.field("encoder", [&](const Json& x, const std::string& w) {
    FieldReader s(x, w);
    auto& e = cfg.encoder;
    s.get("latent_dim", e.latent_dim, 1);
    s.get("hidden_dim", e.hidden_dim, 1);
    s.get("heads", e.heads, 1);
    s.get("conv_count", e.conv_count, 1);
    s.get("time_dim", e.time_dim, 1);
    s.get("freq_dim", e.freq_dim, 1);
    s.get("qkv_kernel", e.qkv_kernel, 1);
    s.get("qkv_dilation", e.qkv_dilation, 1);
    s.get("fft_window", e.fft_window, 2);
    s.get("mlp_hidden", e.mlp_hidden, 1);
    s.get("mask_keep", e.mask_keep);
    s.finish();
    if (e.mask_keep < 0.0 || e.mask_keep > 1.0) FieldReader::fail(w + ".mask_keep", "must lie in [0, 1]");
    if (e.hidden_dim % e.heads != 0) FieldReader::fail(w + ".heads", "must divide hidden_dim");
  });
  r.field("pretrain", [&](const Json& x, const std::string& w) {
    FieldReader s(x, w);
    auto& p = cfg.pretrain;
    s.get("epochs", p.epochs);
    s.get("steps_per_epoch", p.steps_per_epoch, 1);
    s.get("batch_size", p.batch_size, 1);
    s.get("window", p.window, kMinCropLength);
    s.get("learning_rate", p.learning_rate);
    s.get("grad_clip", p.grad_clip);
    s.finish();
    if (!(p.learning_rate > 0.0)) FieldReader::fail(w + ".learning_rate", "must be > 0");
  });
  r.field("scales", [&](const Json& x, const std::string& w) {
    if (!x.is_array() || x.empty()) FieldReader::fail(w, "expected a non-empty array of {name, length}");
    cfg.scales.clear();
    for (std::size_t i = 0; i < x.size(); ++i) {
      FieldReader s(x[i], w + "[" + std::to_string(i) + "]");
      ScaleSpec spec;
      s.get("name", spec.name);
      s.get("length", spec.length, kMinEncodeLength);
      s.finish();
      cfg.scales.push_back(spec);
    }
    try {
      validate_scales(cfg.scales);
    } catch (const ConfigError& e) {
      FieldReader::fail(w, e.what());
    }
  });
  r.get("anchor_every", cfg.anchor_every);
  r.field("forecaster", [&](const Json& x, const std::string& w) {
    FieldReader s(x, w);
    auto& f = cfg.forecaster;
    s.get("context_dim", f.context_dim, 1);
    s.get("heads", f.heads, 1);
    s.get("id_dim", f.id_dim);
    s.get("proj_hidden", f.proj_hidden, 1);
    s.get("flow_layers", f.flow_layers, 1);
    s.get("flow_hidden", f.flow_hidden, 1);
    s.get("scale_clamp", f.scale_clamp);
    s.finish();
    if (f.context_dim % f.heads != 0) FieldReader::fail(w + ".heads", "must divide context_dim");
    if (!(f.scale_clamp > 0.0)) FieldReader::fail(w + ".scale_clamp", "must be > 0");
  });
  r.field("train", [&](const Json& x, const std::string& w) {
    FieldReader s(x, w);
    auto& t = cfg.train;
    s.get("epochs", t.epochs);
    s.get("steps_per_epoch", t.steps_per_epoch);
    s.get("batch_size", t.batch_size, 1);
    s.get("horizon", t.horizon, 1);
    s.get("window_stride", t.window_stride, 1);
    s.get("learning_rate", t.learning_rate);
    s.get("grad_clip", t.grad_clip);
    s.finish();
    if (!(t.learning_rate > 0.0)) FieldReader::fail(w + ".learning_rate", "must be > 0");
    if (t.grad_clip < 0.0) FieldReader::fail(w + ".grad_clip", "must be >= 0");
  });
  r.field("forecast", [&](const Json& x, const std::string& w) {
    FieldReader s(x, w);
    s.get("horizon", cfg.forecast_horizon, 1);
    s.get("n_samples", cfg.n_samples, 1);
    s.get("eval_stride", cfg.eval_stride);
    s.field("origin", [&](const Json& v, const std::string& ww) {
      if (!v.is_number_integer()) FieldReader::fail(ww, "expected an integer timestamp, got " + v.dump());
      cfg.forecast_origin = v.get<std::int64_t>();
    });
    s.finish();
  });
  r.field("ablation", [&](const Json& x, const std::string& w) {
    FieldReader s(x, w);
    s.get("no_repr", cfg.no_repr);
    s.get("no_fusion", cfg.no_fusion);
    s.get("no_flow", cfg.no_flow);
    s.finish();
  });
  r.field("inputs", [&](const Json& x, const std::string& w) {
    FieldReader s(x, w);
    s.get("encoder", cfg.encoder_path);
    s.get("store", cfg.store_path);
    s.get("model", cfg.model_path);
    s.finish();
  });
  r.get("denormalized", cfg.denormalized);
  r.finish();
  cfg.train.backcast = cfg.backcast;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file '" + path + "' not found");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  apply_json(base, j);
  return base;
}

// Full snapshot; apply_json(to_json(c)) reproduces c.
inline Json to_json(const RunConfig& c) {
  Json j;
  j["dataset"] = c.dataset;
  j["name"] = c.name;
  j["out"] = c.out;
  j["seed"] = c.seed;
  j["split"] = {{"train", c.train_frac}, {"val", c.val_frac}};
  j["backcast"] = c.backcast;
  j["horizons"] = c.horizons;
  const auto& e = c.encoder;
  j["encoder"] = {{"latent_dim", e.latent_dim},     {"hidden_dim", e.hidden_dim}, {"heads", e.heads},
                  {"conv_count", e.conv_count},     {"time_dim", e.time_dim},     {"freq_dim", e.freq_dim},
                  {"qkv_kernel", e.qkv_kernel},     {"qkv_dilation", e.qkv_dilation},
                  {"fft_window", e.fft_window},     {"mlp_hidden", e.mlp_hidden}, {"mask_keep", e.mask_keep}};
  const auto& p = c.pretrain;
  j["pretrain"] = {{"epochs", p.epochs},         {"steps_per_epoch", p.steps_per_epoch}, {"batch_size", p.batch_size},
                   {"window", p.window},         {"learning_rate", p.learning_rate},    {"grad_clip", p.grad_clip}};
  if (!c.scales.empty()) {
    j["scales"] = Json::array();
    for (const auto& s : c.scales) j["scales"].push_back({{"name", s.name}, {"length", s.length}});
  }
  j["anchor_every"] = c.anchor_every;
  const auto& f = c.forecaster;
  j["forecaster"] = {{"context_dim", f.context_dim}, {"heads", f.heads},             {"id_dim", f.id_dim},
                     {"proj_hidden", f.proj_hidden}, {"flow_layers", f.flow_layers}, {"flow_hidden", f.flow_hidden},
                     {"scale_clamp", f.scale_clamp}};
  const auto& t = c.train;
  j["train"] = {{"epochs", t.epochs},         {"steps_per_epoch", t.steps_per_epoch}, {"batch_size", t.batch_size},
                {"horizon", t.horizon},       {"window_stride", t.window_stride},     {"learning_rate", t.learning_rate},
                {"grad_clip", t.grad_clip}};
  j["forecast"] = {{"horizon", c.forecast_horizon}, {"n_samples", c.n_samples}, {"eval_stride", c.eval_stride}};
  if (c.forecast_origin) j["forecast"]["origin"] = *c.forecast_origin;
  j["ablation"] = {{"no_repr", c.no_repr}, {"no_fusion", c.no_fusion}, {"no_flow", c.no_flow}};
  j["inputs"] = {{"encoder", c.encoder_path}, {"store", c.store_path}, {"model", c.model_path}};
  j["denormalized"] = c.denormalized;
  return j;
}

}  // namespace msf
