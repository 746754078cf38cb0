#pragma once

// Synthetic workloads: y_t = sum_k A_k sin(2 pi t / P_k + phi_k) + slope * t + eps_t,
// eps_t ~ N(0, noise^2), t the row index.
//
// Spec JSON:
//   {"name": "synthetic", "length": 30000, "stride": 300, "start": 1704067200,
//    "seed": 0, "noise": 0.3, "slope": 0.0, "series": ["a", "b"],
//    "components": [{"period": 288, "amplitude": 1.0, "phase": 0.0}, ...]}

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "msflow/config.hpp"
#include "msflow/dataset.hpp"
#include "msflow/random.hpp"

namespace msf {

struct SinusoidComponent {
  double period = 1.0, amplitude = 1.0, phase = 0.0;
};

struct SynthSpec {
  std::string name = "synthetic";
  std::size_t length = 1000;
  std::int64_t stride = 300;
  std::int64_t start = 1704067200;  // 2024-01-01 00:00 UTC, a Monday
  std::uint64_t seed = 0;
  double noise = 0.0, slope = 0.0;
  std::vector<std::string> series{"synthetic"};
  std::vector<SinusoidComponent> components;

  void validate() const {
    if (length < 1) throw ConfigError("synth: length must be >= 1");
    if (stride < 1) throw ConfigError("synth: stride must be >= 1");
    if (noise < 0.0) throw ConfigError("synth: noise must be >= 0");
    if (series.empty()) throw ConfigError("synth: at least one series id is required");
    for (std::size_t k = 0; k < components.size(); ++k)
      if (!(components[k].period > 0.0))
        throw ConfigError("synth: components[" + std::to_string(k) + "].period must be > 0, got " +
                          format_double(components[k].period));
    for (const auto& id : name)
      if (id == '/' || id == '\\') throw ConfigError("synth: name must not contain path separators");
  }
};

inline SynthSpec parse_synth_spec(const Json& j) {
  using detail::FieldReader;
  SynthSpec s;
  FieldReader r(j, "");
  r.get("name", s.name);
  r.get("length", s.length, 1);
  r.field("stride", [&](const Json& x, const std::string& w) { s.stride = static_cast<std::int64_t>(FieldReader::to_uint(x, w, 1)); });
  r.field("start", [&](const Json& x, const std::string& w) {
    if (!x.is_number_integer()) FieldReader::fail(w, "expected an integer timestamp");
    s.start = x.get<std::int64_t>();
  });
  r.field("seed", [&](const Json& x, const std::string& w) { s.seed = FieldReader::to_uint(x, w, 0); });
  r.get("noise", s.noise);
  r.get("slope", s.slope);
  r.field("series", [&](const Json& x, const std::string& w) {
    if (!x.is_array() || x.empty()) FieldReader::fail(w, "expected a non-empty array of series ids");
    s.series.clear();
    for (const auto& id : x) {
      if (!id.is_string()) FieldReader::fail(w, "series ids must be strings");
      s.series.push_back(id.get<std::string>());
    }
  });
  r.field("components", [&](const Json& x, const std::string& w) {
    if (!x.is_array()) FieldReader::fail(w, "expected an array of {period, amplitude, phase}");
    for (std::size_t i = 0; i < x.size(); ++i) {
      FieldReader c(x[i], w + "[" + std::to_string(i) + "]");
      SinusoidComponent comp;
      c.get("period", comp.period);
      c.get("amplitude", comp.amplitude);
      c.get("phase", comp.phase);
      c.finish();
      s.components.push_back(comp);
    }
  });
  r.finish();
  s.validate();
  return s;
}

inline SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("synth spec '" + path + "' not found");
  try {
    return parse_synth_spec(Json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("synth spec '" + path + "' is not valid JSON: " + e.what());
  }
}

// Noise for series k comes from RandomStream(seed).split(k).
inline std::vector<TimeSeries> generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  std::vector<TimeSeries> out;
  const RandomStream root(spec.seed);
  for (std::size_t k = 0; k < spec.series.size(); ++k) {
    RandomStream rng = root.split(k);
    TimeSeries ts;
    ts.series_id = spec.series[k];
    ts.value_names = {"value"};
    ts.values = Tensor(Shape{spec.length, 1});
    ts.covariates = Tensor(Shape{spec.length, 0});
    for (std::size_t t = 0; t < spec.length; ++t) {
      const double tt = static_cast<double>(t);
      double y = spec.slope * tt;
      for (const auto& c : spec.components) y += c.amplitude * std::sin(2.0 * std::numbers::pi * tt / c.period + c.phase);
      if (spec.noise > 0.0) y += spec.noise * rng.normal();
      ts.timestamps.push_back(spec.start + static_cast<std::int64_t>(t) * spec.stride);
      ts.values[t] = y;
    }
    out.push_back(std::move(ts));
  }
  return out;
}

}  // namespace msf
