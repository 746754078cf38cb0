#pragma once

// The command pipeline: pretrain -> encode -> train -> forecast / evaluate,
// plus synth. Every command reads its inputs from earlier artifacts and
// writes only inside RunConfig::out.
//
// Artifacts (fixed names inside the output directory):
//   encoder.bin, pretrain_loss.csv   pretrain
//   repr.store                       encode
//   model.bin, train_loss.csv        train
//   forecast.csv                     forecast
//   metrics.csv, metrics.json        evaluate
//   <name>.csv                       synth

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msflow/config.hpp"
#include "msflow/contrastive.hpp"
#include "msflow/dataset.hpp"
#include "msflow/encoder.hpp"
#include "msflow/forecaster.hpp"
#include "msflow/model_file.hpp"
#include "msflow/repr_store.hpp"
#include "msflow/synth.hpp"

namespace msf::pipeline {

inline constexpr const char* kEncoderFile = "encoder.bin";
inline constexpr const char* kPretrainLossFile = "pretrain_loss.csv";
inline constexpr const char* kStoreFile = "repr.store";
inline constexpr const char* kModelFile = "model.bin";
inline constexpr const char* kTrainLossFile = "train_loss.csv";
inline constexpr const char* kForecastFile = "forecast.csv";
inline constexpr const char* kMetricsCsv = "metrics.csv";
inline constexpr const char* kMetricsJson = "metrics.json";

// Substream indices off RandomStream(seed).
enum Stream : std::uint64_t { kEncoderInit = 1, kPretrain = 2, kModelInit = 3, kTrain = 4, kForecast = 5, kEvaluate = 6 };

// A file directly inside the output directory, which is created on demand.
inline std::string output_path(const RunConfig& cfg, const std::string& name) {
  namespace fs = std::filesystem;
  if (name.empty() || name == "." || name == ".." || name.find_first_of("/\\") != std::string::npos)
    throw ConfigError("output name '" + name + "' must be a plain file name inside the output directory");
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw ArtifactError("cannot create output directory '" + cfg.out + "': " + ec.message());
  return (fs::path(cfg.out) / name).string();
}

inline std::string input_path(const std::string& explicit_path, const RunConfig& cfg, const char* name) {
  return explicit_path.empty() ? (std::filesystem::path(cfg.out) / name).string() : explicit_path;
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

// Full series z-scored with train-split statistics, plus split bounds.
struct Dataset {
  std::vector<TimeSeries> series;
  std::vector<NormStats> stats;
  std::vector<SplitBounds> bounds;
  std::int64_t stride = 0;

  std::size_t channels() const { return series.front().channels(); }
  std::size_t extra_covariates() const { return series.front().covariates.cols(); }
  std::vector<TimeSeries> train_splits() const {
    std::vector<TimeSeries> out;
    for (std::size_t i = 0; i < series.size(); ++i) out.push_back(series[i].slice(0, bounds[i].train_end));
    return out;
  }
  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& s : series) out.push_back(s.series_id);
    return out;
  }
};

inline Dataset prepare_dataset(std::vector<TimeSeries> raw, const RunConfig& cfg) {
  if (raw.empty()) throw ConfigError("dataset has no series");
  Dataset d;
  d.stride = raw.front().stride();
  const std::size_t F = raw.front().channels(), E = raw.front().covariates.cols();
  for (auto& ts : raw) {
    if (ts.length() < 2) throw ConfigError("series '" + ts.series_id + "' has fewer than 2 points");
    if (ts.stride() != d.stride)
      throw ConfigError("series '" + ts.series_id + "' has stride " + std::to_string(ts.stride()) + "s, expected " +
                        std::to_string(d.stride) + "s like the first series");
    if (ts.channels() != F || ts.covariates.cols() != E)
      throw ConfigError("series '" + ts.series_id + "' has a different number of value or covariate columns");
    const SplitBounds b = split_bounds(ts.length(), cfg.train_frac, cfg.val_frac);
    if (b.train_end == 0) throw ConfigError("series '" + ts.series_id + "': train split is empty");
    const NormStats st = fit_norm(ts.slice(0, b.train_end));
    d.series.push_back(normalize(std::move(ts), st));
    d.stats.push_back(st);
    d.bounds.push_back(b);
  }
  return d;
}

inline Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("config field 'dataset': a CSV path is required (set it in the config or pass --dataset)");
  if (!std::filesystem::exists(cfg.dataset)) throw ConfigError("dataset '" + cfg.dataset + "' not found");
  return prepare_dataset(load_csv(cfg.dataset), cfg);
}

inline std::vector<ScaleSpec> resolve_scales(const RunConfig& cfg, std::int64_t stride) {
  if (!cfg.scales.empty()) return cfg.scales;
  return default_scales(stride);
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

struct LoadedEncoder {
  EncoderConfig config;
  ParameterSet params;
};

inline LoadedEncoder load_encoder(const std::string& path) {
  ParameterFile f = load_parameter_file(path, "encoder", "pretrain");
  const Json j = Json::parse(f.config_json);
  RunConfig run;
  apply_json(run, j.at("run"));
  run.encoder.input_channels = j.at("input_channels").get<std::size_t>();
  return {run.encoder, std::move(f.params)};
}

inline Json forecaster_json(const ForecasterConfig& f) {
  return {{"channels", f.channels},       {"extra_covariates", f.extra_covariates}, {"series_count", f.series_count},
          {"id_dim", f.id_dim},           {"context_dim", f.context_dim},           {"heads", f.heads},
          {"repr_dim", f.repr_dim},       {"scale_count", f.scale_count},           {"proj_hidden", f.proj_hidden},
          {"flow_layers", f.flow_layers}, {"flow_hidden", f.flow_hidden},           {"scale_clamp", f.scale_clamp},
          {"use_repr", f.use_repr},       {"use_fusion", f.use_fusion},             {"use_flow", f.use_flow}};
}

inline ForecasterConfig forecaster_from_json(const Json& j) {
  ForecasterConfig f;
  f.channels = j.at("channels").get<std::size_t>();
  f.extra_covariates = j.at("extra_covariates").get<std::size_t>();
  f.series_count = j.at("series_count").get<std::size_t>();
  f.id_dim = j.at("id_dim").get<std::size_t>();
  f.context_dim = j.at("context_dim").get<std::size_t>();
  f.heads = j.at("heads").get<std::size_t>();
  f.repr_dim = j.at("repr_dim").get<std::size_t>();
  f.scale_count = j.at("scale_count").get<std::size_t>();
  f.proj_hidden = j.at("proj_hidden").get<std::size_t>();
  f.flow_layers = j.at("flow_layers").get<std::size_t>();
  f.flow_hidden = j.at("flow_hidden").get<std::size_t>();
  f.scale_clamp = j.at("scale_clamp").get<double>();
  f.use_repr = j.at("use_repr").get<bool>();
  f.use_fusion = j.at("use_fusion").get<bool>();
  f.use_flow = j.at("use_flow").get<bool>();
  return f;
}

struct LoadedModel {
  RunConfig run;  // snapshot of the config used for training
  ForecasterConfig config;
  std::vector<std::string> series;
  ParameterSet params;

  std::size_t series_index(const std::string& id) const {
    for (std::size_t i = 0; i < series.size(); ++i)
      if (series[i] == id) return i;
    throw ConfigError("series '" + id + "' was not part of the training data of this model");
  }
};

inline LoadedModel load_model(const std::string& path) {
  ParameterFile f = load_parameter_file(path, "model", "train");
  LoadedModel m;
  try {
    const Json j = Json::parse(f.config_json);
    apply_json(m.run, j.at("run"));
    m.config = forecaster_from_json(j.at("forecaster"));
    m.series = j.at("series").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("model file '" + path + "' has an unreadable config snapshot: " + e.what());
  }
  m.params = std::move(f.params);
  return m;
}

// The ablation switches of a command must match the trained model.
inline void check_ablation(const RunConfig& cfg, const ForecasterConfig& m) {
  auto one = [](const char* flag, bool asked, bool trained) {
    if (asked != trained)
      throw ConfigError(std::string("ablation ") + flag + " is " + (asked ? "on" : "off") + " but the model was trained with it " +
                        (trained ? "on" : "off") + "; retrain or change the flag");
  };
  one("--no-repr", cfg.no_repr, !m.use_repr);
  one("--no-fusion", cfg.no_fusion, !m.use_fusion);
  one("--no-flow", cfg.no_flow, !m.use_flow);
}

inline std::optional<ReprStore> open_store_if_needed(const RunConfig& cfg, bool use_repr) {
  if (!use_repr) return std::nullopt;
  return ReprStore::open(input_path(cfg.store_path, cfg, kStoreFile));
}

// Representation at the nearest anchor not after the origin row.
inline std::optional<MultiscaleRepresentation> lookup_representation(const ReprStore& store, const TimeSeries& ts,
                                                                     std::size_t origin) {
  const auto anchor = store.nearest_anchor(ts.series_id, ts.timestamps[origin]);
  if (!anchor) return std::nullopt;
  return store.get(ts.series_id, *anchor);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline PretrainResult cmd_pretrain(const RunConfig& cfg) {
  const Dataset d = load_dataset(cfg);
  EncoderConfig ec = cfg.encoder;
  ec.input_channels = d.channels();
  ec.validate();
  const Encoder enc(ec);
  const RandomStream root(cfg.seed);
  RandomStream init = root.split(kEncoderInit);
  ParameterSet ps = enc.make_parameters(init);
  const auto res = pretrain(enc, ps, d.train_splits(), cfg.pretrain, root.split(kPretrain));
  Json snap{{"run", to_json(cfg)}, {"input_channels", ec.input_channels}};
  save_parameter_file(output_path(cfg, kEncoderFile), "encoder", snap.dump(), ps);
  write_loss_history(output_path(cfg, kPretrainLossFile), res.history);
  return res;
}

// Anchors every `anchor_every` rows (default: the first scale's length),
// starting once that first scale is covered. Returns the record count.
inline std::size_t cmd_encode(const RunConfig& cfg) {
  const Dataset d = load_dataset(cfg);
  const LoadedEncoder le = load_encoder(input_path(cfg.encoder_path, cfg, kEncoderFile));
  if (le.config.input_channels != d.channels())
    throw SchemaError("encoder expects " + std::to_string(le.config.input_channels) + " value channels, dataset has " +
                      std::to_string(d.channels()));
  const Encoder enc(le.config);
  const auto scales = resolve_scales(cfg, d.stride);
  validate_scales(scales);
  const std::size_t every = cfg.anchor_every ? cfg.anchor_every : scales.front().length;
  auto store = ReprStore::create(output_path(cfg, kStoreFile), le.config.repr_dim(), scales);
  std::size_t n = 0;
  for (const auto& ts : d.series) {
    for (std::size_t row : anchor_rows(ts.length(), every, scales.front().length)) {
      store.put(encode_multiscale(enc, le.params, ts, row, scales, true));
      ++n;
    }
    info("encoded series '" + ts.series_id + "'");
  }
  return n;
}

inline TrainResult cmd_train(const RunConfig& cfg) {
  const Dataset d = load_dataset(cfg);
  const bool use_repr = !cfg.no_repr;
  std::optional<LoadedEncoder> le;
  if (use_repr) le = load_encoder(input_path(cfg.encoder_path, cfg, kEncoderFile));
  const auto store = open_store_if_needed(cfg, use_repr);

  ForecasterConfig fc = cfg.forecaster;
  fc.channels = d.channels();
  fc.extra_covariates = d.extra_covariates();
  fc.series_count = d.series.size();
  fc.use_repr = use_repr;
  fc.use_fusion = !cfg.no_fusion;
  fc.use_flow = !cfg.no_flow;
  if (store) {
    if (store->dim() != le->config.repr_dim())
      throw SchemaError("store holds " + std::to_string(store->dim()) + "-dim representations but the encoder produces " +
                        std::to_string(le->config.repr_dim()) + "; rerun `encode`");
    fc.repr_dim = store->dim();
    fc.scale_count = store->scales().size();
  } else {
    fc.repr_dim = cfg.encoder.repr_dim();
    fc.scale_count = resolve_scales(cfg, d.stride).size();
  }
  const Forecaster model(fc);
  TrainConfig tc = cfg.train;
  tc.backcast = cfg.backcast;
  const auto train = d.train_splits();
  for (const auto& ts : train)
    if (ts.length() < tc.backcast + tc.horizon)
      throw ConfigError("series '" + ts.series_id + "': train split has " + std::to_string(ts.length()) +
                        " points but one window needs backcast + train.horizon = " + std::to_string(tc.backcast + tc.horizon));
  const auto windows = collect_training_windows(train, store ? &*store : nullptr, use_repr, tc);

  const RandomStream root(cfg.seed);
  RandomStream init = root.split(kModelInit);
  ParameterSet ps = model.make_parameters(init);
  const auto res = train_forecaster(model, ps, *windows, tc, root.split(kTrain));

  ParameterSet saved = ps;
  if (le) saved.merge(le->params);
  Json snap{{"run", to_json(cfg)}, {"forecaster", forecaster_json(fc)}, {"series", d.ids()}};
  save_parameter_file(output_path(cfg, kModelFile), "model", snap.dump(), saved);
  std::ofstream loss(output_path(cfg, kTrainLossFile));
  loss << "epoch,step,nll\n";
  for (const auto& r : res.history) loss << r.epoch << ',' << r.step << ',' << format_double(r.nll) << '\n';
  return res;
}

// A point predictor for evaluation: normalized N x D forecast from an origin row.
using Predictor = std::function<Tensor(std::size_t series, std::size_t origin, std::size_t N)>;

// Origins of test windows: the first is the last validation row (its backcast
// borrows the preceding rows), then every `stride` rows while the horizon fits.
inline std::vector<std::size_t> evaluation_origins(const SplitBounds& b, std::size_t L, std::size_t N, std::size_t stride) {
  std::vector<std::size_t> out;
  if (b.val_end < std::max<std::size_t>(L, 1)) return out;
  for (std::size_t o = b.val_end - 1; o + N < b.total; o += stride) out.push_back(o);
  return out;
}

struct HorizonMetrics {
  std::string horizon;  // a number, or "avg"
  double mse = 0.0, mae = 0.0;
  std::size_t windows = 0;
};

inline HorizonMetrics evaluate_horizon(const Dataset& d, std::size_t L, std::size_t N, std::size_t stride, bool denormalized,
                                       const Predictor& predict) {
  std::vector<double> pred, truth;
  HorizonMetrics m{std::to_string(N)};
  for (std::size_t i = 0; i < d.series.size(); ++i) {
    const auto origins = evaluation_origins(d.bounds[i], L, N, stride ? stride : N);
    if (origins.empty())
      throw ConfigError("series '" + d.series[i].series_id + "': test split has " +
                        std::to_string(d.bounds[i].total - d.bounds[i].val_end) + " points, too few for horizon " +
                        std::to_string(N) + " with backcast " + std::to_string(L));
    for (std::size_t o : origins) {
      Tensor p = predict(i, o, N);
      Tensor t = d.series[i].slice(o + 1, N).values;
      require(p.shape() == t.shape(), "predictor returned " + shape_str(p.shape()) + ", expected " + shape_str(t.shape()));
      if (denormalized) {
        p = denormalize(std::move(p), d.stats[i]);
        t = denormalize(std::move(t), d.stats[i]);
      }
      pred.insert(pred.end(), p.data().begin(), p.data().end());
      truth.insert(truth.end(), t.data().begin(), t.data().end());
      ++m.windows;
    }
  }
  const std::size_t n = pred.size();
  const Tensor P(Shape{n, 1}, std::move(pred)), T(Shape{n, 1}, std::move(truth));
  m.mse = mse(P, T);
  m.mae = mae(P, T);
  return m;
}

// One row per horizon, then their average.
inline std::vector<HorizonMetrics> evaluate_all(const Dataset& d, const RunConfig& cfg, const Predictor& predict) {
  std::vector<HorizonMetrics> rows;
  HorizonMetrics avg{"avg"};
  for (std::size_t N : cfg.horizons) {
    rows.push_back(evaluate_horizon(d, cfg.backcast, N, cfg.eval_stride, cfg.denormalized, predict));
    avg.mse += rows.back().mse / static_cast<double>(cfg.horizons.size());
    avg.mae += rows.back().mae / static_cast<double>(cfg.horizons.size());
    avg.windows += rows.back().windows;
    info("horizon " + rows.back().horizon + ": mse " + format_double(rows.back().mse) + " mae " + format_double(rows.back().mae));
  }
  rows.push_back(avg);
  return rows;
}

inline void write_metrics(const RunConfig& cfg, const std::vector<HorizonMetrics>& rows) {
  std::ofstream csv(output_path(cfg, kMetricsCsv));
  csv << "dataset,horizon,mse,mae,seed\n";
  Json j = Json::array();
  for (const auto& r : rows) {
    csv << cfg.name << ',' << r.horizon << ',' << format_double(r.mse) << ',' << format_double(r.mae) << ',' << cfg.seed << '\n';
    j.push_back({{"dataset", cfg.name}, {"horizon", r.horizon}, {"mse", r.mse}, {"mae", r.mae}, {"seed", cfg.seed}});
  }
  if (!csv) throw ArtifactError("cannot write " + std::string(kMetricsCsv));
  std::ofstream js(output_path(cfg, kMetricsJson));
  js << j.dump(2) << '\n';
}

// Predictor backed by a trained model and the representation store.
inline Predictor model_predictor(const Dataset& d, const RunConfig& cfg, const LoadedModel& m, const ReprStore* store) {
  auto model = std::make_shared<Forecaster>(m.config);
  std::vector<std::size_t> index;
  for (const auto& ts : d.series) index.push_back(m.series_index(ts.series_id));
  const RandomStream root = RandomStream(cfg.seed).split(kEvaluate);
  return [&d, &cfg, &m, store, model, index, root](std::size_t i, std::size_t origin, std::size_t N) {
    const TimeSeries& ts = d.series[i];
    std::optional<MultiscaleRepresentation> rep;
    if (m.config.use_repr) {
      rep = lookup_representation(*store, ts, origin);
      if (!rep)
        throw ArtifactError("no stored representation for series '" + ts.series_id + "' at or before " +
                            std::to_string(ts.timestamps[origin]) + "; run the `encode` command first");
    }
    const RandomStream s = root.split(N).split(i).split(origin);
    return model->forecast(m.params, ts, index[i], origin, cfg.backcast, rep ? &*rep : nullptr, N, cfg.n_samples, s).point;
  };
}

inline std::vector<HorizonMetrics> cmd_evaluate(const RunConfig& cfg) {
  const Dataset d = load_dataset(cfg);
  const LoadedModel m = load_model(input_path(cfg.model_path, cfg, kModelFile));
  check_ablation(cfg, m.config);
  const auto store = open_store_if_needed(cfg, m.config.use_repr);
  const auto rows = evaluate_all(d, cfg, model_predictor(d, cfg, m, store ? &*store : nullptr));
  write_metrics(cfg, rows);
  return rows;
}

// Forecast from the configured origin (default: the last row) of every series,
// written in original units.
inline void cmd_forecast(const RunConfig& cfg) {
  const Dataset d = load_dataset(cfg);
  const LoadedModel m = load_model(input_path(cfg.model_path, cfg, kModelFile));
  check_ablation(cfg, m.config);
  const auto store = open_store_if_needed(cfg, m.config.use_repr);
  const Forecaster model(m.config);
  const RandomStream root = RandomStream(cfg.seed).split(kForecast);
  std::ofstream out(output_path(cfg, kForecastFile));
  const bool multi = d.channels() > 1;
  out << "series_id,origin" << (multi ? ",channel" : "") << ",step,point,q10,q50,q90\n";
  for (std::size_t i = 0; i < d.series.size(); ++i) {
    const TimeSeries& ts = d.series[i];
    std::size_t origin = ts.length() - 1;
    if (cfg.forecast_origin) {
      const auto it = std::find(ts.timestamps.begin(), ts.timestamps.end(), *cfg.forecast_origin);
      if (it == ts.timestamps.end())
        throw ConfigError("config field 'forecast.origin': timestamp " + std::to_string(*cfg.forecast_origin) +
                          " is not in series '" + ts.series_id + "'");
      origin = static_cast<std::size_t>(it - ts.timestamps.begin());
    }
    std::optional<MultiscaleRepresentation> rep;
    if (m.config.use_repr) {
      rep = lookup_representation(*store, ts, origin);
      if (!rep)
        throw ArtifactError("no stored representation for series '" + ts.series_id + "' at or before " +
                            std::to_string(ts.timestamps[origin]) + "; run the `encode` command first");
    }
    const auto f = model.forecast(m.params, ts, m.series_index(ts.series_id), origin, cfg.backcast, rep ? &*rep : nullptr,
                                  cfg.forecast_horizon, cfg.n_samples, root.split(i));
    const Tensor point = denormalize(f.point, d.stats[i]), q10 = denormalize(f.q10, d.stats[i]),
                 q50 = denormalize(f.q50, d.stats[i]), q90 = denormalize(f.q90, d.stats[i]);
    for (std::size_t s = 0; s < f.horizon; ++s)
      for (std::size_t c = 0; c < f.channels; ++c) {
        out << ts.series_id << ',' << ts.timestamps[origin];
        if (multi) out << ',' << ts.value_names[c];
        out << ',' << s + 1 << ',' << format_double(point.at(s, c)) << ',' << format_double(q10.at(s, c)) << ','
            << format_double(q50.at(s, c)) << ',' << format_double(q90.at(s, c)) << '\n';
      }
  }
  if (!out) throw ArtifactError("cannot write " + std::string(kForecastFile));
}

// Writes <name>.csv into the output directory and returns its path.
inline std::string cmd_synth(const RunConfig& cfg, const SynthSpec& spec) {
  const auto path = output_path(cfg, spec.name + ".csv");
  write_csv(path, generate_synthetic(spec));
  return path;
}

}  // namespace msf::pipeline
