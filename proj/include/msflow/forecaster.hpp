#pragma once

// Stage-two model: a recurrent context c_t, attention fusion of c_t with the
// stored multiscale representations into h_t, and a conditional density head
// (normalizing flow or, for ablation, a Gaussian) for p(y_t | h_t).

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "msflow/autodiff.hpp"
#include "msflow/dataset.hpp"
#include "msflow/encoder.hpp"
#include "msflow/flow.hpp"
#include "msflow/log.hpp"
#include "msflow/nn.hpp"
#include "msflow/optim.hpp"
#include "msflow/repr_store.hpp"

namespace msf {

struct ForecasterConfig {
  std::size_t channels = 1;        // D, target channels (flow dimension)
  std::size_t extra_covariates = 0;  // cov_* columns beyond the time features
  std::size_t series_count = 1;    // rows of the identifier embedding
  std::size_t id_dim = 8;
  std::size_t context_dim = 64;    // d_c
  std::size_t heads = 4;
  std::size_t repr_dim = 64;       // K, width of one stored scale vector
  std::size_t scale_count = 4;
  std::size_t proj_hidden = 64;
  std::size_t flow_layers = 4;
  std::size_t flow_hidden = 64;
  double scale_clamp = 3.0;
  bool use_repr = true;
  bool use_fusion = true;
  bool use_flow = true;

  void validate() const {
    if (channels < 1) throw ConfigError("forecaster.channels must be >= 1");
    if (series_count < 1) throw ConfigError("forecaster.series_count must be >= 1");
    if (context_dim < 1) throw ConfigError("forecaster.context_dim must be >= 1");
    if (heads < 1 || context_dim % heads != 0)
      throw ConfigError("forecaster.context_dim (" + std::to_string(context_dim) + ") must be a multiple of forecaster.heads (" +
                        std::to_string(heads) + ")");
    if (scale_count < 1 || scale_count > kMaxScales) throw ConfigError("forecaster.scale_count must be in [1, 32]");
    if (repr_dim < 1) throw ConfigError("forecaster.repr_dim must be >= 1");
    flow_config().validate();
  }
  std::size_t input_dim() const { return channels + kTimeFeatureCount + extra_covariates + id_dim; }
  FlowConfig flow_config() const {
    FlowConfig f;
    f.dim = channels;
    f.cond_dim = context_dim;
    f.layers = flow_layers;
    f.hidden = flow_hidden;
    f.scale_clamp = scale_clamp;
    return f;
  }
};

// Stored representation of one window, flattened to a row: S*K values plus
// an S-wide presence row.
struct ScaleRows {
  Tensor vectors;  // W x (S*K)
  Tensor present;  // W x S, entries 0 or 1
};

inline ScaleRows scale_rows(const std::vector<const MultiscaleRepresentation*>& reps, std::size_t S, std::size_t K) {
  ScaleRows out{Tensor(Shape{reps.size(), S * K}), Tensor(Shape{reps.size(), S})};
  for (std::size_t w = 0; w < reps.size(); ++w) {
    const auto* r = reps[w];
    if (r == nullptr) continue;
    require(r->vectors.rows() == S && r->vectors.cols() == K,
            "representation is " + shape_str(r->vectors.shape()) + ", model expects " + std::to_string(S) + "x" + std::to_string(K));
    for (std::size_t s = 0; s < S; ++s) {
      if (!r->has(s)) continue;
      out.present.at(w, s) = 1.0;
      for (std::size_t k = 0; k < K; ++k) out.vectors.at(w, s * K + k) = r->vectors.at(s, k);
    }
  }
  return out;
}

// Keys and values of the scale tokens, with the additive mask for absent
// ones. Rows are either one per conditioning row or a single broadcast row.
struct ScaleTokens {
  std::vector<Var> keys, values;
  std::vector<std::size_t> scale_index;  // which scale each token came from
  Var mask;  // rows x (1 + tokens): 0, or kMaskedLogit for an absent scale
  bool empty() const { return keys.empty(); }
};

// Per-window inputs for teacher forcing, stacked across a batch.
struct ForecastBatch {
  std::size_t backcast = 0, horizon = 0;
  std::vector<Tensor> inputs;            // L+N-1 step inputs, each B x (D + covariates)
  std::vector<std::size_t> series_index;  // B
  Tensor targets;                        // (N*B) x D, step-major
  ScaleRows scales;
  std::size_t size() const { return series_index.size(); }
};

// A training or evaluation window: rows [start, start+L+N) of a series.
struct WindowRef {
  const TimeSeries* series = nullptr;
  std::size_t series_index = 0;
  std::size_t start = 0;
  const MultiscaleRepresentation* repr = nullptr;
};

struct ForecastDistribution {
  std::size_t horizon = 0, channels = 0;
  Tensor samples;  // n_samples x (N*D), one trajectory per row
  Tensor point;    // N x D, per-step median
  Tensor q10, q50, q90;
};

// Empirical quantile of sorted data with linear interpolation.
inline double sorted_quantile(const std::vector<double>& v, double p) {
  require(!v.empty(), "quantile of an empty sample");
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

// Covariates for row i of a series; past the end the time features follow
// the stride (only possible without cov_* columns).
inline std::vector<double> step_covariates(const TimeSeries& ts, std::size_t i) {
  const std::size_t E = ts.covariates.cols();
  std::int64_t stamp;
  if (i < ts.length()) {
    stamp = ts.timestamps[i];
  } else {
    if (E > 0) throw ConfigError("forecast runs past the data and series '" + ts.series_id + "' has cov_* columns with no future values");
    stamp = ts.timestamps.back() + static_cast<std::int64_t>(i - ts.length() + 1) * ts.stride();
  }
  const auto f = time_features(stamp);
  std::vector<double> out(f.begin(), f.end());
  for (std::size_t c = 0; c < E; ++c) out.push_back(ts.covariates.at(i, c));
  return out;
}

class Forecaster {
 public:
  explicit Forecaster(ForecasterConfig cfg, std::string prefix = "forecaster")
      : cfg_(cfg), prefix_(std::move(prefix)), flow_(cfg.flow_config(), prefix_ + ".flow") {
    cfg_.validate();
    const std::size_t dc = cfg_.context_dim;
    gru_ = nn::GruCell{prefix_ + ".gru", cfg_.input_dim(), dc};
    proj_ = nn::Mlp(prefix_ + ".scale_proj", cfg_.repr_dim, cfg_.proj_hidden, dc);
    q_ = nn::Linear{prefix_ + ".fusion.q", dc, dc};
    k_ = nn::Linear{prefix_ + ".fusion.k", dc, dc};
    v_ = nn::Linear{prefix_ + ".fusion.v", dc, dc};
    o_ = nn::Linear{prefix_ + ".fusion.out", dc, dc};
    mix_ = nn::Linear{prefix_ + ".mix", dc + cfg_.repr_dim, dc};
    gauss_ = nn::Linear{prefix_ + ".gauss", dc, 2 * cfg_.channels};
  }

  const ForecasterConfig& config() const { return cfg_; }
  const FlowStack& flow() const { return flow_; }
  const std::string& prefix() const { return prefix_; }

  // Only the components the ablation switches keep get parameters.
  void init(ParameterSet& ps, RandomStream& rng) const {
    ps.add(prefix_ + ".id", nn::glorot(cfg_.series_count, cfg_.id_dim, rng, cfg_.series_count, cfg_.id_dim));
    gru_.init(ps, rng);
    if (cfg_.use_fusion) {
      if (cfg_.use_repr) proj_.init(ps, rng);
      q_.init(ps, rng);
      k_.init(ps, rng);
      v_.init(ps, rng);
      o_.init(ps, rng);
    } else {
      mix_.init(ps, rng);
    }
    if (cfg_.use_flow) {
      flow_.init(ps, rng);
    } else {
      gauss_.init(ps, rng);
      ps.value(gauss_.path + ".weight").fill(0.0);
    }
  }
  ParameterSet make_parameters(RandomStream& rng) const {
    ParameterSet ps;
    init(ps, rng);
    return ps;
  }

  // ---- context ------------------------------------------------------------

  // One recurrent step. x holds [y_prev, covariates] without the identifier.
  template <class PS>
  Var step(Graph& g, PS& ps, Var x, Var id_rows, Var h) const {
    return gru_.step(g, ps, concat_cols({x, id_rows}), h);
  }

  template <class PS>
  Var identifiers(Graph& g, PS& ps, const std::vector<std::size_t>& series_index) const {
    return gather_rows(g.param(ps, prefix_ + ".id"), series_index);
  }

  // Scan of aligned (value, covariate) rows from a zero state; returns c.
  template <class PS>
  Var context(Graph& g, PS& ps, const Tensor& values, const Tensor& covariates, std::size_t series_index) const {
    require(values.rows() >= 1, "context: window length must be >= 1");
    require(values.rows() == covariates.rows(), "context: " + std::to_string(values.rows()) + " value rows but " +
                                                    std::to_string(covariates.rows()) + " covariate rows");
    require(values.cols() == cfg_.channels && covariates.cols() == kTimeFeatureCount + cfg_.extra_covariates,
            "context: unexpected value or covariate width");
    Var id = identifiers(g, ps, {series_index});
    Var h = g.constant(Tensor(Shape{1, cfg_.context_dim}));
    for (std::size_t t = 0; t < values.rows(); ++t) {
      Tensor x(Shape{1, values.cols() + covariates.cols()});
      for (std::size_t c = 0; c < values.cols(); ++c) x[c] = values.at(t, c);
      for (std::size_t c = 0; c < covariates.cols(); ++c) x[values.cols() + c] = covariates.at(t, c);
      h = step(g, ps, g.constant(std::move(x)), id, h);
    }
    return h;
  }

  // ---- fusion -------------------------------------------------------------

  // Scale tokens for W windows. With row_index the token rows are gathered to
  // one row per conditioning row; otherwise they stay one per window.
  template <class PS>
  ScaleTokens scale_tokens(Graph& g, PS& ps, const ScaleRows& rows, const std::vector<std::size_t>* row_index = nullptr) const {
    ScaleTokens tok;
    if (!cfg_.use_repr || !cfg_.use_fusion) return tok;
    const std::size_t W = rows.present.rows(), S = cfg_.scale_count, K = cfg_.repr_dim;
    require(rows.present.cols() == S && rows.vectors.cols() == S * K, "scale_tokens: representation width mismatch");
    Var all = g.constant(rows.vectors);
    const std::size_t R = row_index ? row_index->size() : W;
    std::vector<Var> mask_cols;
    for (std::size_t s = 0; s < S; ++s) {
      bool any = false;
      for (std::size_t w = 0; w < W; ++w) any = any || rows.present.at(w, s) != 0.0;
      if (!any) continue;  // fully masked token contributes exactly nothing
      Var p = proj_(g, ps, slice_cols(all, s * K, K));  // tied across scales
      Var kk = k_(g, ps, p), vv = v_(g, ps, p);
      Tensor m(Shape{R, 1});
      for (std::size_t r = 0; r < R; ++r) {
        const std::size_t w = row_index ? (*row_index)[r] : r;
        m[r] = rows.present.at(w, s) != 0.0 ? 0.0 : kMaskedLogit;
      }
      if (row_index) {
        kk = gather_rows(kk, *row_index);
        vv = gather_rows(vv, *row_index);
      }
      tok.keys.push_back(kk);
      tok.values.push_back(vv);
      tok.scale_index.push_back(s);
      mask_cols.push_back(g.constant(std::move(m)));
    }
    if (!tok.empty()) {
      mask_cols.insert(mask_cols.begin(), g.constant(Tensor(Shape{R, 1})));  // the context token is never masked
      tok.mask = concat_cols(mask_cols);
    }
    return tok;
  }

  // h = c + Out(MultiHead(q = c; keys/values = [c, scale tokens])). Token
  // rows broadcast when they have one row. weights (optional) receives the
  // per-head attention matrices, rows x (1 + tokens).
  template <class PS>
  Var fuse(Graph& g, PS& ps, Var c, const ScaleTokens& tok, std::vector<Tensor>* weights = nullptr) const {
    const std::size_t dc = cfg_.context_dim, H = cfg_.heads, dh = dc / H;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    Var q = q_(g, ps, c), kc = k_(g, ps, c), vc = v_(g, ps, c);
    std::vector<Var> heads;
    for (std::size_t h = 0; h < H; ++h) {
      Var qh = slice_cols(q, h * dh, dh);
      Var vh = slice_cols(vc, h * dh, dh);
      if (tok.empty()) {
        // Softmax over a single token is exactly 1.
        if (weights) weights->push_back(Tensor(Shape{c.rows(), 1}, 1.0));
        heads.push_back(vh);
        continue;
      }
      std::vector<Var> logits{row_dot(qh, slice_cols(kc, h * dh, dh))};
      for (Var k : tok.keys) logits.push_back(sum_cols(mul(qh, slice_cols(k, h * dh, dh))));
      Var w = softmax_rows(add(scale(concat_cols(logits), inv), tok.mask));
      if (weights) weights->push_back(w.value());
      Var out = mul(slice_cols(w, 0, 1), vh);
      for (std::size_t j = 0; j < tok.values.size(); ++j)
        out = add(out, mul(slice_cols(w, j + 1, 1), slice_cols(tok.values[j], h * dh, dh)));
      heads.push_back(out);
    }
    return add(c, o_(g, ps, H == 1 ? heads[0] : concat_cols(heads)));
  }

  // Ablation without attention: h = Linear(c ⊕ mean of present scale vectors).
  template <class PS>
  Var mix(Graph& g, PS& ps, Var c, const ScaleRows& rows, const std::vector<std::size_t>* row_index = nullptr) const {
    const std::size_t W = rows.present.rows(), S = cfg_.scale_count, K = cfg_.repr_dim;
    const std::size_t R = row_index ? row_index->size() : W;
    Tensor avg(Shape{R, K});
    if (cfg_.use_repr) {
      for (std::size_t r = 0; r < R; ++r) {
        const std::size_t w = row_index ? (*row_index)[r] : r;
        double n = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
          if (rows.present.at(w, s) == 0.0) continue;
          n += 1.0;
          for (std::size_t k = 0; k < K; ++k) avg.at(r, k) += rows.vectors.at(w, s * K + k);
        }
        if (n > 0.0)
          for (std::size_t k = 0; k < K; ++k) avg.at(r, k) /= n;
      }
    }
    Var a = g.constant(std::move(avg));
    if (c.rows() != R) a = gather_rows(a, std::vector<std::size_t>(c.rows(), 0));
    return mix_(g, ps, concat_cols({c, a}));
  }

  // h_t for context rows c; row_index maps rows to windows of `rows`.
  template <class PS>
  Var condition(Graph& g, PS& ps, Var c, const ScaleRows& rows, const std::vector<std::size_t>* row_index = nullptr) const {
    if (!cfg_.use_fusion) return mix(g, ps, c, rows, row_index);
    return fuse(g, ps, c, scale_tokens(g, ps, rows, row_index));
  }

  // ---- density head -------------------------------------------------------

  template <class PS>
  Var log_density(Graph& g, PS& ps, Var y, Var h) const {
    if (cfg_.use_flow) return flow_.log_density(g, ps, y, h);
    auto [mu, s] = gaussian(g, ps, h);
    const double c = -0.5 * static_cast<double>(cfg_.channels) * std::log(2.0 * std::numbers::pi);
    Var z = mul(sub(y, mu), exp(scale(s, -1.0)));
    return add_scalar(sub(scale(sum_cols(square(z)), -0.5), sum_cols(s)), c);
  }

  // One draw per row of h.
  Tensor sample(const ParameterSet& ps, const Tensor& h, RandomStream& stream) const {
    if (cfg_.use_flow) return flow_.sample(ps, h, stream, 1);
    Graph g;
    auto [mu, s] = gaussian(g, ps, g.constant(h));
    Tensor z = draw(stream, Distribution::standard_normal, {h.rows(), cfg_.channels});
    return add(mu, mul(exp(s), g.constant(std::move(z)))).value();
  }

  // Image of z = 0: the head's conditional location.
  Tensor location(const ParameterSet& ps, const Tensor& h) const {
    Graph g;
    if (!cfg_.use_flow) return gaussian(g, ps, g.constant(h)).first.value();
    return flow_.forward(g, ps, g.constant(Tensor(Shape{h.rows(), cfg_.channels})), g.constant(h)).out.value();
  }

  // ---- training objective -------------------------------------------------

  // Per-step log-densities of the teacher-forced horizon, (N*B) x 1,
  // step-major. The recurrence runs over all L+N-1 inputs.
  template <class PS>
  Var teacher_forced_log_density(Graph& g, PS& ps, const ForecastBatch& b) const {
    const std::size_t B = b.size();
    require(B > 0 && b.inputs.size() == b.backcast + b.horizon - 1, "teacher forcing: malformed batch");
    Var id = identifiers(g, ps, b.series_index);
    Var h = g.constant(Tensor(Shape{B, cfg_.context_dim}));
    std::vector<Var> ctx;
    for (std::size_t j = 0; j < b.inputs.size(); ++j) {
      h = step(g, ps, g.constant(b.inputs[j]), id, h);
      if (j + 1 >= b.backcast) ctx.push_back(h);
    }
    std::vector<std::size_t> row_window(b.horizon * B);
    for (std::size_t r = 0; r < row_window.size(); ++r) row_window[r] = r % B;
    Var c = ctx.size() == 1 ? ctx[0] : concat_rows(ctx);
    Var cond = condition(g, ps, c, b.scales, &row_window);
    return log_density(g, ps, g.constant(b.targets), cond);
  }

  // Mean negative log-likelihood over all teacher-forced steps.
  template <class PS>
  Var nll(Graph& g, PS& ps, const ForecastBatch& b) const {
    return scale(mean(teacher_forced_log_density(g, ps, b)), -1.0);
  }

  // ---- forecasting --------------------------------------------------------

  // n_samples trajectories from origin (row index) over N steps. Reads values
  // only up to the origin; future covariates are known by construction.
  ForecastDistribution forecast(const ParameterSet& ps, const TimeSeries& ts, std::size_t series_index,
                                std::size_t origin, std::size_t backcast, const MultiscaleRepresentation* repr,
                                std::size_t N, std::size_t n_samples, RandomStream stream) const {
    require(N >= 1 && n_samples >= 1, "forecast: horizon and n_samples must be >= 1");
    require(backcast >= 1, "forecast: backcast must be >= 1");
    if (origin >= ts.length() || origin + 1 < backcast)
      throw ConfigError("forecast: origin row " + std::to_string(origin) + " needs " + std::to_string(backcast) +
                        " rows of history in series '" + ts.series_id + "'");
    if (cfg_.use_repr && repr == nullptr)
      throw ArtifactError("no stored representation at or before the forecast origin of series '" + ts.series_id +
                          "'; run the `encode` command first");
    const std::size_t D = cfg_.channels, dc = cfg_.context_dim, start = origin + 1 - backcast;
    const ScaleRows rows = scale_rows({cfg_.use_repr ? repr : nullptr}, cfg_.scale_count, cfg_.repr_dim);
    const Tensor id_row = ps.value(prefix_ + ".id").row_copy(series_index);

    // Warm-up over the backcast is shared by every trajectory.
    Tensor hidden(Shape{1, dc});
    for (std::size_t j = 1; j < backcast; ++j) {
      Graph g;
      Tensor x = input_row(ts, start + j, ts.values.row_copy(start + j - 1));
      hidden = step(g, ps, g.constant(std::move(x)), g.constant(id_row), g.constant(hidden)).value();
    }
    Tensor h_all(Shape{n_samples, dc});
    for (std::size_t i = 0; i < n_samples; ++i) std::copy_n(hidden.data().begin(), dc, h_all.data().begin() + i * dc);
    Tensor prev(Shape{n_samples, D});
    for (std::size_t i = 0; i < n_samples; ++i)
      for (std::size_t c = 0; c < D; ++c) prev.at(i, c) = ts.values.at(origin, c);

    ForecastDistribution out;
    out.horizon = N;
    out.channels = D;
    out.samples = Tensor(Shape{n_samples, N * D});
    for (std::size_t s = 0; s < N; ++s) {
      Graph g;
      const std::vector<double> cov = step_covariates(ts, origin + 1 + s);
      Tensor x(Shape{n_samples, D + cov.size()});
      for (std::size_t i = 0; i < n_samples; ++i) {
        for (std::size_t c = 0; c < D; ++c) x.at(i, c) = prev.at(i, c);
        for (std::size_t c = 0; c < cov.size(); ++c) x.at(i, D + c) = cov[c];
      }
      Var id = gather_rows(g.constant(id_row), std::vector<std::size_t>(n_samples, 0));
      Var hv = step(g, ps, g.constant(std::move(x)), id, g.constant(h_all));
      h_all = hv.value();
      const Tensor cond = condition(g, ps, hv, rows, nullptr).value();
      prev = sample(ps, cond, stream);
      for (std::size_t i = 0; i < n_samples; ++i)
        for (std::size_t c = 0; c < D; ++c) out.samples.at(i, s * D + c) = prev.at(i, c);
    }
    summarize_samples(out);
    return out;
  }

  static void summarize_samples(ForecastDistribution& f) {
    const std::size_t n = f.samples.rows(), N = f.horizon, D = f.channels;
    f.point = f.q10 = f.q50 = f.q90 = Tensor(Shape{N, D});
    std::vector<double> col(n);
    for (std::size_t s = 0; s < N; ++s)
      for (std::size_t c = 0; c < D; ++c) {
        for (std::size_t i = 0; i < n; ++i) col[i] = f.samples.at(i, s * D + c);
        std::sort(col.begin(), col.end());
        f.q10.at(s, c) = sorted_quantile(col, 0.1);
        f.q50.at(s, c) = sorted_quantile(col, 0.5);
        f.q90.at(s, c) = sorted_quantile(col, 0.9);
        f.point.at(s, c) = f.q50.at(s, c);
      }
  }

  // Inputs for window rows [start, start+L+N): step j sees y_{j-1} and x_j.
  ForecastBatch make_batch(const std::vector<WindowRef>& windows, std::size_t L, std::size_t N) const {
    require(L >= 1 && N >= 1, "make_batch: backcast and horizon must be >= 1");
    ForecastBatch b;
    b.backcast = L;
    b.horizon = N;
    const std::size_t B = windows.size(), D = cfg_.channels;
    const std::size_t width = D + kTimeFeatureCount + cfg_.extra_covariates;
    b.inputs.assign(L + N - 1, Tensor(Shape{B, width}));
    b.targets = Tensor(Shape{N * B, D});
    std::vector<const MultiscaleRepresentation*> reps;
    for (std::size_t w = 0; w < B; ++w) {
      const auto& win = windows[w];
      const TimeSeries& ts = *win.series;
      require(win.start + L + N <= ts.length(), "make_batch: window exceeds series '" + ts.series_id + "'");
      require(ts.channels() == D && ts.covariates.cols() == cfg_.extra_covariates, "make_batch: series width mismatch");
      b.series_index.push_back(win.series_index);
      reps.push_back(cfg_.use_repr ? win.repr : nullptr);
      for (std::size_t j = 1; j < L + N; ++j) {
        const Tensor x = input_row(ts, win.start + j, ts.values.row_copy(win.start + j - 1));
        std::copy_n(x.data().begin(), width, b.inputs[j - 1].data().begin() + w * width);
      }
      for (std::size_t s = 0; s < N; ++s)
        for (std::size_t c = 0; c < D; ++c) b.targets.at(s * B + w, c) = ts.values.at(win.start + L + s, c);
    }
    b.scales = scale_rows(reps, cfg_.scale_count, cfg_.repr_dim);
    return b;
  }

 private:
  Tensor input_row(const TimeSeries& ts, std::size_t i, const Tensor& prev) const {
    const auto cov = step_covariates(ts, i);
    Tensor x(Shape{1, prev.size() + cov.size()});
    std::copy(prev.data().begin(), prev.data().end(), x.data().begin());
    std::copy(cov.begin(), cov.end(), x.data().begin() + static_cast<std::ptrdiff_t>(prev.size()));
    return x;
  }

  template <class PS>
  std::pair<Var, Var> gaussian(Graph& g, PS& ps, Var h) const {
    Var o = gauss_(g, ps, h);
    const std::size_t D = cfg_.channels;
    return {slice_cols(o, 0, D), scale(tanh(slice_cols(o, D, D)), cfg_.scale_clamp)};
  }

  ForecasterConfig cfg_;
  std::string prefix_;
  FlowStack flow_;
  nn::GruCell gru_;
  nn::Mlp proj_;
  nn::Linear q_, k_, v_, o_, mix_, gauss_;
};

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t steps_per_epoch = 50;
  std::size_t batch_size = 16;
  std::size_t backcast = 96;  // L
  std::size_t horizon = 96;   // teacher-forced steps per window
  std::size_t window_stride = 1;
  double learning_rate = 1e-3;
  double grad_clip = 1.0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (backcast < 1) throw ConfigError("train.backcast must be >= 1");
    if (horizon < 1) throw ConfigError("train.horizon must be >= 1");
    if (window_stride < 1) throw ConfigError("train.window_stride must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
    if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
  }
};

// Training windows with their representations resolved from a store.
struct TrainingSet {
  std::vector<WindowRef> windows;
  std::map<std::pair<std::string, std::int64_t>, MultiscaleRepresentation> cache;
  std::size_t skipped = 0;  // windows with no stored anchor at or before the origin
};

// Enumerates windows of every series and attaches the representation at the
// nearest stored anchor not after each window's origin. Windows without one
// are skipped and counted. store may be null only when use_repr is off.
inline std::unique_ptr<TrainingSet> collect_training_windows(const std::vector<TimeSeries>& series, const ReprStore* store,
                                                             bool use_repr, const TrainConfig& cfg) {
  cfg.validate();
  if (use_repr && store == nullptr)
    throw ArtifactError("representation store is missing; run the `encode` command first");
  auto set = std::make_unique<TrainingSet>();
  for (std::size_t i = 0; i < series.size(); ++i) {
    const TimeSeries& ts = series[i];
    if (ts.length() < cfg.backcast + cfg.horizon) continue;
    const std::size_t n = window_count(ts.length(), cfg.backcast, cfg.horizon, cfg.window_stride);
    for (std::size_t w = 0; w < n; ++w) {
      WindowRef ref{&ts, i, w * cfg.window_stride, nullptr};
      if (use_repr) {
        const std::int64_t origin = ts.timestamps[ref.start + cfg.backcast - 1];
        const auto anchor = store->nearest_anchor(ts.series_id, origin);
        if (!anchor) {
          ++set->skipped;
          continue;
        }
        const auto key = std::make_pair(ts.series_id, *anchor);
        auto it = set->cache.find(key);
        if (it == set->cache.end()) it = set->cache.emplace(key, *store->get(ts.series_id, *anchor)).first;
        ref.repr = &it->second;
      }
      set->windows.push_back(ref);
    }
  }
  if (set->skipped > 0)
    warn(std::to_string(set->skipped) + " training windows skipped: no stored representation at or before their origin");
  if (set->windows.empty())
    throw ConfigError("no training windows: every series is shorter than backcast + horizon (" +
                      std::to_string(cfg.backcast + cfg.horizon) + ") or lacks stored representations");
  return set;
}

struct TrainRecord {
  std::size_t epoch = 0, step = 0;
  double nll = 0.0;
};

struct TrainResult {
  std::vector<TrainRecord> history;
  std::vector<double> epoch_mean;
};

// Adam on the mean teacher-forced NLL. Batches are drawn with substream
// split(global step), so a run is a pure function of (data, config, stream).
inline TrainResult train_forecaster(const Forecaster& model, ParameterSet& ps, const TrainingSet& data, const TrainConfig& cfg,
                                    const RandomStream& stream,
                                    const std::function<void(const TrainRecord&)>& on_step = nullptr) {
  cfg.validate();
  TrainResult res;
  Adam opt(cfg.learning_rate);
  std::size_t global = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    double acc = 0.0;
    for (std::size_t k = 0; k < cfg.steps_per_epoch; ++k, ++global) {
      RandomStream rng = stream.split(global);
      std::vector<WindowRef> pick;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) pick.push_back(data.windows[rng.uniform_index(data.windows.size())]);
      const ForecastBatch batch = model.make_batch(pick, cfg.backcast, cfg.horizon);
      ps.zero_grad();
      double loss = 0.0;
      try {
        Graph g;
        Var l = model.nll(g, ps, batch);
        loss = l.value().item();
        g.backward(l);
      } catch (const NumericFailure& err) {
        throw NumericFailure("training batch " + std::to_string(global) + ": " + err.what());
      }
      if (cfg.grad_clip > 0.0) clip_grad_norm(ps, cfg.grad_clip);
      opt.step(ps);
      const TrainRecord rec{e, k, loss};
      res.history.push_back(rec);
      acc += loss;
      if (on_step) on_step(rec);
    }
    res.epoch_mean.push_back(cfg.steps_per_epoch ? acc / static_cast<double>(cfg.steps_per_epoch) : 0.0);
    info("forecaster epoch " + std::to_string(e) + " mean nll " + format_double(res.epoch_mean.back()));
  }
  return res;
}

// Repeats the last observed season: y(t+s) = y(t+s - P*ceil(s/P)).
inline Tensor seasonal_naive(const TimeSeries& ts, std::size_t origin, std::size_t N, std::size_t period) {
  require(period >= 1 && origin + 1 >= period, "seasonal_naive: need one full period of history before the origin");
  Tensor out(Shape{N, ts.channels()});
  for (std::size_t s = 1; s <= N; ++s) {
    const std::size_t back = period * ((s + period - 1) / period);
    for (std::size_t c = 0; c < ts.channels(); ++c) out.at(s - 1, c) = ts.values.at(origin + s - back, c);
  }
  return out;
}

}  // namespace msf
