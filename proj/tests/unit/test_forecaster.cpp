#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "msflow/forecaster.hpp"

using namespace msf;

namespace {

ForecasterConfig tiny(bool repr = true, bool fusion = true, bool flow = true) {
  ForecasterConfig c;
  c.series_count = 2;
  c.id_dim = 2;
  c.context_dim = 8;
  c.heads = 2;
  c.repr_dim = 3;
  c.scale_count = 2;
  c.proj_hidden = 5;
  c.flow_layers = 2;
  c.flow_hidden = 6;
  c.use_repr = repr;
  c.use_fusion = fusion;
  c.use_flow = flow;
  return c;
}

TimeSeries sine_series(std::size_t T, const std::string& id, std::uint64_t seed, double noise = 0.1) {
  RandomStream rng(seed);
  TimeSeries ts;
  ts.series_id = id;
  ts.values = Tensor(Shape{T, 1});
  ts.covariates = Tensor(Shape{T, 0});
  for (std::size_t t = 0; t < T; ++t) {
    ts.timestamps.push_back(1'700'000'000 + static_cast<std::int64_t>(t) * 300);
    ts.values[t] = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 24.0) + noise * rng.normal();
  }
  return ts;
}

MultiscaleRepresentation random_repr(RandomStream& rng, std::uint32_t present = 0b11) {
  return MultiscaleRepresentation{"s", 0, present, msf::testing::random_tensor(Shape{2, 3}, rng)};
}

void randomize(ParameterSet& ps, RandomStream& rng, double s = 0.4) {
  for (auto& [_, e] : ps.entries())
    for (auto& v : e.value.data()) v = s * rng.normal();
}

}  // namespace

TEST(Context, SingleStepIsOneCellApplication) {
  Forecaster model(tiny());
  RandomStream rng(1);
  auto ps = model.make_parameters(rng);
  randomize(ps, rng);
  const Tensor y = Tensor::row({0.7}), x = Tensor::row({0.1, -0.2, 0.3, -0.4});
  Graph g;
  const Tensor c = model.context(g, ps, y, x, 1).value();
  nn::GruCell cell{"forecaster.gru", model.config().input_dim(), 8};
  Tensor in(Shape{1, 7});
  in[0] = 0.7;
  for (int k = 0; k < 4; ++k) in[1 + k] = x[k];
  in[5] = ps.value("forecaster.id").at(1, 0);
  in[6] = ps.value("forecaster.id").at(1, 1);
  Graph g2;
  const Tensor ref = cell.step(g2, ps, g2.constant(in), g2.constant(Tensor(Shape{1, 8}))).value();
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(c[k], ref[k], 1e-15);
}

TEST(Context, ZeroWeightsGiveZeroContext) {
  Forecaster model(tiny());
  RandomStream rng(2);
  auto ps = model.make_parameters(rng);
  for (auto& [path, e] : ps.entries())
    if (path.starts_with("forecaster.gru")) e.value.fill(0.0);
  Graph g;
  const Tensor c = model.context(g, ps, msf::testing::random_tensor(Shape{10, 1}, rng),
                                 msf::testing::random_tensor(Shape{10, 4}, rng), 0).value();
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Context, EarliestStepInfluencesContext) {
  Forecaster model(tiny());
  RandomStream rng(3);
  auto ps = model.make_parameters(rng);
  Tensor y = msf::testing::random_tensor(Shape{12, 1}, rng);
  const Tensor x = msf::testing::random_tensor(Shape{12, 4}, rng);
  Graph g;
  const Tensor a = model.context(g, ps, y, x, 0).value();
  y[0] += 1.0;
  const Tensor b = model.context(g, ps, y, x, 0).value();
  double diff = 0.0;
  for (std::size_t k = 0; k < 8; ++k) diff += std::abs(a[k] - b[k]);
  EXPECT_GT(diff, 1e-8);
}

TEST(Context, LengthMismatchIsContractViolation) {
  Forecaster model(tiny());
  RandomStream rng(4);
  auto ps = model.make_parameters(rng);
  Graph g;
  EXPECT_THROW(model.context(g, ps, Tensor(Shape{5, 1}), Tensor(Shape{4, 4}), 0), ContractViolation);
  EXPECT_THROW(model.context(g, ps, Tensor(Shape{0, 1}), Tensor(Shape{0, 4}), 0), ContractViolation);
}

TEST(Fusion, SingleTokenIsResidualPlusValue) {
  Forecaster model(tiny());
  RandomStream rng(5);
  auto ps = model.make_parameters(rng);
  randomize(ps, rng);
  const Tensor c = msf::testing::random_tensor(Shape{3, 8}, rng);
  Graph g;
  ScaleRows none = scale_rows({nullptr, nullptr, nullptr}, 2, 3);
  std::vector<Tensor> w;
  const Tensor h = model.fuse(g, ps, g.constant(c), model.scale_tokens(g, ps, none), &w).value();
  for (const auto& m : w)
    for (double v : m.data()) EXPECT_EQ(v, 1.0);
  nn::Linear v{"forecaster.fusion.v", 8, 8}, o{"forecaster.fusion.out", 8, 8};
  const Tensor ref = add(g.constant(c), o(g, ps, v(g, ps, g.constant(c)))).value();
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(h[i], ref[i], 1e-14);
}

TEST(Fusion, AttentionRowsSumToOneAndMaskAbsentScales) {
  Forecaster model(tiny());
  RandomStream rng(6);
  auto ps = model.make_parameters(rng);
  randomize(ps, rng, 1.0);
  auto full = random_repr(rng), partial = random_repr(rng, 0b01);
  const ScaleRows rows = scale_rows({&full, &partial}, 2, 3);
  Graph g;
  std::vector<Tensor> w;
  model.fuse(g, ps, g.constant(msf::testing::random_tensor(Shape{2, 8}, rng)), model.scale_tokens(g, ps, rows), &w);
  ASSERT_EQ(w.size(), 2u);
  for (const auto& m : w) {
    ASSERT_EQ(m.cols(), 3u);
    for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(m.at(r, 0) + m.at(r, 1) + m.at(r, 2), 1.0, 1e-12);
    EXPECT_EQ(m.at(1, 2), 0.0);  // weekly scale absent for the second window
    EXPECT_GT(m.at(0, 2), 0.0);
  }
}

TEST(Fusion, TiedProjectionMakesScaleOrderIrrelevant) {
  Forecaster model(tiny());
  RandomStream rng(7);
  auto ps = model.make_parameters(rng);
  randomize(ps, rng, 0.8);
  auto r = random_repr(rng);
  MultiscaleRepresentation swapped = r;
  for (std::size_t k = 0; k < 3; ++k) std::swap(swapped.vectors.at(0, k), swapped.vectors.at(1, k));
  const Tensor c = msf::testing::random_tensor(Shape{4, 8}, rng);
  Graph g;
  const Tensor a = model.fuse(g, ps, g.constant(c), model.scale_tokens(g, ps, scale_rows({&r}, 2, 3))).value();
  const Tensor b = model.fuse(g, ps, g.constant(c), model.scale_tokens(g, ps, scale_rows({&swapped}, 2, 3))).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Fusion, BroadcastTokensMatchGatheredTokens) {
  Forecaster model(tiny());
  RandomStream rng(8);
  auto ps = model.make_parameters(rng);
  auto r = random_repr(rng);
  const ScaleRows rows = scale_rows({&r}, 2, 3);
  const Tensor c = msf::testing::random_tensor(Shape{5, 8}, rng);
  const std::vector<std::size_t> idx(5, 0);
  Graph g;
  const Tensor a = model.fuse(g, ps, g.constant(c), model.scale_tokens(g, ps, rows)).value();
  const Tensor b = model.fuse(g, ps, g.constant(c), model.scale_tokens(g, ps, rows, &idx)).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

class TeacherForcing : public ::testing::Test {
 protected:
  void SetUp() override {
    series_ = {sine_series(80, "a", 1), sine_series(80, "b", 2)};
    RandomStream rng(9);
    reprs_ = {random_repr(rng), random_repr(rng, 0b01), random_repr(rng)};
    windows_ = {{&series_[0], 0, 3, &reprs_[0]}, {&series_[1], 1, 10, &reprs_[1]}, {&series_[0], 0, 40, &reprs_[2]}};
  }
  std::vector<TimeSeries> series_;
  std::vector<MultiscaleRepresentation> reprs_;
  std::vector<WindowRef> windows_;
};

TEST_F(TeacherForcing, LossIsMeanExactLogDensityOfEachStep) {
  for (bool flow : {true, false}) {
    Forecaster model(tiny(true, true, flow));
    RandomStream rng(10);
    auto ps = model.make_parameters(rng);
    randomize(ps, rng, 0.3);
    const std::size_t L = 4, N = 3;
    const auto batch = model.make_batch(windows_, L, N);
    Graph g;
    const double loss = model.nll(g, ps, batch).value().item();
    double total = 0.0;
    for (const auto& w : windows_) {
      // Step-by-step evaluation of one window.
      Graph gw;
      Var id = model.identifiers(gw, ps, {w.series_index});
      Var h = gw.constant(Tensor(Shape{1, 8}));
      const ScaleRows rows = scale_rows({w.repr}, 2, 3);
      for (std::size_t j = 1; j < L + N; ++j) {
        const auto cov = step_covariates(*w.series, w.start + j);
        Tensor x(Shape{1, 5});
        x[0] = w.series->values[w.start + j - 1];
        for (int k = 0; k < 4; ++k) x[1 + k] = cov[k];
        h = model.step(gw, ps, gw.constant(x), id, h);
        if (j >= L) {
          Var cond = model.condition(gw, ps, h, rows);
          total += model.log_density(gw, ps, gw.constant(Tensor::row({w.series->values[w.start + j]})), cond).value()[0];
        }
      }
    }
    EXPECT_NEAR(loss, -total / static_cast<double>(windows_.size() * N), 1e-10) << flow;
  }
}

TEST_F(TeacherForcing, GradientsMatchFiniteDifferences) {
  struct Variant {
    bool repr, fusion, flow;
  };
  for (Variant v : {Variant{true, true, true}, Variant{false, true, true}, Variant{true, false, true}, Variant{true, true, false}}) {
    Forecaster model(tiny(v.repr, v.fusion, v.flow));
    RandomStream rng(11);
    auto ps = model.make_parameters(rng);
    randomize(ps, rng, 0.3);
    const auto batch = model.make_batch(windows_, 3, 2);
    const auto res = msf::testing::check_gradients(ps, [&](Graph& g, ParameterSet& p) { return model.nll(g, p, batch); });
    EXPECT_LT(res.worst_relative_error, 1e-3) << res.worst_parameter;
    EXPECT_GT(res.parameters_checked, 10u);
  }
}

TEST_F(TeacherForcing, AblationsAllocateOnlyTheirComponents) {
  RandomStream rng(12);
  auto full = Forecaster(tiny()).make_parameters(rng);
  auto no_repr = Forecaster(tiny(false)).make_parameters(rng);
  auto no_fusion = Forecaster(tiny(true, false)).make_parameters(rng);
  auto no_flow = Forecaster(tiny(true, true, false)).make_parameters(rng);
  EXPECT_TRUE(full.contains("forecaster.scale_proj.0.weight"));
  EXPECT_FALSE(no_repr.contains("forecaster.scale_proj.0.weight"));
  EXPECT_TRUE(no_fusion.contains("forecaster.mix.weight"));
  EXPECT_FALSE(no_fusion.contains("forecaster.fusion.q.weight"));
  EXPECT_TRUE(no_flow.contains("forecaster.gauss.weight"));
  EXPECT_FALSE(no_flow.contains("forecaster.flow.layer0.s.0.weight"));
}

TEST(Training, ZeroEpochsLeaveParametersUnchanged) {
  std::vector<TimeSeries> s{sine_series(60, "a", 1)};
  Forecaster model(tiny(false));
  RandomStream rng(13);
  auto ps = model.make_parameters(rng);
  const ParameterSet before = ps;
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.backcast = 8;
  cfg.horizon = 4;
  const auto data = collect_training_windows(s, nullptr, false, cfg);
  const auto res = train_forecaster(model, ps, *data, cfg, RandomStream(1));
  EXPECT_TRUE(res.history.empty());
  EXPECT_TRUE(ps == before);
}

TEST(Training, NllDecreasesOnSinusoid) {
  std::vector<TimeSeries> s{sine_series(400, "a", 1)};
  Forecaster model(tiny(false));
  RandomStream rng(14);
  auto ps = model.make_parameters(rng);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 100;
  cfg.batch_size = 8;
  cfg.backcast = 12;
  cfg.horizon = 6;
  cfg.learning_rate = 1e-2;
  const auto data = collect_training_windows(s, nullptr, false, cfg);
  const auto res = train_forecaster(model, ps, *data, cfg, RandomStream(2));
  ASSERT_EQ(res.history.size(), 100u);
  EXPECT_LT(res.history.back().nll, res.history.front().nll);
}

TEST(Training, IsDeterministicAndSampleFree) {
  std::vector<TimeSeries> s{sine_series(200, "a", 1)};
  Forecaster model(tiny(false));
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 5;
  cfg.batch_size = 4;
  cfg.backcast = 6;
  cfg.horizon = 3;
  const auto data = collect_training_windows(s, nullptr, false, cfg);
  RandomStream r1(3), r2(3);
  auto a = model.make_parameters(r1), b = model.make_parameters(r2);
  train_forecaster(model, a, *data, cfg, RandomStream(5));
  train_forecaster(model, b, *data, cfg, RandomStream(5));
  EXPECT_TRUE(a == b);
  const auto batch = model.make_batch({data->windows[0], data->windows[7]}, 6, 3);
  Graph g;
  const double before = model.nll(g, a, batch).value().item();
  model.forecast(a, s[0], 0, 100, 6, nullptr, 4, 10, RandomStream(1));
  model.forecast(a, s[0], 0, 100, 6, nullptr, 4, 20, RandomStream(1));
  Graph g2;
  EXPECT_EQ(model.nll(g2, a, batch).value().item(), before);
}

TEST(Training, WindowsWithoutAnchorsAreSkippedAndCounted) {
  const std::string dir = ::testing::TempDir();
  auto store = ReprStore::create(dir + "/skip.store", 3, {{"d", 4}, {"w", 8}});
  std::vector<TimeSeries> s{sine_series(40, "a", 1)};
  RandomStream rng(1);
  store.put(MultiscaleRepresentation{"a", s[0].timestamps[20], 0b11, msf::testing::random_tensor(Shape{2, 3}, rng)});
  TrainConfig cfg;
  cfg.backcast = 5;
  cfg.horizon = 2;
  const auto data = collect_training_windows(s, &store, true, cfg);
  // Origins are rows 4..37; those before row 20 have no anchor.
  EXPECT_EQ(data->skipped, 16u);
  EXPECT_EQ(data->windows.size(), 18u);
  for (const auto& w : data->windows) EXPECT_EQ(w.repr->anchor, s[0].timestamps[20]);
  EXPECT_THROW(collect_training_windows(s, nullptr, true, cfg), ArtifactError);
}

TEST(Forecast, OneStepOneSampleShape) {
  auto ts = sine_series(50, "a", 1);
  Forecaster model(tiny());
  RandomStream rng(15);
  auto ps = model.make_parameters(rng);
  auto r = random_repr(rng);
  const auto f = model.forecast(ps, ts, 0, 30, 10, &r, 1, 1, RandomStream(3));
  EXPECT_EQ(f.samples.rows(), 1u);
  EXPECT_EQ(f.samples.cols(), 1u);
  EXPECT_EQ(f.point[0], f.samples[0]);
  EXPECT_EQ(f.q10[0], f.samples[0]);
}

TEST(Forecast, QuantilesMonotoneOverManySeeds) {
  auto ts = sine_series(60, "a", 1);
  Forecaster model(tiny());
  RandomStream rng(16);
  auto ps = model.make_parameters(rng);
  randomize(ps, rng, 0.3);
  auto r = random_repr(rng);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto f = model.forecast(ps, ts, 0, 40, 6, &r, 3, 9, RandomStream(seed));
    for (std::size_t s = 0; s < 3; ++s) {
      ASSERT_LE(f.q10[s], f.q50[s]);
      ASSERT_LE(f.q50[s], f.q90[s]);
      ASSERT_EQ(f.point[s], f.q50[s]);
    }
  }
}

TEST(Forecast, DeterministicLimitFollowsLocationMap) {
  auto ts = sine_series(60, "a", 1);
  ForecasterConfig cfg = tiny();
  cfg.scale_clamp = 12.0;
  Forecaster model(cfg);
  RandomStream rng(17);
  auto ps = model.make_parameters(rng);
  randomize(ps, rng, 0.4);
  for (std::size_t k = 0; k < cfg.flow_layers; ++k) {
    const std::string p = "forecaster.flow.layer" + std::to_string(k);
    ps.value(p + ".s.1.weight").fill(0.0);
    ps.value(p + ".s.1.bias").fill(-6.0);  // s = 12 tanh(-6): exp(s) ~ 6e-6
  }
  auto r = random_repr(rng);
  const std::size_t origin = 40, L = 8, N = 5;
  const auto f = model.forecast(ps, ts, 1, origin, L, &r, N, 50, RandomStream(4));

  // Direct evaluation: feed the location back instead of samples.
  const ScaleRows rows = scale_rows({&r}, 2, 3);
  Tensor h(Shape{1, 8});
  double prev = 0.0;
  for (std::size_t j = origin + 2 - L; j <= origin + N; ++j) {
    Graph g;
    const auto cov = step_covariates(ts, j);
    Tensor x(Shape{1, 5});
    x[0] = j <= origin + 1 ? ts.values[j - 1] : prev;
    for (int k = 0; k < 4; ++k) x[1 + k] = cov[k];
    Var hv = model.step(g, ps, g.constant(x), model.identifiers(g, ps, {1}), g.constant(h));
    h = hv.value();
    if (j > origin) {
      prev = model.location(ps, model.condition(g, ps, hv, rows).value())[0];
      EXPECT_NEAR(f.point[j - origin - 1], prev, 1e-3) << j;
    }
  }
}

TEST(Forecast, FutureValuesDoNotLeak) {
  auto ts = sine_series(80, "a", 1);
  Forecaster model(tiny());
  RandomStream rng(18);
  auto ps = model.make_parameters(rng);
  randomize(ps, rng, 0.3);
  auto r = random_repr(rng);
  const auto a = model.forecast(ps, ts, 0, 50, 10, &r, 8, 20, RandomStream(6));
  for (std::size_t t = 51; t < 80; ++t) ts.values[t] = 1e6 + static_cast<double>(t);
  const auto b = model.forecast(ps, ts, 0, 50, 10, &r, 8, 20, RandomStream(6));
  EXPECT_EQ(a.samples, b.samples);
  ts.values[50] += 1.0;
  const auto c = model.forecast(ps, ts, 0, 50, 10, &r, 8, 20, RandomStream(6));
  EXPECT_NE(a.samples, c.samples);
}

TEST(Forecast, SeededAndStoreMissIsExplicit) {
  auto ts = sine_series(50, "a", 1);
  Forecaster model(tiny());
  RandomStream rng(19);
  auto ps = model.make_parameters(rng);
  auto r = random_repr(rng);
  EXPECT_EQ(model.forecast(ps, ts, 0, 30, 10, &r, 4, 7, RandomStream(1)).samples,
            model.forecast(ps, ts, 0, 30, 10, &r, 4, 7, RandomStream(1)).samples);
  EXPECT_NE(model.forecast(ps, ts, 0, 30, 10, &r, 4, 7, RandomStream(1)).samples,
            model.forecast(ps, ts, 0, 30, 10, &r, 4, 7, RandomStream(2)).samples);
  EXPECT_THROW(model.forecast(ps, ts, 0, 30, 10, nullptr, 4, 7, RandomStream(1)), ArtifactError);
  EXPECT_THROW(model.forecast(ps, ts, 0, 5, 10, &r, 4, 7, RandomStream(1)), ConfigError);
  Forecaster bare(tiny(false));
  auto ps2 = bare.make_parameters(rng);
  EXPECT_NO_THROW(bare.forecast(ps2, ts, 0, 30, 10, nullptr, 4, 7, RandomStream(1)));
}

TEST(Forecast, RunsPastTheEndOfTheData) {
  auto ts = sine_series(50, "a", 1);
  Forecaster model(tiny(false));
  RandomStream rng(20);
  auto ps = model.make_parameters(rng);
  const auto f = model.forecast(ps, ts, 0, 49, 10, nullptr, 5, 3, RandomStream(1));
  EXPECT_TRUE(f.samples.all_finite());
}

TEST(SeasonalNaive, RepeatsLastSeason) {
  TimeSeries ts = sine_series(30, "a", 1);
  for (std::size_t t = 0; t < 30; ++t) ts.values[t] = static_cast<double>(t);
  const Tensor p = seasonal_naive(ts, 9, 7, 3);
  EXPECT_EQ(p.data(), (std::vector<double>{7, 8, 9, 7, 8, 9, 7}));
  EXPECT_THROW(seasonal_naive(ts, 1, 3, 3), ContractViolation);
}

TEST(Quantile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(sorted_quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(sorted_quantile({1, 2, 3, 4}, 0.1), 1.3);
  EXPECT_DOUBLE_EQ(sorted_quantile({5}, 0.9), 5.0);
}
