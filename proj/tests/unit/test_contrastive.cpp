#include <gtest/gtest.h>

#include <cmath>

#include "contrastive_oracles.hpp"
#include "msflow/contrastive.hpp"

using namespace msf;
using namespace msf::testing;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.latent_dim = 8;
  c.hidden_dim = 8;
  c.heads = 2;
  c.conv_count = 2;
  c.time_dim = 4;
  c.freq_dim = 4;
  c.fft_window = 8;
  c.mlp_hidden = 8;
  return c;
}

std::vector<TimeSeries> toy_series(std::size_t count, std::size_t T, std::uint64_t seed) {
  RandomStream rng(seed);
  std::vector<TimeSeries> out;
  for (std::size_t s = 0; s < count; ++s) {
    TimeSeries ts;
    ts.series_id = "s" + std::to_string(s);
    ts.values = Tensor(Shape{T, 1});
    ts.covariates = Tensor(Shape{T, 0});
    const double period = 6.0 + 4.0 * static_cast<double>(s);
    for (std::size_t t = 0; t < T; ++t) {
      ts.timestamps.push_back(static_cast<std::int64_t>(t) * 60);
      ts.values[t] = std::sin(2.0 * 3.141592653589793 * static_cast<double>(t) / period) + 0.1 * rng.normal();
    }
    out.push_back(std::move(ts));
  }
  return out;
}

}  // namespace

TEST(TimeContrastive, SingleOverlapIsZero) {
  Graph g;
  const auto raw = random_batch(3, 1, 4, 4, 1);
  EXPECT_EQ(time_contrastive_loss(as_batch(g, raw)).value().item(), 0.0);
}

TEST(TimeContrastive, EqualRepresentationsClosedForm) {
  for (std::size_t m : {2u, 3u, 7u}) {
    Graph g;
    RawWindow w{Tensor(Shape{m, 4}, 0.3), Tensor(Shape{m, 4}, 0.3), Tensor(Shape{m, 2}, 0.1), Tensor(Shape{m, 2}, 0.1)};
    EXPECT_NEAR(time_contrastive_loss(as_batch(g, {w, w})).value().item(), std::log(2.0 * m - 1.0), 1e-10);
  }
}

TEST(TimeContrastive, LoopOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto raw = random_batch(2, 3, 4, 4, seed);
    RandomStream rng(seed + 100);
    raw.push_back({scaled_normal(5, 4, rng), scaled_normal(5, 4, rng), scaled_normal(3, 4, rng), scaled_normal(3, 4, rng)});  // different |T|
    Graph g;
    const double loss = time_contrastive_loss(as_batch(g, raw)).value().item();
    EXPECT_NEAR(loss, time_oracle(raw), 1e-10);
    EXPECT_GE(loss, 0.0);
  }
}

TEST(TimeContrastive, EmptyOverlapRejected) {
  Graph g;
  RawWindow w{Tensor(Shape{0, 4}), Tensor(Shape{0, 4}), Tensor(Shape{0, 4}), Tensor(Shape{0, 4})};
  EXPECT_THROW(time_contrastive_loss(as_batch(g, {w})), ContractViolation);
}

TEST(FreqContrastive, SingleSeriesIsZero) {
  Graph g;
  EXPECT_EQ(freq_contrastive_loss(as_batch(g, random_batch(1, 6, 4, 4, 2))).value().item(), 0.0);
}

TEST(FreqContrastive, EqualRepresentationsClosedForm) {
  for (std::size_t B : {2u, 3u, 8u}) {
    Graph g;
    RawWindow w{Tensor(Shape{4, 3}, 0.2), Tensor(Shape{4, 3}, 0.2), Tensor(Shape{4, 5}, -0.4), Tensor(Shape{4, 5}, -0.4)};
    std::vector<RawWindow> raw(B, w);
    EXPECT_NEAR(freq_contrastive_loss(as_batch(g, raw)).value().item(), std::log(2.0 * B - 1.0), 1e-10);
  }
}

TEST(FreqContrastive, LoopOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto raw = random_batch(3, 5, 2, 4, seed);
    Graph g;
    const double loss = freq_contrastive_loss(as_batch(g, raw)).value().item();
    EXPECT_NEAR(loss, freq_oracle(raw), 1e-10);
    EXPECT_GE(loss, 0.0);
  }
}

TEST(TotalContrastive, SumOfComponents) {
  {
    Graph g;
    EXPECT_EQ(total_contrastive_loss(as_batch(g, random_batch(1, 1, 3, 3, 4))).value().item(), 0.0);
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Graph g;
    const auto batch = as_batch(g, random_batch(4, 6, 3, 5, seed));
    const auto l = contrastive_losses(batch);
    EXPECT_NEAR(l.total.value().item(), l.time.value().item() + l.freq.value().item(), 1e-12);
  }
}

TEST(TotalContrastive, InvariantToWindowOrder) {
  auto raw = random_batch(5, 7, 4, 4, 9);
  Graph g;
  const double a = total_contrastive_loss(as_batch(g, raw)).value().item();
  std::swap(raw[0], raw[3]);
  std::swap(raw[1], raw[4]);
  const double b = total_contrastive_loss(as_batch(g, raw)).value().item();
  EXPECT_EQ(a, b);
}

TEST(TotalContrastive, GradientIsSumOfComponentGradients) {
  Encoder enc(tiny_encoder());
  RandomStream rng(3);
  ParameterSet ps = enc.make_parameters(rng);
  const auto series = toy_series(3, 60, 4);
  PretrainConfig cfg;
  cfg.batch_size = 3;
  cfg.window = 24;
  const auto batch = sample_pretrain_batch(series, cfg, 0.5, RandomStream(5));

  auto grads = [&](int which) {
    ps.zero_grad();
    Graph g;
    const auto l = contrastive_losses(encode_pretrain_batch(g, ps, enc, series, batch));
    g.backward(which == 0 ? l.total : which == 1 ? l.time : l.freq);
    std::map<std::string, Tensor> out;
    for (const auto& [p, e] : ps.entries()) out[p] = e.grad;
    return out;
  };
  const auto total = grads(0), time = grads(1), freq = grads(2);
  std::size_t nonzero = 0;
  for (const auto& [p, gt] : total) {
    bool any = false;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      EXPECT_NEAR(gt[i], time.at(p)[i] + freq.at(p)[i], 1e-10) << p;
      any |= gt[i] != 0.0;
    }
    EXPECT_TRUE(any) << "no gradient reached " << p;
    nonzero += any;
  }
  EXPECT_EQ(nonzero, ps.entries().size());
}

TEST(Pretrain, ZeroEpochsLeavesParametersUnchanged) {
  Encoder enc(tiny_encoder());
  RandomStream rng(3);
  ParameterSet ps = enc.make_parameters(rng);
  const ParameterSet before = ps;
  PretrainConfig cfg;
  cfg.epochs = 0;
  cfg.window = 24;
  const auto res = pretrain(enc, ps, toy_series(2, 50, 1), cfg, RandomStream(1));
  EXPECT_TRUE(res.history.empty());
  EXPECT_TRUE(ps == before);
}

TEST(Pretrain, FixedBatchLossStrictlyDecreases) {
  Encoder enc(tiny_encoder());
  RandomStream rng(7);
  ParameterSet ps = enc.make_parameters(rng);
  PretrainConfig cfg;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 50;
  cfg.batch_size = 4;
  cfg.window = 32;
  cfg.learning_rate = 1e-3;
  cfg.fixed_batch = true;
  const auto res = pretrain(enc, ps, toy_series(4, 80, 2), cfg, RandomStream(11));
  ASSERT_EQ(res.history.size(), 50u);
  for (std::size_t s = 1; s <= 10; ++s) EXPECT_LT(res.history[s].total, res.history[s - 1].total) << "step " << s;
  EXPECT_LT(res.history.back().total, res.history.front().total);
}

TEST(Pretrain, DeterministicHistories) {
  auto run = [] {
    Encoder enc(tiny_encoder());
    RandomStream rng(7);
    ParameterSet ps = enc.make_parameters(rng);
    PretrainConfig cfg;
    cfg.epochs = 2;
    cfg.steps_per_epoch = 3;
    cfg.batch_size = 3;
    cfg.window = 20;
    pretrain(enc, ps, toy_series(3, 70, 2), cfg, RandomStream(11));
    return pretrain(enc, ps, toy_series(3, 70, 2), cfg, RandomStream(12)).history;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].time, b[i].time);
    EXPECT_EQ(a[i].freq, b[i].freq);
  }
}

TEST(Pretrain, WindowLongerThanEverySeries) {
  Encoder enc(tiny_encoder());
  RandomStream rng(7);
  ParameterSet ps = enc.make_parameters(rng);
  PretrainConfig cfg;
  cfg.window = 500;
  EXPECT_THROW(pretrain(enc, ps, toy_series(2, 100, 1), cfg, RandomStream(1)), ConfigError);
}
