#include <gtest/gtest.h>

#include <fstream>

#include "msflow/config.hpp"
#include "tempdir.hpp"

using namespace msf;

namespace {

RunConfig parse(const std::string& text) {
  RunConfig cfg;
  apply_json(cfg, Json::parse(text));
  return cfg;
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyObjectKeepsDefaults) {
  const RunConfig cfg = parse("{}");
  EXPECT_EQ(cfg.backcast, 96u);
  EXPECT_EQ(cfg.horizons, (std::vector<std::size_t>{96, 192, 336, 720}));
  EXPECT_DOUBLE_EQ(cfg.train_frac, 0.7);
  EXPECT_EQ(cfg.out, "out");
  EXPECT_TRUE(cfg.scales.empty());
}

TEST(Config, NestedValuesApplied) {
  const RunConfig cfg = parse(R"({"backcast": 48, "encoder": {"time_dim": 5, "freq_dim": 7},
    "scales": [{"name": "d", "length": 24}, {"name": "w", "length": 168}],
    "forecast": {"origin": 1704067200, "n_samples": 10}, "ablation": {"no_flow": true}})");
  EXPECT_EQ(cfg.backcast, 48u);
  EXPECT_EQ(cfg.train.backcast, 48u);
  EXPECT_EQ(cfg.encoder.repr_dim(), 12u);
  ASSERT_EQ(cfg.scales.size(), 2u);
  EXPECT_EQ(cfg.scales[1].length, 168u);
  EXPECT_EQ(cfg.forecast_origin, 1704067200);
  EXPECT_EQ(cfg.n_samples, 10u);
  EXPECT_TRUE(cfg.no_flow);
  EXPECT_FALSE(cfg.no_repr);
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_NE(error_of(R"({"encoder": {"bogus": 1}})").find("'encoder.bogus': unknown field"), std::string::npos);
  EXPECT_NE(error_of(R"({"backcast": "long"})").find("'backcast'"), std::string::npos);
  EXPECT_NE(error_of(R"({"train": {"epochs": -1}})").find("'train.epochs'"), std::string::npos);
  EXPECT_NE(error_of(R"({"horizons": [96, 0]})").find("'horizons[1]'"), std::string::npos);
  EXPECT_NE(error_of(R"({"split": {"train": 0.9, "val": 0.2}})").find("'split'"), std::string::npos);
  EXPECT_NE(error_of(R"({"encoder": {"hidden_dim": 10, "heads": 4}})").find("'encoder.heads'"), std::string::npos);
  EXPECT_NE(error_of(R"({"forecast": {"origin": "yesterday"}})").find("'forecast.origin'"), std::string::npos);
  EXPECT_NE(error_of(R"({"scales": [{"name": "a", "length": 20}, {"name": "a", "length": 30}]})").find("'scales'"),
            std::string::npos);
  EXPECT_NE(error_of("[1, 2]").find("expected an object"), std::string::npos);
}

TEST(Config, SnapshotRoundTrip) {
  RunConfig a = parse(R"({"dataset": "x.csv", "seed": 42, "backcast": 30, "horizons": [7],
    "split": {"train": 0.6, "val": 0.2}, "pretrain": {"window": 64, "learning_rate": 0.01},
    "scales": [{"name": "d", "length": 24}], "anchor_every": 12,
    "forecaster": {"context_dim": 16, "scale_clamp": 2.5}, "train": {"horizon": 7, "grad_clip": 0.5},
    "forecast": {"origin": 99, "eval_stride": 3}, "ablation": {"no_repr": true},
    "inputs": {"store": "s.store"}, "denormalized": true})");
  RunConfig b;
  apply_json(b, to_json(a));
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(b.seed, 42u);
  EXPECT_EQ(b.store_path, "s.store");
  EXPECT_EQ(b.forecast_origin, 99);
  EXPECT_TRUE(b.denormalized);
}

TEST(Config, FileLayersOverBase) {
  msf::testing::TempDir dir;
  std::ofstream(dir.file("c.json")) << R"({"seed": 3})";
  RunConfig base;
  base.name = "kept";
  base.seed = 1;
  const RunConfig cfg = load_config(dir.file("c.json"), base);
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.name, "kept");
  EXPECT_THROW(load_config(dir.file("missing.json")), ConfigError);
  std::ofstream(dir.file("bad.json")) << "{ not json";
  EXPECT_THROW(load_config(dir.file("bad.json")), ConfigError);
}
