// msflow command-line front end.
//
//   msflow <pretrain|encode|train|forecast|evaluate|synth> [--config FILE] [flags]
//
// Exit codes: 0 success, 2 configuration / input errors, 3 missing or corrupt
// artifacts, 4 numeric failure, 1 anything else.

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "msflow/pipeline.hpp"

namespace {

struct Flags {
  std::string config, out, dataset, spec;
  std::optional<std::uint64_t> seed;
  bool no_repr = false, no_fusion = false, no_flow = false, denormalized = false, verbose = false;
};

msf::RunConfig resolve(const Flags& f) {
  msf::RunConfig cfg;
  if (!f.config.empty()) cfg = msf::load_config(f.config);
  if (!f.out.empty()) cfg.out = f.out;
  if (!f.dataset.empty()) cfg.dataset = f.dataset;
  if (f.seed) cfg.seed = *f.seed;
  cfg.no_repr = cfg.no_repr || f.no_repr;
  cfg.no_fusion = cfg.no_fusion || f.no_fusion;
  cfg.no_flow = cfg.no_flow || f.no_flow;
  cfg.denormalized = cfg.denormalized || f.denormalized;
  return cfg;
}

int run(const std::string& command, const Flags& f) {
  namespace p = msf::pipeline;
  msf::verbose_flag() = f.verbose;
  const msf::RunConfig cfg = resolve(f);
  if (command == "pretrain") {
    const auto res = p::cmd_pretrain(cfg);
    std::cout << "pretrained encoder: " << res.history.size() << " steps, final loss "
              << (res.history.empty() ? 0.0 : res.history.back().total) << "\n";
  } else if (command == "encode") {
    std::cout << "stored " << p::cmd_encode(cfg) << " multi-scale representations\n";
  } else if (command == "train") {
    const auto res = p::cmd_train(cfg);
    std::cout << "trained forecaster: " << res.history.size() << " steps, final nll "
              << (res.history.empty() ? 0.0 : res.history.back().nll) << "\n";
  } else if (command == "forecast") {
    p::cmd_forecast(cfg);
    std::cout << "wrote " << p::output_path(cfg, p::kForecastFile) << "\n";
  } else if (command == "evaluate") {
    for (const auto& r : p::cmd_evaluate(cfg))
      std::cout << "horizon " << r.horizon << ": mse " << msf::format_double(r.mse) << " mae " << msf::format_double(r.mae) << "\n";
  } else if (command == "synth") {
    if (f.spec.empty()) throw msf::ConfigError("synth needs --spec FILE");
    auto spec = msf::load_synth_spec(f.spec);
    if (f.seed) spec.seed = *f.seed;
    std::cout << "wrote " << p::cmd_synth(cfg, spec) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale representation + normalizing-flow forecaster"};
  app.require_subcommand(1);
  Flags f;
  std::string chosen;
  for (const char* name : {"pretrain", "encode", "train", "forecast", "evaluate", "synth"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", f.config, "JSON run configuration");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--seed", f.seed, "master seed");
    sub->add_flag("--verbose", f.verbose, "progress logging on stderr");
    if (std::string(name) == "synth") {
      sub->add_option("--spec", f.spec, "synthetic workload spec (JSON)")->required();
    } else {
      sub->add_option("--dataset", f.dataset, "input CSV");
      sub->add_flag("--no-repr", f.no_repr, "ablation: no multi-scale representations");
      sub->add_flag("--no-fusion", f.no_fusion, "ablation: concatenate instead of attention fusion");
      sub->add_flag("--no-flow", f.no_flow, "ablation: Gaussian head instead of the flow");
    }
    if (std::string(name) == "evaluate") sub->add_flag("--denormalized", f.denormalized, "metrics in original units");
    sub->callback([&chosen, name] { chosen = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    return run(chosen, f);
  } catch (const msf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const msf::IngestionError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const msf::InsufficientHistory& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const msf::ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return 3;
  } catch (const msf::NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
