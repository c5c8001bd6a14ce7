// ranctx: generate / train / calibrate / detect / evaluate.
//
// Log verbosity comes from RANCTX_LOG (trace, debug, info, warn, error, off).

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "pipeline.h"
#include "ranctx/error.h"
#include "ranctx/kv_config.h"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitData = 3;

struct GlobalFlags {
  std::string config;
  std::vector<std::string> sets;
  long long seed = -1;
  bool deterministic = false;
  std::string out;
};

ranctx::KvConfig BuildConfig(const GlobalFlags& g) {
  ranctx::KvConfig kv = g.config.empty() ? ranctx::KvConfig::Parse("", "<none>")
                                         : ranctx::KvConfig::Load(g.config);
  for (const auto& s : g.sets) kv.Set(s);
  if (g.seed >= 0) kv.Set("seed", std::to_string(g.seed));
  if (g.deterministic) kv.Set("deterministic", "true");
  if (!g.out.empty()) kv.Set("out", g.out);
  return kv;
}

void SetupLogging() {
  auto logger = spdlog::stderr_color_mt("ranctx");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("RANCTX_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

}  // namespace

int main(int argc, char** argv) {
  SetupLogging();
  CLI::App app{"Contextual anomaly detection for RAN cell telemetry"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "key=value config file");
  app.add_option("--set", g.sets, "override a config key (key=value)");
  app.add_option("--seed", g.seed, "RNG seed");
  app.add_flag("--deterministic", g.deterministic, "single-threaded, bit-reproducible");
  app.add_option("--out", g.out, "output directory");

  auto* generate = app.add_subcommand("generate", "write a synthetic scenario");
  auto* train = app.add_subcommand("train", "train a predictor");
  auto* calibrate = app.add_subcommand("calibrate", "export detector calibration distributions");
  auto* detect = app.add_subcommand("detect", "score samples and report anomaly periods");
  auto* evaluate = app.add_subcommand("evaluate", "forecast and detection metrics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  namespace pl = ranctx::pipeline;
  try {
    ranctx::KvConfig kv = BuildConfig(g);
    if (generate->parsed()) {
      ranctx::ScenarioConfig sc;
      ranctx::InjectionPlan plan;
      ranctx::LoadScenarioConfig(kv, &sc, &plan);
      const std::string out = kv.GetString("out", ".");
      kv.GetBool("deterministic", false);
      kv.RejectUnknown();
      sc.Validate();
      pl::CmdGenerate(sc, plan, out);
      return 0;
    }
    pl::PipelineConfig cfg = pl::LoadPipelineConfig(kv);
    kv.RejectUnknown();
    if (train->parsed()) {
      pl::CmdTrain(cfg);
    } else if (calibrate->parsed()) {
      pl::CmdCalibrate(cfg);
    } else if (detect->parsed()) {
      pl::CmdDetect(cfg);
    } else if (evaluate->parsed()) {
      pl::CmdEvaluate(cfg);
    }
    return 0;
  } catch (const ranctx::Error& e) {
    spdlog::error("{}", e.what());
    return e.kind() == ranctx::ErrorKind::kValidation ? kExitValidation : kExitData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  }
}
