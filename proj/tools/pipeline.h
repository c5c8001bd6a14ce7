#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ranctx/detector.h"
#include "ranctx/graph_data.h"
#include "ranctx/kv_config.h"
#include "ranctx/predictor.h"
#include "ranctx/synth_ran.h"
#include "ranctx/trainer.h"

namespace ranctx::pipeline {

struct PipelineConfig {
  std::string telemetry;
  std::string deployment;
  std::string splits;
  std::string labels;
  std::string model;   // input model for calibrate/detect/evaluate
  std::string out_dir = ".";

  WindowSpec window;
  double max_missing_frac = 0.5;
  ScoreMode score_mode = ScoreMode::kQueryKey;

  TrainConfig train;
  int train_days = 0;        // 0: training windows may use the whole span
  int train_anchor_stride = 1;
  std::string resume;        // checkpoint to continue from

  DetectorConfig detector;
  std::string detect_split = "test";  // train|validation|test|all

  std::uint64_t seed = 1;
  bool deterministic = false;
  int threads = 1;
};

/// Reads the pipeline keys documented in the README. Unknown keys are left
/// for the caller to reject.
PipelineConfig LoadPipelineConfig(KvConfig& kv);

/// Telemetry, deployment, split and the indexed dataset built from them.
struct Inputs {
  std::vector<CellMeta> deployment;
  std::vector<KpiSeries> telemetry;
  SplitSpec split;
  std::vector<std::string> retained;  // cells passing the missingness filter
  std::unique_ptr<Dataset> data;
};

Inputs LoadInputs(const PipelineConfig& cfg);

/// Anchor range whose context and prediction windows fit the common span;
/// `max_days` > 0 additionally keeps every prediction window inside the
/// first `max_days` days.
HourRange AnchorRange(const Dataset& data, int max_days);

std::vector<std::string> CellsOf(const Inputs& in, const std::string& split_name);

// ---------------------------------------------------------------------------

struct GenerateResult {
  Scenario scenario;
};

/// Writes telemetry.csv, deployment.csv, labels.csv, splits.csv and
/// injections.csv into `out_dir`.
GenerateResult CmdGenerate(const ScenarioConfig& scenario, const InjectionPlan& plan,
                           const std::string& out_dir);

struct TrainSummary {
  PredictorParams best;
  TrainState state;
  std::size_t train_samples = 0;
  std::size_t validation_samples = 0;
};

/// Writes model.json (best-validation weights), train_log.csv and
/// checkpoint.json into out_dir.
TrainSummary CmdTrain(const PipelineConfig& cfg);

struct DetectResult {
  std::vector<ScoredSample> scored;
  std::vector<SampleVerdict> verdicts;
  std::vector<HourLabels> labels;
  std::vector<AnomalyPeriod> periods;       // all maximal runs, classified
  std::vector<AnomalyPeriod> long_periods;  // duration > min_duration_hours
  std::size_t uncovered_hours = 0;
  std::size_t labelled_hours = 0;
  std::size_t anomalous_hours = 0;
  std::vector<std::string> warnings;
  std::vector<std::string> cells;
};

/// Scores, filters, consolidates and classifies every feasible sample of
/// the detection split.
DetectResult RunDetection(const PipelineConfig& cfg, const Inputs& in,
                          const PredictorParams& params);

/// Re-applies thresholds to an existing scored set.
DetectResult Redetect(const DetectorConfig& det, const Inputs& in, int horizon,
                      std::vector<ScoredSample> scored);

/// verdicts.csv, anomalies.csv, long_anomalies.csv, detect_summary.csv.
DetectResult CmdDetect(const PipelineConfig& cfg);

/// entropy_hist.csv, h_err_p{75,80,90,95}_hist.csv, score_hist.csv,
/// score_cdf.csv.
void CmdCalibrate(const PipelineConfig& cfg);

// ---------------------------------------------------------------------------

struct WindowTruth {
  std::string cell_id;
  InjectionKind kind = InjectionKind::kClass1Deviation;
  Hour start = 0;
  Hour end = 0;
};

/// Maximal runs of consecutive labelled hours per (cell, kind).
std::vector<WindowTruth> LabelWindows(const std::vector<GroundTruthLabel>& labels);

struct DetectionScore {
  std::size_t class1_windows = 0, class1_detected = 0;
  std::size_t class2_windows = 0, class2_detected = 0;
  std::size_t clean_cells = 0, clean_cells_with_long = 0;
  std::size_t mobility_cells = 0, mobility_long_periods = 0;

  double class1_recall() const;
  double class2_recall() const;
  double false_long_rate() const;
};

/// Compares reported periods with ground-truth windows. Only windows on
/// `cells` are counted; clean cells are cells in `cells` without any label.
DetectionScore ScoreDetection(const std::vector<AnomalyPeriod>& periods,
                              const std::vector<AnomalyPeriod>& long_periods,
                              const std::vector<GroundTruthLabel>& labels,
                              const std::vector<std::string>& cells);

struct EvaluateResult {
  std::map<std::string, EvalMetrics> forecast;  // by split name
  DetectionScore detection;
};

/// metrics.csv with forecast metrics per split and detection scores.
EvaluateResult CmdEvaluate(const PipelineConfig& cfg);

}  // namespace ranctx::pipeline
