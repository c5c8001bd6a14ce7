#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ranctx/graph_data.h"
#include "ranctx/predictor.h"

namespace ranctx {

/// Heuristic thresholds for labelling anomaly periods.
struct ClassifyConfig {
  double off_level = 1.0;         // utilization % below which a cell is "off"
  double on_level = 5.0;          // hysteresis for on/off alternation
  double saturation_level = 95.0;
  int alternation_changes = 3;    // on/off switches inside a period
  Hour lookback_hours = kHoursPerWeek;
  double z_threshold = 3.0;
  double z_floor_pp = 2.0;        // z denominator: max(floor, rel * expected)
  double z_rel = 0.1;
};

struct DetectorConfig {
  double lambda = 0.7;
  double percentile = 90.0;
  double gamma = 2.0;
  double delta = 5.0;
  int min_duration_hours = 6;
  bool entropy_normalized = true;
  double sigma_floor = 1e-4;
  ClassifyConfig classify;

  void Validate() const;
};

enum class FilterReason { kNone, kLowEntropy, kHighHistoricalError, kDegenerateContext };
const char* FilterReasonName(FilterReason r);

/// Everything the pre-filter and detector need from one prediction. Scores
/// are kept for every non-degenerate sample so thresholds can be re-applied.
struct ScoredSample {
  std::string cell_id;
  Hour anchor = 0;
  bool degenerate = false;
  double entropy = 0.0;
  double h_err_pct = 0.0;               // at DetectorConfig::percentile
  std::array<double, 4> h_err_quartet{};  // 75th/80th/90th/95th
  std::vector<double> scores;           // L, empty when degenerate
};

inline constexpr std::array<double, 4> kCalibrationPercentiles{75, 80, 90, 95};

struct SampleVerdict {
  std::string cell_id;
  Hour anchor = 0;
  bool passed = false;
  FilterReason reason = FilterReason::kNone;
  double entropy = 0.0;
  double h_err_pct = 0.0;
  std::vector<double> scores;  // present iff passed
};

enum class AnomalyClass { kClass1, kClass2, kUnclassified };
const char* AnomalyClassName(AnomalyClass c);

struct AnomalyPeriod {
  std::string cell_id;
  Hour start = 0;
  Hour end = 0;  // inclusive
  double peak_score = 0.0;
  double mean_score = 0.0;
  AnomalyClass cls = AnomalyClass::kUnclassified;

  Hour duration() const { return end - start + 1; }
};

// ---------------------------------------------------------------------------

/// -sum a ln a, optionally divided by ln k.
double AttentionEntropy(const Eigen::VectorXd& alpha, bool normalized = true);

/// Applies the returned coefficients backwards over the context window:
/// |x_hat - x| / max(sigma_hat, floor) per context hour.
Eigen::VectorXd HistoricalError(const PredictionOutput& out,
                                const ModelInput& input,
                                double sigma_floor = 1e-4);

/// Linear interpolation between order statistics; p in [0, 100].
double Percentile(std::span<const double> values, double p);

struct PrefilterResult {
  bool passed = false;
  FilterReason reason = FilterReason::kNone;
};

PrefilterResult Prefilter(double entropy, double h_err_pct,
                          const DetectorConfig& cfg);
PrefilterResult Prefilter(double entropy, std::span<const double> h_err,
                          const DetectorConfig& cfg);

Eigen::VectorXd AnomalyScores(const Eigen::VectorXd& x_hat,
                              const Eigen::VectorXd& sigma_hat,
                              const Eigen::VectorXd& x_true,
                              double sigma_floor = 1e-4);

ScoredSample ScoreSample(const PredictorParams& params, const GraphSample& sample,
                         const DetectorConfig& cfg);

/// Scores the given (cell, anchor) keys, keeping their order.
std::vector<ScoredSample> ScoreSamples(const PredictorParams& params,
                                       const Dataset& data,
                                       std::span<const SampleKey> keys,
                                       const DetectorConfig& cfg, int threads = 1);

SampleVerdict MakeVerdict(const ScoredSample& s, const DetectorConfig& cfg);
std::vector<SampleVerdict> MakeVerdicts(std::span<const ScoredSample> scored,
                                        const DetectorConfig& cfg);

/// Hourly labels of one cell over [first, first + size).
struct HourLabels {
  std::string cell_id;
  Hour first = 0;
  std::vector<bool> anomalous;
  std::vector<bool> covered;     // at least one passing window contains it
  std::vector<double> max_score; // over passing windows, 0 if uncovered
  std::size_t uncovered = 0;

  Hour last() const { return first + static_cast<Hour>(anomalous.size()) - 1; }
};

/// Verdicts of a single cell; the range defaults to the union of their
/// prediction windows.
HourLabels Consolidate(std::span<const SampleVerdict> verdicts, double delta,
                       int horizon, std::optional<HourRange> range = std::nullopt);

/// Groups verdicts by cell (sorted by cell id) and consolidates each.
std::vector<HourLabels> ConsolidateAll(std::span<const SampleVerdict> verdicts,
                                       double delta, int horizon);

/// Maximal runs of anomalous hours.
std::vector<AnomalyPeriod> ExtractPeriods(const HourLabels& labels);

/// Periods strictly longer than `min_duration` hours.
std::vector<AnomalyPeriod> LongPeriods(std::span<const AnomalyPeriod> periods,
                                       int min_duration);

struct Classification {
  AnomalyClass cls = AnomalyClass::kUnclassified;
  std::string warning;
};

Classification ClassifyPeriod(const AnomalyPeriod& period, const Dataset& data,
                              const ClassifyConfig& cfg = {});

// ---------------------------------------------------------------------------
// Exports

void WriteVerdictsCsv(std::ostream& out, std::span<const SampleVerdict> verdicts,
                      int horizon, double percentile);
void WriteAnomalyReportCsv(std::ostream& out,
                           std::span<const AnomalyPeriod> periods);
std::vector<AnomalyPeriod> ReadAnomalyReportCsv(std::istream& in);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
  std::size_t total() const;
};

/// Equal-width bins over [lo, hi]; values outside are clamped into the end
/// bins so every value is counted.
Histogram MakeHistogram(std::span<const double> values, double lo, double hi,
                        int bins);
void WriteHistogramCsv(std::ostream& out, const Histogram& h);

/// Empirical CDF at the sorted distinct values.
void WriteCdfCsv(std::ostream& out, std::vector<double> values);

}  // namespace ranctx
