#include "ranctx/detector.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <thread>

#include "ranctx/csv.h"
#include "ranctx/error.h"

namespace ranctx {

using Eigen::VectorXd;

void DetectorConfig::Validate() const {
  if (entropy_normalized && !(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValidationError("detector: lambda must be in [0, 1] for normalized entropy");
  }
  if (!(percentile > 0.0 && percentile < 100.0)) {
    throw ValidationError("detector: percentile must be in (0, 100)");
  }
  if (!(gamma > 0.0) || !(delta > 0.0)) {
    throw ValidationError("detector: gamma and delta must be positive");
  }
  if (min_duration_hours < 0) throw ValidationError("detector: min_duration_hours < 0");
  if (!(sigma_floor > 0.0)) throw ValidationError("detector: sigma_floor must be positive");
}

const char* FilterReasonName(FilterReason r) {
  switch (r) {
    case FilterReason::kNone: return "none";
    case FilterReason::kLowEntropy: return "low_entropy";
    case FilterReason::kHighHistoricalError: return "high_historical_error";
    case FilterReason::kDegenerateContext: return "degenerate_context";
  }
  return "?";
}

const char* AnomalyClassName(AnomalyClass c) {
  switch (c) {
    case AnomalyClass::kClass1: return "class1";
    case AnomalyClass::kClass2: return "class2";
    case AnomalyClass::kUnclassified: return "unclassified";
  }
  return "?";
}

double AttentionEntropy(const VectorXd& alpha, bool normalized) {
  const Eigen::Index k = alpha.size();
  if (k == 0) throw ValidationError("attention_entropy: empty coefficients");
  double h = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    if (alpha[j] > 0.0) h -= alpha[j] * std::log(alpha[j]);
  }
  if (!normalized) return h;
  if (k == 1) return 0.0;
  return h / std::log(static_cast<double>(k));
}

VectorXd HistoricalError(const PredictionOutput& out, const ModelInput& in,
                         double sigma_floor) {
  const WeightedStats ws =
      Readout(out.alpha, out.sc, out.sh, in.neighbor_context);
  return AnomalyScores(ws.mean, ws.stddev, in.target_context, sigma_floor);
}

double Percentile(std::span<const double> values, double p) {
  if (values.empty()) throw ValidationError("percentile of an empty vector");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

PrefilterResult Prefilter(double entropy, double h_err_pct,
                          const DetectorConfig& cfg) {
  if (entropy < cfg.lambda) return {false, FilterReason::kLowEntropy};
  if (h_err_pct > cfg.gamma) return {false, FilterReason::kHighHistoricalError};
  return {true, FilterReason::kNone};
}

PrefilterResult Prefilter(double entropy, std::span<const double> h_err,
                          const DetectorConfig& cfg) {
  if (entropy < cfg.lambda) return {false, FilterReason::kLowEntropy};
  return Prefilter(entropy, Percentile(h_err, cfg.percentile), cfg);
}

VectorXd AnomalyScores(const VectorXd& x_hat, const VectorXd& sigma_hat,
                       const VectorXd& x_true, double sigma_floor) {
  if (x_hat.size() != x_true.size() || sigma_hat.size() != x_true.size()) {
    throw ValidationError("anomaly_scores: length mismatch");
  }
  return ((x_hat - x_true).array().abs() / sigma_hat.array().max(sigma_floor))
      .matrix();
}

ScoredSample ScoreSample(const PredictorParams& params, const GraphSample& sample,
                         const DetectorConfig& cfg) {
  ScoredSample s;
  s.cell_id = sample.target.cell_id;
  s.anchor = sample.anchor;
  const ModelInput in = ToModelInput(sample);
  try {
    const PredictionOutput out = Predict(params, in);
    const VectorXd h = HistoricalError(out, in, cfg.sigma_floor);
    const std::span<const double> hs(h.data(), static_cast<std::size_t>(h.size()));
    s.entropy = AttentionEntropy(out.alpha, cfg.entropy_normalized);
    s.h_err_pct = Percentile(hs, cfg.percentile);
    for (std::size_t i = 0; i < kCalibrationPercentiles.size(); ++i) {
      s.h_err_quartet[i] = Percentile(hs, kCalibrationPercentiles[i]);
    }
    const VectorXd sc = AnomalyScores(out.x_hat, out.sigma_hat, in.target_pred,
                                      cfg.sigma_floor);
    s.scores.assign(sc.data(), sc.data() + sc.size());
  } catch (const DegenerateContextError&) {
    s.degenerate = true;
    s.scores.clear();
  }
  return s;
}

std::vector<ScoredSample> ScoreSamples(const PredictorParams& params,
                                       const Dataset& data,
                                       std::span<const SampleKey> keys,
                                       const DetectorConfig& cfg, int threads) {
  std::vector<ScoredSample> out(keys.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < keys.size(); i += step) {
      out[i] = ScoreSample(params, data.Build(keys[i].cell, keys[i].anchor), cfg);
    }
  };
  if (threads <= 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w]() {
      try {
        work(static_cast<std::size_t>(w), static_cast<std::size_t>(threads));
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

SampleVerdict MakeVerdict(const ScoredSample& s, const DetectorConfig& cfg) {
  SampleVerdict v;
  v.cell_id = s.cell_id;
  v.anchor = s.anchor;
  v.entropy = s.entropy;
  v.h_err_pct = s.h_err_pct;
  if (s.degenerate) {
    v.reason = FilterReason::kDegenerateContext;
    return v;
  }
  const PrefilterResult r = Prefilter(s.entropy, s.h_err_pct, cfg);
  v.passed = r.passed;
  v.reason = r.reason;
  if (v.passed) v.scores = s.scores;
  return v;
}

std::vector<SampleVerdict> MakeVerdicts(std::span<const ScoredSample> scored,
                                        const DetectorConfig& cfg) {
  std::vector<SampleVerdict> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(MakeVerdict(s, cfg));
  return out;
}

HourLabels Consolidate(std::span<const SampleVerdict> verdicts, double delta,
                       int horizon, std::optional<HourRange> range) {
  if (horizon <= 0) throw ValidationError("consolidate: horizon must be positive");
  HourLabels hl;
  if (verdicts.empty() && !range) return hl;
  if (!verdicts.empty()) hl.cell_id = verdicts.front().cell_id;
  HourRange r;
  if (range) {
    r = *range;
  } else {
    r.first = verdicts.front().anchor + 1;
    r.last = r.first - 1;
    for (const auto& v : verdicts) {
      r.first = std::min(r.first, v.anchor + 1);
      r.last = std::max(r.last, v.anchor + horizon);
    }
  }
  hl.first = r.first;
  const auto n = static_cast<std::size_t>(r.size());
  hl.anomalous.assign(n, false);
  hl.covered.assign(n, false);
  hl.max_score.assign(n, 0.0);
  for (const auto& v : verdicts) {
    if (!v.passed) continue;
    if (v.cell_id != hl.cell_id) {
      throw ValidationError("consolidate: verdicts from more than one cell");
    }
    for (std::size_t l = 0; l < v.scores.size() && l < static_cast<std::size_t>(horizon); ++l) {
      const Hour h = v.anchor + 1 + static_cast<Hour>(l);
      if (h < r.first || h > r.last) continue;
      const auto i = static_cast<std::size_t>(h - r.first);
      hl.covered[i] = true;
      hl.max_score[i] = std::max(hl.max_score[i], v.scores[l]);
      if (v.scores[l] > delta) hl.anomalous[i] = true;
    }
  }
  hl.uncovered = static_cast<std::size_t>(
      std::count(hl.covered.begin(), hl.covered.end(), false));
  return hl;
}

std::vector<HourLabels> ConsolidateAll(std::span<const SampleVerdict> verdicts,
                                       double delta, int horizon) {
  std::map<std::string, std::vector<SampleVerdict>> by_cell;
  for (const auto& v : verdicts) by_cell[v.cell_id].push_back(v);
  std::vector<HourLabels> out;
  out.reserve(by_cell.size());
  for (const auto& [cell, vs] : by_cell) {
    out.push_back(Consolidate(vs, delta, horizon));
    out.back().cell_id = cell;
  }
  return out;
}

std::vector<AnomalyPeriod> ExtractPeriods(const HourLabels& labels) {
  std::vector<AnomalyPeriod> out;
  const std::size_t n = labels.anomalous.size();
  std::size_t i = 0;
  while (i < n) {
    if (!labels.anomalous[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    double peak = 0.0, sum = 0.0;
    while (j < n && labels.anomalous[j]) {
      peak = std::max(peak, labels.max_score[j]);
      sum += labels.max_score[j];
      ++j;
    }
    AnomalyPeriod p;
    p.cell_id = labels.cell_id;
    p.start = labels.first + static_cast<Hour>(i);
    p.end = labels.first + static_cast<Hour>(j) - 1;
    p.peak_score = peak;
    p.mean_score = sum / static_cast<double>(j - i);
    out.push_back(std::move(p));
    i = j;
  }
  return out;
}

std::vector<AnomalyPeriod> LongPeriods(std::span<const AnomalyPeriod> periods,
                                       int min_duration) {
  std::vector<AnomalyPeriod> out;
  for (const auto& p : periods) {
    if (p.duration() > min_duration) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classification

namespace {

double Median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  return Percentile(v, 50.0);
}

std::vector<double> Slice(const KpiSeries& s, Hour first, Hour last) {
  std::vector<double> out;
  for (Hour h = first; h <= last; ++h) {
    out.push_back(s.values[static_cast<std::size_t>(h - s.start)]);
  }
  return out;
}

/// Mean |z| of the period against the same hours one lookback earlier.
double MeanAbsZ(const KpiSeries& s, const AnomalyPeriod& p, const ClassifyConfig& c) {
  double sum = 0.0;
  for (Hour h = p.start; h <= p.end; ++h) {
    const double x = s.values[static_cast<std::size_t>(h - s.start)];
    const double e = s.values[static_cast<std::size_t>(h - c.lookback_hours - s.start)];
    sum += std::abs(x - e) / std::max(c.z_floor_pp, c.z_rel * e);
  }
  return sum / static_cast<double>(p.duration());
}

int OnOffChanges(std::span<const double> v, const ClassifyConfig& c) {
  int state = -1;  // unknown
  int changes = 0;
  for (double x : v) {
    int next = state;
    if (x < c.off_level) next = 0;
    else if (x >= c.on_level) next = 1;
    if (state >= 0 && next != state) ++changes;
    state = next;
  }
  return changes;
}

}  // namespace

Classification ClassifyPeriod(const AnomalyPeriod& period, const Dataset& data,
                              const ClassifyConfig& cfg) {
  const auto idx = data.IndexOf(period.cell_id);
  if (!idx) return {AnomalyClass::kUnclassified, "unknown cell " + period.cell_id};
  const KpiSeries& s = data.series(*idx);
  const Hour lb_first = period.start - cfg.lookback_hours;
  const Hour lb_last = period.end - cfg.lookback_hours;
  if (!s.Covers(lb_first, period.end)) {
    return {AnomalyClass::kUnclassified, "no lookback for " + period.cell_id};
  }
  const std::vector<double> in = Slice(s, period.start, period.end);
  const double med_in = Median(in);
  const double med_lb = Median(Slice(s, lb_first, lb_last));
  const bool went_off = med_in < cfg.off_level && med_lb >= cfg.off_level;
  const bool saturated =
      med_in > cfg.saturation_level && med_lb <= cfg.saturation_level;
  const bool alternating = OnOffChanges(in, cfg) >= cfg.alternation_changes &&
                           std::any_of(in.begin(), in.end(), [&](double x) {
                             return x < cfg.off_level;
                           });
  if (went_off || saturated || alternating) return {AnomalyClass::kClass2, {}};

  const std::string& sector = data.meta(*idx).sector_id;
  std::vector<std::size_t> peers;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (i != *idx && data.meta(i).sector_id == sector) peers.push_back(i);
  }
  if (peers.empty()) {
    return {AnomalyClass::kUnclassified, "no sector peers for " + period.cell_id};
  }
  if (MeanAbsZ(s, period, cfg) <= cfg.z_threshold) return {};
  for (std::size_t i : peers) {
    const KpiSeries& ps = data.series(i);
    if (!ps.Covers(lb_first, period.end)) continue;
    if (MeanAbsZ(ps, period, cfg) > cfg.z_threshold) return {};
  }
  return {AnomalyClass::kClass1, {}};
}

// ---------------------------------------------------------------------------
// Exports

void WriteVerdictsCsv(std::ostream& out, std::span<const SampleVerdict> verdicts,
                      int horizon, double percentile) {
  std::vector<std::string> header{"cell_id", "anchor", "passed", "reason", "entropy",
                                  "h_err_p" + csv::FormatDouble(percentile)};
  for (int l = 1; l <= horizon; ++l) header.push_back("s" + std::to_string(l));
  out << csv::Join(header) << '\n';
  for (const auto& v : verdicts) {
    std::vector<std::string> row{v.cell_id, FormatIsoHour(v.anchor),
                                 v.passed ? "1" : "0", FilterReasonName(v.reason),
                                 csv::FormatDouble(v.entropy),
                                 csv::FormatDouble(v.h_err_pct)};
    for (int l = 0; l < horizon; ++l) {
      row.push_back(v.passed && l < static_cast<int>(v.scores.size())
                        ? csv::FormatDouble(v.scores[l])
                        : std::string());
    }
    out << csv::Join(row) << '\n';
  }
}

namespace {
const std::vector<std::string> kReportHeader{
    "cell_id", "start", "end", "duration_h", "peak_score", "mean_score", "class"};
}

void WriteAnomalyReportCsv(std::ostream& out,
                           std::span<const AnomalyPeriod> periods) {
  out << csv::Join(kReportHeader) << '\n';
  for (const auto& p : periods) {
    out << csv::Join({p.cell_id, FormatIsoHour(p.start), FormatIsoHour(p.end),
                      std::to_string(p.duration()), csv::FormatDouble(p.peak_score),
                      csv::FormatDouble(p.mean_score), AnomalyClassName(p.cls)})
        << '\n';
  }
}

std::vector<AnomalyPeriod> ReadAnomalyReportCsv(std::istream& in) {
  std::vector<AnomalyPeriod> out;
  for (const auto& row : csv::ReadTable(in, kReportHeader, "anomaly report")) {
    AnomalyPeriod p;
    p.cell_id = row[0];
    p.start = ParseIsoHour(row[1]);
    p.end = ParseIsoHour(row[2]);
    p.peak_score = csv::ParseDouble(row[4], "peak_score");
    p.mean_score = csv::ParseDouble(row[5], "mean_score");
    if (row[6] == "class1") p.cls = AnomalyClass::kClass1;
    else if (row[6] == "class2") p.cls = AnomalyClass::kClass2;
    else p.cls = AnomalyClass::kUnclassified;
    out.push_back(std::move(p));
  }
  return out;
}

std::size_t Histogram::total() const {
  std::size_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

Histogram MakeHistogram(std::span<const double> values, double lo, double hi,
                        int bins) {
  if (bins <= 0 || !(hi > lo)) throw ValidationError("histogram: bad bin spec");
  Histogram h;
  h.edges.resize(bins + 1);
  for (int b = 0; b <= bins; ++b) h.edges[b] = lo + (hi - lo) * b / bins;
  h.counts.assign(bins, 0);
  for (double v : values) {
    int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[b];
  }
  return h;
}

void WriteHistogramCsv(std::ostream& out, const Histogram& h) {
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out << csv::FormatDouble(h.edges[b]) << ',' << csv::FormatDouble(h.edges[b + 1])
        << ',' << h.counts[b] << '\n';
  }
}

void WriteCdfCsv(std::ostream& out, std::vector<double> values) {
  out << "value,cdf\n";
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i + 1 < values.size() && values[i + 1] == values[i]) continue;
    out << csv::FormatDouble(values[i]) << ','
        << csv::FormatDouble(static_cast<double>(i + 1) / n) << '\n';
  }
}

}  // namespace ranctx
