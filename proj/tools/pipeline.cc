#include "pipeline.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "ranctx/csv.h"
#include "ranctx/error.h"

namespace ranctx::pipeline {
namespace fs = std::filesystem;

namespace {

std::ofstream OpenOut(const std::string& dir, const std::string& name) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const std::string path = (fs::path(dir) / name).string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

std::string ReadText(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void RequireFile(const std::string& key, const std::string& path) {
  if (path.empty()) throw ValidationError("missing required path '" + key + "'");
  if (!fs::exists(path)) throw DataError(key + ": no such file " + path);
}

std::string Str(double v) { return csv::FormatDouble(v); }

}  // namespace

PipelineConfig LoadPipelineConfig(KvConfig& kv) {
  PipelineConfig c;
  c.telemetry = kv.GetString("telemetry", c.telemetry);
  c.deployment = kv.GetString("deployment", c.deployment);
  c.splits = kv.GetString("splits", c.splits);
  c.labels = kv.GetString("labels", c.labels);
  c.model = kv.GetString("model", c.model);
  c.out_dir = kv.GetString("out", c.out_dir);

  c.window.k = static_cast<int>(kv.GetInt("k", c.window.k));
  c.window.T = static_cast<int>(kv.GetInt("T", c.window.T));
  c.window.L = static_cast<int>(kv.GetInt("L", c.window.L));
  if (c.window.k < 2) throw ValidationError("k must be at least 2");
  c.max_missing_frac = kv.GetDouble("data.max_missing_frac", c.max_missing_frac);
  c.score_mode = ParseScoreMode(kv.GetString("model.score_mode", ScoreModeName(c.score_mode)));

  c.seed = static_cast<std::uint64_t>(kv.GetInt("seed", static_cast<long long>(c.seed)));
  c.threads = static_cast<int>(kv.GetInt("threads", c.threads));
  c.deterministic = kv.GetBool("deterministic", c.deterministic);

  TrainConfig& t = c.train;
  t.epochs = static_cast<int>(kv.GetInt("train.epochs", t.epochs));
  t.samples_per_epoch = static_cast<int>(kv.GetInt("train.samples_per_epoch", t.samples_per_epoch));
  t.batch_size = static_cast<int>(kv.GetInt("train.batch_size", t.batch_size));
  t.learning_rate = kv.GetDouble("train.learning_rate", t.learning_rate);
  t.clip_norm = kv.GetDouble("train.clip_norm", t.clip_norm);
  t.sigma_floor = kv.GetDouble("train.sigma_floor", t.sigma_floor);
  t.eval_samples = static_cast<int>(kv.GetInt("train.eval_samples", t.eval_samples));
  t.variant = ParseVariant(kv.GetString("train.variant", VariantName(t.variant)));
  c.train_days = static_cast<int>(kv.GetInt("train.days", c.train_days));
  c.train_anchor_stride = static_cast<int>(kv.GetInt("train.anchor_stride", c.train_anchor_stride));
  c.resume = kv.GetString("train.resume", c.resume);

  DetectorConfig& d = c.detector;
  d.lambda = kv.GetDouble("detect.lambda", d.lambda);
  d.percentile = kv.GetDouble("detect.percentile", d.percentile);
  d.gamma = kv.GetDouble("detect.gamma", d.gamma);
  d.delta = kv.GetDouble("detect.delta", d.delta);
  d.min_duration_hours = static_cast<int>(kv.GetInt("detect.min_duration_h", d.min_duration_hours));
  d.entropy_normalized = kv.GetBool("detect.entropy_normalized", d.entropy_normalized);
  c.detect_split = kv.GetString("detect.split", c.detect_split);

  if (c.deterministic) c.threads = 1;
  t.seed = c.seed;
  t.threads = c.threads;
  d.sigma_floor = t.sigma_floor;
  t.Validate();
  d.Validate();
  if (c.train_days < 0 || c.train_anchor_stride < 1) {
    throw ValidationError("train.days >= 0 and train.anchor_stride >= 1 required");
  }
  if (c.detect_split != "all") ParseSplit(c.detect_split);
  return c;
}

Inputs LoadInputs(const PipelineConfig& cfg) {
  RequireFile("telemetry", cfg.telemetry);
  RequireFile("deployment", cfg.deployment);
  Inputs in;
  in.deployment = ReadDeploymentFile(cfg.deployment);
  in.telemetry = ReadTelemetryFile(cfg.telemetry);
  if (!cfg.splits.empty()) {
    RequireFile("splits", cfg.splits);
    in.split = ReadSplitFile(cfg.splits);
  } else {
    in.split = SplitByRegion(in.deployment, SplitFractions{});
  }
  in.retained = FilterCells(in.telemetry, cfg.max_missing_frac);
  const std::set<std::string> keep(in.retained.begin(), in.retained.end());
  std::vector<KpiSeries> imputed;
  for (const auto& s : in.telemetry) {
    if (keep.count(s.cell_id)) imputed.push_back(ImputeSeries(s));
  }
  const std::size_t dropped = in.telemetry.size() - imputed.size();
  if (dropped > 0) spdlog::warn("{} cells dropped by the missingness filter", dropped);
  in.data = std::make_unique<Dataset>(in.deployment, std::move(imputed), cfg.window);
  return in;
}

HourRange AnchorRange(const Dataset& data, int max_days) {
  const HourRange span = data.CommonSpan();
  HourRange r{span.first + data.window().T, span.last - data.window().L};
  if (max_days > 0) {
    r.last = std::min(r.last, span.first + static_cast<Hour>(max_days) * kHoursPerDay - 1 -
                                  data.window().L);
  }
  return r;
}

std::vector<std::string> CellsOf(const Inputs& in, const std::string& split_name) {
  std::vector<std::string> out;
  const std::set<std::string> keep(in.retained.begin(), in.retained.end());
  if (split_name == "all") {
    out = in.retained;
  } else {
    for (const auto& c : in.split.Cells(ParseSplit(split_name))) {
      if (keep.count(c)) out.push_back(c);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// generate

GenerateResult CmdGenerate(const ScenarioConfig& scenario, const InjectionPlan& plan,
                           const std::string& out_dir) {
  GenerateResult res{GenerateScenario(scenario, plan)};
  const Scenario& sc = res.scenario;
  {
    auto out = OpenOut(out_dir, "telemetry.csv");
    WriteTelemetryCsv(out, sc.telemetry);
  }
  {
    auto out = OpenOut(out_dir, "deployment.csv");
    WriteDeploymentCsv(out, sc.deployment);
  }
  {
    auto out = OpenOut(out_dir, "labels.csv");
    WriteLabelsCsv(out, sc.labels);
  }
  {
    auto out = OpenOut(out_dir, "splits.csv");
    WriteSplitCsv(out, sc.split);
  }
  {
    auto out = OpenOut(out_dir, "injections.csv");
    out << "kind,start,end,magnitude,targets\n";
    for (const auto& inj : sc.injections) {
      std::string targets;
      for (const auto& t : inj.targets) targets += (targets.empty() ? "" : " ") + t;
      out << InjectionKindName(inj.kind) << ',' << FormatIsoHour(inj.start) << ','
          << FormatIsoHour(inj.end) << ',' << Str(inj.magnitude) << ',' << targets << '\n';
    }
  }
  spdlog::info("generated {} cells x {} h, {} injections, {} labelled hours",
               sc.deployment.size(), scenario.hours(), sc.injections.size(),
               sc.labels.size());
  return res;
}

// ---------------------------------------------------------------------------
// train

TrainSummary CmdTrain(const PipelineConfig& cfg) {
  const Inputs in = LoadInputs(cfg);
  const Dataset& data = *in.data;
  const HourRange anchors = AnchorRange(data, cfg.train_days);
  if (anchors.empty()) throw DataError("untrainable dataset: series shorter than T + L + 1");

  auto keys_for = [&](const std::string& split) {
    auto keys = EnumerateSamples(data, CellsOf(in, split), anchors, true);
    if (cfg.train_anchor_stride > 1) {
      std::vector<SampleKey> kept;
      for (const auto& k : keys) {
        if ((k.anchor - anchors.first) % cfg.train_anchor_stride == 0) kept.push_back(k);
      }
      keys = std::move(kept);
    }
    return keys;
  };
  const DatasetSource train_src(data, keys_for("train"));
  const DatasetSource val_src(data, keys_for("validation"));
  if (train_src.size() == 0) throw DataError("untrainable dataset: no training samples");
  spdlog::info("training {} on {} train / {} validation samples",
               VariantName(cfg.train.variant), train_src.size(), val_src.size());

  TrainState state;
  if (!cfg.resume.empty()) {
    RequireFile("train.resume", cfg.resume);
    state = DeserializeTrainState(ReadText(cfg.resume));
    if (state.params.variant != cfg.train.variant) {
      throw ValidationError("checkpoint variant differs from train.variant");
    }
    spdlog::info("resuming after epoch {}", state.epochs_done);
  } else {
    const PredictorParams base =
        InitParams(ModelDims::For(cfg.window), Variant::kFull, cfg.seed, cfg.score_mode);
    state = InitTrainState(MakeVariant(base, cfg.train.variant), cfg.train);
  }

  Train(cfg.train, train_src, val_src, &state, [&](const TrainState& s) {
    const auto& last = s.log.back().metrics;
    spdlog::info("epoch {:>4}  {} norm_mae {:.4f}  nll {:.4f}", s.epochs_done,
                 SplitName(s.log.back().split), last.norm_mae, last.nll);
    auto out = OpenOut(cfg.out_dir, "checkpoint.json");
    out << SerializeTrainState(s);
  });

  std::map<std::string, std::string> meta{
      {"variant", VariantName(cfg.train.variant)},
      {"seed", std::to_string(cfg.seed)},
      {"best_epoch", std::to_string(state.best_epoch)},
      {"epochs", std::to_string(state.epochs_done)},
      {"reference_mean", Str(state.reference_mean)},
      {"k", std::to_string(cfg.window.k)},
      {"T", std::to_string(cfg.window.T)},
      {"L", std::to_string(cfg.window.L)},
  };
  {
    auto out = OpenOut(cfg.out_dir, "model.json");
    out << SerializeParams(state.best_params, meta);
  }
  {
    auto out = OpenOut(cfg.out_dir, "train_log.csv");
    WriteTrainLogCsv(out, state.log);
  }
  if (state.skipped_samples > 0) {
    spdlog::warn("{} degenerate training samples skipped", state.skipped_samples);
  }
  TrainSummary sum;
  sum.best = state.best_params;
  sum.state = std::move(state);
  sum.train_samples = train_src.size();
  sum.validation_samples = val_src.size();
  return sum;
}

// ---------------------------------------------------------------------------
// detect

namespace {

PredictorParams LoadModelFor(const PipelineConfig& cfg,
                             std::map<std::string, std::string>* meta) {
  RequireFile("model", cfg.model);
  PredictorParams p = LoadParams(cfg.model, meta);
  const ModelDims want = ModelDims::For(cfg.window);
  if (p.dims.context_len != want.context_len || p.dims.horizon != want.horizon ||
      p.dims.k != want.k) {
    throw ValidationError("model geometry (k, T, L) does not match the configuration");
  }
  return p;
}

}  // namespace

DetectResult Redetect(const DetectorConfig& det, const Inputs& in, int horizon,
                      std::vector<ScoredSample> scored) {
  DetectResult r;
  r.scored = std::move(scored);
  r.verdicts = MakeVerdicts(r.scored, det);
  r.labels = ConsolidateAll(r.verdicts, det.delta, horizon);
  for (const auto& hl : r.labels) {
    r.uncovered_hours += hl.uncovered;
    r.labelled_hours += hl.anomalous.size();
    r.anomalous_hours += static_cast<std::size_t>(
        std::count(hl.anomalous.begin(), hl.anomalous.end(), true));
    for (auto& p : ExtractPeriods(hl)) {
      const Classification c = ClassifyPeriod(p, *in.data, det.classify);
      p.cls = c.cls;
      if (!c.warning.empty()) r.warnings.push_back(c.warning);
      r.periods.push_back(std::move(p));
    }
  }
  r.long_periods = LongPeriods(r.periods, det.min_duration_hours);
  return r;
}

DetectResult RunDetection(const PipelineConfig& cfg, const Inputs& in,
                          const PredictorParams& params) {
  const HourRange anchors = AnchorRange(*in.data, 0);
  const auto cells = CellsOf(in, cfg.detect_split);
  const auto keys = EnumerateSamples(*in.data, cells, anchors);
  auto scored = ScoreSamples(params, *in.data, keys, cfg.detector, cfg.threads);
  DetectResult r = Redetect(cfg.detector, in, cfg.window.L, std::move(scored));
  r.cells = cells;
  return r;
}

DetectResult CmdDetect(const PipelineConfig& cfg) {
  const Inputs in = LoadInputs(cfg);
  const PredictorParams params = LoadModelFor(cfg, nullptr);
  DetectResult r = RunDetection(cfg, in, params);
  {
    auto out = OpenOut(cfg.out_dir, "verdicts.csv");
    WriteVerdictsCsv(out, r.verdicts, cfg.window.L, cfg.detector.percentile);
  }
  {
    auto out = OpenOut(cfg.out_dir, "anomalies.csv");
    WriteAnomalyReportCsv(out, r.periods);
  }
  {
    auto out = OpenOut(cfg.out_dir, "long_anomalies.csv");
    WriteAnomalyReportCsv(out, r.long_periods);
  }
  std::size_t passed = 0;
  for (const auto& v : r.verdicts) passed += v.passed ? 1 : 0;
  std::map<AnomalyClass, std::size_t> by_class;
  for (const auto& p : r.long_periods) ++by_class[p.cls];
  {
    auto out = OpenOut(cfg.out_dir, "detect_summary.csv");
    const double n = static_cast<double>(std::max<std::size_t>(1, r.verdicts.size()));
    const double h = static_cast<double>(std::max<std::size_t>(1, r.labelled_hours));
    out << "name,value\n"
        << "samples," << r.verdicts.size() << '\n'
        << "passed," << passed << '\n'
        << "pass_rate," << Str(static_cast<double>(passed) / n) << '\n'
        << "hours," << r.labelled_hours << '\n'
        << "anomalous_hours," << r.anomalous_hours << '\n'
        << "anomalous_fraction," << Str(static_cast<double>(r.anomalous_hours) / h) << '\n'
        << "uncovered_hours," << r.uncovered_hours << '\n'
        << "periods," << r.periods.size() << '\n'
        << "long_periods," << r.long_periods.size() << '\n'
        << "long_class1," << by_class[AnomalyClass::kClass1] << '\n'
        << "long_class2," << by_class[AnomalyClass::kClass2] << '\n'
        << "long_unclassified," << by_class[AnomalyClass::kUnclassified] << '\n';
  }
  std::set<std::string> shown;
  for (const auto& w : r.warnings) {
    if (shown.insert(w).second) spdlog::warn("{}", w);
  }
  spdlog::info("{} samples, {} passed, {} anomalous hours, {} periods ({} long)",
               r.verdicts.size(), passed, r.anomalous_hours, r.periods.size(),
               r.long_periods.size());
  return r;
}

// ---------------------------------------------------------------------------
// calibrate

void CmdCalibrate(const PipelineConfig& cfg) {
  const Inputs in = LoadInputs(cfg);
  const PredictorParams params = LoadModelFor(cfg, nullptr);
  const DetectResult r = RunDetection(cfg, in, params);

  std::vector<double> entropy;
  std::array<std::vector<double>, 4> herr;
  std::vector<double> scores;
  for (std::size_t i = 0; i < r.scored.size(); ++i) {
    const ScoredSample& s = r.scored[i];
    if (s.degenerate) continue;
    entropy.push_back(s.entropy);
    if (s.entropy < cfg.detector.lambda) continue;
    for (std::size_t q = 0; q < 4; ++q) herr[q].push_back(s.h_err_quartet[q]);
    if (r.verdicts[i].passed) scores.insert(scores.end(), s.scores.begin(), s.scores.end());
  }
  const double ent_hi =
      cfg.detector.entropy_normalized ? 1.0 : std::log(static_cast<double>(cfg.window.k));
  auto write_hist = [&](const std::string& name, const std::vector<double>& v, double lo,
                        double hi) {
    auto out = OpenOut(cfg.out_dir, name);
    if (v.empty()) {
      out << "bin_lo,bin_hi,count\n";
      return;
    }
    WriteHistogramCsv(out, MakeHistogram(v, lo, hi, 50));
  };
  write_hist("entropy_hist.csv", entropy, 0.0, ent_hi);
  for (std::size_t q = 0; q < 4; ++q) {
    write_hist("h_err_p" + std::to_string(static_cast<int>(kCalibrationPercentiles[q])) +
                   "_hist.csv",
               herr[q], 0.0, 10.0);
  }
  write_hist("score_hist.csv", scores, 0.0, 20.0);
  {
    auto out = OpenOut(cfg.out_dir, "score_cdf.csv");
    WriteCdfCsv(out, scores);
  }
  if (scores.empty()) spdlog::warn("no sample passed the pre-filter; score exports are empty");
  spdlog::info("calibration: {} scored samples, {} past the entropy filter, {} scores",
               entropy.size(), herr[0].size(), scores.size());
}

// ---------------------------------------------------------------------------
// evaluate

std::vector<WindowTruth> LabelWindows(const std::vector<GroundTruthLabel>& labels) {
  std::vector<GroundTruthLabel> sorted = labels;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.cell_id != b.cell_id) return a.cell_id < b.cell_id;
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.hour < b.hour;
  });
  std::vector<WindowTruth> out;
  for (const auto& l : sorted) {
    if (!out.empty() && out.back().cell_id == l.cell_id && out.back().kind == l.kind &&
        out.back().end + 1 >= l.hour) {
      out.back().end = std::max(out.back().end, l.hour);
      continue;
    }
    out.push_back({l.cell_id, l.kind, l.hour, l.hour});
  }
  return out;
}

double DetectionScore::class1_recall() const {
  return class1_windows ? static_cast<double>(class1_detected) / class1_windows : 0.0;
}
double DetectionScore::class2_recall() const {
  return class2_windows ? static_cast<double>(class2_detected) / class2_windows : 0.0;
}
double DetectionScore::false_long_rate() const {
  return clean_cells ? static_cast<double>(clean_cells_with_long) / clean_cells : 0.0;
}

DetectionScore ScoreDetection(const std::vector<AnomalyPeriod>& periods,
                              const std::vector<AnomalyPeriod>& long_periods,
                              const std::vector<GroundTruthLabel>& labels,
                              const std::vector<std::string>& cells) {
  const std::set<std::string> scope(cells.begin(), cells.end());
  std::set<std::string> labelled;
  for (const auto& l : labels) labelled.insert(l.cell_id);

  auto overlaps = [](const AnomalyPeriod& p, const WindowTruth& w) {
    return p.cell_id == w.cell_id && p.start <= w.end && w.start <= p.end;
  };
  DetectionScore s;
  for (const auto& w : LabelWindows(labels)) {
    if (!scope.count(w.cell_id)) continue;
    if (w.kind == InjectionKind::kMobilityEvent) {
      ++s.mobility_cells;
      for (const auto& p : long_periods) s.mobility_long_periods += overlaps(p, w) ? 1 : 0;
      continue;
    }
    const bool hit = std::any_of(periods.begin(), periods.end(),
                                 [&](const AnomalyPeriod& p) { return overlaps(p, w); });
    if (w.kind == InjectionKind::kClass1Deviation) {
      ++s.class1_windows;
      s.class1_detected += hit ? 1 : 0;
    } else {
      ++s.class2_windows;
      s.class2_detected += hit ? 1 : 0;
    }
  }
  std::set<std::string> flagged;
  for (const auto& p : long_periods) flagged.insert(p.cell_id);
  for (const auto& c : scope) {
    if (labelled.count(c)) continue;
    ++s.clean_cells;
    s.clean_cells_with_long += flagged.count(c) ? 1 : 0;
  }
  return s;
}

EvaluateResult CmdEvaluate(const PipelineConfig& cfg) {
  const Inputs in = LoadInputs(cfg);
  std::map<std::string, std::string> meta;
  const PredictorParams params = LoadModelFor(cfg, &meta);
  double reference = 0.0;
  if (auto it = meta.find("reference_mean"); it != meta.end()) {
    reference = csv::ParseDouble(it->second, "reference_mean");
  }
  const HourRange anchors = AnchorRange(*in.data, cfg.train_days);
  EvaluateResult res;
  if (reference <= 0.0) {
    const DatasetSource train(*in.data, EnumerateSamples(*in.data, CellsOf(in, "train"), anchors, true));
    reference = MeanTargetUtilization(train);
  }
  for (Split s : {Split::kTrain, Split::kValidation, Split::kTest}) {
    const DatasetSource src(*in.data,
                            EnumerateSamples(*in.data, CellsOf(in, SplitName(s)), anchors, true));
    if (src.size() == 0) continue;
    res.forecast[SplitName(s)] =
        Evaluate(params, src, reference, cfg.train.sigma_floor, {}, cfg.threads);
  }

  std::vector<GroundTruthLabel> labels;
  if (!cfg.labels.empty()) {
    RequireFile("labels", cfg.labels);
    labels = ReadLabelsFile(cfg.labels);
  }
  const DetectResult det = RunDetection(cfg, in, params);
  res.detection = ScoreDetection(det.periods, det.long_periods, labels, det.cells);

  auto out = OpenOut(cfg.out_dir, "metrics.csv");
  out << "name,value\n";
  for (const auto& [split, m] : res.forecast) {
    out << split << ".norm_mae," << Str(m.norm_mae) << '\n'
        << split << ".r2," << (m.r2 ? Str(*m.r2) : std::string()) << '\n'
        << split << ".nll," << Str(m.nll) << '\n'
        << split << ".pairs," << m.pairs << '\n';
  }
  const DetectionScore& d = res.detection;
  out << "detection.class1.windows," << d.class1_windows << '\n'
      << "detection.class1.detected," << d.class1_detected << '\n'
      << "detection.class1.recall," << Str(d.class1_recall()) << '\n'
      << "detection.class2.windows," << d.class2_windows << '\n'
      << "detection.class2.detected," << d.class2_detected << '\n'
      << "detection.class2.recall," << Str(d.class2_recall()) << '\n'
      << "detection.clean_cells," << d.clean_cells << '\n'
      << "detection.clean_cells_with_long," << d.clean_cells_with_long << '\n'
      << "detection.false_long_rate," << Str(d.false_long_rate()) << '\n'
      << "detection.mobility_cells," << d.mobility_cells << '\n'
      << "detection.mobility_long_periods," << d.mobility_long_periods << '\n';
  return res;
}

}  // namespace ranctx::pipeline
