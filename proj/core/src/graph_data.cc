#include "ranctx/graph_data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "ranctx/csv.h"
#include "ranctx/error.h"

namespace ranctx {

CellAttrs MakeAttrs(int antenna_idx, int band_idx) {
  if (antenna_idx < 0 || antenna_idx >= kAntennaSlots) {
    throw ValidationError("antenna index out of range: " +
                          std::to_string(antenna_idx));
  }
  if (band_idx < 0 || band_idx >= kBandSlots) {
    throw ValidationError("band index out of range: " +
                          std::to_string(band_idx));
  }
  CellAttrs a{};
  a[antenna_idx] = 1.0;
  a[kAntennaSlots + band_idx] = 1.0;
  return a;
}

std::size_t KpiSeries::ObservedCount() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

double KpiSeries::MissingFraction() const {
  if (values.empty()) return 1.0;
  return 1.0 - static_cast<double>(ObservedCount()) /
                   static_cast<double>(values.size());
}

const char* SplitName(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "?";
}

Split ParseSplit(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation") return Split::kValidation;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + name + "'");
}

std::vector<std::string> SplitSpec::Cells(Split s) const {
  std::vector<std::string> out;
  for (const auto& [id, split] : assignment) {
    if (split == s) out.push_back(id);
  }
  return out;
}

std::vector<std::string> FilterCells(const std::vector<KpiSeries>& series,
                                     double max_missing_frac) {
  if (series.empty()) throw DataError("no telemetry");
  if (!(max_missing_frac >= 0.0 && max_missing_frac <= 1.0)) {
    throw ValidationError("max_missing_frac must lie in [0, 1]");
  }
  std::vector<std::string> kept;
  for (const auto& s : series) {
    if (s.values.size() != s.mask.size()) {
      throw DataError("series '" + s.cell_id + "': values/mask length differ");
    }
    if (!s.values.empty() && s.MissingFraction() <= max_missing_frac) {
      kept.push_back(s.cell_id);
    }
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

KpiSeries ImputeSeries(const KpiSeries& series) {
  const auto first = std::find(series.mask.begin(), series.mask.end(), true);
  if (first == series.mask.end()) {
    throw DataError("unimputable cell '" + series.cell_id + "'");
  }
  KpiSeries out = series;
  double last = series.values[first - series.mask.begin()];
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (series.mask[i]) {
      last = series.values[i];
    } else {
      out.values[i] = last;
    }
  }
  return out;
}

std::vector<std::size_t> NearestNeighbors(std::span<const CellMeta> cells,
                                          std::size_t target, int k) {
  struct Candidate {
    double d2;
    std::size_t idx;
  };
  const Position& p = cells[target].position;
  std::vector<Candidate> cand;
  cand.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i == target) continue;
    const double dx = cells[i].position.x_m - p.x_m;
    const double dy = cells[i].position.y_m - p.y_m;
    cand.push_back({dx * dx + dy * dy, i});
  }
  const std::size_t take =
      std::min(cand.size(), static_cast<std::size_t>(std::max(k, 0)));
  auto closer = [&](const Candidate& a, const Candidate& b) {
    if (a.d2 != b.d2) return a.d2 < b.d2;
    return cells[a.idx].cell_id < cells[b.idx].cell_id;
  };
  std::partial_sort(cand.begin(), cand.begin() + take, cand.end(), closer);
  std::vector<std::size_t> out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = cand[i].idx;
  return out;
}

namespace {

void CopyWindow(const KpiSeries& s, Hour first, int len, double* dst) {
  const std::size_t off = static_cast<std::size_t>(first - s.start);
  std::copy_n(s.values.begin() + off, len, dst);
}

GraphSample Assemble(const CellMeta& target, const KpiSeries& target_series,
                     const std::vector<const CellMeta*>& nb_meta,
                     const std::vector<const KpiSeries*>& nb_series,
                     Hour anchor, int T, int L) {
  GraphSample g;
  g.anchor = anchor;
  g.T = T;
  g.L = L;
  g.target = target;
  const int k = static_cast<int>(nb_meta.size());
  const Hour ctx_first = anchor - T;
  g.context_target.resize(T + 1);
  g.pred_target.resize(L);
  CopyWindow(target_series, ctx_first, T + 1, g.context_target.data());
  CopyWindow(target_series, anchor + 1, L, g.pred_target.data());
  const std::size_t off = static_cast<std::size_t>(ctx_first - target_series.start);
  g.context_target_observed = static_cast<int>(
      std::count(target_series.mask.begin() + off,
                 target_series.mask.begin() + off + T + 1, true));

  g.neighbors.reserve(k);
  g.context_neighbors.resize(static_cast<std::size_t>(k) * (T + 1));
  g.pred_neighbors.resize(static_cast<std::size_t>(k) * L);
  for (int j = 0; j < k; ++j) {
    g.neighbors.push_back(*nb_meta[j]);
    CopyWindow(*nb_series[j], ctx_first, T + 1,
               g.context_neighbors.data() + static_cast<std::size_t>(j) * (T + 1));
    CopyWindow(*nb_series[j], anchor + 1, L,
               g.pred_neighbors.data() + static_cast<std::size_t>(j) * L);
  }
  return g;
}

void CheckWindow(const WindowSpec& w) {
  if (w.k < 1 || w.T < 0 || w.L < 1) {
    throw ValidationError("window requires k >= 1, T >= 0, L >= 1");
  }
}

}  // namespace

GraphSample BuildGraphSample(const std::vector<CellMeta>& deployment,
                             const std::vector<KpiSeries>& telemetry,
                             const std::string& target, Hour anchor,
                             const WindowSpec& window) {
  CheckWindow(window);
  std::unordered_map<std::string, const KpiSeries*> by_id;
  for (const auto& s : telemetry) by_id[s.cell_id] = &s;

  std::vector<CellMeta> candidates;
  std::vector<const KpiSeries*> cand_series;
  std::optional<std::size_t> target_idx;
  for (const auto& c : deployment) {
    auto it = by_id.find(c.cell_id);
    if (it == by_id.end()) continue;
    if (c.cell_id == target) target_idx = candidates.size();
    candidates.push_back(c);
    cand_series.push_back(it->second);
  }
  if (!target_idx) throw DataError("sample unavailable: unknown target '" + target + "'");
  if (static_cast<int>(candidates.size()) - 1 < window.k) {
    throw DataError("sample unavailable: fewer than k candidate cells");
  }
  const auto nb = NearestNeighbors(candidates, *target_idx, window.k);
  const Hour first = anchor - window.T;
  const Hour last = anchor + window.L;
  if (!cand_series[*target_idx]->Covers(first, last)) {
    throw DataError("sample unavailable: insufficient history for target");
  }
  std::vector<const CellMeta*> metas;
  std::vector<const KpiSeries*> series;
  for (std::size_t idx : nb) {
    if (!cand_series[idx]->Covers(first, last)) {
      throw DataError("sample unavailable: neighbor '" +
                      candidates[idx].cell_id + "' lacks coverage");
    }
    metas.push_back(&candidates[idx]);
    series.push_back(cand_series[idx]);
  }
  return Assemble(candidates[*target_idx], *cand_series[*target_idx], metas,
                  series, anchor, window.T, window.L);
}

SplitSpec SplitByRegion(const std::vector<CellMeta>& deployment,
                        const SplitFractions& fractions, SplitAxis axis) {
  const double sum = fractions.train + fractions.validation + fractions.test;
  if (fractions.train <= 0 || fractions.validation <= 0 || fractions.test <= 0 ||
      std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("split fractions must be positive and sum to 1");
  }
  if (deployment.size() < 3) {
    throw ValidationError("split requires at least 3 cells");
  }
  std::vector<const CellMeta*> order;
  for (const auto& c : deployment) order.push_back(&c);
  auto coord = [axis](const CellMeta* c) {
    return axis == SplitAxis::kX ? c->position.x_m : c->position.y_m;
  };
  std::sort(order.begin(), order.end(), [&](const CellMeta* a, const CellMeta* b) {
    if (coord(a) != coord(b)) return coord(a) < coord(b);
    return a->cell_id < b->cell_id;
  });
  const double n = static_cast<double>(order.size());
  auto cut1 = static_cast<std::size_t>(std::llround(n * fractions.train));
  auto cut2 = static_cast<std::size_t>(
      std::llround(n * (fractions.train + fractions.validation)));
  // Every split keeps at least one cell.
  cut1 = std::clamp<std::size_t>(cut1, 1, order.size() - 2);
  cut2 = std::clamp<std::size_t>(cut2, cut1 + 1, order.size() - 1);

  SplitSpec spec;
  spec.fractions = fractions;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Split s = i < cut1 ? Split::kTrain
                    : i < cut2 ? Split::kValidation
                               : Split::kTest;
    if (!spec.assignment.emplace(order[i]->cell_id, s).second) {
      throw ValidationError("duplicate cell_id '" + order[i]->cell_id + "'");
    }
  }
  return spec;
}

double LogNormalize(double utilization) {
  if (!(utilization >= 0.0)) {
    throw ValidationError("log_normalize expects a non-negative value");
  }
  return std::log1p(utilization);
}

double Denormalize(double normalized) { return std::expm1(normalized); }

// ---------------------------------------------------------------------------

Dataset::Dataset(std::vector<CellMeta> cells, std::vector<KpiSeries> imputed,
                 WindowSpec window)
    : window_(window) {
  CheckWindow(window);
  std::unordered_map<std::string, std::size_t> series_idx;
  for (std::size_t i = 0; i < imputed.size(); ++i) {
    series_idx[imputed[i].cell_id] = i;
  }
  for (auto& c : cells) {
    auto it = series_idx.find(c.cell_id);
    if (it == series_idx.end()) continue;
    if (!index_.emplace(c.cell_id, cells_.size()).second) {
      throw DataError("duplicate cell_id '" + c.cell_id + "'");
    }
    cells_.push_back(std::move(c));
    series_.push_back(std::move(imputed[it->second]));
  }
  neighbors_.resize(cells_.size());
  if (static_cast<int>(cells_.size()) - 1 >= window_.k) {
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      neighbors_[i] = NearestNeighbors(cells_, i, window_.k);
    }
  }
}

std::optional<std::size_t> Dataset::IndexOf(const std::string& cell_id) const {
  auto it = index_.find(cell_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

HourRange Dataset::CommonSpan() const {
  if (series_.empty()) return {};
  HourRange r{series_[0].start, series_[0].end() - 1};
  for (const auto& s : series_) {
    r.first = std::max(r.first, s.start);
    r.last = std::min(r.last, s.end() - 1);
  }
  return r;
}

bool Dataset::Feasible(std::size_t target, Hour anchor) const {
  if (neighbors_[target].empty()) return false;
  const Hour first = anchor - window_.T;
  const Hour last = anchor + window_.L;
  if (!series_[target].Covers(first, last)) return false;
  for (std::size_t j : neighbors_[target]) {
    if (!series_[j].Covers(first, last)) return false;
  }
  return true;
}

GraphSample Dataset::Build(std::size_t target, Hour anchor) const {
  if (!Feasible(target, anchor)) {
    throw DataError("sample unavailable: " + cells_[target].cell_id + " @ " +
                    FormatIsoHour(anchor));
  }
  std::vector<const CellMeta*> metas;
  std::vector<const KpiSeries*> series;
  for (std::size_t j : neighbors_[target]) {
    metas.push_back(&cells_[j]);
    series.push_back(&series_[j]);
  }
  return Assemble(cells_[target], series_[target], metas, series, anchor,
                  window_.T, window_.L);
}

std::vector<SampleKey> EnumerateSamples(const Dataset& data,
                                        const std::vector<std::string>& cells,
                                        HourRange anchors,
                                        bool require_observed_context,
                                        SlidingStats* stats) {
  std::vector<std::string> sorted = cells;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::optional<std::size_t>> idx;
  for (const auto& id : sorted) idx.push_back(data.IndexOf(id));

  std::vector<SampleKey> keys;
  SlidingStats local;
  const int T = data.window().T;
  for (Hour t = anchors.first; t <= anchors.last; ++t) {
    for (const auto& i : idx) {
      bool ok = i && data.Feasible(*i, t);
      if (ok && require_observed_context) {
        const KpiSeries& s = data.series(*i);
        const auto off = static_cast<std::size_t>(t - T - s.start);
        ok = std::find(s.mask.begin() + off, s.mask.begin() + off + T + 1,
                       true) != s.mask.begin() + off + T + 1;
      }
      if (ok) {
        keys.push_back({*i, t});
        ++local.produced;
      } else {
        ++local.skipped;
      }
    }
  }
  if (stats) *stats = local;
  return keys;
}

SlidingStats SlidingSamples(
    const Dataset& data, const std::vector<std::string>& cells,
    HourRange anchors, const std::function<void(const GraphSample&)>& sink) {
  SlidingStats stats;
  const auto keys = EnumerateSamples(data, cells, anchors, false, &stats);
  for (const auto& key : keys) sink(data.Build(key.cell, key.anchor));
  return stats;
}

// ---------------------------------------------------------------------------
// File formats

namespace {

const std::vector<std::string> kTelemetryHeader = {"cell_id", "timestamp",
                                                   "prb_util"};
const std::vector<std::string> kDeploymentHeader = {
    "cell_id", "site_id", "sector_id", "x_m", "y_m", "attr_idx_a", "attr_idx_b"};
const std::vector<std::string> kSplitHeader = {"cell_id", "split"};

void CheckId(const std::string& id, const std::string& what) {
  if (id.empty()) throw DataError(what + ": empty cell_id");
}

}  // namespace

std::vector<KpiSeries> ReadTelemetryCsv(std::istream& in,
                                        const std::string& what) {
  const auto rows = csv::ReadTable(in, kTelemetryHeader, what);
  struct Obs {
    Hour hour;
    std::optional<double> value;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Obs>> by_cell;
  for (const auto& r : rows) {
    CheckId(r[0], what);
    const Hour h = ParseIsoHour(r[1]);
    std::optional<double> v;
    if (!r[2].empty()) {
      v = csv::ParseDouble(r[2], "prb_util");
      if (!(*v >= 0.0 && *v <= 100.0)) {
        throw DataError(what + ": prb_util out of [0,100] for " + r[0] +
                        " at " + r[1]);
      }
    }
    auto [it, inserted] = by_cell.try_emplace(r[0]);
    if (inserted) order.push_back(r[0]);
    it->second.push_back({h, v});
  }
  std::vector<KpiSeries> out;
  out.reserve(order.size());
  for (const auto& id : order) {
    auto& obs = by_cell[id];
    std::sort(obs.begin(), obs.end(),
              [](const Obs& a, const Obs& b) { return a.hour < b.hour; });
    KpiSeries s;
    s.cell_id = id;
    s.start = obs.front().hour;
    const auto len = static_cast<std::size_t>(obs.back().hour - s.start + 1);
    s.values.assign(len, 0.0);
    s.mask.assign(len, false);
    Hour prev = s.start - 1;
    for (const auto& o : obs) {
      if (o.hour == prev) {
        throw DataError(what + ": duplicate row for " + id + " at " +
                        FormatIsoHour(o.hour));
      }
      prev = o.hour;
      if (o.value) {
        const auto i = static_cast<std::size_t>(o.hour - s.start);
        s.values[i] = *o.value;
        s.mask[i] = true;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<KpiSeries> ReadTelemetryFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return ReadTelemetryCsv(in, path);
}

void WriteTelemetryCsv(std::ostream& out, const std::vector<KpiSeries>& series) {
  out << csv::Join(kTelemetryHeader) << '\n';
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      out << s.cell_id << ',' << FormatIsoHour(s.start + static_cast<Hour>(i))
          << ',';
      if (s.mask[i]) out << csv::FormatDouble(s.values[i]);
      out << '\n';
    }
  }
}

std::vector<CellMeta> ReadDeploymentCsv(std::istream& in,
                                        const std::string& what) {
  const auto rows = csv::ReadTable(in, kDeploymentHeader, what);
  std::vector<CellMeta> out;
  std::unordered_map<std::string, bool> seen;
  for (const auto& r : rows) {
    CheckId(r[0], what);
    if (!seen.emplace(r[0], true).second) {
      throw DataError(what + ": duplicate cell_id '" + r[0] + "'");
    }
    CellMeta c;
    c.cell_id = r[0];
    c.site_id = r[1];
    c.sector_id = r[2];
    c.position = {csv::ParseDouble(r[3], "x_m"), csv::ParseDouble(r[4], "y_m")};
    const auto a = csv::ParseInt(r[5], "attr_idx_a");
    const auto b = csv::ParseInt(r[6], "attr_idx_b");
    if (a < 0 || a >= kAntennaSlots || b < kAntennaSlots || b >= kAttrWidth) {
      throw DataError(what + ": attribute indices out of range for " + r[0]);
    }
    c.attrs = MakeAttrs(static_cast<int>(a), static_cast<int>(b) - kAntennaSlots);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<CellMeta> ReadDeploymentFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return ReadDeploymentCsv(in, path);
}

void WriteDeploymentCsv(std::ostream& out, const std::vector<CellMeta>& cells) {
  out << csv::Join(kDeploymentHeader) << '\n';
  for (const auto& c : cells) {
    int a = -1, b = -1;
    for (int i = 0; i < kAttrWidth; ++i) {
      if (c.attrs[i] != 0.0) (i < kAntennaSlots ? a : b) = i;
    }
    if (a < 0 || b < 0) {
      throw ValidationError("cell '" + c.cell_id +
                            "' lacks an antenna or band attribute");
    }
    out << c.cell_id << ',' << c.site_id << ',' << c.sector_id << ','
        << csv::FormatDouble(c.position.x_m) << ','
        << csv::FormatDouble(c.position.y_m) << ',' << a << ',' << b << '\n';
  }
}

SplitSpec ReadSplitFile(const std::string& path) {
  SplitSpec spec;
  for (const auto& r : csv::ReadTableFile(path, kSplitHeader)) {
    if (!spec.assignment.emplace(r[0], ParseSplit(r[1])).second) {
      throw DataError(path + ": cell '" + r[0] + "' assigned twice");
    }
  }
  return spec;
}

void WriteSplitCsv(std::ostream& out, const SplitSpec& split) {
  out << csv::Join(kSplitHeader) << '\n';
  for (const auto& [id, s] : split.assignment) {
    out << id << ',' << SplitName(s) << '\n';
  }
}

}  // namespace ranctx
