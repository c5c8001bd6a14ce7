#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ranctx/hours.h"

namespace ranctx {

/// One-hot cell attributes: positions [0, 8) encode antenna type,
/// positions [8, 15) encode frequency band.
inline constexpr int kAttrWidth = 15;
inline constexpr int kAntennaSlots = 8;
inline constexpr int kBandSlots = 7;

using CellAttrs = std::array<double, kAttrWidth>;

CellAttrs MakeAttrs(int antenna_idx, int band_idx);

struct Position {
  double x_m = 0.0;
  double y_m = 0.0;
};

struct CellMeta {
  std::string cell_id;
  std::string site_id;
  std::string sector_id;
  Position position;
  CellAttrs attrs{};
};

/// Hourly PRB utilization (percent) with an observation mask.
struct KpiSeries {
  std::string cell_id;
  Hour start = 0;
  std::vector<double> values;
  std::vector<bool> mask;  // true = observed

  Hour end() const { return start + static_cast<Hour>(values.size()); }
  std::size_t ObservedCount() const;
  double MissingFraction() const;
  bool Covers(Hour first, Hour last) const {
    return first >= start && last < end();
  }
};

/// Context / prediction geometry. Context length is T+1 samples.
struct WindowSpec {
  int k = 200;
  int T = 167;
  int L = 24;

  int context_len() const { return T + 1; }
};

/// One target cell plus its k nearest neighbors around anchor hour t.
/// Series are imputed utilization percentages (not normalized).
struct GraphSample {
  Hour anchor = 0;
  int T = 0;
  int L = 0;
  CellMeta target;
  std::vector<CellMeta> neighbors;

  std::vector<double> context_target;  // [t-T, t]
  std::vector<double> pred_target;     // [t+1, t+L], held out
  std::vector<double> context_neighbors;  // k blocks of T+1, neighbor-major
  std::vector<double> pred_neighbors;     // k blocks of L, neighbor-major

  /// Observed (non-imputed) points of the target inside the context window.
  int context_target_observed = 0;

  int k() const { return static_cast<int>(neighbors.size()); }
  int context_len() const { return T + 1; }

  std::span<const double> context_neighbor(int j) const {
    return {context_neighbors.data() + static_cast<std::size_t>(j) * (T + 1),
            static_cast<std::size_t>(T + 1)};
  }
  std::span<const double> pred_neighbor(int j) const {
    return {pred_neighbors.data() + static_cast<std::size_t>(j) * L,
            static_cast<std::size_t>(L)};
  }
};

enum class Split { kTrain, kValidation, kTest };

const char* SplitName(Split s);
Split ParseSplit(const std::string& name);

struct SplitFractions {
  double train = 0.70;
  double validation = 0.10;
  double test = 0.20;
};

enum class SplitAxis { kX, kY };

struct SplitSpec {
  std::map<std::string, Split> assignment;
  SplitFractions fractions;

  std::vector<std::string> Cells(Split s) const;
};

/// Inclusive range of anchor hours.
struct HourRange {
  Hour first = 0;
  Hour last = -1;

  bool empty() const { return last < first; }
  Hour size() const { return empty() ? 0 : last - first + 1; }
};

// ---------------------------------------------------------------------------
// Operations

/// Cells whose missing fraction is at most `max_missing_frac`, sorted by id.
std::vector<std::string> FilterCells(const std::vector<KpiSeries>& series,
                                     double max_missing_frac = 0.5);

/// Last-observation-carried-forward, with leading gaps backfilled from the
/// first observation. The mask is kept as provenance.
KpiSeries ImputeSeries(const KpiSeries& series);

/// k nearest cells to `target` by planar Euclidean distance, excluding the
/// target itself; ties broken by ascending cell_id. Returns indices into
/// `cells`.
std::vector<std::size_t> NearestNeighbors(std::span<const CellMeta> cells,
                                          std::size_t target, int k);

/// Builds one sample from scratch. Only cells with telemetry are neighbor
/// candidates. Throws DataError("sample unavailable") when the anchor is
/// infeasible.
GraphSample BuildGraphSample(const std::vector<CellMeta>& deployment,
                             const std::vector<KpiSeries>& telemetry,
                             const std::string& target, Hour anchor,
                             const WindowSpec& window);

SplitSpec SplitByRegion(const std::vector<CellMeta>& deployment,
                        const SplitFractions& fractions,
                        SplitAxis axis = SplitAxis::kX);

double LogNormalize(double utilization);
double Denormalize(double normalized);

// ---------------------------------------------------------------------------
// Indexed access for streaming many samples.

struct SampleKey {
  std::size_t cell = 0;  // index into Dataset
  Hour anchor = 0;
};

/// Retained cells, their imputed telemetry and a precomputed k-NN index.
class Dataset {
 public:
  Dataset(std::vector<CellMeta> cells, std::vector<KpiSeries> imputed,
          WindowSpec window);

  std::size_t size() const { return cells_.size(); }
  const WindowSpec& window() const { return window_; }
  const CellMeta& meta(std::size_t i) const { return cells_[i]; }
  const KpiSeries& series(std::size_t i) const { return series_[i]; }
  std::span<const std::size_t> neighbors(std::size_t i) const {
    return neighbors_[i];
  }
  std::optional<std::size_t> IndexOf(const std::string& cell_id) const;

  /// Hours covered by every cell's telemetry.
  HourRange CommonSpan() const;

  bool Feasible(std::size_t target, Hour anchor) const;
  GraphSample Build(std::size_t target, Hour anchor) const;

 private:
  std::vector<CellMeta> cells_;
  std::vector<KpiSeries> series_;
  WindowSpec window_;
  std::vector<std::vector<std::size_t>> neighbors_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct SlidingStats {
  std::size_t produced = 0;
  std::size_t skipped = 0;
};

/// Enumerates feasible (cell, anchor) pairs in (anchor, cell_id) order.
/// When `require_observed_context` is set, samples whose target context is
/// entirely imputed are skipped as well.
std::vector<SampleKey> EnumerateSamples(const Dataset& data,
                                        const std::vector<std::string>& cells,
                                        HourRange anchors,
                                        bool require_observed_context = false,
                                        SlidingStats* stats = nullptr);

/// Streams one sample per feasible (cell, anchor); infeasible pairs are
/// counted in the returned stats.
SlidingStats SlidingSamples(
    const Dataset& data, const std::vector<std::string>& cells,
    HourRange anchors, const std::function<void(const GraphSample&)>& sink);

// ---------------------------------------------------------------------------
// File formats

std::vector<KpiSeries> ReadTelemetryCsv(std::istream& in,
                                        const std::string& what = "telemetry");
std::vector<KpiSeries> ReadTelemetryFile(const std::string& path);
void WriteTelemetryCsv(std::ostream& out, const std::vector<KpiSeries>& series);

std::vector<CellMeta> ReadDeploymentCsv(std::istream& in,
                                        const std::string& what = "deployment");
std::vector<CellMeta> ReadDeploymentFile(const std::string& path);
void WriteDeploymentCsv(std::ostream& out, const std::vector<CellMeta>& cells);

SplitSpec ReadSplitFile(const std::string& path);
void WriteSplitCsv(std::ostream& out, const SplitSpec& split);

}  // namespace ranctx
