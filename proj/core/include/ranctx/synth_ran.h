#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ranctx/graph_data.h"
#include "ranctx/hours.h"

namespace ranctx {

class KvConfig;

/// Synthetic deployment and traffic model.
///
/// Per cell and hour the generated utilization is
///
///   clip(base_c * diurnal(h, pos) * weekly(dow) * field(pos, t) + noise, 0, 100)
///
/// where diurnal() blends a residential (evening peak) and a business
/// (midday peak) profile according to a smooth spatial business-district
/// weight, and field() is a log-Gaussian hotspot field whose amplitudes
/// drift over time. Nearby cells therefore share short-term fluctuations
/// that no single cell can predict from its own history.
struct ScenarioConfig {
  int n_sites = 50;
  int cells_per_site = 6;
  double area_width_m = 6000.0;
  double area_height_m = 6000.0;
  int days = 30;
  Hour start = ParseIsoHour("2024-01-01T00:00:00Z");  // a Monday

  double base_load = 30.0;           // mean utilization, percent
  double base_load_spread = 0.35;    // log-normal sigma across cells
  double band_load_spread = 0.25;    // log-normal sigma across bands
  double diurnal_amplitude = 0.7;    // relative amplitude of daily cycle
  double weekend_factor = 0.7;
  int business_districts = 3;
  double district_radius_m = 1200.0;

  int hotspots = 10;
  double hotspot_radius_m = 1500.0;
  double hotspot_amplitude = 0.35;   // log-scale std of the field
  double hotspot_knot_hours = 6.0;   // time scale of field drift

  double noise_std = 1.0;            // percentage points
  double missing_frac = 0.0;
  double sparse_cell_frac = 0.0;     // cells with heavy missingness
  double sparse_missing_frac = 0.7;

  std::uint64_t seed = 1;

  int total_cells() const { return n_sites * cells_per_site; }
  Hour hours() const { return static_cast<Hour>(days) * kHoursPerDay; }
  void Validate() const;
};

enum class InjectionKind { kClass1Deviation, kClass2Shift, kMobilityEvent };

const char* InjectionKindName(InjectionKind k);
InjectionKind ParseInjectionKind(const std::string& name);

enum class Class2Mode { kOff, kSaturate, kAlternate };

struct InjectionSpec {
  InjectionKind kind = InjectionKind::kClass1Deviation;
  std::vector<std::string> targets;  // one cell for class1/class2
  Hour start = 0;
  Hour end = 0;  // inclusive
  /// class1: relative change (0.5 = +50%) or, if `additive`, percentage
  /// points. mobility: peak multiplicative factor. Unused for class2.
  double magnitude = 0.5;
  bool additive = false;
  Class2Mode class2_mode = Class2Mode::kOff;
  int alternate_period_h = 3;
};

struct GroundTruthLabel {
  std::string cell_id;
  Hour hour = 0;
  bool is_anomalous = false;
  InjectionKind kind = InjectionKind::kClass1Deviation;
};

struct InjectionResult {
  std::vector<KpiSeries> series;
  std::vector<GroundTruthLabel> labels;
};

std::vector<CellMeta> GenerateDeployment(const ScenarioConfig& cfg);

std::vector<KpiSeries> GenerateTraffic(const std::vector<CellMeta>& deployment,
                                       const ScenarioConfig& cfg);

/// Applies one injection. Throws DataError("unknown target ...") when a
/// target cell is absent and ValidationError when the window falls outside
/// the series.
InjectionResult Inject(std::vector<KpiSeries> series, const InjectionSpec& spec);

/// Raised-cosine multiplier used by mobility events; `offset` is the hour
/// index inside a window of `duration` hours.
double MobilityProfile(double peak, Hour offset, Hour duration);

/// Random placement of injections inside one split region.
struct InjectionPlan {
  Split region = Split::kTest;
  int earliest_day = 15;  // injections start on or after this day

  int class1_count = 10;
  double class1_magnitude = 0.6;
  int class1_duration_h = 8;

  int class2_count = 8;
  int class2_duration_h = 24;

  bool mobility = true;
  int mobility_cells = 24;
  double mobility_factor = 2.5;
  int mobility_duration_h = 9;
  int mobility_start_hour = 15;  // hour of day

  std::uint64_t seed = 7;
};

std::vector<InjectionSpec> PlanInjections(const std::vector<CellMeta>& deployment,
                                          const SplitSpec& split,
                                          const ScenarioConfig& cfg,
                                          const InjectionPlan& plan);

/// Full scenario: deployment, clean + injected telemetry, labels, split.
struct Scenario {
  std::vector<CellMeta> deployment;
  std::vector<KpiSeries> clean;
  std::vector<KpiSeries> telemetry;
  std::vector<GroundTruthLabel> labels;
  std::vector<InjectionSpec> injections;
  SplitSpec split;
};

Scenario GenerateScenario(const ScenarioConfig& cfg, const InjectionPlan& plan,
                          const SplitFractions& fractions = {},
                          SplitAxis axis = SplitAxis::kX);

/// Reads the documented scenario keys (see README) from `kv`. Keys that
/// are absent keep their defaults.
void LoadScenarioConfig(KvConfig& kv, ScenarioConfig* cfg, InjectionPlan* plan);

void WriteLabelsCsv(std::ostream& out, const std::vector<GroundTruthLabel>& labels);
std::vector<GroundTruthLabel> ReadLabelsFile(const std::string& path);

}  // namespace ranctx
