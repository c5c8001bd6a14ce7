#include "ranctx/synth_ran.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <unordered_map>

#include "ranctx/csv.h"
#include "ranctx/error.h"
#include "ranctx/kv_config.h"

namespace ranctx {
namespace {

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t SubSeed(std::uint64_t seed, std::uint64_t stream) {
  return SplitMix64(seed ^ SplitMix64(stream + 0x632be59bd9b4e019ULL));
}

double Kernel(const Position& a, const Position& b, double radius) {
  const double dx = a.x_m - b.x_m;
  const double dy = a.y_m - b.y_m;
  return std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
}

int BandIndex(const CellMeta& c) {
  for (int i = 0; i < kBandSlots; ++i) {
    if (c.attrs[kAntennaSlots + i] != 0.0) return i;
  }
  return 0;
}

double Clip(double v) { return std::clamp(v, 0.0, 100.0); }

}  // namespace

void ScenarioConfig::Validate() const {
  auto bad = [](const std::string& what) { throw ValidationError(what); };
  if (n_sites < 1 || cells_per_site < 1 || days < 1) {
    bad("scenario counts (n_sites, cells_per_site, days) must be >= 1");
  }
  if (cells_per_site > 3 * kBandSlots) {
    bad("cells_per_site must be <= 21 (3 sectors x 7 bands)");
  }
  if (area_width_m <= 0 || area_height_m <= 0) bad("area must be positive");
  if (base_load <= 0 || base_load > 100) bad("base_load must lie in (0, 100]");
  if (diurnal_amplitude < 0 || diurnal_amplitude > 1) {
    bad("diurnal_amplitude must lie in [0, 1]");
  }
  if (weekend_factor <= 0) bad("weekend_factor must be positive");
  if (noise_std < 0) bad("noise_std must be non-negative");
  for (double f : {missing_frac, sparse_cell_frac, sparse_missing_frac}) {
    if (f < 0 || f >= 1) bad("fractions must lie in [0, 1)");
  }
  if (hotspot_knot_hours <= 0) bad("hotspot_knot_hours must be positive");
}

const char* InjectionKindName(InjectionKind k) {
  switch (k) {
    case InjectionKind::kClass1Deviation: return "class1_deviation";
    case InjectionKind::kClass2Shift: return "class2_shift";
    case InjectionKind::kMobilityEvent: return "mobility_event";
  }
  return "?";
}

InjectionKind ParseInjectionKind(const std::string& name) {
  if (name == "class1_deviation") return InjectionKind::kClass1Deviation;
  if (name == "class2_shift") return InjectionKind::kClass2Shift;
  if (name == "mobility_event") return InjectionKind::kMobilityEvent;
  throw DataError("unknown injection kind '" + name + "'");
}

std::vector<CellMeta> GenerateDeployment(const ScenarioConfig& cfg) {
  cfg.Validate();
  std::mt19937_64 rng(SubSeed(cfg.seed, 1));
  std::uniform_real_distribution<double> ux(0.0, cfg.area_width_m);
  std::uniform_real_distribution<double> uy(0.0, cfg.area_height_m);
  std::uniform_int_distribution<int> antenna(0, kAntennaSlots - 1);
  std::uniform_int_distribution<int> band(0, kBandSlots - 1);

  std::vector<CellMeta> cells;
  cells.reserve(cfg.total_cells());
  const int sectors = std::min(3, cfg.cells_per_site);
  char buf[32];
  for (int s = 0; s < cfg.n_sites; ++s) {
    std::snprintf(buf, sizeof(buf), "S%04d", s);
    const std::string site = buf;
    const Position pos{ux(rng), uy(rng)};
    int sector_antenna[3];
    for (int i = 0; i < sectors; ++i) sector_antenna[i] = antenna(rng);
    const int band_offset = band(rng);
    for (int c = 0; c < cfg.cells_per_site; ++c) {
      CellMeta m;
      m.cell_id = site + "_C" + std::to_string(c);
      m.site_id = site;
      const int sector = c % sectors;
      m.sector_id = site + "_S" + std::to_string(sector);
      m.position = pos;
      m.attrs = MakeAttrs(sector_antenna[sector],
                          (band_offset + c / sectors) % kBandSlots);
      cells.push_back(std::move(m));
    }
  }
  return cells;
}

std::vector<KpiSeries> GenerateTraffic(const std::vector<CellMeta>& deployment,
                                       const ScenarioConfig& cfg) {
  cfg.Validate();
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const Hour hours = cfg.hours();

  // Spatial structure shared by all cells.
  std::mt19937_64 field_rng(SubSeed(cfg.seed, 2));
  std::uniform_real_distribution<double> ux(0.0, cfg.area_width_m);
  std::uniform_real_distribution<double> uy(0.0, cfg.area_height_m);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Position> districts(cfg.business_districts);
  for (auto& d : districts) d = {ux(field_rng), uy(field_rng)};
  std::vector<Position> hotspots(cfg.hotspots);
  for (auto& h : hotspots) h = {ux(field_rng), uy(field_rng)};

  const auto knots = static_cast<std::size_t>(
      std::ceil(static_cast<double>(hours) / cfg.hotspot_knot_hours)) + 2;
  std::vector<std::vector<double>> knot_values(cfg.hotspots,
                                               std::vector<double>(knots));
  for (auto& kv : knot_values) {
    for (auto& v : kv) v = gauss(field_rng);
  }
  // amplitude[b][t]: hotspot strength at hour t, linear between knots.
  std::vector<std::vector<double>> amplitude(cfg.hotspots,
                                             std::vector<double>(hours));
  for (int b = 0; b < cfg.hotspots; ++b) {
    for (Hour t = 0; t < hours; ++t) {
      const double pos = static_cast<double>(t) / cfg.hotspot_knot_hours;
      const auto i = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(i);
      amplitude[b][t] =
          (1.0 - frac) * knot_values[b][i] + frac * knot_values[b][i + 1];
    }
  }

  std::vector<double> band_factor(kBandSlots);
  std::mt19937_64 base_rng(SubSeed(cfg.seed, 3));
  for (auto& f : band_factor) {
    f = std::exp(cfg.band_load_spread * gauss(base_rng) -
                 0.5 * cfg.band_load_spread * cfg.band_load_spread);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<KpiSeries> out;
  out.reserve(deployment.size());
  for (std::size_t c = 0; c < deployment.size(); ++c) {
    const CellMeta& cell = deployment[c];
    const double base =
        cfg.base_load *
        std::exp(cfg.base_load_spread * gauss(base_rng) -
                 0.5 * cfg.base_load_spread * cfg.base_load_spread) *
        band_factor[BandIndex(cell)];
    const bool sparse = unit(base_rng) < cfg.sparse_cell_frac;
    const double miss = sparse ? cfg.sparse_missing_frac : cfg.missing_frac;

    double not_business = 1.0;
    for (const auto& d : districts) {
      not_business *= 1.0 - Kernel(cell.position, d, cfg.district_radius_m);
    }
    const double business = 1.0 - not_business;
    std::vector<double> weight(cfg.hotspots);
    for (int b = 0; b < cfg.hotspots; ++b) {
      weight[b] = Kernel(cell.position, hotspots[b], cfg.hotspot_radius_m);
    }

    std::mt19937_64 cell_rng(SubSeed(cfg.seed, 1000 + c));
    KpiSeries s;
    s.cell_id = cell.cell_id;
    s.start = cfg.start;
    s.values.resize(hours);
    s.mask.resize(hours);
    for (Hour t = 0; t < hours; ++t) {
      const Hour abs = cfg.start + t;
      const double hod = HourOfDay(abs);
      const double residential =
          1.0 + cfg.diurnal_amplitude * std::cos(kTwoPi * (hod - 20.0) / 24.0);
      const double office =
          1.0 + cfg.diurnal_amplitude * std::cos(kTwoPi * (hod - 13.0) / 24.0);
      const double diurnal = (1.0 - business) * residential + business * office;
      const double weekly = IsWeekend(abs) ? cfg.weekend_factor : 1.0;
      double log_field = 0.0;
      for (int b = 0; b < cfg.hotspots; ++b) {
        log_field += weight[b] * amplitude[b][t];
      }
      const double mean =
          base * diurnal * weekly * std::exp(cfg.hotspot_amplitude * log_field);
      const double noise = cfg.noise_std > 0 ? cfg.noise_std * gauss(cell_rng) : 0.0;
      s.values[t] = Clip(mean + noise);
      s.mask[t] = !(miss > 0 && unit(cell_rng) < miss);
    }
    out.push_back(std::move(s));
  }
  return out;
}

double MobilityProfile(double peak, Hour offset, Hour duration) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const double phase = (static_cast<double>(offset) + 0.5) /
                       static_cast<double>(duration);
  return 1.0 + (peak - 1.0) * 0.5 * (1.0 - std::cos(kTwoPi * phase));
}

InjectionResult Inject(std::vector<KpiSeries> series, const InjectionSpec& spec) {
  if (spec.end < spec.start) throw ValidationError("injection window is empty");
  if (spec.targets.empty()) throw ValidationError("injection has no targets");
  if (spec.kind != InjectionKind::kMobilityEvent && spec.targets.size() != 1) {
    throw ValidationError("class1/class2 injections target exactly one cell");
  }
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < series.size(); ++i) idx[series[i].cell_id] = i;

  InjectionResult res;
  const Hour duration = spec.end - spec.start + 1;
  for (const auto& target : spec.targets) {
    auto it = idx.find(target);
    if (it == idx.end()) throw DataError("unknown target '" + target + "'");
    KpiSeries& s = series[it->second];
    if (!s.Covers(spec.start, spec.end)) {
      throw ValidationError("injection window outside telemetry of '" +
                            target + "'");
    }
    for (Hour h = spec.start; h <= spec.end; ++h) {
      double& v = s.values[static_cast<std::size_t>(h - s.start)];
      const double orig = v;
      const Hour offset = h - spec.start;
      switch (spec.kind) {
        case InjectionKind::kClass1Deviation: {
          const double shifted = spec.additive
                                     ? orig + spec.magnitude
                                     : std::max(orig, 1.0) * (1.0 + spec.magnitude);
          v = Clip(shifted);
          if (std::abs(v - orig) < 1e-9) {
            // Saturated in the requested direction: deviate the other way.
            const double step = std::max(std::abs(shifted - orig), 1.0);
            v = Clip(orig >= 50.0 ? orig - step : orig + step);
          }
          break;
        }
        case InjectionKind::kClass2Shift: {
          bool off = spec.class2_mode == Class2Mode::kOff;
          if (spec.class2_mode == Class2Mode::kAlternate) {
            off = (offset / std::max(spec.alternate_period_h, 1)) % 2 == 0;
          }
          if (spec.class2_mode == Class2Mode::kSaturate) {
            v = orig >= 100.0 ? 99.5 : 100.0;
          } else if (off) {
            v = orig == 0.0 ? 0.5 : 0.0;
          } else {
            v = Clip(std::max(orig * 1.3, orig + 5.0));
            if (v == orig) v = 99.0;
          }
          break;
        }
        case InjectionKind::kMobilityEvent:
          v = Clip(orig * MobilityProfile(spec.magnitude, offset, duration));
          break;
      }
      res.labels.push_back({target, h, spec.kind != InjectionKind::kMobilityEvent,
                            spec.kind});
    }
  }
  res.series = std::move(series);
  return res;
}

std::vector<InjectionSpec> PlanInjections(const std::vector<CellMeta>& deployment,
                                          const SplitSpec& split,
                                          const ScenarioConfig& cfg,
                                          const InjectionPlan& plan) {
  std::vector<const CellMeta*> region;
  for (const auto& c : deployment) {
    auto it = split.assignment.find(c.cell_id);
    if (it != split.assignment.end() && it->second == plan.region) {
      region.push_back(&c);
    }
  }
  std::sort(region.begin(), region.end(),
            [](const CellMeta* a, const CellMeta* b) { return a->cell_id < b->cell_id; });
  if (region.empty()) throw ValidationError("injection region has no cells");

  const Hour hours = cfg.hours();
  const Hour earliest = static_cast<Hour>(plan.earliest_day) * kHoursPerDay;
  std::mt19937_64 rng(SubSeed(plan.seed, 11));
  std::vector<InjectionSpec> specs;
  std::set<std::string> used;

  if (plan.mobility && plan.mobility_cells > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, region.size() - 1);
    const Position center = region[pick(rng)]->position;
    std::vector<const CellMeta*> area = region;
    std::sort(area.begin(), area.end(), [&](const CellMeta* a, const CellMeta* b) {
      const double da = std::hypot(a->position.x_m - center.x_m,
                                   a->position.y_m - center.y_m);
      const double db = std::hypot(b->position.x_m - center.x_m,
                                   b->position.y_m - center.y_m);
      if (da != db) return da < db;
      return a->cell_id < b->cell_id;
    });
    area.resize(std::min<std::size_t>(area.size(), plan.mobility_cells));
    const int last_day =
        static_cast<int>((hours - plan.mobility_start_hour - plan.mobility_duration_h) /
                         kHoursPerDay);
    if (last_day < plan.earliest_day) {
      throw ValidationError("scenario too short for the mobility event");
    }
    std::uniform_int_distribution<int> day(plan.earliest_day, last_day);
    InjectionSpec m;
    m.kind = InjectionKind::kMobilityEvent;
    m.start = cfg.start + static_cast<Hour>(day(rng)) * kHoursPerDay +
              plan.mobility_start_hour;
    m.end = m.start + plan.mobility_duration_h - 1;
    m.magnitude = plan.mobility_factor;
    for (const auto* c : area) {
      m.targets.push_back(c->cell_id);
      used.insert(c->cell_id);
    }
    std::sort(m.targets.begin(), m.targets.end());
    specs.push_back(std::move(m));
  }

  std::vector<const CellMeta*> pool;
  for (const auto* c : region) {
    if (!used.count(c->cell_id)) pool.push_back(c);
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  std::set<std::string> sectors;
  std::size_t next = 0;
  auto take_cell = [&]() -> const CellMeta* {
    while (next < pool.size()) {
      const CellMeta* c = pool[next++];
      if (sectors.insert(c->sector_id).second) return c;
    }
    throw ValidationError("not enough distinct sectors in region for injections");
  };
  auto window = [&](int duration) {
    const Hour latest = hours - duration;
    if (latest < earliest) throw ValidationError("scenario too short for injections");
    std::uniform_int_distribution<Hour> start(earliest, latest);
    return cfg.start + start(rng);
  };

  for (int i = 0; i < plan.class1_count; ++i) {
    InjectionSpec s;
    s.kind = InjectionKind::kClass1Deviation;
    s.targets = {take_cell()->cell_id};
    s.start = window(plan.class1_duration_h);
    s.end = s.start + plan.class1_duration_h - 1;
    s.magnitude = plan.class1_magnitude;
    specs.push_back(std::move(s));
  }
  constexpr Class2Mode kModes[] = {Class2Mode::kOff, Class2Mode::kAlternate,
                                   Class2Mode::kSaturate};
  for (int i = 0; i < plan.class2_count; ++i) {
    InjectionSpec s;
    s.kind = InjectionKind::kClass2Shift;
    s.targets = {take_cell()->cell_id};
    s.start = window(plan.class2_duration_h);
    s.end = s.start + plan.class2_duration_h - 1;
    s.class2_mode = kModes[i % 3];
    specs.push_back(std::move(s));
  }
  return specs;
}

Scenario GenerateScenario(const ScenarioConfig& cfg, const InjectionPlan& plan,
                          const SplitFractions& fractions, SplitAxis axis) {
  Scenario sc;
  sc.deployment = GenerateDeployment(cfg);
  sc.clean = GenerateTraffic(sc.deployment, cfg);
  sc.split = SplitByRegion(sc.deployment, fractions, axis);
  sc.injections = PlanInjections(sc.deployment, sc.split, cfg, plan);
  std::vector<KpiSeries> series = sc.clean;
  for (const auto& spec : sc.injections) {
    auto res = Inject(std::move(series), spec);
    series = std::move(res.series);
    sc.labels.insert(sc.labels.end(), res.labels.begin(), res.labels.end());
  }
  sc.telemetry = std::move(series);
  std::stable_sort(sc.labels.begin(), sc.labels.end(),
                   [](const GroundTruthLabel& a, const GroundTruthLabel& b) {
                     if (a.cell_id != b.cell_id) return a.cell_id < b.cell_id;
                     return a.hour < b.hour;
                   });
  return sc;
}

void LoadScenarioConfig(KvConfig& kv, ScenarioConfig* cfg, InjectionPlan* plan) {
  auto geti = [&](const char* key, int fallback) {
    return static_cast<int>(kv.GetInt(key, fallback));
  };
  cfg->n_sites = geti("n_sites", cfg->n_sites);
  cfg->cells_per_site = geti("cells_per_site", cfg->cells_per_site);
  cfg->area_width_m = kv.GetDouble("area_width_m", cfg->area_width_m);
  cfg->area_height_m = kv.GetDouble("area_height_m", cfg->area_height_m);
  cfg->days = geti("days", cfg->days);
  if (kv.Has("start")) {
    try {
      cfg->start = ParseIsoHour(kv.GetString("start", ""));
    } catch (const Error& e) {
      throw ValidationError(std::string("key 'start': ") + e.what());
    }
  }
  cfg->base_load = kv.GetDouble("base_load", cfg->base_load);
  cfg->base_load_spread = kv.GetDouble("base_load_spread", cfg->base_load_spread);
  cfg->band_load_spread = kv.GetDouble("band_load_spread", cfg->band_load_spread);
  cfg->diurnal_amplitude = kv.GetDouble("diurnal_amplitude", cfg->diurnal_amplitude);
  cfg->weekend_factor = kv.GetDouble("weekend_factor", cfg->weekend_factor);
  cfg->business_districts = geti("business_districts", cfg->business_districts);
  cfg->district_radius_m = kv.GetDouble("district_radius_m", cfg->district_radius_m);
  cfg->hotspots = geti("hotspots", cfg->hotspots);
  cfg->hotspot_radius_m = kv.GetDouble("hotspot_radius_m", cfg->hotspot_radius_m);
  cfg->hotspot_amplitude = kv.GetDouble("hotspot_amplitude", cfg->hotspot_amplitude);
  cfg->hotspot_knot_hours =
      kv.GetDouble("hotspot_knot_hours", cfg->hotspot_knot_hours);
  cfg->noise_std = kv.GetDouble("noise_std", cfg->noise_std);
  cfg->missing_frac = kv.GetDouble("missing_frac", cfg->missing_frac);
  cfg->sparse_cell_frac = kv.GetDouble("sparse_cell_frac", cfg->sparse_cell_frac);
  cfg->sparse_missing_frac =
      kv.GetDouble("sparse_missing_frac", cfg->sparse_missing_frac);
  cfg->seed = static_cast<std::uint64_t>(kv.GetInt("seed", static_cast<long long>(cfg->seed)));

  if (kv.Has("inject.region")) {
    try {
      plan->region = ParseSplit(kv.GetString("inject.region", ""));
    } catch (const Error& e) {
      throw ValidationError(std::string("key 'inject.region': ") + e.what());
    }
  }
  plan->earliest_day = geti("inject.earliest_day", plan->earliest_day);
  plan->class1_count = geti("inject.class1.count", plan->class1_count);
  plan->class1_magnitude = kv.GetDouble("inject.class1.magnitude", plan->class1_magnitude);
  plan->class1_duration_h = geti("inject.class1.duration_h", plan->class1_duration_h);
  plan->class2_count = geti("inject.class2.count", plan->class2_count);
  plan->class2_duration_h = geti("inject.class2.duration_h", plan->class2_duration_h);
  plan->mobility = kv.GetBool("inject.mobility", plan->mobility);
  plan->mobility_cells = geti("inject.mobility.cells", plan->mobility_cells);
  plan->mobility_factor = kv.GetDouble("inject.mobility.factor", plan->mobility_factor);
  plan->mobility_duration_h =
      geti("inject.mobility.duration_h", plan->mobility_duration_h);
  plan->mobility_start_hour =
      geti("inject.mobility.start_hour", plan->mobility_start_hour);
  plan->seed = static_cast<std::uint64_t>(
      kv.GetInt("inject.seed", static_cast<long long>(plan->seed)));
  cfg->Validate();
}

void WriteLabelsCsv(std::ostream& out, const std::vector<GroundTruthLabel>& labels) {
  out << "cell_id,timestamp,kind\n";
  for (const auto& l : labels) {
    out << l.cell_id << ',' << FormatIsoHour(l.hour) << ','
        << InjectionKindName(l.kind) << '\n';
  }
}

std::vector<GroundTruthLabel> ReadLabelsFile(const std::string& path) {
  std::vector<GroundTruthLabel> out;
  for (const auto& r : csv::ReadTableFile(path, {"cell_id", "timestamp", "kind"})) {
    GroundTruthLabel l;
    l.cell_id = r[0];
    l.hour = ParseIsoHour(r[1]);
    l.kind = ParseInjectionKind(r[2]);
    l.is_anomalous = l.kind != InjectionKind::kMobilityEvent;
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace ranctx
