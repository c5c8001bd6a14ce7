#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "ranctx/error.h"
#include "ranctx/kv_config.h"
#include "ranctx/synth_ran.h"

namespace ranctx {
namespace {

ScenarioConfig Small() {
  ScenarioConfig c;
  c.n_sites = 10;
  c.cells_per_site = 6;
  c.days = 10;
  return c;
}

double Pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

TEST(Deployment, Layout) {
  const auto cells = GenerateDeployment(Small());
  ASSERT_EQ(cells.size(), 60u);
  std::set<std::string> sectors, sites, ids;
  std::map<std::string, int> per_sector;
  for (const auto& c : cells) {
    sectors.insert(c.sector_id);
    sites.insert(c.site_id);
    ids.insert(c.cell_id);
    ++per_sector[c.sector_id];
    EXPECT_EQ(std::count(c.attrs.begin(), c.attrs.end(), 1.0), 2);
    EXPECT_EQ(std::count(c.attrs.begin(), c.attrs.end(), 0.0), 13);
  }
  EXPECT_EQ(sites.size(), 10u);
  EXPECT_EQ(sectors.size(), 30u);
  EXPECT_EQ(ids.size(), 60u);
  for (const auto& [s, n] : per_sector) EXPECT_EQ(n, 2) << s;
}

TEST(Deployment, Deterministic) {
  const auto a = GenerateDeployment(Small());
  const auto b = GenerateDeployment(Small());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].cell_id, b[i].cell_id);
    EXPECT_EQ(a[i].position.x_m, b[i].position.x_m);
    EXPECT_EQ(a[i].attrs, b[i].attrs);
  }
  auto other = Small();
  other.seed = 2;
  EXPECT_NE(GenerateDeployment(other)[0].position.x_m, a[0].position.x_m);
}

TEST(Deployment, OperatorScale) {
  ScenarioConfig c;
  c.n_sites = 1300;
  c.cells_per_site = 6;
  EXPECT_EQ(GenerateDeployment(c).size(), 7800u);
}

TEST(Traffic, NoiselessCoLocatedCellsAreIdentical) {
  auto c = Small();
  c.noise_std = 0;
  c.base_load_spread = 0;
  c.band_load_spread = 0;
  const auto dep = GenerateDeployment(c);
  const auto tel = GenerateTraffic(dep, c);
  // cells 0 and 1 share a site (same position) and, with no load spread,
  // the same base load.
  EXPECT_EQ(dep[0].position.x_m, dep[1].position.x_m);
  EXPECT_EQ(tel[0].values, tel[1].values);
}

TEST(Traffic, WeekendRatio) {
  auto c = Small();
  c.days = 28;
  c.hotspots = 0;
  c.base_load = 20;
  c.base_load_spread = 0;
  c.band_load_spread = 0;
  c.noise_std = 0.5;
  c.weekend_factor = 0.7;
  const auto dep = GenerateDeployment(c);
  const auto tel = GenerateTraffic(dep, c);
  for (const auto& s : tel) {
    double we = 0, wd = 0;
    int nwe = 0, nwd = 0;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      if (IsWeekend(s.start + static_cast<Hour>(i))) {
        we += s.values[i];
        ++nwe;
      } else {
        wd += s.values[i];
        ++nwd;
      }
    }
    const double ratio = (we / nwe) / (wd / nwd);
    EXPECT_NEAR(ratio, 0.7, 0.01) << s.cell_id;
  }
}

TEST(Traffic, MissingFractionConcentrates) {
  auto c = Small();
  c.days = 90;
  c.missing_frac = 0.1;
  const auto tel = GenerateTraffic(GenerateDeployment(c), c);
  const double n = static_cast<double>(tel[0].values.size());
  const double sd = std::sqrt(0.1 * 0.9 / n);
  std::size_t missing = 0, total = 0;
  for (const auto& s : tel) {
    const auto m = std::count(s.mask.begin(), s.mask.end(), false);
    missing += static_cast<std::size_t>(m);
    total += s.mask.size();
    EXPECT_NEAR(static_cast<double>(m) / n, 0.1, 4.5 * sd) << s.cell_id;
  }
  EXPECT_NEAR(static_cast<double>(missing) / static_cast<double>(total), 0.1, 0.01);
}

TEST(Traffic, RangeAndDeterminism) {
  auto c = Small();
  c.noise_std = 10;
  c.base_load = 70;
  const auto dep = GenerateDeployment(c);
  const auto a = GenerateTraffic(dep, c);
  const auto b = GenerateTraffic(dep, c);
  bool hit_top = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].values, b[i].values);
    EXPECT_EQ(a[i].mask, b[i].mask);
    for (double v : a[i].values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 100.0);
      hit_top |= v == 100.0;
    }
  }
  EXPECT_TRUE(hit_top);
}

TEST(Traffic, NearbyCellsCorrelateMore) {
  ScenarioConfig c;
  c.noise_std = 0.2;
  c.days = 14;
  const auto dep = GenerateDeployment(c);
  const auto tel = GenerateTraffic(dep, c);
  const int T = 47;
  double near = 0, far = 0;
  int n_near = 0, n_far = 0;
  for (std::size_t i = 0; i < dep.size(); i += 5) {
    for (std::size_t j = i + 1; j < dep.size(); j += 3) {
      const double d = std::hypot(dep[i].position.x_m - dep[j].position.x_m,
                                  dep[i].position.y_m - dep[j].position.y_m);
      if (d >= 500 && d <= 3000) continue;
      // mean correlation over daily context windows
      double r = 0;
      int w = 0;
      for (std::size_t t = 0; t + T + 1 <= tel[i].values.size(); t += 24, ++w) {
        r += Pearson(std::span(tel[i].values).subspan(t, T + 1),
                     std::span(tel[j].values).subspan(t, T + 1));
      }
      (d < 500 ? near : far) += r / w;
      ++(d < 500 ? n_near : n_far);
    }
  }
  ASSERT_GT(n_near, 10);
  ASSERT_GT(n_far, 10);
  EXPECT_GT(near / n_near, far / n_far);
}

// ---------------------------------------------------------------- inject

struct Fixture {
  ScenarioConfig cfg;
  std::vector<CellMeta> dep;
  std::vector<KpiSeries> clean;
  Fixture() {
    cfg = Small();
    dep = GenerateDeployment(cfg);
    clean = GenerateTraffic(dep, cfg);
  }
  Hour at(int h) const { return cfg.start + h; }
};

TEST(Inject, Class1OnlyTouchesTarget) {
  Fixture f;
  InjectionSpec s;
  s.kind = InjectionKind::kClass1Deviation;
  s.targets = {f.dep[3].cell_id};
  s.start = f.at(100);
  s.end = f.at(107);
  s.magnitude = 30;
  s.additive = true;
  const auto r = Inject(f.clean, s);
  ASSERT_EQ(r.labels.size(), 8u);
  for (const auto& l : r.labels) {
    EXPECT_TRUE(l.is_anomalous);
    EXPECT_EQ(l.cell_id, f.dep[3].cell_id);
  }
  for (std::size_t i = 0; i < f.clean.size(); ++i) {
    for (std::size_t t = 0; t < f.clean[i].values.size(); ++t) {
      const bool inside = i == 3 && t >= 100 && t <= 107;
      if (inside) {
        EXPECT_NEAR(r.series[i].values[t],
                    std::min(100.0, f.clean[i].values[t] + 30), 1e-12);
      } else {
        EXPECT_EQ(r.series[i].values[t], f.clean[i].values[t]);
      }
    }
  }
}

TEST(Inject, Class2OffState) {
  Fixture f;
  InjectionSpec s;
  s.kind = InjectionKind::kClass2Shift;
  s.targets = {f.dep[0].cell_id};
  s.start = f.at(120);
  s.end = f.at(143);
  s.class2_mode = Class2Mode::kOff;
  const auto r = Inject(f.clean, s);
  double pre = 0;
  for (int t = 0; t < 120; ++t) pre += f.clean[0].values[t];
  EXPECT_GT(pre / 120, 5.0);
  for (int t = 120; t < 144; ++t) EXPECT_LT(r.series[0].values[t], 1.0);
  EXPECT_EQ(r.labels.size(), 24u);
}

TEST(Inject, MobilityScalesAreaWithoutAnomalyLabels) {
  ScenarioConfig c = Small();
  c.n_sites = 34;
  const auto dep = GenerateDeployment(c);
  const auto clean = GenerateTraffic(dep, c);
  InjectionSpec s;
  s.kind = InjectionKind::kMobilityEvent;
  for (const auto& d : dep) s.targets.push_back(d.cell_id);
  ASSERT_EQ(s.targets.size(), 204u);
  s.start = c.start + 60;
  s.end = s.start + 8;
  s.magnitude = 2.5;
  const auto r = Inject(clean, s);
  for (const auto& l : r.labels) EXPECT_FALSE(l.is_anomalous);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    for (int o = 0; o < 9; ++o) {
      const double orig = clean[i].values[60 + o];
      const double want = std::min(100.0, orig * MobilityProfile(2.5, o, 9));
      EXPECT_NEAR(r.series[i].values[60 + o], want, 1e-12);
    }
    EXPECT_EQ(r.series[i].values[59], clean[i].values[59]);
    EXPECT_EQ(r.series[i].values[69], clean[i].values[69]);
  }
}

TEST(Inject, MobilityProfileShape) {
  // raised cosine: symmetric, peaks mid-window, above one everywhere inside
  for (int o = 0; o < 9; ++o) {
    EXPECT_GT(MobilityProfile(2.5, o, 9), 1.0);
    EXPECT_NEAR(MobilityProfile(2.5, o, 9), MobilityProfile(2.5, 8 - o, 9), 1e-12);
  }
  EXPECT_NEAR(MobilityProfile(2.5, 4, 9), 2.5, 1e-12);
}

TEST(Inject, Errors) {
  Fixture f;
  InjectionSpec s;
  s.targets = {"nope"};
  s.start = f.at(1);
  s.end = f.at(2);
  EXPECT_THROW(Inject(f.clean, s), Error);
  s.targets = {f.dep[0].cell_id};
  s.end = f.at(100000);
  EXPECT_THROW(Inject(f.clean, s), Error);
  s.targets = {f.dep[0].cell_id, f.dep[1].cell_id};
  s.end = f.at(3);
  EXPECT_THROW(Inject(f.clean, s), Error);
}

TEST(Scenario, LabelSoundnessAndDeterminism) {
  ScenarioConfig c;
  c.days = 30;
  InjectionPlan p;
  const auto a = GenerateScenario(c, p);
  const auto b = GenerateScenario(c, p);
  ASSERT_EQ(a.labels.size(), b.labels.size());
  for (std::size_t i = 0; i < a.telemetry.size(); ++i) {
    EXPECT_EQ(a.telemetry[i].values, b.telemetry[i].values);
  }
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < a.clean.size(); ++i) idx[a.clean[i].cell_id] = i;

  std::size_t anomalous = 0, mobility = 0;
  for (const auto& l : a.labels) {
    const std::size_t i = idx.at(l.cell_id);
    const auto t = static_cast<std::size_t>(l.hour - a.clean[i].start);
    if (l.kind == InjectionKind::kMobilityEvent) {
      EXPECT_FALSE(l.is_anomalous);
      ++mobility;
    } else {
      EXPECT_TRUE(l.is_anomalous);
      EXPECT_NE(a.telemetry[i].values[t], a.clean[i].values[t]) << l.cell_id;
      ++anomalous;
    }
    // injected cells sit in the test region
    EXPECT_EQ(a.split.assignment.at(l.cell_id), Split::kTest);
  }
  EXPECT_EQ(anomalous, static_cast<std::size_t>(p.class1_count * p.class1_duration_h +
                                                p.class2_count * p.class2_duration_h));
  EXPECT_EQ(mobility, static_cast<std::size_t>(p.mobility_cells * p.mobility_duration_h));
}

TEST(Scenario, Class1TargetsDistinctSectors) {
  const auto sc = GenerateScenario(ScenarioConfig{}, InjectionPlan{});
  std::map<std::string, std::string> sector;
  for (const auto& d : sc.deployment) sector[d.cell_id] = d.sector_id;
  std::set<std::string> seen;
  for (const auto& s : sc.injections) {
    if (s.kind == InjectionKind::kMobilityEvent) continue;
    EXPECT_TRUE(seen.insert(sector.at(s.targets[0])).second);
  }
}

TEST(ScenarioConfig, KeysAndValidation) {
  auto kv = KvConfig::Parse("n_sites = 3\nnoise_std = 0.5\ninject.class1.count = 2\n", "t");
  ScenarioConfig c;
  InjectionPlan p;
  LoadScenarioConfig(kv, &c, &p);
  EXPECT_EQ(c.n_sites, 3);
  EXPECT_EQ(c.noise_std, 0.5);
  EXPECT_EQ(p.class1_count, 2);
  EXPECT_NO_THROW(kv.RejectUnknown());

  auto bad = KvConfig::Parse("missing_frac = 1.0\n", "t");
  EXPECT_THROW(LoadScenarioConfig(bad, &c, &p), Error);
  ScenarioConfig zero;
  zero.n_sites = 0;
  EXPECT_THROW(zero.Validate(), Error);
}

}  // namespace
}  // namespace ranctx
