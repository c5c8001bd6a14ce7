#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ranctx/error.h"
#include "ranctx/predictor.h"
#include "test_util.h"

namespace ranctx {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using testing::RandomInput;
using testing::SmallDims;
using testing::ScalarStats;


PredictorParams IdentityUniform(const ModelDims& d, Variant v = Variant::kFull) {
  PredictorParams p = InitParams(d, v, 1);
  if (!p.scale_nn.empty()) {
    p.scale_nn.out.w.setZero();
    p.scale_nn.out.b << 1.0, 0.0;
  }
  p.query_embed.out.w.setZero();
  p.query_embed.out.b.setZero();
  return p;
}

// ---------------------------------------------------------------- cell vector

TEST(CellVector, Widths) {
  CellMeta m;
  m.attrs = MakeAttrs(2, 3);
  std::vector<double> ctx(168, 0.5);
  auto c = CellVector(m, ctx, 168);
  EXPECT_EQ(c.size(), 183);
  EXPECT_EQ(c[0], 0.5);
  EXPECT_EQ(c[168 + 2], 1.0);
  EXPECT_EQ(c[168 + 8 + 3], 1.0);
  std::vector<double> desk(48, 0.0);
  CellMeta zero;
  EXPECT_EQ(CellVector(zero, desk, 48).size(), 63);
  EXPECT_TRUE(CellVector(zero, desk, 48).isZero());
  EXPECT_THROW(CellVector(m, desk, 47), Error);
  EXPECT_EQ(ModelDims::For({200, 167, 24}).cell_width(), 183);
}

// ---------------------------------------------------------------- auto scale

TEST(AutoScale, IdentityAndAffine) {
  const auto d = SmallDims();
  auto p = IdentityUniform(d);
  std::mt19937_64 rng(1);
  const auto in = RandomInput(d, rng);
  VectorXd tv(d.cell_width()), nv(d.cell_width());
  tv << in.target_context, in.target_attrs;
  nv << in.neighbor_context.col(0), in.neighbor_attrs.col(0);
  auto r = AutoScale(p, tv, nv);
  EXPECT_EQ(r.sc, 1.0);
  EXPECT_EQ(r.sh, 0.0);
  EXPECT_EQ(r.scaled, nv);

  p.scale_nn.out.b << 2.0, -1.0;
  VectorXd three = VectorXd::Zero(d.cell_width());
  three.head(3) << 0.0, 0.5, 1.0;
  r = AutoScale(p, tv, three);
  EXPECT_EQ(r.scaled[0], -1.0);
  EXPECT_EQ(r.scaled[1], 0.0);
  EXPECT_EQ(r.scaled[2], 1.0);
}

TEST(AutoScale, RandomParamsAreElementwiseAffine) {
  const auto d = SmallDims();
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    auto p = InitParams(d, Variant::kFull, rep);
    testing::Jitter(&p, rng, 0.3);
    const auto in = RandomInput(d, rng);
    VectorXd tv(d.cell_width()), nv(d.cell_width());
    tv << in.target_context, in.target_attrs;
    nv << in.neighbor_context.col(1), in.neighbor_attrs.col(1);
    const auto r = AutoScale(p, tv, nv);
    for (int i = 0; i < d.context_len; ++i) {
      EXPECT_EQ(r.scaled[i], nv[i] * r.sc + r.sh);
    }
    // attribute portion is untouched
    EXPECT_EQ(r.scaled.tail(kAttrWidth), nv.tail(kAttrWidth));
  }
}

// ---------------------------------------------------------------- attention

TEST(Softmax, Examples) {
  VectorXd one(1);
  one << 3.7;
  EXPECT_EQ(Softmax(one)[0], 1.0);
  VectorXd two(2);
  two << 0.0, std::log(3.0);
  const auto a = Softmax(two);
  EXPECT_NEAR(a[0], 0.25, 1e-15);
  EXPECT_NEAR(a[1], 0.75, 1e-15);
  VectorXd big(3);
  big << 1000.0, 1000.0, -1000.0;
  const auto b = Softmax(big);
  EXPECT_NEAR(b[0], 0.5, 1e-15);
  EXPECT_TRUE(std::isfinite(b[2]));
  EXPECT_THROW(Softmax(VectorXd(0)), Error);
}

TEST(Attention, IdenticalNeighborsAreUniform) {
  const auto d = SmallDims();
  std::mt19937_64 rng(3);
  auto p = InitParams(d, Variant::kFull, 4);
  testing::Jitter(&p, rng, 0.2);
  const auto in = RandomInput(d, rng);
  VectorXd tv(d.cell_width()), nv(d.cell_width());
  tv << in.target_context, in.target_attrs;
  nv << in.neighbor_context.col(0), in.neighbor_attrs.col(0);
  MatrixXd same(d.cell_width(), 4);
  for (int j = 0; j < 4; ++j) same.col(j) = nv;
  const auto a = Attention(p, tv, same);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(a[j], 0.25, 1e-15);
  EXPECT_THROW(Attention(p, tv, MatrixXd(d.cell_width(), 0)), Error);
}

TEST(Attention, KeyKeyModeIgnoresTarget) {
  const auto d = SmallDims();
  std::mt19937_64 rng(4);
  auto p = InitParams(d, Variant::kFull, 5, ScoreMode::kKeyKey);
  testing::Jitter(&p, rng, 0.2);
  // constant ScaleNN so the scaled neighbours do not depend on the target
  p.scale_nn.hidden.w.setZero();
  auto in = RandomInput(d, rng);
  const auto a = Predict(p, in);
  in.target_context.array() += 1.0;
  const auto b = Predict(p, in);
  EXPECT_EQ(a.alpha, b.alpha);
  p.score_mode = ScoreMode::kQueryKey;
  EXPECT_NE(Predict(p, in).alpha, b.alpha);
}

// ---------------------------------------------------------------- readout

TEST(Readout, Examples) {
  VectorXd a(2);
  a << 0.5, 0.5;
  MatrixXd xs(2, 2);
  xs << 0, 2, 0, 2;
  const auto s = WeightedMeanStd(a, xs);
  EXPECT_NEAR(s.mean[0], 1.0, 1e-15);
  EXPECT_NEAR(s.mean[1], 1.0, 1e-15);
  EXPECT_NEAR(s.stddev[0], std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(s.stddev[1], std::sqrt(2.0), 1e-15);

  MatrixXd same(3, 3);
  same.col(0) << 1, 2, 3;
  same.col(1) = same.col(0);
  same.col(2) = same.col(0);
  VectorXd a3(3);
  a3 << 0.2, 0.3, 0.5;
  const auto z = WeightedMeanStd(a3, same);
  EXPECT_NEAR((z.mean - same.col(0)).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  EXPECT_EQ(z.stddev, VectorXd::Zero(3));

  VectorXd single(1);
  single << 1.0;
  EXPECT_THROW(WeightedMeanStd(single, MatrixXd::Ones(2, 1)), DegenerateContextError);
  try {
    WeightedMeanStd(single, MatrixXd::Ones(2, 1));
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "degenerate context");
  }
}

TEST(Readout, UsesEachNeighborsOwnScale) {
  VectorXd a(2), sc(2), sh(2);
  a << 0.25, 0.75;
  sc << 2.0, -1.0;
  sh << 1.0, 3.0;
  MatrixXd pred(1, 2);
  pred << 1.0, 2.0;
  const auto s = Readout(a, sc, sh, pred);
  EXPECT_NEAR(s.mean[0], 0.25 * 3.0 + 0.75 * 1.0, 1e-15);
}

TEST(Readout, MatchesScalarLoops) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> kk(2, 8), ll(1, 4);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int rep = 0; rep < 1000; ++rep) {
    const int k = kk(rng), L = ll(rng);
    VectorXd s(k);
    for (auto& x : s) x = u(rng);
    const VectorXd a = Softmax(s);
    MatrixXd xs(L, k);
    for (auto& x : xs.reshaped()) x = u(rng);
    std::vector<double> av(a.data(), a.data() + k);
    std::vector<std::vector<double>> xv(k, std::vector<double>(L));
    for (int j = 0; j < k; ++j)
      for (int l = 0; l < L; ++l) xv[j][l] = xs(l, j);
    std::vector<double> m, sd;
    ScalarStats(av, xv, &m, &sd);
    const auto got = WeightedMeanStd(a, xs);
    for (int l = 0; l < L; ++l) {
      EXPECT_NEAR(got.mean[l], m[l], 1e-10);
      EXPECT_NEAR(got.stddev[l], sd[l], 1e-10);
    }
  }
}

// ---------------------------------------------------------------- predict

TEST(Predict, OutputInvariants) {
  const auto d = SmallDims(6, 10, 4);
  std::mt19937_64 rng(8);
  int degenerate = 0;
  for (int rep = 0; rep < 200; ++rep) {
    auto p = InitParams(d, Variant::kFull, rep);
    testing::Jitter(&p, rng, 0.3);
    const auto in = RandomInput(d, rng);
    PredictionOutput out;
    try {
      out = Predict(p, in, {true});
    } catch (const DegenerateContextError&) {
      ++degenerate;  // all attention on one neighbour
      continue;
    }
    EXPECT_NEAR(out.alpha.sum(), 1.0, 1e-9);
    EXPECT_GT(out.alpha.minCoeff(), 0.0);
    EXPECT_GE(out.sigma_hat.minCoeff(), 0.0);
    EXPECT_TRUE(out.interpretable);
    ASSERT_TRUE(out.scaled_context.has_value());
    for (int j = 0; j < d.k; ++j) {
      for (int t = 0; t < d.context_len; ++t) {
        EXPECT_EQ((*out.scaled_context)(t, j),
                  in.neighbor_context(t, j) * out.sc[j] + out.sh[j]);
      }
    }
    // convex combination of the scaled neighbour series
    for (int l = 0; l < d.horizon; ++l) {
      double lo = 1e300, hi = -1e300;
      for (int j = 0; j < d.k; ++j) {
        const double x = in.neighbor_pred(l, j) * out.sc[j] + out.sh[j];
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
      EXPECT_GE(out.x_hat[l], lo - 1e-12);
      EXPECT_LE(out.x_hat[l], hi + 1e-12);
    }
  }
  EXPECT_LT(degenerate, 20);
}

TEST(Predict, IdentityUniformIsNeighborMean) {
  const auto d = SmallDims(5, 6, 3);
  std::mt19937_64 rng(9);
  const auto p = IdentityUniform(d);
  const auto in = RandomInput(d, rng);
  const auto out = Predict(p, in);
  for (int l = 0; l < d.horizon; ++l) {
    double m = 0;
    for (int j = 0; j < d.k; ++j) m += in.neighbor_pred(l, j);
    EXPECT_NEAR(out.x_hat[l], m / d.k, 1e-14);
  }
}

TEST(Predict, PermutationEquivariance) {
  const auto d = SmallDims(6, 8, 3);
  std::mt19937_64 rng(10);
  auto p = InitParams(d, Variant::kFull, 3);
  testing::Jitter(&p, rng, 0.3);
  const auto in = RandomInput(d, rng);
  const auto base = Predict(p, in);
  std::vector<int> perm(d.k);
  std::iota(perm.begin(), perm.end(), 0);
  for (int rep = 0; rep < 50; ++rep) {
    std::shuffle(perm.begin(), perm.end(), rng);
    ModelInput q = in;
    for (int j = 0; j < d.k; ++j) {
      q.neighbor_context.col(j) = in.neighbor_context.col(perm[j]);
      q.neighbor_attrs.col(j) = in.neighbor_attrs.col(perm[j]);
      q.neighbor_pred.col(j) = in.neighbor_pred.col(perm[j]);
    }
    const auto out = Predict(p, q);
    EXPECT_LE((out.x_hat - base.x_hat).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((out.sigma_hat - base.sigma_hat).cwiseAbs().maxCoeff(), 1e-12);
    for (int j = 0; j < d.k; ++j) {
      EXPECT_NEAR(out.alpha[j], base.alpha[perm[j]], 1e-12);
      EXPECT_NEAR(out.sc[j], base.sc[perm[j]], 1e-12);
      EXPECT_NEAR(out.sh[j], base.sh[perm[j]], 1e-12);
    }
  }
}

TEST(Predict, PureAndKOneDegenerate) {
  const auto d = SmallDims();
  std::mt19937_64 rng(11);
  const auto p = InitParams(d, Variant::kFull, 1);
  const auto in = RandomInput(d, rng);
  const auto a = Predict(p, in), b = Predict(p, in);
  EXPECT_EQ(a.x_hat, b.x_hat);
  EXPECT_EQ(a.sigma_hat, b.sigma_hat);
  EXPECT_EQ(a.alpha, b.alpha);

  const auto d1 = SmallDims(1);
  const auto p1 = InitParams(d1, Variant::kFull, 1);
  EXPECT_THROW(Predict(p1, RandomInput(d1, rng)), DegenerateContextError);
}

TEST(Predict, WrongShapesRejected) {
  const auto d = SmallDims();
  std::mt19937_64 rng(12);
  const auto p = InitParams(d, Variant::kFull, 1);
  auto in = RandomInput(d, rng);
  in.neighbor_pred.conservativeResize(d.horizon + 1, Eigen::NoChange);
  EXPECT_THROW(Predict(p, in), Error);
}

TEST(Predict, FromGraphSample) {
  GraphSample g;
  g.T = 2;
  g.L = 1;
  g.target = testing::Cell("t", 0);
  g.context_target = {1, 2, 3};
  g.pred_target = {4};
  for (int j = 0; j < 2; ++j) {
    g.neighbors.push_back(testing::Cell("n" + std::to_string(j), j + 1));
  }
  g.context_neighbors = {1, 2, 3, 2, 3, 4};
  g.pred_neighbors = {5, 9};
  const auto in = ToModelInput(g);
  EXPECT_NEAR(in.target_context[2], std::log(4.0), 1e-15);
  EXPECT_NEAR(in.neighbor_pred(0, 1), std::log(10.0), 1e-15);
  EXPECT_NEAR(in.neighbor_context(0, 1), std::log(3.0), 1e-15);
  const auto p = IdentityUniform(SmallDims(2, 2, 1));
  const auto out = Predict(p, g);
  EXPECT_NEAR(out.x_hat[0], 0.5 * (std::log(6.0) + std::log(10.0)), 1e-14);
}

// ---------------------------------------------------------------- variants / io

TEST(Params, TensorLayout) {
  const auto d = SmallDims();
  auto full = InitParams(d, Variant::kFull, 1);
  auto noauto = InitParams(d, Variant::kNoAutoScaler, 1);
  auto nolin = InitParams(d, Variant::kNoLinearCombination, 1);
  EXPECT_EQ(full.Tensors().size(), 12u);
  EXPECT_EQ(noauto.Tensors().size(), 8u);
  EXPECT_EQ(nolin.Tensors().size(), 20u);
  EXPECT_EQ(full.TensorNames().size(), full.Tensors().size());
  std::size_t n = 0;
  for (auto t : full.Tensors()) n += t.size();
  EXPECT_EQ(n, full.ParameterCount());
  const auto z = full.ZerosLike();
  for (auto t : z.Tensors()) {
    for (double x : t) EXPECT_EQ(x, 0.0);
  }
}

TEST(Params, VariantOutputs) {
  const auto d = SmallDims();
  std::mt19937_64 rng(13);
  const auto in = RandomInput(d, rng);
  const auto noauto = Predict(InitParams(d, Variant::kNoAutoScaler, 1), in);
  EXPECT_EQ(noauto.sc, VectorXd::Ones(d.k));
  EXPECT_EQ(noauto.sh, VectorXd::Zero(d.k));
  EXPECT_TRUE(noauto.interpretable);
  const auto nolin = Predict(InitParams(d, Variant::kNoLinearCombination, 1), in);
  EXPECT_FALSE(nolin.interpretable);
  EXPECT_GT(nolin.sigma_hat.minCoeff(), 0.0);
  EXPECT_NEAR(nolin.alpha.sum(), 1.0, 1e-12);
}

TEST(Params, SerializationRoundTripsBitExact) {
  const auto d = SmallDims();
  std::mt19937_64 rng(14);
  for (Variant v : {Variant::kFull, Variant::kNoAutoScaler, Variant::kNoLinearCombination}) {
    auto p = InitParams(d, v, 42, ScoreMode::kKeyKey);
    testing::Jitter(&p, rng, 1e-3);
    std::map<std::string, std::string> meta{{"reference_mean", "12.5"}};
    const std::string text = SerializeParams(p, meta);
    std::map<std::string, std::string> back_meta;
    const auto q = DeserializeParams(text, &back_meta);
    EXPECT_EQ(back_meta.at("reference_mean"), "12.5");
    EXPECT_EQ(q.variant, v);
    EXPECT_EQ(q.score_mode, ScoreMode::kKeyKey);
    EXPECT_EQ(q.init_seed, 42u);
    const auto a = p.Tensors();
    const auto b = q.Tensors();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(a[i].size(), b[i].size());
      EXPECT_TRUE(std::equal(a[i].begin(), a[i].end(), b[i].begin()));
    }
    EXPECT_EQ(SerializeParams(q, meta), text);
  }
}

TEST(Params, CorruptModelFileRejected) {
  EXPECT_THROW(DeserializeParams("{}"), Error);
  EXPECT_THROW(DeserializeParams("not json"), Error);
  auto text = SerializeParams(InitParams(SmallDims(), Variant::kFull, 1));
  text.replace(text.find("\"k\""), 3, "\"q\"");
  EXPECT_THROW(DeserializeParams(text), Error);
}

}  // namespace
}  // namespace ranctx
