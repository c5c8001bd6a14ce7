#include "ranctx/trainer.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "ranctx/csv.h"
#include "ranctx/error.h"

namespace ranctx {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

/// Backprop through y = W2 relu(W1 x + b1) + b2 for a batch of columns.
/// Returns dX when `want_input_grad` is set.
MatrixXd MlpBackward(const Mlp& m, const MatrixXd& x, const MatrixXd& hidden,
                     const MatrixXd& dy, double weight, Mlp* g,
                     bool want_input_grad) {
  g->out.w.noalias() += weight * dy * hidden.transpose();
  g->out.b.noalias() += weight * dy.rowwise().sum();
  MatrixXd dh = m.out.w.transpose() * dy;
  dh = dh.cwiseProduct((hidden.array() > 0.0).cast<double>().matrix());
  g->hidden.w.noalias() += weight * dh * x.transpose();
  g->hidden.b.noalias() += weight * dh.rowwise().sum();
  if (!want_input_grad) return {};
  return m.hidden.w.transpose() * dh;
}

template <typename F>
void ParallelFor(std::size_t n, int threads, F&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void AddInto(PredictorParams* acc, const PredictorParams& g) {
  auto a = acc->Tensors();
  const auto b = g.Tensors();
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a[t].size(); ++i) a[t][i] += b[t][i];
  }
}

void Scale(PredictorParams* p, double s) {
  for (auto t : p->Tensors()) {
    for (auto& v : t) v *= s;
  }
}

std::vector<std::size_t> StridedSubset(std::size_t n, int cap) {
  std::vector<std::size_t> idx;
  if (cap <= 0 || n <= static_cast<std::size_t>(cap)) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  idx.reserve(cap);
  for (int i = 0; i < cap; ++i) {
    idx.push_back(static_cast<std::size_t>(i) * n / static_cast<std::size_t>(cap));
  }
  return idx;
}

}  // namespace

void TrainConfig::Validate() const {
  if (epochs < 0 || samples_per_epoch <= 0 || batch_size <= 0) {
    throw ValidationError("train: epochs >= 0, samples_per_epoch > 0, batch_size > 0");
  }
  if (!(learning_rate >= 0) || !(clip_norm > 0) || !(sigma_floor > 0)) {
    throw ValidationError("train: learning_rate >= 0, clip_norm > 0, sigma_floor > 0");
  }
  if (threads < 1) throw ValidationError("train: threads must be >= 1");
}

OptimizerState InitOptimizer(const PredictorParams& params) {
  return OptimizerState{params.ZerosLike(), params.ZerosLike(), 0};
}

double NllLoss(const VectorXd& x_hat, const VectorXd& sigma_hat,
               const VectorXd& x_true, double sigma_floor) {
  if (x_hat.size() != x_true.size() || sigma_hat.size() != x_true.size() ||
      x_true.size() == 0) {
    throw ValidationError("nll_loss: length mismatch");
  }
  if (!x_hat.allFinite() || !sigma_hat.allFinite() || !x_true.allFinite()) {
    throw ValidationError("nll_loss: non-finite input");
  }
  double sum = 0.0;
  for (Eigen::Index l = 0; l < x_true.size(); ++l) {
    const double s = std::max(sigma_hat[l], sigma_floor);
    const double r = x_true[l] - x_hat[l];
    sum += 0.5 * (kLog2Pi + 2.0 * std::log(s)) + r * r / (2.0 * s * s);
  }
  return sum / static_cast<double>(x_true.size());
}

double AccumulateGradient(const PredictorParams& p, const ModelInput& in,
                          double sigma_floor, double weight,
                          PredictorParams* g) {
  const ForwardTrace tr = Forward(p, in);
  if (in.target_pred.size() != p.dims.horizon) {
    throw ValidationError("gradient requires the target prediction window");
  }
  const double loss = NllLoss(tr.x_hat, tr.sigma_hat, in.target_pred, sigma_floor);

  const int horizon = p.dims.horizon;
  const int t1 = p.dims.context_len;
  const Eigen::Index k = in.k();
  const double inv_l = 1.0 / horizon;

  // dLoss / d(x_hat), d(sigma_hat)
  VectorXd dx(horizon), dsigma(horizon);
  for (int l = 0; l < horizon; ++l) {
    const bool clamped = !(tr.sigma_hat[l] > sigma_floor);
    const double s = clamped ? sigma_floor : tr.sigma_hat[l];
    const double r = in.target_pred[l] - tr.x_hat[l];
    dx[l] = -r / (s * s) * inv_l;
    dsigma[l] = clamped ? 0.0 : (1.0 / s - r * r / (s * s * s)) * inv_l;
  }

  MatrixXd dscaled_pred = MatrixXd::Zero(horizon, k);
  VectorXd dalpha = VectorXd::Zero(k);
  MatrixXd dkeys = MatrixXd::Zero(p.dims.d_k, k);

  if (p.variant == Variant::kNoLinearCombination) {
    const double* out = tr.readout_out.data();
    VectorXd dout(2 * horizon);
    dout.head(horizon) = dx;
    for (int l = 0; l < horizon; ++l) {
      const double z = out[horizon + l];
      dout[horizon + l] = dsigma[l] / (1.0 + std::exp(-z));
    }
    const MatrixXd dz = MlpBackward(p.readout_nn, tr.readout_in, tr.readout_hidden,
                                    dout, weight, &g->readout_nn, true);
    const VectorXd dz_keys = dz.col(0).head(p.dims.d_k);
    const VectorXd dz_pred = dz.col(0).tail(p.dims.pred_embed_width);
    dkeys.noalias() += dz_keys * tr.alpha.transpose();
    dalpha.noalias() += tr.keys.transpose() * dz_keys;
    dalpha.noalias() += tr.pred_embed.transpose() * dz_pred;
    const MatrixXd dembed = dz_pred * tr.alpha.transpose();
    dscaled_pred += MlpBackward(p.pred_embed, tr.scaled_pred, tr.pred_hidden, dembed,
                                weight, &g->pred_embed, true);
  } else {
    // sigma = sqrt(var), var_l = sum_j a_j D_lj^2 / denom, D = XS - xhat
    VectorXd dvar(horizon);
    for (int l = 0; l < horizon; ++l) {
      dvar[l] = (dsigma[l] != 0.0 && tr.variance[l] > 0.0)
                    ? dsigma[l] / (2.0 * tr.sigma_hat[l])
                    : 0.0;
    }
    const MatrixXd diff = tr.scaled_pred.colwise() - tr.x_hat;
    const double denom = tr.denom;
    // Through D (including its dependence on x_hat).
    MatrixXd ddiff = (2.0 / denom) * (dvar * tr.alpha.transpose()).cwiseProduct(diff);
    dscaled_pred += ddiff;
    VectorXd dxhat = dx - ddiff.rowwise().sum();
    // Direct dependence of var on alpha (numerator and denominator).
    const VectorXd sq_term = diff.array().square().matrix().transpose() * dvar / denom;
    const double var_term = dvar.dot(tr.variance) / denom;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double ddenom =
          1.0 - (2.0 * tr.alpha[j] * tr.v1 - tr.v2) / (tr.v1 * tr.v1);
      dalpha[j] += sq_term[j] - var_term * ddenom;
    }
    // x_hat = XS alpha
    dscaled_pred.noalias() += dxhat * tr.alpha.transpose();
    dalpha.noalias() += tr.scaled_pred.transpose() * dxhat;
  }

  // Softmax
  const VectorXd dscores =
      tr.alpha.cwiseProduct((dalpha.array() - tr.alpha.dot(dalpha)).matrix());

  // Scores
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(p.dims.d_k));
  VectorXd dquery = VectorXd::Zero(p.dims.d_k);
  if (p.score_mode == ScoreMode::kKeyKey) {
    dkeys.noalias() += (2.0 * inv_sqrt_dk) * tr.keys * dscores.asDiagonal();
  } else {
    dkeys.noalias() += inv_sqrt_dk * tr.query * dscores.transpose();
    dquery.noalias() += inv_sqrt_dk * tr.keys * dscores;
  }

  const bool has_scaler = p.variant != Variant::kNoAutoScaler;
  const MatrixXd dscaled_cells = MlpBackward(p.key_embed, tr.scaled_cells,
                                             tr.key_hidden, dkeys, weight,
                                             &g->key_embed, has_scaler);
  if (p.score_mode == ScoreMode::kQueryKey) {
    MlpBackward(p.query_embed, tr.target_cell, tr.query_hidden, dquery, weight,
                &g->query_embed, false);
  }

  if (has_scaler) {
    // xs = x * sc + sh on both the context and the prediction window.
    const auto dctx = dscaled_cells.topRows(t1);
    MatrixXd dout(2, k);
    dout.row(0) = (dctx.cwiseProduct(in.neighbor_context)).colwise().sum() +
                  (dscaled_pred.cwiseProduct(in.neighbor_pred)).colwise().sum();
    dout.row(1) = dctx.colwise().sum() + dscaled_pred.colwise().sum();

    const Mlp& m = p.scale_nn;
    Mlp& gm = g->scale_nn;
    gm.out.w.noalias() += weight * dout * tr.scale_hidden.transpose();
    gm.out.b.noalias() += weight * dout.rowwise().sum();
    MatrixXd dh = m.out.w.transpose() * dout;
    dh = dh.cwiseProduct((tr.scale_hidden.array() > 0.0).cast<double>().matrix());
    const int w = p.dims.cell_width();
    gm.hidden.w.leftCols(w).noalias() += weight * dh * tr.cells.transpose();
    const VectorXd dh_sum = dh.rowwise().sum();
    gm.hidden.w.rightCols(w).noalias() += weight * dh_sum * tr.target_cell.transpose();
    gm.hidden.b.noalias() += weight * dh_sum;
  }
  return loss;
}

GradientResult Gradients(const PredictorParams& params,
                         std::span<const ModelInput> batch, double sigma_floor,
                         int threads) {
  if (batch.empty()) throw ValidationError("gradients: empty batch");
  const PredictorParams zeros = params.ZerosLike();
  std::vector<PredictorParams> per_sample(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  std::vector<char> ok(batch.size(), 0);
  ParallelFor(batch.size(), threads, [&](std::size_t i) {
    PredictorParams g = zeros;
    try {
      losses[i] = AccumulateGradient(params, batch[i], sigma_floor, 1.0, &g);
      ok[i] = 1;
      per_sample[i] = std::move(g);
    } catch (const DegenerateContextError&) {
      ok[i] = 0;
    }
  });

  GradientResult res;
  res.grads = zeros;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!ok[i]) {
      ++res.skipped;
      continue;
    }
    ++res.used;
    res.mean_loss += losses[i];
    AddInto(&res.grads, per_sample[i]);
  }
  if (res.used > 0) {
    res.mean_loss /= static_cast<double>(res.used);
    Scale(&res.grads, 1.0 / static_cast<double>(res.used));
  }
  return res;
}

double GlobalNorm(const PredictorParams& grads) {
  double sq = 0.0;
  for (const auto& t : grads.Tensors()) {
    for (double v : t) sq += v * v;
  }
  return std::sqrt(sq);
}

double ClipGradients(PredictorParams* grads, double clip_norm) {
  if (!(clip_norm > 0)) throw ValidationError("clip_norm must be positive");
  const double norm = GlobalNorm(*grads);
  if (norm > clip_norm) Scale(grads, clip_norm / norm);
  return norm;
}

void AdamStep(PredictorParams* params, const PredictorParams& grads,
              OptimizerState* state, const TrainConfig& cfg) {
  ++state->step;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state->step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state->step));
  auto p = params->Tensors();
  const auto g = grads.Tensors();
  auto m = state->m.Tensors();
  auto v = state->v.Tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < p[t].size(); ++i) {
      m[t][i] = b1 * m[t][i] + (1.0 - b1) * g[t][i];
      v[t][i] = b2 * v[t][i] + (1.0 - b2) * g[t][i] * g[t][i];
      p[t][i] -= cfg.learning_rate * (m[t][i] / c1) /
                 (std::sqrt(v[t][i] / c2) + cfg.adam_eps);
    }
  }
}

double MeanTargetUtilization(const SampleSource& source) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    for (double v : source.Get(i).pred_target) {
      sum += v;
      ++n;
    }
  }
  if (n == 0) throw DataError("empty sample source");
  return sum / static_cast<double>(n);
}

EvalMetrics Evaluate(const PredictorParams& params, const SampleSource& source,
                     double reference_mean, double sigma_floor,
                     std::span<const std::size_t> subset, int threads) {
  std::vector<std::size_t> all;
  if (subset.empty()) {
    all = StridedSubset(source.size(), 0);
    subset = all;
  }
  if (subset.empty()) throw DataError("evaluate: empty sample source");
  if (!(reference_mean > 0)) throw ValidationError("evaluate: reference mean must be positive");

  struct Row {
    std::vector<double> truth, pred;
    double nll = 0.0;
    bool ok = false;
  };
  std::vector<Row> rows(subset.size());
  ParallelFor(subset.size(), threads, [&](std::size_t i) {
    const GraphSample g = source.Get(subset[i]);
    const ModelInput in = ToModelInput(g);
    try {
      const PredictionOutput out = Predict(params, in);
      Row& r = rows[i];
      r.truth = g.pred_target;
      r.pred.resize(out.x_hat.size());
      for (Eigen::Index l = 0; l < out.x_hat.size(); ++l) {
        r.pred[l] = Denormalize(out.x_hat[l]);
      }
      r.nll = NllLoss(out.x_hat, out.sigma_hat, in.target_pred, sigma_floor);
      r.ok = true;
    } catch (const DegenerateContextError&) {
    }
  });

  EvalMetrics m;
  m.reference_mean = reference_mean;
  double abs_sum = 0.0, truth_sum = 0.0, nll_sum = 0.0;
  std::size_t used = 0;
  for (const auto& r : rows) {
    if (!r.ok) {
      ++m.skipped;
      continue;
    }
    ++used;
    nll_sum += r.nll;
    for (std::size_t l = 0; l < r.truth.size(); ++l) {
      abs_sum += std::abs(r.truth[l] - r.pred[l]);
      truth_sum += r.truth[l];
      ++m.pairs;
    }
  }
  if (m.pairs == 0) return m;
  const double n = static_cast<double>(m.pairs);
  const double truth_mean = truth_sum / n;
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& r : rows) {
    if (!r.ok) continue;
    for (std::size_t l = 0; l < r.truth.size(); ++l) {
      ss_res += (r.truth[l] - r.pred[l]) * (r.truth[l] - r.pred[l]);
      ss_tot += (r.truth[l] - truth_mean) * (r.truth[l] - truth_mean);
    }
  }
  m.mae = abs_sum / n;
  m.norm_mae = m.mae / reference_mean;
  m.nll = nll_sum / static_cast<double>(used);
  if (ss_tot > 0.0) m.r2 = 1.0 - ss_res / ss_tot;
  return m;
}

PredictorParams MakeVariant(const PredictorParams& init, Variant variant) {
  PredictorParams fresh = InitParams(init.dims, variant, init.init_seed, init.score_mode);
  fresh.query_embed = init.query_embed;
  fresh.key_embed = init.key_embed;
  if (variant != Variant::kNoAutoScaler && !init.scale_nn.empty()) {
    fresh.scale_nn = init.scale_nn;
  }
  if (variant == Variant::kNoLinearCombination && init.variant == variant) {
    fresh.pred_embed = init.pred_embed;
    fresh.readout_nn = init.readout_nn;
  }
  return fresh;
}

TrainState InitTrainState(const PredictorParams& init, const TrainConfig& cfg) {
  TrainState s;
  s.params = init;
  s.optimizer = InitOptimizer(init);
  std::mt19937_64 rng(cfg.seed);
  std::ostringstream os;
  os << rng;
  s.rng_state = os.str();
  s.best_params = init;
  return s;
}

void Train(const TrainConfig& cfg, const SampleSource& train,
           const SampleSource& validation, TrainState* state,
           const EpochCallback& on_epoch) {
  cfg.Validate();
  if (train.size() == 0) throw DataError("untrainable dataset: no training samples");
  if (state->reference_mean <= 0.0) {
    state->reference_mean = MeanTargetUtilization(train);
  }
  std::mt19937_64 rng;
  {
    std::istringstream is(state->rng_state);
    is >> rng;
    if (!is) throw DataError("corrupt training state: rng");
  }
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  const auto train_eval = StridedSubset(train.size(), cfg.eval_samples);
  const auto val_eval = StridedSubset(validation.size(), cfg.eval_samples);

  for (int epoch = state->epochs_done; epoch < cfg.epochs; ++epoch) {
    std::size_t used_in_epoch = 0;
    for (int drawn = 0; drawn < cfg.samples_per_epoch; drawn += cfg.batch_size) {
      const int n = std::min(cfg.batch_size, cfg.samples_per_epoch - drawn);
      std::vector<std::size_t> idx(n);
      for (auto& i : idx) i = pick(rng);
      std::vector<ModelInput> batch(n);
      ParallelFor(idx.size(), cfg.threads, [&](std::size_t b) {
        batch[b] = ToModelInput(train.Get(idx[b]));
      });
      GradientResult gr = Gradients(state->params, batch, cfg.sigma_floor, cfg.threads);
      state->skipped_samples += gr.skipped;
      used_in_epoch += gr.used;
      if (gr.used == 0) continue;
      ClipGradients(&gr.grads, cfg.clip_norm);
      AdamStep(&state->params, gr.grads, &state->optimizer, cfg);
    }
    if (used_in_epoch == 0) throw DataError("untrainable dataset");

    const EvalMetrics tm = Evaluate(state->params, train, state->reference_mean,
                                    cfg.sigma_floor, train_eval, cfg.threads);
    state->log.push_back({epoch, Split::kTrain, tm});
    double selection = tm.norm_mae;
    if (validation.size() > 0) {
      const EvalMetrics vm = Evaluate(state->params, validation, state->reference_mean,
                                      cfg.sigma_floor, val_eval, cfg.threads);
      state->log.push_back({epoch, Split::kValidation, vm});
      selection = vm.norm_mae;
    }
    if (state->best_epoch < 0 || selection < state->best_metric) {
      state->best_metric = selection;
      state->best_epoch = epoch;
      state->best_params = state->params;
    }
    state->epochs_done = epoch + 1;
    std::ostringstream os;
    os << rng;
    state->rng_state = os.str();
    if (on_epoch) on_epoch(*state);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint sidecar

namespace {

using nlohmann::json;

json FlatTensors(const PredictorParams& p) {
  json arr = json::array();
  for (const auto& t : p.Tensors()) arr.push_back(std::vector<double>(t.begin(), t.end()));
  return arr;
}

void LoadFlat(const json& arr, PredictorParams* p) {
  auto ts = p->Tensors();
  if (arr.size() != ts.size()) throw DataError("training state: tensor count mismatch");
  for (std::size_t t = 0; t < ts.size(); ++t) {
    const auto v = arr[t].get<std::vector<double>>();
    if (v.size() != ts[t].size()) throw DataError("training state: tensor size mismatch");
    std::copy(v.begin(), v.end(), ts[t].begin());
  }
}

json MetricsToJson(const EvalMetrics& m) {
  json j{{"norm_mae", m.norm_mae}, {"mae", m.mae},   {"nll", m.nll},
         {"reference_mean", m.reference_mean},      {"pairs", m.pairs},
         {"skipped", m.skipped}};
  j["r2"] = m.r2 ? json(*m.r2) : json(nullptr);
  return j;
}

EvalMetrics MetricsFromJson(const json& j) {
  EvalMetrics m;
  m.norm_mae = j.at("norm_mae");
  m.mae = j.at("mae");
  m.nll = j.at("nll");
  m.reference_mean = j.at("reference_mean");
  m.pairs = j.at("pairs");
  m.skipped = j.at("skipped");
  if (!j.at("r2").is_null()) m.r2 = j.at("r2").get<double>();
  return m;
}

}  // namespace

std::string SerializeTrainState(const TrainState& s) {
  json doc;
  doc["format"] = "ranctx-train-state";
  doc["version"] = 1;
  doc["params"] = json::parse(SerializeParams(s.params));
  doc["best_params"] = FlatTensors(s.best_params);
  doc["adam_m"] = FlatTensors(s.optimizer.m);
  doc["adam_v"] = FlatTensors(s.optimizer.v);
  doc["adam_step"] = s.optimizer.step;
  doc["rng_state"] = s.rng_state;
  doc["epochs_done"] = s.epochs_done;
  doc["best_metric"] = s.best_metric;
  doc["best_epoch"] = s.best_epoch;
  doc["reference_mean"] = s.reference_mean;
  doc["skipped_samples"] = s.skipped_samples;
  json log = json::array();
  for (const auto& e : s.log) {
    log.push_back({{"epoch", e.epoch}, {"split", SplitName(e.split)},
                   {"metrics", MetricsToJson(e.metrics)}});
  }
  doc["log"] = std::move(log);
  return doc.dump() + "\n";
}

TrainState DeserializeTrainState(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (doc.at("format") != "ranctx-train-state") {
      throw DataError("training state: wrong format tag");
    }
    TrainState s;
    s.params = DeserializeParams(doc.at("params").dump());
    s.best_params = s.params;
    LoadFlat(doc.at("best_params"), &s.best_params);
    s.optimizer = InitOptimizer(s.params);
    LoadFlat(doc.at("adam_m"), &s.optimizer.m);
    LoadFlat(doc.at("adam_v"), &s.optimizer.v);
    s.optimizer.step = doc.at("adam_step");
    s.rng_state = doc.at("rng_state");
    s.epochs_done = doc.at("epochs_done");
    s.best_metric = doc.at("best_metric");
    s.best_epoch = doc.at("best_epoch");
    s.reference_mean = doc.at("reference_mean");
    s.skipped_samples = doc.at("skipped_samples");
    for (const auto& e : doc.at("log")) {
      s.log.push_back({e.at("epoch").get<int>(),
                       ParseSplit(e.at("split").get<std::string>()),
                       MetricsFromJson(e.at("metrics"))});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("training state: ") + e.what());
  }
}

void WriteTrainLogCsv(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,split,norm_mae,r2,nll\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << SplitName(e.split) << ','
        << csv::FormatDouble(e.metrics.norm_mae) << ','
        << (e.metrics.r2 ? csv::FormatDouble(*e.metrics.r2) : std::string()) << ','
        << csv::FormatDouble(e.metrics.nll) << '\n';
  }
}

}  // namespace ranctx
