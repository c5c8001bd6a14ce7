#include "ranctx/predictor.h"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "ranctx/error.h"

namespace ranctx {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::ArrayXd Softplus(const Eigen::ArrayXd& x) {
  // log(1 + e^x) without overflow for large x.
  return x.max(0.0) + (-x.abs()).exp().log1p();
}

void InitDense(Dense* d, int in, int out, std::mt19937_64& rng, double gain = 1.0) {
  const double bound = gain / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  d->w.resize(out, in);
  d->b.resize(out);
  for (Eigen::Index i = 0; i < d->w.size(); ++i) d->w.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < d->b.size(); ++i) d->b.data()[i] = u(rng);
}

void InitMlp(Mlp* m, int in, int hidden, int out, std::mt19937_64& rng,
             double out_gain = 1.0) {
  InitDense(&m->hidden, in, hidden, rng);
  InitDense(&m->out, hidden, out, rng, out_gain);
}

template <typename P, typename Span>
void CollectMlp(P& mlp, std::vector<Span>* out) {
  if (mlp.empty()) return;
  for (auto* d : {&mlp.hidden, &mlp.out}) {
    out->emplace_back(d->w.data(), static_cast<std::size_t>(d->w.size()));
    out->emplace_back(d->b.data(), static_cast<std::size_t>(d->b.size()));
  }
}

void CheckInput(const ModelDims& dims, const ModelInput& in) {
  const int k = in.k();
  if (k == 0) throw DataError("empty neighborhood");
  if (in.target_context.size() != dims.context_len ||
      in.neighbor_context.rows() != dims.context_len ||
      in.target_attrs.size() != dims.attr_width ||
      in.neighbor_attrs.rows() != dims.attr_width ||
      in.neighbor_attrs.cols() != k || in.neighbor_pred.rows() != dims.horizon ||
      in.neighbor_pred.cols() != k) {
    throw ValidationError("model input does not match model dimensions");
  }
}

}  // namespace

const char* VariantName(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoAutoScaler: return "no_autoscaler";
    case Variant::kNoLinearCombination: return "no_linear_combination";
  }
  return "?";
}

Variant ParseVariant(const std::string& name) {
  if (name == "full") return Variant::kFull;
  if (name == "no_autoscaler") return Variant::kNoAutoScaler;
  if (name == "no_linear_combination") return Variant::kNoLinearCombination;
  throw ValidationError("unknown variant '" + name + "'");
}

const char* ScoreModeName(ScoreMode m) {
  return m == ScoreMode::kQueryKey ? "query_key" : "key_key";
}

ScoreMode ParseScoreMode(const std::string& name) {
  if (name == "query_key") return ScoreMode::kQueryKey;
  if (name == "key_key") return ScoreMode::kKeyKey;
  throw ValidationError("unknown score mode '" + name + "'");
}

ModelDims ModelDims::For(const WindowSpec& w) {
  ModelDims d;
  d.context_len = w.T + 1;
  d.horizon = w.L;
  d.k = w.k;
  return d;
}

std::vector<std::span<double>> PredictorParams::Tensors() {
  std::vector<std::span<double>> out;
  for (Mlp* m : {&scale_nn, &query_embed, &key_embed, &pred_embed, &readout_nn}) {
    CollectMlp(*m, &out);
  }
  return out;
}

std::vector<std::span<const double>> PredictorParams::Tensors() const {
  std::vector<std::span<const double>> out;
  for (const Mlp* m :
       {&scale_nn, &query_embed, &key_embed, &pred_embed, &readout_nn}) {
    CollectMlp(*m, &out);
  }
  return out;
}

std::vector<std::string> PredictorParams::TensorNames() const {
  std::vector<std::string> names;
  const std::pair<const char*, const Mlp*> mlps[] = {
      {"scale_nn", &scale_nn},       {"query_embed", &query_embed},
      {"key_embed", &key_embed},     {"pred_embed", &pred_embed},
      {"readout_nn", &readout_nn}};
  for (const auto& [name, m] : mlps) {
    if (m->empty()) continue;
    for (const char* layer : {"hidden", "out"}) {
      names.push_back(std::string(name) + "." + layer + ".w");
      names.push_back(std::string(name) + "." + layer + ".b");
    }
  }
  return names;
}

std::size_t PredictorParams::ParameterCount() const {
  std::size_t n = 0;
  for (const auto& t : Tensors()) n += t.size();
  return n;
}

PredictorParams PredictorParams::ZerosLike() const {
  PredictorParams z = *this;
  for (auto t : z.Tensors()) std::fill(t.begin(), t.end(), 0.0);
  return z;
}

PredictorParams InitParams(const ModelDims& dims, Variant variant,
                           std::uint64_t seed, ScoreMode score_mode) {
  PredictorParams p;
  p.dims = dims;
  p.variant = variant;
  p.score_mode = score_mode;
  p.init_seed = seed;
  std::mt19937_64 rng(seed);
  const int w = dims.cell_width();
  if (variant != Variant::kNoAutoScaler) {
    InitMlp(&p.scale_nn, 2 * w, dims.scale_hidden, 2, rng, 0.1);
    p.scale_nn.out.b << 1.0, 0.0;
  }
  InitMlp(&p.query_embed, w, dims.embed_hidden, dims.d_k, rng);
  InitMlp(&p.key_embed, w, dims.embed_hidden, dims.d_k, rng);
  if (variant == Variant::kNoLinearCombination) {
    InitMlp(&p.pred_embed, dims.horizon, dims.pred_embed_hidden,
            dims.pred_embed_width, rng);
    InitMlp(&p.readout_nn, dims.d_k + dims.pred_embed_width,
            dims.readout_hidden, 2 * dims.horizon, rng);
  }
  return p;
}

ModelInput ToModelInput(const GraphSample& g) {
  ModelInput in;
  const int k = g.k();
  const int t1 = g.context_len();
  in.target_context.resize(t1);
  for (int i = 0; i < t1; ++i) in.target_context[i] = LogNormalize(g.context_target[i]);
  in.target_attrs = Eigen::Map<const VectorXd>(g.target.attrs.data(), kAttrWidth);
  in.neighbor_context.resize(t1, k);
  in.neighbor_attrs.resize(kAttrWidth, k);
  in.neighbor_pred.resize(g.L, k);
  for (int j = 0; j < k; ++j) {
    const auto ctx = g.context_neighbor(j);
    for (int i = 0; i < t1; ++i) in.neighbor_context(i, j) = LogNormalize(ctx[i]);
    const auto pred = g.pred_neighbor(j);
    for (int i = 0; i < g.L; ++i) in.neighbor_pred(i, j) = LogNormalize(pred[i]);
    in.neighbor_attrs.col(j) =
        Eigen::Map<const VectorXd>(g.neighbors[j].attrs.data(), kAttrWidth);
  }
  in.target_pred.resize(static_cast<Eigen::Index>(g.pred_target.size()));
  for (std::size_t i = 0; i < g.pred_target.size(); ++i) {
    in.target_pred[static_cast<Eigen::Index>(i)] = LogNormalize(g.pred_target[i]);
  }
  return in;
}

VectorXd CellVector(const CellMeta& meta, std::span<const double> context,
                    int expected_context_len) {
  if (static_cast<int>(context.size()) != expected_context_len) {
    throw ValidationError("cell_vector: context has length " +
                          std::to_string(context.size()) + ", expected " +
                          std::to_string(expected_context_len));
  }
  VectorXd c(expected_context_len + kAttrWidth);
  for (int i = 0; i < expected_context_len; ++i) c[i] = context[i];
  for (int i = 0; i < kAttrWidth; ++i) c[expected_context_len + i] = meta.attrs[i];
  return c;
}

AutoScaleResult AutoScale(const PredictorParams& params, const VectorXd& target_vec,
                          const VectorXd& neighbor_vec) {
  const int w = params.dims.cell_width();
  const int t1 = params.dims.context_len;
  if (target_vec.size() != w || neighbor_vec.size() != w) {
    throw ValidationError("auto_scale: cell vectors must have width " +
                          std::to_string(w));
  }
  AutoScaleResult r;
  r.scaled = neighbor_vec;
  if (params.variant == Variant::kNoAutoScaler) return r;
  VectorXd in(2 * w);
  in << neighbor_vec, target_vec;
  const Mlp& m = params.scale_nn;
  const VectorXd h = (m.hidden.w * in + m.hidden.b).cwiseMax(0.0);
  const VectorXd out = m.out.w * h + m.out.b;
  r.sc = out[0];
  r.sh = out[1];
  r.scaled.head(t1) = (neighbor_vec.head(t1).array() * r.sc + r.sh).matrix();
  return r;
}

VectorXd Softmax(const VectorXd& scores) {
  if (scores.size() == 0) throw DataError("empty neighborhood");
  const double m = scores.maxCoeff();
  VectorXd e = (scores.array() - m).exp().matrix();
  return e / e.sum();
}

namespace {

VectorXd Scores(const PredictorParams& p, const VectorXd& query,
                const MatrixXd& keys) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(p.dims.d_k));
  if (p.score_mode == ScoreMode::kKeyKey) {
    return keys.colwise().squaredNorm().transpose() * inv;
  }
  return keys.transpose() * query * inv;
}

VectorXd EmbedOne(const Mlp& m, const VectorXd& x, VectorXd* hidden = nullptr) {
  VectorXd h = (m.hidden.w * x + m.hidden.b).cwiseMax(0.0);
  VectorXd y = m.out.w * h + m.out.b;
  if (hidden) *hidden = std::move(h);
  return y;
}

MatrixXd EmbedCols(const Mlp& m, const MatrixXd& x, MatrixXd* hidden = nullptr) {
  MatrixXd h = m.hidden.w * x;
  h.colwise() += m.hidden.b;
  h = h.cwiseMax(0.0);
  MatrixXd y = m.out.w * h;
  y.colwise() += m.out.b;
  if (hidden) *hidden = std::move(h);
  return y;
}

}  // namespace

VectorXd Attention(const PredictorParams& params, const VectorXd& target_vec,
                   const MatrixXd& scaled_neighbors) {
  if (scaled_neighbors.cols() == 0) throw DataError("empty neighborhood");
  const VectorXd q = EmbedOne(params.query_embed, target_vec);
  const MatrixXd keys = EmbedCols(params.key_embed, scaled_neighbors);
  return Softmax(Scores(params, q, keys));
}

WeightedStats WeightedMeanStd(const VectorXd& alpha, const MatrixXd& xs) {
  const double v1 = alpha.sum();
  const double v2 = alpha.squaredNorm();
  const double denom = v1 - v2 / v1;
  if (!(denom > 0.0)) throw DegenerateContextError();
  WeightedStats s;
  s.mean = xs * alpha;
  const MatrixXd diff = xs.colwise() - s.mean;
  const VectorXd var = diff.array().square().matrix() * alpha / denom;
  s.stddev = var.cwiseMax(0.0).cwiseSqrt();
  return s;
}

WeightedStats Readout(const VectorXd& alpha, const VectorXd& sc, const VectorXd& sh,
                      const MatrixXd& neighbor_pred) {
  const auto k = alpha.size();
  if (k == 0) throw DataError("empty neighborhood");
  if (sc.size() != k || sh.size() != k || neighbor_pred.cols() != k) {
    throw ValidationError("readout: coefficient and series counts differ");
  }
  MatrixXd xs = neighbor_pred;
  for (Eigen::Index j = 0; j < k; ++j) {
    xs.col(j) = (neighbor_pred.col(j).array() * sc[j] + sh[j]).matrix();
  }
  return WeightedMeanStd(alpha, xs);
}

ForwardTrace Forward(const PredictorParams& p, const ModelInput& in) {
  CheckInput(p.dims, in);
  const int k = in.k();
  const int t1 = p.dims.context_len;
  const int w = p.dims.cell_width();
  const int horizon = p.dims.horizon;
  ForwardTrace tr;

  tr.target_cell.resize(w);
  tr.target_cell << in.target_context, in.target_attrs;
  tr.cells.resize(w, k);
  tr.cells.topRows(t1) = in.neighbor_context;
  tr.cells.bottomRows(p.dims.attr_width) = in.neighbor_attrs;

  // Auto-Scaler
  if (p.variant == Variant::kNoAutoScaler) {
    tr.sc = VectorXd::Ones(k);
    tr.sh = VectorXd::Zero(k);
    tr.scaled_cells = tr.cells;
  } else {
    const Mlp& m = p.scale_nn;
    const VectorXd target_term = m.hidden.w.rightCols(w) * tr.target_cell + m.hidden.b;
    MatrixXd pre = m.hidden.w.leftCols(w) * tr.cells;
    pre.colwise() += target_term;
    tr.scale_hidden = pre.cwiseMax(0.0);
    MatrixXd out = m.out.w * tr.scale_hidden;
    out.colwise() += m.out.b;
    tr.sc = out.row(0).transpose();
    tr.sh = out.row(1).transpose();
    tr.scaled_cells = tr.cells;
    tr.scaled_cells.topRows(t1) =
        ((tr.cells.topRows(t1).array().rowwise() * tr.sc.transpose().array())
             .rowwise() +
         tr.sh.transpose().array())
            .matrix();
  }

  // Self-Attention
  tr.query = EmbedOne(p.query_embed, tr.target_cell, &tr.query_hidden);
  tr.keys = EmbedCols(p.key_embed, tr.scaled_cells, &tr.key_hidden);
  tr.scores = Scores(p, tr.query, tr.keys);
  tr.alpha = Softmax(tr.scores);

  // Readout
  tr.scaled_pred =
      ((in.neighbor_pred.array().rowwise() * tr.sc.transpose().array()).rowwise() +
       tr.sh.transpose().array())
          .matrix();

  if (p.variant == Variant::kNoLinearCombination) {
    tr.pred_embed = EmbedCols(p.pred_embed, tr.scaled_pred, &tr.pred_hidden);
    tr.readout_in.resize(p.dims.d_k + p.dims.pred_embed_width);
    tr.readout_in << tr.keys * tr.alpha, tr.pred_embed * tr.alpha;
    tr.readout_out = EmbedOne(p.readout_nn, tr.readout_in, &tr.readout_hidden);
    tr.x_hat = tr.readout_out.head(horizon);
    tr.sigma_hat = Softplus(tr.readout_out.tail(horizon).array()).matrix();
    return tr;
  }

  tr.v1 = tr.alpha.sum();
  tr.v2 = tr.alpha.squaredNorm();
  tr.denom = tr.v1 - tr.v2 / tr.v1;
  if (!(tr.denom > 0.0)) throw DegenerateContextError();
  tr.x_hat = tr.scaled_pred * tr.alpha;
  const MatrixXd diff = tr.scaled_pred.colwise() - tr.x_hat;
  tr.variance = diff.array().square().matrix() * tr.alpha / tr.denom;
  tr.sigma_hat = tr.variance.cwiseMax(0.0).cwiseSqrt();
  return tr;
}

PredictionOutput Predict(const PredictorParams& params, const ModelInput& input,
                         const PredictOptions& options) {
  ForwardTrace tr = Forward(params, input);
  PredictionOutput out;
  out.x_hat = std::move(tr.x_hat);
  out.sigma_hat = std::move(tr.sigma_hat);
  out.alpha = std::move(tr.alpha);
  out.sc = std::move(tr.sc);
  out.sh = std::move(tr.sh);
  out.scores = std::move(tr.scores);
  out.interpretable = params.variant != Variant::kNoLinearCombination;
  if (options.keep_scaled_context) {
    out.scaled_context = tr.scaled_cells.topRows(params.dims.context_len);
  }
  return out;
}

PredictionOutput Predict(const PredictorParams& params, const GraphSample& sample,
                         const PredictOptions& options) {
  return Predict(params, ToModelInput(sample), options);
}

// ---------------------------------------------------------------------------
// Model file

namespace {

using nlohmann::json;

constexpr const char* kFormat = "ranctx-model";
constexpr int kVersion = 1;

json DenseToJson(const Dense& d) {
  json w = json::array();
  for (Eigen::Index r = 0; r < d.w.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < d.w.cols(); ++c) row.push_back(d.w(r, c));
    w.push_back(std::move(row));
  }
  json b = json::array();
  for (Eigen::Index i = 0; i < d.b.size(); ++i) b.push_back(d.b[i]);
  return json{{"w", std::move(w)}, {"b", std::move(b)}};
}

Dense DenseFromJson(const json& j, int rows, int cols, const std::string& name) {
  Dense d;
  const auto& w = j.at("w");
  const auto& b = j.at("b");
  if (static_cast<int>(w.size()) != rows || static_cast<int>(b.size()) != rows) {
    throw DataError("model file: tensor '" + name + "' has wrong row count");
  }
  d.w.resize(rows, cols);
  d.b.resize(rows);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(w[r].size()) != cols) {
      throw DataError("model file: tensor '" + name + "' has wrong column count");
    }
    for (int c = 0; c < cols; ++c) d.w(r, c) = w[r][c].get<double>();
    d.b[r] = b[r].get<double>();
  }
  return d;
}

json MlpToJson(const Mlp& m) {
  return json{{"hidden", DenseToJson(m.hidden)}, {"out", DenseToJson(m.out)}};
}

Mlp MlpFromJson(const json& j, int in, int hidden, int out, const std::string& name) {
  Mlp m;
  m.hidden = DenseFromJson(j.at("hidden"), hidden, in, name + ".hidden");
  m.out = DenseFromJson(j.at("out"), out, hidden, name + ".out");
  return m;
}

}  // namespace

std::string SerializeParams(const PredictorParams& p,
                            const std::map<std::string, std::string>& metadata) {
  const ModelDims& d = p.dims;
  json doc;
  doc["format"] = kFormat;
  doc["version"] = kVersion;
  doc["variant"] = VariantName(p.variant);
  doc["score_mode"] = ScoreModeName(p.score_mode);
  doc["init_seed"] = p.init_seed;
  doc["dims"] = {{"context_len", d.context_len},
                 {"horizon", d.horizon},
                 {"k", d.k},
                 {"attr_width", d.attr_width},
                 {"scale_hidden", d.scale_hidden},
                 {"embed_hidden", d.embed_hidden},
                 {"d_k", d.d_k},
                 {"pred_embed_hidden", d.pred_embed_hidden},
                 {"pred_embed_width", d.pred_embed_width},
                 {"readout_hidden", d.readout_hidden}};
  doc["activations"] = {
      {"hidden", "relu"},
      {"output", "linear"},
      {"sigma", p.variant == Variant::kNoLinearCombination ? "softplus"
                                                           : "weighted_std"}};
  doc["metadata"] = metadata;
  json tensors;
  if (!p.scale_nn.empty()) tensors["scale_nn"] = MlpToJson(p.scale_nn);
  tensors["query_embed"] = MlpToJson(p.query_embed);
  tensors["key_embed"] = MlpToJson(p.key_embed);
  if (!p.pred_embed.empty()) tensors["pred_embed"] = MlpToJson(p.pred_embed);
  if (!p.readout_nn.empty()) tensors["readout_nn"] = MlpToJson(p.readout_nn);
  doc["tensors"] = std::move(tensors);
  return doc.dump(1) + "\n";
}

PredictorParams DeserializeParams(const std::string& text,
                                  std::map<std::string, std::string>* metadata) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
  try {
    if (doc.at("format") != kFormat) throw DataError("model file: wrong format tag");
    if (doc.at("version").get<int>() != kVersion) {
      throw DataError("model file: unsupported version");
    }
    PredictorParams p;
    const auto& jd = doc.at("dims");
    ModelDims& d = p.dims;
    d.context_len = jd.at("context_len");
    d.horizon = jd.at("horizon");
    d.k = jd.at("k");
    d.attr_width = jd.at("attr_width");
    d.scale_hidden = jd.at("scale_hidden");
    d.embed_hidden = jd.at("embed_hidden");
    d.d_k = jd.at("d_k");
    d.pred_embed_hidden = jd.at("pred_embed_hidden");
    d.pred_embed_width = jd.at("pred_embed_width");
    d.readout_hidden = jd.at("readout_hidden");
    p.variant = ParseVariant(doc.at("variant"));
    p.score_mode = ParseScoreMode(doc.at("score_mode"));
    p.init_seed = doc.at("init_seed").get<std::uint64_t>();
    const auto& t = doc.at("tensors");
    const int w = d.cell_width();
    if (p.variant != Variant::kNoAutoScaler) {
      p.scale_nn = MlpFromJson(t.at("scale_nn"), 2 * w, d.scale_hidden, 2, "scale_nn");
    }
    p.query_embed = MlpFromJson(t.at("query_embed"), w, d.embed_hidden, d.d_k,
                                "query_embed");
    p.key_embed = MlpFromJson(t.at("key_embed"), w, d.embed_hidden, d.d_k,
                              "key_embed");
    if (p.variant == Variant::kNoLinearCombination) {
      p.pred_embed = MlpFromJson(t.at("pred_embed"), d.horizon, d.pred_embed_hidden,
                                 d.pred_embed_width, "pred_embed");
      p.readout_nn = MlpFromJson(t.at("readout_nn"), d.d_k + d.pred_embed_width,
                                 d.readout_hidden, 2 * d.horizon, "readout_nn");
    }
    if (metadata) {
      metadata->clear();
      if (doc.contains("metadata")) {
        *metadata = doc["metadata"].get<std::map<std::string, std::string>>();
      }
    }
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
}

void SaveParams(const std::string& path, const PredictorParams& params,
                const std::map<std::string, std::string>& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file '" + path + "'");
  out << SerializeParams(params, metadata);
  if (!out) throw DataError("failed writing model file '" + path + "'");
}

PredictorParams LoadParams(const std::string& path,
                           std::map<std::string, std::string>* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return DeserializeParams(ss.str(), metadata);
}

}  // namespace ranctx
