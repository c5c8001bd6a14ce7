#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ranctx/graph_data.h"

namespace ranctx {

/// Contextual predictor variants. kFull is the interpretable model; the two
/// others are the ablations (no ScaleNN / neural readout).
enum class Variant { kFull, kNoAutoScaler, kNoLinearCombination };

const char* VariantName(Variant v);
Variant ParseVariant(const std::string& name);

/// How attention logits are formed from the embeddings.
///   kQueryKey: s_j = <hq, hk_j> / sqrt(d_k)          (default)
///   kKeyKey:   s_j = <hk_j, hk_j> / sqrt(d_k)        (literal variant)
enum class ScoreMode { kQueryKey, kKeyKey };

const char* ScoreModeName(ScoreMode m);
ScoreMode ParseScoreMode(const std::string& name);

struct ModelDims {
  int context_len = 168;  // T + 1
  int horizon = 24;       // L
  int k = 200;
  int attr_width = kAttrWidth;
  int scale_hidden = 183;
  int embed_hidden = 32;
  int d_k = 6;
  // Only used by Variant::kNoLinearCombination.
  int pred_embed_hidden = 32;
  int pred_embed_width = 32;
  int readout_hidden = 32;

  int cell_width() const { return context_len + attr_width; }
  static ModelDims For(const WindowSpec& w);
};

/// Fully connected layer y = W x + b.
struct Dense {
  Eigen::MatrixXd w;
  Eigen::VectorXd b;

  bool empty() const { return w.size() == 0; }
};

/// Two-layer perceptron: ReLU hidden layer, linear output.
struct Mlp {
  Dense hidden;
  Dense out;

  bool empty() const { return hidden.empty(); }
};

struct PredictorParams {
  ModelDims dims;
  Variant variant = Variant::kFull;
  ScoreMode score_mode = ScoreMode::kQueryKey;
  std::uint64_t init_seed = 0;

  Mlp scale_nn;     // [c_j, c_tar] -> (sc, sh); empty for kNoAutoScaler
  Mlp query_embed;  // c_tar -> hq
  Mlp key_embed;    // scaled c_j -> hk_j
  Mlp pred_embed;   // kNoLinearCombination: neighbor prediction series -> e_j
  Mlp readout_nn;   // kNoLinearCombination: [sum a hk, sum a e] -> (x, s)

  /// Every trainable tensor in a fixed order, as flat views. Parameters
  /// and gradients share this layout.
  std::vector<std::span<double>> Tensors();
  std::vector<std::span<const double>> Tensors() const;
  std::vector<std::string> TensorNames() const;
  std::size_t ParameterCount() const;

  /// Same shapes, all zeros.
  PredictorParams ZerosLike() const;
};

/// Uniform fan-in initialization; the ScaleNN output starts near the
/// identity transform (sc ~ 1, sh ~ 0).
PredictorParams InitParams(const ModelDims& dims, Variant variant,
                           std::uint64_t seed,
                           ScoreMode score_mode = ScoreMode::kQueryKey);

/// Log-normalized model input assembled from a GraphSample. Neighbor series
/// are stored column-wise.
struct ModelInput {
  Eigen::VectorXd target_context;    // T+1
  Eigen::VectorXd target_attrs;      // attr width
  Eigen::MatrixXd neighbor_context;  // (T+1) x k
  Eigen::MatrixXd neighbor_attrs;    // attr width x k
  Eigen::MatrixXd neighbor_pred;     // L x k
  Eigen::VectorXd target_pred;       // L; empty when unknown

  int k() const { return static_cast<int>(neighbor_context.cols()); }
};

ModelInput ToModelInput(const GraphSample& sample);

struct PredictionOutput {
  Eigen::VectorXd x_hat;      // L, normalized domain
  Eigen::VectorXd sigma_hat;  // L
  Eigen::VectorXd alpha;      // k
  Eigen::VectorXd sc;         // k
  Eigen::VectorXd sh;         // k
  Eigen::VectorXd scores;     // k raw attention logits
  bool interpretable = true;
  std::optional<Eigen::MatrixXd> scaled_context;  // (T+1) x k on request
};

struct PredictOptions {
  bool keep_scaled_context = false;
};

// ---------------------------------------------------------------------------
// Building blocks

/// c_i = [x_{t-T:t}, m_i].
Eigen::VectorXd CellVector(const CellMeta& meta,
                           std::span<const double> normalized_context,
                           int expected_context_len);

struct AutoScaleResult {
  double sc = 1.0;
  double sh = 0.0;
  Eigen::VectorXd scaled;  // [x_j * sc + sh, m_j]
};

AutoScaleResult AutoScale(const PredictorParams& params,
                          const Eigen::VectorXd& target_vec,
                          const Eigen::VectorXd& neighbor_vec);

/// Numerically stable softmax.
Eigen::VectorXd Softmax(const Eigen::VectorXd& scores);

/// Attention weights over scaled neighbor vectors (one per column).
Eigen::VectorXd Attention(const PredictorParams& params,
                          const Eigen::VectorXd& target_vec,
                          const Eigen::MatrixXd& scaled_neighbors);

struct WeightedStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;
};

/// Weighted mean and unbiased weighted std of the columns of `xs`
///   mean = sum_j a_j xs_j
///   std  = sqrt( sum_j a_j (xs_j - mean)^2 / (v1 - v2/v1) )
/// Throws DegenerateContextError when v1 - v2/v1 <= 0.
WeightedStats WeightedMeanStd(const Eigen::VectorXd& alpha,
                              const Eigen::MatrixXd& xs);

/// Applies each neighbor's own (sc_j, sh_j) to its prediction-window series
/// and combines them with the attention weights.
WeightedStats Readout(const Eigen::VectorXd& alpha, const Eigen::VectorXd& sc,
                      const Eigen::VectorXd& sh,
                      const Eigen::MatrixXd& neighbor_pred);

// ---------------------------------------------------------------------------
// Full forward pass

/// Intermediate values of one forward pass, kept for backpropagation.
struct ForwardTrace {
  Eigen::MatrixXd cells;         // W x k raw neighbor vectors
  Eigen::VectorXd target_cell;   // W
  Eigen::MatrixXd scale_hidden;  // scale_hidden x k (post-ReLU)
  Eigen::VectorXd sc, sh;        // k
  Eigen::MatrixXd scaled_cells;  // W x k, input to KeyEmbed
  Eigen::VectorXd query_hidden;  // embed_hidden
  Eigen::VectorXd query;         // d_k
  Eigen::MatrixXd key_hidden;    // embed_hidden x k
  Eigen::MatrixXd keys;          // d_k x k
  Eigen::VectorXd scores;        // k
  Eigen::VectorXd alpha;         // k
  Eigen::MatrixXd scaled_pred;   // L x k

  // Linear readout
  double v1 = 1.0, v2 = 0.0, denom = 0.0;
  Eigen::VectorXd x_hat;         // L
  Eigen::VectorXd variance;      // L (before clamping at 0)
  Eigen::VectorXd sigma_hat;     // L

  // Neural readout
  Eigen::MatrixXd pred_hidden;   // pred_embed_hidden x k
  Eigen::MatrixXd pred_embed;    // pred_embed_width x k
  Eigen::VectorXd readout_in;    // d_k + pred_embed_width
  Eigen::VectorXd readout_hidden;
  Eigen::VectorXd readout_out;   // 2L
};

/// Throws DegenerateContextError for a collapsed linear readout.
ForwardTrace Forward(const PredictorParams& params, const ModelInput& input);

PredictionOutput Predict(const PredictorParams& params, const ModelInput& input,
                         const PredictOptions& options = {});
PredictionOutput Predict(const PredictorParams& params, const GraphSample& sample,
                         const PredictOptions& options = {});

// ---------------------------------------------------------------------------
// Model file

/// Versioned JSON document; weights are written as nested decimal arrays in
/// shortest round-trip form, so Save/Load is bit-exact.
std::string SerializeParams(const PredictorParams& params,
                            const std::map<std::string, std::string>& metadata = {});
PredictorParams DeserializeParams(const std::string& text,
                                  std::map<std::string, std::string>* metadata = nullptr);
void SaveParams(const std::string& path, const PredictorParams& params,
                const std::map<std::string, std::string>& metadata = {});
PredictorParams LoadParams(const std::string& path,
                           std::map<std::string, std::string>* metadata = nullptr);

}  // namespace ranctx
