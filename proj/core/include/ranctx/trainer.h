#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ranctx/graph_data.h"
#include "ranctx/predictor.h"

namespace ranctx {

struct TrainConfig {
  int epochs = 400;
  int samples_per_epoch = 40000;  // samples drawn per epoch, split into batches
  int batch_size = 32;
  double learning_rate = 1e-5;
  double clip_norm = 0.8;
  double sigma_floor = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  Variant variant = Variant::kFull;
  /// Per-epoch metrics use at most this many (evenly strided) samples of
  /// each split; 0 means all.
  int eval_samples = 4000;
  int threads = 1;

  void Validate() const;
};

struct OptimizerState {
  PredictorParams m;  // first moment
  PredictorParams v;  // second moment
  long long step = 0;
};

OptimizerState InitOptimizer(const PredictorParams& params);

struct EvalMetrics {
  double norm_mae = 0.0;
  std::optional<double> r2;  // missing when the truth has zero variance
  double mae = 0.0;
  double nll = 0.0;          // mean NLL in the normalized domain
  double reference_mean = 0.0;
  std::size_t pairs = 0;     // (sample, hour) pairs scored
  std::size_t skipped = 0;   // degenerate samples
};

/// Per-sample source of graph samples. Implementations must be safe for
/// concurrent Get() calls.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual GraphSample Get(std::size_t i) const = 0;
};

class VectorSource : public SampleSource {
 public:
  explicit VectorSource(std::vector<GraphSample> samples)
      : samples_(std::move(samples)) {}
  std::size_t size() const override { return samples_.size(); }
  GraphSample Get(std::size_t i) const override { return samples_[i]; }

 private:
  std::vector<GraphSample> samples_;
};

class DatasetSource : public SampleSource {
 public:
  DatasetSource(const Dataset& data, std::vector<SampleKey> keys)
      : data_(&data), keys_(std::move(keys)) {}
  std::size_t size() const override { return keys_.size(); }
  GraphSample Get(std::size_t i) const override {
    return data_->Build(keys_[i].cell, keys_[i].anchor);
  }
  const std::vector<SampleKey>& keys() const { return keys_; }

 private:
  const Dataset* data_;
  std::vector<SampleKey> keys_;
};

// ---------------------------------------------------------------------------

/// mean_l [ 0.5 ln(2 pi s^2) + (x - xhat)^2 / (2 s^2) ],  s = max(sigma, floor).
double NllLoss(const Eigen::VectorXd& x_hat, const Eigen::VectorXd& sigma_hat,
               const Eigen::VectorXd& x_true, double sigma_floor);

/// Adds d(weight * NLL)/d(params) for one sample into `grads` and returns the
/// unweighted NLL. Throws DegenerateContextError for a collapsed readout.
double AccumulateGradient(const PredictorParams& params, const ModelInput& input,
                          double sigma_floor, double weight,
                          PredictorParams* grads);

struct GradientResult {
  PredictorParams grads;
  double mean_loss = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;  // degenerate samples, excluded from the mean
};

/// Gradient of the mean batch NLL. Per-sample gradients are reduced in batch
/// order, so the result does not depend on `threads`.
GradientResult Gradients(const PredictorParams& params,
                         std::span<const ModelInput> batch, double sigma_floor,
                         int threads = 1);

double GlobalNorm(const PredictorParams& grads);

/// Rescales to `clip_norm` when the global L2 norm exceeds it; returns the
/// norm before clipping.
double ClipGradients(PredictorParams* grads, double clip_norm);

void AdamStep(PredictorParams* params, const PredictorParams& grads,
              OptimizerState* state, const TrainConfig& cfg);

/// Metrics in the percentage domain. `reference_mean` is the training-set
/// mean utilization used to normalize the MAE.
EvalMetrics Evaluate(const PredictorParams& params, const SampleSource& source,
                     double reference_mean, double sigma_floor = 1e-4,
                     std::span<const std::size_t> subset = {}, int threads = 1);

/// Mean prediction-window utilization over all samples of `source`.
double MeanTargetUtilization(const SampleSource& source);

/// Variant surgery: shares the query/key embeddings (and ScaleNN when kept)
/// with `init`, drops ScaleNN for kNoAutoScaler and adds a freshly
/// initialized neural readout for kNoLinearCombination.
PredictorParams MakeVariant(const PredictorParams& init, Variant variant);

struct EpochLog {
  int epoch = 0;
  Split split = Split::kTrain;
  EvalMetrics metrics;
};

/// Resumable training state.
struct TrainState {
  PredictorParams params;
  OptimizerState optimizer;
  std::string rng_state;
  int epochs_done = 0;
  PredictorParams best_params;
  double best_metric = 0.0;
  int best_epoch = -1;
  double reference_mean = 0.0;
  std::vector<EpochLog> log;
  std::size_t skipped_samples = 0;
};

TrainState InitTrainState(const PredictorParams& init, const TrainConfig& cfg);

using EpochCallback = std::function<void(const TrainState&)>;

/// Runs epochs [state.epochs_done, cfg.epochs). Each epoch draws
/// samples_per_epoch samples uniformly at random, takes one clipped Adam step
/// per mini-batch, then logs train/validation metrics. The best-validation
/// parameters are tracked in state.best_params.
void Train(const TrainConfig& cfg, const SampleSource& train,
           const SampleSource& validation, TrainState* state,
           const EpochCallback& on_epoch = {});

std::string SerializeTrainState(const TrainState& state);
TrainState DeserializeTrainState(const std::string& text);

void WriteTrainLogCsv(std::ostream& out, const std::vector<EpochLog>& log);

}  // namespace ranctx
