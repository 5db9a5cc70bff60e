#pragma once

#include <string>
#include <vector>

#include "vicl/common.hpp"

namespace vicl::regnet {

/// Per-channel affine map onto [0,1]; bounds come from the training data.
struct Normalizer {
  VectorXd min;
  VectorXd max;

  void validate() const;
  VectorXd apply(const VectorXd& raw) const;
  VectorXd invert(const VectorXd& unit) const;
};

/// Single-layer LSTM with a linear readout. Gate rows are stacked in the
/// order input, forget, candidate, output.
struct RegNetParams {
  int input_dim = 0;
  int hidden = 0;
  int output_dim = 1;
  MatrixXd wx;  // 4H x input
  MatrixXd wh;  // 4H x H
  VectorXd b;   // 4H
  MatrixXd wy;  // output x H
  VectorXd by;  // output
  Normalizer in_norm;
  Normalizer out_norm;
  double baseline_alpha = 0.0;  // mean collaborator co-contraction over training demos

  void validate() const;
  VectorXd flatten() const;
  void unflatten(const VectorXd& theta);
  int parameter_count() const;
};

RegNetParams init_params(int input_dim, int hidden, int output_dim, Rng& rng);

struct ForwardCache {
  std::vector<VectorXd> x, i, f, g, o, c, tanh_c, h;
  std::vector<VectorXd> y;
};

/// Normalized-space forward pass; deterministic given params and inputs.
std::vector<VectorXd> forward(const RegNetParams& params, const std::vector<VectorXd>& inputs,
                              ForwardCache* cache = nullptr);

/// Exact BPTT gradients of the mean squared error over the sequence.
struct Gradients {
  MatrixXd wx, wh, wy;
  VectorXd b, by;

  VectorXd flatten() const;
  double norm() const;
};

double mse_loss(const std::vector<VectorXd>& pred, const std::vector<VectorXd>& targets);

Gradients backward(const RegNetParams& params, const ForwardCache& cache,
                   const std::vector<VectorXd>& targets);

struct Sequence {
  std::vector<VectorXd> inputs;   // raw units
  std::vector<VectorXd> targets;  // raw units
};

struct TrainOptions {
  int hidden = 32;
  int epochs = 120;
  int chunk_len = 64;
  int batch_size = 8;
  double learning_rate = 5e-3;
  double clip_norm = 5.0;
  double val_fraction = 0.25;  // held-out fraction of sequences
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> train_loss;  // per epoch, normalized space
  std::vector<double> val_loss;
};

/// Mini-batch truncated BPTT with Adam and gradient clipping. Sequences are
/// concatenated end-to-end before chunking. Aborts with NumericError on
/// divergence (NaN loss).
RegNetParams train(const std::vector<Sequence>& dataset, const TrainOptions& options,
                   TrainReport* report = nullptr);

/// Free-running prediction over a raw sequence, de-normalized.
/// `excursion` (optional) is set when outputs leave the training bounds by >10%.
std::vector<VectorXd> predict(const RegNetParams& params, const std::vector<VectorXd>& raw_inputs,
                              bool* excursion = nullptr);

struct Metrics {
  double rmse = 0.0;
  double correlation = 0.0;
};

Metrics metrics(const std::vector<double>& pred, const std::vector<double>& truth);

/// Stateful causal step for the 100 Hz live loop.
class OnlinePredictor {
 public:
  explicit OnlinePredictor(RegNetParams params);
  double step(const VectorXd& raw_input);
  void reset();

 private:
  RegNetParams params_;
  VectorXd h_, c_;
};

struct RegulatoryFactor {
  std::vector<double> rho;
  double rho_min = 0.5;
  double rho_max = 1.8;
};

/// rho_t = clamp(pred_alpha_c / baseline, rho_min, rho_max).
RegulatoryFactor regulatory_factor(const std::vector<double>& pred_alpha_c, double baseline_alpha,
                                   double rho_min = 0.5, double rho_max = 1.8);

std::string params_to_json(const RegNetParams& params);
RegNetParams params_from_json(const std::string& text);
void save_params(const RegNetParams& params, const std::string& path);
RegNetParams load_params(const std::string& path);

}  // namespace vicl::regnet
