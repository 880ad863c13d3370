#pragma once

#include "attnmemcap/attention.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace attnmemcap {

/// Uniform tokens in (0,1)^d with one shared context block across all
/// examples; sinusoidal positional encodings added (position 0 for the
/// query, positions 1..n for the context rows). Labels are U(0,1) for
/// regression and uniform class indices for classification.
Dataset gen_shared_context_dataset(int T, int n, int d, const Task& task, std::uint64_t seed);

/// Same recipe with an independent context per example, so all tokens are
/// jointly in general position.
Dataset gen_general_position_dataset(int T, int n, int d, const Task& task, std::uint64_t seed);

/// Mean loss over the batch and its exact gradients with respect to every
/// weight matrix (softmax cross-entropy for classification on the d_out
/// logits, mean squared error for regression).
struct LossAndGradients {
  double loss = 0.0;
  AttentionWeights grad;
};
LossAndGradients gradient(const AttentionWeights& w, const AttentionConfig& cfg,
                          const Dataset& data, const std::vector<int>& batch,
                          const Task& task);

struct TrainConfig {
  long steps = 50000;
  int batch_size = 256;
  double learning_rate = 1e-3;
  long warmup_steps = 500;
  bool cosine_decay = true;
  std::uint64_t seed = 0;
  long log_every = 500;
  /// Classification only: stop once training accuracy reaches this level.
  std::optional<double> early_stop_accuracy;
};

struct TrainReport {
  std::vector<std::pair<long, double>> loss_log;
  double final_loss = 0.0;
  double final_accuracy = 0.0;  // classification
  double final_mse = 0.0;       // regression
  long steps_run = 0;
  double wall_seconds = 0.0;
  bool diverged = false;
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) with linear warmup and cosine
/// decay. Deterministic given (data, configs, seed). Non-finite loss stops
/// the run and is reported, never clipped.
std::pair<AttentionWeights, TrainReport> train_memorize(const Dataset& data,
                                                        const AttentionConfig& cfg,
                                                        const TrainConfig& tcfg);

struct SaturationReport {
  double threshold = 0.99;
  std::vector<std::vector<bool>> saturated;  // [example][head]
  std::vector<long> heads_per_example_hist;  // index = number of saturated heads
  std::vector<long> max_coeff_hist;          // 20 uniform bins over [0, 1]
};

/// Flags head h saturated for example t iff max(theta_h) exceeds the
/// threshold; threshold must lie in (1/n, 1).
SaturationReport saturation_report(const AttentionWeights& w, const AttentionConfig& cfg,
                                   const Dataset& data, double threshold = 0.99);

struct SweepCell {
  int heads = 1;
  int n = 8;
  int d_h = 8;
  int T = 16;
};

struct SweepRow {
  SweepCell cell;
  std::uint64_t seed = 0;
  std::string metric;  // "accuracy", "mse", or "error"
  double value = 0.0;
};

struct SweepConfig {
  std::vector<SweepCell> cells;
  int d = 64;
  int d_v = 0;  // 0 means d
  Task task = Task::classification(100);
  std::string kind = "shared";  // "shared" or "genpos"
  TrainConfig train;
  int seeds = 3;
  std::uint64_t base_seed = 0;
  int threads = 1;
};

/// One row per (cell, seed); training failures inside a cell become rows
/// with metric "error" instead of aborting the sweep. Cells run on a small
/// thread pool with per-cell derived seeds, so the schedule cannot change
/// the numbers.
std::vector<SweepRow> sweep(const SweepConfig& cfg);

/// Median of the metric values for one cell, pulled out of sweep rows.
double sweep_cell_median(const std::vector<SweepRow>& rows, const SweepCell& cell,
                         const std::string& metric);

}  // namespace attnmemcap
