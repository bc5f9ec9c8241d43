#pragma once

// AdamW, the warmup + cosine schedule, metric logging and the training and
// evaluation loops for both tasks.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "simba/data.hpp"
#include "simba/model.hpp"
#include "simba/rng.hpp"
#include "simba/tensor.hpp"

namespace simba {

struct OptimConfig {
  double base_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double warmup_fraction = 0.05;  // of total steps
  std::size_t epochs = 1;
  std::size_t max_steps = 0;      // caps epochs * steps_per_epoch when nonzero
  double label_smoothing = 0.1;
  double grad_clip_norm = 0.0;    // 0 disables clipping
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  std::size_t abort_after = 0;    // consecutive non-finite steps; 0 never aborts
  std::size_t eval_every = 0;     // steps between val evaluations; 0 = once per epoch

  void validate() const;  // ConfigError with relative paths
};

// Linear 0 -> base_lr over the warmup steps, then half-cosine to 0 at total.
double lr_schedule(std::size_t step, std::size_t warmup_steps, std::size_t total_steps,
                   double base_lr);

struct AdamState {
  std::size_t t = 0;
  std::vector<std::vector<double>> m, v;
};

// Decoupled weight decay with bias correction. Gradients are read from each
// parameter's grad buffer (missing buffers count as zero). Returns false and
// leaves parameters and moments untouched when any gradient is non-finite.
template <typename T>
bool adamw_step(const ParamList<T>& params, AdamState& state, const OptimConfig& cfg, double lr);

// Global L2 norm over all gradients; rescales them to max_norm when above it.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const ParamList<T>& params, double max_norm);

template <typename T>
void zero_grads(const ParamList<T>& params);

struct MetricRow {
  std::size_t step;
  std::string split;
  std::string metric;
  double value;
};

// Rows in insertion order; values use the shortest round-trip representation
// so identical runs write identical bytes.
class MetricsLog {
 public:
  void add(std::size_t step, std::string split, std::string metric, double value);
  const std::vector<MetricRow>& rows() const { return rows_; }
  void write_csv(std::ostream& out) const;
  std::string csv() const;
  // Value of the last row matching split and metric; NaN when absent.
  double last(const std::string& split, const std::string& metric) const;

 private:
  std::vector<MetricRow> rows_;
};

std::string format_double(double v);

struct TrainReport {
  std::vector<double> losses;  // one per attempted step, non-finite included
  MetricsLog metrics;
  std::size_t steps = 0;
  std::size_t nonfinite_steps = 0;  // skipped updates
  bool nonfinite = false;           // true iff any non-finite loss or gradient was seen
  bool aborted = false;
  double wall_seconds = 0.0;
  std::string checkpoint;           // set by the caller that persists the run
};

using CheckpointHook = std::function<void(std::size_t step, const Rng& rng)>;

// Hooks a task plugs into the generic loop.
template <typename T>
struct TrainTask {
  ParamList<T> params;
  std::size_t steps_per_epoch = 0;
  // Forward pass for the next training batch; called under an active tape.
  std::function<Tensor<T>(Rng& rng)> batch_loss;
  // Called at the start of every epoch (reshuffling).
  std::function<void(Rng& rng)> start_epoch;
  // Appends validation metrics for the given step.
  std::function<void(std::size_t step, MetricsLog& log)> evaluate;
  // Called after evaluation with the training stream; step 0 is the initial
  // model.
  std::function<void(std::size_t step, const Rng& rng)> checkpoint;
};

std::size_t total_steps(const OptimConfig& cfg, std::size_t steps_per_epoch);

// Stops early with aborted set when abort_after consecutive steps are
// non-finite.
template <typename T>
TrainReport train_loop(TrainTask<T>& task, const OptimConfig& cfg);

struct VisionMetrics {
  double loss = 0.0;  // unsmoothed cross entropy
  double top1 = 0.0;
};

template <typename T>
VisionMetrics evaluate_vision(const VisionModel<T>& model, const ImageDataset& data,
                              const std::vector<std::size_t>& indices, std::size_t batch);

// Train/val index split of an image set: the last val_fraction of samples
// are held out.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> image_split(const ImageDataset& data,
                                                                          double val_fraction);

template <typename T>
TrainReport train_vision(VisionModel<T>& model, const ImageDataset& data,
                         const std::vector<std::size_t>& train_idx,
                         const std::vector<std::size_t>& val_idx, const OptimConfig& cfg,
                         CheckpointHook checkpoint = {});

// Errors over de-standardized values.
struct ForecastMetrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
};

template <typename T>
ForecastMetrics evaluate_forecast(const ForecastModel<T>& model, const SeriesDataset& data,
                                  Split split, std::size_t batch);

// Repeat-last-value baseline on the same windows.
ForecastMetrics persistence_baseline(const SeriesDataset& data, Split split);

template <typename T>
TrainReport train_forecast(ForecastModel<T>& model, const SeriesDataset& data,
                           const OptimConfig& cfg,
                           CheckpointHook checkpoint = {});

}  // namespace simba
