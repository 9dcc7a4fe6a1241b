#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evdet/checkpoint.hpp"
#include "evdet/dataset.hpp"
#include "evdet/evasion.hpp"
#include "evdet/lstm.hpp"
#include "evdet/metrics.hpp"
#include "evdet/optimizers.hpp"

namespace evdet::train {

/// Windows every trace into sequences of at most `frame` packets. Traces
/// shorter than three packets are skipped.
data::Dataset build_dataset(std::span<const synth::LabeledTrace> traces, int frame, int class_count);

struct TrainConfig {
  nn::ModelConfig model;
  optim::OptimizerConfig optimizer;
  int batch_size = 50;
  int epochs = 10;
  std::uint64_t max_iterations = 0;  // 0 = no cap
  double dropout = 0.0;
  std::uint64_t seed = 0;
  bool use_scaler = false;
  bool single_precision = false;
  std::optional<std::filesystem::path> checkpoint_path;

  /// Throws Error(kInvalidArgument) naming the offending field.
  void validate() const;
};

struct TrainResult {
  nn::Checkpoint checkpoint;
  std::vector<double> loss_history;  // one entry per batch
  std::vector<double> epoch_seconds;
  std::uint64_t iterations = 0;
  int epochs_run = 0;
};

using EpochCallback = std::function<void(int epoch, double mean_loss, double seconds)>;

/// Mini-batch training; deterministic for a fixed seed in 64-bit mode.
/// Throws Error(kEmptyDataset) for an empty set, Error(kClassMismatch) when
/// labels exceed the model's classes and Error(kDivergenceDetected) when a
/// batch loss is not finite.
TrainResult train(const data::Dataset& train_set, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Batched prediction over fixed-size chunks, spread over `workers`
/// threads; the report does not depend on the worker count.
/// Throws Error(kEmptyTestSet) and Error(kClassMismatch).
metrics::EvalReport evaluate(const nn::Checkpoint& model, const data::Dataset& test_set, unsigned workers = 1);

void write_loss_csv(std::span<const double> losses, const std::filesystem::path& path);

struct SweepGrid {
  std::vector<optim::Kind> optimizers = {optim::Kind::kAdam};
  std::vector<double> lrs = {1e-3};
  std::vector<double> dropouts = {0.0};
  std::vector<int> batch_sizes = {50};
  std::vector<int> frames = {3, 4, 5, 6, 7};
};

struct SweepRow {
  optim::Kind optimizer = optim::Kind::kAdam;
  double lr = 0.0;
  double dropout = 0.0;
  int batch_size = 0;
  std::map<int, double> accuracy;         // frame -> macro accuracy
  std::map<int, double> seconds_per_epoch;  // frame -> mean epoch time
  std::string error;                      // empty when every run succeeded
};

using SplitForFrame = std::function<std::pair<data::Dataset, data::Dataset>(int frame)>;

/// One row per (optimizer, lr, dropout, batch) combination with one
/// accuracy per frame. A failing run is recorded in the row, not thrown.
std::vector<SweepRow> sweep(const SweepGrid& grid, const TrainConfig& base, const SplitForFrame& data,
                            unsigned eval_workers = 1);
void write_sweep_csv(std::span<const SweepRow> rows, std::span<const int> frames, const std::filesystem::path& path);

struct TimingRow {
  int batch_size = 0;
  double seconds_per_epoch = 0.0;
};

/// Wall time of `epochs` training epochs per batch size on the same set.
/// Batch sizes must be ascending.
std::vector<TimingRow> timing_bench(std::span<const int> batch_sizes, const TrainConfig& config,
                                    const data::Dataset& train_set, int epochs = 1);
void write_timing_csv(std::span<const TimingRow> rows, const std::filesystem::path& path);

}  // namespace evdet::train
