#include "evdet/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "evdet/error.hpp"
#include "evdet/features.hpp"
#include "evdet/random.hpp"

namespace evdet::train {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Sequences for a subset of samples, scaled when a scaler is given.
std::vector<std::vector<features::FeatureVector>> gather(const data::Dataset& ds, std::span<const std::size_t> idx,
                                                         const std::optional<features::FeatureScaler>& scaler,
                                                         std::vector<int>& labels, int& steps) {
  std::vector<std::vector<features::FeatureVector>> seqs;
  seqs.reserve(idx.size());
  labels.clear();
  steps = 0;
  for (std::size_t i : idx) {
    const auto& s = ds.samples[i];
    auto rows = s.rows;
    if (scaler)
      for (auto& r : rows) r = scaler->apply(r);
    steps = std::max(steps, static_cast<int>(rows.size()));
    seqs.push_back(std::move(rows));
    labels.push_back(s.label);
  }
  return seqs;
}

void check_labels(const data::Dataset& ds, int classes) {
  if (ds.class_count > classes) {
    throw Error(ErrorCode::kClassMismatch, "dataset has " + std::to_string(ds.class_count) +
                                               " classes, model has " + std::to_string(classes));
  }
  for (const auto& s : ds.samples) {
    if (s.label >= classes) throw Error(ErrorCode::kClassMismatch, "label " + std::to_string(s.label) + " exceeds model classes");
  }
}

template <typename T>
TrainResult train_impl(const data::Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  std::optional<features::FeatureScaler> scaler;
  if (cfg.use_scaler) {
    std::vector<features::FeatureVector> rows;
    for (const auto& s : ds.samples) rows.insert(rows.end(), s.rows.begin(), s.rows.end());
    scaler = features::FeatureScaler::fit(rows);
  }

  nn::BiLstm<T> model(cfg.model, derive_seed(cfg.seed, 0));
  // The optimizer always runs on a 64-bit master copy.
  std::vector<double> master(model.params().begin(), model.params().end());
  optim::OptimizerState state = optim::make_state(cfg.optimizer, master.size());
  std::vector<double> grad64(master.size());

  TrainResult result;
  std::vector<int> labels;
  int steps = 0;
  nn::ForwardTape<T> tape;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const auto start = Clock::now();
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    const auto order = data::batches(ds.size(), static_cast<std::size_t>(cfg.batch_size),
                                     derive_seed(cfg.seed, 1'000'000 + static_cast<std::uint64_t>(epoch)));
    for (const auto& idx : order) {
      if (cfg.max_iterations != 0 && result.iterations >= cfg.max_iterations) {
        stop = true;
        break;
      }
      const auto seqs = gather(ds, idx, scaler, labels, steps);
      const auto batch = nn::make_batch<T>(seqs, steps);
      nn::ForwardOptions opts;
      opts.train = true;
      opts.dropout = cfg.dropout;
      opts.dropout_seed = derive_seed(cfg.seed, 2'000'000 + result.iterations);
      const nn::Mat<T> logits = model.forward(batch, tape, opts);
      const double loss = static_cast<double>(nn::softmax_xent<T>(logits, labels).loss);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::kDivergenceDetected, "loss is " + std::to_string(loss) + " at iteration " +
                                                        std::to_string(result.iterations) + " (epoch " +
                                                        std::to_string(epoch) + "); try a lower learning rate");
      }
      const std::vector<T> grad = model.backward(tape, labels);
      std::copy(grad.begin(), grad.end(), grad64.begin());
      try {
        optim::optimizer_step(master, grad64, state, cfg.optimizer);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kNonFiniteGradient) throw Error(ErrorCode::kDivergenceDetected, e.what());
        throw;
      }
      if (!std::all_of(master.begin(), master.end(), [](double v) { return std::isfinite(v); })) {
        throw Error(ErrorCode::kDivergenceDetected, "parameters overflowed at iteration " +
                                                        std::to_string(result.iterations) + "; try a lower learning rate");
      }
      std::copy(master.begin(), master.end(), model.params().begin());
      result.loss_history.push_back(loss);
      loss_sum += loss;
      ++loss_count;
      ++result.iterations;
    }
    if (loss_count == 0) break;
    const double secs = seconds_since(start);
    result.epoch_seconds.push_back(secs);
    ++result.epochs_run;
    if (on_epoch) on_epoch(epoch, loss_sum / static_cast<double>(loss_count), secs);
  }

  result.checkpoint.config = cfg.model;
  result.checkpoint.scaler = scaler;
  result.checkpoint.params = master;
  if (cfg.checkpoint_path) nn::save_checkpoint(*cfg.checkpoint_path, result.checkpoint);
  return result;
}

}  // namespace

data::Dataset build_dataset(std::span<const synth::LabeledTrace> traces, int frame, int class_count) {
  data::Dataset ds;
  ds.class_count = class_count;
  for (const auto& lt : traces) {
    if (lt.trace.packets.size() < static_cast<std::size_t>(features::kMinFrame)) continue;
    for (auto& s : features::extract_sequences(lt.trace, frame, lt.label)) ds.samples.push_back(std::move(s));
  }
  return ds;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  model.validate();
  optimizer.validate();
  if (model.frame < features::kMinFrame || model.frame > features::kMaxFrame) fail("frame must be in [3, 7]");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

TrainResult train(const data::Dataset& train_set, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.samples.empty()) throw Error(ErrorCode::kEmptyDataset, "training set is empty");
  check_labels(train_set, config.model.classes);
  return config.single_precision ? train_impl<float>(train_set, config, on_epoch)
                                 : train_impl<double>(train_set, config, on_epoch);
}

metrics::EvalReport evaluate(const nn::Checkpoint& ckpt, const data::Dataset& test_set, unsigned workers) {
  const auto start = Clock::now();
  if (test_set.samples.empty()) throw Error(ErrorCode::kEmptyTestSet, "test set is empty");
  if (test_set.class_count != ckpt.config.classes) {
    throw Error(ErrorCode::kClassMismatch, "dataset has " + std::to_string(test_set.class_count) +
                                               " classes, model has " + std::to_string(ckpt.config.classes));
  }
  check_labels(test_set, ckpt.config.classes);
  const nn::BiLstm<double> model = nn::model_from_checkpoint(ckpt);

  constexpr std::size_t kChunk = 256;
  const std::size_t n = test_set.size();
  const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
  std::vector<int> truth(n), predicted(n);
  std::vector<std::vector<double>> probs(n);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    std::vector<int> labels;
    std::vector<std::size_t> idx;
    int steps = 0;
    for (std::size_t c = next++; c < n_chunks; c = next++) {
      try {
        idx.clear();
        for (std::size_t i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) idx.push_back(i);
        const auto seqs = gather(test_set, idx, ckpt.scaler, labels, steps);
        const auto pred = nn::predict(model, nn::make_batch<double>(seqs, steps));
        for (std::size_t k = 0; k < idx.size(); ++k) {
          const std::size_t i = idx[k];
          truth[i] = labels[k];
          predicted[i] = pred.labels[k];
          const auto col = pred.probs.col(static_cast<Eigen::Index>(k));
          probs[i].assign(col.data(), col.data() + col.size());
        }
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n_chunks)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  metrics::EvalReport report = metrics::make_report(truth, predicted, probs, ckpt.config.classes);
  report.wall_time_seconds = seconds_since(start);
  return report;
}

void write_loss_csv(std::span<const double> losses, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  out.precision(10);
  out << "iteration,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed: " + path.string());
}

std::vector<SweepRow> sweep(const SweepGrid& grid, const TrainConfig& base, const SplitForFrame& data,
                            unsigned eval_workers) {
  std::map<int, std::pair<data::Dataset, data::Dataset>> splits;
  std::map<int, std::string> split_errors;
  for (int frame : grid.frames) {
    try {
      splits.emplace(frame, data(frame));
    } catch (const std::exception& e) {
      split_errors[frame] = e.what();
    }
  }

  std::vector<SweepRow> rows;
  for (optim::Kind kind : grid.optimizers)
    for (double lr : grid.lrs)
      for (double dropout : grid.dropouts)
        for (int batch : grid.batch_sizes) {
          SweepRow row;
          row.optimizer = kind;
          row.lr = lr;
          row.dropout = dropout;
          row.batch_size = batch;
          for (int frame : grid.frames) {
            try {
              if (auto it = split_errors.find(frame); it != split_errors.end()) {
                throw Error(ErrorCode::kInvalidArgument, it->second);
              }
              TrainConfig cfg = base;
              cfg.optimizer.kind = kind;
              cfg.optimizer.lr = lr;
              cfg.dropout = dropout;
              cfg.batch_size = batch;
              cfg.model.frame = frame;
              cfg.checkpoint_path.reset();
              const auto& [train_set, test_set] = splits.at(frame);
              const TrainResult r = train(train_set, cfg);
              const auto report = evaluate(r.checkpoint, test_set, eval_workers);
              row.accuracy[frame] = report.macro_accuracy;
              double total = 0.0;
              for (double s : r.epoch_seconds) total += s;
              row.seconds_per_epoch[frame] = r.epoch_seconds.empty() ? 0.0 : total / static_cast<double>(r.epoch_seconds.size());
            } catch (const std::exception& e) {
              if (!row.error.empty()) row.error += "; ";
              row.error += "L" + std::to_string(frame) + ": " + e.what();
            }
          }
          rows.push_back(std::move(row));
        }
  return rows;
}

void write_sweep_csv(std::span<const SweepRow> rows, std::span<const int> frames, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  out.precision(6);
  out << "optimizer,lr,dropout,batch";
  for (int f : frames) out << ",acc_L" << f;
  for (int f : frames) out << ",sec_per_epoch_L" << f;
  out << ",status\n";
  for (const auto& r : rows) {
    out << optim::to_string(r.optimizer) << ',' << r.lr << ',' << r.dropout << ',' << r.batch_size;
    for (int f : frames) {
      out << ',';
      if (auto it = r.accuracy.find(f); it != r.accuracy.end()) out << it->second;
    }
    for (int f : frames) {
      out << ',';
      if (auto it = r.seconds_per_epoch.find(f); it != r.seconds_per_epoch.end()) out << it->second;
    }
    std::string status = r.error.empty() ? "ok" : "failed: " + r.error;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out << ',' << status << '\n';
  }
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed: " + path.string());
}

std::vector<TimingRow> timing_bench(std::span<const int> batch_sizes, const TrainConfig& config,
                                    const data::Dataset& train_set, int epochs) {
  if (!std::is_sorted(batch_sizes.begin(), batch_sizes.end())) {
    throw Error(ErrorCode::kInvalidArgument, "batch sizes must be ascending");
  }
  std::vector<TimingRow> rows;
  for (int b : batch_sizes) {
    TrainConfig cfg = config;
    cfg.batch_size = b;
    cfg.epochs = epochs;
    cfg.max_iterations = 0;
    cfg.checkpoint_path.reset();
    const TrainResult r = train(train_set, cfg);
    double total = 0.0;
    for (double s : r.epoch_seconds) total += s;
    rows.push_back({b, total / static_cast<double>(std::max<std::size_t>(1, r.epoch_seconds.size()))});
  }
  return rows;
}

void write_timing_csv(std::span<const TimingRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  out.precision(6);
  out << "batch_size,seconds_per_epoch\n";
  for (const auto& r : rows) out << r.batch_size << ',' << r.seconds_per_epoch << '\n';
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed: " + path.string());
}

}  // namespace evdet::train
