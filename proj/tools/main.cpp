#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "evdet/checkpoint.hpp"
#include "evdet/dataset.hpp"
#include "evdet/error.hpp"
#include "evdet/evasion.hpp"
#include "evdet/pcap.hpp"
#include "evdet/random.hpp"
#include "evdet/training.hpp"
#include "run_config.hpp"

namespace {

using namespace evdet;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;
constexpr const char* kConfigEnv = "EVDET_CONFIG";

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return kExitUsage;
    case ErrorCode::kDivergenceDetected:
    case ErrorCode::kNonFiniteGradient:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream in(item);
    T v{};
    if (!(in >> v) || !(in >> std::ws).eof()) {
      throw Error(ErrorCode::kInvalidArgument, std::string("bad value '") + item + "' in " + what);
    }
    out.push_back(v);
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " is empty");
  return out;
}

std::vector<optim::Kind> parse_kinds(const std::string& text) {
  std::vector<optim::Kind> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto k = optim::parse_kind(item);
    if (!k) throw Error(ErrorCode::kInvalidArgument, "unknown optimizer '" + item + "'");
    out.push_back(*k);
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "optimizer list is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Shared flag groups

struct CorpusFlags {
  int flows_per_class = 1000;
  std::uint64_t seed = 0;
  synth::SynthParams params;
  synth::CleanFlowShape shape;
  std::string tos_values = "16,24,17,8";
  bool include_clean = false;

  void add(CLI::App* app) {
    app->add_option("--flows-per-class", flows_per_class, "Flows generated per class")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "Corpus seed");
    app->add_option("--frag-units", params.frag_units, "8-byte units per IP fragment");
    app->add_option("--seg-bytes", params.seg_bytes, "Payload bytes per TCP segment");
    app->add_option("--chaff-rate", params.chaff_rate, "Chaff packets per real packet");
    app->add_option("--ttl-floor", params.ttl_floor, "TTL given to TTL chaff");
    app->add_option("--tos-values", tos_values, "Comma-separated TOS values to cycle");
    app->add_flag("--overlap", params.overlap, "Overlapping fragments/segments with junk");
    app->add_flag("--include-clean", include_clean, "Add a ninth class of untransformed flows");
    app->add_option("--min-packets", shape.min_packets);
    app->add_option("--max-packets", shape.max_packets);
    app->add_option("--min-payload", shape.min_payload);
    app->add_option("--max-payload", shape.max_payload);
  }

  int class_count() const { return synth::kEvasionClassCount + (include_clean ? 1 : 0); }

  std::vector<synth::LabeledTrace> build(unsigned workers) {
    params.tos_values = parse_list<int>(tos_values, "--tos-values");
    params.seed = derive_seed(seed, 0x5EED);
    synth::CorpusOptions opts;
    opts.shape = shape;
    opts.include_clean = include_clean;
    opts.workers = workers;
    return synth::build_labeled_corpus(flows_per_class, params, seed, opts);
  }
};

struct ModelFlags {
  int hidden = 128;
  int layers = 2;
  bool unidirectional = false;
  std::string readout = "final";

  void add(CLI::App* app) {
    app->add_option("--hidden", hidden, "LSTM cells per direction")->check(CLI::PositiveNumber);
    app->add_option("--layers", layers, "Stacked layers (1 or 2)")->check(CLI::Range(1, 2));
    app->add_flag("--unidirectional", unidirectional, "Forward direction only");
    app->add_option("--readout", readout, "final | mean")->check(CLI::IsMember({"final", "mean"}));
  }

  void apply(nn::ModelConfig& m) const {
    m.hidden = hidden;
    m.layers = layers;
    m.bidirectional = !unidirectional;
    m.readout = readout == "mean" ? nn::Readout::kStepMean : nn::Readout::kFinalState;
  }
};

struct OptimizerFlags {
  std::string kind = "adam";
  optim::OptimizerConfig config;

  void add(CLI::App* app) {
    app->add_option("--optimizer", kind,
                    "gd, momentum, adagrad, adadelta, rmsprop, adam, ftrl, proximal_gd, proximal_adagrad");
    app->add_option("--lr", config.lr, "Learning rate");
    app->add_option("--momentum", config.momentum);
    app->add_option("--beta1", config.beta1);
    app->add_option("--beta2", config.beta2);
    app->add_option("--epsilon", config.epsilon);
    app->add_option("--rho", config.rho, "RMSProp/Adadelta decay");
    app->add_option("--l1", config.l1, "FTRL/proximal L1 strength");
    app->add_option("--l2-shrink", config.l2_shrink, "FTRL/proximal L2 strength");
    app->add_option("--weight-decay", config.l2_weight_decay, "L2 weight decay added to gradients");
  }

  optim::OptimizerConfig resolve() const {
    optim::OptimizerConfig c = config;
    const auto k = optim::parse_kind(kind);
    if (!k) throw Error(ErrorCode::kInvalidArgument, "unknown optimizer '" + kind + "'");
    c.kind = *k;
    return c;
  }
};

struct SplitFlags {
  std::uint64_t split_seed = 1;
  double train_fraction = 0.8;
  bool use_all = false;

  void add(CLI::App* app) {
    app->add_option("--split-seed", split_seed, "Train/test split seed");
    app->add_option("--train-fraction", train_fraction, "Fraction of samples used for training");
    app->add_flag("--use-all", use_all, "Use the whole file instead of one side of the split");
  }

  data::SplitSpec spec() const { return {split_seed, train_fraction}; }
};

void print_histogram(const data::Dataset& ds) {
  const auto h = data::class_histogram(ds);
  std::printf("%-10s %8s\n", "class", "samples");
  for (std::size_t c = 0; c < h.size(); ++c) {
    std::printf("%-10s %8d\n", std::string(synth::class_name(static_cast<int>(c))).c_str(), h[c]);
  }
  std::printf("%-10s %8zu\n", "total", ds.size());
}

void print_report(const metrics::EvalReport& r) {
  const int C = r.confusion.classes();
  std::printf("%-10s", "");
  for (int c = 0; c < C; ++c) std::printf(" %9s", std::string(synth::class_name(c)).c_str());
  std::printf(" %9s\n", "acc(%)");
  for (int t = 0; t < C; ++t) {
    std::printf("%-10s", std::string(synth::class_name(t)).c_str());
    for (int p = 0; p < C; ++p) std::printf(" %9lld", static_cast<long long>(r.confusion.at(t, p)));
    std::printf(" %9.2f\n", r.per_class_accuracy[static_cast<std::size_t>(t)]);
  }
  std::printf("overall accuracy %.4f\nmacro accuracy   %.4f\n", r.overall_accuracy, r.macro_accuracy);
  std::printf("auc:");
  for (int c = 0; c < C; ++c) std::printf(" %s=%.4f", std::string(synth::class_name(c)).c_str(), r.auc[static_cast<std::size_t>(c)]);
  std::printf(" micro=%.4f\n", r.micro_auc);
}

std::vector<std::string> class_names(int classes) {
  std::vector<std::string> names;
  for (int c = 0; c < classes; ++c) names.emplace_back(synth::class_name(c));
  return names;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthCmd {
  CorpusFlags corpus;
  std::string out;
  int frame = 5;
  std::string pcap_dir;
  std::string csv;

  void add(CLI::App* app) {
    corpus.add(app);
    app->add_option("--out", out, "Output NEDS dataset")->required();
    app->add_option("--frame", frame, "Packets per sequence")->check(CLI::Range(3, 7));
    app->add_option("--pcap-dir", pcap_dir, "Also write one pcap per class here");
    app->add_option("--csv", csv, "Also write a CSV export here");
  }

  int run(unsigned workers) {
    const auto traces = corpus.build(workers);
    const data::Dataset ds = train::build_dataset(traces, frame, corpus.class_count());
    if (!pcap_dir.empty()) {
      std::filesystem::create_directories(pcap_dir);
      for (int c = 0; c < corpus.class_count(); ++c) {
        std::vector<trace::PacketRecord> packets;
        for (const auto& lt : traces)
          if (lt.label == c) packets.insert(packets.end(), lt.trace.packets.begin(), lt.trace.packets.end());
        trace::write_pcap_file(std::filesystem::path(pcap_dir) / (std::string(synth::class_name(c)) + ".pcap"),
                               packets);
      }
    }
    const std::size_t n = data::write_dataset(ds, out);
    if (!csv.empty()) data::write_dataset_csv(ds, csv);
    std::printf("flows %zu, samples %zu, frame %d -> %s\n", traces.size(), n, frame, out.c_str());
    print_histogram(ds);
    return 0;
  }
};

struct ExtractCmd {
  std::string pcap;
  std::string label;
  int frame = 5;
  int classes = synth::kEvasionClassCount;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--pcap", pcap, "Input capture")->required();
    app->add_option("--label", label, "Class name (e.g. IP_FRAG) or code")->required();
    app->add_option("--frame", frame, "Packets per sequence")->check(CLI::Range(3, 7));
    app->add_option("--classes", classes, "Class count recorded in the file")->check(CLI::Range(1, 255));
    app->add_option("--out", out, "Output NEDS dataset")->required();
  }

  int resolve_label() const {
    if (const auto l = synth::parse_label(label)) return static_cast<int>(*l);
    try {
      std::size_t used = 0;
      const int code = std::stoi(label, &used);
      if (used == label.size() && code >= 0 && code < classes) return code;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::kInvalidArgument, "unknown label '" + label + "'");
  }

  int run(unsigned) {
    const int code = resolve_label();
    const trace::PcapCapture cap = trace::parse_pcap_file(pcap);
    data::Dataset ds;
    ds.class_count = classes;
    std::size_t short_flows = 0;
    for (const auto& flow : cap.flows) {
      if (flow.packets.size() < static_cast<std::size_t>(features::kMinFrame)) {
        ++short_flows;
        continue;
      }
      for (auto& s : features::extract_sequences(flow, frame, code)) ds.samples.push_back(std::move(s));
    }
    std::printf("frames %zu, tcp packets %zu, non-tcp %zu, malformed %zu\n", cap.stats.frames,
                cap.stats.tcp_packets, cap.stats.skipped_non_tcp, cap.stats.malformed);
    std::printf("flows %zu (%zu shorter than 3 packets), samples %zu\n", cap.flows.size(), short_flows, ds.size());
    if (ds.samples.empty()) {
      std::fprintf(stderr, "warning: no samples extracted from %s; nothing written\n", pcap.c_str());
      return 0;
    }
    data::write_dataset(ds, out);
    std::printf("wrote %s\n", out.c_str());
    return 0;
  }
};

data::Dataset load_side(const std::string& path, const SplitFlags& split, bool train_side) {
  data::Dataset ds = data::read_dataset(path);
  if (split.use_all) return ds;
  auto parts = data::split(ds, split.spec());
  return train_side ? std::move(parts.first) : std::move(parts.second);
}

struct TrainCmd {
  std::string data_path;
  std::string out;
  std::string loss_csv;
  ModelFlags model;
  OptimizerFlags optimizer;
  SplitFlags split;
  int frame = 0;
  int batch = 50;
  int epochs = 10;
  std::uint64_t max_iterations = 0;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  bool scaler = false;
  bool float32 = false;

  void add(CLI::App* app) {
    app->add_option("--data", data_path, "NEDS dataset")->required();
    app->add_option("--out", out, "Output BLSM checkpoint")->required();
    app->add_option("--loss-csv", loss_csv, "Per-batch loss history");
    model.add(app);
    optimizer.add(app);
    split.add(app);
    app->add_option("--frame", frame, "Model frame (default: longest sample)");
    app->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
    app->add_option("--epochs", epochs, "Epochs")->check(CLI::PositiveNumber);
    app->add_option("--max-iterations", max_iterations, "Stop after this many batches (0 = no cap)");
    app->add_option("--dropout", dropout, "Dropout rate");
    app->add_option("--seed", seed, "Initialization and shuffling seed");
    app->add_flag("--scaler", scaler, "Standardize features with train-set statistics");
    app->add_flag("--float32", float32, "Single-precision forward/backward");
  }

  int run(unsigned) {
    const data::Dataset ds = load_side(data_path, split, true);
    train::TrainConfig cfg;
    model.apply(cfg.model);
    cfg.model.classes = ds.class_count;
    int longest = 0;
    for (const auto& s : ds.samples) longest = std::max(longest, static_cast<int>(s.rows.size()));
    cfg.model.frame = frame > 0 ? frame : longest;
    cfg.optimizer = optimizer.resolve();
    cfg.batch_size = batch;
    cfg.epochs = epochs;
    cfg.max_iterations = max_iterations;
    cfg.dropout = dropout;
    cfg.seed = seed;
    cfg.use_scaler = scaler;
    cfg.single_precision = float32;
    cfg.checkpoint_path = out;
    std::printf("training on %zu samples, %zu parameters\n", ds.size(), nn::parameter_count(cfg.model));
    const auto result = train::train(ds, cfg, [](int epoch, double loss, double secs) {
      std::printf("epoch %3d  loss %.6f  %.2fs\n", epoch + 1, loss, secs);
      std::fflush(stdout);
    });
    if (!loss_csv.empty()) train::write_loss_csv(result.loss_history, loss_csv);
    std::printf("iterations %llu, final loss %.6f -> %s\n", static_cast<unsigned long long>(result.iterations),
                result.loss_history.empty() ? 0.0 : result.loss_history.back(), out.c_str());
    return 0;
  }
};

struct EvalCmd {
  std::string data_path;
  std::string checkpoint;
  std::string confusion_csv;
  std::string roc_csv;
  SplitFlags split;

  void add(CLI::App* app) {
    app->add_option("--data", data_path, "NEDS dataset")->required();
    app->add_option("--checkpoint", checkpoint, "BLSM checkpoint")->required();
    app->add_option("--confusion-csv", confusion_csv);
    app->add_option("--roc-csv", roc_csv);
    split.add(app);
  }

  int run(unsigned workers) {
    const nn::Checkpoint ckpt = nn::load_checkpoint(checkpoint);
    const data::Dataset ds = load_side(data_path, split, false);
    const metrics::EvalReport report = train::evaluate(ckpt, ds, workers);
    std::printf("test samples %zu\n", ds.size());
    print_report(report);
    const auto names = class_names(ckpt.config.classes);
    if (!confusion_csv.empty()) metrics::write_confusion_csv(report.confusion, names, confusion_csv);
    if (!roc_csv.empty()) metrics::write_roc_csv(report, names, roc_csv);
    std::printf("elapsed %.2fs\n", report.wall_time_seconds);
    return 0;
  }
};

struct SweepCmd {
  CorpusFlags corpus;
  ModelFlags model{64};
  SplitFlags split;
  std::string optimizers = "adam";
  std::string lrs = "0.001";
  std::string dropouts = "0";
  std::string batches = "50";
  std::string frames = "3,4,5,6,7";
  int epochs = 3;
  std::uint64_t train_seed = 0;
  std::string out;

  void add(CLI::App* app) {
    corpus.add(app);
    model.add(app);
    split.add(app);
    app->add_option("--optimizers", optimizers, "Comma-separated optimizer names");
    app->add_option("--lrs", lrs, "Comma-separated learning rates");
    app->add_option("--dropouts", dropouts, "Comma-separated dropout rates");
    app->add_option("--batches", batches, "Comma-separated batch sizes");
    app->add_option("--frames", frames, "Comma-separated frame sizes (3-7)");
    app->add_option("--epochs", epochs, "Epochs per run")->check(CLI::PositiveNumber);
    app->add_option("--train-seed", train_seed, "Initialization and shuffling seed");
    app->add_option("--out", out, "Output CSV")->required();
  }

  int run(unsigned workers) {
    train::SweepGrid grid;
    grid.optimizers = parse_kinds(optimizers);
    grid.lrs = parse_list<double>(lrs, "--lrs");
    grid.dropouts = parse_list<double>(dropouts, "--dropouts");
    grid.batch_sizes = parse_list<int>(batches, "--batches");
    grid.frames = parse_list<int>(frames, "--frames");
    for (int f : grid.frames)
      if (f < features::kMinFrame || f > features::kMaxFrame) {
        throw Error(ErrorCode::kInvalidArgument, "frame " + std::to_string(f) + " outside [3, 7]");
      }
    train::TrainConfig base;
    model.apply(base.model);
    base.model.classes = corpus.class_count();
    base.epochs = epochs;
    base.seed = train_seed;
    const auto traces = corpus.build(workers);
    const int classes = corpus.class_count();
    const auto spec = split.spec();
    const auto rows = train::sweep(grid, base, [&](int frame) {
      return data::split(train::build_dataset(traces, frame, classes), spec);
    }, workers);
    train::write_sweep_csv(rows, grid.frames, out);
    std::printf("%-17s %8s %7s %5s", "optimizer", "lr", "dropout", "batch");
    for (int f : grid.frames) std::printf("   L%d   ", f);
    std::printf("\n");
    for (const auto& r : rows) {
      std::printf("%-17s %8g %7g %5d", std::string(optim::to_string(r.optimizer)).c_str(), r.lr, r.dropout,
                  r.batch_size);
      for (int f : grid.frames) {
        const auto it = r.accuracy.find(f);
        if (it == r.accuracy.end()) {
          std::printf("  failed ");
        } else {
          std::printf("  %6.2f ", 100.0 * it->second);
        }
      }
      std::printf("%s\n", r.error.empty() ? "" : ("  " + r.error).c_str());
    }
    std::printf("wrote %s\n", out.c_str());
    return 0;
  }
};

struct BenchCmd {
  CorpusFlags corpus;
  ModelFlags model{64};
  std::string batches = "10,50,200";
  int frame = 5;
  int epochs = 1;
  std::string out;

  void add(CLI::App* app) {
    corpus.add(app);
    model.add(app);
    app->add_option("--batches", batches, "Ascending comma-separated batch sizes");
    app->add_option("--frame", frame)->check(CLI::Range(3, 7));
    app->add_option("--epochs", epochs, "Epochs timed per batch size")->check(CLI::PositiveNumber);
    app->add_option("--out", out, "Output CSV");
  }

  int run(unsigned workers) {
    const auto sizes = parse_list<int>(batches, "--batches");
    train::TrainConfig cfg;
    model.apply(cfg.model);
    cfg.model.classes = corpus.class_count();
    cfg.model.frame = frame;
    const auto traces = corpus.build(workers);
    const data::Dataset ds = train::build_dataset(traces, frame, corpus.class_count());
    const auto rows = train::timing_bench(sizes, cfg, ds, epochs);
    std::printf("samples %zu\n%10s %18s\n", ds.size(), "batch", "seconds/epoch");
    for (const auto& r : rows) std::printf("%10d %18.3f\n", r.batch_size, r.seconds_per_epoch);
    if (!out.empty()) train::write_timing_csv(rows, out);
    return 0;
  }
};

struct GradCheckCmd {
  std::uint64_t seed = 0;
  int configs = 5;
  int input_dim = 4;
  int hidden = 6;
  int steps = 5;
  int classes = 3;
  int batch = 2;
  int layers = 2;
  double tolerance = 1e-4;

  void add(CLI::App* app) {
    app->add_option("--seed", seed);
    app->add_option("--configs", configs, "Random models checked")->check(CLI::PositiveNumber);
    app->add_option("--input-dim", input_dim)->check(CLI::PositiveNumber);
    app->add_option("--hidden", hidden)->check(CLI::PositiveNumber);
    app->add_option("--steps", steps)->check(CLI::PositiveNumber);
    app->add_option("--classes", classes)->check(CLI::Range(2, 255));
    app->add_option("--batch", batch)->check(CLI::PositiveNumber);
    app->add_option("--layers", layers)->check(CLI::Range(1, 2));
    app->add_option("--tolerance", tolerance, "Maximum relative error for PASS");
  }

  int run(unsigned) {
    double worst = 0.0;
    for (int k = 0; k < configs; ++k) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
      nn::ModelConfig mc;
      mc.input_dim = input_dim;
      mc.hidden = hidden;
      mc.classes = classes;
      mc.layers = layers;
      mc.frame = steps;
      mc.readout = k % 2 == 0 ? nn::Readout::kFinalState : nn::Readout::kStepMean;
      const nn::BiLstm<double> model(mc, rng.next());
      nn::SequenceBatch<double> b(steps, batch, input_dim);
      std::vector<int> labels;
      for (int s = 0; s < batch; ++s) {
        b.lengths[static_cast<std::size_t>(s)] = s == 0 ? steps : static_cast<int>(rng.uniform_int(1, steps));
        labels.push_back(static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(classes))));
      }
      for (auto& m : b.inputs)
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
      const auto r = nn::grad_check(model, b, labels);
      worst = std::max(worst, r.max_rel_error);
      std::printf("config %d: params %zu, max relative error %.3e (index %zu, analytic %.6e, numeric %.6e)\n", k,
                  model.params().size(), r.max_rel_error, r.worst_index, r.analytic, r.numeric);
    }
    const bool pass = worst < tolerance;
    std::printf("max relative error %.3e %s\n", worst, pass ? "PASS" : "FAIL");
    return pass ? 0 : kExitNumeric;
  }
};

std::set<std::string> option_keys(const CLI::App* app) {
  std::set<std::string> keys{"workers"};
  for (const CLI::Option* opt : app->get_options()) {
    for (const auto& name : opt->get_lnames()) {
      if (name != "help") keys.insert(name);
    }
  }
  return keys;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evasion-technique classification with bidirectional LSTMs over packet traces", "evdet"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::string config_path;
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--config", config_path,
                 std::string("key=value run configuration (default from $") + kConfigEnv + ")");
  app.add_option("--workers", workers, "Worker threads for synthesis and evaluation")->check(CLI::PositiveNumber);

  SynthCmd synth_cmd;
  ExtractCmd extract_cmd;
  TrainCmd train_cmd;
  EvalCmd eval_cmd;
  SweepCmd sweep_cmd;
  BenchCmd bench_cmd;
  GradCheckCmd gradcheck_cmd;
  struct Entry {
    CLI::App* app;
    std::function<int(unsigned)> run;
  };
  std::vector<Entry> entries;
  auto add = [&](auto& cmd, const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    cmd.add(sub);
    entries.push_back({sub, [&cmd](unsigned w) { return cmd.run(w); }});
  };
  add(synth_cmd, "synth", "Generate a labeled synthetic corpus as a NEDS dataset");
  add(extract_cmd, "extract", "Extract feature sequences from a pcap");
  add(train_cmd, "train", "Train a model on a NEDS dataset");
  add(eval_cmd, "eval", "Evaluate a checkpoint: confusion matrix, accuracy, ROC/AUC");
  add(sweep_cmd, "sweep", "Hyperparameter grid over optimizer, lr, dropout, batch and frame");
  add(bench_cmd, "bench", "Seconds per epoch for several batch sizes");
  add(gradcheck_cmd, "gradcheck", "Finite-difference check of the analytic gradient");

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    // Config values go in as flags ahead of the user's own, so the command
    // line wins under the take-last policy.
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) {
      if (const char* env = std::getenv(kConfigEnv)) path = env;
    }
    if (!path.empty()) {
      auto sub_pos = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
        return std::any_of(entries.begin(), entries.end(), [&](const Entry& e) { return e.app->get_name() == a; });
      });
      if (sub_pos != args.end()) {
        const auto entry = std::find_if(entries.begin(), entries.end(),
                                        [&](const Entry& e) { return e.app->get_name() == *sub_pos; });
        cli::RunConfig cfg = cli::load_run_config(path);
        cli::check_keys(cfg, option_keys(entry->app), *sub_pos);
        std::vector<std::string> globals;
        if (auto w = cfg.values.find("workers"); w != cfg.values.end()) {
          globals.push_back("--workers=" + w->second);
          cfg.values.erase(w);
        }
        const auto injected = cli::to_arguments(cfg);
        const auto pos = sub_pos - args.begin();
        args.insert(args.begin() + pos + 1, injected.begin(), injected.end());
        args.insert(args.begin(), globals.begin(), globals.end());
      }
    }
  } catch (const Error& e) {
    std::cerr << "evdet: " << e.what() << '\n';
    return exit_code_for(e.code());
  }

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    for (const auto& e : entries)
      if (e.app->parsed()) return e.run(workers);
  } catch (const Error& e) {
    std::cerr << "evdet: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "evdet: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
