#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace evdet::metrics {

/// C x C counts, rows = true class, columns = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);
  static ConfusionMatrix from_counts(std::vector<std::vector<std::int64_t>> counts);

  void add(int truth, int predicted, std::int64_t count = 1);

  int classes() const { return static_cast<int>(counts_.size()); }
  std::int64_t at(int truth, int predicted) const;
  std::int64_t row_sum(int truth) const;
  std::int64_t total() const;
  std::int64_t trace() const;
  const std::vector<std::vector<std::int64_t>>& counts() const { return counts_; }

  /// Percent correct per true class; 0 for a class with no samples.
  std::vector<double> per_class_accuracy() const;
  /// Fraction correct over all samples.
  double overall_accuracy() const;
  /// Mean of per-class fractions over classes that have samples.
  double macro_accuracy() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::vector<std::vector<std::int64_t>> counts_;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint&) const = default;
};

/// Threshold sweep over the distinct scores in descending order; starts at
/// (0, 0) and ends at (1, 1). Tied scores move in one step.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> positive);
double trapezoid_auc(std::span<const RocPoint> curve);
/// Probability a random positive outscores a random negative (ties count
/// one half). 0.5 when either class is empty.
double rank_auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

struct EvalReport {
  ConfusionMatrix confusion{1};
  std::vector<double> per_class_accuracy;  // percent
  double overall_accuracy = 0.0;           // fraction
  double macro_accuracy = 0.0;             // fraction
  std::vector<std::vector<RocPoint>> roc;  // one-vs-rest per class
  std::vector<double> auc;
  std::vector<RocPoint> micro_roc;
  double micro_auc = 0.0;
  double wall_time_seconds = 0.0;
};

/// Builds the report from true labels, predicted labels and per-sample
/// class probabilities (probs[i] has one entry per class).
EvalReport make_report(std::span<const int> truth, std::span<const int> predicted,
                       std::span<const std::vector<double>> probs, int classes);

void write_confusion_csv(const ConfusionMatrix& cm, std::span<const std::string> names,
                         const std::filesystem::path& path);
/// class,fpr,tpr rows; class "micro" for the micro-averaged curve.
void write_roc_csv(const EvalReport& report, std::span<const std::string> names, const std::filesystem::path& path);

}  // namespace evdet::metrics
