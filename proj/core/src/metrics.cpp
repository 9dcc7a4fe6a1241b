#include "evdet/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>

#include "evdet/error.hpp"

namespace evdet::metrics {

ConfusionMatrix::ConfusionMatrix(int classes) {
  if (classes < 1) throw Error(ErrorCode::kInvalidArgument, "confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(classes), std::vector<std::int64_t>(static_cast<std::size_t>(classes), 0));
}

ConfusionMatrix ConfusionMatrix::from_counts(std::vector<std::vector<std::int64_t>> counts) {
  ConfusionMatrix cm(static_cast<int>(counts.size()));
  for (const auto& row : counts) {
    if (row.size() != counts.size()) throw Error(ErrorCode::kShapeMismatch, "confusion matrix must be square");
  }
  cm.counts_ = std::move(counts);
  return cm;
}

void ConfusionMatrix::add(int truth, int predicted, std::int64_t count) {
  if (truth < 0 || truth >= classes() || predicted < 0 || predicted >= classes()) {
    throw Error(ErrorCode::kClassMismatch, "class index outside confusion matrix");
  }
  counts_[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)] += count;
}

std::int64_t ConfusionMatrix::at(int truth, int predicted) const {
  return counts_.at(static_cast<std::size_t>(truth)).at(static_cast<std::size_t>(predicted));
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  const auto& row = counts_.at(static_cast<std::size_t>(truth));
  return std::accumulate(row.begin(), row.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (int c = 0; c < classes(); ++c) t += row_sum(c);
  return t;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (int c = 0; c < classes(); ++c) t += at(c, c);
  return t;
}

std::vector<double> ConfusionMatrix::per_class_accuracy() const {
  std::vector<double> out;
  for (int c = 0; c < classes(); ++c) {
    const auto n = row_sum(c);
    out.push_back(n == 0 ? 0.0 : 100.0 * static_cast<double>(at(c, c)) / static_cast<double>(n));
  }
  return out;
}

double ConfusionMatrix::overall_accuracy() const {
  const auto n = total();
  return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
}

double ConfusionMatrix::macro_accuracy() const {
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < classes(); ++c) {
    const auto n = row_sum(c);
    if (n == 0) continue;
    sum += static_cast<double>(at(c, c)) / static_cast<double>(n);
    ++present;
  }
  return present == 0 ? 0.0 : sum / present;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw Error(ErrorCode::kShapeMismatch, "scores and labels differ in size");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double p = 0.0, n = 0.0;
  for (auto v : positive) (v ? p : n) += 1.0;

  std::vector<RocPoint> curve{{0.0, 0.0}};
  double tp = 0.0, fp = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    for (; k < order.size() && scores[order[k]] == s; ++k) (positive[order[k]] ? tp : fp) += 1.0;
    curve.push_back({n > 0 ? fp / n : 0.0, p > 0 ? tp / p : 0.0});
  }
  if (curve.back() != RocPoint{1.0, 1.0}) curve.push_back({1.0, 1.0});
  return curve;
}

double trapezoid_auc(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) * 0.5;
  }
  return area;
}

double rank_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw Error(ErrorCode::kShapeMismatch, "scores and labels differ in size");
  // Average ranks over ties, then Mann-Whitney U.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = avg;
    i = j;
  }
  double p = 0.0, n = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (positive[i]) {
      p += 1.0;
      rank_sum += rank[i];
    } else {
      n += 1.0;
    }
  }
  if (p == 0.0 || n == 0.0) return 0.5;
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

EvalReport make_report(std::span<const int> truth, std::span<const int> predicted,
                       std::span<const std::vector<double>> probs, int classes) {
  if (truth.empty()) throw Error(ErrorCode::kEmptyTestSet, "no test samples");
  if (truth.size() != predicted.size() || truth.size() != probs.size()) {
    throw Error(ErrorCode::kShapeMismatch, "truth, predictions and probabilities differ in size");
  }
  EvalReport r;
  r.confusion = ConfusionMatrix(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (probs[i].size() != static_cast<std::size_t>(classes)) {
      throw Error(ErrorCode::kClassMismatch, "probability vector has wrong class count");
    }
    r.confusion.add(truth[i], predicted[i]);
  }
  r.per_class_accuracy = r.confusion.per_class_accuracy();
  r.overall_accuracy = r.confusion.overall_accuracy();
  r.macro_accuracy = r.confusion.macro_accuracy();

  std::vector<double> scores(truth.size());
  std::vector<std::uint8_t> pos(truth.size());
  std::vector<double> micro_scores;
  std::vector<std::uint8_t> micro_pos;
  micro_scores.reserve(truth.size() * static_cast<std::size_t>(classes));
  micro_pos.reserve(micro_scores.capacity());
  for (int c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < truth.size(); ++i) {
      scores[i] = probs[i][static_cast<std::size_t>(c)];
      pos[i] = truth[i] == c ? 1 : 0;
    }
    micro_scores.insert(micro_scores.end(), scores.begin(), scores.end());
    micro_pos.insert(micro_pos.end(), pos.begin(), pos.end());
    r.roc.push_back(roc_curve(scores, pos));
    r.auc.push_back(trapezoid_auc(r.roc.back()));
  }
  r.micro_roc = roc_curve(micro_scores, micro_pos);
  r.micro_auc = trapezoid_auc(r.micro_roc);
  return r;
}

namespace {

std::string name_of(std::span<const std::string> names, int c) {
  return static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)] : std::to_string(c);
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  out.precision(10);
  return out;
}

}  // namespace

void write_confusion_csv(const ConfusionMatrix& cm, std::span<const std::string> names,
                         const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "true\\predicted";
  for (int c = 0; c < cm.classes(); ++c) out << ',' << name_of(names, c);
  out << ",accuracy_pct\n";
  const auto acc = cm.per_class_accuracy();
  for (int t = 0; t < cm.classes(); ++t) {
    out << name_of(names, t);
    for (int p = 0; p < cm.classes(); ++p) out << ',' << cm.at(t, p);
    out << ',' << acc[static_cast<std::size_t>(t)] << '\n';
  }
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed: " + path.string());
}

void write_roc_csv(const EvalReport& report, std::span<const std::string> names, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "class,fpr,tpr\n";
  for (std::size_t c = 0; c < report.roc.size(); ++c)
    for (const auto& pt : report.roc[c]) out << name_of(names, static_cast<int>(c)) << ',' << pt.fpr << ',' << pt.tpr << '\n';
  for (const auto& pt : report.micro_roc) out << "micro," << pt.fpr << ',' << pt.tpr << '\n';
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed: " + path.string());
}

}  // namespace evdet::metrics
