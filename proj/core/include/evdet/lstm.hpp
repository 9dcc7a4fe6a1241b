#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "evdet/features.hpp"

namespace evdet::nn {

enum class Readout : std::uint8_t {
  kFinalState = 0,  // concat(last forward state, first-step backward state)
  kStepMean = 1,    // mean over real steps of the per-step concatenated outputs
};

struct ModelConfig {
  int input_dim = static_cast<int>(features::kFeatureDim);
  int hidden = 128;
  int classes = 8;
  int layers = 2;
  int frame = 5;
  bool bidirectional = true;
  Readout readout = Readout::kFinalState;

  int directions() const { return bidirectional ? 2 : 1; }
  int representation_dim() const { return directions() * hidden; }
  int layer_input_dim(int layer) const { return layer == 0 ? input_dim : representation_dim(); }

  /// Throws Error(kInvalidArgument) naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Offsets of each tensor inside the flat parameter vector.
///
/// Order: for each layer, for each direction (forward, then backward when
/// bidirectional): w_x (4H x D_in), w_h (4H x H), b (4H); then the head
/// w (C x R) and b (C). Matrices are row-major; gate blocks are i, f, g, o.
class ParamLayout {
 public:
  struct Cell {
    std::size_t w_x = 0;
    std::size_t w_h = 0;
    std::size_t b = 0;
    int input_dim = 0;
  };

  explicit ParamLayout(const ModelConfig& config);

  const Cell& cell(int layer, int direction) const;
  std::size_t head_w() const { return head_w_; }
  std::size_t head_b() const { return head_b_; }
  std::size_t size() const { return size_; }

 private:
  int directions_;
  std::vector<Cell> cells_;
  std::size_t head_w_ = 0;
  std::size_t head_b_ = 0;
  std::size_t size_ = 0;
};

std::size_t parameter_count(const ModelConfig& config);

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowArray = Eigen::Array<T, 1, Eigen::Dynamic>;

template <typename T>
struct LstmCellParams {
  Mat<T> w_x;  // 4H x D
  Mat<T> w_h;  // 4H x H
  Vec<T> b;    // 4H
};

template <typename T>
struct CellStep {
  Vec<T> h, c;
  Vec<T> i, f, g, o;
};

/// Single LSTM step on one input vector. Throws Error(kShapeMismatch).
template <typename T>
CellStep<T> lstm_cell_forward(const Vec<T>& x, const Vec<T>& h_prev, const Vec<T>& c_prev,
                              const LstmCellParams<T>& p);

/// Padded batch; column b of every step matrix belongs to sample b. Steps at
/// or past lengths[b] are padding and never influence outputs.
template <typename T>
struct SequenceBatch {
  SequenceBatch() = default;
  SequenceBatch(int steps, int batch, int dim);

  int steps() const { return static_cast<int>(inputs.size()); }
  int batch() const { return static_cast<int>(lengths.size()); }
  int dim() const { return inputs.empty() ? 0 : static_cast<int>(inputs.front().rows()); }
  bool real(int step, int b) const { return step < lengths[static_cast<std::size_t>(b)]; }

  void set_row(int step, int b, std::span<const double> values);

  std::vector<Mat<T>> inputs;  // steps x (dim x batch)
  std::vector<int> lengths;
};

/// Builds a batch from variable-length feature sequences padded to `steps`.
template <typename T>
SequenceBatch<T> make_batch(std::span<const std::vector<features::FeatureVector>> sequences, int steps);

template <typename T>
struct DirectionTape {
  std::vector<Mat<T>> x, i, f, g, o, c, tanh_c, h;
  std::vector<RowArray<T>> mask;
};

/// Activations cached by forward() for exactly one backward() call.
template <typename T>
struct ForwardTape {
  struct Layer {
    std::array<DirectionTape<T>, 2> dirs;
    std::vector<Mat<T>> input_dropout;  // per step, empty when unused
  };
  std::vector<Layer> layers;
  std::vector<Mat<T>> top_outputs;  // per step, R x B (step-mean readout)
  Mat<T> representation;            // R x B, after dropout
  Mat<T> representation_dropout;    // empty when unused
  Mat<T> logits;                    // C x B
  std::vector<int> lengths;
  int steps = 0;
  bool filled = false;
  bool consumed = false;
};

struct ForwardOptions {
  bool train = false;
  double dropout = 0.0;
  std::uint64_t dropout_seed = 0;
};

template <typename T>
struct LossResult {
  T loss = 0;
  Mat<T> probs;  // C x B, columns sum to 1
};

/// Mean cross-entropy of column-wise softmax. `logits` is C x B.
template <typename T>
LossResult<T> softmax_xent(const Mat<T>& logits, std::span<const int> labels);

/// Deterministic Bernoulli keep-mask (1 = keep) drawn from `seed`.
std::vector<std::uint8_t> dropout_mask(std::size_t n, double rate, std::uint64_t seed);

/// Inverted dropout in place: kept entries scale by 1/(1-rate). Identity in
/// eval mode or with rate 0.
template <typename T>
void dropout_forward(std::span<T> activations, double rate, std::uint64_t seed, bool train_mode);

/// Stacked (bi)directional LSTM with a softmax head over a flat parameter
/// vector. Gradients share the parameter layout.
template <typename T>
class BiLstm {
 public:
  /// Xavier-uniform weights from `seed`, forget-gate bias 1, other biases 0.
  BiLstm(const ModelConfig& config, std::uint64_t seed);
  BiLstm(const ModelConfig& config, std::vector<T> params);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }

  LstmCellParams<T> cell_params(int layer, int direction) const;
  void set_cell_params(int layer, int direction, const LstmCellParams<T>& p);
  Mat<T> head_weights() const;
  Vec<T> head_bias() const;
  void set_head(const Mat<T>& w, const Vec<T>& b);

  /// Returns C x B logits and fills `tape`. Throws Error(kEmptySequence)
  /// for a zero-length sample and Error(kShapeMismatch) for bad shapes.
  Mat<T> forward(const SequenceBatch<T>& batch, ForwardTape<T>& tape, const ForwardOptions& options = {}) const;

  /// Gradient of the mean cross-entropy with respect to params().
  /// Throws Error(kTapeReuse) if `tape` was already consumed.
  std::vector<T> backward(ForwardTape<T>& tape, std::span<const int> labels) const;

  /// Per-direction hidden states of the top layer, for structural checks:
  /// index [direction][iteration] in processing order.
  std::array<std::vector<Mat<T>>, 2> top_states(const ForwardTape<T>& tape) const;

 private:
  ModelConfig config_;
  ParamLayout layout_;
  std::vector<T> params_;
};

template <typename T>
struct Prediction {
  std::vector<int> labels;
  Mat<T> probs;  // C x B
};

/// Argmax of softmax probabilities; ties go to the lowest class code.
template <typename T>
Prediction<T> predict(const BiLstm<T>& model, const SequenceBatch<T>& batch);

template <typename T>
int argmax_lowest(const Eigen::Ref<const Vec<T>>& column);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central-difference check of backward() over every parameter.
GradCheckResult grad_check(const BiLstm<double>& model, const SequenceBatch<double>& batch,
                           std::span<const int> labels, double eps = 1e-5);

/// Same comparison against a caller-supplied analytic gradient.
GradCheckResult compare_gradient(const BiLstm<double>& model, const SequenceBatch<double>& batch,
                                 std::span<const int> labels, std::span<const double> analytic,
                                 double eps = 1e-5);

/// Loss of a forward pass in eval mode.
double evaluate_loss(const BiLstm<double>& model, const SequenceBatch<double>& batch, std::span<const int> labels);

extern template class BiLstm<double>;
extern template class BiLstm<float>;
extern template class BiLstm<long double>;

}  // namespace evdet::nn
