#include "evdet/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "evdet/error.hpp"
#include "evdet/random.hpp"

namespace evdet::nn {
namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMajor<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMajor<T>>;
template <typename T>
using VecMap = Eigen::Map<Vec<T>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Vec<T>>;

[[noreturn]] void shape_error(const std::string& what) { throw Error(ErrorCode::kShapeMismatch, what); }

template <typename T>
struct CellRef {
  ConstMatMap<T> w_x;
  ConstMatMap<T> w_h;
  ConstVecMap<T> b;
};

template <typename T>
struct CellGrad {
  MatMap<T> w_x;
  MatMap<T> w_h;
  VecMap<T> b;
};

template <typename T>
CellRef<T> cell_ref(const ParamLayout& layout, const ModelConfig& cfg, std::span<const T> params, int layer,
                    int dir) {
  const auto& c = layout.cell(layer, dir);
  const int g = 4 * cfg.hidden;
  return CellRef<T>{ConstMatMap<T>(params.data() + c.w_x, g, c.input_dim),
                    ConstMatMap<T>(params.data() + c.w_h, g, cfg.hidden), ConstVecMap<T>(params.data() + c.b, g)};
}

template <typename T>
CellGrad<T> cell_grad(const ParamLayout& layout, const ModelConfig& cfg, std::span<T> grads, int layer, int dir) {
  const auto& c = layout.cell(layer, dir);
  const int g = 4 * cfg.hidden;
  return CellGrad<T>{MatMap<T>(grads.data() + c.w_x, g, c.input_dim), MatMap<T>(grads.data() + c.w_h, g, cfg.hidden),
                     VecMap<T>(grads.data() + c.b, g)};
}

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  using T = typename Derived::Scalar;
  return (T(1) + (-x).exp()).inverse();
}

template <typename T>
RowArray<T> step_mask(const std::vector<int>& lengths, int step) {
  RowArray<T> m(static_cast<Eigen::Index>(lengths.size()));
  for (std::size_t b = 0; b < lengths.size(); ++b) m(static_cast<Eigen::Index>(b)) = step < lengths[b] ? T(1) : T(0);
  return m;
}

// Iteration k of the backward direction reads position lengths[b]-1-k.
template <typename T>
std::vector<Mat<T>> reverse_steps(const std::vector<Mat<T>>& positions, const std::vector<int>& lengths) {
  std::vector<Mat<T>> out;
  out.reserve(positions.size());
  const Eigen::Index rows = positions.front().rows();
  const auto cols = static_cast<Eigen::Index>(lengths.size());
  for (std::size_t k = 0; k < positions.size(); ++k) {
    Mat<T> m = Mat<T>::Zero(rows, cols);
    for (Eigen::Index b = 0; b < cols; ++b) {
      const int len = lengths[static_cast<std::size_t>(b)];
      if (static_cast<int>(k) < len) m.col(b) = positions[static_cast<std::size_t>(len - 1 - static_cast<int>(k))].col(b);
    }
    out.push_back(std::move(m));
  }
  return out;
}

template <typename T>
void direction_forward(const CellRef<T>& cell, std::vector<Mat<T>> xs, const std::vector<int>& lengths, int hidden,
                       DirectionTape<T>& tape) {
  const auto H = static_cast<Eigen::Index>(hidden);
  const auto B = static_cast<Eigen::Index>(lengths.size());
  const std::size_t K = xs.size();
  tape = DirectionTape<T>{};
  for (auto* v : {&tape.i, &tape.f, &tape.g, &tape.o, &tape.c, &tape.tanh_c, &tape.h}) v->reserve(K);
  tape.mask.reserve(K);

  Mat<T> h = Mat<T>::Zero(H, B);
  Mat<T> c = Mat<T>::Zero(H, B);
  Mat<T> pre(4 * H, B);
  for (std::size_t k = 0; k < K; ++k) {
    pre.noalias() = cell.w_x * xs[k];
    pre.noalias() += cell.w_h * h;
    pre.colwise() += cell.b;

    Mat<T> i = sigmoid(pre.topRows(H).array()).matrix();
    Mat<T> f = sigmoid(pre.middleRows(H, H).array()).matrix();
    Mat<T> g = pre.middleRows(2 * H, H).array().tanh().matrix();
    Mat<T> o = sigmoid(pre.bottomRows(H).array()).matrix();
    Mat<T> c_new = (f.array() * c.array() + i.array() * g.array()).matrix();
    Mat<T> tanh_c = c_new.array().tanh().matrix();
    Mat<T> h_new = (o.array() * tanh_c.array()).matrix();

    RowArray<T> m = step_mask<T>(lengths, static_cast<int>(k));
    for (Eigen::Index b = 0; b < B; ++b) {
      if (m(b) == T(0)) {
        h_new.col(b) = h.col(b);
        c_new.col(b) = c.col(b);
      }
    }
    h = h_new;
    c = c_new;
    tape.i.push_back(std::move(i));
    tape.f.push_back(std::move(f));
    tape.g.push_back(std::move(g));
    tape.o.push_back(std::move(o));
    tape.tanh_c.push_back(std::move(tanh_c));
    tape.c.push_back(std::move(c_new));
    tape.h.push_back(std::move(h_new));
    tape.mask.push_back(std::move(m));
  }
  tape.x = std::move(xs);
}

// dh_out[k] is the gradient reaching iteration k's hidden output from above
// (an empty matrix means zero). Returns per-iteration input gradients.
template <typename T>
std::vector<Mat<T>> direction_backward(const CellRef<T>& cell, CellGrad<T>& grad, const DirectionTape<T>& tape,
                                       const std::vector<Mat<T>>& dh_out, int hidden) {
  const auto H = static_cast<Eigen::Index>(hidden);
  const std::size_t K = tape.x.size();
  const Eigen::Index B = tape.x.front().cols();
  std::vector<Mat<T>> dx(K);

  Mat<T> dh_next = Mat<T>::Zero(H, B);
  Mat<T> dc_next = Mat<T>::Zero(H, B);
  Mat<T> dpre(4 * H, B);
  const Mat<T> zeros = Mat<T>::Zero(H, B);
  for (std::size_t kk = K; kk-- > 0;) {
    const RowArray<T>& m = tape.mask[kk];
    const RowArray<T> keep = T(1) - m;
    Mat<T> dh = dh_next;
    if (dh_out[kk].size() != 0) dh += dh_out[kk];

    const Mat<T>& c_prev = kk > 0 ? tape.c[kk - 1] : zeros;
    const Mat<T>& h_prev = kk > 0 ? tape.h[kk - 1] : zeros;
    const auto i = tape.i[kk].array();
    const auto f = tape.f[kk].array();
    const auto g = tape.g[kk].array();
    const auto o = tape.o[kk].array();
    const auto tc = tape.tanh_c[kk].array();

    const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic> dc =
        dc_next.array() + dh.array() * o * (T(1) - tc * tc);
    dpre.topRows(H) = (dc * g * i * (T(1) - i)).matrix();
    dpre.middleRows(H, H) = (dc * c_prev.array() * f * (T(1) - f)).matrix();
    dpre.middleRows(2 * H, H) = (dc * i * (T(1) - g * g)).matrix();
    dpre.bottomRows(H) = (dh.array() * tc * o * (T(1) - o)).matrix();
    dpre.array().rowwise() *= m;

    grad.w_x.noalias() += dpre * tape.x[kk].transpose();
    grad.w_h.noalias() += dpre * h_prev.transpose();
    grad.b += dpre.rowwise().sum();
    dx[kk].noalias() = cell.w_x.transpose() * dpre;

    Mat<T> dh_prev = cell.w_h.transpose() * dpre;
    dh_prev.array() += dh.array().rowwise() * keep;
    Mat<T> dc_prev = ((dc * f).rowwise() * m).matrix();
    dc_prev.array() += dc_next.array().rowwise() * keep;
    dh_next = std::move(dh_prev);
    dc_next = std::move(dc_prev);
  }
  return dx;
}

template <typename T>
Mat<T> dropout_matrix(Eigen::Index rows, Eigen::Index cols, double rate, std::uint64_t seed) {
  const auto keep = dropout_mask(static_cast<std::size_t>(rows * cols), rate, seed);
  Mat<T> m(rows, cols);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index idx = 0; idx < rows * cols; ++idx) m(idx) = keep[static_cast<std::size_t>(idx)] ? scale : T(0);
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (input_dim < 1) fail("input_dim must be >= 1");
  if (hidden < 1) fail("hidden must be >= 1");
  if (classes < 2) fail("classes must be >= 2");
  if (layers < 1 || layers > 2) fail("layers must be 1 or 2");
  if (frame < 1) fail("frame must be >= 1");
}

ParamLayout::ParamLayout(const ModelConfig& config) : directions_(config.directions()) {
  config.validate();
  std::size_t at = 0;
  const auto g = static_cast<std::size_t>(4 * config.hidden);
  const auto h = static_cast<std::size_t>(config.hidden);
  for (int l = 0; l < config.layers; ++l) {
    for (int d = 0; d < directions_; ++d) {
      Cell c;
      c.input_dim = config.layer_input_dim(l);
      c.w_x = at;
      at += g * static_cast<std::size_t>(c.input_dim);
      c.w_h = at;
      at += g * h;
      c.b = at;
      at += g;
      cells_.push_back(c);
    }
  }
  head_w_ = at;
  at += static_cast<std::size_t>(config.classes) * static_cast<std::size_t>(config.representation_dim());
  head_b_ = at;
  at += static_cast<std::size_t>(config.classes);
  size_ = at;
}

const ParamLayout::Cell& ParamLayout::cell(int layer, int direction) const {
  const auto idx = static_cast<std::size_t>(layer * directions_ + direction);
  if (direction < 0 || direction >= directions_ || idx >= cells_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "no cell at layer " + std::to_string(layer) + " direction " +
                                                 std::to_string(direction));
  }
  return cells_[idx];
}

std::size_t parameter_count(const ModelConfig& config) { return ParamLayout(config).size(); }

template <typename T>
CellStep<T> lstm_cell_forward(const Vec<T>& x, const Vec<T>& h_prev, const Vec<T>& c_prev, const LstmCellParams<T>& p) {
  const Eigen::Index H = h_prev.size();
  if (c_prev.size() != H || p.w_x.rows() != 4 * H || p.w_h.rows() != 4 * H || p.w_h.cols() != H ||
      p.w_x.cols() != x.size() || p.b.size() != 4 * H) {
    shape_error("LSTM cell parameters do not match input/state sizes");
  }
  const Vec<T> pre = p.w_x * x + p.w_h * h_prev + p.b;
  CellStep<T> s;
  s.i = sigmoid(pre.head(H).array()).matrix();
  s.f = sigmoid(pre.segment(H, H).array()).matrix();
  s.g = pre.segment(2 * H, H).array().tanh().matrix();
  s.o = sigmoid(pre.tail(H).array()).matrix();
  s.c = (s.f.array() * c_prev.array() + s.i.array() * s.g.array()).matrix();
  s.h = (s.o.array() * s.c.array().tanh()).matrix();
  return s;
}

template <typename T>
SequenceBatch<T>::SequenceBatch(int steps, int batch, int dim)
    : inputs(static_cast<std::size_t>(steps), Mat<T>::Zero(dim, batch)), lengths(static_cast<std::size_t>(batch), steps) {}

template <typename T>
void SequenceBatch<T>::set_row(int step, int b, std::span<const double> values) {
  auto& m = inputs.at(static_cast<std::size_t>(step));
  if (static_cast<Eigen::Index>(values.size()) != m.rows()) shape_error("row width does not match batch dim");
  for (std::size_t d = 0; d < values.size(); ++d) m(static_cast<Eigen::Index>(d), b) = static_cast<T>(values[d]);
}

template <typename T>
SequenceBatch<T> make_batch(std::span<const std::vector<features::FeatureVector>> sequences, int steps) {
  SequenceBatch<T> batch(steps, static_cast<int>(sequences.size()), static_cast<int>(features::kFeatureDim));
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    const auto& rows = sequences[b];
    if (static_cast<int>(rows.size()) > steps) shape_error("sequence longer than batch steps");
    batch.lengths[b] = static_cast<int>(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) batch.set_row(static_cast<int>(t), static_cast<int>(b), rows[t]);
  }
  return batch;
}

template <typename T>
LossResult<T> softmax_xent(const Mat<T>& logits, std::span<const int> labels) {
  const Eigen::Index C = logits.rows();
  const Eigen::Index B = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != B) shape_error("label count does not match batch");
  LossResult<T> out;
  out.probs.resize(C, B);
  T total = 0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= C) throw Error(ErrorCode::kInvalidArgument, "label " + std::to_string(y) + " out of range");
    const T mx = logits.col(b).maxCoeff();
    const auto e = (logits.col(b).array() - mx).exp();
    const T sum = e.sum();
    out.probs.col(b) = (e / sum).matrix();
    total += -(logits(y, b) - mx - std::log(sum));
  }
  out.loss = total / static_cast<T>(B);
  return out;
}

std::vector<std::uint8_t> dropout_mask(std::size_t n, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorCode::kInvalidArgument, "dropout rate must be in [0, 1)");
  std::vector<std::uint8_t> keep(n, 1);
  if (rate == 0.0) return keep;
  Rng rng(seed);
  for (auto& k : keep) k = rng.uniform() >= rate ? 1 : 0;
  return keep;
}

template <typename T>
void dropout_forward(std::span<T> activations, double rate, std::uint64_t seed, bool train_mode) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorCode::kInvalidArgument, "dropout rate must be in [0, 1)");
  if (!train_mode || rate == 0.0) return;
  const auto keep = dropout_mask(activations.size(), rate, seed);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < activations.size(); ++i) activations[i] = keep[i] ? activations[i] * scale : T(0);
}

template <typename T>
BiLstm<T>::BiLstm(const ModelConfig& config, std::uint64_t seed)
    : config_(config), layout_(config), params_(layout_.size(), T(0)) {
  Rng rng(seed);
  const auto H = static_cast<std::size_t>(config_.hidden);
  auto fill_uniform = [&](std::size_t at, std::size_t n, double limit) {
    for (std::size_t i = 0; i < n; ++i) params_[at + i] = static_cast<T>(rng.uniform(-limit, limit));
  };
  for (int l = 0; l < config_.layers; ++l) {
    for (int d = 0; d < config_.directions(); ++d) {
      const auto& c = layout_.cell(l, d);
      const auto din = static_cast<std::size_t>(c.input_dim);
      fill_uniform(c.w_x, 4 * H * din, std::sqrt(6.0 / static_cast<double>(din + H)));
      fill_uniform(c.w_h, 4 * H * H, std::sqrt(6.0 / static_cast<double>(2 * H)));
      for (std::size_t j = 0; j < H; ++j) params_[c.b + H + j] = T(1);
    }
  }
  const auto R = static_cast<std::size_t>(config_.representation_dim());
  const auto C = static_cast<std::size_t>(config_.classes);
  fill_uniform(layout_.head_w(), C * R, std::sqrt(6.0 / static_cast<double>(R + C)));
}

template <typename T>
BiLstm<T>::BiLstm(const ModelConfig& config, std::vector<T> params)
    : config_(config), layout_(config), params_(std::move(params)) {
  if (params_.size() != layout_.size()) {
    shape_error("expected " + std::to_string(layout_.size()) + " parameters, got " + std::to_string(params_.size()));
  }
}

template <typename T>
LstmCellParams<T> BiLstm<T>::cell_params(int layer, int direction) const {
  const auto ref = cell_ref<T>(layout_, config_, params_, layer, direction);
  return LstmCellParams<T>{ref.w_x, ref.w_h, ref.b};
}

template <typename T>
void BiLstm<T>::set_cell_params(int layer, int direction, const LstmCellParams<T>& p) {
  auto g = cell_grad<T>(layout_, config_, params_, layer, direction);
  if (p.w_x.rows() != g.w_x.rows() || p.w_x.cols() != g.w_x.cols() || p.w_h.rows() != g.w_h.rows() ||
      p.w_h.cols() != g.w_h.cols() || p.b.size() != g.b.size()) {
    shape_error("cell parameter shapes do not match the model");
  }
  g.w_x = p.w_x;
  g.w_h = p.w_h;
  g.b = p.b;
}

template <typename T>
Mat<T> BiLstm<T>::head_weights() const {
  return ConstMatMap<T>(params_.data() + layout_.head_w(), config_.classes, config_.representation_dim());
}

template <typename T>
Vec<T> BiLstm<T>::head_bias() const {
  return ConstVecMap<T>(params_.data() + layout_.head_b(), config_.classes);
}

template <typename T>
void BiLstm<T>::set_head(const Mat<T>& w, const Vec<T>& b) {
  if (w.rows() != config_.classes || w.cols() != config_.representation_dim() || b.size() != config_.classes) {
    shape_error("head shapes do not match the model");
  }
  MatMap<T>(params_.data() + layout_.head_w(), config_.classes, config_.representation_dim()) = w;
  VecMap<T>(params_.data() + layout_.head_b(), config_.classes) = b;
}

template <typename T>
Mat<T> BiLstm<T>::forward(const SequenceBatch<T>& batch, ForwardTape<T>& tape, const ForwardOptions& options) const {
  const int steps = batch.steps();
  const int B = batch.batch();
  if (steps < 1 || B < 1) shape_error("batch must have at least one step and one sample");
  if (batch.dim() != config_.input_dim) {
    shape_error("input dim " + std::to_string(batch.dim()) + " does not match model dim " +
                std::to_string(config_.input_dim));
  }
  for (const auto& m : batch.inputs)
    if (m.rows() != config_.input_dim || m.cols() != B) shape_error("inconsistent step matrix shape");
  for (int len : batch.lengths) {
    if (len == 0) throw Error(ErrorCode::kEmptySequence, "sample with no real steps");
    if (len < 0 || len > steps) shape_error("sample length outside [1, steps]");
  }
  const bool use_dropout = options.train && options.dropout > 0.0;
  if (use_dropout && !(options.dropout < 1.0)) throw Error(ErrorCode::kInvalidArgument, "dropout rate must be < 1");

  const auto H = static_cast<Eigen::Index>(config_.hidden);
  const bool bi = config_.bidirectional;
  tape = ForwardTape<T>{};
  tape.lengths = batch.lengths;
  tape.steps = steps;
  tape.layers.resize(static_cast<std::size_t>(config_.layers));

  std::vector<Mat<T>> positions = batch.inputs;
  for (int l = 0; l < config_.layers; ++l) {
    auto& layer = tape.layers[static_cast<std::size_t>(l)];
    if (l > 0 && use_dropout) {
      for (int p = 0; p < steps; ++p) {
        Mat<T> mask = dropout_matrix<T>(positions[0].rows(), B, options.dropout,
                                        derive_seed(options.dropout_seed, static_cast<std::uint64_t>(l * 64 + p)));
        positions[static_cast<std::size_t>(p)].array() *= mask.array();
        layer.input_dropout.push_back(std::move(mask));
      }
    }
    direction_forward(cell_ref<T>(layout_, config_, params_, l, 0), positions, batch.lengths, config_.hidden,
                      layer.dirs[0]);
    if (bi) {
      direction_forward(cell_ref<T>(layout_, config_, params_, l, 1), reverse_steps(positions, batch.lengths),
                        batch.lengths, config_.hidden, layer.dirs[1]);
    }

    std::vector<Mat<T>> outputs;
    outputs.reserve(static_cast<std::size_t>(steps));
    for (int p = 0; p < steps; ++p) {
      Mat<T> out = Mat<T>::Zero(config_.representation_dim(), B);
      for (Eigen::Index b = 0; b < B; ++b) {
        const int len = batch.lengths[static_cast<std::size_t>(b)];
        if (p >= len) continue;
        out.col(b).head(H) = layer.dirs[0].h[static_cast<std::size_t>(p)].col(b);
        if (bi) out.col(b).tail(H) = layer.dirs[1].h[static_cast<std::size_t>(len - 1 - p)].col(b);
      }
      outputs.push_back(std::move(out));
    }
    positions = std::move(outputs);
  }

  const auto& top = tape.layers.back();
  Mat<T> rep(config_.representation_dim(), B);
  if (config_.readout == Readout::kFinalState) {
    rep.topRows(H) = top.dirs[0].h.back();
    if (bi) rep.bottomRows(H) = top.dirs[1].h.back();
  } else {
    rep.setZero();
    for (int p = 0; p < steps; ++p) rep += positions[static_cast<std::size_t>(p)];
    for (Eigen::Index b = 0; b < B; ++b) rep.col(b) /= static_cast<T>(batch.lengths[static_cast<std::size_t>(b)]);
    tape.top_outputs = std::move(positions);
  }
  if (use_dropout) {
    tape.representation_dropout =
        dropout_matrix<T>(rep.rows(), rep.cols(), options.dropout, derive_seed(options.dropout_seed, 0xFFFFu));
    rep.array() *= tape.representation_dropout.array();
  }

  const ConstMatMap<T> head_w(params_.data() + layout_.head_w(), config_.classes, config_.representation_dim());
  const ConstVecMap<T> head_b(params_.data() + layout_.head_b(), config_.classes);
  Mat<T> logits = head_w * rep;
  logits.colwise() += head_b;

  tape.representation = std::move(rep);
  tape.logits = logits;
  tape.filled = true;
  return logits;
}

template <typename T>
std::vector<T> BiLstm<T>::backward(ForwardTape<T>& tape, std::span<const int> labels) const {
  if (tape.consumed) throw Error(ErrorCode::kTapeReuse, "forward tape already consumed by backward");
  if (!tape.filled) throw Error(ErrorCode::kInvalidArgument, "backward called without a forward pass");
  tape.consumed = true;

  const auto H = static_cast<Eigen::Index>(config_.hidden);
  const bool bi = config_.bidirectional;
  const auto B = tape.logits.cols();
  const int steps = tape.steps;
  const auto& lengths = tape.lengths;

  std::vector<T> grads(layout_.size(), T(0));
  std::span<T> gspan(grads);

  Mat<T> dlogits = softmax_xent<T>(tape.logits, labels).probs;
  for (Eigen::Index b = 0; b < B; ++b) dlogits(labels[static_cast<std::size_t>(b)], b) -= T(1);
  dlogits /= static_cast<T>(B);

  const ConstMatMap<T> head_w(params_.data() + layout_.head_w(), config_.classes, config_.representation_dim());
  MatMap<T>(grads.data() + layout_.head_w(), config_.classes, config_.representation_dim()).noalias() =
      dlogits * tape.representation.transpose();
  VecMap<T>(grads.data() + layout_.head_b(), config_.classes) = dlogits.rowwise().sum();

  Mat<T> drep = head_w.transpose() * dlogits;
  if (tape.representation_dropout.size() != 0) drep.array() *= tape.representation_dropout.array();

  // Gradient reaching each position's concatenated output of the layer
  // currently being processed.
  std::vector<Mat<T>> d_outputs(static_cast<std::size_t>(steps), Mat<T>::Zero(config_.representation_dim(), B));
  std::vector<Mat<T>> dh_fwd(static_cast<std::size_t>(steps));
  std::vector<Mat<T>> dh_bwd(static_cast<std::size_t>(steps));
  if (config_.readout == Readout::kFinalState) {
    dh_fwd.back() = drep.topRows(H);
    if (bi) dh_bwd.back() = drep.bottomRows(H);
  } else {
    for (Eigen::Index b = 0; b < B; ++b) {
      const int len = lengths[static_cast<std::size_t>(b)];
      for (int p = 0; p < len; ++p) d_outputs[static_cast<std::size_t>(p)].col(b) = drep.col(b) / static_cast<T>(len);
    }
  }

  for (int l = config_.layers - 1; l >= 0; --l) {
    const auto& layer = tape.layers[static_cast<std::size_t>(l)];
    for (int k = 0; k < steps; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      Mat<T> f = d_outputs[ks].topRows(H);
      if (dh_fwd[ks].size() != 0) f += dh_fwd[ks];
      dh_fwd[ks] = std::move(f);
      if (bi) {
        Mat<T> r = dh_bwd[ks].size() != 0 ? dh_bwd[ks] : Mat<T>::Zero(H, B);
        for (Eigen::Index b = 0; b < B; ++b) {
          const int len = lengths[static_cast<std::size_t>(b)];
          if (k < len) r.col(b) += d_outputs[static_cast<std::size_t>(len - 1 - k)].col(b).tail(H);
        }
        dh_bwd[ks] = std::move(r);
      }
    }

    auto gf = cell_grad<T>(layout_, config_, gspan, l, 0);
    std::vector<Mat<T>> dx =
        direction_backward(cell_ref<T>(layout_, config_, params_, l, 0), gf, layer.dirs[0], dh_fwd, config_.hidden);
    if (bi) {
      auto gb = cell_grad<T>(layout_, config_, gspan, l, 1);
      const std::vector<Mat<T>> dx_rev =
          direction_backward(cell_ref<T>(layout_, config_, params_, l, 1), gb, layer.dirs[1], dh_bwd, config_.hidden);
      for (int k = 0; k < steps; ++k) {
        for (Eigen::Index b = 0; b < B; ++b) {
          const int len = lengths[static_cast<std::size_t>(b)];
          if (k < len) dx[static_cast<std::size_t>(len - 1 - k)].col(b) += dx_rev[static_cast<std::size_t>(k)].col(b);
        }
      }
    }
    if (l == 0) break;

    for (int p = 0; p < steps; ++p) {
      auto& d = dx[static_cast<std::size_t>(p)];
      if (!layer.input_dropout.empty()) d.array() *= layer.input_dropout[static_cast<std::size_t>(p)].array();
      // Padded positions carry zero outputs; their gradient is dropped.
      for (Eigen::Index b = 0; b < B; ++b)
        if (p >= lengths[static_cast<std::size_t>(b)]) d.col(b).setZero();
    }
    d_outputs = std::move(dx);
    for (auto& m : dh_fwd) m.resize(0, 0);
    for (auto& m : dh_bwd) m.resize(0, 0);
  }
  return grads;
}

template <typename T>
std::array<std::vector<Mat<T>>, 2> BiLstm<T>::top_states(const ForwardTape<T>& tape) const {
  const auto& top = tape.layers.back();
  return {top.dirs[0].h, top.dirs[1].h};
}

template <typename T>
int argmax_lowest(const Eigen::Ref<const Vec<T>>& column) {
  int best = 0;
  for (Eigen::Index c = 1; c < column.size(); ++c)
    if (column(c) > column(best)) best = static_cast<int>(c);
  return best;
}

template <typename T>
Prediction<T> predict(const BiLstm<T>& model, const SequenceBatch<T>& batch) {
  ForwardTape<T> tape;
  const Mat<T> logits = model.forward(batch, tape);
  Prediction<T> out;
  out.probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const T mx = logits.col(b).maxCoeff();
    const auto e = (logits.col(b).array() - mx).exp();
    out.probs.col(b) = (e / e.sum()).matrix();
    out.labels.push_back(argmax_lowest<T>(out.probs.col(b)));
  }
  return out;
}

double evaluate_loss(const BiLstm<double>& model, const SequenceBatch<double>& batch, std::span<const int> labels) {
  ForwardTape<double> tape;
  return softmax_xent<double>(model.forward(batch, tape), labels).loss;
}

GradCheckResult compare_gradient(const BiLstm<double>& model, const SequenceBatch<double>& batch,
                                 std::span<const int> labels, std::span<const double> analytic, double eps) {
  if (analytic.size() != model.params().size()) shape_error("analytic gradient size does not match parameters");
  // Losses are differenced in extended precision so round-off stays well
  // below the smallest gradients of interest.
  using Wide = long double;
  BiLstm<Wide> probe(model.config(), std::vector<Wide>(model.params().begin(), model.params().end()));
  SequenceBatch<Wide> wide_batch;
  wide_batch.lengths = batch.lengths;
  for (const auto& m : batch.inputs) wide_batch.inputs.push_back(m.cast<Wide>());
  auto loss = [&] {
    ForwardTape<Wide> tape;
    return softmax_xent<Wide>(probe.forward(wide_batch, tape), labels).loss;
  };
  GradCheckResult result;
  for (std::size_t idx = 0; idx < analytic.size(); ++idx) {
    const Wide saved = probe.params()[idx];
    probe.params()[idx] = saved + eps;
    const Wide up = loss();
    probe.params()[idx] = saved - eps;
    const Wide down = loss();
    probe.params()[idx] = saved;
    const double numeric = static_cast<double>((up - down) / (2.0L * eps));
    const double denom = std::max({std::abs(analytic[idx]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[idx] - numeric) / denom;
    if (idx == 0 || rel > result.max_rel_error) result = GradCheckResult{rel, idx, analytic[idx], numeric};
  }
  return result;
}

GradCheckResult grad_check(const BiLstm<double>& model, const SequenceBatch<double>& batch,
                           std::span<const int> labels, double eps) {
  ForwardTape<double> tape;
  model.forward(batch, tape);
  const std::vector<double> analytic = model.backward(tape, labels);
  return compare_gradient(model, batch, labels, analytic, eps);
}

template class BiLstm<double>;
template class BiLstm<float>;
template class BiLstm<long double>;

template struct SequenceBatch<double>;
template struct SequenceBatch<float>;

template CellStep<double> lstm_cell_forward(const Vec<double>&, const Vec<double>&, const Vec<double>&,
                                            const LstmCellParams<double>&);
template CellStep<float> lstm_cell_forward(const Vec<float>&, const Vec<float>&, const Vec<float>&,
                                           const LstmCellParams<float>&);
template SequenceBatch<double> make_batch(std::span<const std::vector<features::FeatureVector>>, int);
template SequenceBatch<float> make_batch(std::span<const std::vector<features::FeatureVector>>, int);
template LossResult<double> softmax_xent(const Mat<double>&, std::span<const int>);
template LossResult<float> softmax_xent(const Mat<float>&, std::span<const int>);
template void dropout_forward(std::span<double>, double, std::uint64_t, bool);
template void dropout_forward(std::span<float>, double, std::uint64_t, bool);
template Prediction<double> predict(const BiLstm<double>&, const SequenceBatch<double>&);
template Prediction<float> predict(const BiLstm<float>&, const SequenceBatch<float>&);
template int argmax_lowest<double>(const Eigen::Ref<const Vec<double>>&);
template int argmax_lowest<float>(const Eigen::Ref<const Vec<float>>&);

}  // namespace evdet::nn
