#include <cmath>

#include "doctest.h"
#include "evdet/error.hpp"
#include "evdet/lstm.hpp"
#include "evdet/random.hpp"
#include "oracles.hpp"

using namespace evdet;
using namespace evdet::nn;

namespace {

ModelConfig small_config(int layers = 2, bool bi = true) {
  ModelConfig c;
  c.input_dim = 4;
  c.hidden = 6;
  c.classes = 3;
  c.layers = layers;
  c.frame = 5;
  c.bidirectional = bi;
  return c;
}

SequenceBatch<double> random_batch(Rng& rng, int steps, int batch, int dim, std::vector<int> lengths = {}) {
  SequenceBatch<double> b(steps, batch, dim);
  for (int s = 0; s < batch; ++s) {
    b.lengths[static_cast<std::size_t>(s)] = lengths.empty() ? steps : lengths[static_cast<std::size_t>(s)];
  }
  for (auto& m : b.inputs)
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return b;
}

}  // namespace

TEST_SUITE("lstm") {
  TEST_CASE("zero parameters give a zero state") {
    LstmCellParams<double> p{Mat<double>::Zero(12, 4), Mat<double>::Zero(12, 3), Vec<double>::Zero(12)};
    Vec<double> x(4);
    x << 1, -2, 3, 0.5;
    const auto s = lstm_cell_forward<double>(x, Vec<double>::Zero(3), Vec<double>::Zero(3), p);
    CHECK(s.h.norm() == 0.0);
    CHECK(s.c.norm() == 0.0);
    CHECK(s.i(0) == doctest::Approx(0.5));
    CHECK(s.g(0) == 0.0);
  }

  TEST_CASE("scalar cell matches hand evaluation") {
    LstmCellParams<double> p{Mat<double>::Ones(4, 1), Mat<double>::Zero(4, 1), Vec<double>::Zero(4)};
    Vec<double> x = Vec<double>::Zero(1), h = Vec<double>::Zero(1), c = Vec<double>::Ones(1);
    const auto s = lstm_cell_forward<double>(x, h, c, p);
    const oracle::ScalarCell ref{{1, 1, 1, 1}, {0, 0, 0, 0}, {0, 0, 0, 0}};
    const auto [h_ref, c_ref] = oracle::scalar_cell(ref, 0.0, 0.0, 1.0);
    CHECK(c_ref == doctest::Approx(0.5));
    CHECK(h_ref == doctest::Approx(0.23106).epsilon(1e-4));
    CHECK(s.c(0) == doctest::Approx(c_ref).epsilon(1e-15));
    CHECK(s.h(0) == doctest::Approx(h_ref).epsilon(1e-15));
  }

  TEST_CASE("random scalar cells match the oracle") {
    Rng rng(5);
    for (int k = 0; k < 50; ++k) {
      oracle::ScalarCell ref{};
      LstmCellParams<double> p{Mat<double>(4, 1), Mat<double>(4, 1), Vec<double>(4)};
      for (int g = 0; g < 4; ++g) {
        ref.wx[g] = p.w_x(g, 0) = rng.uniform(-2, 2);
        ref.wh[g] = p.w_h(g, 0) = rng.uniform(-2, 2);
        ref.b[g] = p.b(g) = rng.uniform(-2, 2);
      }
      const double x = rng.uniform(-1, 1), h = rng.uniform(-1, 1), c = rng.uniform(-1, 1);
      const auto s = lstm_cell_forward<double>(Vec<double>::Constant(1, x), Vec<double>::Constant(1, h),
                                               Vec<double>::Constant(1, c), p);
      const auto [h_ref, c_ref] = oracle::scalar_cell(ref, x, h, c);
      CHECK(std::abs(s.h(0) - h_ref) < 1e-14);
      CHECK(std::abs(s.c(0) - c_ref) < 1e-14);
      CHECK(s.i(0) > 0.0);
      CHECK(s.i(0) < 1.0);
      CHECK(std::abs(s.g(0)) < 1.0);
    }
  }

  TEST_CASE("saturated forget gate keeps the old cell state") {
    LstmCellParams<double> p{Mat<double>::Zero(4, 1), Mat<double>::Zero(4, 1), Vec<double>::Zero(4)};
    p.b(1) = 50.0;  // forget
    p.b(0) = 0.3;
    p.b(2) = 0.7;
    const auto s = lstm_cell_forward<double>(Vec<double>::Zero(1), Vec<double>::Zero(1), Vec<double>::Constant(1, 2.0), p);
    const double limit = 2.0 + oracle::sigmoid(0.3) * std::tanh(0.7);
    CHECK(s.c(0) == doctest::Approx(limit).epsilon(1e-12));
  }

  TEST_CASE("cell shape mismatch") {
    LstmCellParams<double> p{Mat<double>::Zero(12, 4), Mat<double>::Zero(12, 3), Vec<double>::Zero(12)};
    CHECK_THROWS_AS(lstm_cell_forward<double>(Vec<double>::Zero(5), Vec<double>::Zero(3), Vec<double>::Zero(3), p), Error);
  }

  TEST_CASE("softmax cross-entropy values") {
    Mat<double> uniform = Mat<double>::Zero(8, 1);
    const int zero[] = {0};
    const auto u = softmax_xent<double>(uniform, zero);
    CHECK(u.loss == doctest::Approx(std::log(8.0)));
    CHECK(u.loss == doctest::Approx(2.0794).epsilon(1e-4));
    CHECK(u.probs(3, 0) == doctest::Approx(0.125));

    Mat<double> big(2, 1);
    big << 1000, 0;
    const auto b = softmax_xent<double>(big, zero);
    CHECK(b.probs(0, 0) == 1.0);
    CHECK(b.probs(1, 0) == doctest::Approx(0.0));
    CHECK(std::isfinite(b.loss));

    Mat<double> three(3, 1);
    three << 1, 2, 3;
    const int two[] = {2};
    const double ref = oracle::xent({1, 2, 3}, 2);
    CHECK(ref == doctest::Approx(0.40761).epsilon(1e-4));
    CHECK(softmax_xent<double>(three, two).loss == doctest::Approx(ref).epsilon(1e-14));
  }

  TEST_CASE("softmax rows sum to one") {
    Rng rng(2);
    Mat<double> logits(8, 20);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.uniform(-30, 30);
    std::vector<int> labels(20, 1);
    const auto r = softmax_xent<double>(logits, labels);
    for (Eigen::Index b = 0; b < 20; ++b) {
      CHECK(std::abs(r.probs.col(b).sum() - 1.0) < 1e-6);
      CHECK(r.probs.col(b).minCoeff() >= 0.0);
    }
  }

  TEST_CASE("parameter layout") {
    const ModelConfig c = small_config();
    const std::size_t l0 = 2 * (24 * 4 + 24 * 6 + 24);
    const std::size_t l1 = 2 * (24 * 12 + 24 * 6 + 24);
    CHECK(parameter_count(c) == l0 + l1 + 3 * 12 + 3);
    const ParamLayout layout(c);
    CHECK(layout.cell(0, 0).w_x == 0);
    CHECK(layout.cell(1, 0).input_dim == 12);
    CHECK(layout.head_b() == layout.size() - 3);
  }

  TEST_CASE("initialization: forget bias one, other biases zero") {
    const BiLstm<double> m(small_config(), 4);
    const auto p = m.cell_params(0, 1);
    for (int k = 0; k < 6; ++k) {
      CHECK(p.b(k) == 0.0);
      CHECK(p.b(6 + k) == 1.0);
      CHECK(p.b(12 + k) == 0.0);
    }
    CHECK(m.head_bias().norm() == 0.0);
    // Xavier bound per gate block: fan_in + fan_out = D + H.
    CHECK(p.w_x.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (4 + 6)));
    CHECK(p.w_h.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (6 + 6)));
    CHECK(p.w_x.cwiseAbs().maxCoeff() > 0.5 * std::sqrt(6.0 / (4 + 6)));
  }

  TEST_CASE("palindrome with shared direction parameters gives equal final states") {
    ModelConfig c = small_config(1);
    BiLstm<double> m(c, 8);
    m.set_cell_params(0, 1, m.cell_params(0, 0));
    Rng rng(1);
    SequenceBatch<double> b(5, 1, 4);
    std::vector<double> rows[3];
    for (auto& r : rows) {
      r.resize(4);
      for (double& v : r) v = rng.uniform(-1, 1);
    }
    const int order[] = {0, 1, 2, 1, 0};
    for (int t = 0; t < 5; ++t) b.set_row(t, 0, rows[order[t]]);
    ForwardTape<double> tape;
    m.forward(b, tape);
    const auto states = m.top_states(tape);
    CHECK((states[0].back() - states[1].back()).norm() == 0.0);
  }

  TEST_CASE("single step equals two cell evaluations") {
    ModelConfig c = small_config(1);
    const BiLstm<double> m(c, 3);
    Rng rng(4);
    auto b = random_batch(rng, 1, 1, 4);
    ForwardTape<double> tape;
    m.forward(b, tape);
    const Vec<double> x = b.inputs[0].col(0);
    const auto f = lstm_cell_forward<double>(x, Vec<double>::Zero(6), Vec<double>::Zero(6), m.cell_params(0, 0));
    const auto r = lstm_cell_forward<double>(x, Vec<double>::Zero(6), Vec<double>::Zero(6), m.cell_params(0, 1));
    Vec<double> expected(12);
    expected << f.h, r.h;
    CHECK((tape.representation.col(0) - expected).norm() <= 1e-15);
  }

  TEST_CASE("backward direction equals the forward cell on the reversed sequence") {
    ModelConfig c = small_config(1);
    BiLstm<double> m(c, 12);
    Rng rng(9);
    auto b = random_batch(rng, 5, 2, 4, {5, 3});
    ForwardTape<double> tape;
    m.forward(b, tape);
    const auto states = m.top_states(tape);
    for (int s = 0; s < 2; ++s) {
      const int len = b.lengths[static_cast<std::size_t>(s)];
      Vec<double> h = Vec<double>::Zero(6), cst = Vec<double>::Zero(6);
      for (int k = 0; k < len; ++k) {
        const Vec<double> x = b.inputs[static_cast<std::size_t>(len - 1 - k)].col(s);
        const auto step = lstm_cell_forward<double>(x, h, cst, m.cell_params(0, 1));
        h = step.h;
        cst = step.c;
        CHECK((states[1][static_cast<std::size_t>(k)].col(s) - h).norm() == 0.0);
      }
    }
  }

  TEST_CASE("padded steps influence neither loss nor gradients") {
    BiLstm<double> m(small_config(), 6);
    Rng rng(10);
    auto b = random_batch(rng, 5, 3, 4, {5, 3, 1});
    const int labels[] = {0, 2, 1};
    ForwardTape<double> t1;
    m.forward(b, t1);
    const auto g1 = m.backward(t1, labels);
    const double l1 = evaluate_loss(m, b, labels);
    b.inputs[4](0, 1) += 7.0;
    b.inputs[2](3, 2) -= 3.0;
    ForwardTape<double> t2;
    m.forward(b, t2);
    const auto g2 = m.backward(t2, labels);
    CHECK(evaluate_loss(m, b, labels) == l1);
    CHECK(g1 == g2);
  }

  TEST_CASE("gradient check on random small models") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      ModelConfig c = small_config(seed % 2 ? 1 : 2);
      c.readout = seed % 3 == 2 ? Readout::kStepMean : Readout::kFinalState;
      const BiLstm<double> m(c, rng.next());
      auto b = random_batch(rng, 5, 2, 4, {5, static_cast<int>(rng.uniform_int(1, 5))});
      const int labels[] = {static_cast<int>(rng.uniform_index(3)), static_cast<int>(rng.uniform_index(3))};
      const auto r = grad_check(m, b, labels);
      CHECK(r.max_rel_error < 1e-4);
    }
  }

  TEST_CASE("gradient check detects a corrupted entry") {
    Rng rng(0);
    const BiLstm<double> m(small_config(), 1);
    auto b = random_batch(rng, 5, 2, 4);
    const int labels[] = {1, 2};
    ForwardTape<double> tape;
    m.forward(b, tape);
    auto g = m.backward(tape, labels);
    const std::size_t idx = m.layout().head_w();
    g[idx] *= 1.1;
    CHECK(compare_gradient(m, b, labels, g).max_rel_error > 1e-2);
  }

  TEST_CASE("gradient check with dropout masks") {
    Rng rng(3);
    const BiLstm<double> m(small_config(), 2);
    auto b = random_batch(rng, 4, 2, 4);
    const int labels[] = {0, 1};
    ForwardOptions opts{true, 0.3, 77};
    ForwardTape<double> tape;
    m.forward(b, tape, opts);
    const auto analytic = m.backward(tape, labels);
    // Numeric derivative of the same masked network.
    BiLstm<double> probe = m;
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); i += 7) {
      const double saved = probe.params()[i];
      auto loss = [&] {
        ForwardTape<double> t;
        return softmax_xent<double>(probe.forward(b, t, opts), labels).loss;
      };
      probe.params()[i] = saved + 1e-5;
      const double up = loss();
      probe.params()[i] = saved - 1e-5;
      const double down = loss();
      probe.params()[i] = saved;
      const double numeric = (up - down) / 2e-5;
      worst = std::max(worst, std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6}));
    }
    CHECK(worst < 1e-4);
  }

  TEST_CASE("head gradient vanishes at the optimum") {
    ModelConfig c = small_config(1);
    BiLstm<double> m(c, 5);
    Mat<double> w = Mat<double>::Zero(3, 12);
    Vec<double> bias(3);
    bias << 0, 800, 0;
    m.set_head(w, bias);
    Rng rng(1);
    auto b = random_batch(rng, 3, 2, 4);
    const int labels[] = {1, 1};
    ForwardTape<double> tape;
    m.forward(b, tape);
    const auto g = m.backward(tape, labels);
    for (std::size_t i = m.layout().head_w(); i < g.size(); ++i) CHECK(std::abs(g[i]) <= 1e-300);
  }

  TEST_CASE("a duplicated sample gives the single-sample gradient") {
    const BiLstm<double> m(small_config(), 5);
    Rng rng(6);
    auto one = random_batch(rng, 4, 1, 4);
    SequenceBatch<double> two(4, 2, 4);
    for (int t = 0; t < 4; ++t) {
      two.inputs[static_cast<std::size_t>(t)].col(0) = one.inputs[static_cast<std::size_t>(t)].col(0);
      two.inputs[static_cast<std::size_t>(t)].col(1) = one.inputs[static_cast<std::size_t>(t)].col(0);
    }
    two.lengths = {4, 4};
    const int l1[] = {2};
    const int l2[] = {2, 2};
    ForwardTape<double> t1, t2;
    m.forward(one, t1);
    m.forward(two, t2);
    const auto g1 = m.backward(t1, l1);
    const auto g2 = m.backward(t2, l2);
    double diff = 0.0;
    for (std::size_t i = 0; i < g1.size(); ++i) diff = std::max(diff, std::abs(g1[i] - g2[i]));
    CHECK(diff < 1e-12);
  }

  TEST_CASE("tape reuse and empty sequences are rejected") {
    const BiLstm<double> m(small_config(), 5);
    Rng rng(6);
    auto b = random_batch(rng, 3, 1, 4);
    const int labels[] = {0};
    ForwardTape<double> tape;
    m.forward(b, tape);
    m.backward(tape, labels);
    try {
      m.backward(tape, labels);
      FAIL("expected TapeReuse");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kTapeReuse);
    }
    b.lengths[0] = 0;
    try {
      m.forward(b, tape);
      FAIL("expected EmptySequence");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kEmptySequence);
    }
  }

  TEST_CASE("dropout") {
    std::vector<double> v(100, 1.0);
    dropout_forward<double>(v, 0.0, 3, true);
    CHECK(v == std::vector<double>(100, 1.0));
    dropout_forward<double>(v, 0.5, 3, false);
    CHECK(v == std::vector<double>(100, 1.0));
    dropout_forward<double>(v, 0.5, 3, true);
    const auto mask = dropout_mask(100, 0.5, 3);
    int kept = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(v[i] == (mask[i] ? 2.0 : 0.0));
      kept += mask[i];
    }
    CHECK(kept > 20);
    CHECK(kept < 80);
  }

  TEST_CASE("prediction tie-break and bias dominance") {
    ModelConfig c = small_config(1);
    c.classes = 8;
    BiLstm<double> m(c, 5);
    m.set_head(Mat<double>::Zero(8, 12), Vec<double>::Zero(8));
    Rng rng(3);
    auto b = random_batch(rng, 3, 2, 4);
    CHECK(predict(m, b).labels == std::vector<int>{0, 0});
    Vec<double> bias = Vec<double>::Zero(8);
    bias(3) = 10.0;
    m.set_head(Mat<double>::Zero(8, 12), bias);
    CHECK(predict(m, b).labels == std::vector<int>{3, 3});
  }

  TEST_CASE("unidirectional model equals the bidirectional one with a zeroed backward head") {
    ModelConfig bi = small_config(1);
    ModelConfig uni = bi;
    uni.bidirectional = false;
    BiLstm<double> mb(bi, 21);
    BiLstm<double> mu(uni, 22);
    mu.set_cell_params(0, 0, mb.cell_params(0, 0));
    Mat<double> w = mb.head_weights();
    w.rightCols(6).setZero();
    mb.set_head(w, mb.head_bias());
    mu.set_head(w.leftCols(6), mb.head_bias());
    Rng rng(8);
    auto b = random_batch(rng, 4, 3, 4, {4, 2, 3});
    ForwardTape<double> tb, tu;
    const Mat<double> lb = mb.forward(b, tb);
    const Mat<double> lu = mu.forward(b, tu);
    CHECK((lb - lu).norm() < 1e-14);
  }

  TEST_CASE("float model tracks the double model") {
    const BiLstm<double> md(small_config(), 31);
    const BiLstm<float> mf(small_config(), std::vector<float>(md.params().begin(), md.params().end()));
    Rng rng(2);
    auto bd = random_batch(rng, 5, 2, 4);
    SequenceBatch<float> bf;
    bf.lengths = bd.lengths;
    for (const auto& m : bd.inputs) bf.inputs.push_back(m.cast<float>());
    ForwardTape<double> td;
    ForwardTape<float> tf;
    const Mat<double> ld = md.forward(bd, td);
    const Mat<float> lf = mf.forward(bf, tf);
    CHECK((ld - lf.cast<double>()).cwiseAbs().maxCoeff() < 1e-4);
  }
}
