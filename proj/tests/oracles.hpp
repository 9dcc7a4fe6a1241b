#pragma once
// Reference computations written independently of the library, used as
// test oracles. Deliberately naive.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <tuple>
#include <vector>

namespace oracle {

// RFC 1071 over a byte vector, one word at a time with end-around carry.
inline std::uint16_t internet_checksum(const std::vector<std::uint8_t>& bytes) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i < bytes.size(); i += 2) {
    std::uint32_t word = std::uint32_t{bytes[i]} << 8;
    if (i + 1 < bytes.size()) word |= bytes[i + 1];
    sum += word;
    while (sum > 0xFFFF) sum = (sum & 0xFFFF) + (sum >> 16);
  }
  return static_cast<std::uint16_t>(~sum & 0xFFFF);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar LSTM cell, D = H = 1, gate order i, f, g, o.
struct ScalarCell {
  double wx[4], wh[4], b[4];
};
inline std::pair<double, double> scalar_cell(const ScalarCell& p, double x, double h, double c) {
  const double i = sigmoid(p.wx[0] * x + p.wh[0] * h + p.b[0]);
  const double f = sigmoid(p.wx[1] * x + p.wh[1] * h + p.b[1]);
  const double g = std::tanh(p.wx[2] * x + p.wh[2] * h + p.b[2]);
  const double o = sigmoid(p.wx[3] * x + p.wh[3] * h + p.b[3]);
  const double c_new = f * c + i * g;
  return {o * std::tanh(c_new), c_new};
}

inline double xent(const std::vector<double>& logits, int label) {
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  return -(logits[static_cast<std::size_t>(label)] - std::log(z));
}

// Pairwise AUC: fraction of (positive, negative) pairs ranked correctly,
// ties counting one half.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& positive) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) good += 1.0;
      else if (scores[i] == scores[j]) good += 0.5;
    }
  }
  return pairs == 0.0 ? 0.5 : good / pairs;
}

// Byte overlap of [a, a+alen) with [b, b+blen) by enumeration.
inline int interval_overlap(std::uint32_t a, int alen, std::uint32_t b, int blen) {
  int n = 0;
  for (int k = 0; k < alen; ++k) {
    const std::uint32_t byte = a + static_cast<std::uint32_t>(k);
    if (byte - b < static_cast<std::uint32_t>(blen)) ++n;
  }
  return n;
}

// Window lengths by repeated subtraction.
inline std::vector<int> windows(int n, int frame) {
  std::vector<int> out;
  while (n >= frame) {
    out.push_back(frame);
    n -= frame;
  }
  if (n >= 3) out.push_back(n);
  return out;
}

}  // namespace oracle
