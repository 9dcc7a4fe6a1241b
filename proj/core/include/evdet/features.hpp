#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "evdet/packet.hpp"

namespace evdet::features {

inline constexpr std::size_t kFeatureDim = 16;
inline constexpr int kMinFrame = 3;
inline constexpr int kMaxFrame = 7;

/// Canonical dimension order of a per-packet feature row.
enum Dim : std::size_t {
  kIpLen = 0,
  kIpOffsetDelta = 1,  // inter
  kIpFlag = 2,
  kIpTtlDiff = 3,  // inter
  kTcpChecksumValid = 4,
  kTcpLen = 5,
  kTcpFlag = 6,
  kTcpSyn = 7,
  kTcpSeqDelta = 8,
  kTcpOverlap = 9,  // inter
  kTcpMss = 10,
  kTcpWindowScale = 11,
  kTcpTimestamp = 12,
  kIpRoute = 13,
  kIpOptLen = 14,
  kIpTos = 15,
};

/// Inter-packet dimensions on the first packet of a trace.
inline constexpr double kNoPredecessor = -1.0;
/// Field not present (no options, or no TCP header on a fragment).
inline constexpr double kAbsent = -2.0;

inline constexpr std::array<std::size_t, 13> kIntraDims = {0, 2, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15};
inline constexpr std::array<std::size_t, 3> kInterDims = {1, 3, 9};

using FeatureVector = std::array<double, kFeatureDim>;
using IntraFeatures = std::array<double, kIntraDims.size()>;  // ordered as kIntraDims
using InterFeatures = std::array<double, kInterDims.size()>;  // ordered as kInterDims

/// Features computed from one packet. `expected_seq` is the sequence number
/// the stream would continue at (the ISN for the first segment); without it
/// the sequence delta is 0.
IntraFeatures intra_features(const trace::PacketRecord& pkt, std::optional<std::uint32_t> expected_seq);

/// Offset delta, TTL delta and TCP byte overlap against the preceding
/// packet; all kNoPredecessor when `prev` is null.
InterFeatures inter_features(const trace::PacketRecord* prev, const trace::PacketRecord& cur);

FeatureVector assemble(const IntraFeatures& intra, const InterFeatures& inter);

/// One row per packet, in trace order.
std::vector<FeatureVector> trace_features(const trace::FlowTrace& trace);

struct FeatureSequence {
  std::vector<FeatureVector> rows;  // 3..7 consecutive packets of one flow
  int label = 0;

  bool operator==(const FeatureSequence&) const = default;
};

/// Non-overlapping windows of `frame` rows; a trailing window is kept when it
/// has at least kMinFrame rows. Throws Error(kTraceTooShort) below three
/// packets and Error(kInvalidArgument) when frame is outside [3, 7].
std::vector<FeatureSequence> extract_sequences(const trace::FlowTrace& trace, int frame, int label);

/// Window lengths extract_sequences produces for a trace of n packets.
std::vector<int> window_lengths(std::size_t n_packets, int frame);

/// Per-dimension affine map x -> (x - offset) / scale, fit on training rows.
struct FeatureScaler {
  std::array<double, kFeatureDim> offset{};
  std::array<double, kFeatureDim> scale{};

  static FeatureScaler identity();
  /// Mean/standard deviation per dimension; constant dimensions get scale 1.
  static FeatureScaler fit(std::span<const FeatureVector> rows);

  FeatureVector apply(const FeatureVector& row) const;
  bool operator==(const FeatureScaler&) const = default;
};

}  // namespace evdet::features
