#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "evdet/packet.hpp"

namespace evdet::synth {

/// Atomic evasion classes. Codes are stable across dataset files and follow
/// the row order of the published confusion matrix.
enum class EvasionLabel : std::uint8_t {
  kIpOpt = 0,
  kIpFrag = 1,
  kTcpChaff = 2,
  kIpTos = 3,
  kTcpSeg = 4,
  kIpTtl = 5,
  kIpChaff = 6,
  kTcpOpt = 7,
};

inline constexpr int kEvasionClassCount = 8;
/// Optional ninth class for untransformed flows.
inline constexpr int kCleanLabel = 8;

inline constexpr std::array<EvasionLabel, kEvasionClassCount> kAllLabels = {
    EvasionLabel::kIpOpt,  EvasionLabel::kIpFrag, EvasionLabel::kTcpChaff, EvasionLabel::kIpTos,
    EvasionLabel::kTcpSeg, EvasionLabel::kIpTtl,  EvasionLabel::kIpChaff,  EvasionLabel::kTcpOpt,
};

std::string_view to_string(EvasionLabel label) noexcept;
/// Display name for a class code, including the optional clean class.
std::string_view class_name(int code) noexcept;
std::optional<EvasionLabel> parse_label(std::string_view name) noexcept;

struct SynthParams {
  std::uint64_t seed = 0;
  int frag_units = 1;        // 8-byte units per fragment
  int seg_bytes = 8;         // TCP payload bytes per segment
  double chaff_rate = 1.0;   // chaff packets per real packet, in (0, 1]
  int ttl_floor = 1;
  std::vector<int> tos_values = {16, 24, 17, 8};
  bool overlap = false;

  /// Throws Error(kInvalidArgument) naming the first out-of-range field.
  void validate() const;
};

struct CleanFlowShape {
  int min_packets = 4;
  int max_packets = 8;
  int min_payload = 16;
  int max_payload = 64;
};

/// SYN followed by n_packets-1 data segments with increasing sequence
/// numbers, valid checksums, ttl 64, tos 0 and no options.
trace::FlowTrace generate_clean_flow(std::uint64_t seed, int n_packets, int min_payload, int max_payload);

/// Applies one atomic transform. The receiver-visible payload is preserved;
/// chaff is made discardable by a bad checksum or a floor TTL.
/// Throws Error(kUnsupportedOnEmptyPayload) for fragment/segment transforms
/// on a trace without payload.
trace::FlowTrace apply_evasion(const trace::FlowTrace& trace, EvasionLabel label, const SynthParams& params);

struct LabeledTrace {
  trace::FlowTrace trace;
  int label = 0;
};

struct CorpusOptions {
  CleanFlowShape shape;
  bool include_clean = false;  // adds class kCleanLabel
  unsigned workers = 1;
};

/// Balanced corpus of n_flows_per_class traces per class, class-interleaved.
/// Trace i uses seeds derived from (seed, i) so the result does not depend
/// on the worker count.
std::vector<LabeledTrace> build_labeled_corpus(int n_flows_per_class, const SynthParams& params,
                                               std::uint64_t seed, const CorpusOptions& options = {});

}  // namespace evdet::synth
