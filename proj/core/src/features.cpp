#include "evdet/features.hpp"

#include <algorithm>
#include <cmath>

#include "evdet/error.hpp"

namespace evdet::features {

using trace::PacketRecord;

namespace {

double flag(bool v) { return v ? 1.0 : 0.0; }

}  // namespace

IntraFeatures intra_features(const PacketRecord& pkt, std::optional<std::uint32_t> expected_seq) {
  FeatureVector row{};
  row[kIpLen] = pkt.ip.total_length;
  row[kIpFlag] = flag(pkt.ip.flag_mf) + 2.0 * flag(pkt.ip.flag_df);
  row[kIpRoute] = pkt.ip.options.empty() ? kAbsent : flag(trace::ip_has_route_option(pkt.ip.options));
  row[kIpOptLen] = static_cast<double>(pkt.ip.options.size());
  row[kIpTos] = pkt.ip.tos;

  if (!pkt.tcp || pkt.is_fragment()) {
    for (std::size_t d : {kTcpChecksumValid, kTcpLen, kTcpFlag, kTcpSyn, kTcpSeqDelta, kTcpMss,
                          kTcpWindowScale, kTcpTimestamp}) {
      row[d] = kAbsent;
    }
  } else {
    const trace::TcpHeader& tcp = *pkt.tcp;
    row[kTcpChecksumValid] = flag(trace::tcp_checksum_valid(pkt));
    row[kTcpLen] = static_cast<double>(pkt.payload.size());
    row[kTcpFlag] = tcp.flags & 0x3F;
    row[kTcpSyn] = flag(tcp.syn());
    row[kTcpSeqDelta] = expected_seq ? static_cast<double>(static_cast<std::int32_t>(tcp.seq - *expected_seq)) : 0.0;
    const auto mss = trace::tcp_mss(tcp);
    row[kTcpMss] = mss ? static_cast<double>(*mss) : kAbsent;
    const auto wscale = trace::tcp_window_scale(tcp);
    row[kTcpWindowScale] = wscale ? static_cast<double>(*wscale) : kAbsent;
    row[kTcpTimestamp] = tcp.options.empty() ? kAbsent : flag(trace::tcp_has_timestamp(tcp));
  }

  IntraFeatures out{};
  for (std::size_t i = 0; i < kIntraDims.size(); ++i) out[i] = row[kIntraDims[i]];
  return out;
}

InterFeatures inter_features(const PacketRecord* prev, const PacketRecord& cur) {
  if (prev == nullptr) return {kNoPredecessor, kNoPredecessor, kNoPredecessor};
  InterFeatures out{};
  out[0] = static_cast<double>(cur.ip.frag_offset) - static_cast<double>(prev->ip.frag_offset);
  out[1] = static_cast<double>(cur.ip.ttl) - static_cast<double>(prev->ip.ttl);
  if (prev->tcp && cur.tcp && !prev->is_fragment() && !cur.is_fragment()) {
    const std::uint32_t prev_end = prev->tcp->seq + static_cast<std::uint32_t>(prev->payload.size());
    const auto overlap = static_cast<std::int32_t>(prev_end - cur.tcp->seq);
    out[2] = std::max(0, overlap);
  } else {
    out[2] = kAbsent;
  }
  return out;
}

FeatureVector assemble(const IntraFeatures& intra, const InterFeatures& inter) {
  FeatureVector row{};
  for (std::size_t i = 0; i < kIntraDims.size(); ++i) row[kIntraDims[i]] = intra[i];
  for (std::size_t i = 0; i < kInterDims.size(); ++i) row[kInterDims[i]] = inter[i];
  return row;
}

std::vector<FeatureVector> trace_features(const trace::FlowTrace& trace) {
  std::vector<FeatureVector> rows;
  rows.reserve(trace.packets.size());
  std::optional<std::uint32_t> expected;
  const PacketRecord* prev = nullptr;
  for (const auto& pkt : trace.packets) {
    rows.push_back(assemble(intra_features(pkt, expected), inter_features(prev, pkt)));
    if (pkt.tcp && !pkt.is_fragment()) expected = pkt.tcp->seq + trace::tcp_sequence_length(pkt);
    prev = &pkt;
  }
  return rows;
}

std::vector<int> window_lengths(std::size_t n_packets, int frame) {
  std::vector<int> lengths;
  const auto f = static_cast<std::size_t>(frame);
  for (std::size_t i = 0; i < n_packets / f; ++i) lengths.push_back(frame);
  const std::size_t tail = n_packets % f;
  if (tail >= static_cast<std::size_t>(kMinFrame)) lengths.push_back(static_cast<int>(tail));
  return lengths;
}

std::vector<FeatureSequence> extract_sequences(const trace::FlowTrace& trace, int frame, int label) {
  if (frame < kMinFrame || frame > kMaxFrame) {
    throw Error(ErrorCode::kInvalidArgument, "frame must be in [3, 7], got " + std::to_string(frame));
  }
  if (trace.packets.size() < static_cast<std::size_t>(kMinFrame)) {
    throw Error(ErrorCode::kTraceTooShort,
                "trace has " + std::to_string(trace.packets.size()) + " packets, need at least 3");
  }
  const std::vector<FeatureVector> rows = trace_features(trace);
  std::vector<FeatureSequence> out;
  std::size_t start = 0;
  for (int len : window_lengths(rows.size(), frame)) {
    FeatureSequence seq;
    seq.label = label;
    seq.rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(start),
                    rows.begin() + static_cast<std::ptrdiff_t>(start + static_cast<std::size_t>(len)));
    out.push_back(std::move(seq));
    start += static_cast<std::size_t>(len);
  }
  return out;
}

FeatureScaler FeatureScaler::identity() {
  FeatureScaler s;
  s.offset.fill(0.0);
  s.scale.fill(1.0);
  return s;
}

FeatureScaler FeatureScaler::fit(std::span<const FeatureVector> rows) {
  FeatureScaler s = identity();
  if (rows.empty()) return s;
  const double n = static_cast<double>(rows.size());
  for (std::size_t d = 0; d < kFeatureDim; ++d) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[d];
    mean /= n;
    double var = 0.0;
    for (const auto& r : rows) var += (r[d] - mean) * (r[d] - mean);
    const double sd = std::sqrt(var / n);
    s.offset[d] = mean;
    s.scale[d] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

FeatureVector FeatureScaler::apply(const FeatureVector& row) const {
  FeatureVector out{};
  for (std::size_t d = 0; d < kFeatureDim; ++d) out[d] = (row[d] - offset[d]) / scale[d];
  return out;
}

}  // namespace evdet::features
