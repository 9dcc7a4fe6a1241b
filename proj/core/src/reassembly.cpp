#include "evdet/reassembly.hpp"

#include <map>
#include <optional>

#include "evdet/checksum.hpp"
#include "evdet/error.hpp"

namespace evdet::trace {
namespace {

// Byte buffer where each position can be written once.
class FirstWinsBuffer {
 public:
  void write(std::size_t offset, ByteView bytes) {
    if (offset + bytes.size() > data_.size()) {
      data_.resize(offset + bytes.size(), 0);
      filled_.resize(offset + bytes.size(), false);
    }
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      if (!filled_[offset + i]) {
        data_[offset + i] = bytes[i];
        filled_[offset + i] = true;
      }
    }
  }

  std::size_t size() const { return data_.size(); }
  std::optional<std::size_t> first_gap() const {
    for (std::size_t i = 0; i < filled_.size(); ++i)
      if (!filled_[i]) return i;
    return std::nullopt;
  }
  const Bytes& bytes() const { return data_; }

 private:
  Bytes data_;
  std::vector<bool> filled_;
};

struct FragmentGroup {
  Ipv4Header first_header;
  bool have_first = false;
  std::optional<std::size_t> total_length;  // payload bytes, known once MF=0 arrives
  FirstWinsBuffer buffer;
  bool done = false;
};

struct Segment {
  std::uint32_t src_addr;
  std::uint32_t dst_addr;
  Bytes tcp_section;  // TCP header plus payload
};

bool tcp_section_valid(const Segment& seg) {
  if (seg.tcp_section.size() < 20) return false;
  const std::size_t hlen = std::size_t{static_cast<std::uint8_t>(seg.tcp_section[12] >> 4)} * 4;
  if (hlen < 20 || hlen > seg.tcp_section.size()) return false;
  Bytes header(seg.tcp_section.begin(), seg.tcp_section.begin() + static_cast<std::ptrdiff_t>(hlen));
  const std::uint16_t stored = wire::load_be16(header.data() + 16);
  header[16] = header[17] = 0;
  const ByteView payload = ByteView(seg.tcp_section).subspan(hlen);
  return tcp_checksum(seg.src_addr, seg.dst_addr, header, payload) == stored;
}

}  // namespace

Bytes normalize_receive(const FlowTrace& trace, const ReceiverConfig& config) {
  std::map<std::uint16_t, FragmentGroup> fragments;
  std::vector<Segment> segments;

  for (const auto& pkt : trace.packets) {
    if (!ipv4_checksum_valid(pkt)) continue;
    if (pkt.ip.ttl <= config.ttl_floor) continue;
    if (pkt.ip.protocol != kProtocolTcp) continue;

    if (!pkt.is_fragment()) {
      if (!pkt.tcp) continue;
      Bytes section = encode_tcp_header(*pkt.tcp);
      section.insert(section.end(), pkt.payload.begin(), pkt.payload.end());
      segments.push_back(Segment{pkt.ip.src_addr, pkt.ip.dst_addr, std::move(section)});
      continue;
    }

    FragmentGroup& group = fragments[pkt.ip.identification];
    if (group.done) continue;
    if (pkt.ip.frag_offset == 0 && !group.have_first) {
      group.first_header = pkt.ip;
      group.have_first = true;
    }
    const std::size_t offset = std::size_t{pkt.ip.frag_offset} * 8;
    group.buffer.write(offset, pkt.payload);
    if (!pkt.ip.flag_mf && !group.total_length) group.total_length = offset + pkt.payload.size();

    if (group.have_first && group.total_length && group.buffer.size() >= *group.total_length) {
      Bytes whole(group.buffer.bytes().begin(),
                  group.buffer.bytes().begin() + static_cast<std::ptrdiff_t>(*group.total_length));
      if (auto gap = group.buffer.first_gap(); gap && *gap < *group.total_length) continue;
      group.done = true;
      segments.push_back(Segment{group.first_header.src_addr, group.first_header.dst_addr, std::move(whole)});
    }
  }

  std::optional<std::uint32_t> isn;
  for (const auto& seg : segments) {
    if (seg.tcp_section.size() >= 20 && (seg.tcp_section[13] & tcp_flag::kSyn) && tcp_section_valid(seg)) {
      isn = wire::load_be32(seg.tcp_section.data() + 4);
      break;
    }
  }

  FirstWinsBuffer stream;
  std::optional<std::uint32_t> base;
  if (isn) base = *isn + 1;
  for (const auto& seg : segments) {
    if (!tcp_section_valid(seg)) continue;
    const std::uint8_t* t = seg.tcp_section.data();
    const std::size_t hlen = std::size_t{static_cast<std::uint8_t>(t[12] >> 4)} * 4;
    const std::uint32_t seq = wire::load_be32(t + 4);
    const bool syn = (t[13] & tcp_flag::kSyn) != 0;
    std::uint32_t data_seq = syn ? seq + 1 : seq;
    ByteView payload = ByteView(seg.tcp_section).subspan(hlen);
    if (payload.empty()) continue;
    if (!base) base = data_seq;
    auto rel = static_cast<std::int32_t>(data_seq - *base);
    if (rel < 0) {
      const auto skip = static_cast<std::size_t>(-static_cast<std::int64_t>(rel));
      if (skip >= payload.size()) continue;
      payload = payload.subspan(skip);
      rel = 0;
    }
    stream.write(static_cast<std::size_t>(rel), payload);
  }

  if (auto gap = stream.first_gap()) {
    throw Error(ErrorCode::kIncompleteStream, "missing byte at stream offset " + std::to_string(*gap) +
                                                  " in flow " + to_string(trace.key));
  }
  return stream.bytes();
}

}  // namespace evdet::trace
