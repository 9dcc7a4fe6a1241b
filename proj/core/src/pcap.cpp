#include "evdet/pcap.hpp"

#include <fstream>
#include <map>
#include <tuple>

#include "evdet/error.hpp"

namespace evdet::trace {
namespace {

constexpr std::uint32_t kMagicMicros = 0xa1b2c3d4;
constexpr std::uint32_t kMagicMicrosSwapped = 0xd4c3b2a1;
constexpr std::uint32_t kLinkTypeEthernet = 1;
constexpr std::size_t kGlobalHeaderLen = 24;
constexpr std::size_t kRecordHeaderLen = 16;
constexpr std::size_t kEthernetLen = 14;
constexpr std::uint16_t kEtherTypeIpv4 = 0x0800;
constexpr std::uint16_t kEtherTypeVlan = 0x8100;

struct Reader {
  ByteView data;
  bool big_endian;

  std::uint32_t u32(std::size_t at) const {
    return big_endian ? wire::load_be32(data.data() + at) : wire::load_le32(data.data() + at);
  }
};

using FragmentKey = std::tuple<std::uint32_t, std::uint32_t, std::uint16_t>;

// Returns the IPv4 datagram inside an Ethernet frame, or an empty view for
// other ethertypes.
ByteView ipv4_payload(ByteView frame) {
  if (frame.size() < kEthernetLen) return {};
  std::size_t at = 12;
  std::uint16_t ethertype = wire::load_be16(frame.data() + at);
  if (ethertype == kEtherTypeVlan) {
    if (frame.size() < kEthernetLen + 4) return {};
    at += 4;
    ethertype = wire::load_be16(frame.data() + at);
  }
  if (ethertype != kEtherTypeIpv4) return {};
  return frame.subspan(at + 2);
}

}  // namespace

PcapCapture parse_pcap(ByteView data) {
  if (data.size() < 4) throw Error(ErrorCode::kBadMagic, "input shorter than a pcap magic number");
  const std::uint32_t magic = wire::load_le32(data.data());
  Reader r{data, false};
  if (magic == kMagicMicros) {
    r.big_endian = false;
  } else if (magic == kMagicMicrosSwapped) {
    r.big_endian = true;
  } else {
    throw Error(ErrorCode::kBadMagic, "not a classic pcap file");
  }
  if (data.size() < kGlobalHeaderLen) throw Error(ErrorCode::kTruncatedFile, "global header truncated");
  const std::uint32_t link_type = r.u32(20);
  if (link_type != kLinkTypeEthernet) {
    throw Error(ErrorCode::kFormatError, "unsupported link type " + std::to_string(link_type));
  }

  PcapCapture capture;
  std::vector<PacketRecord> decoded;
  std::size_t at = kGlobalHeaderLen;
  while (at < data.size()) {
    if (at + kRecordHeaderLen > data.size()) {
      throw Error(ErrorCode::kTruncatedFile, "record header at byte " + std::to_string(at));
    }
    const Timestamp ts{r.u32(at), r.u32(at + 4)};
    const std::uint32_t incl_len = r.u32(at + 8);
    at += kRecordHeaderLen;
    if (incl_len > data.size() - at) {
      throw Error(ErrorCode::kTruncatedFile, "record body at byte " + std::to_string(at));
    }
    const ByteView frame = data.subspan(at, incl_len);
    at += incl_len;
    ++capture.stats.frames;

    const ByteView datagram = ipv4_payload(frame);
    if (datagram.empty()) {
      ++capture.stats.skipped_non_tcp;
      continue;
    }
    if (datagram.size() >= 20 && (datagram[0] >> 4) == 4 && datagram[9] != kProtocolTcp) {
      ++capture.stats.skipped_non_tcp;
      continue;
    }
    try {
      decoded.push_back(decode_packet(datagram, ts));
    } catch (const Error&) {
      ++capture.stats.malformed;
    }
  }

  // Offset-zero fragments expose the ports in their first four payload bytes.
  std::map<FragmentKey, FlowKey> fragment_owner;
  for (const auto& pkt : decoded) {
    if (pkt.is_fragment() && pkt.ip.frag_offset == 0 && pkt.payload.size() >= 4) {
      fragment_owner[{pkt.ip.src_addr, pkt.ip.dst_addr, pkt.ip.identification}] =
          FlowKey{pkt.ip.src_addr, wire::load_be16(pkt.payload.data()), pkt.ip.dst_addr,
                  wire::load_be16(pkt.payload.data() + 2)};
    }
  }

  std::map<FlowKey, std::size_t> flow_index;
  for (auto& pkt : decoded) {
    FlowKey key;
    if (pkt.tcp) {
      key = FlowKey{pkt.ip.src_addr, pkt.tcp->src_port, pkt.ip.dst_addr, pkt.tcp->dst_port};
    } else {
      const auto owner = fragment_owner.find({pkt.ip.src_addr, pkt.ip.dst_addr, pkt.ip.identification});
      if (owner == fragment_owner.end()) {
        ++capture.stats.malformed;
        continue;
      }
      key = owner->second;
    }
    auto [it, inserted] = flow_index.try_emplace(key, capture.flows.size());
    if (inserted) capture.flows.push_back(FlowTrace{key, {}});
    capture.flows[it->second].packets.push_back(std::move(pkt));
    ++capture.stats.tcp_packets;
  }
  return capture;
}

PcapCapture parse_pcap_file(const std::filesystem::path& path) { return parse_pcap(read_file(path)); }

Bytes write_pcap(std::span<const PacketRecord> packets) {
  wire::Writer w;
  w.le32(kMagicMicros);
  w.le16(2);
  w.le16(4);
  w.le32(0);  // thiszone
  w.le32(0);  // sigfigs
  w.le32(65535);
  w.le32(kLinkTypeEthernet);
  for (const auto& pkt : packets) {
    const Bytes datagram = encode_packet(pkt);
    const auto frame_len = static_cast<std::uint32_t>(datagram.size() + kEthernetLen);
    w.le32(pkt.ts.sec);
    w.le32(pkt.ts.usec);
    w.le32(frame_len);
    w.le32(frame_len);
    // Locally administered placeholder MACs.
    for (std::uint8_t b : {0x02, 0x00, 0x00, 0x00, 0x00, 0x02}) w.u8(b);
    for (std::uint8_t b : {0x02, 0x00, 0x00, 0x00, 0x00, 0x01}) w.u8(b);
    w.be16(kEtherTypeIpv4);
    w.raw(datagram);
  }
  return w.take();
}

void write_pcap_file(const std::filesystem::path& path, std::span<const PacketRecord> packets) {
  write_file(path, write_pcap(packets));
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIoFailure, "read failed on " + path.string());
  return data;
}

void write_file(const std::filesystem::path& path, ByteView bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed on " + path.string());
}

}  // namespace evdet::trace
