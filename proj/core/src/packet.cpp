#include "evdet/packet.hpp"

#include <algorithm>

#include "evdet/checksum.hpp"
#include "evdet/error.hpp"

namespace evdet::trace {
namespace {

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorCode::kFormatError, what); }

// Walks kind/length encoded options. Kinds 0 and 1 are single bytes; a
// truncated or zero-length option ends the walk.
template <typename Visit>
void walk_options(ByteView raw, Visit&& visit) {
  std::size_t i = 0;
  while (i < raw.size()) {
    const std::uint8_t kind = raw[i];
    if (kind == 0) return;
    if (kind == 1) {
      visit(kind, ByteView{});
      ++i;
      continue;
    }
    if (i + 1 >= raw.size()) return;
    const std::size_t len = raw[i + 1];
    if (len < 2 || i + len > raw.size()) return;
    visit(kind, raw.subspan(i + 2, len - 2));
    i += len;
  }
}

}  // namespace

std::string format_ipv4(std::uint32_t addr) {
  return std::to_string(addr >> 24) + "." + std::to_string((addr >> 16) & 0xFF) + "." +
         std::to_string((addr >> 8) & 0xFF) + "." + std::to_string(addr & 0xFF);
}

std::string to_string(const FlowKey& key) {
  return format_ipv4(key.src_addr) + ":" + std::to_string(key.src_port) + " -> " +
         format_ipv4(key.dst_addr) + ":" + std::to_string(key.dst_port);
}

std::vector<TcpOption> parse_tcp_options(ByteView raw) {
  std::vector<TcpOption> out;
  walk_options(raw, [&](std::uint8_t kind, ByteView body) {
    out.push_back(TcpOption{kind, Bytes(body.begin(), body.end())});
  });
  return out;
}

Bytes encode_tcp_options(std::span<const TcpOption> options) {
  Bytes out;
  for (const auto& opt : options) {
    out.push_back(opt.kind);
    if (opt.kind == tcp_option::kEnd || opt.kind == tcp_option::kNop) continue;
    out.push_back(static_cast<std::uint8_t>(opt.data.size() + 2));
    out.insert(out.end(), opt.data.begin(), opt.data.end());
  }
  while (out.size() % 4 != 0) out.push_back(tcp_option::kNop);
  return out;
}

std::optional<std::uint16_t> tcp_mss(const TcpHeader& tcp) {
  std::optional<std::uint16_t> mss;
  walk_options(tcp.options, [&](std::uint8_t kind, ByteView body) {
    if (kind == tcp_option::kMss && body.size() == 2) mss = wire::load_be16(body.data());
  });
  return mss;
}

std::optional<std::uint8_t> tcp_window_scale(const TcpHeader& tcp) {
  std::optional<std::uint8_t> scale;
  walk_options(tcp.options, [&](std::uint8_t kind, ByteView body) {
    if (kind == tcp_option::kWindowScale && body.size() == 1) scale = body[0];
  });
  return scale;
}

bool tcp_has_timestamp(const TcpHeader& tcp) {
  bool found = false;
  walk_options(tcp.options, [&](std::uint8_t kind, ByteView body) {
    if (kind == tcp_option::kTimestamp && body.size() == 8) found = true;
  });
  return found;
}

bool ip_has_route_option(ByteView options) {
  bool found = false;
  walk_options(options, [&](std::uint8_t kind, ByteView) {
    if (kind == ip_option::kRecordRoute || kind == ip_option::kLooseSourceRoute ||
        kind == ip_option::kStrictSourceRoute) {
      found = true;
    }
  });
  return found;
}

Bytes encode_ipv4_header(const Ipv4Header& ip) {
  wire::Writer w;
  w.u8(static_cast<std::uint8_t>((ip.version << 4) | (ip.ihl & 0x0F)));
  w.u8(ip.tos);
  w.be16(ip.total_length);
  w.be16(ip.identification);
  std::uint16_t flags_frag = ip.frag_offset & 0x1FFF;
  if (ip.flag_reserved) flags_frag |= 0x8000;
  if (ip.flag_df) flags_frag |= 0x4000;
  if (ip.flag_mf) flags_frag |= 0x2000;
  w.be16(flags_frag);
  w.u8(ip.ttl);
  w.u8(ip.protocol);
  w.be16(ip.checksum);
  w.be32(ip.src_addr);
  w.be32(ip.dst_addr);
  w.raw(ip.options);
  return w.take();
}

Bytes encode_tcp_header(const TcpHeader& tcp) {
  wire::Writer w;
  w.be16(tcp.src_port);
  w.be16(tcp.dst_port);
  w.be32(tcp.seq);
  w.be32(tcp.ack);
  w.u8(static_cast<std::uint8_t>((tcp.data_offset << 4) | (tcp.reserved & 0x0F)));
  w.u8(tcp.flags);
  w.be16(tcp.window);
  w.be16(tcp.checksum);
  w.be16(tcp.urgent_ptr);
  w.raw(tcp.options);
  return w.take();
}

Bytes encode_packet(const PacketRecord& pkt) {
  Bytes out = encode_ipv4_header(pkt.ip);
  if (pkt.tcp) {
    const Bytes tcp = encode_tcp_header(*pkt.tcp);
    out.insert(out.end(), tcp.begin(), tcp.end());
  }
  out.insert(out.end(), pkt.payload.begin(), pkt.payload.end());
  return out;
}

PacketRecord decode_packet(ByteView datagram, Timestamp ts) {
  if (datagram.size() < 20) malformed("datagram shorter than an IPv4 header");
  PacketRecord pkt;
  pkt.ts = ts;
  Ipv4Header& ip = pkt.ip;
  const std::uint8_t* p = datagram.data();
  ip.version = p[0] >> 4;
  ip.ihl = p[0] & 0x0F;
  if (ip.version != 4) malformed("IP version " + std::to_string(ip.version));
  if (ip.ihl < 5) malformed("IHL below 5");
  ip.tos = p[1];
  ip.total_length = wire::load_be16(p + 2);
  ip.identification = wire::load_be16(p + 4);
  const std::uint16_t flags_frag = wire::load_be16(p + 6);
  ip.flag_reserved = (flags_frag & 0x8000) != 0;
  ip.flag_df = (flags_frag & 0x4000) != 0;
  ip.flag_mf = (flags_frag & 0x2000) != 0;
  ip.frag_offset = flags_frag & 0x1FFF;
  ip.ttl = p[8];
  ip.protocol = p[9];
  ip.checksum = wire::load_be16(p + 10);
  ip.src_addr = wire::load_be32(p + 12);
  ip.dst_addr = wire::load_be32(p + 16);

  const std::size_t hlen = ip.header_length();
  if (ip.total_length < hlen) malformed("total length shorter than header");
  if (ip.total_length > datagram.size()) malformed("datagram truncated below total length");
  ip.options.assign(p + 20, p + hlen);

  const ByteView body = datagram.subspan(hlen, ip.total_length - hlen);
  if (pkt.is_fragment() || ip.protocol != kProtocolTcp) {
    pkt.payload.assign(body.begin(), body.end());
    return pkt;
  }

  if (body.size() < 20) malformed("TCP header truncated");
  TcpHeader tcp;
  const std::uint8_t* t = body.data();
  tcp.src_port = wire::load_be16(t);
  tcp.dst_port = wire::load_be16(t + 2);
  tcp.seq = wire::load_be32(t + 4);
  tcp.ack = wire::load_be32(t + 8);
  tcp.data_offset = t[12] >> 4;
  tcp.reserved = t[12] & 0x0F;
  tcp.flags = t[13];
  tcp.window = wire::load_be16(t + 14);
  tcp.checksum = wire::load_be16(t + 16);
  tcp.urgent_ptr = wire::load_be16(t + 18);
  const std::size_t thlen = tcp.header_length();
  if (tcp.data_offset < 5 || thlen > body.size()) malformed("bad TCP data offset");
  tcp.options.assign(t + 20, t + thlen);
  pkt.tcp = std::move(tcp);
  pkt.payload.assign(body.begin() + static_cast<std::ptrdiff_t>(thlen), body.end());
  return pkt;
}

std::uint16_t compute_ipv4_checksum(const Ipv4Header& ip) {
  Ipv4Header zeroed = ip;
  zeroed.checksum = 0;
  return ipv4_checksum(encode_ipv4_header(zeroed));
}

std::uint16_t compute_tcp_checksum(const PacketRecord& pkt) {
  if (!pkt.tcp) throw Error(ErrorCode::kInvalidArgument, "packet has no TCP header");
  TcpHeader zeroed = *pkt.tcp;
  zeroed.checksum = 0;
  return tcp_checksum(pkt.ip.src_addr, pkt.ip.dst_addr, encode_tcp_header(zeroed), pkt.payload);
}

bool ipv4_checksum_valid(const PacketRecord& pkt) {
  return compute_ipv4_checksum(pkt.ip) == pkt.ip.checksum;
}

bool tcp_checksum_valid(const PacketRecord& pkt) {
  return pkt.tcp && compute_tcp_checksum(pkt) == pkt.tcp->checksum;
}

void finalize_packet(PacketRecord& pkt) {
  if (pkt.ip.options.size() % 4 != 0 || pkt.ip.options.size() > 40) {
    throw Error(ErrorCode::kInvalidArgument, "IP options must be a multiple of 4 and at most 40 bytes");
  }
  pkt.ip.ihl = static_cast<std::uint8_t>(5 + pkt.ip.options.size() / 4);
  std::size_t length = pkt.ip.header_length() + pkt.payload.size();
  if (pkt.tcp) {
    if (pkt.tcp->options.size() % 4 != 0 || pkt.tcp->options.size() > 40) {
      throw Error(ErrorCode::kInvalidArgument, "TCP options must be a multiple of 4 and at most 40 bytes");
    }
    pkt.tcp->data_offset = static_cast<std::uint8_t>(5 + pkt.tcp->options.size() / 4);
    length += pkt.tcp->header_length();
  }
  if (length > 0xFFFF) throw Error(ErrorCode::kSegmentTooLarge, "datagram exceeds 65535 bytes");
  pkt.ip.total_length = static_cast<std::uint16_t>(length);
  if (pkt.tcp) pkt.tcp->checksum = compute_tcp_checksum(pkt);
  pkt.ip.checksum = compute_ipv4_checksum(pkt.ip);
}

std::uint32_t tcp_sequence_length(const PacketRecord& pkt) {
  if (!pkt.tcp) return 0;
  return static_cast<std::uint32_t>(pkt.payload.size()) + (pkt.tcp->syn() ? 1u : 0u) +
         (pkt.tcp->fin() ? 1u : 0u);
}

}  // namespace evdet::trace
