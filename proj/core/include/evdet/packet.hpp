#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evdet/wire.hpp"

namespace evdet::trace {

inline constexpr std::uint8_t kProtocolTcp = 6;

struct Ipv4Header {
  std::uint8_t version = 4;
  std::uint8_t ihl = 5;  // 32-bit words
  std::uint8_t tos = 0;
  std::uint16_t total_length = 0;
  std::uint16_t identification = 0;
  bool flag_reserved = false;
  bool flag_df = false;
  bool flag_mf = false;
  std::uint16_t frag_offset = 0;  // 8-byte units
  std::uint8_t ttl = 64;
  std::uint8_t protocol = kProtocolTcp;
  std::uint16_t checksum = 0;
  std::uint32_t src_addr = 0;
  std::uint32_t dst_addr = 0;
  Bytes options;  // (ihl - 5) * 4 bytes

  std::size_t header_length() const { return std::size_t{ihl} * 4; }
  bool operator==(const Ipv4Header&) const = default;
};

namespace ip_option {
inline constexpr std::uint8_t kEnd = 0;
inline constexpr std::uint8_t kNop = 1;
inline constexpr std::uint8_t kRecordRoute = 7;
inline constexpr std::uint8_t kLooseSourceRoute = 131;
inline constexpr std::uint8_t kStrictSourceRoute = 137;
}  // namespace ip_option

namespace tcp_flag {
inline constexpr std::uint8_t kFin = 0x01;
inline constexpr std::uint8_t kSyn = 0x02;
inline constexpr std::uint8_t kRst = 0x04;
inline constexpr std::uint8_t kPsh = 0x08;
inline constexpr std::uint8_t kAck = 0x10;
inline constexpr std::uint8_t kUrg = 0x20;
}  // namespace tcp_flag

namespace tcp_option {
inline constexpr std::uint8_t kEnd = 0;
inline constexpr std::uint8_t kNop = 1;
inline constexpr std::uint8_t kMss = 2;
inline constexpr std::uint8_t kWindowScale = 3;
inline constexpr std::uint8_t kTimestamp = 8;
}  // namespace tcp_option

struct TcpOption {
  std::uint8_t kind = tcp_option::kNop;
  Bytes data;  // option body without kind/length bytes

  bool operator==(const TcpOption&) const = default;
};

struct TcpHeader {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint32_t seq = 0;
  std::uint32_t ack = 0;
  std::uint8_t data_offset = 5;  // 32-bit words
  std::uint8_t reserved = 0;     // 4 bits
  std::uint8_t flags = 0;        // CWR..FIN, low six bits match tcp_flag
  std::uint16_t window = 0;
  std::uint16_t checksum = 0;
  std::uint16_t urgent_ptr = 0;
  Bytes options;  // raw option bytes, (data_offset - 5) * 4

  bool has(std::uint8_t flag) const { return (flags & flag) != 0; }
  bool syn() const { return has(tcp_flag::kSyn); }
  bool fin() const { return has(tcp_flag::kFin); }
  std::size_t header_length() const { return std::size_t{data_offset} * 4; }
  bool operator==(const TcpHeader&) const = default;
};

struct Timestamp {
  std::uint32_t sec = 0;
  std::uint32_t usec = 0;

  double seconds() const { return sec + usec * 1e-6; }
  auto operator<=>(const Timestamp&) const = default;
};

/// One decoded IPv4 datagram carrying TCP.
///
/// A fragment (MF set or nonzero offset) has no decoded TCP header; its
/// `payload` is the raw IP payload slice. Otherwise `tcp` is present and
/// `payload` is the TCP payload, so that
/// ip.total_length == ip.ihl*4 + tcp.data_offset*4 + payload.size().
struct PacketRecord {
  Timestamp ts;
  Ipv4Header ip;
  std::optional<TcpHeader> tcp;
  Bytes payload;

  bool is_fragment() const { return ip.flag_mf || ip.frag_offset != 0; }
  bool operator==(const PacketRecord&) const = default;
};

struct FlowKey {
  std::uint32_t src_addr = 0;
  std::uint16_t src_port = 0;
  std::uint32_t dst_addr = 0;
  std::uint16_t dst_port = 0;

  auto operator<=>(const FlowKey&) const = default;
};

std::string to_string(const FlowKey& key);
std::string format_ipv4(std::uint32_t addr);

/// Packets of one unidirectional connection, in capture order.
struct FlowTrace {
  FlowKey key;
  std::vector<PacketRecord> packets;

  bool operator==(const FlowTrace&) const = default;
};

std::vector<TcpOption> parse_tcp_options(ByteView raw);

/// Serializes options and pads with NOPs to a 4-byte boundary.
Bytes encode_tcp_options(std::span<const TcpOption> options);

std::optional<std::uint16_t> tcp_mss(const TcpHeader& tcp);
std::optional<std::uint8_t> tcp_window_scale(const TcpHeader& tcp);
bool tcp_has_timestamp(const TcpHeader& tcp);

/// True when the IP options carry record-route or a source-route option.
bool ip_has_route_option(ByteView options);

Bytes encode_ipv4_header(const Ipv4Header& ip);
Bytes encode_tcp_header(const TcpHeader& tcp);

/// Serializes the datagram exactly as stored; no field is recomputed.
Bytes encode_packet(const PacketRecord& pkt);

/// Decodes an IPv4 datagram. Bytes past ip.total_length are ignored (link
/// padding). Throws Error(kFormatError) on malformed headers.
PacketRecord decode_packet(ByteView datagram, Timestamp ts = {});

std::uint16_t compute_ipv4_checksum(const Ipv4Header& ip);

/// Checksum over the packet's TCP header and payload; requires pkt.tcp.
std::uint16_t compute_tcp_checksum(const PacketRecord& pkt);

bool ipv4_checksum_valid(const PacketRecord& pkt);
bool tcp_checksum_valid(const PacketRecord& pkt);

/// Recomputes ihl, data_offset, total_length and both checksums from the
/// current options and payload.
void finalize_packet(PacketRecord& pkt);

/// Sequence space consumed by a TCP segment (payload plus SYN/FIN).
std::uint32_t tcp_sequence_length(const PacketRecord& pkt);

}  // namespace evdet::trace
