#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "evdet/packet.hpp"

namespace evdet::trace {

struct PcapStats {
  std::size_t frames = 0;
  std::size_t tcp_packets = 0;
  std::size_t skipped_non_tcp = 0;
  std::size_t malformed = 0;
};

struct PcapCapture {
  std::vector<FlowTrace> flows;  // order of first appearance
  PcapStats stats;
};

/// Parses a classic (v2.4) pcap with Ethernet link type.
///
/// Packets are grouped by unidirectional 4-tuple in capture order.
/// Non-first IP fragments carry no ports; they are attributed to the flow of
/// the offset-zero fragment with the same (src, dst, id). Malformed frames
/// are counted and skipped.
///
/// Throws Error(kBadMagic) for a non-pcap input and Error(kTruncatedFile)
/// when a record extends past the end of the data.
PcapCapture parse_pcap(ByteView data);
PcapCapture parse_pcap_file(const std::filesystem::path& path);

/// Writes packets as Ethernet frames in a little-endian, microsecond pcap.
Bytes write_pcap(std::span<const PacketRecord> packets);
void write_pcap_file(const std::filesystem::path& path, std::span<const PacketRecord> packets);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, ByteView bytes);

}  // namespace evdet::trace
