#pragma once

#include <cstdint>

#include "evdet/wire.hpp"

namespace evdet::trace {

/// Accumulates `data` as big-endian 16-bit words into a 32-bit running sum.
/// A trailing odd byte is treated as the high byte of a zero-padded word.
std::uint32_t ones_complement_accumulate(ByteView data, std::uint32_t sum = 0) noexcept;

/// Folds carries back into the low 16 bits and returns the complement.
std::uint16_t ones_complement_finish(std::uint32_t sum) noexcept;

/// RFC 1071 checksum over an IPv4 header whose checksum field is zeroed.
/// Throws Error(kOddLength) on odd-length input.
std::uint16_t ipv4_checksum(ByteView header);

/// TCP checksum over the IPv4 pseudo-header, the TCP header (checksum field
/// zeroed) and the payload. Throws Error(kSegmentTooLarge) if the segment
/// exceeds 65535 bytes and Error(kOddLength) if the header is odd-length.
std::uint16_t tcp_checksum(std::uint32_t src_addr, std::uint32_t dst_addr, ByteView tcp_header,
                           ByteView payload);

}  // namespace evdet::trace
