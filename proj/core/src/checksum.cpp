#include "evdet/checksum.hpp"

#include "evdet/error.hpp"

namespace evdet::trace {

std::uint32_t ones_complement_accumulate(ByteView data, std::uint32_t sum) noexcept {
  std::size_t i = 0;
  for (; i + 1 < data.size(); i += 2) {
    sum += wire::load_be16(data.data() + i);
    sum = (sum & 0xFFFFu) + (sum >> 16);
  }
  if (i < data.size()) {
    sum += std::uint32_t{data[i]} << 8;
    sum = (sum & 0xFFFFu) + (sum >> 16);
  }
  return sum;
}

std::uint16_t ones_complement_finish(std::uint32_t sum) noexcept {
  while (sum >> 16) sum = (sum & 0xFFFFu) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum & 0xFFFFu);
}

std::uint16_t ipv4_checksum(ByteView header) {
  if (header.size() % 2 != 0) {
    throw Error(ErrorCode::kOddLength, "IPv4 header length " + std::to_string(header.size()));
  }
  return ones_complement_finish(ones_complement_accumulate(header));
}

std::uint16_t tcp_checksum(std::uint32_t src_addr, std::uint32_t dst_addr, ByteView tcp_header,
                           ByteView payload) {
  if (tcp_header.size() % 2 != 0) {
    throw Error(ErrorCode::kOddLength, "TCP header length " + std::to_string(tcp_header.size()));
  }
  const std::size_t segment_len = tcp_header.size() + payload.size();
  if (segment_len > 0xFFFFu) {
    throw Error(ErrorCode::kSegmentTooLarge, "TCP segment of " + std::to_string(segment_len) + " bytes");
  }
  std::uint8_t pseudo[12];
  wire::store_be32(pseudo, src_addr);
  wire::store_be32(pseudo + 4, dst_addr);
  pseudo[8] = 0;
  pseudo[9] = 6;
  wire::store_be16(pseudo + 10, static_cast<std::uint16_t>(segment_len));

  std::uint32_t sum = ones_complement_accumulate(ByteView(pseudo, sizeof pseudo));
  sum = ones_complement_accumulate(tcp_header, sum);
  sum = ones_complement_accumulate(payload, sum);
  return ones_complement_finish(sum);
}

}  // namespace evdet::trace
