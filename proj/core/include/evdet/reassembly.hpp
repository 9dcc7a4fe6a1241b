#pragma once

#include "evdet/packet.hpp"

namespace evdet::trace {

struct ReceiverConfig {
  /// Packets with ttl <= ttl_floor are treated as expired.
  int ttl_floor = 1;
};

/// Strict-endpoint model of what the application would receive.
///
/// Drops packets with a bad IP checksum or expired TTL, reassembles IP
/// fragments (first arrival wins on overlap), drops segments with a bad TCP
/// checksum, then reassembles the byte stream relative to the ISN (first
/// arrival wins). Throws Error(kIncompleteStream) if the stream has a gap.
Bytes normalize_receive(const FlowTrace& trace, const ReceiverConfig& config = {});

}  // namespace evdet::trace
