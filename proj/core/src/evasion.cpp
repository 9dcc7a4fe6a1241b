#include "evdet/evasion.hpp"

#include <algorithm>
#include <thread>

#include "evdet/error.hpp"
#include "evdet/random.hpp"

namespace evdet::synth {

using trace::FlowTrace;
using trace::PacketRecord;

namespace {

constexpr std::array<std::string_view, 9> kClassNames = {
    "IP_OPT", "IP_FRAG", "TCP_CHAFF", "IP_TOS", "TCP_SEG", "IP_TTL", "IP_CHAFF", "TCP_OPT", "CLEAN",
};

constexpr std::array<std::uint16_t, 5> kServicePorts = {80, 443, 22, 25, 8080};
constexpr std::uint16_t kDefaultMss = 1460;

Bytes junk(Rng& rng, std::size_t n) {
  Bytes out(n);
  rng.fill_bytes(out);
  return out;
}

// XOR with a nonzero mask so the stored value can never verify.
std::uint16_t corrupt(std::uint16_t checksum, Rng& rng) {
  return static_cast<std::uint16_t>(checksum ^ (1 + rng.uniform_index(0xFFFF)));
}

bool has_payload(const FlowTrace& trace) {
  return std::any_of(trace.packets.begin(), trace.packets.end(),
                     [](const PacketRecord& p) { return p.tcp && !p.payload.empty(); });
}

template <typename MakeChaff>
FlowTrace interleave_chaff(const FlowTrace& trace, const SynthParams& params, Rng& rng, MakeChaff&& make) {
  FlowTrace out{trace.key, {}};
  out.packets.reserve(trace.packets.size() * 2);
  for (const auto& pkt : trace.packets) {
    out.packets.push_back(pkt);
    if (rng.uniform() < params.chaff_rate) out.packets.push_back(make(pkt));
  }
  return out;
}

FlowTrace fragment(const FlowTrace& trace, const SynthParams& params, Rng& rng) {
  const std::size_t unit = static_cast<std::size_t>(params.frag_units) * 8;
  FlowTrace out{trace.key, {}};
  for (const auto& pkt : trace.packets) {
    if (!pkt.tcp || pkt.payload.empty()) {
      out.packets.push_back(pkt);
      continue;
    }
    Bytes section = trace::encode_tcp_header(*pkt.tcp);
    section.insert(section.end(), pkt.payload.begin(), pkt.payload.end());
    if (section.size() <= unit) {
      out.packets.push_back(pkt);
      continue;
    }
    for (std::size_t start = 0; start < section.size(); start += unit) {
      const std::size_t end = std::min(start + unit, section.size());
      PacketRecord frag;
      frag.ts = pkt.ts;
      frag.ip = pkt.ip;
      std::size_t wire_start = start;
      if (params.overlap && start > 0) {
        wire_start = start - 8;
        frag.payload = junk(rng, 8);
      }
      frag.payload.insert(frag.payload.end(), section.begin() + static_cast<std::ptrdiff_t>(start),
                          section.begin() + static_cast<std::ptrdiff_t>(end));
      frag.ip.frag_offset = static_cast<std::uint16_t>(wire_start / 8);
      frag.ip.flag_mf = end < section.size();
      trace::finalize_packet(frag);
      out.packets.push_back(std::move(frag));
    }
  }
  return out;
}

FlowTrace segment(const FlowTrace& trace, const SynthParams& params, Rng& rng) {
  const auto size = static_cast<std::size_t>(params.seg_bytes);
  FlowTrace out{trace.key, {}};
  for (const auto& pkt : trace.packets) {
    if (!pkt.tcp || pkt.payload.empty() || pkt.tcp->syn()) {
      out.packets.push_back(pkt);
      continue;
    }
    std::uint16_t id = pkt.ip.identification;
    for (std::size_t start = 0; start < pkt.payload.size(); start += size) {
      const std::size_t end = std::min(start + size, pkt.payload.size());
      PacketRecord seg = pkt;
      seg.payload.clear();
      std::size_t wire_start = start;
      if (params.overlap && start > 0) {
        wire_start = start - size;
        seg.payload = junk(rng, size);
      }
      seg.payload.insert(seg.payload.end(), pkt.payload.begin() + static_cast<std::ptrdiff_t>(start),
                         pkt.payload.begin() + static_cast<std::ptrdiff_t>(end));
      seg.tcp->seq = pkt.tcp->seq + static_cast<std::uint32_t>(wire_start);
      if (end < pkt.payload.size()) seg.tcp->flags &= static_cast<std::uint8_t>(~trace::tcp_flag::kPsh);
      seg.ip.identification = id++;
      trace::finalize_packet(seg);
      out.packets.push_back(std::move(seg));
    }
  }
  return out;
}

Bytes record_route_options() {
  // NOP, then record-route with room for one address.
  return {trace::ip_option::kNop, trace::ip_option::kRecordRoute, 7, 4, 0, 0, 0, 0};
}

}  // namespace

std::string_view to_string(EvasionLabel label) noexcept {
  return kClassNames[static_cast<std::size_t>(label)];
}

std::string_view class_name(int code) noexcept {
  if (code < 0 || code >= static_cast<int>(kClassNames.size())) return "UNKNOWN";
  return kClassNames[static_cast<std::size_t>(code)];
}

std::optional<EvasionLabel> parse_label(std::string_view name) noexcept {
  for (EvasionLabel label : kAllLabels) {
    const std::string_view canonical = to_string(label);
    if (canonical.size() != name.size()) continue;
    bool same = true;
    for (std::size_t i = 0; i < name.size() && same; ++i) {
      same = std::toupper(static_cast<unsigned char>(name[i])) == canonical[i];
    }
    if (same) return label;
  }
  return std::nullopt;
}

void SynthParams::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (frag_units < 1) fail("frag_units must be >= 1");
  if (seg_bytes < 1) fail("seg_bytes must be >= 1");
  if (!(chaff_rate > 0.0 && chaff_rate <= 1.0)) fail("chaff_rate must be in (0, 1]");
  if (ttl_floor < 0 || ttl_floor > 254) fail("ttl_floor must be in [0, 254]");
  if (tos_values.empty()) fail("tos_values must not be empty");
  for (int tos : tos_values)
    if (tos < 0 || tos > 255) fail("tos value out of range: " + std::to_string(tos));
}

FlowTrace generate_clean_flow(std::uint64_t seed, int n_packets, int min_payload, int max_payload) {
  if (n_packets < 1) throw Error(ErrorCode::kInvalidArgument, "n_packets must be >= 1");
  if (min_payload < 0 || max_payload < min_payload || max_payload > 1400) {
    throw Error(ErrorCode::kInvalidArgument, "payload range must satisfy 0 <= min <= max <= 1400");
  }
  Rng rng(seed);
  FlowTrace trace;
  trace.key.src_addr = 0x0A000000u | static_cast<std::uint32_t>(rng.uniform_index(1u << 24));
  trace.key.dst_addr = 0xC0A80000u | static_cast<std::uint32_t>(rng.uniform_index(1u << 16));
  trace.key.src_port = static_cast<std::uint16_t>(rng.uniform_int(1024, 65535));
  trace.key.dst_port = kServicePorts[rng.uniform_index(kServicePorts.size())];

  std::uint32_t seq = static_cast<std::uint32_t>(rng.next());
  const auto peer_ack = static_cast<std::uint32_t>(rng.next());
  auto ip_id = static_cast<std::uint16_t>(rng.next());
  trace::Timestamp ts{1'500'000'000u + static_cast<std::uint32_t>(rng.uniform_index(100'000'000)),
                      static_cast<std::uint32_t>(rng.uniform_index(1'000'000))};

  for (int i = 0; i < n_packets; ++i) {
    PacketRecord pkt;
    pkt.ts = ts;
    pkt.ip.identification = ip_id++;
    pkt.ip.flag_df = true;
    pkt.ip.src_addr = trace.key.src_addr;
    pkt.ip.dst_addr = trace.key.dst_addr;
    trace::TcpHeader tcp;
    tcp.src_port = trace.key.src_port;
    tcp.dst_port = trace.key.dst_port;
    tcp.seq = seq;
    if (i == 0) {
      tcp.flags = trace::tcp_flag::kSyn;
      tcp.window = 64240;
    } else {
      tcp.flags = trace::tcp_flag::kAck | trace::tcp_flag::kPsh;
      tcp.ack = peer_ack;
      tcp.window = 502;
      pkt.payload = junk(rng, static_cast<std::size_t>(rng.uniform_int(min_payload, max_payload)));
    }
    pkt.tcp = std::move(tcp);
    trace::finalize_packet(pkt);
    seq += trace::tcp_sequence_length(pkt);
    trace.packets.push_back(std::move(pkt));

    ts.usec += static_cast<std::uint32_t>(rng.uniform_int(100, 5000));
    if (ts.usec >= 1'000'000) {
      ts.sec += ts.usec / 1'000'000;
      ts.usec %= 1'000'000;
    }
  }
  return trace;
}

FlowTrace apply_evasion(const FlowTrace& trace, EvasionLabel label, const SynthParams& params) {
  params.validate();
  Rng rng(params.seed);

  switch (label) {
    case EvasionLabel::kIpChaff:
      return interleave_chaff(trace, params, rng, [&](const PacketRecord& real) {
        PacketRecord chaff = real;
        chaff.payload = junk(rng, real.payload.size());
        trace::finalize_packet(chaff);
        chaff.ip.checksum = corrupt(chaff.ip.checksum, rng);
        return chaff;
      });

    case EvasionLabel::kIpTtl:
      return interleave_chaff(trace, params, rng, [&](const PacketRecord& real) {
        PacketRecord chaff = real;
        chaff.payload = junk(rng, real.payload.size());
        chaff.ip.ttl = static_cast<std::uint8_t>(params.ttl_floor);
        trace::finalize_packet(chaff);
        return chaff;
      });

    case EvasionLabel::kTcpChaff:
      return interleave_chaff(trace, params, rng, [&](const PacketRecord& real) {
        PacketRecord chaff = real;
        chaff.payload = junk(rng, real.payload.size());
        trace::finalize_packet(chaff);
        if (chaff.tcp) chaff.tcp->checksum = corrupt(chaff.tcp->checksum, rng);
        return chaff;
      });

    case EvasionLabel::kIpFrag:
      if (!has_payload(trace)) {
        throw Error(ErrorCode::kUnsupportedOnEmptyPayload, "IP_FRAG needs a trace with payload");
      }
      return fragment(trace, params, rng);

    case EvasionLabel::kTcpSeg:
      if (!has_payload(trace)) {
        throw Error(ErrorCode::kUnsupportedOnEmptyPayload, "TCP_SEG needs a trace with payload");
      }
      return segment(trace, params, rng);

    case EvasionLabel::kIpOpt: {
      FlowTrace out = trace;
      for (auto& pkt : out.packets) {
        pkt.ip.options = record_route_options();
        trace::finalize_packet(pkt);
      }
      return out;
    }

    case EvasionLabel::kIpTos: {
      FlowTrace out = trace;
      for (std::size_t i = 0; i < out.packets.size(); ++i) {
        auto& pkt = out.packets[i];
        pkt.ip.tos = static_cast<std::uint8_t>(params.tos_values[i % params.tos_values.size()]);
        trace::finalize_packet(pkt);
      }
      return out;
    }

    case EvasionLabel::kTcpOpt: {
      FlowTrace out = trace;
      auto tsval = static_cast<std::uint32_t>(rng.next());
      for (auto& pkt : out.packets) {
        if (!pkt.tcp) continue;
        std::vector<trace::TcpOption> options;
        if (pkt.tcp->syn()) {
          Bytes mss(2);
          wire::store_be16(mss.data(), kDefaultMss);
          options.push_back({trace::tcp_option::kMss, std::move(mss)});
        } else {
          Bytes stamp(8, 0);
          wire::store_be32(stamp.data(), tsval);
          tsval += static_cast<std::uint32_t>(rng.uniform_int(1, 10));
          options.push_back({trace::tcp_option::kNop, {}});
          options.push_back({trace::tcp_option::kNop, {}});
          options.push_back({trace::tcp_option::kTimestamp, std::move(stamp)});
        }
        pkt.tcp->options = trace::encode_tcp_options(options);
        trace::finalize_packet(pkt);
      }
      return out;
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown evasion label");
}

std::vector<LabeledTrace> build_labeled_corpus(int n_flows_per_class, const SynthParams& params,
                                               std::uint64_t seed, const CorpusOptions& options) {
  if (n_flows_per_class < 1) throw Error(ErrorCode::kInvalidArgument, "n_flows_per_class must be >= 1");
  params.validate();
  const CleanFlowShape& shape = options.shape;
  if (shape.min_packets < 2 || shape.max_packets < shape.min_packets) {
    throw Error(ErrorCode::kInvalidArgument, "corpus flows need 2 <= min_packets <= max_packets");
  }
  if (shape.min_payload < 1) throw Error(ErrorCode::kInvalidArgument, "corpus flows need min_payload >= 1");

  const int classes = kEvasionClassCount + (options.include_clean ? 1 : 0);
  const std::size_t total = static_cast<std::size_t>(n_flows_per_class) * static_cast<std::size_t>(classes);
  std::vector<LabeledTrace> corpus(total);

  auto build_one = [&](std::size_t i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
    Rng shape_rng(derive_seed(seed, 2 * i));
    const int n_packets = static_cast<int>(shape_rng.uniform_int(shape.min_packets, shape.max_packets));
    FlowTrace clean = generate_clean_flow(derive_seed(seed, 2 * i + 1), n_packets, shape.min_payload,
                                          shape.max_payload);
    if (label == kCleanLabel) {
      corpus[i] = LabeledTrace{std::move(clean), label};
      return;
    }
    SynthParams local = params;
    local.seed = derive_seed(params.seed, i);
    corpus[i] = LabeledTrace{apply_evasion(clean, static_cast<EvasionLabel>(label), local), label};
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(options.workers, static_cast<unsigned>(total)));
  if (workers == 1) {
    for (std::size_t i = 0; i < total; ++i) build_one(i);
    return corpus;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < total; i += workers) build_one(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return corpus;
}

}  // namespace evdet::synth
