#include <set>

#include "doctest.h"
#include "evdet/error.hpp"
#include "evdet/evasion.hpp"
#include "evdet/features.hpp"
#include "evdet/reassembly.hpp"

using namespace evdet;
using namespace evdet::synth;
using trace::FlowTrace;
using trace::PacketRecord;

namespace {

Bytes payload_of(const FlowTrace& t) {
  Bytes out;
  for (const auto& p : t.packets) out.insert(out.end(), p.payload.begin(), p.payload.end());
  return out;
}

FlowTrace flow_with_payloads(std::initializer_list<std::size_t> sizes) {
  // SYN plus one data segment per size; payloads from the generator.
  FlowTrace t = generate_clean_flow(99, 1 + static_cast<int>(sizes.size()), 1, 1);
  std::uint32_t seq = t.packets[0].tcp->seq + 1;
  std::size_t k = 1;
  for (std::size_t n : sizes) {
    auto& p = t.packets[k++];
    p.payload.assign(n, static_cast<std::uint8_t>('a' + k));
    p.tcp->seq = seq;
    seq += static_cast<std::uint32_t>(n);
    trace::finalize_packet(p);
  }
  return t;
}

}  // namespace

TEST_SUITE("evasion") {
  TEST_CASE("labels follow the confusion-matrix row order") {
    CHECK(static_cast<int>(EvasionLabel::kIpOpt) == 0);
    CHECK(static_cast<int>(EvasionLabel::kIpFrag) == 1);
    CHECK(static_cast<int>(EvasionLabel::kTcpChaff) == 2);
    CHECK(static_cast<int>(EvasionLabel::kIpTos) == 3);
    CHECK(static_cast<int>(EvasionLabel::kTcpSeg) == 4);
    CHECK(static_cast<int>(EvasionLabel::kIpTtl) == 5);
    CHECK(static_cast<int>(EvasionLabel::kIpChaff) == 6);
    CHECK(static_cast<int>(EvasionLabel::kTcpOpt) == 7);
    for (auto l : kAllLabels) CHECK(parse_label(to_string(l)) == l);
    CHECK(parse_label("ip_frag") == EvasionLabel::kIpFrag);
    CHECK_FALSE(parse_label("nope").has_value());
  }

  TEST_CASE("clean flow with one packet normalizes to its own payload") {
    const FlowTrace t = generate_clean_flow(5, 1, 10, 20);
    REQUIRE(t.packets.size() == 1);
    CHECK(trace::normalize_receive(t) == payload_of(t));
  }

  TEST_CASE("clean flow is deterministic") {
    CHECK(generate_clean_flow(17, 6, 16, 64) == generate_clean_flow(17, 6, 16, 64));
    CHECK_FALSE(generate_clean_flow(17, 6, 16, 64) == generate_clean_flow(18, 6, 16, 64));
  }

  TEST_CASE("clean flow sequence numbers advance by the previous segment length") {
    const FlowTrace t = generate_clean_flow(23, 5, 100, 200);
    REQUIRE(t.packets.size() == 5);
    CHECK(t.packets[0].tcp->syn());
    for (std::size_t i = 1; i < t.packets.size(); ++i) {
      const auto& prev = t.packets[i - 1];
      const std::uint32_t used = static_cast<std::uint32_t>(prev.payload.size()) + (prev.tcp->syn() ? 1u : 0u);
      CHECK(t.packets[i].tcp->seq == prev.tcp->seq + used);
      CHECK(t.packets[i].payload.size() >= 100);
      CHECK(t.packets[i].payload.size() <= 200);
    }
    for (const auto& p : t.packets) {
      CHECK(p.ip.ttl == 64);
      CHECK(p.ip.tos == 0);
      CHECK(p.ip.options.empty());
      CHECK(p.tcp->options.empty());
      CHECK(trace::ipv4_checksum_valid(p));
      CHECK(trace::tcp_checksum_valid(p));
    }
  }

  TEST_CASE("TCP_SEG on a 24-byte payload gives three 8-byte segments") {
    const FlowTrace clean = flow_with_payloads({24});
    SynthParams p;
    const FlowTrace t = apply_evasion(clean, EvasionLabel::kTcpSeg, p);
    int data_segments = 0;
    for (const auto& pkt : t.packets)
      if (!pkt.payload.empty()) {
        ++data_segments;
        CHECK(pkt.payload.size() == 8);
      }
    CHECK(data_segments == 3);
    CHECK(trace::normalize_receive(t) == trace::normalize_receive(clean));
  }

  TEST_CASE("IP_FRAG with one unit per fragment on a 24-byte TCP section") {
    const FlowTrace clean = flow_with_payloads({4});
    SynthParams p;
    const FlowTrace t = apply_evasion(clean, EvasionLabel::kIpFrag, p);
    std::vector<int> offsets;
    for (const auto& pkt : t.packets)
      if (pkt.is_fragment()) offsets.push_back(pkt.ip.frag_offset);
    CHECK(offsets == std::vector<int>{0, 1, 2});
    CHECK(trace::normalize_receive(t) == trace::normalize_receive(clean));
  }

  TEST_CASE("IP_CHAFF doubles a five-packet trace with five bad IP checksums") {
    const FlowTrace clean = generate_clean_flow(4, 5, 16, 64);
    SynthParams p;
    const FlowTrace t = apply_evasion(clean, EvasionLabel::kIpChaff, p);
    CHECK(t.packets.size() == 10);
    int bad = 0;
    for (const auto& pkt : t.packets) bad += trace::ipv4_checksum_valid(pkt) ? 0 : 1;
    CHECK(bad == 5);
  }

  TEST_CASE("chaff and option transforms have the documented markers") {
    const FlowTrace clean = generate_clean_flow(8, 4, 16, 64);
    SynthParams p;
    const FlowTrace ttl = apply_evasion(clean, EvasionLabel::kIpTtl, p);
    int floor_ttl = 0;
    for (const auto& pkt : ttl.packets) {
      CHECK(trace::ipv4_checksum_valid(pkt));
      floor_ttl += pkt.ip.ttl == p.ttl_floor ? 1 : 0;
    }
    CHECK(floor_ttl == 4);

    const FlowTrace tcp_chaff = apply_evasion(clean, EvasionLabel::kTcpChaff, p);
    int bad_tcp = 0;
    for (const auto& pkt : tcp_chaff.packets) bad_tcp += trace::tcp_checksum_valid(pkt) ? 0 : 1;
    CHECK(bad_tcp == 4);

    const FlowTrace opt = apply_evasion(clean, EvasionLabel::kIpOpt, p);
    for (const auto& pkt : opt.packets) {
      CHECK(pkt.ip.ihl > 5);
      CHECK(trace::ip_has_route_option(pkt.ip.options));
      CHECK(trace::ipv4_checksum_valid(pkt));
    }

    const FlowTrace tos = apply_evasion(clean, EvasionLabel::kIpTos, p);
    for (std::size_t i = 0; i < tos.packets.size(); ++i) CHECK(tos.packets[i].ip.tos == p.tos_values[i % 4]);

    const FlowTrace topt = apply_evasion(clean, EvasionLabel::kTcpOpt, p);
    CHECK(trace::tcp_mss(*topt.packets[0].tcp) == 1460);
    for (std::size_t i = 1; i < topt.packets.size(); ++i) CHECK(trace::tcp_has_timestamp(*topt.packets[i].tcp));
  }

  TEST_CASE("fragment and segment transforms reject an empty payload") {
    const FlowTrace syn_only = generate_clean_flow(2, 1, 0, 0);
    for (auto label : {EvasionLabel::kIpFrag, EvasionLabel::kTcpSeg}) {
      try {
        apply_evasion(syn_only, label, SynthParams{});
        FAIL("expected UnsupportedOnEmptyPayload");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kUnsupportedOnEmptyPayload);
      }
    }
  }

  TEST_CASE("payload preservation for every transform, with and without overlap") {
    for (bool overlap : {false, true}) {
      for (std::uint64_t s = 0; s < 40; ++s) {
        const FlowTrace clean = generate_clean_flow(1000 + s, 2 + static_cast<int>(s % 6), 1, 90);
        SynthParams p;
        p.seed = s;
        p.overlap = overlap;
        p.frag_units = 1 + static_cast<int>(s % 3);
        p.seg_bytes = 1 + static_cast<int>(s % 11);
        p.chaff_rate = s % 2 ? 1.0 : 0.5;
        const Bytes expected = trace::normalize_receive(clean);
        for (auto label : kAllLabels) {
          INFO("label " << to_string(label) << " seed " << s << " overlap " << overlap);
          CHECK(trace::normalize_receive(apply_evasion(clean, label, p)) == expected);
        }
      }
    }
  }

  TEST_CASE("every transform changes the feature matrix") {
    const FlowTrace clean = generate_clean_flow(77, 6, 16, 64);
    const auto base = features::trace_features(clean);
    for (auto label : kAllLabels) {
      CHECK(features::trace_features(apply_evasion(clean, label, SynthParams{})) != base);
    }
  }

  TEST_CASE("transforms are deterministic") {
    const FlowTrace clean = generate_clean_flow(5, 5, 16, 64);
    SynthParams p;
    p.seed = 12;
    p.chaff_rate = 0.5;
    for (auto label : kAllLabels) CHECK(apply_evasion(clean, label, p) == apply_evasion(clean, label, p));
  }

  TEST_CASE("corpus is balanced, interleaved and reproducible") {
    SynthParams p;
    const auto one = build_labeled_corpus(1, p, 3);
    REQUIRE(one.size() == 8);
    std::set<int> labels;
    for (const auto& lt : one) labels.insert(lt.label);
    CHECK(labels.size() == 8);

    CorpusOptions serial;
    CorpusOptions parallel;
    parallel.workers = 4;
    const auto a = build_labeled_corpus(1000, p, 9, serial);
    const auto b = build_labeled_corpus(1000, p, 9, parallel);
    std::vector<int> counts(8, 0);
    for (const auto& lt : a) ++counts[static_cast<std::size_t>(lt.label)];
    for (int c : counts) CHECK(c == 1000);
    REQUIRE(a.size() == b.size());
    bool same = true;
    for (std::size_t i = 0; i < a.size(); ++i) same = same && a[i].trace == b[i].trace && a[i].label == b[i].label;
    CHECK(same);

    CorpusOptions clean;
    clean.include_clean = true;
    CHECK(build_labeled_corpus(2, p, 1, clean).size() == 18);
  }

  TEST_CASE("parameter validation") {
    SynthParams p;
    p.chaff_rate = 0.0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = SynthParams{};
    p.frag_units = 0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = SynthParams{};
    p.tos_values.clear();
    CHECK_THROWS_AS(p.validate(), Error);
  }
}
