#include "doctest.h"
#include "evdet/error.hpp"
#include "evdet/evasion.hpp"
#include "evdet/features.hpp"
#include "oracles.hpp"

using namespace evdet;
using namespace evdet::features;
using trace::FlowTrace;
using trace::PacketRecord;

namespace {

PacketRecord segment(std::uint32_t seq, std::size_t len, std::uint8_t flags = trace::tcp_flag::kAck) {
  PacketRecord p;
  p.ip.src_addr = 1;
  p.ip.dst_addr = 2;
  p.ip.flag_df = true;
  trace::TcpHeader t;
  t.seq = seq;
  t.flags = flags;
  p.tcp = t;
  p.payload.assign(len, 0x55);
  trace::finalize_packet(p);
  return p;
}

FlowTrace n_packet_trace(int n) {
  FlowTrace t;
  for (int i = 0; i < n; ++i) t.packets.push_back(segment(100 + 10 * static_cast<std::uint32_t>(i), 10));
  return t;
}

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("SYN without options uses absence sentinels") {
    const FeatureVector row = assemble(intra_features(segment(1, 0, trace::tcp_flag::kSyn), std::nullopt),
                                       inter_features(nullptr, segment(1, 0)));
    CHECK(row[kTcpSyn] == 1.0);
    CHECK(row[kTcpMss] == kAbsent);
    CHECK(row[kTcpWindowScale] == kAbsent);
    CHECK(row[kTcpTimestamp] == kAbsent);
    CHECK(row[kIpRoute] == kAbsent);
    CHECK(row[kIpTos] == 0.0);
    CHECK(row[kIpOptLen] == 0.0);
    CHECK(row[kTcpFlag] == 2.0);
    CHECK(row[kIpFlag] == 2.0);
  }

  TEST_CASE("MSS option value") {
    PacketRecord p = segment(1, 0, trace::tcp_flag::kSyn);
    // kind 2, length 4, value 0x05B4, hand-encoded.
    p.tcp->options = {2, 4, 0x05, 0xB4};
    trace::finalize_packet(p);
    CHECK(assemble(intra_features(p, std::nullopt), {})[kTcpMss] == 1460.0);
  }

  TEST_CASE("corrupted TCP checksum") {
    PacketRecord p = segment(1, 5);
    p.tcp->checksum ^= 1;
    CHECK(assemble(intra_features(p, std::nullopt), {})[kTcpChecksumValid] == 0.0);
    CHECK(assemble(intra_features(segment(1, 5), std::nullopt), {})[kTcpChecksumValid] == 1.0);
  }

  TEST_CASE("sequence delta is relative to the expected sequence") {
    const PacketRecord p = segment(1010, 5);
    CHECK(assemble(intra_features(p, 1000u), {})[kTcpSeqDelta] == 10.0);
    CHECK(assemble(intra_features(p, 1020u), {})[kTcpSeqDelta] == -10.0);
    CHECK(assemble(intra_features(p, std::nullopt), {})[kTcpSeqDelta] == 0.0);
  }

  TEST_CASE("first packet has no predecessor") {
    const InterFeatures v = inter_features(nullptr, segment(1, 3));
    CHECK(v == InterFeatures{-1.0, -1.0, -1.0});
  }

  TEST_CASE("identical TTLs give a zero difference") {
    const PacketRecord a = segment(1, 3), b = segment(4, 3);
    CHECK(inter_features(&a, b)[1] == 0.0);
  }

  TEST_CASE("TCP overlap against the interval oracle") {
    const PacketRecord prev = segment(1000, 24);
    const PacketRecord cur = segment(1016, 24);
    const int expected = oracle::interval_overlap(1000, 24, 1016, 24);
    CHECK(expected == 8);
    CHECK(inter_features(&prev, cur)[2] == expected);
    // At or after prev.seq the feature is the overlap of prev with [seq, inf).
    for (std::uint32_t s : {1000u, 1010u, 1023u, 1024u, 1100u}) {
      const PacketRecord c = segment(s, 24);
      CHECK(inter_features(&prev, c)[2] == oracle::interval_overlap(1000, 24, s, 1 << 20));
    }
    // Before it, prev_end - seq.
    CHECK(inter_features(&prev, segment(900, 24))[2] == 124);
    CHECK(inter_features(&prev, segment(990, 24))[2] == 34);
  }

  TEST_CASE("window arithmetic") {
    CHECK(window_lengths(5, 5) == std::vector<int>{5});
    CHECK(window_lengths(12, 5) == std::vector<int>{5, 5});
    for (int n = 3; n < 40; ++n)
      for (int f = 3; f <= 7; ++f) CHECK(window_lengths(static_cast<std::size_t>(n), f) == oracle::windows(n, f));
  }

  TEST_CASE("extract_sequences on five and twelve packets") {
    auto five = extract_sequences(n_packet_trace(5), 5, 3);
    REQUIRE(five.size() == 1);
    CHECK(five[0].rows.size() == 5);
    CHECK(five[0].label == 3);
    auto twelve = extract_sequences(n_packet_trace(12), 5, 0);
    REQUIRE(twelve.size() == 2);
    CHECK(twelve[1].rows.size() == 5);
    const auto all = trace_features(n_packet_trace(12));
    CHECK(twelve[1].rows[0] == all[5]);
  }

  TEST_CASE("extract_sequences errors") {
    try {
      extract_sequences(n_packet_trace(2), 5, 0);
      FAIL("expected TraceTooShort");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kTraceTooShort);
    }
    CHECK_THROWS_AS(extract_sequences(n_packet_trace(9), 2, 0), Error);
    CHECK_THROWS_AS(extract_sequences(n_packet_trace(9), 8, 0), Error);
  }

  TEST_CASE("row invariants on clean and transformed flows") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const FlowTrace clean = synth::generate_clean_flow(s, 6, 16, 64);
      const auto rows = trace_features(clean);
      REQUIRE(rows.size() == clean.packets.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        CHECK(rows[r][kTcpChecksumValid] == 1.0);
        CHECK(rows[r][kTcpMss] == kAbsent);
        CHECK(rows[r][kTcpWindowScale] == kAbsent);
        if (r > 0) {
          CHECK(rows[r][kIpOffsetDelta] == 0.0);
          CHECK(rows[r][kTcpSeqDelta] == 0.0);
        }
      }
      for (auto label : synth::kAllLabels) {
        const auto t = synth::apply_evasion(clean, label, synth::SynthParams{});
        const auto tr = trace_features(t);
        for (std::size_t r = 0; r < tr.size(); ++r) {
          for (std::size_t d : {kIpOffsetDelta, kIpTtlDiff, kTcpOverlap}) CHECK((tr[r][d] == -1.0) == (r == 0));
          for (std::size_t d : {kTcpChecksumValid, kTcpSyn, kTcpTimestamp, kIpRoute}) {
            const double v = tr[r][d];
            CHECK((v == 0.0 || v == 1.0 || v == kAbsent));
          }
        }
      }
    }
  }

  TEST_CASE("feature extraction is pure") {
    const FlowTrace t = synth::generate_clean_flow(3, 7, 16, 64);
    CHECK(trace_features(t) == trace_features(t));
  }

  TEST_CASE("scaler standardizes and ignores constant dimensions") {
    std::vector<FeatureVector> rows(4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i].fill(7.0);
      rows[i][0] = static_cast<double>(i);
    }
    const FeatureScaler s = FeatureScaler::fit(rows);
    CHECK(s.offset[0] == doctest::Approx(1.5));
    CHECK(s.scale[0] == doctest::Approx(std::sqrt(1.25)));
    CHECK(s.scale[5] == 1.0);
    CHECK(s.apply(rows[3])[0] == doctest::Approx(1.5 / std::sqrt(1.25)));
    CHECK(s.apply(rows[3])[5] == 0.0);
  }
}
