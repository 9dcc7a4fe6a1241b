#include <filesystem>
#include <set>

#include "doctest.h"
#include "evdet/checkpoint.hpp"
#include "evdet/dataset.hpp"
#include "evdet/error.hpp"
#include "evdet/random.hpp"

using namespace evdet;
using namespace evdet::data;

namespace {

Dataset random_dataset(Rng& rng, std::size_t n, int classes = 8) {
  Dataset ds;
  ds.class_count = classes;
  for (std::size_t i = 0; i < n; ++i) {
    features::FeatureSequence s;
    s.label = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(classes)));
    s.rows.resize(3 + rng.uniform_index(5));
    for (auto& r : s.rows)
      for (double& v : r) v = rng.uniform(-2000, 2000);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("evdet_test_" + name);
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("single sample round trip is bit exact") {
    Rng rng(1);
    Dataset ds = random_dataset(rng, 1);
    quantize(ds);
    const auto path = temp_file("one.neds");
    CHECK(write_dataset(ds, path) == 1);
    const Dataset back = read_dataset(path);
    CHECK(back == ds);
    std::filesystem::remove(path);
  }

  TEST_CASE("header layout") {
    Rng rng(2);
    const Bytes b = encode_dataset(random_dataset(rng, 8000));
    CHECK(std::string(b.begin(), b.begin() + 4) == "NEDS");
    CHECK(wire::load_le16(&b[4]) == kDatasetVersion);
    CHECK(wire::load_le16(&b[6]) == 16);
    CHECK(wire::load_le16(&b[8]) == 8);
    CHECK(wire::load_le64(&b[10]) == 8000);
    CHECK(decode_dataset(b).size() == 8000);
  }

  TEST_CASE("empty, wrong-dim and malformed inputs") {
    try {
      encode_dataset(Dataset{});
      FAIL("expected EmptyDataset");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kEmptyDataset);
    }
    Rng rng(3);
    Bytes b = encode_dataset(random_dataset(rng, 3));
    Bytes wrong_dim = b;
    wrong_dim[6] = 17;
    try {
      decode_dataset(wrong_dim);
      FAIL("expected DimMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kDimMismatch);
    }
    Bytes bad = b;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_dataset(bad), Error);
    Bytes cut(b.begin(), b.end() - 1);
    try {
      decode_dataset(cut);
      FAIL("expected TruncatedFile");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kTruncatedFile);
    }
    Dataset bad_label = random_dataset(rng, 2);
    bad_label.samples[0].label = 8;
    CHECK_THROWS_AS(encode_dataset(bad_label), Error);
  }

  TEST_CASE("write-read-write is byte identical for random datasets") {
    Rng rng(4);
    for (int k = 0; k < 100; ++k) {
      const Bytes first = encode_dataset(random_dataset(rng, 1 + rng.uniform_index(40), 2 + static_cast<int>(rng.uniform_index(8))));
      CHECK(encode_dataset(decode_dataset(first)) == first);
    }
  }

  TEST_CASE("split sizes and determinism") {
    auto s = split_indices(10, {5, 0.8});
    CHECK(s.train.size() == 8);
    CHECK(s.test.size() == 2);
    const auto big = split_indices(229264, {1, 0.8});
    CHECK(big.train.size() == 183411);
    CHECK(big.test.size() == 45853);
    CHECK(split_indices(1000, {9, 0.8}).train == split_indices(1000, {9, 0.8}).train);
    std::set<std::size_t> all(big.train.begin(), big.train.end());
    all.insert(big.test.begin(), big.test.end());
    CHECK(all.size() == 229264);
    CHECK_THROWS_AS(split_indices(1, {}), Error);
    CHECK_THROWS_AS(split_indices(10, {0, 1.0}), Error);
  }

  TEST_CASE("batches cover the set once") {
    const auto b = batches(120, 50, 3);
    REQUIRE(b.size() == 3);
    CHECK(b[0].size() == 50);
    CHECK(b[1].size() == 50);
    CHECK(b[2].size() == 20);
    CHECK(batches(120, 50, 3) == b);
    CHECK(batches(120, 50, 4) != b);
    std::multiset<std::size_t> seen;
    for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
    std::multiset<std::size_t> expected;
    for (std::size_t i = 0; i < 120; ++i) expected.insert(i);
    CHECK(seen == expected);
  }

  TEST_CASE("checkpoint write-read-write is byte identical") {
    Rng rng(6);
    for (int k = 0; k < 100; ++k) {
      nn::ModelConfig c;
      c.input_dim = 1 + static_cast<int>(rng.uniform_index(16));
      c.hidden = 1 + static_cast<int>(rng.uniform_index(8));
      c.classes = 2 + static_cast<int>(rng.uniform_index(8));
      c.layers = 1 + static_cast<int>(rng.uniform_index(2));
      c.frame = 3 + static_cast<int>(rng.uniform_index(5));
      c.bidirectional = rng.uniform_index(2) == 1;
      c.readout = rng.uniform_index(2) ? nn::Readout::kStepMean : nn::Readout::kFinalState;
      nn::Checkpoint ckpt;
      ckpt.config = c;
      ckpt.params.resize(nn::parameter_count(c));
      for (double& v : ckpt.params) v = rng.uniform(-3, 3);
      if (k % 2) {
        features::FeatureScaler s;
        for (double& v : s.offset) v = rng.uniform(-1, 1);
        for (double& v : s.scale) v = rng.uniform(0.5, 2);
        ckpt.scaler = s;
      }
      const Bytes first = nn::encode_checkpoint(ckpt);
      const nn::Checkpoint back = nn::decode_checkpoint(first);
      CHECK(back == ckpt);
      CHECK(nn::encode_checkpoint(back) == first);
    }
  }

  TEST_CASE("checkpoint rejects corrupt input") {
    nn::Checkpoint ckpt;
    ckpt.config.hidden = 2;
    ckpt.params.assign(nn::parameter_count(ckpt.config), 0.5);
    Bytes b = nn::encode_checkpoint(ckpt);
    CHECK(std::string(b.begin(), b.begin() + 4) == "BLSM");
    Bytes bad = b;
    bad[1] = 'X';
    try {
      nn::decode_checkpoint(bad);
      FAIL("expected BadMagic");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kBadMagic);
    }
    CHECK_THROWS_AS(nn::decode_checkpoint(Bytes(b.begin(), b.end() - 3)), Error);
    Bytes extra = b;
    extra.push_back(0);
    CHECK_THROWS_AS(nn::decode_checkpoint(extra), Error);
  }
}
