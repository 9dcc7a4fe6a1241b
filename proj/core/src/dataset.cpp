#include "evdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>

#include "evdet/error.hpp"
#include "evdet/pcap.hpp"
#include "evdet/random.hpp"

namespace evdet::data {
namespace {

constexpr std::uint8_t kMagic[4] = {'N', 'E', 'D', 'S'};
constexpr std::size_t kHeaderSize = 4 + 2 + 2 + 2 + 8;

void check_sample(const features::FeatureSequence& s, int class_count, std::size_t index) {
  const auto where = " (sample " + std::to_string(index) + ")";
  if (s.label < 0 || s.label >= class_count) {
    throw Error(ErrorCode::kInvalidArgument, "label " + std::to_string(s.label) + " outside class count" + where);
  }
  if (s.rows.size() < static_cast<std::size_t>(features::kMinFrame) ||
      s.rows.size() > static_cast<std::size_t>(features::kMaxFrame)) {
    throw Error(ErrorCode::kInvalidArgument, "length " + std::to_string(s.rows.size()) + " outside [3, 7]" + where);
  }
}

}  // namespace

Bytes encode_dataset(const Dataset& ds) {
  if (ds.samples.empty()) throw Error(ErrorCode::kEmptyDataset, "no samples to write");
  if (ds.class_count < 1 || ds.class_count > 255) {
    throw Error(ErrorCode::kInvalidArgument, "class_count must be in [1, 255]");
  }
  wire::Writer w;
  w.raw(kMagic);
  w.le16(kDatasetVersion);
  w.le16(static_cast<std::uint16_t>(features::kFeatureDim));
  w.le16(static_cast<std::uint16_t>(ds.class_count));
  w.le64(ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    check_sample(s, ds.class_count, i);
    w.u8(static_cast<std::uint8_t>(s.label));
    w.u8(static_cast<std::uint8_t>(s.rows.size()));
    for (const auto& row : s.rows)
      for (double v : row) w.f32(static_cast<float>(v));
  }
  return w.take();
}

Dataset decode_dataset(ByteView bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a NEDS dataset");
  }
  if (bytes.size() < kHeaderSize) throw Error(ErrorCode::kTruncatedFile, "dataset header truncated");
  const std::uint8_t* p = bytes.data();
  const std::uint16_t version = wire::load_le16(p + 4);
  const std::uint16_t dim = wire::load_le16(p + 6);
  const std::uint16_t class_count = wire::load_le16(p + 8);
  const std::uint64_t count = wire::load_le64(p + 10);
  if (version != kDatasetVersion) {
    throw Error(ErrorCode::kFormatError, "unsupported dataset version " + std::to_string(version));
  }
  if (dim != features::kFeatureDim) {
    throw Error(ErrorCode::kDimMismatch, "dataset dim " + std::to_string(dim) + ", expected 16");
  }
  if (class_count == 0 || class_count > 255) throw Error(ErrorCode::kFormatError, "bad class_count");

  Dataset ds;
  ds.class_count = class_count;
  std::size_t off = kHeaderSize;
  const std::size_t row_bytes = 4 * features::kFeatureDim;
  // Each record takes at least 2 + 3 rows; reject absurd counts before reserving.
  if (count > (bytes.size() - off) / (2 + 3 * row_bytes) + 1) {
    throw Error(ErrorCode::kTruncatedFile, "record count exceeds file size");
  }
  ds.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (off + 2 > bytes.size()) throw Error(ErrorCode::kTruncatedFile, "record " + std::to_string(i) + " truncated");
    features::FeatureSequence s;
    s.label = p[off];
    const std::size_t len = p[off + 1];
    off += 2;
    check_sample(features::FeatureSequence{std::vector<features::FeatureVector>(len), s.label}, class_count,
                 static_cast<std::size_t>(i));
    if (off + len * row_bytes > bytes.size()) {
      throw Error(ErrorCode::kTruncatedFile, "record " + std::to_string(i) + " truncated");
    }
    s.rows.resize(len);
    for (auto& row : s.rows) {
      for (double& v : row) {
        v = wire::to_f32(wire::load_le32(p + off));
        off += 4;
      }
    }
    ds.samples.push_back(std::move(s));
  }
  if (off != bytes.size()) throw Error(ErrorCode::kFormatError, "trailing bytes after last record");
  return ds;
}

std::size_t write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  trace::write_file(path, encode_dataset(ds));
  return ds.samples.size();
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(trace::read_file(path)); }

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  out << "sample,label,step";
  for (std::size_t d = 0; d < features::kFeatureDim; ++d) out << ",f" << d;
  out << '\n';
  out.precision(9);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    for (std::size_t t = 0; t < s.rows.size(); ++t) {
      out << i << ',' << s.label << ',' << t;
      for (double v : s.rows[t]) out << ',' << v;
      out << '\n';
    }
  }
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed: " + path.string());
}

void quantize(Dataset& ds) {
  for (auto& s : ds.samples)
    for (auto& row : s.rows)
      for (double& v : row) v = static_cast<float>(v);
}

std::vector<int> class_histogram(const Dataset& ds) {
  std::vector<int> h(static_cast<std::size_t>(std::max(ds.class_count, 0)), 0);
  for (const auto& s : ds.samples)
    if (s.label >= 0 && s.label < ds.class_count) ++h[static_cast<std::size_t>(s.label)];
  return h;
}

Split split_indices(std::size_t n, const SplitSpec& spec) {
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "split needs at least 2 samples");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "train_fraction must be in (0, 1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.train_fraction));
  Split out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
  const Split idx = split_indices(ds.samples.size(), spec);
  std::pair<Dataset, Dataset> out;
  out.first.class_count = out.second.class_count = ds.class_count;
  for (std::size_t i : idx.train) out.first.samples.push_back(ds.samples[i]);
  for (std::size_t i : idx.test) out.second.samples.push_back(ds.samples[i]);
  return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t epoch_seed) {
  if (batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(epoch_seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace evdet::data
