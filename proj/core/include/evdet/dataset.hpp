#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "evdet/features.hpp"
#include "evdet/wire.hpp"

namespace evdet::data {

inline constexpr std::uint16_t kDatasetVersion = 1;

/// Labeled feature sequences. On-disk layout ("NEDS", little-endian):
///
///   magic[4] version:u16 dim:u16 class_count:u16 count:u64
///   count x { label:u8 length:u8 rows: length x dim x f32 }
///
/// Rows are stored as 32-bit floats and widened on read.
struct Dataset {
  int class_count = 8;
  std::vector<features::FeatureSequence> samples;

  std::size_t size() const { return samples.size(); }
  bool operator==(const Dataset&) const = default;
};

/// Throws Error(kEmptyDataset) for no samples, Error(kDimMismatch) for a
/// row width other than 16 and Error(kInvalidArgument) for a label outside
/// the class count or a length outside [3, 7].
Bytes encode_dataset(const Dataset& ds);
/// Throws Error(kBadMagic), Error(kFormatError) or Error(kTruncatedFile).
Dataset decode_dataset(ByteView bytes);

/// Returns the number of records written.
std::size_t write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// One row per packet: sample,label,step,f0..f15.
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);

/// Rounds rows through 32-bit floats so in-memory data equals what a
/// written-then-read file would hold.
void quantize(Dataset& ds);

std::vector<int> class_histogram(const Dataset& ds);

struct SplitSpec {
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
};

struct Split {
  std::vector<std::size_t> train;  // sample indices
  std::vector<std::size_t> test;
};

/// Seeded shuffle of 0..n-1; the first floor(n * f) indices train.
/// Throws Error(kInvalidArgument) for n < 2 or f outside (0, 1).
Split split_indices(std::size_t n, const SplitSpec& spec);
std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec);

/// Per-epoch shuffled batches of positions 0..n-1; the final short batch
/// is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t epoch_seed);

}  // namespace evdet::data
