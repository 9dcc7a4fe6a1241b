#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "evdet/features.hpp"
#include "evdet/lstm.hpp"
#include "evdet/wire.hpp"

namespace evdet::nn {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Model configuration, optional input scaler and parameters in 64-bit
/// precision. On-disk layout ("BLSM", little-endian):
///
///   magic[4] version:u16
///   input_dim:u16 hidden:u16 classes:u16 layers:u8 frame:u8
///   bidirectional:u8 readout:u8 has_scaler:u8
///   [offset:f64 x16, scale:f64 x16]          when has_scaler = 1
///   param_count:u64 params:f64 x param_count (ParamLayout order)
struct Checkpoint {
  ModelConfig config;
  std::optional<features::FeatureScaler> scaler;
  std::vector<double> params;

  bool operator==(const Checkpoint&) const = default;
};

Bytes encode_checkpoint(const Checkpoint& ckpt);
/// Throws Error(kBadMagic) / Error(kFormatError) / Error(kTruncatedFile).
Checkpoint decode_checkpoint(ByteView bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
Checkpoint make_checkpoint(const BiLstm<T>& model, std::optional<features::FeatureScaler> scaler = std::nullopt);

BiLstm<double> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace evdet::nn
