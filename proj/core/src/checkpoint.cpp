#include "evdet/checkpoint.hpp"

#include "evdet/error.hpp"
#include "evdet/pcap.hpp"

namespace evdet::nn {
namespace {

constexpr std::uint8_t kMagic[4] = {'B', 'L', 'S', 'M'};

class Cursor {
 public:
  explicit Cursor(ByteView data) : data_(data) {}

  const std::uint8_t* take(std::size_t n) {
    if (n > data_.size() - at_) throw Error(ErrorCode::kTruncatedFile, "checkpoint ends early");
    const std::uint8_t* p = data_.data() + at_;
    at_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint16_t u16() { return wire::load_le16(take(2)); }
  std::uint64_t u64() { return wire::load_le64(take(8)); }
  double f64() { return wire::to_f64(u64()); }
  bool done() const { return at_ == data_.size(); }

 private:
  ByteView data_;
  std::size_t at_ = 0;
};

}  // namespace

Bytes encode_checkpoint(const Checkpoint& ckpt) {
  const ModelConfig& c = ckpt.config;
  if (ckpt.params.size() != parameter_count(c)) {
    throw Error(ErrorCode::kShapeMismatch, "parameter count does not match checkpoint config");
  }
  wire::Writer w;
  w.raw(ByteView(kMagic, 4));
  w.le16(kCheckpointVersion);
  w.le16(static_cast<std::uint16_t>(c.input_dim));
  w.le16(static_cast<std::uint16_t>(c.hidden));
  w.le16(static_cast<std::uint16_t>(c.classes));
  w.u8(static_cast<std::uint8_t>(c.layers));
  w.u8(static_cast<std::uint8_t>(c.frame));
  w.u8(c.bidirectional ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(c.readout));
  w.u8(ckpt.scaler ? 1 : 0);
  if (ckpt.scaler) {
    for (double v : ckpt.scaler->offset) w.f64(v);
    for (double v : ckpt.scaler->scale) w.f64(v);
  }
  w.le64(ckpt.params.size());
  for (double v : ckpt.params) w.f64(v);
  return w.take();
}

Checkpoint decode_checkpoint(ByteView bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw Error(ErrorCode::kBadMagic, "not a BLSM checkpoint");
  }
  Cursor in(bytes.subspan(4));
  const std::uint16_t version = in.u16();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kFormatError, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ModelConfig& c = ckpt.config;
  c.input_dim = in.u16();
  c.hidden = in.u16();
  c.classes = in.u16();
  c.layers = in.u8();
  c.frame = in.u8();
  const std::uint8_t bi = in.u8();
  const std::uint8_t readout = in.u8();
  const std::uint8_t has_scaler = in.u8();
  if (bi > 1 || readout > 1 || has_scaler > 1) throw Error(ErrorCode::kFormatError, "bad checkpoint flag byte");
  c.bidirectional = bi == 1;
  c.readout = static_cast<Readout>(readout);
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kFormatError, e.what());
  }
  if (has_scaler) {
    features::FeatureScaler s;
    for (double& v : s.offset) v = in.f64();
    for (double& v : s.scale) v = in.f64();
    ckpt.scaler = s;
  }
  const std::uint64_t count = in.u64();
  if (count != parameter_count(c)) throw Error(ErrorCode::kFormatError, "parameter count does not match config");
  ckpt.params.resize(count);
  for (double& v : ckpt.params) v = in.f64();
  if (!in.done()) throw Error(ErrorCode::kFormatError, "trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  trace::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(trace::read_file(path)); }

template <typename T>
Checkpoint make_checkpoint(const BiLstm<T>& model, std::optional<features::FeatureScaler> scaler) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.scaler = std::move(scaler);
  ckpt.params.assign(model.params().begin(), model.params().end());
  return ckpt;
}

BiLstm<double> model_from_checkpoint(const Checkpoint& ckpt) { return BiLstm<double>(ckpt.config, ckpt.params); }

template Checkpoint make_checkpoint(const BiLstm<double>&, std::optional<features::FeatureScaler>);
template Checkpoint make_checkpoint(const BiLstm<float>&, std::optional<features::FeatureScaler>);

}  // namespace evdet::nn
