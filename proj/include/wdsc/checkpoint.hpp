// Checkpoint serialization.
//
// Layout (little endian):
//   "WDCK" | u16 version | u8 variant | u8 metric | u32 N | u32 N_w
//   | f64 lambda | f64 alpha | f64 beta | u16 lambda_id | u64 seed
//   | u32 tensor count | per tensor: name, u8 rank, u32 dims, f32 values
//   | u8 has_tables | [table group: latent, f64 scales, hyper]
//   | u32 crc32 of everything before it
// A table group is u32 count then per table: i32 offset, u8 precision,
// u32 cdf length, u32 cdf entries.
//
// The checkpoint id is the FNV-1a-64 hash of the serialized bytes, so any
// change to weights, config or tables changes the id.
#pragma once

#include <filesystem>

#include "wdsc/bytes.hpp"
#include "wdsc/wyner_model.hpp"

namespace wdsc {

inline constexpr char kCheckpointMagic[4] = {'W', 'D', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void write_tables(ByteWriter& w, const std::vector<CdfTable>& tables) {
  w.u32(ByteWriter::checked_u32(tables.size(), "table count"));
  for (const auto& t : tables) {
    w.i32(t.offset);
    w.u8(static_cast<std::uint8_t>(t.precision));
    w.u32(ByteWriter::checked_u32(t.cdf.size(), "cdf length"));
    for (std::uint32_t c : t.cdf) w.u32(c);
  }
}

inline std::vector<CdfTable> read_tables(ByteReader& r) {
  const std::uint32_t n = r.u32();
  if (n > r.remaining() / 9) throw FormatError("checkpoint table count exceeds file size");
  std::vector<CdfTable> tables(n);
  for (auto& t : tables) {
    t.offset = r.i32();
    t.precision = r.u8();
    const std::uint32_t len = r.u32();
    if (len > r.remaining() / 4) throw FormatError("checkpoint cdf length exceeds file size");
    t.cdf.resize(len);
    for (auto& c : t.cdf) c = r.u32();
    try {
      t.validate();
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("checkpoint holds an invalid cdf table: ") + e.what());
    }
  }
  return tables;
}

}  // namespace detail

template <class Real>
std::vector<std::uint8_t> serialize(const WynerModel<Real>& model) {
  const ModelConfig& cfg = model.config();
  ByteWriter w;
  for (char c : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(cfg.variant));
  w.u8(static_cast<std::uint8_t>(cfg.metric));
  w.u32(ByteWriter::checked_u32(cfg.channels, "channels"));
  w.u32(ByteWriter::checked_u32(cfg.n_w(), "common channels"));
  w.f64(cfg.lambda);
  w.f64(cfg.alpha);
  w.f64(cfg.beta);
  w.u16(cfg.lambda_id);
  w.u64(cfg.seed);
  const auto params = model.parameters();
  w.u32(ByteWriter::checked_u32(params.size(), "tensor count"));
  for (const auto& p : params) {
    w.str(p.name);
    w.u8(static_cast<std::uint8_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.u32(ByteWriter::checked_u32(d, "tensor dimension"));
    for (Real v : p.tensor.data()) w.f32(static_cast<float>(v));
  }
  w.u8(model.has_tables() ? 1 : 0);
  if (model.has_tables()) {
    const auto& t = model.tables();
    detail::write_tables(w, t.latent);
    w.u32(ByteWriter::checked_u32(t.scales.size(), "scale count"));
    for (double s : t.scales) w.f64(s);
    detail::write_tables(w, t.hyper);
  }
  w.u32(crc32_of(w.data()));
  return w.take();
}

inline std::uint64_t checkpoint_id_of(std::span<const std::uint8_t> bytes) { return fnv1a64(bytes); }

template <class Real>
WynerModel<Real> deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("checkpoint is truncated");
  {
    ByteReader tail(bytes.subspan(bytes.size() - 4));
    if (tail.u32() != crc32_of(bytes.first(bytes.size() - 4))) throw FormatError("checkpoint checksum mismatch");
  }
  ByteReader r(bytes.first(bytes.size() - 4));
  for (char c : kCheckpointMagic)
    if (r.u8() != static_cast<std::uint8_t>(c)) throw FormatError("not a checkpoint file (bad magic)");
  if (const auto v = r.u16(); v != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  }
  ModelConfig cfg;
  const std::uint8_t variant = r.u8(), metric = r.u8();
  if (variant > 1 || metric > 1) throw FormatError("checkpoint has unknown variant or metric");
  cfg.variant = static_cast<Variant>(variant);
  cfg.metric = static_cast<Metric>(metric);
  cfg.channels = r.u32();
  cfg.common_channels = r.u32();
  cfg.lambda = r.f64();
  cfg.alpha = r.f64();
  cfg.beta = r.f64();
  cfg.lambda_id = r.u16();
  cfg.seed = r.u64();
  if (cfg.channels == 0 || cfg.channels > 4096 || cfg.common_channels > 4096) {
    throw FormatError("checkpoint channel counts are implausible");
  }
  WynerModel<Real> model(cfg);
  const std::uint32_t count = r.u32();
  if (count != model.parameters().size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(model.parameters().size()));
  }
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    const std::size_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = numel(shape);
    if (n > r.remaining() / 4) throw FormatError("tensor " + name + " exceeds file size");
    std::vector<float> values(n);
    for (auto& v : values) v = r.f32();
    try {
      model.assign(name, shape, std::span<const float>(values));
    } catch (const ModelMismatch& e) {
      throw FormatError(e.what());
    }
  }
  if (r.u8()) {
    EntropyTables t;
    t.latent = detail::read_tables(r);
    const std::uint32_t ns = r.u32();
    if (ns > r.remaining() / 8) throw FormatError("checkpoint scale count exceeds file size");
    t.scales.resize(ns);
    for (auto& s : t.scales) s = r.f64();
    t.hyper = detail::read_tables(r);
    const std::size_t expect_latent = cfg.variant == Variant::kHyperprior ? t.scales.size() : cfg.channels;
    const std::size_t expect_hyper = cfg.variant == Variant::kHyperprior ? cfg.channels : 0;
    if (t.latent.size() != expect_latent || t.hyper.size() != expect_hyper || t.latent.empty()) {
      throw FormatError("checkpoint table counts do not match the model");
    }
    model.set_tables(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint has trailing bytes");
  model.set_checkpoint_id(checkpoint_id_of(bytes));
  return model;
}

// Freezes tables and stamps the model with the id of its serialized form.
template <class Real>
std::vector<std::uint8_t> finalize(WynerModel<Real>& model, const TableOptions& opts = {}) {
  model.freeze_tables(opts);
  auto bytes = serialize(model);
  model.set_checkpoint_id(checkpoint_id_of(bytes));
  return bytes;
}

template <class Real>
void save_checkpoint(const WynerModel<Real>& model, const std::filesystem::path& path) {
  write_file(path, serialize(model));
}

template <class Real = float>
WynerModel<Real> load_checkpoint(const std::filesystem::path& path) {
  return deserialize<Real>(read_file(path));
}

}  // namespace wdsc
