// Compressed-image container.
//
// Layout, all integers little-endian:
//   "WDSC" | version u8 | variant u8 | lambda_id u16 | image_h u16 | image_w u16
//   | channels u16 | checkpoint_id u64 | payload length u32 (x1 or x2)
//   | payload crc32 u32 | header crc32 u32 | payload bytes ...
// The header crc covers every header byte before it. Variant 0 carries the
// latent payload only; variant 1 carries the hyper-latent payload second.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wdsc/bytes.hpp"

namespace wdsc {

enum class Variant : std::uint8_t { kFactorized = 0, kHyperprior = 1 };

inline const char* to_string(Variant v) { return v == Variant::kHyperprior ? "hyperprior" : "factorized"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "factorized") return Variant::kFactorized;
  if (s == "hyperprior") return Variant::kHyperprior;
  throw std::invalid_argument("unknown variant '" + s + "' (expected factorized or hyperprior)");
}

inline std::size_t payload_count(Variant v) { return v == Variant::kHyperprior ? 2 : 1; }

struct BitstreamHeader {
  Variant variant = Variant::kFactorized;
  std::uint16_t lambda_id = 0;
  std::uint16_t image_h = 0;
  std::uint16_t image_w = 0;
  std::uint16_t channels = 0;
  std::uint64_t checkpoint_id = 0;

  bool operator==(const BitstreamHeader&) const = default;
};

struct Bitstream {
  BitstreamHeader header;
  std::vector<std::vector<std::uint8_t>> payloads;

  std::size_t payload_bytes() const {
    std::size_t n = 0;
    for (const auto& p : payloads) n += p.size();
    return n;
  }
  bool operator==(const Bitstream&) const = default;
};

constexpr std::array<std::uint8_t, 4> kBitstreamMagic{'W', 'D', 'S', 'C'};
constexpr std::uint8_t kBitstreamVersion = 1;

inline std::uint32_t payload_crc(const std::vector<std::vector<std::uint8_t>>& payloads) {
  std::vector<std::uint8_t> all;
  for (const auto& p : payloads) all.insert(all.end(), p.begin(), p.end());
  return crc32_of(all);
}

inline std::vector<std::uint8_t> pack(const Bitstream& b) {
  if (b.payloads.size() != payload_count(b.header.variant)) {
    throw FormatError(std::string(to_string(b.header.variant)) + " bitstream needs " +
                      std::to_string(payload_count(b.header.variant)) + " payloads, got " +
                      std::to_string(b.payloads.size()));
  }
  ByteWriter w;
  w.bytes(kBitstreamMagic);
  w.u8(kBitstreamVersion);
  w.u8(static_cast<std::uint8_t>(b.header.variant));
  w.u16(b.header.lambda_id);
  w.u16(b.header.image_h);
  w.u16(b.header.image_w);
  w.u16(b.header.channels);
  w.u64(b.header.checkpoint_id);
  for (const auto& p : b.payloads) w.u32(ByteWriter::checked_u32(p.size(), "payload length"));
  w.u32(payload_crc(b.payloads));
  w.u32(crc32_of(w.data()));
  for (const auto& p : b.payloads) w.bytes(p);
  return w.take();
}

inline Bitstream unpack(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kBitstreamMagic.begin())) throw FormatError("not a WDSC bitstream");
  const auto version = r.u8();
  if (version != kBitstreamVersion) throw FormatError("unsupported bitstream version " + std::to_string(version));
  const auto variant = r.u8();
  if (variant > 1) throw FormatError("unknown bitstream variant " + std::to_string(variant));
  Bitstream b;
  b.header.variant = static_cast<Variant>(variant);
  b.header.lambda_id = r.u16();
  b.header.image_h = r.u16();
  b.header.image_w = r.u16();
  b.header.channels = r.u16();
  b.header.checkpoint_id = r.u64();
  std::vector<std::uint32_t> lengths(payload_count(b.header.variant));
  for (auto& n : lengths) n = r.u32();
  const std::uint32_t body_crc = r.u32();
  const std::size_t header_end = r.position();
  if (r.u32() != crc32_of(bytes.first(header_end))) throw FormatError("bitstream header checksum mismatch");
  std::uint64_t total = 0;
  for (auto n : lengths) total += n;
  if (total != r.remaining()) {
    throw FormatError("payload lengths sum to " + std::to_string(total) + " bytes but " +
                      std::to_string(r.remaining()) + " follow the header");
  }
  for (auto n : lengths) {
    const auto p = r.bytes(n);
    b.payloads.emplace_back(p.begin(), p.end());
  }
  if (payload_crc(b.payloads) != body_crc) throw FormatError("bitstream payload checksum mismatch");
  return b;
}

}  // namespace wdsc
