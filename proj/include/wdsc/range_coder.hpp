// Quantization, integer CDF tables, and a carry-less 32-bit range coder
// (Subbotin style) with 16-bit probability precision.
//
// Every table reserves its first and last bins as escapes. A symbol below
// (above) the table's range is coded as the low (high) escape followed by its
// distance to the range, written as raw bits, so any int32 symbol is
// encodable.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wdsc/tensor.hpp"

namespace wdsc {

class CorruptStream : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr unsigned kDefaultPrecision = 16;

// ---------------------------------------------------------------------------
// Quantization

struct SymbolPlane {
  Shape shape;  // [C, H, W], channel-major raster order
  std::vector<std::int32_t> symbols;
};

// Round half away from zero.
inline std::int32_t quantize_value(double v) {
  constexpr double lo = std::numeric_limits<std::int32_t>::min();
  constexpr double hi = std::numeric_limits<std::int32_t>::max();
  return static_cast<std::int32_t>(std::clamp(std::round(v), lo, hi));
}

template <class Real>
SymbolPlane quantize(const Tensor<Real>& v) {
  SymbolPlane plane{v.shape(), std::vector<std::int32_t>(v.size())};
  for (std::size_t i = 0; i < v.size(); ++i) plane.symbols[i] = quantize_value(static_cast<double>(v[i]));
  return plane;
}

template <class Real>
Tensor<Real> dequantize(const SymbolPlane& plane) {
  std::vector<Real> values(plane.symbols.begin(), plane.symbols.end());
  return Tensor<Real>::from(plane.shape, std::move(values));
}

// ---------------------------------------------------------------------------
// CDF tables

struct CdfTable {
  std::int32_t offset = 0;           // symbol value of bin 0 (the low escape)
  std::vector<std::uint32_t> cdf;    // bins + 1 entries, 0 ... 2^precision
  unsigned precision = kDefaultPrecision;

  std::size_t bins() const { return cdf.empty() ? 0 : cdf.size() - 1; }
  std::int32_t min_symbol() const { return offset + 1; }
  std::int32_t max_symbol() const { return offset + static_cast<std::int32_t>(bins()) - 2; }
  std::uint32_t count(std::size_t bin) const { return cdf[bin + 1] - cdf[bin]; }
  double probability(std::size_t bin) const { return std::ldexp(static_cast<double>(count(bin)), -int(precision)); }

  // Probability the table assigns to coding `s` (escapes count only the bin).
  double symbol_probability(std::int32_t s) const {
    if (s < min_symbol()) return probability(0);
    if (s > max_symbol()) return probability(bins() - 1);
    return probability(static_cast<std::size_t>(s - offset));
  }

  void validate() const {
    if (precision < 1 || precision > 16) throw std::invalid_argument("cdf table precision must be in [1,16]");
    if (cdf.size() < 4) throw std::invalid_argument("cdf table needs two escape bins and one symbol");
    if (cdf.front() != 0 || cdf.back() != (1u << precision))
      throw std::invalid_argument("cdf table must run from 0 to 2^precision");
    for (std::size_t i = 1; i < cdf.size(); ++i)
      if (cdf[i] <= cdf[i - 1]) throw std::invalid_argument("cdf table must be strictly increasing");
  }

  bool operator==(const CdfTable&) const = default;
};

// Integer CDF for a probability vector: every entry gets at least one count,
// counts sum to 2^precision, and the leftover rounding is spent where it
// costs (or gains) the least cross-entropy.
inline std::vector<std::uint32_t> quantize_pmf(std::span<const double> pmf, unsigned precision) {
  const std::uint64_t total = 1ull << precision;
  if (pmf.empty() || pmf.size() > total) {
    throw std::range_error("cannot quantize " + std::to_string(pmf.size()) + " probabilities to " +
                           std::to_string(precision) + " bits");
  }
  double mass = 0;
  for (double p : pmf) {
    if (!(p >= 0) || !std::isfinite(p)) throw std::invalid_argument("pmf entries must be finite and >= 0");
    mass += p;
  }
  if (mass <= 0) throw std::invalid_argument("pmf has no mass");

  const std::size_t n = pmf.size();
  std::vector<double> p(n);
  std::vector<std::int64_t> counts(n);
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = pmf[i] / mass;
    counts[i] = std::max<std::int64_t>(1, std::llround(p[i] * static_cast<double>(total)));
    sum += counts[i];
  }

  using Entry = std::pair<double, std::size_t>;
  if (sum < static_cast<std::int64_t>(total)) {
    auto gain = [&](std::size_t i) { return p[i] * std::log(double(counts[i] + 1) / double(counts[i])); };
    std::priority_queue<Entry> heap;
    for (std::size_t i = 0; i < n; ++i) heap.emplace(gain(i), i);
    while (sum < static_cast<std::int64_t>(total)) {
      const auto i = heap.top().second;
      heap.pop();
      ++counts[i];
      ++sum;
      heap.emplace(gain(i), i);
    }
  } else if (sum > static_cast<std::int64_t>(total)) {
    auto cost = [&](std::size_t i) { return p[i] * std::log(double(counts[i]) / double(counts[i] - 1)); };
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    for (std::size_t i = 0; i < n; ++i)
      if (counts[i] > 1) heap.emplace(cost(i), i);
    while (sum > static_cast<std::int64_t>(total)) {
      const auto i = heap.top().second;
      heap.pop();
      --counts[i];
      --sum;
      if (counts[i] > 1) heap.emplace(cost(i), i);
    }
  }

  std::vector<std::uint32_t> cdf(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) cdf[i + 1] = cdf[i] + static_cast<std::uint32_t>(counts[i]);
  return cdf;
}

// Table over [min_symbol - 1, max_symbol + 1] from the in-range pmf and the
// two tail masses.
inline CdfTable make_table(std::int32_t min_symbol, std::span<const double> in_range, double low_tail,
                           double high_tail, unsigned precision) {
  std::vector<double> pmf;
  pmf.reserve(in_range.size() + 2);
  pmf.push_back(std::max(low_tail, 0.0));
  pmf.insert(pmf.end(), in_range.begin(), in_range.end());
  pmf.push_back(std::max(high_tail, 0.0));
  CdfTable t{min_symbol - 1, quantize_pmf(pmf, precision), precision};
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Range coder

class RangeEncoder {
 public:
  // Codes the interval [cum, cum + freq) out of 2^total_bits.
  void encode(std::uint32_t cum, std::uint32_t freq, unsigned total_bits) {
    range_ >>= total_bits;
    low_ += cum * range_;
    range_ *= freq;
    normalize();
  }

  // Raw bits, up to 16 at a time.
  void encode_bits(std::uint32_t value, unsigned nbits) {
    while (nbits > 0) {
      const unsigned chunk = std::min(nbits, 16u);
      nbits -= chunk;
      encode((value >> nbits) & ((1u << chunk) - 1), 1, chunk);
    }
  }

  std::vector<std::uint8_t> finish() {
    for (int i = 0; i < 4; ++i) {
      out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
      low_ <<= 8;
    }
    return std::move(out_);
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;
  static constexpr std::uint32_t kBottom = 1u << 16;

  void normalize() {
    for (;;) {
      if ((low_ ^ (low_ + range_)) >= kTop) {
        if (range_ >= kBottom) break;
        range_ = (0u - low_) & (kBottom - 1);
      }
      out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  std::uint32_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
  }

  // Position of the next symbol within 2^total_bits; follow with decode().
  std::uint32_t peek(unsigned total_bits) {
    range_ >>= total_bits;
    const std::uint32_t v = (code_ - low_) / range_;
    return std::min(v, (1u << total_bits) - 1);
  }

  void decode(std::uint32_t cum, std::uint32_t freq) {
    low_ += cum * range_;
    range_ *= freq;
    normalize();
  }

  std::uint32_t decode_bits(unsigned nbits) {
    std::uint32_t value = 0;
    while (nbits > 0) {
      const unsigned chunk = std::min(nbits, 16u);
      nbits -= chunk;
      const std::uint32_t v = peek(chunk);
      decode(v, 1);
      value = (value << chunk) | v;
    }
    return value;
  }

  std::size_t consumed() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;
  static constexpr std::uint32_t kBottom = 1u << 16;

  std::uint8_t next_byte() {
    if (pos_ >= bytes_.size()) throw CorruptStream("range-coded payload is truncated");
    return bytes_[pos_++];
  }

  void normalize() {
    for (;;) {
      if ((low_ ^ (low_ + range_)) >= kTop) {
        if (range_ >= kBottom) break;
        range_ = (0u - low_) & (kBottom - 1);
      }
      code_ = (code_ << 8) | next_byte();
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint32_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t code_ = 0;
};

namespace detail {
constexpr unsigned kEscapeLengthBits = 6;  // bit widths 0..32

inline void encode_escape(RangeEncoder& enc, std::uint32_t distance) {
  const unsigned n = static_cast<unsigned>(std::bit_width(distance));
  enc.encode_bits(n, kEscapeLengthBits);
  enc.encode_bits(distance, n);
}

inline std::uint32_t decode_escape(RangeDecoder& dec) {
  const unsigned n = dec.decode_bits(kEscapeLengthBits);
  return dec.decode_bits(n);
}
}  // namespace detail

// Codes symbols[i] with tables[table_index[i]].
inline std::vector<std::uint8_t> encode_symbols(std::span<const std::int32_t> symbols,
                                                std::span<const std::uint32_t> table_index,
                                                std::span<const CdfTable> tables) {
  if (symbols.size() != table_index.size()) throw std::invalid_argument("one table index per symbol required");
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (table_index[i] >= tables.size()) throw std::out_of_range("table index out of range");
    const CdfTable& t = tables[table_index[i]];
    const std::int64_t s = symbols[i];
    std::size_t bin;
    std::int64_t distance = -1;
    if (s < t.min_symbol()) {
      bin = 0;
      distance = t.min_symbol() - 1 - s;
    } else if (s > t.max_symbol()) {
      bin = t.bins() - 1;
      distance = s - t.max_symbol() - 1;
    } else {
      bin = static_cast<std::size_t>(s - t.offset);
    }
    enc.encode(t.cdf[bin], t.count(bin), t.precision);
    if (distance >= 0) detail::encode_escape(enc, static_cast<std::uint32_t>(distance));
  }
  return enc.finish();
}

inline std::vector<std::int32_t> decode_symbols(std::span<const std::uint8_t> bytes,
                                                std::span<const std::uint32_t> table_index,
                                                std::span<const CdfTable> tables) {
  RangeDecoder dec(bytes);
  std::vector<std::int32_t> out(table_index.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (table_index[i] >= tables.size()) throw std::out_of_range("table index out of range");
    const CdfTable& t = tables[table_index[i]];
    const std::uint32_t target = dec.peek(t.precision);
    const auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), target);
    const std::size_t bin = static_cast<std::size_t>(it - t.cdf.begin()) - 1;
    dec.decode(t.cdf[bin], t.count(bin));
    std::int64_t s = t.offset + static_cast<std::int64_t>(bin);
    if (bin == 0) {
      s = std::int64_t(t.min_symbol()) - 1 - detail::decode_escape(dec);
    } else if (bin == t.bins() - 1) {
      s = std::int64_t(t.max_symbol()) + 1 + detail::decode_escape(dec);
    }
    if (s < std::numeric_limits<std::int32_t>::min() || s > std::numeric_limits<std::int32_t>::max())
      throw CorruptStream("decoded symbol out of range");
    out[i] = static_cast<std::int32_t>(s);
  }
  if (dec.consumed() != dec.size()) {
    throw CorruptStream("payload has " + std::to_string(dec.size() - dec.consumed()) +
                        " unread bytes; tables do not match the stream");
  }
  return out;
}

// Per-channel table index for a channel-major [C, ...] plane.
inline std::vector<std::uint32_t> channel_table_index(const Shape& shape) {
  const std::size_t c = shape.at(0);
  const std::size_t plane = numel(shape) / c;
  std::vector<std::uint32_t> index(numel(shape));
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = static_cast<std::uint32_t>(i / plane);
  return index;
}

// Ideal code length of `symbols` under the tables, in bits.
inline double table_cross_entropy_bits(std::span<const std::int32_t> symbols,
                                       std::span<const std::uint32_t> table_index,
                                       std::span<const CdfTable> tables) {
  double bits = 0;
  for (std::size_t i = 0; i < symbols.size(); ++i)
    bits -= std::log2(tables[table_index[i]].symbol_probability(symbols[i]));
  return bits;
}

}  // namespace wdsc
