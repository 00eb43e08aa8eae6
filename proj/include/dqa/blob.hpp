#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dqa/quant.hpp"

namespace dqa {

// Blob layout, all multi-byte integers little-endian:
//   magic "DQA1" | version u16 | flags u16 | layer_id (u16 len + bytes)
//   | n u8 | m u8 | channel_count u32 | channel_len u32 | layer_absmax f32
//   | important bitmap (ceil(channel_count/8) bytes)
//   | packed values (n-bit two's complement, MSB-first, zero-padded)
//   | [huffman table + encoded stream]   (iff flags bit 0)
//   | crc32 over body + error section
inline constexpr std::uint16_t kBlobVersion = 1;
inline constexpr std::uint16_t kBlobFlagErrorSection = 1u << 0;

std::vector<std::uint8_t> serialize(const QuantizedLayer& q);

// Exact inverse of serialize. Throws BadMagic, VersionUnsupported, Truncated,
// ChecksumMismatch, or FormatError on malformed field values.
QuantizedLayer deserialize(std::span<const std::uint8_t> bytes);

// Exact bit accounting of one serialized layer. Unpadded bit counts per
// section; the invariant total_bits == 8 * serialized size - padding is
// what the tests pin down.
struct MemoryReport {
  std::int64_t value_count = 0;
  std::int64_t raw_float_bits = 0;    // value_count * baseline_bits
  std::int64_t header_bits = 0;       // fixed fields + bitmap + checksum
  std::int64_t body_bits = 0;         // value_count * n
  std::int64_t body_pad_bits = 0;
  std::int64_t table_bits = 0;        // serialized huffman table
  std::int64_t stream_bits = 0;       // stream envelope + payload
  std::int64_t stream_pad_bits = 0;
  std::int64_t direct_total_bits = 0;  // header + body (no error section)
  std::int64_t dqa_total_bits = 0;     // header + body + error section
  double overhead_pct = 0.0;           // error section relative to the body
  double compression_vs_float = 0.0;   // raw_float_bits / dqa_total_bits

  std::int64_t error_section_bits() const { return table_bits + stream_bits; }
};

MemoryReport memory_report(const QuantizedLayer& q, int baseline_bits = 32);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

}  // namespace dqa
