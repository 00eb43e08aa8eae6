#include "dqa/blob.hpp"

#include <array>
#include <cmath>

#include "dqa/bitstream.hpp"
#include "dqa/byteio.hpp"

namespace dqa {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int bit = 0; bit < 8; ++bit) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

std::vector<std::uint8_t> pack_bitmap(const QuantizedLayer& q) {
  std::vector<std::uint8_t> bitmap((static_cast<std::size_t>(q.channel_count()) + 7) / 8, 0);
  for (int c : q.important_set)
    bitmap[static_cast<std::size_t>(c) >> 3] |= static_cast<std::uint8_t>(0x80u >> (c & 7));
  return bitmap;
}

std::vector<std::uint8_t> pack_values(const QuantizedLayer& q) {
  BitWriter writer;
  const std::uint32_t mask = (1u << q.n) - 1;
  for (int c = 0; c < q.channel_count(); ++c)
    for (int i = 0; i < q.channel_len(); ++i)
      writer.put_bits(static_cast<std::uint32_t>(q.values(i, c)) & mask, q.n);
  return writer.take();
}

std::int32_t sign_extend(std::uint32_t raw, int bits) {
  const std::uint32_t sign = 1u << (bits - 1);
  return static_cast<std::int32_t>((raw ^ sign) - sign);
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  static const auto table = make_crc_table();
  std::uint32_t crc = 0xffffffffu;
  for (auto b : bytes) crc = table[(crc ^ b) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

std::vector<std::uint8_t> serialize(const QuantizedLayer& q) {
  ByteWriter w;
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>("DQA1"), 4));
  w.u16(kBlobVersion);
  w.u16(q.has_error_section() ? kBlobFlagErrorSection : 0);
  w.str16(q.layer_id);
  w.u8(static_cast<std::uint8_t>(q.n));
  w.u8(static_cast<std::uint8_t>(q.m));
  w.u32(static_cast<std::uint32_t>(q.channel_count()));
  w.u32(static_cast<std::uint32_t>(q.channel_len()));
  w.f32(q.scale.abs_max);
  w.raw(pack_bitmap(q));

  const std::size_t checksum_begin = w.size();
  w.raw(pack_values(q));
  if (q.has_error_section()) {
    serialize_table(*q.huffman_table, w.bytes());
    serialize_stream(*q.error_stream, w.bytes());
  }
  w.u32(crc32(std::span(w.bytes()).subspan(checksum_begin)));
  return std::move(w.bytes());
}

QuantizedLayer deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("DQA1");
  const std::uint16_t version = r.u16();
  if (version != kBlobVersion)
    throw VersionUnsupported("blob version " + std::to_string(version));
  const std::uint16_t flags = r.u16();

  QuantizedLayer q;
  q.layer_id = r.str16();
  q.n = r.u8();
  q.m = r.u8();
  if (q.n < 1 || q.n > 8 || q.m < 0 || q.m > q.n)
    throw FormatError("blob carries invalid bit widths n=" + std::to_string(q.n) +
                      " m=" + std::to_string(q.m));
  const std::uint32_t channels = r.u32();
  const std::uint32_t len = r.u32();
  if (channels == 0 || len == 0) throw FormatError("blob carries an empty layer");
  const float abs_max = r.f32();
  if (!(abs_max >= 0.0f) || !std::isfinite(abs_max))
    throw FormatError("blob carries invalid layer absmax");
  q.scale = scale_from_absmax(abs_max, q.n, q.m);

  const auto bitmap = r.raw((channels + 7) / 8);
  for (std::uint32_t c = 0; c < channels; ++c)
    if (bitmap[c >> 3] & (0x80u >> (c & 7))) q.important_set.push_back(static_cast<int>(c));

  const std::size_t checksum_begin = r.pos();
  const std::uint64_t value_bits = std::uint64_t{channels} * len * static_cast<unsigned>(q.n);
  const auto packed = r.raw(static_cast<std::size_t>((value_bits + 7) / 8));
  q.values.resize(len, channels);
  BitReader bits(packed, value_bits);
  for (std::uint32_t c = 0; c < channels; ++c)
    for (std::uint32_t i = 0; i < len; ++i)
      q.values(i, c) = sign_extend(static_cast<std::uint32_t>(bits.get_bits(q.n)), q.n);

  const bool has_error = (flags & kBlobFlagErrorSection) != 0;
  if (has_error != (q.m > 0 && !q.important_set.empty()))
    throw FormatError("error-section flag disagrees with bitmap and m");
  if (has_error) {
    std::size_t pos = r.pos();
    q.huffman_table = deserialize_table(bytes, pos);
    if (q.huffman_table->m != q.m) throw FormatError("huffman table built for different m");
    q.error_stream = deserialize_stream(bytes, pos);
    r.raw(pos - r.pos());  // advance past the error section
  }
  const std::size_t checksum_end = r.pos();
  const std::uint32_t stored = r.u32();
  const std::uint32_t actual = crc32(bytes.subspan(checksum_begin, checksum_end - checksum_begin));
  if (stored != actual) throw ChecksumMismatch("blob checksum mismatch");
  return q;
}

MemoryReport memory_report(const QuantizedLayer& q, int baseline_bits) {
  MemoryReport report;
  report.value_count = std::int64_t{q.channel_count()} * q.channel_len();
  report.raw_float_bits = report.value_count * baseline_bits;

  const std::int64_t fixed_fields = 4 + 2 + 2 + 2 + static_cast<std::int64_t>(q.layer_id.size()) +
                                    1 + 1 + 4 + 4 + 4;  // magic..absmax
  const std::int64_t bitmap_bytes = (q.channel_count() + 7) / 8;
  report.header_bits = 8 * (fixed_fields + bitmap_bytes + 4);  // + trailing crc32
  report.body_bits = report.value_count * q.n;
  report.body_pad_bits = (8 - report.body_bits % 8) % 8;
  if (q.has_error_section()) {
    report.table_bits = static_cast<std::int64_t>(dqa::table_bits(*q.huffman_table));
    report.stream_bits = 8 * 8 + q.error_stream->bit_count;  // two u32 fields + payload
    report.stream_pad_bits = (8 - q.error_stream->bit_count % 8) % 8;
  }
  report.direct_total_bits = report.header_bits + report.body_bits;
  report.dqa_total_bits = report.direct_total_bits + report.error_section_bits();
  report.overhead_pct = report.body_bits > 0
                            ? 100.0 * static_cast<double>(report.error_section_bits()) /
                                  static_cast<double>(report.body_bits)
                            : 0.0;
  report.compression_vs_float =
      report.dqa_total_bits > 0
          ? static_cast<double>(report.raw_float_bits) / static_cast<double>(report.dqa_total_bits)
          : 0.0;
  return report;
}

}  // namespace dqa
