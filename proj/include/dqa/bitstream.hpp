#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dqa/errors.hpp"

namespace dqa {

// Bit-level writer, most-significant-bit-first within each byte. The final
// partial byte is zero-padded. Shared by the Huffman payload and the packed
// n-bit value body so one reader implementation covers both.
class BitWriter {
 public:
  void put_bit(bool bit) {
    const std::size_t byte = bit_count_ >> 3;
    if (byte == bytes_.size()) bytes_.push_back(0);
    if (bit) bytes_[byte] |= static_cast<std::uint8_t>(0x80u >> (bit_count_ & 7));
    ++bit_count_;
  }

  // Writes the low `nbits` bits of `value`, high bit first.
  void put_bits(std::uint64_t value, int nbits) {
    for (int i = nbits - 1; i >= 0; --i) put_bit(((value >> i) & 1u) != 0);
  }

  std::uint64_t bit_count() const { return bit_count_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t bit_count_ = 0;
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> bytes, std::uint64_t bit_count)
      : bytes_(bytes), bit_count_(bit_count) {
    if (bit_count_ > bytes_.size() * 8ull)
      throw TruncatedStream("bit count exceeds byte buffer");
  }

  bool get_bit() {
    if (pos_ >= bit_count_) throw TruncatedStream("bit stream exhausted");
    const bool bit =
        (bytes_[pos_ >> 3] >> (7 - (pos_ & 7)) & 1u) != 0;
    ++pos_;
    return bit;
  }

  std::uint64_t get_bits(int nbits) {
    std::uint64_t value = 0;
    for (int i = 0; i < nbits; ++i) value = (value << 1) | (get_bit() ? 1u : 0u);
    return value;
  }

  std::uint64_t bits_left() const { return bit_count_ - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t bit_count_;
  std::uint64_t pos_ = 0;
};

}  // namespace dqa
